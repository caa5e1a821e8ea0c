use rayon::prelude::*;

use crate::circuit::eval::{group_equal, CHUNK};
use crate::circuit::{Circuit, Kind, UnitId};
use crate::error::{PcError, Result};

/// Samples paired with the head each one is assigned to.
#[derive(Clone, Copy, Debug)]
pub struct LabeledBatch<'a> {
    pub samples: &'a [Vec<u32>],
    pub labels: &'a [usize],
}

impl<'a> LabeledBatch<'a> {
    pub fn new(samples: &'a [Vec<u32>], labels: &'a [usize]) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(PcError::arg(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        Ok(LabeledBatch { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Accumulated circuit flows over a set of samples.
///
/// `unit[n]` is `F_n(D)`. Edge flows are stored flat and aligned with
/// [`Circuit::edge_offsets`]; for a sum edge `(n, c)` the entry is
/// `sum_x theta_{n,c} p_c(x) / p_n(x) * F_n(x)`, for a product edge it is
/// the parent's flow. Leaf entries count the flow reaching each category
/// of each input unit.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTable {
    pub unit: Vec<f64>,
    pub edge: Vec<f64>,
    pub leaf: Vec<f64>,
    pub num_samples: usize,
    /// Sum over samples of `log p(x | Z = label)`.
    pub log_likelihood: f64,
    edge_start: Vec<usize>,
    leaf_start: Vec<usize>,
}

impl FlowTable {
    pub fn zeros(circuit: &Circuit) -> Self {
        let (leaf_start, leaf_len) = circuit.leaf_offsets();
        let edge_start = circuit.edge_offsets().to_vec();
        FlowTable {
            unit: vec![0.0; circuit.len()],
            edge: vec![0.0; *edge_start.last().unwrap_or(&0)],
            leaf: vec![0.0; leaf_len],
            num_samples: 0,
            log_likelihood: 0.0,
            edge_start,
            leaf_start: leaf_start.to_vec(),
        }
    }

    /// Flows on the edges of `unit`, aligned with its children.
    pub fn edge_flows(&self, unit: UnitId) -> &[f64] {
        &self.edge[self.edge_start[unit]..self.edge_start[unit + 1]]
    }

    /// Flow per category reaching input unit `unit`.
    pub fn leaf_flows(&self, unit: UnitId, domain: usize) -> &[f64] {
        let s = self.leaf_start[unit];
        &self.leaf[s..s + domain]
    }

    /// Whether the table was computed against a circuit of this shape.
    pub fn matches(&self, circuit: &Circuit) -> bool {
        self.unit.len() == circuit.len()
            && self.edge_start == circuit.edge_offsets()
            && self.leaf_start == circuit.leaf_offsets().0
    }

    /// Elementwise sum with a table over the same circuit.
    pub fn merge(&mut self, other: &FlowTable) {
        for (a, b) in self.unit.iter_mut().zip(&other.unit) {
            *a += b;
        }
        for (a, b) in self.edge.iter_mut().zip(&other.edge) {
            *a += b;
        }
        for (a, b) in self.leaf.iter_mut().zip(&other.leaf) {
            *a += b;
        }
        self.num_samples += other.num_samples;
        self.log_likelihood += other.log_likelihood;
    }
}

/// Reusable per-thread buffers for one forward/backward pass.
struct Scratch {
    vals: Vec<f64>,
    flow: Vec<f64>,
}

fn accumulate_sample(
    circuit: &Circuit,
    x: &[u32],
    root: UnitId,
    copies: usize,
    scratch: &mut Scratch,
    table: &mut FlowTable,
) -> bool {
    circuit.forward_into(x, &mut scratch.vals);
    let vals = &scratch.vals;
    if vals[root] == f64::NEG_INFINITY {
        return false;
    }
    table.log_likelihood += copies as f64 * vals[root];
    table.num_samples += copies;
    let c = circuit.compiled();
    let flow = &mut scratch.flow;
    flow.iter_mut().for_each(|f| *f = 0.0);
    flow[root] = copies as f64;
    for n in (0..=root).rev() {
        let fn_ = flow[n];
        if fn_ == 0.0 {
            continue;
        }
        table.unit[n] += fn_;
        let (lo, hi) = (c.start[n], c.start[n + 1]);
        match c.kind[n] {
            Kind::Sum => {
                let vn = vals[n];
                for e in lo..hi {
                    let w = c.weight[e];
                    if w <= 0.0 {
                        continue;
                    }
                    let ch = c.child[e] as usize;
                    let ef = w * (vals[ch] - vn).exp() * fn_;
                    flow[ch] += ef;
                    table.edge[e] += ef;
                }
            }
            Kind::Product => {
                for e in lo..hi {
                    flow[c.child[e] as usize] += fn_;
                    table.edge[e] += fn_;
                }
            }
            Kind::Input => {
                let v = x[c.var[n] as usize] as usize;
                table.leaf[c.leaf_start[n] + v] += fn_;
            }
        }
    }
    true
}

pub(crate) fn check_batch(circuit: &Circuit, batch: &LabeledBatch<'_>) -> Result<()> {
    let report = circuit.validate_structure();
    if !report.is_valid() {
        return Err(PcError::Structure(report.clone()));
    }
    for &l in batch.labels {
        if l >= circuit.num_heads() {
            return Err(PcError::HeadOutOfRange {
                head: l,
                num_heads: circuit.num_heads(),
            });
        }
    }
    for x in batch.samples {
        circuit.check_observation(x.as_slice())?;
    }
    Ok(())
}

/// Flows over the samples at `indices`; inputs must already be checked.
pub(crate) fn flows_for_indices(
    circuit: &Circuit,
    batch: &LabeledBatch<'_>,
    indices: &[usize],
) -> Result<FlowTable> {
    let roots = circuit.roots();
    // identical (label, sample) pairs are propagated once with their count
    let groups = group_equal(indices.len(), |a, b| {
        let (a, b) = (indices[a], indices[b]);
        batch.labels[a].cmp(&batch.labels[b]).then_with(|| batch.samples[a].cmp(&batch.samples[b]))
    });
    let work: Vec<(usize, usize)> = groups.first.iter().zip(&groups.count).map(|(&f, &c)| (indices[f], c)).collect();
    let partials: Vec<std::result::Result<FlowTable, usize>> = work
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut table = FlowTable::zeros(circuit);
            let mut scratch = Scratch {
                vals: vec![0.0; circuit.len()],
                flow: vec![0.0; circuit.len()],
            };
            for &(i, copies) in idx {
                let root = roots[batch.labels[i]];
                if !accumulate_sample(circuit, &batch.samples[i], root, copies, &mut scratch, &mut table) {
                    return Err(i);
                }
            }
            Ok(table)
        })
        .collect();
    let mut total = FlowTable::zeros(circuit);
    for p in partials {
        match p {
            Ok(t) => total.merge(&t),
            Err(sample) => return Err(PcError::ZeroLikelihood { sample }),
        }
    }
    Ok(total)
}

/// Forward pass then top-down flow propagation for every sample; the
/// labeled head of each sample receives flow 1 and every other head 0.
pub fn compute_flows(circuit: &Circuit, batch: &LabeledBatch<'_>) -> Result<FlowTable> {
    check_batch(circuit, batch)?;
    let indices: Vec<usize> = (0..batch.len()).collect();
    flows_for_indices(circuit, batch, &indices)
}
