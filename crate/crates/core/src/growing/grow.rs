use rand::Rng;

use crate::circuit::{Circuit, Unit, UnitId, UnitKind};
use crate::em::{compute_flows, LabeledBatch};
use crate::error::{PcError, Result};
use crate::logspace::normalize;
use crate::structure::jitter;

/// Mass the second slot of a grown sum puts on the original lineage.
pub const CROSS_EDGE_MASS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Grown {
    pub circuit: Circuit,
    /// Old head indices whose roots were selected, in head order; the copy
    /// of `grown_heads[j]` is head `old_heads + j` of the new circuit.
    pub grown_heads: Vec<usize>,
    /// Number of units with flow at least epsilon.
    pub selected_units: usize,
}

fn perturb<R: Rng + ?Sized>(rng: &mut R, p: &[f64], amount: f64) -> Vec<f64> {
    if amount > 0.0 {
        jitter(rng, p, amount)
    } else {
        p.to_vec()
    }
}

/// Duplicates the units whose flow on `data` reaches `epsilon`.
///
/// Every old unit keeps a first slot that computes exactly its old
/// function (new cross edges get weight 0), so all old heads are
/// preserved. Selected units additionally get a second slot: inputs are
/// copied, products pair the children's second slots, and sums become a
/// new unit over both lineages with `1 - CROSS_EDGE_MASS` of the mass on
/// the copied children. Copied parameters are perturbed by `jitter`
/// (relative, e.g. 0.05) to break the symmetry between the slots.
pub fn grow_multihead<R: Rng + ?Sized>(
    circuit: &Circuit,
    data: &LabeledBatch<'_>,
    epsilon: f64,
    jitter_amount: f64,
    rng: &mut R,
) -> Result<Grown> {
    if !(epsilon >= 0.0) {
        return Err(PcError::arg(format!("epsilon must be non-negative, got {epsilon}")));
    }
    if !(0.0..1.0).contains(&jitter_amount) {
        return Err(PcError::arg("jitter must lie in [0, 1)"));
    }
    let flows = compute_flows(circuit, data)?;
    let in_g: Vec<bool> = flows.unit.iter().map(|&f| f >= epsilon).collect();

    let n = circuit.len();
    let mut units: Vec<Unit> = Vec::with_capacity(n + n / 2);
    let mut first = vec![UnitId::MAX; n];
    let mut second: Vec<Option<UnitId>> = vec![None; n];
    let push = |units: &mut Vec<Unit>, u: Unit| {
        units.push(u);
        units.len() - 1
    };

    for (id, unit) in circuit.units().iter().enumerate() {
        match &unit.kind {
            UnitKind::Input { var, probs } => {
                first[id] = push(&mut units, unit.clone());
                if in_g[id] {
                    let p = perturb(rng, probs, jitter_amount);
                    second[id] = Some(push(&mut units, Unit::input(*var, p)));
                }
            }
            UnitKind::Product => {
                let ch1 = unit.children.iter().map(|&c| first[c]).collect();
                first[id] = push(&mut units, Unit::product(ch1));
                if in_g[id] {
                    let ch2 = unit
                        .children
                        .iter()
                        .map(|&c| second[c].unwrap_or(first[c]))
                        .collect();
                    second[id] = Some(push(&mut units, Unit::product(ch2)));
                }
            }
            UnitKind::Sum { weights } => {
                let mut ch = Vec::with_capacity(2 * unit.children.len());
                let mut w = Vec::with_capacity(2 * unit.children.len());
                for (&c, &wc) in unit.children.iter().zip(weights) {
                    ch.push(first[c]);
                    w.push(wc);
                }
                for &c in &unit.children {
                    if let Some(s) = second[c] {
                        ch.push(s);
                        w.push(0.0);
                    }
                }
                first[id] = push(&mut units, Unit::sum(ch, w));
                if in_g[id] {
                    let own = perturb(rng, weights, jitter_amount);
                    let mut ch = Vec::with_capacity(2 * unit.children.len());
                    let mut w = Vec::with_capacity(2 * unit.children.len());
                    let has_copy = unit.children.iter().any(|&c| second[c].is_some());
                    let own_mass = if has_copy { 1.0 - CROSS_EDGE_MASS } else { 1.0 };
                    for (&c, &wc) in unit.children.iter().zip(&own) {
                        ch.push(second[c].unwrap_or(first[c]));
                        w.push(own_mass * wc);
                    }
                    for (&c, &wc) in unit.children.iter().zip(weights) {
                        if second[c].is_some() {
                            ch.push(first[c]);
                            w.push(CROSS_EDGE_MASS * wc);
                        }
                    }
                    normalize(&mut w);
                    second[id] = Some(push(&mut units, Unit::sum(ch, w)));
                }
            }
        }
    }

    let mut roots: Vec<UnitId> = circuit.roots().iter().map(|&r| first[r]).collect();
    let mut grown_heads = Vec::new();
    for (h, &r) in circuit.roots().iter().enumerate() {
        if let Some(s) = second[r] {
            roots.push(s);
            grown_heads.push(h);
        }
    }
    let grown = Circuit::new(circuit.domains().to_vec(), units, roots)?;
    Ok(Grown {
        circuit: grown,
        grown_heads,
        selected_units: in_g.iter().filter(|&&g| g).count(),
    })
}
