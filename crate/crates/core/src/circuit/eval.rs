use rayon::prelude::*;

use super::{Circuit, Compiled, Kind};
use crate::error::{PcError, Result};

/// Samples per parallel work item. Fixed so reductions happen in the same
/// order regardless of the thread count.
pub(crate) const CHUNK: usize = 64;

/// Positions `0..n` grouped by equal keys. Groups are ordered by key and
/// every group lists its positions in increasing order, so the result does
/// not depend on how the input was produced.
pub(crate) struct Groups {
    /// Smallest position of each group.
    pub first: Vec<usize>,
    pub count: Vec<usize>,
    /// Group of every position.
    pub of: Vec<usize>,
}

pub(crate) fn group_equal(n: usize, cmp: impl Fn(usize, usize) -> std::cmp::Ordering) -> Groups {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp(a, b).then(a.cmp(&b)));
    let mut g = Groups {
        first: Vec::new(),
        count: Vec::new(),
        of: vec![0; n],
    };
    for (k, &i) in order.iter().enumerate() {
        if k == 0 || cmp(order[k - 1], i) != std::cmp::Ordering::Equal {
            g.first.push(i);
            g.count.push(0);
        }
        *g.count.last_mut().unwrap() += 1;
        g.of[i] = g.first.len() - 1;
    }
    g
}

/// Per-variable assignment consumed by the forward pass.
pub trait Observation {
    fn num_vars(&self) -> usize;
    /// Observed state of `var`, or `None` when it is marginalized.
    fn state(&self, var: usize) -> Option<u32>;
}

impl Observation for [u32] {
    fn num_vars(&self) -> usize {
        self.len()
    }

    #[inline(always)]
    fn state(&self, var: usize) -> Option<u32> {
        Some(self[var])
    }
}

impl Observation for Vec<u32> {
    fn num_vars(&self) -> usize {
        self.len()
    }

    #[inline(always)]
    fn state(&self, var: usize) -> Option<u32> {
        Some(self[var])
    }
}

/// Partial assignment: each variable is observed or unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evidence(pub Vec<Option<u32>>);

impl Evidence {
    pub fn unknown(num_vars: usize) -> Self {
        Evidence(vec![None; num_vars])
    }

    pub fn observed(x: &[u32]) -> Self {
        Evidence(x.iter().map(|&v| Some(v)).collect())
    }

    pub fn with(mut self, var: usize, value: Option<u32>) -> Self {
        self.0[var] = value;
        self
    }

    pub fn num_unknown(&self) -> usize {
        self.0.iter().filter(|v| v.is_none()).count()
    }
}

impl Observation for Evidence {
    fn num_vars(&self) -> usize {
        self.0.len()
    }

    #[inline(always)]
    fn state(&self, var: usize) -> Option<u32> {
        self.0[var]
    }
}

#[inline(always)]
pub(crate) fn eval_unit<O: Observation + ?Sized, const COUNT: bool>(
    c: &Compiled,
    n: usize,
    obs: &O,
    vals: &[f64],
    edges: &mut usize,
) -> f64 {
    let (lo, hi) = (c.start[n], c.start[n + 1]);
    match c.kind[n] {
        Kind::Input => match obs.state(c.var[n] as usize) {
            Some(v) => c.leaf_logp[c.leaf_start[n] + v as usize],
            None => 0.0,
        },
        Kind::Product => {
            let mut acc = 0.0;
            for e in lo..hi {
                if COUNT {
                    *edges += 1;
                }
                acc += vals[c.child[e] as usize];
            }
            acc
        }
        Kind::Sum => {
            // Max over positively weighted children only, so a zero-weight
            // child cannot push the shift past every real term.
            let mut max = f64::NEG_INFINITY;
            for e in lo..hi {
                if COUNT {
                    *edges += 1;
                }
                let v = vals[c.child[e] as usize];
                if c.weight[e] > 0.0 && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let mut s = 0.0;
            for e in lo..hi {
                let w = c.weight[e];
                if w > 0.0 {
                    s += w * (vals[c.child[e] as usize] - max).exp();
                }
            }
            max + s.ln()
        }
    }
}

impl Circuit {
    /// Computes the log-value of every unit for one assignment.
    pub(crate) fn forward_into<O: Observation + ?Sized>(&self, obs: &O, vals: &mut [f64]) {
        let c = self.compiled();
        let mut edges = 0;
        for n in 0..c.kind.len() {
            vals[n] = eval_unit::<O, false>(c, n, obs, vals, &mut edges);
        }
    }

    /// Forward pass that also returns the number of edges read, for checking
    /// that evaluation is linear in circuit size.
    pub fn forward_counting_edges<O: Observation + ?Sized>(&self, obs: &O) -> (Vec<f64>, usize) {
        let c = self.compiled();
        let mut vals = vec![0.0; c.kind.len()];
        let mut edges = 0;
        for n in 0..c.kind.len() {
            vals[n] = eval_unit::<O, true>(c, n, obs, &vals, &mut edges);
        }
        (vals, edges)
    }

    /// Log-value of every unit for `obs`.
    pub fn forward<O: Observation + ?Sized>(&self, obs: &O) -> Result<Vec<f64>> {
        self.check_observation(obs)?;
        let mut vals = vec![0.0; self.len()];
        self.forward_into(obs, &mut vals);
        Ok(vals)
    }

    pub fn check_observation<O: Observation + ?Sized>(&self, obs: &O) -> Result<()> {
        if obs.num_vars() != self.num_vars() {
            return Err(PcError::EvidenceLength {
                got: obs.num_vars(),
                expected: self.num_vars(),
            });
        }
        for (var, &dom) in self.domains().iter().enumerate() {
            if let Some(v) = obs.state(var) {
                if v as usize >= dom {
                    return Err(PcError::Domain {
                        var,
                        value: v,
                        domain: dom,
                    });
                }
            }
        }
        Ok(())
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.num_heads() {
            return Err(PcError::HeadOutOfRange {
                head,
                num_heads: self.num_heads(),
            });
        }
        Ok(())
    }

    /// `log p_head(x)` for a fully observed sample.
    pub fn log_likelihood(&self, x: &[u32], head: usize) -> Result<f64> {
        self.check_head(head)?;
        let vals = self.forward(x)?;
        Ok(vals[self.roots()[head]])
    }

    /// Log-likelihood of `x` under every head.
    pub fn log_likelihood_heads(&self, x: &[u32]) -> Result<Vec<f64>> {
        let vals = self.forward(x)?;
        Ok(self.roots().iter().map(|&r| vals[r]).collect())
    }

    /// `log p_head(e)` with unknown variables summed out. Requires a smooth,
    /// decomposable, alternating circuit.
    pub fn log_marginal(&self, e: &Evidence, head: usize) -> Result<f64> {
        let report = self.validate_structure();
        if !report.is_valid() {
            return Err(PcError::Structure(report.clone()));
        }
        self.check_head(head)?;
        let vals = self.forward(e)?;
        Ok(vals[self.roots()[head]])
    }

    /// `log p_{heads[i]}(data[i])` for every sample.
    pub fn log_likelihoods(&self, data: &[Vec<u32>], heads: &[usize]) -> Result<Vec<f64>> {
        if data.len() != heads.len() {
            return Err(PcError::arg("one head label is needed per sample"));
        }
        for &h in heads {
            self.check_head(h)?;
        }
        for x in data {
            self.check_observation(x.as_slice())?;
        }
        // repeated (sample, head) pairs are evaluated once
        let groups = group_equal(data.len(), |a, b| heads[a].cmp(&heads[b]).then_with(|| data[a].cmp(&data[b])));
        let roots = self.roots();
        let chunks: Vec<Vec<f64>> = groups
            .first
            .par_chunks(CHUNK)
            .map(|idx| {
                let mut vals = vec![0.0; self.len()];
                idx.iter()
                    .map(|&i| {
                        self.forward_into(data[i].as_slice(), &mut vals);
                        vals[roots[heads[i]]]
                    })
                    .collect()
            })
            .collect();
        let unique = chunks.concat();
        Ok(groups.of.iter().map(|&g| unique[g]).collect())
    }

    /// Per-sample log-likelihood under every head (`result[i][head]`).
    pub fn log_likelihoods_all_heads(&self, data: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        for x in data {
            self.check_observation(x.as_slice())?;
        }
        let groups = group_equal(data.len(), |a, b| data[a].cmp(&data[b]));
        let roots = self.roots();
        let chunks: Vec<Vec<Vec<f64>>> = groups
            .first
            .par_chunks(CHUNK)
            .map(|idx| {
                let mut vals = vec![0.0; self.len()];
                idx.iter()
                    .map(|&i| {
                        self.forward_into(data[i].as_slice(), &mut vals);
                        roots.iter().map(|&r| vals[r]).collect()
                    })
                    .collect()
            })
            .collect();
        let unique = chunks.concat();
        Ok(groups.of.iter().map(|&g| unique[g].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CircuitBuilder, UnitKind};
    use crate::testutil::{brute_force_marginal, random_circuit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_mass_mixture() -> Circuit {
        let mut b = CircuitBuilder::new(vec![2]);
        let a = b.input(0, vec![1.0, 0.0]);
        let c = b.input(0, vec![0.0, 1.0]);
        let pa = b.product(vec![a]);
        let pc = b.product(vec![c]);
        let s = b.sum(vec![pa, pc], vec![0.5, 0.5]);
        b.finish(vec![s]).unwrap()
    }

    /// Recursive evaluation straight from the unit definitions, in linear
    /// space, sharing nothing with the compiled evaluator.
    fn recursive_value(c: &Circuit, id: usize, x: &[u32]) -> f64 {
        let u = c.unit(id);
        match &u.kind {
            UnitKind::Input { var, probs } => probs[x[*var] as usize],
            UnitKind::Product => u.children.iter().map(|&ch| recursive_value(c, ch, x)).product(),
            UnitKind::Sum { weights } => u
                .children
                .iter()
                .zip(weights)
                .map(|(&ch, w)| w * recursive_value(c, ch, x))
                .sum(),
        }
    }

    #[test]
    fn single_leaf_lookup() {
        let mut b = CircuitBuilder::new(vec![2]);
        let l = b.input(0, vec![0.25, 0.75]);
        let p = b.product(vec![l]);
        let s = b.sum(vec![p], vec![1.0]);
        let c = b.finish(vec![s]).unwrap();
        assert_eq!(c.log_likelihood(&[1], 0).unwrap(), 0.75f64.ln());
        assert_eq!(c.forward(&[1u32][..]).unwrap()[l], 0.75f64.ln());
    }

    #[test]
    fn uniform_mixture_of_point_masses() {
        let c = point_mass_mixture();
        for x in 0..2 {
            assert!((c.log_likelihood(&[x], 0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn domain_and_head_errors() {
        let c = point_mass_mixture();
        assert!(matches!(
            c.log_likelihood(&[2], 0),
            Err(PcError::Domain { var: 0, value: 2, .. })
        ));
        assert!(matches!(
            c.log_likelihood(&[0], 1),
            Err(PcError::HeadOutOfRange { head: 1, num_heads: 1 })
        ));
        assert!(matches!(
            c.log_likelihood(&[0, 0], 0),
            Err(PcError::EvidenceLength { .. })
        ));
    }

    #[test]
    fn matches_recursive_oracle_on_random_circuits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let c = random_circuit(&mut rng, 8, 2);
            let x: Vec<u32> = (0..8).map(|_| rng.random_range(0..2)).collect();
            let ll = c.log_likelihood(&x, 0).unwrap();
            let oracle = recursive_value(&c, c.roots()[0], &x).ln();
            assert!((ll - oracle).abs() < 1e-10, "{ll} vs {oracle}");
        }
    }

    #[test]
    fn marginal_of_nothing_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_circuit(&mut rng, 6, 3);
        let lm = c.log_marginal(&Evidence::unknown(6), 0).unwrap();
        assert!(lm.abs() < 1e-12, "{lm}");
    }

    #[test]
    fn marginal_with_no_unknowns_is_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_circuit(&mut rng, 6, 2);
        let x: Vec<u32> = (0..6).map(|_| rng.random_range(0..2)).collect();
        assert_eq!(
            c.log_marginal(&Evidence::observed(&x), 0).unwrap(),
            c.log_likelihood(&x, 0).unwrap()
        );
    }

    #[test]
    fn marginal_matches_enumeration_with_three_unknowns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_circuit(&mut rng, 10, 2);
        let x: Vec<u32> = (0..10).map(|_| rng.random_range(0..2)).collect();
        let e = Evidence::observed(&x).with(1, None).with(4, None).with(9, None);
        let lm = c.log_marginal(&e, 0).unwrap();
        let oracle = brute_force_marginal(&c, &e, 0);
        assert!((lm - oracle).abs() < 1e-9, "{lm} vs {oracle}");
    }

    #[test]
    fn marginal_rejects_non_smooth_circuit() {
        let mut b = CircuitBuilder::new(vec![2, 2]);
        let a = b.input(0, vec![0.5, 0.5]);
        let c = b.input(1, vec![0.5, 0.5]);
        let pa = b.product(vec![a]);
        let pc = b.product(vec![c]);
        let s = b.sum(vec![pa, pc], vec![0.5, 0.5]);
        let circuit = b.finish(vec![s]).unwrap();
        assert!(matches!(
            circuit.log_marginal(&Evidence::unknown(2), 0),
            Err(PcError::Structure(_))
        ));
    }

    #[test]
    fn each_edge_read_once_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_circuit(&mut rng, 9, 3);
        let x: Vec<u32> = (0..9).map(|_| rng.random_range(0..3)).collect();
        let (vals, edges) = c.forward_counting_edges(x.as_slice());
        assert_eq!(edges, c.num_edges());
        assert_eq!(vals[c.roots()[0]], c.log_likelihood(&x, 0).unwrap());
    }

    #[test]
    fn sum_node_is_weighted_mixture_of_children() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_circuit(&mut rng, 7, 2);
        let x: Vec<u32> = (0..7).map(|_| rng.random_range(0..2)).collect();
        let vals = c.forward(x.as_slice()).unwrap();
        for (id, u) in c.units().iter().enumerate() {
            if let UnitKind::Sum { weights } = &u.kind {
                let mix: f64 = u
                    .children
                    .iter()
                    .zip(weights)
                    .map(|(&ch, w)| w * vals[ch].exp())
                    .sum();
                let p = vals[id].exp();
                assert!((p - mix).abs() <= 1e-9 * p.max(1e-300));
            }
        }
    }

    #[test]
    fn zero_weight_child_does_not_dominate_shift() {
        let mut b = CircuitBuilder::new(vec![2, 2]);
        let hi = b.input(0, vec![1.0, 0.0]);
        let lo = b.input(0, vec![1e-300, 1.0 - 1e-300]);
        let y = b.input(1, vec![1e-300, 1.0 - 1e-300]);
        let p1 = b.product(vec![hi, y]);
        let p2 = b.product(vec![lo, y]);
        let s = b.sum(vec![p1, p2], vec![0.0, 1.0]);
        let c = b.finish(vec![s]).unwrap();
        let ll = c.log_likelihood(&[0, 0], 0).unwrap();
        assert!((ll - 2.0 * 1e-300f64.ln()).abs() < 1e-9, "{ll}");
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = random_circuit(&mut rng, 5, 2);
        let data: Vec<Vec<u32>> = (0..200)
            .map(|_| (0..5).map(|_| rng.random_range(0..2)).collect())
            .collect();
        let heads = vec![0; data.len()];
        let batch = c.log_likelihoods(&data, &heads).unwrap();
        for (x, ll) in data.iter().zip(&batch) {
            assert_eq!(*ll, c.log_likelihood(x, 0).unwrap());
        }
    }
}
