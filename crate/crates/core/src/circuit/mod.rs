//! Probabilistic circuits: a DAG of categorical input units, product units
//! and weighted sum units, stored in topological order (children first).
//!
//! A circuit may have several roots ("heads"); head `i` encodes the
//! distribution `p(x | Z = i)` of a cluster-conditioned model.

pub(crate) mod eval;
mod io;
mod validate;

use std::sync::OnceLock;

use crate::error::{PcError, Result};

pub use eval::{Evidence, Observation};
pub use io::{read_circuit, write_circuit};
pub use validate::ValidationReport;

pub type UnitId = usize;

/// Tolerance on the unit-sum constraint of weights and leaf tables.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum UnitKind {
    /// Categorical distribution over one variable.
    Input { var: usize, probs: Vec<f64> },
    Product,
    /// Mixture; `weights` is aligned with the unit's children.
    Sum { weights: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub kind: UnitKind,
    pub children: Vec<UnitId>,
}

impl Unit {
    pub fn input(var: usize, probs: Vec<f64>) -> Self {
        Unit {
            kind: UnitKind::Input { var, probs },
            children: Vec::new(),
        }
    }

    pub fn product(children: Vec<UnitId>) -> Self {
        Unit {
            kind: UnitKind::Product,
            children,
        }
    }

    pub fn sum(children: Vec<UnitId>, weights: Vec<f64>) -> Self {
        Unit {
            kind: UnitKind::Sum { weights },
            children,
        }
    }

    pub fn is_sum(&self) -> bool {
        matches!(self.kind, UnitKind::Sum { .. })
    }

    pub fn is_product(&self) -> bool {
        matches!(self.kind, UnitKind::Product)
    }

    pub fn is_input(&self) -> bool {
        matches!(self.kind, UnitKind::Input { .. })
    }

    /// Sum weights or leaf table; empty for products.
    pub fn params(&self) -> &[f64] {
        match &self.kind {
            UnitKind::Input { probs, .. } => probs,
            UnitKind::Sum { weights } => weights,
            UnitKind::Product => &[],
        }
    }
}

/// Flattened, evaluation-ready copy of the parameters and edges.
#[derive(Clone, Debug)]
pub(crate) struct Compiled {
    pub kind: Vec<Kind>,
    pub var: Vec<u32>,
    /// Edge range of unit `n` is `start[n]..start[n + 1]`.
    pub start: Vec<usize>,
    pub child: Vec<u32>,
    /// Linear edge weight; 1.0 on product edges.
    pub weight: Vec<f64>,
    /// Leaf table range of input unit `n` starts at `leaf_start[n]`.
    pub leaf_start: Vec<usize>,
    pub leaf_logp: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Kind {
    Input,
    Product,
    Sum,
}

#[derive(Debug, Default)]
pub struct Circuit {
    domains: Vec<usize>,
    units: Vec<Unit>,
    roots: Vec<UnitId>,
    compiled: OnceLock<Compiled>,
    report: OnceLock<ValidationReport>,
}

impl Clone for Circuit {
    fn clone(&self) -> Self {
        Circuit {
            domains: self.domains.clone(),
            units: self.units.clone(),
            roots: self.roots.clone(),
            compiled: self.compiled.clone(),
            report: self.report.clone(),
        }
    }
}

impl PartialEq for Circuit {
    fn eq(&self, other: &Self) -> bool {
        self.domains == other.domains && self.units == other.units && self.roots == other.roots
    }
}

fn check_distribution(values: &[f64], what: impl Fn() -> String) -> Result<()> {
    if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(PcError::arg(format!("{} has a negative or non-finite entry", what())));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(PcError::arg(format!("{} sums to {total}, expected 1", what())));
    }
    Ok(())
}

impl Circuit {
    /// Builds a circuit after checking well-formedness: children precede
    /// parents, parameter vectors are normalized and sized correctly, and
    /// there is at least one root. Smoothness, decomposability and
    /// alternation are reported by [`Circuit::validate_structure`] instead.
    pub fn new(domains: Vec<usize>, units: Vec<Unit>, roots: Vec<UnitId>) -> Result<Self> {
        if roots.is_empty() {
            return Err(PcError::arg("circuit has no roots"));
        }
        if let Some(v) = domains.iter().position(|&d| d == 0) {
            return Err(PcError::arg(format!("variable {v} has an empty domain")));
        }
        for (id, unit) in units.iter().enumerate() {
            Self::check_unit(&domains, id, unit)?;
        }
        for &r in &roots {
            if r >= units.len() {
                return Err(PcError::arg(format!("root {r} does not exist")));
            }
        }
        Ok(Circuit {
            domains,
            units,
            roots,
            compiled: OnceLock::new(),
            report: OnceLock::new(),
        })
    }

    fn check_unit(domains: &[usize], id: UnitId, unit: &Unit) -> Result<()> {
        for &c in &unit.children {
            if c >= id {
                return Err(PcError::arg(format!(
                    "unit {id} references child {c} which does not precede it"
                )));
            }
        }
        match &unit.kind {
            UnitKind::Input { var, probs } => {
                if !unit.children.is_empty() {
                    return Err(PcError::arg(format!("input unit {id} has children")));
                }
                let Some(&dom) = domains.get(*var) else {
                    return Err(PcError::arg(format!(
                        "input unit {id} refers to unknown variable {var}"
                    )));
                };
                if probs.len() != dom {
                    return Err(PcError::arg(format!(
                        "input unit {id} has {} entries for a domain of size {dom}",
                        probs.len()
                    )));
                }
                check_distribution(probs, || format!("leaf table of unit {id}"))
            }
            UnitKind::Product => {
                if unit.children.is_empty() {
                    return Err(PcError::arg(format!("product unit {id} has no children")));
                }
                Ok(())
            }
            UnitKind::Sum { weights } => {
                if unit.children.is_empty() {
                    return Err(PcError::arg(format!("sum unit {id} has no children")));
                }
                if weights.len() != unit.children.len() {
                    return Err(PcError::arg(format!(
                        "sum unit {id} has {} weights for {} children",
                        weights.len(),
                        unit.children.len()
                    )));
                }
                check_distribution(weights, || format!("weights of sum unit {id}"))
            }
        }
    }

    pub fn num_vars(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn unit(&self, id: UnitId) -> &Unit {
        &self.units[id]
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn roots(&self) -> &[UnitId] {
        &self.roots
    }

    pub fn num_heads(&self) -> usize {
        self.roots.len()
    }

    /// Total number of edges (children references) over all units.
    pub fn num_edges(&self) -> usize {
        self.units.iter().map(|u| u.children.len()).sum()
    }

    pub fn num_sum_edges(&self) -> usize {
        self.units
            .iter()
            .filter(|u| u.is_sum())
            .map(|u| u.children.len())
            .sum()
    }

    /// Number of free-standing parameters (sum weights plus leaf entries).
    pub fn num_parameters(&self) -> usize {
        self.units.iter().map(|u| u.params().len()).sum()
    }

    /// Replaces the weights of a sum unit or the table of an input unit.
    pub fn set_params(&mut self, id: UnitId, params: Vec<f64>) -> Result<()> {
        let unit = self
            .units
            .get_mut(id)
            .ok_or_else(|| PcError::arg(format!("unit {id} does not exist")))?;
        let expected = match &unit.kind {
            UnitKind::Input { probs, .. } => probs.len(),
            UnitKind::Sum { weights } => weights.len(),
            UnitKind::Product => {
                return Err(PcError::arg(format!("product unit {id} has no parameters")))
            }
        };
        if params.len() != expected {
            return Err(PcError::arg(format!(
                "unit {id} expects {expected} parameters, got {}",
                params.len()
            )));
        }
        check_distribution(&params, || format!("parameters of unit {id}"))?;
        match &mut unit.kind {
            UnitKind::Input { probs, .. } => *probs = params,
            UnitKind::Sum { weights } => *weights = params,
            UnitKind::Product => unreachable!(),
        }
        self.compiled = OnceLock::new();
        Ok(())
    }

    /// Consumes the circuit, returning its parts.
    pub fn into_parts(self) -> (Vec<usize>, Vec<Unit>, Vec<UnitId>) {
        (self.domains, self.units, self.roots)
    }

    /// Places several circuits over the same variables side by side; heads
    /// are concatenated in order.
    pub fn disjoint_union(circuits: &[Circuit]) -> Result<Circuit> {
        let first = circuits
            .first()
            .ok_or_else(|| PcError::arg("union of zero circuits"))?;
        let domains = first.domains.clone();
        let mut units = Vec::new();
        let mut roots = Vec::new();
        for c in circuits {
            if c.domains != domains {
                return Err(PcError::arg("circuits in a union must share variable domains"));
            }
            let offset = units.len();
            units.extend(c.units.iter().map(|u| Unit {
                kind: u.kind.clone(),
                children: u.children.iter().map(|&ch| ch + offset).collect(),
            }));
            roots.extend(c.roots.iter().map(|&r| r + offset));
        }
        Circuit::new(domains, units, roots)
    }

    /// Keeps only units reachable from the roots, renumbering them while
    /// preserving relative order.
    pub fn without_unreachable(&self) -> Circuit {
        let mut live = vec![false; self.units.len()];
        for &r in &self.roots {
            live[r] = true;
        }
        for id in (0..self.units.len()).rev() {
            if live[id] {
                for &c in &self.units[id].children {
                    live[c] = true;
                }
            }
        }
        let mut remap = vec![usize::MAX; self.units.len()];
        let mut units = Vec::with_capacity(live.iter().filter(|&&l| l).count());
        for (id, unit) in self.units.iter().enumerate() {
            if live[id] {
                remap[id] = units.len();
                units.push(Unit {
                    kind: unit.kind.clone(),
                    children: unit.children.iter().map(|&c| remap[c]).collect(),
                });
            }
        }
        Circuit {
            domains: self.domains.clone(),
            units,
            roots: self.roots.iter().map(|&r| remap[r]).collect(),
            compiled: OnceLock::new(),
            report: OnceLock::new(),
        }
    }

    pub(crate) fn compiled(&self) -> &Compiled {
        self.compiled.get_or_init(|| self.compile())
    }

    fn compile(&self) -> Compiled {
        let n = self.units.len();
        let mut c = Compiled {
            kind: Vec::with_capacity(n),
            var: Vec::with_capacity(n),
            start: Vec::with_capacity(n + 1),
            child: Vec::with_capacity(self.num_edges()),
            weight: Vec::with_capacity(self.num_edges()),
            leaf_start: Vec::with_capacity(n),
            leaf_logp: Vec::new(),
        };
        for unit in &self.units {
            c.start.push(c.child.len());
            c.leaf_start.push(c.leaf_logp.len());
            c.child.extend(unit.children.iter().map(|&ch| ch as u32));
            match &unit.kind {
                UnitKind::Input { var, probs } => {
                    c.kind.push(Kind::Input);
                    c.var.push(*var as u32);
                    c.leaf_logp
                        .extend(probs.iter().map(|&p| crate::logspace::ln_or_neg_inf(p)));
                }
                UnitKind::Product => {
                    c.kind.push(Kind::Product);
                    c.var.push(u32::MAX);
                    c.weight.extend(std::iter::repeat_n(1.0, unit.children.len()));
                }
                UnitKind::Sum { weights } => {
                    c.kind.push(Kind::Sum);
                    c.var.push(u32::MAX);
                    c.weight.extend_from_slice(weights);
                }
            }
        }
        c.start.push(c.child.len());
        c
    }

    /// Offset of each unit's first edge in a flat per-edge array, plus the
    /// total edge count as the final entry.
    pub fn edge_offsets(&self) -> &[usize] {
        &self.compiled().start
    }

    /// Offset of each unit's leaf table in a flat per-category array.
    pub fn leaf_offsets(&self) -> (&[usize], usize) {
        let c = self.compiled();
        (&c.leaf_start, c.leaf_logp.len())
    }
}

/// Incremental construction of a circuit; ids are handed out in order so
/// the topological invariant holds by construction.
#[derive(Clone, Debug, Default)]
pub struct CircuitBuilder {
    domains: Vec<usize>,
    units: Vec<Unit>,
}

impl CircuitBuilder {
    pub fn new(domains: Vec<usize>) -> Self {
        CircuitBuilder {
            domains,
            units: Vec::new(),
        }
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn push(&mut self, unit: Unit) -> UnitId {
        self.units.push(unit);
        self.units.len() - 1
    }

    pub fn input(&mut self, var: usize, probs: Vec<f64>) -> UnitId {
        self.push(Unit::input(var, probs))
    }

    pub fn product(&mut self, children: Vec<UnitId>) -> UnitId {
        self.push(Unit::product(children))
    }

    pub fn sum(&mut self, children: Vec<UnitId>, weights: Vec<f64>) -> UnitId {
        self.push(Unit::sum(children, weights))
    }

    pub fn finish(self, roots: Vec<UnitId>) -> Result<Circuit> {
        Circuit::new(self.domains, self.units, roots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Circuit {
        let mut b = CircuitBuilder::new(vec![2]);
        let a = b.input(0, vec![1.0, 0.0]);
        let c = b.input(0, vec![0.0, 1.0]);
        let pa = b.product(vec![a]);
        let pc = b.product(vec![c]);
        let s = b.sum(vec![pa, pc], vec![0.5, 0.5]);
        b.finish(vec![s]).unwrap()
    }

    #[test]
    fn rejects_empty_roots() {
        let b = CircuitBuilder::new(vec![2]);
        assert!(matches!(b.finish(vec![]), Err(PcError::InvalidArgument(_))));
    }

    #[test]
    fn rejects_unnormalized_sum() {
        let mut b = CircuitBuilder::new(vec![2]);
        let a = b.input(0, vec![0.5, 0.5]);
        let p = b.product(vec![a]);
        let s = b.sum(vec![p], vec![0.9]);
        let err = b.finish(vec![s]).unwrap_err().to_string();
        assert!(err.contains("sum unit 2"), "{err}");
    }

    #[test]
    fn rejects_forward_references() {
        let units = vec![Unit::product(vec![1]), Unit::input(0, vec![1.0])];
        assert!(Circuit::new(vec![1], units, vec![0]).is_err());
    }

    #[test]
    fn set_params_checks_normalization() {
        let mut c = tiny();
        assert!(c.set_params(4, vec![0.2, 0.7]).is_err());
        assert!(c.set_params(2, vec![0.5]).is_err());
        c.set_params(4, vec![0.25, 0.75]).unwrap();
        assert_eq!(c.unit(4).params(), &[0.25, 0.75]);
        let ll = c.log_likelihood(&[1], 0).unwrap();
        assert!((ll - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unreachable_units_are_dropped() {
        let mut b = CircuitBuilder::new(vec![2]);
        let _dead = b.input(0, vec![0.5, 0.5]);
        let a = b.input(0, vec![0.3, 0.7]);
        let p = b.product(vec![a]);
        let s = b.sum(vec![p], vec![1.0]);
        let c = b.finish(vec![s]).unwrap();
        let pruned = c.without_unreachable();
        assert_eq!(pruned.len(), 3);
        assert_eq!(pruned.roots(), &[2]);
        assert_eq!(
            pruned.log_likelihood(&[1], 0).unwrap(),
            c.log_likelihood(&[1], 0).unwrap()
        );
    }

    #[test]
    fn union_concatenates_heads() {
        let u = Circuit::disjoint_union(&[tiny(), tiny()]).unwrap();
        assert_eq!(u.num_heads(), 2);
        assert_eq!(u.len(), 10);
        assert_eq!(u.roots(), &[4, 9]);
    }
}
