use std::fmt;

use super::{Circuit, UnitId, UnitKind};

/// Outcome of [`Circuit::validate_structure`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub smooth: bool,
    pub decomposable: bool,
    /// Roots are sums, sums only have product children, products only have
    /// sum or input children.
    pub alternating: bool,
    pub non_smooth: Vec<UnitId>,
    pub non_decomposable: Vec<UnitId>,
    pub non_alternating: Vec<UnitId>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.smooth && self.decomposable && self.alternating
    }

    /// Every offending unit id, sorted and deduplicated.
    pub fn offending(&self) -> Vec<UnitId> {
        let mut all: Vec<UnitId> = self
            .non_smooth
            .iter()
            .chain(&self.non_decomposable)
            .chain(&self.non_alternating)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "smooth, decomposable and alternating");
        }
        let mut parts = Vec::new();
        if !self.smooth {
            parts.push(format!("not smooth at units {:?}", self.non_smooth));
        }
        if !self.decomposable {
            parts.push(format!(
                "not decomposable at units {:?}",
                self.non_decomposable
            ));
        }
        if !self.alternating {
            parts.push(format!("not alternating at units {:?}", self.non_alternating));
        }
        write!(f, "{}", parts.join("; "))
    }
}

/// Variable set as a fixed-width bitset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Scope(Vec<u64>);

impl Scope {
    fn empty(num_vars: usize) -> Self {
        Scope(vec![0; num_vars.div_ceil(64).max(1)])
    }

    fn insert(&mut self, var: usize) {
        self.0[var / 64] |= 1 << (var % 64);
    }

    fn union_with(&mut self, other: &Scope) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }

    fn intersects(&self, other: &Scope) -> bool {
        self.0.iter().zip(&other.0).any(|(a, b)| a & b != 0)
    }

    pub(crate) fn vars(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (w, &word) in self.0.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                out.push(w * 64 + b);
                bits &= bits - 1;
            }
        }
        out
    }
}

impl Circuit {
    pub(crate) fn scopes(&self) -> Vec<Scope> {
        let mut scopes: Vec<Scope> = Vec::with_capacity(self.len());
        for unit in self.units() {
            let mut s = Scope::empty(self.num_vars());
            match &unit.kind {
                UnitKind::Input { var, .. } => s.insert(*var),
                _ => {
                    for &c in &unit.children {
                        s.union_with(&scopes[c]);
                    }
                }
            }
            scopes.push(s);
        }
        scopes
    }

    /// Scope of one unit, as sorted variable indices.
    pub fn scope_of(&self, id: UnitId) -> Vec<usize> {
        self.scopes().swap_remove(id).vars()
    }

    /// Checks smoothness, decomposability and sum/product alternation,
    /// listing every violating unit. The report is cached until the
    /// structure changes.
    pub fn validate_structure(&self) -> &ValidationReport {
        self.report.get_or_init(|| self.compute_report())
    }

    fn compute_report(&self) -> ValidationReport {
        let scopes = self.scopes();
        let units = self.units();
        let mut r = ValidationReport::default();
        for (id, unit) in units.iter().enumerate() {
            match &unit.kind {
                UnitKind::Input { .. } => {}
                UnitKind::Sum { .. } => {
                    if unit.children.iter().any(|&c| scopes[c] != scopes[id]) {
                        r.non_smooth.push(id);
                    }
                    if unit.children.iter().any(|&c| !units[c].is_product()) {
                        r.non_alternating.push(id);
                    }
                }
                UnitKind::Product => {
                    let mut seen = Scope::empty(self.num_vars());
                    let mut overlap = false;
                    for &c in &unit.children {
                        if seen.intersects(&scopes[c]) {
                            overlap = true;
                        }
                        seen.union_with(&scopes[c]);
                    }
                    if overlap {
                        r.non_decomposable.push(id);
                    }
                    if unit.children.iter().any(|&c| units[c].is_product()) {
                        r.non_alternating.push(id);
                    }
                }
            }
        }
        for &root in self.roots() {
            if !units[root].is_sum() && !r.non_alternating.contains(&root) {
                r.non_alternating.push(root);
            }
        }
        r.non_alternating.sort_unstable();
        r.smooth = r.non_smooth.is_empty();
        r.decomposable = r.non_decomposable.is_empty();
        r.alternating = r.non_alternating.is_empty();
        r
    }
}
