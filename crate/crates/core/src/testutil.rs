//! Oracles shared by unit tests. Nothing here goes through the compiled
//! evaluator.

use crate::circuit::{Circuit, Evidence, UnitKind};

pub(crate) use crate::synthetic::random_circuit;

/// Linear-space recursion straight over the unit list.
pub(crate) fn naive_probability(c: &Circuit, x: &[u32], head: usize) -> f64 {
    let mut vals = vec![0.0; c.len()];
    for (id, u) in c.units().iter().enumerate() {
        vals[id] = match &u.kind {
            UnitKind::Input { var, probs } => probs[x[*var] as usize],
            UnitKind::Product => u.children.iter().map(|&ch| vals[ch]).product(),
            UnitKind::Sum { weights } => u
                .children
                .iter()
                .zip(weights)
                .map(|(&ch, w)| w * vals[ch])
                .sum(),
        };
    }
    vals[c.roots()[head]]
}

/// Enumerates every completion of the unknown variables.
pub(crate) fn brute_force_marginal(c: &Circuit, e: &Evidence, head: usize) -> f64 {
    let unknown: Vec<usize> = (0..e.0.len()).filter(|&v| e.0[v].is_none()).collect();
    let mut x: Vec<u32> = e.0.iter().map(|v| v.unwrap_or(0)).collect();
    let mut total = 0.0;
    loop {
        total += naive_probability(c, &x, head);
        let mut k = 0;
        loop {
            if k == unknown.len() {
                return total.ln();
            }
            let v = unknown[k];
            x[v] += 1;
            if (x[v] as usize) < c.domains()[v] {
                break;
            }
            x[v] = 0;
            k += 1;
        }
    }
}
