//! Reference computations for the integration tests. Everything here works
//! in linear space straight from the unit definitions and never calls the
//! library's evaluator, flow code or EM.

#![allow(dead_code)]

use pcgrow::lvd::AssembledModel;
use pcgrow::{Circuit, UnitKind};

/// `p_head(x)` by recursion over the unit list.
pub fn probability(c: &Circuit, x: &[u32], head: usize) -> f64 {
    values(c, &x.iter().map(|&v| Some(v)).collect::<Vec<_>>())[c.roots()[head]]
}

/// Unit values with `None` variables summed out at the leaves.
pub fn values(c: &Circuit, x: &[Option<u32>]) -> Vec<f64> {
    let mut vals = vec![0.0; c.len()];
    for (id, u) in c.units().iter().enumerate() {
        vals[id] = match &u.kind {
            UnitKind::Input { var, probs } => match x[*var] {
                Some(v) => probs[v as usize],
                None => probs.iter().sum(),
            },
            UnitKind::Product => u.children.iter().map(|&ch| vals[ch]).product(),
            UnitKind::Sum { weights } => u.children.iter().zip(weights).map(|(&ch, w)| w * vals[ch]).sum(),
        };
    }
    vals
}

/// Every assignment of `domains`, in lexicographic order.
pub fn assignments(domains: &[usize]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for &d in domains {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u32>| {
                (0..d as u32).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// `log p_head(e)` by summing the full joint over every completion.
pub fn brute_force_log_marginal(c: &Circuit, e: &[Option<u32>], head: usize) -> f64 {
    let free: Vec<usize> = (0..e.len()).filter(|&v| e[v].is_none()).collect();
    let doms: Vec<usize> = free.iter().map(|&v| c.domains()[v]).collect();
    let mut total = 0.0;
    for fill in assignments(&doms) {
        let mut x: Vec<u32> = e.iter().map(|v| v.unwrap_or(0)).collect();
        for (&v, &val) in free.iter().zip(&fill) {
            x[v] = val;
        }
        total += probability(c, &x, head);
    }
    total.ln()
}

/// Per-unit flows of one sample routed to `head`: the root gets 1, a sum
/// hands `w_c p_c / p_n` of its flow to child `c`, a product hands its
/// whole flow to every child.
pub fn unit_flows(c: &Circuit, x: &[u32], head: usize) -> Vec<f64> {
    let vals = values(c, &x.iter().map(|&v| Some(v)).collect::<Vec<_>>());
    let mut flow = vec![0.0; c.len()];
    flow[c.roots()[head]] = 1.0;
    for id in (0..c.len()).rev() {
        let f = flow[id];
        if f == 0.0 {
            continue;
        }
        let u = c.unit(id);
        match &u.kind {
            UnitKind::Sum { weights } => {
                for (&ch, w) in u.children.iter().zip(weights) {
                    flow[ch] += w * vals[ch] / vals[id] * f;
                }
            }
            UnitKind::Product => {
                for &ch in &u.children {
                    flow[ch] += f;
                }
            }
            UnitKind::Input { .. } => {}
        }
    }
    flow
}

/// `log sum_z p(z) prod_i p(x_i | z_i)` by enumerating latent grids.
pub fn assembled_log_likelihood(m: &AssembledModel, x: &[u32]) -> f64 {
    let k = m.conditional.num_heads();
    let positions = m.layout.patches.len();
    let mut total = 0.0;
    for z in assignments(&vec![k; positions]) {
        let mut p = probability(&m.prior, &z, 0);
        for (i, vars) in m.layout.patches.iter().enumerate() {
            let patch: Vec<u32> = vars.iter().map(|&v| x[v]).collect();
            p *= probability(&m.conditional, &patch, z[i] as usize);
        }
        total += p;
    }
    total.ln()
}

/// `E_q[log q]` of a factorized posterior.
pub fn negative_entropy(q: &[Vec<f64>]) -> f64 {
    q.iter()
        .flat_map(|row| row.iter())
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
