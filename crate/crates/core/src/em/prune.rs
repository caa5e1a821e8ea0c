use crate::circuit::{Circuit, Unit, UnitKind};
use crate::error::{PcError, Result};
use crate::logspace::normalize;

use super::{compute_flows, FlowTable, LabeledBatch};

/// Removes the sum edges carrying the least flow on `data` until
/// `keep_fraction` of the sum edges remain, then drops unreachable units.
pub fn prune(circuit: &Circuit, data: &LabeledBatch<'_>, keep_fraction: f64) -> Result<Circuit> {
    check_fraction(keep_fraction)?;
    if keep_fraction == 1.0 {
        return Ok(circuit.clone());
    }
    let flows = compute_flows(circuit, data)?;
    prune_with_flows(circuit, &flows, keep_fraction)
}

fn check_fraction(keep_fraction: f64) -> Result<()> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(PcError::arg(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    Ok(())
}

/// As [`prune`], with flows already computed against `circuit`. A sum unit
/// never loses its last edge, so very small fractions keep each unit's
/// single best edge.
pub fn prune_with_flows(circuit: &Circuit, flows: &FlowTable, keep_fraction: f64) -> Result<Circuit> {
    check_fraction(keep_fraction)?;
    if !flows.matches(circuit) {
        return Err(PcError::arg("flow table was computed against a different circuit"));
    }
    if keep_fraction == 1.0 {
        return Ok(circuit.clone());
    }
    let offsets = circuit.edge_offsets();
    // (flow, flat edge index, unit)
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(circuit.num_sum_edges());
    for (id, unit) in circuit.units().iter().enumerate() {
        if unit.is_sum() {
            for e in offsets[id]..offsets[id + 1] {
                edges.push((flows.edge[e], e, id));
            }
        }
    }
    let total = edges.len();
    let keep = (keep_fraction * total as f64).ceil() as usize;
    let mut to_remove = total.saturating_sub(keep);
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut remaining: Vec<usize> = circuit.units().iter().map(|u| u.children.len()).collect();
    let mut removed = vec![false; offsets.last().copied().unwrap_or(0)];
    for &(_, e, id) in &edges {
        if to_remove == 0 {
            break;
        }
        if remaining[id] > 1 {
            remaining[id] -= 1;
            removed[e] = true;
            to_remove -= 1;
        }
    }

    let (domains, mut units, roots) = circuit.clone().into_parts();
    for (id, unit) in units.iter_mut().enumerate() {
        let UnitKind::Sum { weights } = &unit.kind else {
            continue;
        };
        if remaining[id] == unit.children.len() {
            continue;
        }
        let base = offsets[id];
        let (mut children, mut w) = (Vec::new(), Vec::new());
        for (k, (&c, &wk)) in unit.children.iter().zip(weights).enumerate() {
            if !removed[base + k] {
                children.push(c);
                w.push(wk);
            }
        }
        if !normalize(&mut w) {
            let n = w.len() as f64;
            w.iter_mut().for_each(|x| *x = 1.0 / n);
        }
        *unit = Unit::sum(children, w);
    }
    Ok(Circuit::new(domains, units, roots)?.without_unreachable())
}
