//! Expectation-maximization on labeled data via circuit flows, and
//! flow-based pruning.
//!
//! With flows `F` computed against the current circuit, the M-step target
//! for a sum unit is `(F_{n,c} + eps) / sum_c (F_{n,c} + eps)` and for an
//! input unit `(F_{n,v} + alpha) / sum_v (F_{n,v} + alpha)`. Mini-batch EM
//! moves parameters a step `eta` toward the target; `eta = 1` on the full
//! dataset is exact EM.

mod flows;
mod prune;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::circuit::{Circuit, UnitKind};
use crate::error::{PcError, Result};
use crate::logspace::normalize;

pub use flows::{compute_flows, FlowTable, LabeledBatch};
pub(crate) use flows::{check_batch, flows_for_indices};
pub use prune::{prune, prune_with_flows};

/// Pseudocount added to every sum edge flow before normalization.
pub const EDGE_PSEUDOCOUNT: f64 = 1e-4;

/// Pseudocount added to every leaf category.
pub const LEAF_PSEUDOCOUNT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Step size of the first epoch.
    pub lr_start: f64,
    /// Step size of the last epoch; intermediate epochs interpolate linearly.
    pub lr_end: f64,
    pub edge_pseudocount: f64,
    pub leaf_pseudocount: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            epochs: 50,
            batch_size: 256,
            lr_start: 0.1,
            lr_end: 0.01,
            edge_pseudocount: EDGE_PSEUDOCOUNT,
            leaf_pseudocount: LEAF_PSEUDOCOUNT,
        }
    }
}

impl EmConfig {
    /// Step size used during `epoch` (0-based).
    pub fn step_size(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start + (self.lr_end - self.lr_start) * t
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(PcError::arg("batch size must be positive"));
        }
        for (name, lr) in [("lr_start", self.lr_start), ("lr_end", self.lr_end)] {
            if !(lr > 0.0 && lr <= 1.0) {
                return Err(PcError::arg(format!("{name} must lie in (0, 1], got {lr}")));
            }
        }
        if !(self.edge_pseudocount >= 0.0) || !(self.leaf_pseudocount >= 0.0) {
            return Err(PcError::arg("pseudocounts must be non-negative"));
        }
        Ok(())
    }
}

fn blend(old: &[f64], target: &mut [f64], step: f64) {
    for (t, &o) in target.iter_mut().zip(old) {
        *t = (1.0 - step) * o + step * *t;
    }
}

/// Smoothed M-step target from accumulated statistics.
pub(crate) fn smoothed_target(stats: &[f64], pseudocount: f64) -> Vec<f64> {
    let mut t: Vec<f64> = stats.iter().map(|&f| f + pseudocount).collect();
    if !normalize(&mut t) {
        t = vec![1.0 / stats.len() as f64; stats.len()];
    }
    t
}

/// Moves `current` a step toward the smoothed target, renormalized.
pub(crate) fn stepped_params(current: &[f64], stats: &[f64], pseudocount: f64, step: f64) -> Vec<f64> {
    let mut t = smoothed_target(stats, pseudocount);
    blend(current, &mut t, step);
    normalize(&mut t);
    t
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(PcError::arg(format!("step size must lie in (0, 1], got {step}")));
    }
    Ok(())
}

/// Applies one EM update in place.
pub fn apply_em_update(
    circuit: &mut Circuit,
    flows: &FlowTable,
    step: f64,
    edge_pseudocount: f64,
    leaf_pseudocount: f64,
) -> Result<()> {
    check_step(step)?;
    if !flows.matches(circuit) {
        return Err(PcError::arg("flow table was computed against a different circuit"));
    }
    let updates: Vec<(usize, Vec<f64>)> = circuit
        .units()
        .iter()
        .enumerate()
        .filter_map(|(id, unit)| match &unit.kind {
            UnitKind::Sum { weights } => Some((
                id,
                stepped_params(weights, flows.edge_flows(id), edge_pseudocount, step),
            )),
            UnitKind::Input { probs, .. } => Some((
                id,
                stepped_params(probs, flows.leaf_flows(id, probs.len()), leaf_pseudocount, step),
            )),
            UnitKind::Product => None,
        })
        .collect();
    for (id, p) in updates {
        circuit.set_params(id, p)?;
    }
    Ok(())
}

/// One EM update with step size `step` in (0, 1], returning the updated
/// circuit. Parameters are renormalized exactly.
pub fn em_update(circuit: &Circuit, flows: &FlowTable, step: f64, leaf_pseudocount: f64) -> Result<Circuit> {
    let mut out = circuit.clone();
    apply_em_update(&mut out, flows, step, EDGE_PSEUDOCOUNT, leaf_pseudocount)?;
    Ok(out)
}

/// Mini-batch EM over shuffled batches with the step size annealed
/// linearly across epochs. Returns the trained circuit and, per epoch, the
/// mean log-likelihood of the batches as they were seen.
pub fn train_em<R: Rng + ?Sized>(
    circuit: &Circuit,
    data: &LabeledBatch<'_>,
    config: &EmConfig,
    rng: &mut R,
) -> Result<(Circuit, Vec<f64>)> {
    config.validate()?;
    let mut current = circuit.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    if config.epochs == 0 || data.is_empty() {
        return Ok((current, trace));
    }
    check_batch(&current, data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        let step = config.step_size(epoch);
        order.shuffle(rng);
        let mut ll = 0.0;
        for batch in order.chunks(config.batch_size) {
            let flows = flows_for_indices(&current, data, batch)?;
            ll += flows.log_likelihood;
            apply_em_update(
                &mut current,
                &flows,
                step,
                config.edge_pseudocount,
                config.leaf_pseudocount,
            )?;
        }
        let mean = ll / data.len() as f64;
        log::debug!("epoch {epoch}: step {step:.4}, mean ll {mean:.6}");
        trace.push(mean);
    }
    Ok((current, trace))
}

/// Mean log-likelihood of each sample under its labeled head.
pub fn mean_log_likelihood(circuit: &Circuit, data: &LabeledBatch<'_>) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let lls = circuit.log_likelihoods(data.samples, data.labels)?;
    Ok(lls.iter().sum::<f64>() / lls.len() as f64)
}

/// Writes a per-epoch trace as `epoch,mean_ll_nats` CSV.
pub fn write_ll_trace<W: Write>(trace: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,mean_ll_nats")?;
    for (e, ll) in trace.iter().enumerate() {
        writeln!(w, "{e},{ll:.17e}")?;
    }
    Ok(())
}
