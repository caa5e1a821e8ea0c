use rayon::prelude::*;

use crate::circuit::eval::eval_unit;
use crate::error::{PcError, Result};
use crate::growing::ClusterMap;

use super::assemble::AssembledModel;
use super::data::ImageDataset;

/// Largest latent grid enumerated exactly.
const MAX_ENUMERATION: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapReport {
    /// `sum_n log p(x_n, z_n)` with `z_n` read off the cluster maps.
    pub lvd_objective: f64,
    /// `sum_n log p(x_n)`.
    pub true_ll: f64,
    /// `true_ll - lvd_objective`.
    pub variational_gap: f64,
}

/// Latent grid of every training image: `z[n][i] = maps[i].labels[n]`.
pub fn latents_from_maps(maps: &[ClusterMap]) -> Result<Vec<Vec<u32>>> {
    let n = maps.first().map_or(0, |m| m.labels.len());
    if maps.iter().any(|m| m.labels.len() != n) {
        return Err(PcError::arg("cluster maps cover different numbers of samples"));
    }
    Ok((0..n)
        .map(|s| maps.iter().map(|m| m.labels[s] as u32).collect())
        .collect())
}

/// Latent grid of unseen images: nearest centroid at every position.
pub fn assign_latents(data: &ImageDataset, maps: &[ClusterMap]) -> Result<Vec<Vec<u32>>> {
    if maps.len() != data.grid.0 * data.grid.1 {
        return Err(PcError::arg("one cluster map is needed per grid position"));
    }
    Ok(data
        .embeddings
        .iter()
        .map(|grid| grid.iter().zip(maps).map(|(h, m)| m.assign(h) as u32).collect())
        .collect())
}

fn check_latents(model: &AssembledModel, z: &[u32]) -> Result<()> {
    if z.len() != model.num_latents() {
        return Err(PcError::EvidenceLength {
            got: z.len(),
            expected: model.num_latents(),
        });
    }
    let k = model.num_categories();
    if let Some((i, &c)) = z.iter().enumerate().find(|(_, &c)| c as usize >= k) {
        return Err(PcError::Domain {
            var: i,
            value: c,
            domain: k,
        });
    }
    Ok(())
}

/// `log p(x, z)`: the composed circuit evaluated with every latent gadget
/// restricted to its branch `z_i`. Shares the arithmetic of the marginal
/// evaluation, so a single-category model gives exactly `log p(x)`.
pub fn joint_log_likelihood(model: &AssembledModel, x: &[u32], z: &[u32]) -> Result<f64> {
    model.composed.check_observation(x)?;
    check_latents(model, z)?;
    Ok(joint_unchecked(model, x, z, &mut vec![0.0; model.composed.len()]))
}

fn joint_unchecked(model: &AssembledModel, x: &[u32], z: &[u32], vals: &mut [f64]) -> f64 {
    let c = model.composed.compiled();
    let mut edges = 0;
    for n in 0..vals.len() {
        vals[n] = match model.is_gadget(n) {
            Some(pos) => {
                let e = c.start[n] + z[pos] as usize;
                crate::logspace::ln_or_neg_inf(c.weight[e]) + vals[c.child[e] as usize]
            }
            None => eval_unit::<[u32], false>(c, n, x, vals, &mut edges),
        };
    }
    vals[model.composed.roots()[0]]
}

/// LVD objective, marginal likelihood and the gap between them.
pub fn gap_report(model: &AssembledModel, images: &[Vec<u32>], latents: &[Vec<u32>]) -> Result<GapReport> {
    if images.len() != latents.len() {
        return Err(PcError::arg("one latent grid is needed per image"));
    }
    for (x, z) in images.iter().zip(latents) {
        model.composed.check_observation(x.as_slice())?;
        check_latents(model, z)?;
    }
    let pairs: Vec<(f64, f64)> = images
        .par_iter()
        .zip(latents.par_iter())
        .map_init(
            || vec![0.0; model.composed.len()],
            |vals, (x, z)| {
                let joint = joint_unchecked(model, x, z, vals);
                model.composed.forward_into(x.as_slice(), vals);
                (joint, vals[model.composed.roots()[0]])
            },
        )
        .collect();
    let lvd_objective: f64 = pairs.iter().map(|p| p.0).sum();
    let true_ll: f64 = pairs.iter().map(|p| p.1).sum();
    Ok(GapReport {
        lvd_objective,
        true_ll,
        variational_gap: true_ll - lvd_objective,
    })
}

/// `-mean log p(x) / (V ln 2)` under head 0 of `circuit`.
pub fn bits_per_dimension(circuit: &crate::Circuit, images: &[Vec<u32>]) -> Result<f64> {
    if images.is_empty() {
        return Err(PcError::arg("bits per dimension of an empty dataset"));
    }
    let lls = circuit.log_likelihoods(images, &vec![0; images.len()])?;
    if let Some(i) = lls.iter().position(|ll| ll.is_infinite()) {
        return Err(PcError::ZeroLikelihood { sample: i });
    }
    let mean = crate::logspace::compensated_sum(&lls) / lls.len() as f64;
    Ok(-mean / (std::f64::consts::LN_2 * circuit.num_vars() as f64))
}

/// Calls `f(z, q(z))` for every latent grid with `q(z) > 0` under the
/// factorized posterior `q[i][c]`.
fn for_each_grid(q: &[Vec<f64>], mut f: impl FnMut(&[u32], f64)) {
    let mut z = vec![0u32; q.len()];
    loop {
        let w: f64 = z.iter().zip(q).map(|(&c, qi)| qi[c as usize]).product();
        if w > 0.0 {
            f(&z, w);
        }
        let mut i = 0;
        loop {
            if i == z.len() {
                return;
            }
            z[i] += 1;
            if (z[i] as usize) < q[i].len() {
                break;
            }
            z[i] = 0;
            i += 1;
        }
    }
}

fn check_posterior(model: &AssembledModel, q: &[Vec<f64>]) -> Result<()> {
    let k = model.num_categories();
    if q.len() != model.num_latents() || q.iter().any(|qi| qi.len() != k) {
        return Err(PcError::arg("posterior must give K probabilities per latent position"));
    }
    if q.iter().any(|qi| (qi.iter().sum::<f64>() - 1.0).abs() > 1e-9 || qi.iter().any(|&p| p < 0.0)) {
        return Err(PcError::arg("posterior rows must be distributions"));
    }
    if k.checked_pow(q.len() as u32).is_none_or(|n| n > MAX_ENUMERATION) {
        return Err(PcError::arg("latent grid too large to enumerate"));
    }
    Ok(())
}

/// The three expectations under a factorized `q(z | x)`:
/// `E_q[log p(x, z)]`, `E_q[log p(x | z)]` and `KL(q || p(z))`.
fn expectations(model: &AssembledModel, x: &[u32], q: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
    check_posterior(model, q)?;
    model.composed.check_observation(x)?;
    let mut vals = vec![0.0; model.composed.len()];
    let mut joint = 0.0;
    let mut kl = 0.0;
    let mut err = None;
    for_each_grid(q, |z, w| {
        joint += w * joint_unchecked(model, x, z, &mut vals);
        let log_q: f64 = z.iter().zip(q).map(|(&c, qi)| qi[c as usize].ln()).sum();
        match model.prior.log_likelihood(z, 0) {
            Ok(lp) => kl += w * (log_q - lp),
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let mut cond = 0.0;
    for (pos, qi) in q.iter().enumerate() {
        let patch = model.layout.patch_of(x, pos);
        for (c, &p) in qi.iter().enumerate() {
            if p > 0.0 {
                cond += p * model.conditional.log_likelihood(&patch, c)?;
            }
        }
    }
    Ok((joint, cond, kl))
}

/// Evidence lower bound `E_q[log p(x | z)] - KL(q || p(z))`.
pub fn elbo(model: &AssembledModel, x: &[u32], q: &[Vec<f64>]) -> Result<f64> {
    let (_, cond, kl) = expectations(model, x, q)?;
    Ok(cond - kl)
}

/// Per sample, `E_q[log p(x, z)] - (E_q[log p(x | z)] - KL(q || p(z)))`.
/// The two objectives differ only by `E_q[log q(z | x)]`, so the result
/// does not depend on the circuit parameters.
pub fn appendix_a_check(model: &AssembledModel, images: &[Vec<u32>], posteriors: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    if images.len() != posteriors.len() {
        return Err(PcError::arg("one posterior is needed per image"));
    }
    images
        .iter()
        .zip(posteriors)
        .map(|(x, q)| {
            let (joint, cond, kl) = expectations(model, x, q)?;
            Ok(joint - (cond - kl))
        })
        .collect()
}
