//! Latent variable distillation for images: one latent per patch, a
//! cluster-conditioned circuit shared by every patch position, a prior
//! over the latent grid, and the assembled model
//! `p(x) = sum_z p(z) prod_i p(x_i | z_i)`.

mod assemble;
mod data;
mod report;

use rand::Rng;

use crate::circuit::Circuit;
use crate::em::{compute_flows, em_update, LabeledBatch, LEAF_PSEUDOCOUNT};
use crate::error::{PcError, Result};
use crate::growing::{grow_schedule, progressive_grow, ClusterMap, EmbeddedDataset, GrowConfig, GrowOutcome};
use crate::structure::learn_hclt;

pub use assemble::{assemble, finetune, AssembledModel, Origin};
pub use data::{extract_patches, read_dataset, write_dataset, ImageDataset, PatchLayout};
pub use report::{
    appendix_a_check, assign_latents, bits_per_dimension, elbo, gap_report, joint_log_likelihood,
    latents_from_maps, GapReport,
};

/// The shared conditional and the discretization it was grown with.
#[derive(Clone, Debug)]
pub struct TiedConditional {
    pub circuit: Circuit,
    /// Clusters over all positions' records, position-major.
    pub global: ClusterMap,
    /// Per position: the shared centroids with that position's labels.
    pub per_position: Vec<ClusterMap>,
    pub outcome: GrowOutcome,
}

/// Pools every position's `(x_i, h_i)` records and grows one
/// cluster-conditioned circuit on them.
pub fn tie_and_train_conditional<R: Rng + ?Sized>(
    patch_sets: &[EmbeddedDataset],
    domains: &[usize],
    config: &GrowConfig,
    rng: &mut R,
) -> Result<TiedConditional> {
    let first = patch_sets
        .first()
        .ok_or_else(|| PcError::arg("no patch datasets"))?;
    let n = first.len();
    let width = first.samples.first().map_or(0, |x| x.len());
    for s in patch_sets {
        if s.len() != n || s.dim() != first.dim() || s.samples.iter().any(|x| x.len() != width) {
            return Err(PcError::arg("patch datasets differ in shape"));
        }
    }
    if domains.len() != width {
        return Err(PcError::arg(format!("{} domains for patches of {width} values", domains.len())));
    }
    let all = EmbeddedDataset {
        samples: patch_sets.iter().flat_map(|s| s.samples.iter().cloned()).collect(),
        embeddings: patch_sets.iter().flat_map(|s| s.embeddings.iter().cloned()).collect(),
    };
    let outcome = if config.use_schedule {
        grow_schedule(&all, domains, config, rng)?
    } else {
        let initial = learn_hclt(&all.samples, domains, config.hidden_size, 1, rng)?;
        progressive_grow(&all, &initial, config, rng)?
    };
    let per_position = (0..patch_sets.len())
        .map(|p| ClusterMap {
            centroids: outcome.map.centroids.clone(),
            labels: outcome.map.labels[p * n..(p + 1) * n].to_vec(),
        })
        .collect();
    Ok(TiedConditional {
        circuit: outcome.circuit.clone(),
        global: outcome.map.clone(),
        per_position,
        outcome,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    pub hidden_size: usize,
    /// Full-batch EM iterations.
    pub iterations: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            hidden_size: 16,
            iterations: 50,
        }
    }
}

/// HCLT over the latent grid with `k` categories per position, fitted by
/// full-batch EM.
pub fn train_prior<R: Rng + ?Sized>(
    latents: &[Vec<u32>],
    k: usize,
    config: &PriorConfig,
    rng: &mut R,
) -> Result<Circuit> {
    let positions = latents
        .first()
        .map(|z| z.len())
        .ok_or_else(|| PcError::arg("no latent grids to fit"))?;
    let domains = vec![k; positions];
    let mut prior = learn_hclt(latents, &domains, config.hidden_size, 1, rng)?;
    let labels = vec![0; latents.len()];
    let batch = LabeledBatch::new(latents, &labels)?;
    for _ in 0..config.iterations {
        let flows = compute_flows(&prior, &batch)?;
        prior = em_update(&prior, &flows, 1.0, LEAF_PSEUDOCOUNT)?;
    }
    Ok(prior)
}
