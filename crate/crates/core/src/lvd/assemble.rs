use rand::seq::SliceRandom;
use rand::Rng;

use crate::circuit::{Circuit, Unit, UnitId, UnitKind};
use crate::em::{check_batch, flows_for_indices, stepped_params, EmConfig, FlowTable, LabeledBatch};
use crate::error::{PcError, Result};

use super::data::PatchLayout;

/// Where a unit of the composed circuit came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    /// Copy of a conditional unit instantiated for one latent position.
    Conditional { position: usize, unit: UnitId },
    /// Prior unit; a prior input over `Z_i` becomes a sum over the wrapped
    /// conditional heads of position `i`.
    Prior(UnitId),
    /// Product with a single child: conditional head `head` at `position`.
    Wrapper { position: usize, head: usize },
}

/// `p(x) = sum_z p(z) prod_i p(x_i | z_i)` as one circuit, with the
/// conditional shared by every position.
#[derive(Clone, Debug)]
pub struct AssembledModel {
    pub prior: Circuit,
    pub conditional: Circuit,
    pub layout: PatchLayout,
    pub composed: Circuit,
    pub origin: Vec<Origin>,
}

impl AssembledModel {
    pub fn num_latents(&self) -> usize {
        self.layout.num_patches()
    }

    pub fn num_categories(&self) -> usize {
        self.conditional.num_heads()
    }

    /// Composed units that replace prior inputs, with their position.
    pub(crate) fn is_gadget(&self, n: UnitId) -> Option<usize> {
        match self.origin[n] {
            Origin::Prior(id) => match &self.prior.unit(id).kind {
                UnitKind::Input { var, .. } => Some(*var),
                _ => None,
            },
            _ => None,
        }
    }
}

fn check_parts(prior: &Circuit, conditional: &Circuit, layout: &PatchLayout) -> Result<usize> {
    let k = conditional.num_heads();
    if prior.num_vars() != layout.num_patches() {
        return Err(PcError::arg(format!(
            "prior has {} variables but the layout has {} patches",
            prior.num_vars(),
            layout.num_patches()
        )));
    }
    if let Some(&d) = prior.domains().iter().find(|&&d| d != k) {
        return Err(PcError::arg(format!(
            "prior categories ({d}) differ from the conditional head count ({k})"
        )));
    }
    if prior.num_heads() != 1 {
        return Err(PcError::arg("the prior must have a single head"));
    }
    if conditional.num_vars() != layout.patch_size() {
        return Err(PcError::arg(format!(
            "conditional has {} variables, patches have {}",
            conditional.num_vars(),
            layout.patch_size()
        )));
    }
    for c in [prior, conditional] {
        let report = c.validate_structure();
        if !report.is_valid() {
            return Err(PcError::Structure(report.clone()));
        }
    }
    Ok(k)
}

/// Replaces every prior input over `Z_i` by a sum whose `c`-th child is
/// conditional head `c` instantiated on the variables of patch `i`, with
/// the prior's category probabilities as weights.
pub fn assemble(prior: &Circuit, conditional: &Circuit, layout: &PatchLayout) -> Result<AssembledModel> {
    let k = check_parts(prior, conditional, layout)?;
    let mut domains = vec![0; layout.num_vars()];
    for vars in &layout.patches {
        for (j, &v) in vars.iter().enumerate() {
            domains[v] = conditional.domains()[j];
        }
    }
    let mut units = Vec::with_capacity(layout.num_patches() * (conditional.len() + k) + prior.len());
    let mut origin = Vec::with_capacity(units.capacity());
    let mut wrappers = Vec::with_capacity(layout.num_patches());
    for (pos, vars) in layout.patches.iter().enumerate() {
        let offset = units.len();
        for (id, u) in conditional.units().iter().enumerate() {
            let kind = match &u.kind {
                UnitKind::Input { var, probs } => UnitKind::Input {
                    var: vars[*var],
                    probs: probs.clone(),
                },
                other => other.clone(),
            };
            units.push(Unit {
                kind,
                children: u.children.iter().map(|&c| c + offset).collect(),
            });
            origin.push(Origin::Conditional { position: pos, unit: id });
        }
        let w: Vec<UnitId> = conditional
            .roots()
            .iter()
            .enumerate()
            .map(|(head, &r)| {
                units.push(Unit::product(vec![r + offset]));
                origin.push(Origin::Wrapper { position: pos, head });
                units.len() - 1
            })
            .collect();
        wrappers.push(w);
    }
    let mut map = vec![0; prior.len()];
    for (id, u) in prior.units().iter().enumerate() {
        let unit = match &u.kind {
            UnitKind::Input { var, probs } => Unit::sum(wrappers[*var].clone(), probs.clone()),
            _ => Unit {
                kind: u.kind.clone(),
                children: u.children.iter().map(|&c| map[c]).collect(),
            },
        };
        units.push(unit);
        origin.push(Origin::Prior(id));
        map[id] = units.len() - 1;
    }
    let roots = prior.roots().iter().map(|&r| map[r]).collect();
    let composed = Circuit::new(domains, units, roots)?;
    let report = composed.validate_structure();
    if !report.is_valid() {
        return Err(PcError::Structure(report.clone()));
    }
    Ok(AssembledModel {
        prior: prior.clone(),
        conditional: conditional.clone(),
        layout: layout.clone(),
        composed,
        origin,
    })
}

/// Pools flows of tied copies and moves both parts a step toward the EM
/// target.
fn tied_update(model: &AssembledModel, flows: &FlowTable, step: f64, config: &EmConfig) -> Result<AssembledModel> {
    let stats = |c: &Circuit| -> Vec<Vec<f64>> { c.units().iter().map(|u| vec![0.0; u.params().len()]).collect() };
    let mut cond = stats(&model.conditional);
    let mut prior = stats(&model.prior);
    let dom = model.composed.domains();
    for (n, o) in model.origin.iter().enumerate() {
        let (target, id) = match *o {
            Origin::Conditional { unit, .. } => (&mut cond, unit),
            Origin::Prior(id) => (&mut prior, id),
            Origin::Wrapper { .. } => continue,
        };
        let src = match &model.composed.unit(n).kind {
            UnitKind::Sum { .. } => flows.edge_flows(n),
            UnitKind::Input { var, .. } => flows.leaf_flows(n, dom[*var]),
            UnitKind::Product => continue,
        };
        for (a, b) in target[id].iter_mut().zip(src) {
            *a += b;
        }
    }
    let refit = |c: &Circuit, s: &[Vec<f64>]| -> Result<Circuit> {
        let mut out = c.clone();
        for (id, u) in c.units().iter().enumerate() {
            let pc = match u.kind {
                UnitKind::Sum { .. } => config.edge_pseudocount,
                UnitKind::Input { .. } => config.leaf_pseudocount,
                UnitKind::Product => continue,
            };
            out.set_params(id, stepped_params(u.params(), &s[id], pc, step))?;
        }
        Ok(out)
    };
    // prior inputs are updated from the flows into their gadget sums
    let new_prior = refit(&model.prior, &prior)?;
    let new_cond = refit(&model.conditional, &cond)?;
    assemble(&new_prior, &new_cond, &model.layout)
}

/// EM on unlabeled images through the composed circuit, with the latents
/// marginalized and the conditional kept tied across positions. Returns
/// the model and the mean LL of the batches seen in each epoch; with one
/// batch per epoch and step 1 this is exact EM.
pub fn finetune<R: Rng + ?Sized>(
    model: &AssembledModel,
    images: &[Vec<u32>],
    config: &EmConfig,
    rng: &mut R,
) -> Result<(AssembledModel, Vec<f64>)> {
    config.validate()?;
    let mut current = model.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    if config.epochs == 0 || images.is_empty() {
        return Ok((current, trace));
    }
    let labels = vec![0; images.len()];
    let batch = LabeledBatch::new(images, &labels)?;
    check_batch(&current.composed, &batch)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..config.epochs {
        let step = config.step_size(epoch);
        order.shuffle(rng);
        let mut ll = 0.0;
        for idx in order.chunks(config.batch_size) {
            let flows = flows_for_indices(&current.composed, &batch, idx)?;
            ll += flows.log_likelihood;
            current = tied_update(&current, &flows, step, config)?;
        }
        trace.push(ll / images.len() as f64);
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::CircuitBuilder;
    use crate::logspace::log_sum_exp;
    use crate::structure::learn_hclt;
    use crate::synthetic::random_circuit_with_heads;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn categorical_prior(probs: Vec<f64>) -> Circuit {
        let mut b = CircuitBuilder::new(vec![probs.len()]);
        let l = b.input(0, probs);
        let p = b.product(vec![l]);
        let s = b.sum(vec![p], vec![1.0]);
        b.finish(vec![s]).unwrap()
    }

    #[test]
    fn single_position_is_a_mixture_over_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cond = random_circuit_with_heads(&mut rng, 4, 2, 3);
        let prior = categorical_prior(vec![0.2, 0.5, 0.3]);
        let layout = PatchLayout::whole(2, 2, 1).unwrap();
        let m = assemble(&prior, &cond, &layout).unwrap();
        assert!(m.composed.validate_structure().is_valid());
        for x in [[0, 0, 1, 1], [1, 0, 1, 0], [1, 1, 1, 1]] {
            let terms: Vec<f64> = (0..3)
                .map(|c| [0.2f64, 0.5, 0.3][c].ln() + cond.log_likelihood(&x, c).unwrap())
                .collect();
            let direct = log_sum_exp(&terms);
            let got = m.composed.log_likelihood(&x, 0).unwrap();
            assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
        }
    }

    #[test]
    fn mismatched_categories_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cond = random_circuit_with_heads(&mut rng, 4, 2, 3);
        let prior = categorical_prior(vec![0.5, 0.5]);
        let layout = PatchLayout::whole(2, 2, 1).unwrap();
        assert!(matches!(assemble(&prior, &cond, &layout), Err(PcError::InvalidArgument(_))));
    }

    #[test]
    fn full_batch_finetuning_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = PatchLayout::new(2, 2, 1, 1, 2).unwrap();
        let cond = random_circuit_with_heads(&mut rng, 2, 3, 2);
        let zs: Vec<Vec<u32>> = (0..50).map(|_| vec![rng.random_range(0..2), rng.random_range(0..2)]).collect();
        let prior = learn_hclt(&zs, &[2, 2], 2, 1, &mut rng).unwrap();
        let model = assemble(&prior, &cond, &layout).unwrap();
        let images: Vec<Vec<u32>> = (0..80).map(|_| (0..4).map(|_| rng.random_range(0..3)).collect()).collect();
        let config = EmConfig {
            epochs: 15,
            batch_size: images.len(),
            lr_start: 1.0,
            lr_end: 1.0,
            ..EmConfig::default()
        };
        let (tuned, trace) = finetune(&model, &images, &config, &mut rng).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{trace:?}");
        }
        assert!(tuned.composed.validate_structure().is_valid());
        let (same, t) = finetune(&model, &images, &EmConfig { epochs: 0, ..config }, &mut rng).unwrap();
        assert!(t.is_empty());
        assert_eq!(same.composed, model.composed);
    }
}
