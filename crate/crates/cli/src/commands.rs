use std::fs;
use std::io::Write;
use std::path::Path;

use pcgrow::em::{prune, train_em, write_ll_trace, EmConfig, LabeledBatch};
use pcgrow::growing::{ClusterMap, GrowConfig, GrowStatus};
use pcgrow::lvd::{
    assemble, assign_latents, bits_per_dimension, extract_patches, finetune, gap_report, latents_from_maps,
    tie_and_train_conditional, train_prior, ImageDataset, PatchLayout, PriorConfig,
};
use pcgrow::structure::learn_hclt;
use pcgrow::synthetic::PatchBenchmark;
use pcgrow::{Circuit, PcError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Command, EmArgs, ShapeArgs};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn arg(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn format(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<PcError> for CliError {
    fn from(e: PcError) -> Self {
        let code = match e {
            PcError::ZeroLikelihood { .. } => 1,
            PcError::InvalidArgument(_) | PcError::Io(_) => 2,
            PcError::Parse { .. }
            | PcError::Structure(_)
            | PcError::Domain { .. }
            | PcError::EvidenceLength { .. }
            | PcError::HeadOutOfRange { .. } => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::arg(format!("cannot read {}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory, so a failed
/// run never leaves a partial output behind.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::arg(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn in_context<T>(path: &Path, r: std::result::Result<T, PcError>) -> Result<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn load_circuit(path: &Path) -> Result<Circuit> {
    in_context(path, Circuit::from_text(&read_text(path)?))
}

fn load_dataset(path: &Path) -> Result<ImageDataset> {
    in_context(path, ImageDataset::from_text(&read_text(path)?))
}

fn load_maps(path: &Path) -> Result<Vec<ClusterMap>> {
    let maps = in_context(path, ClusterMap::parse_many(&read_text(path)?))?;
    for m in &maps {
        in_context(path, m.check())?;
    }
    Ok(maps)
}

fn em_config(em: &EmArgs) -> Result<EmConfig> {
    let config = EmConfig {
        epochs: em.epochs,
        batch_size: em.batch,
        lr_start: em.lr.0,
        lr_end: em.lr.1,
        ..EmConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn domain_of(data: &ImageDataset, domain: Option<usize>) -> Result<usize> {
    let inferred = data.inferred_domain();
    match domain {
        Some(d) if d < inferred => Err(CliError::format(format!(
            "dataset contains value {} but --domain is {d}",
            inferred - 1
        ))),
        Some(0) => Err(CliError::arg("--domain must be positive")),
        Some(d) => Ok(d),
        None => Ok(inferred),
    }
}

/// Patch layout implied by the dataset's latent grid and `--image`.
fn layout_of(data: &ImageDataset, shape: &ShapeArgs) -> Result<PatchLayout> {
    let (gh, gw) = data.grid;
    let layout = match shape.image {
        None if (gh, gw) == (1, 1) => PatchLayout::whole(data.num_vars, 1, 1)?,
        None => {
            return Err(CliError::arg(format!(
                "the dataset has a {gh}x{gw} latent grid; --image H,W,C is required"
            )))
        }
        Some((h, w, c)) => {
            if h * w * c != data.num_vars {
                return Err(CliError::arg(format!(
                    "--image {h},{w},{c} has {} values but samples have {}",
                    h * w * c,
                    data.num_vars
                )));
            }
            if h % gh != 0 || w % gw != 0 {
                return Err(CliError::arg(format!("a {gh}x{gw} grid does not tile a {h}x{w} image")));
            }
            PatchLayout::new(h, w, c, h / gh, w / gw)?
        }
    };
    layout.check_dataset(data)?;
    Ok(layout)
}

fn labels_for(maps: &[ClusterMap], n: usize) -> Result<Vec<usize>> {
    match maps {
        [m] if m.labels.len() == n => Ok(m.labels.clone()),
        [m] => Err(CliError::format(format!(
            "labels cover {} samples, the dataset has {n}",
            m.labels.len()
        ))),
        _ => Err(CliError::format(format!("expected one cluster map, found {}", maps.len()))),
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

pub fn dispatch(command: Command, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match command {
        Command::Validate { circuit_in } => {
            let c = load_circuit(&circuit_in)?;
            let report = c.validate_structure();
            if !report.is_valid() {
                let unit = report.offending()[0];
                return Err(CliError::format(format!(
                    "{}: unit {unit} fails validation: {report}",
                    circuit_in.display()
                )));
            }
            Ok(format!(
                "valid=true vars={} units={} edges={} heads={}",
                c.num_vars(),
                c.len(),
                c.num_edges(),
                c.num_heads()
            ))
        }
        Command::Hclt {
            dataset,
            circuit_out,
            hidden,
            heads,
            domain,
        } => {
            let data = load_dataset(&dataset)?;
            let d = domain_of(&data, domain)?;
            let c = learn_hclt(&data.images, &vec![d; data.num_vars], hidden, heads, &mut rng)?;
            write_atomic(&circuit_out, &c.to_text())?;
            Ok(format!("units={} edges={} heads={}", c.len(), c.num_edges(), c.num_heads()))
        }
        Command::Train {
            dataset,
            circuit_in,
            circuit_out,
            labels,
            em,
            keep,
            trace,
        } => {
            let data = load_dataset(&dataset)?;
            let c = load_circuit(&circuit_in)?;
            let config = em_config(&em)?;
            let heads = match labels {
                Some(p) => labels_for(&load_maps(&p)?, data.len())?,
                None => vec![0; data.len()],
            };
            let batch = LabeledBatch::new(&data.images, &heads)?;
            let (mut trained, ll) = train_em(&c, &batch, &config, &mut rng)?;
            if let Some(f) = keep {
                trained = prune(&trained, &batch, f)?;
            }
            let lls = trained.log_likelihoods(&data.images, &heads)?;
            if let Some(i) = lls.iter().position(|l| l.is_infinite()) {
                return Err(PcError::ZeroLikelihood { sample: i }.into());
            }
            let mean = lls.iter().sum::<f64>() / lls.len().max(1) as f64;
            if let Some(t) = trace {
                let mut buf = Vec::new();
                write_ll_trace(&ll, &mut buf).map_err(PcError::from)?;
                write_atomic(&t, &String::from_utf8_lossy(&buf))?;
            }
            write_atomic(&circuit_out, &trained.to_text())?;
            Ok(format!(
                "mean_ll={} units={} edges={}",
                fmt(mean),
                trained.len(),
                trained.num_edges()
            ))
        }
        Command::Grow {
            dataset,
            circuit_out,
            labels,
            k,
            n1,
            n2,
            capacity,
            epsilon_frac,
            em,
            hidden,
            keep,
            shape,
        } => {
            let data = load_dataset(&dataset)?;
            let layout = layout_of(&data, &shape)?;
            let d = domain_of(&data, shape.domain)?;
            let (use_schedule, outer, inner) = match (n1, n2) {
                (Some(a), Some(b)) => (true, a, b),
                _ => (false, 100, 4),
            };
            let config = GrowConfig {
                target_clusters: k,
                capacity_fraction: capacity,
                epsilon_fraction: epsilon_frac,
                em: em_config(&em)?,
                keep_fraction: keep,
                hidden_size: hidden,
                use_schedule,
                outer_clusters: outer,
                inner_clusters: inner,
                ..GrowConfig::default()
            };
            config.validate()?;
            let patches = extract_patches(&data, &layout)?;
            let tied = tie_and_train_conditional(&patches, &vec![d; layout.patch_size()], &config, &mut rng)?;
            let maps: String = tied.per_position.iter().map(ClusterMap::to_text).collect();
            write_atomic(&circuit_out, &tied.circuit.to_text())?;
            write_atomic(&labels, &maps)?;
            let status = match &tied.outcome.status {
                GrowStatus::Complete => "complete",
                GrowStatus::Stopped { reason } => {
                    log::warn!("{reason}");
                    "stopped"
                }
            };
            let mean_ll = tied.outcome.history.last().map_or(f64::NAN, |h| h.mean_ll);
            Ok(format!(
                "clusters={} units={} edges={} mean_ll={} status={status}",
                tied.global.k(),
                tied.circuit.len(),
                tied.circuit.num_edges(),
                fmt(mean_ll)
            ))
        }
        Command::Assemble {
            dataset,
            circuit_in,
            labels,
            circuit_out,
            prior_out,
            conditional_out,
            prior_hidden,
            prior_iters,
            finetune_epochs,
            batch,
            lr,
            shape,
        } => {
            let data = load_dataset(&dataset)?;
            let layout = layout_of(&data, &shape)?;
            let cond = load_circuit(&circuit_in)?;
            let maps = load_maps(&labels)?;
            if maps.len() != layout.num_patches() {
                return Err(CliError::format(format!(
                    "{} cluster maps for {} latent positions",
                    maps.len(),
                    layout.num_patches()
                )));
            }
            let z = latents_from_maps(&maps)?;
            if z.len() != data.len() {
                return Err(CliError::format(format!(
                    "labels cover {} samples, the dataset has {}",
                    z.len(),
                    data.len()
                )));
            }
            let prior_config = PriorConfig {
                hidden_size: prior_hidden,
                iterations: prior_iters,
            };
            let prior = train_prior(&z, cond.num_heads(), &prior_config, &mut rng)?;
            let mut model = assemble(&prior, &cond, &layout)?;
            if finetune_epochs > 0 {
                let config = em_config(&EmArgs {
                    epochs: finetune_epochs,
                    batch,
                    lr,
                })?;
                model = finetune(&model, &data.images, &config, &mut rng)?.0;
            }
            let bpd = bits_per_dimension(&model.composed, &data.images)?;
            write_atomic(&circuit_out, &model.composed.to_text())?;
            if let Some(p) = prior_out {
                write_atomic(&p, &model.prior.to_text())?;
            }
            if let Some(p) = conditional_out {
                write_atomic(&p, &model.conditional.to_text())?;
            }
            Ok(format!(
                "bpd={} units={} edges={}",
                fmt(bpd),
                model.composed.len(),
                model.composed.num_edges()
            ))
        }
        Command::Eval { dataset, circuit_in } => {
            let data = load_dataset(&dataset)?;
            let c = load_circuit(&circuit_in)?;
            let bpd = bits_per_dimension(&c, &data.images)?;
            let mean_ll = -bpd * std::f64::consts::LN_2 * c.num_vars() as f64;
            Ok(format!("bpd={} mean_ll={}", fmt(bpd), fmt(mean_ll)))
        }
        Command::Gaps {
            dataset,
            prior,
            circuit_in,
            labels,
            relabel,
            shape,
        } => {
            let data = load_dataset(&dataset)?;
            let layout = layout_of(&data, &shape)?;
            let model = assemble(&load_circuit(&prior)?, &load_circuit(&circuit_in)?, &layout)?;
            let maps = load_maps(&labels)?;
            let stored = maps.iter().all(|m| m.labels.len() == data.len());
            let z = if relabel || !stored {
                assign_latents(&data, &maps)?
            } else {
                latents_from_maps(&maps)?
            };
            let r = gap_report(&model, &data.images, &z)?;
            if !r.true_ll.is_finite() {
                return Err(CliError {
                    code: 1,
                    message: "a sample has zero likelihood".into(),
                });
            }
            Ok(format!(
                "lvd_objective={} true_ll={} gap={}",
                fmt(r.lvd_objective),
                fmt(r.true_ll),
                fmt(r.variational_gap)
            ))
        }
        Command::Synth {
            out,
            samples,
            components,
            domain,
            dim,
        } => {
            if components == 0 || domain < 2 || dim == 0 {
                return Err(CliError::arg("components, dim must be positive and domain at least 2"));
            }
            let bench = PatchBenchmark::random(&mut rng, components, domain, dim)?;
            let s = bench.sample(&mut rng, samples)?;
            write_atomic(&out, &s.data.to_text())?;
            Ok(format!(
                "samples={samples} vars={} grid={}x{} dim={dim}",
                s.data.num_vars, s.data.grid.0, s.data.grid.1
            ))
        }
    }
}
