//! `pcgrow` command-line front end.
//!
//! Every subcommand prints one `RESULT key=value ...` line on success.
//! Exit status: 0 success, 1 numeric failure, 2 bad arguments, 3 malformed
//! or structurally invalid input.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "pcgrow", version, about = "Probabilistic circuits with latent variable distillation")]
struct Cli {
    /// Seed of the single random stream used by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct EmArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Step size schedule `start:end`, interpolated linearly over epochs.
    #[arg(long, default_value = "0.1:0.01", value_parser = parse_lr)]
    lr: (f64, f64),
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a circuit for smoothness, decomposability and alternation.
    Validate {
        #[arg(long)]
        circuit_in: PathBuf,
    },
    /// Learn a hidden Chow-Liu tree circuit from the images of a dataset.
    Hclt {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        circuit_out: PathBuf,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        /// Values per pixel (default: largest value in the dataset + 1).
        #[arg(long)]
        domain: Option<usize>,
    },
    /// Mini-batch EM on the images of a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        circuit_in: PathBuf,
        #[arg(long)]
        circuit_out: PathBuf,
        /// Cluster map giving the head of every sample (default: head 0).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        em: EmArgs,
        /// Prune to this fraction of sum edges after training.
        #[arg(long)]
        keep: Option<f64>,
        /// Write the per-epoch mean LL as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Progressive growing of a tied cluster-conditioned patch circuit.
    Grow {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        circuit_out: PathBuf,
        /// Output: one cluster map per latent position.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long = "K", default_value_t = 8)]
        k: usize,
        /// Outer clusters; with `--n2`, grows inside each outer cluster.
        #[arg(long, requires = "n2")]
        n1: Option<usize>,
        /// Clusters grown inside each outer cluster.
        #[arg(long, requires = "n1")]
        n2: Option<usize>,
        #[arg(long, default_value_t = 0.4)]
        capacity: f64,
        #[arg(long, default_value_t = 0.01)]
        epsilon_frac: f64,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 0.9)]
        keep: f64,
        #[command(flatten)]
        shape: ShapeArgs,
    },
    /// Fit a prior over the latent grid and compose it with the conditional.
    Assemble {
        #[arg(long)]
        dataset: PathBuf,
        /// The conditional circuit produced by `grow`.
        #[arg(long)]
        circuit_in: PathBuf,
        /// Cluster maps produced by `grow`.
        #[arg(long)]
        labels: PathBuf,
        /// The composed circuit over all pixels.
        #[arg(long)]
        circuit_out: PathBuf,
        #[arg(long)]
        prior_out: Option<PathBuf>,
        /// The (finetuned) conditional, for `gaps`.
        #[arg(long)]
        conditional_out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        prior_hidden: usize,
        #[arg(long, default_value_t = 50)]
        prior_iters: usize,
        /// EM epochs on the composed circuit (0 disables finetuning).
        #[arg(long, default_value_t = 0)]
        finetune_epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value = "0.1:0.01", value_parser = parse_lr)]
        lr: (f64, f64),
        #[command(flatten)]
        shape: ShapeArgs,
    },
    /// Bits per dimension of a dataset under head 0 of a circuit.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        circuit_in: PathBuf,
    },
    /// LVD objective, marginal log-likelihood and their gap.
    Gaps {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        /// The conditional circuit.
        #[arg(long)]
        circuit_in: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Label every sample by its nearest centroids instead of the
        /// stored training labels.
        #[arg(long)]
        relabel: bool,
        #[command(flatten)]
        shape: ShapeArgs,
    },
    /// Write a synthetic patch benchmark dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 16)]
        components: usize,
        #[arg(long, default_value_t = 4)]
        domain: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct ShapeArgs {
    /// Image shape `H,W,C`; patches are the cells of the latent grid.
    #[arg(long, value_parser = parse_shape)]
    image: Option<(usize, usize, usize)>,
    /// Values per pixel (default: largest value in the dataset + 1).
    #[arg(long)]
    domain: Option<usize>,
}

fn parse_lr(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected `start:end`")?;
    let a: f64 = a.parse().map_err(|_| format!("bad step size `{a}`"))?;
    let b: f64 = b.parse().map_err(|_| format!("bad step size `{b}`"))?;
    Ok((a, b))
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad dimension `{t}`")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [h, w, c] => Ok((h, w, c)),
        [h, w] => Ok((h, w, 1)),
        _ => Err("expected `H,W,C`".into()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(line) => {
            println!("RESULT {line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::arg("--threads must be positive"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::arg(format!("cannot start thread pool: {e}")))?;
    pool.install(|| commands::dispatch(cli.command, cli.seed))
}
