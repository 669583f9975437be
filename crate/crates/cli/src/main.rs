//! `expat`: generate synthetic data, train, evaluate and verify gradients.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expat_core::csbn::NormVariant;
use expat_core::data::SyntheticConfig;
use expat_core::diff::GradCheckOptions;
use expat_core::eval::{EvalConfig, GalleryMode};
use expat_core::losses::RankingLoss;

use crate::config::RunConfig;
use crate::error::Result;

#[derive(Parser)]
#[command(
    name = "expat",
    version,
    about = "Cross-modality angular metric learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-modality dataset.
    GenData(GenDataArgs),
    /// Train from a run configuration file.
    Train(TrainCmd),
    /// Evaluate a checkpoint on a test split.
    Eval(EvalCmd),
    /// Finite-difference check of every loss and the tiny end-to-end model.
    Gradcheck(GradcheckCmd),
}

#[derive(Args)]
struct GenDataArgs {
    /// Training identities.
    #[arg(long)]
    ids: Option<usize>,
    /// Held-out test identities.
    #[arg(long)]
    test_ids: Option<usize>,
    /// Samples per identity per modality.
    #[arg(long)]
    per_mod: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    nuisance_dim: Option<usize>,
    /// Modality gap in [0, 1].
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    /// Scale of the IR-only offset.
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl GenDataArgs {
    fn config(&self) -> SyntheticConfig {
        let mut c = SyntheticConfig::default();
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(ids => identities, test_ids => test_identities, per_mod => per_modality, dim => dim,
             latent_dim => latent_dim, nuisance_dim => nuisance_dim, gap => gap, noise => noise,
             jitter => intensity_jitter, offset => offset_scale, seed => seed);
        c
    }
}

#[derive(Args)]
struct TrainCmd {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Ranking loss: none, triplet, cosine_triplet, at, expat, tuplet21.
    #[arg(long)]
    loss: Option<RankingLoss>,
    /// Normalization: csbn, csbn_full, csbn_none, l2norm, off.
    #[arg(long)]
    csbn: Option<NormVariant>,
    #[arg(long)]
    steps: Option<usize>,
    /// Root seed for data, sampling, initialization and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test split CSV.
    #[arg(long)]
    data: PathBuf,
    /// single_shot or multi_shot.
    #[arg(long, default_value = "single_shot")]
    mode: GalleryMode,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Never compare a query camera with a gallery camera, as `Q:G`.
    #[arg(long = "exclude", value_parser = parse_camera_pair)]
    exclusions: Vec<(u32, u32)>,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write a 2-D projection CSV of the test embeddings.
    #[arg(long)]
    projection: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Negate analytic gradients; the check must then fail.
    #[arg(long, hide = true)]
    flip_sign: bool,
}

fn parse_camera_pair(s: &str) -> std::result::Result<(u32, u32), String> {
    let (q, g) = s
        .split_once(':')
        .ok_or_else(|| format!("expected Q:G, got `{s}`"))?;
    let n = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("`{x}`: {e}"));
    Ok((n(q)?, n(g)?))
}

fn train(cmd: TrainCmd) -> Result<()> {
    let mut cfg = RunConfig::load(&cmd.config)?;
    if let Some(l) = cmd.loss {
        cfg.loss.ranking = l;
    }
    if let Some(n) = cmd.csbn {
        cfg.csbn.variant = n;
    }
    if let Some(s) = cmd.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = cmd.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = cmd.out {
        cfg.output.dir = o;
    }
    cfg.apply_root_seed();
    commands::train(&cfg, commands::TrainArgs { resume: cmd.resume })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a.config(), &a.out),
        Command::Train(t) => train(t),
        Command::Eval(e) => {
            let cfg = EvalConfig {
                mode: e.mode,
                trials: e.trials,
                seed: e.seed,
                camera_exclusions: e.exclusions,
            };
            commands::eval(
                &e.checkpoint,
                &e.data,
                &cfg,
                &e.out,
                e.projection.as_deref(),
            )
        }
        Command::Gradcheck(g) => {
            let opts = GradCheckOptions {
                flip_analytic_sign: g.flip_sign,
                ..Default::default()
            };
            commands::gradcheck(g.seeds, g.tolerance, opts)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
