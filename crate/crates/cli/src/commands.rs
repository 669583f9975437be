use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use expat_core::data::{
    generate_split, load_dataset, save_dataset, Dataset, Modality, Split, SyntheticConfig,
};
use expat_core::diff::GradCheckOptions;
use expat_core::eval::{
    embed_dataset, evaluate_embeddings, export_projection, EvalConfig, RetrievalReport,
};
use expat_core::gradsuite::run_suite;
use expat_core::trainer::{Checkpoint, Model, Trainer};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(CliError::io(path))
}

fn ensure_valid(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(problems))
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    train_file: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_file: Option<&'a str>,
    train_samples: usize,
    test_samples: usize,
    dim: usize,
    synthetic: &'a SyntheticConfig,
}

/// Writes `train.csv`, `test.csv` (when there are test identities) and
/// `meta.toml` into `out`.
pub fn gen_data(cfg: &SyntheticConfig, out: &Path) -> Result<()> {
    ensure_valid(cfg.validate())?;
    let (train, test) = generate_split(cfg)?;
    create_dir(out)?;
    save_dataset(&train, &out.join("train.csv"))?;
    if let Some(t) = &test {
        save_dataset(t, &out.join("test.csv"))?;
    }
    let meta = Sidecar {
        train_file: "train.csv",
        test_file: test.as_ref().map(|_| "test.csv"),
        train_samples: train.len(),
        test_samples: test.as_ref().map_or(0, Dataset::len),
        dim: train.dim(),
        synthetic: cfg,
    };
    write_file(
        &out.join("meta.toml"),
        &toml::to_string(&meta).expect("sidecar serializes"),
    )?;
    println!(
        "wrote {} train / {} test samples ({} identities, D = {}) to {}",
        meta.train_samples,
        meta.test_samples,
        cfg.identities + cfg.test_identities,
        meta.dim,
        out.display()
    );
    Ok(())
}

fn load(path: &Path, split: Split) -> Result<Dataset> {
    if !path.is_file() {
        return Err(CliError::invalid(format!(
            "{} does not exist",
            path.display()
        )));
    }
    Ok(load_dataset(path, split)?)
}

fn datasets(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    match (&cfg.synthetic, &cfg.data) {
        (Some(s), _) => Ok(generate_split(s)?),
        (None, Some(d)) => {
            let train = load(&d.train, Split::Train)?;
            let test = d
                .test
                .as_deref()
                .map(|p| load(p, Split::Test))
                .transpose()?;
            Ok((train, test))
        }
        (None, None) => Err(CliError::invalid("no dataset configured")),
    }
}

pub struct TrainArgs {
    pub resume: Option<PathBuf>,
}

/// Trains from a validated run config. Writes the effective config,
/// `loss_log.csv`, periodic and final checkpoints, and a report when a test
/// split is available.
pub fn train(cfg: &RunConfig, args: TrainArgs) -> Result<()> {
    ensure_valid(cfg.validate())?;
    let (train_set, test_set) = datasets(cfg)?;
    let out = &cfg.output.dir;
    create_dir(out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;

    let tc = cfg.train_config();
    let mut trainer = match &args.resume {
        Some(p) => Trainer::resume(&train_set, tc.clone(), Checkpoint::load(p)?)?,
        None => Trainer::new(&train_set, tc.clone())?,
    };
    let log_path = out.join("loss_log.csv");
    let mut log = BufWriter::new(File::create(&log_path).map_err(CliError::io(&log_path))?);
    writeln!(log, "step,total,ranking,identity,lr").map_err(CliError::io(&log_path))?;
    let ckpt_dir = out.join("checkpoints");
    if tc.checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
    }

    let started = Instant::now();
    let mut last = None;
    trainer.run(|s, t| {
        writeln!(
            log,
            "{},{},{},{},{}",
            s.step, s.total, s.ranking, s.identity, s.lr
        )?;
        let done = s.step + 1;
        if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 {
            t.checkpoint()
                .save(&ckpt_dir.join(format!("step_{done:06}.ckpt")))?;
        }
        last = Some(*s);
        Ok(())
    })?;
    log.flush().map_err(CliError::io(&log_path))?;
    trainer.checkpoint().save(&out.join("final.ckpt"))?;
    if let Some(s) = last {
        println!(
            "trained {} steps in {:.1}s: total {:.4}, ranking {:.4}, identity {:.4}",
            s.step + 1,
            started.elapsed().as_secs_f64(),
            s.total,
            s.ranking,
            s.identity
        );
    }

    if let Some(test) = test_set {
        let model = trainer.into_model();
        evaluate_to(
            &model,
            &test,
            &cfg.eval,
            &out.join("report.csv"),
            cfg.output
                .projection
                .then(|| out.join("projection.csv"))
                .as_deref(),
        )?;
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn evaluate_to(
    model: &Model,
    test: &Dataset,
    cfg: &EvalConfig,
    report: &Path,
    projection: Option<&Path>,
) -> Result<RetrievalReport> {
    if test.dim() != model.config.input_dim {
        return Err(CliError::Validation(vec![
            expat_core::Error::DimensionMismatch {
                op: "eval: dataset features vs checkpoint input",
                expected: model.config.input_dim,
                actual: test.dim(),
            }
            .to_string(),
        ]));
    }
    let emb = embed_dataset(model, test)?;
    let r = evaluate_embeddings(&emb, test, cfg)?;
    let mut w = BufWriter::new(File::create(report).map_err(CliError::io(report))?);
    r.write_csv(&mut w)?;
    w.flush().map_err(CliError::io(report))?;
    let (mean, std) = r.aggregate();
    println!(
        "{} x {} trials (gallery {}): rank-1 {:.2}% ± {:.2}, rank-10 {:.2}%, rank-20 {:.2}%, mAP {:.2}% ± {:.2}",
        cfg.mode.name(),
        r.trials.len(),
        r.gallery_sizes.first().copied().unwrap_or(0),
        100.0 * mean[0],
        100.0 * std[0],
        100.0 * mean[1],
        100.0 * mean[2],
        100.0 * mean[3],
        100.0 * std[3]
    );
    if r.excluded_queries() > 0 {
        println!(
            "{} query evaluations had no gallery match and were excluded",
            r.excluded_queries()
        );
    }
    if let Some(p) = projection {
        let labels: Vec<usize> = test.samples().iter().map(|s| s.id).collect();
        let mods: Vec<Modality> = test.samples().iter().map(|s| s.modality).collect();
        export_projection(&emb, &labels, &mods, p)?;
    }
    Ok(r)
}

pub fn eval(
    checkpoint: &Path,
    data: &Path,
    cfg: &EvalConfig,
    out: &Path,
    projection: Option<&Path>,
) -> Result<()> {
    let mut problems = Vec::new();
    if cfg.trials == 0 {
        problems.push("trials must be >= 1".to_string());
    }
    for p in [checkpoint, data] {
        if !p.is_file() {
            problems.push(format!("{} does not exist", p.display()));
        }
    }
    ensure_valid(problems)?;
    let mut model = Checkpoint::load(checkpoint)?.model;
    model.eval();
    let test = load_dataset(data, Split::Test)?;
    evaluate_to(&model, &test, cfg, out, projection)?;
    Ok(())
}

pub fn gradcheck(seeds: u64, tolerance: f64, opts: GradCheckOptions) -> Result<()> {
    let started = Instant::now();
    let reports = run_suite(0..seeds, opts)?;
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
    println!(
        "{:width$}  seeds  max_rel_error  worst_seed  status",
        "variant"
    );
    let mut failed = 0;
    for r in &reports {
        let ok = r.max_rel_error < tolerance;
        failed += usize::from(!ok);
        println!(
            "{:width$}  {:5}  {:13.3e}  {:10}  {}",
            r.name,
            r.checks,
            r.max_rel_error,
            r.worst_seed,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "{} variants, tolerance {tolerance:e}, {:.1}s",
        reports.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(CliError::GradCheckFailed(failed));
    }
    Ok(())
}
