use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn expat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expat"))
        .args(args)
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn small_data(dir: &Path) {
    let out = dir.to_str().unwrap();
    let o = expat(&[
        "gen-data",
        "--ids",
        "6",
        "--test-ids",
        "4",
        "--per-mod",
        "4",
        "--dim",
        "12",
        "--latent-dim",
        "4",
        "--nuisance-dim",
        "4",
        "--seed",
        "7",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", text(&o));
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY: &str = r#"
[data]
train = "data/train.csv"
test = "data/test.csv"

[train]
steps = 12
decay_steps = [6, 10]
warmup_steps = 2
batch_size = 4
hidden = 16
embed_dim = 8
checkpoint_every = 5

[eval]
trials = 3

[output]
dir = "out"
projection = true
"#;

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let o = expat(&[
            "gen-data",
            "--ids",
            "32",
            "--per-mod",
            "20",
            "--dim",
            "64",
            "--gap",
            "0.5",
            "--seed",
            "7",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", text(&o));
    }
    for f in ["train.csv", "test.csv", "meta.toml"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = fs::read_to_string(a.path().join("train.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32 * 2 * 20);
    assert!(fs::read_to_string(a.path().join("meta.toml"))
        .unwrap()
        .contains("gap = 0.5"));
}

#[test]
fn gen_data_rejects_single_identity() {
    let d = tempfile::tempdir().unwrap();
    let o = expat(&[
        "gen-data",
        "--ids",
        "1",
        "--gap",
        "2",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let t = text(&o);
    assert!(
        t.contains("at least 2 identities") && t.contains("gap"),
        "{t}"
    );
}

#[test]
fn train_writes_log_checkpoints_and_report() {
    let d = tempfile::tempdir().unwrap();
    small_data(&d.path().join("data"));
    let cfg = write_config(d.path(), TINY);
    let o = expat(&["train", "--config", &cfg]);
    assert!(o.status.success(), "{}", text(&o));
    let out = d.path().join("out");
    let log = fs::read_to_string(out.join("loss_log.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "step,total,ranking,identity,lr");
    assert_eq!(rows.len(), 13);
    assert!(rows[12].starts_with("11,"));
    for f in [
        "final.ckpt",
        "checkpoints/step_000005.ckpt",
        "checkpoints/step_000010.ckpt",
        "report.csv",
        "projection.csv",
        "config.toml",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 + 2);

    // Re-running from the echoed config reproduces the log.
    let echoed = out.join("config.toml");
    let o = expat(&[
        "train",
        "--config",
        echoed.to_str().unwrap(),
        "--out",
        d.path().join("again").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(
        fs::read_to_string(d.path().join("again/loss_log.csv")).unwrap(),
        log
    );
}

#[test]
fn resume_continues_the_log() {
    let d = tempfile::tempdir().unwrap();
    small_data(&d.path().join("data"));
    let cfg = write_config(d.path(), TINY);
    assert!(expat(&["train", "--config", &cfg]).status.success());
    let full = fs::read_to_string(d.path().join("out/loss_log.csv")).unwrap();
    let ckpt = d.path().join("out/checkpoints/step_000005.ckpt");
    let o = expat(&[
        "train",
        "--config",
        &cfg,
        "--out",
        d.path().join("resumed").to_str().unwrap(),
        "--resume",
        ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let tail = fs::read_to_string(d.path().join("resumed/loss_log.csv")).unwrap();
    let expected: Vec<&str> = full.lines().take(1).chain(full.lines().skip(6)).collect();
    assert_eq!(tail.lines().collect::<Vec<_>>(), expected);
}

#[test]
fn baseline_flags_are_accepted() {
    let d = tempfile::tempdir().unwrap();
    small_data(&d.path().join("data"));
    let cfg = write_config(d.path(), TINY);
    for (loss, norm) in [("triplet", "off"), ("expat", "l2norm"), ("none", "csbn")] {
        let o = expat(&[
            "train",
            "--config",
            &cfg,
            "--loss",
            loss,
            "--csbn",
            norm,
            "--out",
            d.path().join(loss).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{loss}/{norm}: {}", text(&o));
        let echoed = fs::read_to_string(d.path().join(loss).join("config.toml")).unwrap();
        assert!(
            echoed.contains(&format!("ranking = \"{loss}\""))
                && echoed.contains(&format!("variant = \"{norm}\""))
        );
    }
}

#[test]
fn config_problems_are_listed_together() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "[data]\ntrain = \"missing.csv\"\n[train]\nsteps = 0\nbatch_size = 0\n[loss]\nalpha = -1.0\n");
    let o = expat(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let t = text(&o);
    for needle in ["missing.csv", "train.steps", "train.batch_size", "alpha"] {
        assert!(t.contains(needle), "{needle} not in {t}");
    }
    let cfg = write_config(d.path(), "[train]\nstepz = 3\n");
    let o = expat(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("stepz"));
}

#[test]
fn eval_is_deterministic_and_mode_sets_gallery() {
    let d = tempfile::tempdir().unwrap();
    small_data(&d.path().join("data"));
    let cfg = write_config(d.path(), TINY);
    assert!(expat(&["train", "--config", &cfg]).status.success());
    let ckpt = d.path().join("out/final.ckpt");
    let data = d.path().join("data/test.csv");
    let run = |mode: &str, name: &str| {
        let out = d.path().join(name);
        let o = expat(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--mode",
            mode,
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", text(&o));
        (fs::read_to_string(out).unwrap(), text(&o))
    };
    let (a, sa) = run("single_shot", "a.csv");
    let (b, _) = run("single_shot", "b.csv");
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 10 + 2);
    let (_, sm) = run("multi_shot", "m.csv");
    // 4 test identities: one image each, or all 4 each when fewer than ten exist.
    assert!(sa.contains("gallery 4)"), "{sa}");
    assert!(sm.contains("gallery 16)"), "{sm}");
}

#[test]
fn eval_names_dimension_mismatch() {
    let d = tempfile::tempdir().unwrap();
    small_data(&d.path().join("data"));
    let cfg = write_config(d.path(), TINY);
    assert!(expat(&["train", "--config", &cfg]).status.success());
    let other = d.path().join("wide");
    let o = expat(&[
        "gen-data",
        "--ids",
        "4",
        "--test-ids",
        "3",
        "--per-mod",
        "3",
        "--dim",
        "20",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let o = expat(&[
        "eval",
        "--checkpoint",
        d.path().join("out/final.ckpt").to_str().unwrap(),
        "--data",
        other.join("test.csv").to_str().unwrap(),
        "--out",
        d.path().join("r.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let t = text(&o);
    assert!(t.contains("expected 12") && t.contains("got 20"), "{t}");
}

#[test]
fn gradcheck_passes_and_catches_sign_flip() {
    let o = expat(&["gradcheck", "--seeds", "5"]);
    assert!(o.status.success(), "{}", text(&o));
    let t = text(&o);
    assert!(
        t.contains("max_rel_error") && t.contains("loss/expat") && t.contains("model/expat+csbn")
    );
    assert!(!t.contains("FAIL"));
    let o = expat(&["gradcheck", "--seeds", "2", "--flip-sign"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("FAIL"));
}
