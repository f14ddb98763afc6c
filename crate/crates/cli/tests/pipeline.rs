//! The `motinv` binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motinv_core::MotionEmbeddingSet;

const TINY: &str = "base_channels = 4\nframes = 4\ntime_dim = 8\nvocab = 2\nappearances = 2\n\
                    pretrain_steps = 10\ninvert_steps = 5\nsample_steps = 3\nlog_every = 0\n";

fn motinv(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("tiny.cfg");
    if !config.exists() {
        std::fs::write(
            &config,
            format!("out_dir = {}\n{TINY}", dir.join("out").display()),
        )
        .unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_motinv"))
        .args(args)
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join("out").join(name)
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(motinv(d, &["synth"]));
    assert!(out(d, "corpus/index.txt").exists());
    assert!(out(d, "source.gt.txt").exists());
    let log = ok(motinv(d, &["pretrain"]));
    assert!(
        String::from_utf8_lossy(&log.stderr).contains("pretrain_steps = 10"),
        "resolved config is logged"
    );
    let losses = std::fs::read_to_string(out(d, "denoiser.loss.txt")).unwrap();
    assert_eq!(losses.lines().count(), 10);

    ok(motinv(d, &["invert", "--invert-steps", "0"]));
    let m = MotionEmbeddingSet::load(&out(d, "motion.memb")).unwrap();
    assert!(m.is_zero());
    ok(motinv(d, &["invert"]));
    assert_eq!(
        std::fs::read_to_string(out(d, "motion.loss.txt"))
            .unwrap()
            .lines()
            .count(),
        5
    );

    ok(motinv(d, &["generate"]));
    let first = std::fs::read(out(d, "generated.mvid")).unwrap();
    ok(motinv(d, &["generate"]));
    assert_eq!(std::fs::read(out(d, "generated.mvid")).unwrap(), first);

    let report = ok(motinv(d, &["evaluate"]));
    let text = String::from_utf8(report.stdout).unwrap();
    let names: Vec<&str> = text
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(
        names,
        [
            "motion_fidelity",
            "temporal_consistency",
            "frechet_distance",
            "mean_displacement"
        ]
    );
    assert_eq!(std::fs::read_to_string(out(d, "report.txt")).unwrap(), text);

    let inspect = ok(motinv(
        d,
        &["inspect", out(d, "motion.memb").to_str().unwrap()],
    ));
    assert!(String::from_utf8_lossy(&inspect.stdout).contains("module 3"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        motinv(d, &["synth", "--frames", "zero"]).status.code(),
        Some(2)
    );
    assert_eq!(
        motinv(d, &["synth", "--appearances", "9"]).status.code(),
        Some(2)
    );
    // Nothing has been written yet.
    assert_eq!(motinv(d, &["invert"]).status.code(), Some(3));
    ok(motinv(d, &["synth"]));
    assert_eq!(
        motinv(d, &["pretrain", "--pretrain-lr", "1e300"])
            .status
            .code(),
        Some(4)
    );
    assert!(
        !out(d, "denoiser.mden").exists(),
        "failed runs leave no artifact"
    );
    ok(motinv(d, &["pretrain"]));
    // The checkpoint was trained for vocab 2.
    assert_eq!(
        motinv(d, &["generate", "--embeddings", "none", "--vocab", "3"])
            .status
            .code(),
        Some(2)
    );
    ok(motinv(d, &["generate", "--embeddings", "none"]));
    assert_eq!(
        motinv(
            d,
            &[
                "invert",
                "--reference",
                out(d, "corpus/index.txt").to_str().unwrap()
            ]
        )
        .status
        .code(),
        Some(3)
    );
}

#[test]
fn help_enumerates_keys() {
    let o = Command::new(env!("CARGO_BIN_EXE_motinv"))
        .arg("--help")
        .output()
        .unwrap();
    assert!(o.status.success());
    let help = String::from_utf8(o.stdout).unwrap();
    for key in motinv_cli::config::KEYS {
        assert!(help.contains(key.name), "{}", key.name);
    }
}
