use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
workers = 2
meta_iterations = 2

[data]
stage0_episodes = 12
meta_episodes = 8
validation_episodes = 6
test_episodes = 10

[predictor]
encoder = 8
recurrent = 8
head = 8

[stage0_schedule]
total_steps = 40
batch_size = 4
eval_every = 20

[retrain_schedule]
total_steps = 40
batch_size = 4
eval_every = 20

[policy]
hidden = 8
recurrent = 8

[ppo]
total_env_steps = 40
episodes_per_update = 4
minibatch_episodes = 2
epochs = 1
"#;

fn chainid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainid"))
        .args(args)
        .current_dir(cwd)
        .env("CHAINID_RUNS_DIR", cwd.join("runs"))
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_reproducible_and_handles_zero_pushes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&chainid(&["simulate", "--seed", "4", "--out", "a.jsonl"], d));
    ok(&chainid(&["simulate", "--seed", "4", "--out", "b.jsonl"], d));
    let a = fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(d.join("b.jsonl")).unwrap());
    ok(&chainid(&["simulate", "--seed", "5", "--out", "c.jsonl"], d));
    assert_ne!(a, fs::read(d.join("c.jsonl")).unwrap());

    ok(&chainid(&["simulate", "--pushes", "0", "--out", "z.jsonl"], d));
    let text = fs::read_to_string(d.join("z.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains(r#""a_seq":[]"#), "{text}");
    let poses = text.split(r#""q_seq":"#).nth(1).unwrap().split("]]").next().unwrap();
    assert_eq!(poses.matches('[').count(), 2, "exactly one pose: {text}");
}

/// Settle counts from the summary table: rows after the header whose first
/// column is a push number.
fn settle_counts(stdout: &str) -> (Vec<usize>, usize) {
    let header = stdout.lines().find(|l| l.starts_with("push")).unwrap();
    let cap: usize = header.split("settle/").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    let counts = stdout
        .lines()
        .filter_map(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            match cols.first()?.parse::<usize>() {
                Ok(i) if i > 0 => cols.get(3)?.parse().ok(),
                _ => None,
            }
        })
        .collect();
    (counts, cap)
}

#[test]
fn default_pushes_settle_well_before_the_timeout() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..100 {
        let out = ok(&chainid(&["simulate", "--seed", &seed.to_string(), "--out", "t.jsonl"], dir.path()));
        let (counts, cap) = settle_counts(&out);
        assert_eq!(counts.len(), 5, "{out}");
        assert!(counts.iter().all(|&c| c < cap), "seed {seed}: {counts:?} vs {cap}");
    }
}

#[test]
fn rp_stage_writes_checkpoint_metrics_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let out = ok(&chainid(&["train", "--config", s(&cfg), "--stage", "rp"], d));
    let run = d.join(out.lines().next().unwrap().trim_start_matches("run directory "));
    assert!(run.starts_with(d.join("runs")), "{}", run.display());
    for f in ["config.toml", "checkpoints/rp.ckpt", "metrics/predictor_iter0.csv", "datasets/train_iter0.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(run.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
    assert!(manifest.contains(r#""stage":"rp""#));
    let episodes = fs::read_to_string(run.join("datasets/train_iter0.jsonl")).unwrap();
    assert_eq!(episodes.lines().count(), 12);
}

#[test]
fn resuming_after_rp_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    ok(&chainid(&["train", "--config", s(&cfg), "--stage", "rp", "--out", "split"], d));
    ok(&chainid(&["train", "--config", s(&cfg), "--stage", "alternate", "--out", "split"], d));
    ok(&chainid(&["train", "--config", s(&cfg), "--stage", "alternate", "--out", "whole", "--workers", "1"], d));
    let split = fs::read_to_string(d.join("split/metrics/history.csv")).unwrap();
    let whole = fs::read_to_string(d.join("whole/metrics/history.csv")).unwrap();
    assert_eq!(split, whole);
    // One row per meta-iteration after the random-push row.
    let iterations: Vec<&str> = whole.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["0", "1", "2"]);
    let stages: Vec<String> = fs::read_to_string(d.join("split/manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| l.split(r#""stage":""#).nth(1).unwrap().split('"').next().unwrap().to_string())
        .collect();
    assert_eq!(stages, ["rp", "meta1", "meta2"]);
}

#[test]
fn evaluation_is_repeatable_and_refuses_mismatched_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    ok(&chainid(&["train", "--config", s(&cfg), "--stage", "rp+", "--out", "a"], d));
    ok(&chainid(&["evaluate", "a", "--out", "r1"], d));
    let table = ok(&chainid(&["evaluate", "a", "--out", "r2", "--workers", "1"], d));
    for f in ["report.csv", "report.txt"] {
        assert_eq!(fs::read(d.join("r1").join(f)).unwrap(), fs::read(d.join("r2").join(f)).unwrap());
    }
    let names: Vec<&str> = table.lines().skip(2).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["uniform", "RP", "RP+"]);

    let narrow = ok(&chainid(&["evaluate", "a", "--out", "r3", "--test-seed-range", "3..7"], d));
    assert!(narrow.contains("indices 3..7"));
    assert!(narrow.lines().nth(2).unwrap().contains(" 4 "), "{narrow}");

    let other = fs::read_to_string(&cfg).unwrap().replace("[data]", "[data]\ntest_seed = 1");
    fs::write(d.join("other.toml"), other).unwrap();
    ok(&chainid(&["train", "--config", "other.toml", "--stage", "rp", "--out", "b"], d));
    let out = chainid(&["evaluate", "a", "b", "--out", "r4"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_reports_pass_and_detects_broken_friction() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&chainid(&["verify", "--suite", "physics"], dir.path()));
    assert!(out.contains("PASS") && !out.contains("FAIL"), "{out}");
    let broken = chainid(&["verify", "--suite", "physics", "--mutate", "negated-friction"], dir.path());
    assert_eq!(broken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL"));
    let ident = ok(&chainid(&["verify", "--suite", "identifiability"], dir.path()));
    assert!(ident.contains("checks passed"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(chainid(&[], dir.path()).status.code(), Some(2));
    assert_eq!(chainid(&["verify", "--suite", "nonsense"], dir.path()).status.code(), Some(2));
    assert_eq!(chainid(&["train", "--stage", "rp++"], dir.path()).status.code(), Some(2));
    let missing = chainid(&["simulate", "--config", "absent.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn identifiability_table_goes_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&chainid(&["identifiability", "--poses", "2"], dir.path()));
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "q0,q1,q2,q3,link,rank,nullity,a1,a2,score,separability");
    // 2 poses x 18 actions x 2 links.
    assert_eq!(lines.count(), 72);
}
