use std::fs;
use std::path::Path;

use xling::runner::{read_run_metrics, run_pipeline, sweep, ExperimentConfig, RunSpec, Stage};
use xling::Error;

fn tiny(out: &Path, kind: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(&format!(
        r#"
vocab_size = 200
out = "{}"

[corpus]
n_majority = 300
n_eval = 8

[tokenizer]
n_lines = 300

[model]
kind = "{kind}"
layers = 1
model_dim = 16
heads = 2
context = 64

[train]
batch = 4
warmup = 2
steps = 6
eval_every = 3

[eval]
n_prompts = 4
checkpoint_prompts = 2
max_new = 12
subjects_per_symbol = 1
"#,
        out.display()
    ))
    .unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn run0(cfg: &ExperimentConfig) -> RunSpec {
    RunSpec {
        point: cfg.point(),
        data_seed: 0,
        model_seed: 0,
    }
}

#[test]
fn rerun_reuses_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), "transformer");
    let first = run_pipeline(&cfg, run0(&cfg), Stage::Eval).unwrap();
    assert_eq!(first.executed, Stage::ALL.to_vec());
    let second = run_pipeline(&cfg, run0(&cfg), Stage::Eval).unwrap();
    assert!(second.executed.is_empty());
    assert_eq!(second.reused, Stage::ALL.to_vec());
}

#[test]
fn missing_output_reruns_that_stage_and_later() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path(), "ngram");
    let rep = run_pipeline(&cfg, run0(&cfg), Stage::Eval).unwrap();
    fs::remove_file(rep.run_dir.join("tokenizer/tokenizer.txt")).unwrap();
    let again = run_pipeline(&cfg, run0(&cfg), Stage::Eval).unwrap();
    assert_eq!(again.executed, vec![Stage::Tokenizer, Stage::Train, Stage::Eval]);
    assert_eq!(
        again.reused,
        vec![Stage::Ontology, Stage::Grammar, Stage::Lexicon, Stage::Corpus]
    );
}

#[test]
fn changed_setting_invalidates_downstream_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path(), "ngram");
    run_pipeline(&cfg, run0(&cfg), Stage::Eval).unwrap();
    cfg.eval.max_new += 1;
    let again = run_pipeline(&cfg, run0(&cfg), Stage::Eval).unwrap();
    assert_eq!(again.executed, vec![Stage::Eval]);
}

#[test]
fn separate_directories_give_identical_csvs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = tiny(a.path(), "transformer");
    let cb = tiny(b.path(), "transformer");
    let ra = run_pipeline(&ca, run0(&ca), Stage::Eval).unwrap();
    let rb = run_pipeline(&cb, run0(&cb), Stage::Eval).unwrap();
    for f in [
        "corpus/train.txt",
        "tokenizer/tokenizer.txt",
        "tokenizer/tokenizer_metrics.csv",
        "train/trajectory.csv",
        "eval/eval.csv",
        "eval/metrics.csv",
    ] {
        assert_eq!(
            fs::read(ra.run_dir.join(f)).unwrap(),
            fs::read(rb.run_dir.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn stage_errors_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path(), "ngram");
    cfg.vocab_size = 20;
    let e = run_pipeline(&cfg, run0(&cfg), Stage::Eval).unwrap_err();
    match &e {
        Error::Stage { stage, manifest, .. } => {
            assert_eq!(*stage, "tokenizer");
            assert!(manifest.ends_with("tokenizer/stage.toml"));
        }
        other => panic!("expected a stage error, got {other}"),
    }
    assert!(e.to_string().contains("tokenizer"));
}

#[test]
fn sweep_aggregates_over_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path(), "ngram");
    cfg.grid.lambda = vec![0.1, 0.5];
    cfg.data_seeds = vec![0, 1];
    cfg.model_seeds = vec![0];
    let out = sweep(&cfg, 2).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    assert_eq!(out.runs.len(), 4);
    for lambda in [0.1, 0.5] {
        let vals: Vec<f64> = out
            .runs
            .iter()
            .filter(|r| r.run.point.lambda == lambda)
            .map(|r| r.metrics["fertility.B"].unwrap())
            .collect();
        assert_eq!(vals.len(), 2);
        let row = out
            .aggregate
            .iter()
            .find(|a| a.lambda == lambda && a.metric == "fertility.B")
            .unwrap();
        assert_eq!(row.n, 2);
        assert!((row.mean - (vals[0] + vals[1]) / 2.0).abs() < 1e-12);
        let sd = (vals[0] - vals[1]).abs() / 2f64.sqrt();
        assert!((row.stderr - sd / 2f64.sqrt()).abs() < 1e-12);
    }
    let written = read_run_metrics(&out.runs[0].run.dir(&cfg.out).join("eval/metrics.csv")).unwrap();
    assert_eq!(written, out.runs[0].metrics);
    for f in ["runs.csv", "aggregate.csv", "failures.csv", "sweep.toml"] {
        assert!(cfg.out.join(f).is_file(), "{f}");
    }
}
