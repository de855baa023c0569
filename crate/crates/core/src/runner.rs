//! Experiment configuration, cached stage pipelines, sweeps and SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{build_corpus, Corpus, CorpusSpec, Split, Task, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::eval::{
    default_k, emergence_step, evaluate_generations, reachability_suite, Aggregation, EvalReport, GenerationConfig,
    SuiteConfig, DEFAULT_FRONTIER_CAP, EMERGENCE_THRESHOLD,
};
use crate::grammar::Pcsg;
use crate::lexicon::{build_lexicon, language_pair, Language, Lexicon, LexiconConfig};
use crate::lm::{
    load_checkpoint, ngram_fit, save_checkpoint, train, train_example, write_trajectory, NGram, Predictor, TrainConfig,
    TrainExample, Transformer, TransformerConfig,
};
use crate::ontology::{build_ontology, Ontology, OntologyConfig};
use crate::rng::derive_seed;
use crate::tokenizer::{
    bridge_strength, continuation_rate, fertility, sample_tokenizer_corpus, train_bpe, vocab_overlap,
    write_metric_rows, BpeTokenizer, MetricRow, Regime, BRIDGE_METRIC,
};

/// Environment variable holding the sweep worker count.
pub const WORKERS_ENV: &str = "XLING_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ontology,
    Grammar,
    Lexicon,
    Corpus,
    Tokenizer,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ontology,
        Stage::Grammar,
        Stage::Lexicon,
        Stage::Corpus,
        Stage::Tokenizer,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ontology => "ontology",
            Stage::Grammar => "grammar",
            Stage::Lexicon => "lexicon",
            Stage::Corpus => "corpus",
            Stage::Tokenizer => "tokenizer",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    /// Files a completed stage leaves in its directory.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ontology => &["ontology.toml"],
            Stage::Grammar => &["grammar.txt"],
            Stage::Lexicon => &["lexicon.toml"],
            Stage::Corpus => &[
                "train.txt",
                "eval_A.txt",
                "eval_B_seen.txt",
                "eval_B_masked.txt",
                "manifest.toml",
            ],
            Stage::Tokenizer => &["tokenizer.txt", "tokenizer_metrics.csv"],
            Stage::Train => &["model.toml", "trajectory.csv"],
            Stage::Eval => &["eval.csv", "summary.txt", "metrics.csv"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Transformer,
    Ngram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSettings {
    pub n_majority: usize,
    pub mask_fraction: f64,
    pub n_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSettings {
    pub n_lines: usize,
    pub initial_alphabet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    /// 0 selects the SwiGLU default width.
    pub ff_dim: usize,
    pub context: usize,
    pub final_norm: bool,
    pub init_std: f64,
    pub ngram_order: usize,
    pub ngram_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub eval_every: usize,
    pub t1_answer_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Generation prompts per split for the final report.
    pub n_prompts: usize,
    /// Generation prompts per split at training checkpoints.
    pub checkpoint_prompts: usize,
    pub max_new: usize,
    pub subjects_per_symbol: usize,
    pub aggregation: Aggregation,
    pub frontier_cap: usize,
    /// Overrides the tenth-of-vocabulary default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub threshold: f64,
}

/// Lattice axes; an empty axis uses the scalar value of the config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    pub d: Vec<f64>,
    pub lambda: Vec<f64>,
    pub vocab_size: Vec<usize>,
    pub regime: Vec<Regime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub d: f64,
    pub lambda: f64,
    pub vocab_size: usize,
    pub regime: Regime,
    pub data_seeds: Vec<u64>,
    pub model_seeds: Vec<u64>,
    pub tasks: Vec<Task>,
    pub out: PathBuf,
    pub ontology: OntologyConfig,
    pub lexicon: LexiconConfig,
    pub corpus: CorpusSettings,
    pub tokenizer: TokenizerSettings,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub grid: Grid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

/// One lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub d: f64,
    pub lambda: f64,
    pub vocab_size: usize,
    pub regime: Regime,
}

impl Point {
    pub fn name(&self) -> String {
        format!("d{}_l{}_v{}_{}", self.d, self.lambda, self.vocab_size, self.regime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub point: Point,
    pub data_seed: u64,
    pub model_seed: u64,
}

impl RunSpec {
    pub fn dir(&self, out: &Path) -> PathBuf {
        out.join(self.point.name())
            .join(format!("data{}-model{}", self.data_seed, self.model_seed))
    }
}

fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    pub fn profile(p: Profile) -> Self {
        let tasks = Task::ALL.to_vec();
        match p {
            Profile::Desk => Self {
                profile: p,
                d: 0.25,
                lambda: 0.25,
                vocab_size: 512,
                regime: Regime::Vanilla,
                data_seeds: vec![0, 1, 2],
                model_seeds: vec![0, 1, 2],
                tasks,
                out: PathBuf::from("runs"),
                ontology: OntologyConfig::default(),
                lexicon: LexiconConfig::default(),
                corpus: CorpusSettings {
                    n_majority: 10_000,
                    mask_fraction: 0.25,
                    n_eval: 200,
                },
                tokenizer: TokenizerSettings {
                    n_lines: 10_000,
                    initial_alphabet: ('a'..='z').collect(),
                },
                model: ModelSettings {
                    kind: ModelKind::Transformer,
                    layers: 2,
                    model_dim: 64,
                    heads: 2,
                    ff_dim: 0,
                    context: 256,
                    final_norm: true,
                    init_std: 0.02,
                    ngram_order: 3,
                    ngram_k: 0.01,
                },
                train: TrainSettings {
                    batch: 16,
                    lr: 2e-3,
                    warmup: 100,
                    steps: 2000,
                    beta1: 0.9,
                    beta2: 0.95,
                    eps: 1e-10,
                    weight_decay: 0.01,
                    eval_every: 100,
                    t1_answer_only: true,
                },
                eval: EvalSettings {
                    n_prompts: 200,
                    checkpoint_prompts: 64,
                    max_new: 64,
                    subjects_per_symbol: 4,
                    aggregation: Aggregation::AnySubject,
                    frontier_cap: DEFAULT_FRONTIER_CAP,
                    k: None,
                    threshold: EMERGENCE_THRESHOLD,
                },
                grid: Grid::default(),
            },
            Profile::Paper => {
                let t = TransformerConfig::default();
                let tc = TrainConfig::default();
                let mut c = Self::profile(Profile::Desk);
                c.profile = p;
                c.vocab_size = 2048;
                c.corpus = CorpusSettings {
                    n_majority: 100_000,
                    mask_fraction: 0.25,
                    n_eval: 1000,
                };
                c.tokenizer.n_lines = 50_000;
                c.model = ModelSettings {
                    layers: t.layers,
                    model_dim: t.model_dim,
                    heads: t.heads,
                    ff_dim: t.ff_dim,
                    context: t.context,
                    final_norm: t.final_norm,
                    init_std: t.init_std,
                    ..c.model
                };
                c.train = TrainSettings {
                    batch: tc.batch,
                    lr: tc.lr,
                    warmup: tc.warmup,
                    steps: tc.steps,
                    beta1: tc.beta1,
                    beta2: tc.beta2,
                    eps: tc.eps,
                    weight_decay: tc.weight_decay,
                    eval_every: tc.eval_every,
                    t1_answer_only: tc.t1_answer_only,
                };
                c.eval.n_prompts = 1000;
                c.eval.checkpoint_prompts = 200;
                c
            }
        }
    }

    /// Parses a config document; keys it omits come from its `profile`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| Error::parse("experiment config", e.to_string());
        let over: toml::Value = toml::from_str(text).map_err(|e| err(&e))?;
        let profile = match over.get("profile") {
            None => Profile::Desk,
            Some(v) => v.clone().try_into().map_err(|e| err(&e))?,
        };
        let mut base = toml::Value::try_from(Self::profile(profile)).map_err(|e| err(&e))?;
        merge_toml(&mut base, over);
        let cfg: Self = base.try_into().map_err(|e| err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_seeds.is_empty() || self.model_seeds.is_empty() {
            return Err(Error::config("data_seeds", "seed lists must be nonempty"));
        }
        if !(0.0..=1.0).contains(&self.d) {
            return Err(Error::config("d", "must lie in [0, 1]"));
        }
        self.ontology.validate()?;
        self.lexicon.validate()?;
        self.corpus_spec(0).validate()?;
        if self.model.kind == ModelKind::Transformer {
            self.transformer_config().validate()?;
            self.train_config(0).validate()?;
        }
        if self.eval.n_prompts == 0 || self.eval.subjects_per_symbol == 0 {
            return Err(Error::config("eval", "prompt counts must be positive"));
        }
        Ok(())
    }

    pub fn point(&self) -> Point {
        Point {
            d: self.d,
            lambda: self.lambda,
            vocab_size: self.vocab_size,
            regime: self.regime,
        }
    }

    /// Config with the lattice point applied.
    pub fn at(&self, p: Point) -> Self {
        Self {
            d: p.d,
            lambda: p.lambda,
            vocab_size: p.vocab_size,
            regime: p.regime,
            grid: Grid::default(),
            ..self.clone()
        }
    }

    pub fn points(&self) -> Vec<Point> {
        fn axis<T: Copy>(v: &[T], scalar: T) -> Vec<T> {
            if v.is_empty() {
                vec![scalar]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for d in axis(&self.grid.d, self.d) {
            for lambda in axis(&self.grid.lambda, self.lambda) {
                for vocab_size in axis(&self.grid.vocab_size, self.vocab_size) {
                    for regime in axis(&self.grid.regime, self.regime) {
                        out.push(Point {
                            d,
                            lambda,
                            vocab_size,
                            regime,
                        });
                    }
                }
            }
        }
        out
    }

    /// Every (point, data seed, model seed) combination.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for point in self.points() {
            for &data_seed in &self.data_seeds {
                for &model_seed in &self.model_seeds {
                    out.push(RunSpec {
                        point,
                        data_seed,
                        model_seed,
                    });
                }
            }
        }
        out
    }

    pub fn corpus_spec(&self, data_seed: u64) -> CorpusSpec {
        CorpusSpec {
            lambda: self.lambda,
            n_majority: self.corpus.n_majority,
            mask_fraction: self.corpus.mask_fraction,
            tasks: self.tasks.clone(),
            n_eval: self.corpus.n_eval,
            seed: data_seed,
        }
    }

    pub fn transformer_config(&self) -> TransformerConfig {
        let m = &self.model;
        TransformerConfig {
            vocab_size: self.vocab_size,
            layers: m.layers,
            model_dim: m.model_dim,
            heads: m.heads,
            ff_dim: m.ff_dim,
            context: m.context,
            final_norm: m.final_norm,
            init_std: m.init_std,
            ..TransformerConfig::default()
        }
    }

    pub fn train_config(&self, model_seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch: t.batch,
            lr: t.lr,
            warmup: t.warmup,
            steps: t.steps,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            eval_every: t.eval_every,
            t1_answer_only: t.t1_answer_only,
            seed: model_seed,
        }
    }

    pub fn suite_config(&self, seed: u64) -> SuiteConfig {
        SuiteConfig {
            k: self.eval.k,
            subjects_per_symbol: self.eval.subjects_per_symbol,
            aggregation: self.eval.aggregation,
            frontier_cap: self.eval.frontier_cap,
            seed,
        }
    }
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn toml_string<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("serializable")
}

#[derive(Debug, Serialize, Deserialize)]
struct StageManifest {
    stage: Stage,
    hash: String,
    outputs: Vec<String>,
}

/// Stages executed and reused by one `run_pipeline` call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineReport {
    pub run_dir: PathBuf,
    pub executed: Vec<Stage>,
    pub reused: Vec<Stage>,
}

struct Pipeline {
    dir: PathBuf,
    prev_hash: String,
    dirty: bool,
    report: PipelineReport,
}

impl Pipeline {
    fn stage_dir(&self, s: Stage) -> PathBuf {
        self.dir.join(s.name())
    }

    /// Runs `build` unless the stage's manifest matches `inputs` and no earlier
    /// stage was recomputed in this invocation.
    fn stage(&mut self, s: Stage, inputs: String, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let dir = self.stage_dir(s);
        let manifest_path = dir.join("stage.toml");
        let hash = sha256_hex(&format!("{}\n{}\n{}", s.name(), self.prev_hash, inputs));
        let fresh = !self.dirty
            && fs::read_to_string(&manifest_path)
                .ok()
                .and_then(|t| toml::from_str::<StageManifest>(&t).ok())
                .is_some_and(|m| m.hash == hash && m.outputs.iter().all(|f| dir.join(f).is_file()));
        self.prev_hash = hash.clone();
        if fresh {
            self.report.reused.push(s);
            return Ok(());
        }
        self.dirty = true;
        let wrap = |e: Error| Error::Stage {
            stage: s.name(),
            manifest: manifest_path.clone(),
            source: Box::new(e),
        };
        let _ = fs::remove_file(&manifest_path);
        fs::create_dir_all(&dir).map_err(|e| wrap(e.into()))?;
        fs::write(dir.join("config.toml"), &inputs).map_err(|e| wrap(e.into()))?;
        build(&dir).map_err(wrap)?;
        let m = StageManifest {
            stage: s,
            hash,
            outputs: s.outputs().iter().map(|f| f.to_string()).collect(),
        };
        fs::write(&manifest_path, toml_string(&m)).map_err(|e| wrap(e.into()))?;
        log::info!("{}: stage {} done", self.dir.display(), s.name());
        self.report.executed.push(s);
        Ok(())
    }
}

/// Tokenized training lines; T1 lines optionally carry loss only after the
/// separator. Lines longer than `context` are truncated.
pub fn training_examples(
    t: &BpeTokenizer,
    corpus: &Corpus,
    context: usize,
    t1_answer_only: bool,
) -> Result<Vec<TrainExample>> {
    let sep = t
        .token_id("<sep>")
        .ok_or_else(|| Error::Tokenizer("vocabulary lacks <sep>".into()))?;
    corpus
        .train_lines
        .iter()
        .map(|l| {
            let mut ids = t.encode(&l.text)?;
            ids.truncate(context);
            let start = match l.task {
                Task::T1 if t1_answer_only => ids.iter().position(|&x| x == sep).map_or(ids.len(), |p| p + 1),
                _ => 1,
            };
            Ok(train_example(ids, start))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelRecord {
    kind: ModelKind,
    seed: u64,
    steps: usize,
    n_params: usize,
}

fn tokenizer_seed(run: &RunSpec) -> u64 {
    derive_seed(run.data_seed, "runner.tokenizer", &[run.model_seed])
}

fn split_lines<'a>(corpus: &'a Corpus, lang: Language) -> impl Iterator<Item = &'a str> {
    corpus
        .train_lines
        .iter()
        .filter(move |l| l.lang == lang)
        .map(|l| l.text.as_str())
}

fn tokenizer_metrics(cfg: &ExperimentConfig, seed: u64, t: &BpeTokenizer, corpus: &Corpus, lex: &Lexicon) -> Result<Vec<MetricRow>> {
    let row = |metric: &str, language: &str, value: f64| MetricRow {
        metric: metric.into(),
        language: language.into(),
        lambda: cfg.lambda,
        d: cfg.d,
        vocab_size: cfg.vocab_size,
        regime: cfg.regime,
        seed,
        value,
    };
    let mut rows = Vec::new();
    for lang in Language::BOTH {
        rows.push(row("fertility", &lang.to_string(), fertility(t, split_lines(corpus, lang))?));
        rows.push(row("continuation_rate", &lang.to_string(), continuation_rate(t, split_lines(corpus, lang))?));
    }
    rows.push(row(
        "vocab_overlap",
        "AB",
        vocab_overlap(t, split_lines(corpus, Language::A), split_lines(corpus, Language::B))?,
    ));
    rows.push(row(
        BRIDGE_METRIC,
        "B",
        bridge_strength(t, lex, &corpus.masked_symbols, corpus.train_texts())?,
    ));
    Ok(rows)
}

/// Trajectory CSV as (column name -> [(step, value)]).
pub fn read_trajectory(path: &Path) -> Result<BTreeMap<String, Vec<(usize, f64)>>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut out: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let step: usize = rec[0]
            .parse()
            .map_err(|_| Error::parse("trajectory", format!("bad step `{}`", &rec[0])))?;
        for (name, v) in header.iter().zip(rec.iter()).skip(1) {
            if let Ok(v) = v.parse::<f64>() {
                out.entry(name.clone()).or_default().push((step, v));
            }
        }
    }
    Ok(out)
}

/// Metric name -> value (absent when undefined).
pub type RunMetrics = BTreeMap<String, Option<f64>>;

pub fn write_run_metrics(path: &Path, m: &RunMetrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in m {
        w.write_record([k.as_str(), &v.map(|x| x.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_metrics(path: &Path) -> Result<RunMetrics> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = RunMetrics::new();
    for rec in r.records() {
        let rec = rec?;
        let v = if rec[1].is_empty() {
            None
        } else {
            Some(rec[1].parse().map_err(|_| Error::parse("metrics.csv", format!("bad value `{}`", &rec[1])))?)
        };
        out.insert(rec[0].to_string(), v);
    }
    Ok(out)
}

const GEN_METRICS: [&str; 3] = ["validity", "grammaticality", "type_satisfaction"];

fn checkpoint_metrics(
    model: &(impl Predictor + ?Sized),
    t: &BpeTokenizer,
    lex: &Lexicon,
    g: &Pcsg,
    o: &Ontology,
    corpus: &Corpus,
    gen: &GenerationConfig,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for split in Split::ALL {
        let s = evaluate_generations(model, t, lex, g, o, &corpus.eval_splits[&split], split.language(), gen)?;
        out.push((format!("{split}.validity"), s.validity));
        out.push((format!("{split}.grammaticality"), s.grammaticality));
        out.push((format!("{split}.type_satisfaction"), s.type_satisfaction));
    }
    Ok(out)
}

enum Model {
    Transformer(Box<Transformer<f32>>),
    Ngram(NGram),
}

/// Runs (or resumes) every stage through `until` for one run.
pub fn run_pipeline(cfg: &ExperimentConfig, run: RunSpec, until: Stage) -> Result<PipelineReport> {
    let cfg = cfg.at(run.point);
    cfg.validate()?;
    let dir = run.dir(&cfg.out);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut p = Pipeline {
        dir: dir.clone(),
        prev_hash: String::new(),
        dirty: false,
        report: PipelineReport {
            run_dir: dir,
            ..PipelineReport::default()
        },
    };
    let (ds, ms) = (run.data_seed, run.model_seed);

    p.stage(
        Stage::Ontology,
        format!("seed = {ds}\n[ontology]\n{}", toml_string(&cfg.ontology)),
        |dir| {
            let o = build_ontology(&cfg.ontology, ds)?;
            fs::write(dir.join("ontology.toml"), o.to_manifest())?;
            Ok(())
        },
    )?;
    if until == Stage::Ontology {
        return Ok(p.report);
    }

    let grammar_text = Pcsg::default().to_text();
    p.stage(Stage::Grammar, grammar_text.clone(), |dir| {
        fs::write(dir.join("grammar.txt"), &grammar_text)?;
        Ok(())
    })?;
    if until == Stage::Grammar {
        return Ok(p.report);
    }

    p.stage(
        Stage::Lexicon,
        format!("seed = {ds}\nd = {}\n[lexicon]\n{}", cfg.d, toml_string(&cfg.lexicon)),
        |dir| {
            let o = load_ontology(dir.parent().expect("stage dirs live in a run dir"))?;
            let pair = language_pair(&cfg.lexicon, cfg.d, ds)?;
            let lex = build_lexicon(&o.lexical_symbols(), &pair, cfg.d, ds, cfg.lexicon.collision_budget)?;
            fs::write(dir.join("lexicon.toml"), lex.to_manifest())?;
            Ok(())
        },
    )?;
    if until == Stage::Lexicon {
        return Ok(p.report);
    }

    let spec = cfg.corpus_spec(ds);
    let run_dir = p.dir.clone();
    p.stage(
        Stage::Corpus,
        format!("format_version = {FORMAT_VERSION}\n[corpus]\n{}", toml_string(&spec)),
        |dir| {
            let (o, g, lex) = load_world(&run_dir)?;
            build_corpus(&spec, &g, &o, &lex)?.write(dir, &lex)
        },
    )?;
    if until == Stage::Corpus {
        return Ok(p.report);
    }

    let tseed = tokenizer_seed(&run);
    let tok_inputs = format!(
        "seed = {tseed}\nvocab_size = {}\nregime = \"{}\"\n[tokenizer]\n{}",
        cfg.vocab_size,
        cfg.regime,
        toml_string(&cfg.tokenizer)
    );
    p.stage(Stage::Tokenizer, tok_inputs, |dir| {
        let lex = load_lexicon(&run_dir)?;
        let corpus = Corpus::read(&run_dir.join("corpus"), &lex)?;
        let lines = sample_tokenizer_corpus(&corpus.train_lines, cfg.regime, cfg.tokenizer.n_lines, tseed)?;
        let t = train_bpe(&lines, cfg.vocab_size, cfg.regime, &cfg.tokenizer.initial_alphabet, tseed)?;
        t.save(&dir.join("tokenizer.txt"))?;
        write_metric_rows(&dir.join("tokenizer_metrics.csv"), &tokenizer_metrics(&cfg, tseed, &t, &corpus, &lex)?)?;
        Ok(())
    })?;
    if until == Stage::Tokenizer {
        return Ok(p.report);
    }

    let gen_ckpt = GenerationConfig {
        n_prompts: cfg.eval.checkpoint_prompts,
        max_new: cfg.eval.max_new,
        seed: ms,
    };
    let train_inputs = match cfg.model.kind {
        ModelKind::Transformer => format!(
            "kind = \"transformer\"\nseed = {ms}\n[model]\n{}\n[train]\n{}\n[checkpoint_eval]\n{}",
            toml_string(&cfg.transformer_config()),
            toml_string(&cfg.train_config(ms)),
            toml_string(&gen_ckpt)
        ),
        ModelKind::Ngram => format!(
            "kind = \"ngram\"\norder = {}\nk = {}\n",
            cfg.model.ngram_order, cfg.model.ngram_k
        ),
    };
    p.stage(Stage::Train, train_inputs, |dir| {
        let (o, g, lex) = load_world(&run_dir)?;
        let corpus = Corpus::read(&run_dir.join("corpus"), &lex)?;
        let t = BpeTokenizer::load(&run_dir.join("tokenizer/tokenizer.txt"))?;
        let record = match cfg.model.kind {
            ModelKind::Transformer => {
                let tcfg = cfg.transformer_config();
                let data = training_examples(&t, &corpus, tcfg.context, cfg.train.t1_answer_only)?;
                let mut model = Transformer::<f32>::new(tcfg, ms)?;
                let tc = cfg.train_config(ms);
                let rows = train(&mut model, &data, &tc, |_, m| {
                    checkpoint_metrics(m, &t, &lex, &g, &o, &corpus, &gen_ckpt)
                })?;
                write_trajectory(&dir.join("trajectory.csv"), &rows)?;
                save_checkpoint(&dir.join("model.ckpt"), &model, tc.steps)?;
                ModelRecord {
                    kind: ModelKind::Transformer,
                    seed: ms,
                    steps: tc.steps,
                    n_params: model.n_params(),
                }
            }
            ModelKind::Ngram => {
                write_trajectory(&dir.join("trajectory.csv"), &[])?;
                ModelRecord {
                    kind: ModelKind::Ngram,
                    seed: ms,
                    steps: 0,
                    n_params: 0,
                }
            }
        };
        fs::write(dir.join("model.toml"), toml_string(&record))?;
        Ok(())
    })?;
    if until == Stage::Train {
        return Ok(p.report);
    }

    let eval_inputs = format!("seed = {ms}\n[eval]\n{}", toml_string(&cfg.eval));
    p.stage(Stage::Eval, eval_inputs, |dir| {
        let (o, g, lex) = load_world(&run_dir)?;
        let corpus = Corpus::read(&run_dir.join("corpus"), &lex)?;
        let t = BpeTokenizer::load(&run_dir.join("tokenizer/tokenizer.txt"))?;
        let model = match cfg.model.kind {
            ModelKind::Transformer => {
                Model::Transformer(Box::new(load_checkpoint::<f32>(&run_dir.join("train/model.ckpt"))?.0))
            }
            ModelKind::Ngram => {
                let data = training_examples(&t, &corpus, usize::MAX, false)?;
                let lines: Vec<Vec<u32>> = data.into_iter().map(|e| e.tokens).collect();
                Model::Ngram(ngram_fit(&lines, cfg.model.ngram_order, cfg.model.ngram_k, t.vocab_size())?)
            }
        };
        let model: &dyn Predictor = match &model {
            Model::Transformer(m) => m.as_ref(),
            Model::Ngram(m) => m,
        };
        evaluate_run(&cfg, ms, model, &t, &lex, &g, &o, &corpus, &run_dir, dir)
    })?;
    Ok(p.report)
}

fn load_ontology(run_dir: &Path) -> Result<Ontology> {
    Ontology::from_manifest(&fs::read_to_string(run_dir.join("ontology/ontology.toml"))?)
}

fn load_lexicon(run_dir: &Path) -> Result<Lexicon> {
    Lexicon::from_manifest(&fs::read_to_string(run_dir.join("lexicon/lexicon.toml"))?)
}

fn load_world(run_dir: &Path) -> Result<(Ontology, Pcsg, Lexicon)> {
    let g = Pcsg::parse(&fs::read_to_string(run_dir.join("grammar/grammar.txt"))?)?;
    Ok((load_ontology(run_dir)?, g, load_lexicon(run_dir)?))
}

#[allow(clippy::too_many_arguments)]
fn evaluate_run(
    cfg: &ExperimentConfig,
    seed: u64,
    model: &dyn Predictor,
    t: &BpeTokenizer,
    lex: &Lexicon,
    g: &Pcsg,
    o: &Ontology,
    corpus: &Corpus,
    run_dir: &Path,
    dir: &Path,
) -> Result<()> {
    let gen = GenerationConfig {
        n_prompts: cfg.eval.n_prompts,
        max_new: cfg.eval.max_new,
        seed,
    };
    let mut scores = BTreeMap::new();
    for split in Split::ALL {
        let s = evaluate_generations(model, t, lex, g, o, &corpus.eval_splits[&split], split.language(), &gen)?;
        scores.insert(split, s);
    }
    let suite = cfg.suite_config(seed);
    let mut reach = BTreeMap::new();
    for (split, lang) in [(Split::A, Language::A), (Split::BMasked, Language::B)] {
        reach.insert(
            split,
            reachability_suite(model, t, lex, o, &corpus.masked_symbols, lang, &suite)?,
        );
    }
    let k = cfg.eval.k.unwrap_or_else(|| default_k(t.vocab_size()));
    let report = EvalReport::new(&scores, reach, k);
    report.write_csv(&dir.join("eval.csv"))?;
    report.write_summary(&dir.join("summary.txt"))?;

    let mut m = RunMetrics::new();
    for r in &report.rows {
        m.insert(format!("{}.validity", r.split), Some(r.validity));
        m.insert(format!("{}.grammaticality", r.split), Some(r.grammaticality));
        m.insert(format!("{}.type_satisfaction", r.split), Some(r.type_satisfaction));
        if let Some(x) = r.reachability {
            m.insert(format!("{}.reachability", r.split), Some(x));
        }
    }
    for (split, s) in &report.reach {
        m.insert(format!("{split}.reach_cap_hits"), Some(s.cap_hits as f64));
        m.insert(format!("{split}.reach_skipped"), Some(s.n_skipped as f64));
    }
    m.insert("k".into(), Some(k as f64));
    for row in crate::tokenizer::read_metric_rows(&run_dir.join("tokenizer/tokenizer_metrics.csv"))? {
        m.insert(format!("{}.{}", row.metric, row.language), Some(row.value));
    }
    let traj = read_trajectory(&run_dir.join("train/trajectory.csv"))?;
    if cfg.model.kind == ModelKind::Transformer {
        for split in Split::ALL {
            for metric in GEN_METRICS {
                let key = format!("{split}.{metric}");
                let series = traj.get(&key).map(Vec::as_slice).unwrap_or(&[]);
                let step = emergence_step(series, cfg.eval.threshold)?;
                m.insert(format!("emergence.{key}"), step.map(|s| s as f64));
            }
        }
        if let Some(loss) = traj.get("loss").and_then(|l| l.last()) {
            m.insert("final_loss".into(), Some(loss.1));
        }
    }
    write_run_metrics(&dir.join("metrics.csv"), &m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: RunSpec,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub d: f64,
    pub lambda: f64,
    pub vocab_size: usize,
    pub regime: Regime,
    pub data_seed: u64,
    pub model_seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub d: f64,
    pub lambda: f64,
    pub vocab_size: usize,
    pub regime: Regime,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Standard error of the mean; 0 for a single run.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<(RunSpec, String)>,
    pub aggregate: Vec<AggregateRow>,
}

/// Worker count from the environment, defaulting to the available cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Mean and standard error per (point, metric); undefined values are skipped.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String), (RunRow, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let p = Point {
            d: r.d,
            lambda: r.lambda,
            vocab_size: r.vocab_size,
            regime: r.regime,
        };
        groups
            .entry((p.name(), r.metric.clone()))
            .or_insert_with(|| (r.clone(), Vec::new()))
            .1
            .push(r.value);
    }
    groups
        .into_values()
        .map(|(r, xs)| {
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                d: r.d,
                lambda: r.lambda,
                vocab_size: r.vocab_size,
                regime: r.regime,
                metric: r.metric,
                n,
                mean,
                stderr,
            }
        })
        .collect()
}

fn run_rows(records: &[RunRecord]) -> Vec<RunRow> {
    let mut rows = Vec::new();
    for rec in records {
        for (metric, v) in &rec.metrics {
            if let Some(value) = *v {
                rows.push(RunRow {
                    d: rec.run.point.d,
                    lambda: rec.run.point.lambda,
                    vocab_size: rec.run.point.vocab_size,
                    regime: rec.run.point.regime,
                    data_seed: rec.run.data_seed,
                    model_seed: rec.run.model_seed,
                    metric: metric.clone(),
                    value,
                });
            }
        }
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the lattice on `workers` threads and writes `runs.csv`,
/// `aggregate.csv` and `failures.csv` under the output directory.
pub fn sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("sweep.toml"), cfg.to_toml())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let results: Vec<(RunSpec, Result<RunMetrics>)> = pool.install(|| {
        cfg.runs()
            .into_par_iter()
            .map(|run| {
                let r = run_pipeline(cfg, run, Stage::Eval)
                    .and_then(|rep| read_run_metrics(&rep.run_dir.join("eval/metrics.csv")));
                (run, r)
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (run, r) in results {
        match r {
            Ok(metrics) => runs.push(RunRecord { run, metrics }),
            Err(e) => {
                log::warn!("run {} failed: {e}", run.dir(&cfg.out).display());
                failures.push((run, e.to_string()));
            }
        }
    }
    let rows = run_rows(&runs);
    let agg = aggregate(&rows);
    write_rows(&cfg.out.join("runs.csv"), &rows)?;
    write_rows(&cfg.out.join("aggregate.csv"), &agg)?;
    let mut w = csv::Writer::from_path(cfg.out.join("failures.csv"))?;
    w.write_record(["run", "error"])?;
    for (run, e) in &failures {
        w.write_record([run.dir(Path::new("")).display().to_string(), e.clone()])?;
    }
    w.flush()?;
    Ok(SweepOutcome {
        runs,
        failures,
        aggregate: agg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Line,
    Bar,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(PlotKind::Line),
            "bar" => Ok(PlotKind::Bar),
            _ => Err(Error::Usage(format!("unknown plot kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub x: String,
    pub y: String,
    /// Column whose values split the data into series.
    pub group: Option<String>,
    /// `(column, value)` equality filters.
    pub filter: Vec<(String, String)>,
    pub title: String,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const M: (f64, f64, f64, f64) = (60.0, 20.0, 30.0, 50.0); // left, right, top, bottom

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Series -> x label -> y values, with x labels in first-seen order.
type Series = BTreeMap<String, BTreeMap<usize, Vec<f64>>>;

/// Renders a CSV as an SVG chart: per x the mean is drawn, with a band (line)
/// or whisker (bar) spanning the min and max over seeds.
pub fn plot_csv(csv_text: &str, spec: &PlotSpec) -> Result<String> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect::<Vec<_>>());
    }
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Usage(format!("unknown column `{name}`")))
    };
    let mut xs_labels: Vec<String> = Vec::new();
    let mut series: Series = BTreeMap::new();
    if !rows.is_empty() {
        let (xi, yi) = (col(&spec.x)?, col(&spec.y)?);
        let gi = spec.group.as_deref().map(col).transpose()?;
        let filters = spec
            .filter
            .iter()
            .map(|(c, v)| Ok((col(c)?, v.as_str())))
            .collect::<Result<Vec<_>>>()?;
        for row in rows.iter().filter(|row| filters.iter().all(|(c, v)| row[*c] == *v)) {
            let Ok(y) = row[yi].parse::<f64>() else { continue };
            let xl = row[xi].clone();
            let xpos = match xs_labels.iter().position(|l| *l == xl) {
                Some(i) => i,
                None => {
                    xs_labels.push(xl);
                    xs_labels.len() - 1
                }
            };
            let g = gi.map(|g| row[g].clone()).unwrap_or_default();
            series.entry(g).or_default().entry(xpos).or_default().push(y);
        }
    }
    // numeric x axes are placed by value, others by first appearance
    let numeric: Option<Vec<f64>> = xs_labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    let xval = |i: usize| numeric.as_ref().map_or(i as f64, |v| v[i]);
    let all_y: Vec<f64> = series.values().flat_map(|s| s.values().flatten().copied()).collect();
    let (mut y0, mut y1) = all_y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if all_y.is_empty() {
        (y0, y1) = (0.0, 1.0);
    }
    if spec.kind == PlotKind::Bar {
        y0 = y0.min(0.0);
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let xs: Vec<f64> = (0..xs_labels.len()).map(xval).collect();
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if xs.is_empty() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let (pw, ph) = (W - M.0 - M.1, H - M.2 - M.3);
    let px = |x: f64| M.0 + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| M.2 + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, esc(&spec.title)).unwrap();
    writeln!(
        s,
        r#"<path d="M{:.1} {:.1} V{:.1} H{:.1}" stroke="black" fill="none"/>"#,
        M.0,
        M.2,
        M.2 + ph,
        M.0 + pw
    )
    .unwrap();
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            M.0 - 4.0,
            py(y) + 4.0,
            fmt_tick(y)
        )
        .unwrap();
    }
    for (i, l) in xs_labels.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xval(i)),
            M.2 + ph + 16.0,
            esc(l)
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, M.0 + pw / 2.0, H - 10.0, esc(&spec.x)).unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        M.2 + ph / 2.0,
        M.2 + ph / 2.0,
        esc(&spec.y)
    )
    .unwrap();

    let n_series = series.len().max(1) as f64;
    let slot = if xs.len() > 1 {
        pw / (xs.len() as f64) * 0.8
    } else {
        pw * 0.3
    };
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut pts: Vec<(f64, f64, f64, f64)> = pts
            .iter()
            .map(|(&i, ys)| {
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (xval(i), mean, lo, hi)
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        match spec.kind {
            PlotKind::Line => {
                let upper: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.3))).collect();
                let lower: Vec<String> = pts.iter().rev().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.2))).collect();
                writeln!(
                    s,
                    r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    upper.join(" "),
                    lower.join(" ")
                )
                .unwrap();
                let line: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.1))).collect();
                writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" ")).unwrap();
                for p in &pts {
                    writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, px(p.0), py(p.1)).unwrap();
                }
            }
            PlotKind::Bar => {
                let bw = slot / n_series;
                for p in &pts {
                    let left = px(p.0) - slot / 2.0 + bw * si as f64;
                    let top = py(p.1.max(0.0));
                    let base = py(p.1.min(0.0));
                    writeln!(
                        s,
                        r#"<rect x="{left:.1}" y="{top:.1}" width="{bw:.1}" height="{:.1}" fill="{color}"/>"#,
                        base - top
                    )
                    .unwrap();
                    writeln!(
                        s,
                        r#"<line x1="{0:.1}" x2="{0:.1}" y1="{1:.1}" y2="{2:.1}" stroke="black"/>"#,
                        left + bw / 2.0,
                        py(p.2),
                        py(p.3)
                    )
                    .unwrap();
                }
            }
        }
        if !name.is_empty() {
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
                M.0 + pw - 100.0,
                M.2 + 14.0 * (si + 1) as f64,
                esc(name)
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn fmt_tick(y: f64) -> String {
    let t = format!("{y:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

pub fn plot(csv_path: &Path, spec: &PlotSpec, out: &Path) -> Result<()> {
    let text = fs::read_to_string(csv_path)?;
    fs::write(out, plot_csv(&text, spec)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_and_overrides() {
        let desk = ExperimentConfig::profile(Profile::Desk);
        assert_eq!((desk.vocab_size, desk.train.steps, desk.corpus.n_majority), (512, 2000, 10_000));
        let c = ExperimentConfig::from_toml("lambda = 0.1\n[train]\nsteps = 10\nwarmup = 2\n").unwrap();
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.batch, desk.train.batch);
        let p = ExperimentConfig::from_toml("profile = \"paper\"\n").unwrap();
        assert_eq!(p.vocab_size, 2048);
        assert_eq!(p.model.model_dim, 256);
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("lambda = 0.9\n").is_err());
        let round = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn lattice_cross_product() {
        let mut c = ExperimentConfig::default();
        c.grid.lambda = vec![0.1, 0.5];
        c.grid.regime = vec![Regime::Vanilla, Regime::Balanced];
        assert_eq!(c.points().len(), 4);
        assert_eq!(c.runs().len(), 36);
        let names: std::collections::BTreeSet<PathBuf> = c.runs().iter().map(|r| r.dir(Path::new("o"))).collect();
        assert_eq!(names.len(), 36);
    }

    #[test]
    fn aggregate_mean_and_stderr() {
        let row = |seed, value| RunRow {
            d: 0.25,
            lambda: 0.1,
            vocab_size: 256,
            regime: Regime::Vanilla,
            data_seed: seed,
            model_seed: 0,
            metric: "m".into(),
            value,
        };
        let agg = aggregate(&[row(0, 1.0), row(1, 2.0), row(2, 6.0)]);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].n, 3);
        assert!((agg[0].mean - 3.0).abs() < 1e-12);
        // sample sd = sqrt(7), stderr = sqrt(7/3)
        assert!((agg[0].stderr - (7.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    fn spec(kind: PlotKind) -> PlotSpec {
        PlotSpec {
            kind,
            x: "step".into(),
            y: "value".into(),
            group: Some("series".into()),
            filter: vec![],
            title: "t".into(),
        }
    }

    #[test]
    fn plots_are_stable() {
        let csv = "step,value,series\n0,0.1,a\n100,0.4,a\n100,0.6,a\n0,0.2,b\n";
        let a = plot_csv(csv, &spec(PlotKind::Line)).unwrap();
        assert_eq!(a, plot_csv(csv, &spec(PlotKind::Line)).unwrap());
        assert!(a.starts_with("<svg") && a.contains("polyline"));
        let b = plot_csv(csv, &spec(PlotKind::Bar)).unwrap();
        assert!(b.contains("<rect x="));
        let empty = plot_csv("step,value,series\n", &spec(PlotKind::Line)).unwrap();
        assert!(empty.contains("</svg>") && !empty.contains("polyline"));
        assert!(plot_csv("", &spec(PlotKind::Line)).is_ok());
        let one = plot_csv("step,value,series\n5,1.0,a\n", &spec(PlotKind::Line)).unwrap();
        assert_eq!(one.matches("<circle").count(), 1);
        let bad = PlotSpec { y: "nope".into(), ..spec(PlotKind::Line) };
        assert!(matches!(plot_csv(csv, &bad), Err(Error::Usage(_))));
    }
}
