use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use xling::runner::{self, ExperimentConfig, PlotKind, PlotSpec, RunSpec, Stage};

#[derive(Parser)]
#[command(name = "xling", version, about = "Synthetic cross-lingual transfer experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); the desk profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed used as both data and model seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build ontology, grammar, lexicon and corpus.
    Gen(Common),
    /// Train the tokenizer and record its metrics.
    Tokenize(Common),
    /// Train the language model.
    Train(Common),
    /// Evaluate a trained model.
    Eval(Common),
    /// Run the whole lattice and aggregate over seeds.
    Sweep(Common),
    /// Render a CSV as an SVG chart.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long, default_value = "value")]
        y: String,
        #[arg(long)]
        group: Option<String>,
        /// Keep rows where `column=value`; repeatable.
        #[arg(long, value_parser = parse_filter)]
        filter: Vec<(String, String)>,
        #[arg(long, default_value = "line")]
        kind: PlotKind,
        #[arg(long, default_value = "")]
        title: String,
    },
}

fn parse_filter(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| format!("expected column=value, got `{s}`"))
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn single(c: &Common, until: Stage) -> Result<()> {
    let cfg = load(c)?;
    let run = RunSpec {
        point: cfg.point(),
        data_seed: c.seed.unwrap_or(cfg.data_seeds[0]),
        model_seed: c.seed.unwrap_or(cfg.model_seeds[0]),
    };
    let rep = runner::run_pipeline(&cfg, run, until)?;
    for s in &rep.reused {
        log::info!("reused {}", s.name());
    }
    println!("{}", rep.run_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Gen(c) => single(&c, Stage::Corpus),
        Cmd::Tokenize(c) => single(&c, Stage::Tokenizer),
        Cmd::Train(c) => single(&c, Stage::Train),
        Cmd::Eval(c) => single(&c, Stage::Eval),
        Cmd::Sweep(c) => {
            let mut cfg = load(&c)?;
            if let Some(s) = c.seed {
                cfg.data_seeds = vec![s, s + 1, s + 2];
                cfg.model_seeds = vec![s, s + 1, s + 2];
            }
            let out = runner::sweep(&cfg, runner::worker_count())?;
            println!("{}", cfg.out.join("aggregate.csv").display());
            if out.runs.is_empty() {
                bail!("every run failed; see {}", cfg.out.join("failures.csv").display());
            }
            Ok(())
        }
        Cmd::Plot {
            common,
            input,
            x,
            y,
            group,
            filter,
            kind,
            title,
        } => {
            let out = common.out.unwrap_or_else(|| input.with_extension("svg"));
            let spec = PlotSpec {
                kind,
                x,
                y,
                group,
                filter,
                title,
            };
            runner::plot(&input, &spec, &out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}
