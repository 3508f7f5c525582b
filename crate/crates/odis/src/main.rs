use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use odis::artifacts::OutputDir;
use odis::config::PipelineConfig;
use odis::http::ChatTransport;
use odis::labeling::{MockReply, MockTransport, Transport};
use odis::{jsonl, pipeline, synth};
use odis_core::{default_dimension_registry, BudgetStrategy};

/// Orthogonal diversity-aware selection of pretraining data.
#[derive(Parser)]
#[command(name = "odis", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for holdout splits, distance sampling and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reuse an output directory written under a different configuration.
    #[arg(long, global = true)]
    force: bool,
    /// Labeled reference corpus (overrides paths.reference).
    #[arg(long, global = true)]
    reference: Option<PathBuf>,
    /// Reference dimension scores (overrides paths.reference_scores).
    #[arg(long, global = true)]
    reference_scores: Option<PathBuf>,
    /// Target pool (overrides paths.target).
    #[arg(long, global = true)]
    target: Option<PathBuf>,
    /// Target embeddings (overrides paths.embeddings).
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Score the reference corpus on all eleven dimensions.
    Label {
        /// Read replies from a JSONL fixture instead of calling the API.
        #[arg(long)]
        mock_replies: Option<PathBuf>,
        /// With --mock-replies, fail cells missing from the fixture
        /// instead of synthesizing a reply.
        #[arg(long)]
        strict_mock: bool,
    },
    /// Fit the decomposition of the reference scores.
    FitPca {
        #[arg(long)]
        k: Option<usize>,
        /// Cumulative explained variance target; clears a configured k.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        standardize: bool,
    },
    /// Train surrogate scorers for the retained components.
    TrainScorer {
        /// Train only this component (1-based).
        #[arg(long)]
        pc: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        holdout: Option<f64>,
        /// Pick the regularisation strength by holdout error.
        #[arg(long)]
        tune: bool,
    },
    /// Score the target pool with every trained scorer.
    Score,
    /// Select per-component top documents under a token budget.
    Select {
        /// Total token budget.
        #[arg(long)]
        budget: Option<u64>,
        /// Budget as a fraction of pool tokens.
        #[arg(long)]
        budget_fraction: Option<f64>,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<BudgetStrategy>,
    },
    /// Write correlation, distribution and distance tables.
    Report,
    /// Run the synthetic end-to-end experiment.
    SynthEval {
        /// Number of target documents.
        #[arg(long, default_value_t = synth::DEFAULT_SIZE)]
        size: usize,
    },
}

fn parse_strategy(s: &str) -> Result<BudgetStrategy, String> {
    match s {
        "uniform" => Ok(BudgetStrategy::Uniform),
        "variance_proportional" | "variance-proportional" => Ok(BudgetStrategy::VarianceProportional),
        _ => Err(format!("unknown strategy {s:?}; use uniform or variance_proportional")),
    }
}

fn config(common: &Common, command: &Command) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(common.config.as_deref())?;
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.reference, &common.reference),
        (&mut paths.reference_scores, &common.reference_scores),
        (&mut paths.target, &common.target),
        (&mut paths.embeddings, &common.embeddings),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(seed) = common.seed {
        cfg.diagnostics.seed = seed;
    }
    match command {
        Command::FitPca { k, tau, standardize } => {
            if let Some(t) = tau {
                cfg.pca.tau = *t;
                cfg.pca.k = None;
            }
            if k.is_some() {
                cfg.pca.k = *k;
            }
            cfg.pca.standardize |= standardize;
        }
        Command::TrainScorer {
            lambda, holdout, tune, ..
        } => {
            if let Some(l) = lambda {
                cfg.scorer.lambda = *l;
            }
            if let Some(h) = holdout {
                cfg.scorer.holdout = *h;
            }
            cfg.scorer.tune |= tune;
        }
        Command::Select {
            budget,
            budget_fraction,
            strategy,
        } => {
            if budget.is_some() {
                cfg.selection.budget_tokens = *budget;
            }
            if budget_fraction.is_some() {
                cfg.selection.budget_tokens = *budget;
                cfg.selection.budget_fraction = *budget_fraction;
            }
            if let Some(s) = strategy {
                cfg.selection.strategy = *s;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn transport(cfg: &PipelineConfig, mock: Option<&PathBuf>, strict: bool) -> Result<Box<dyn Transport>> {
    if let Some(path) = mock {
        let fixture: Vec<MockReply> = jsonl::read_values(path)?;
        let reference = cfg
            .paths
            .reference
            .as_deref()
            .ok_or_else(|| anyhow!("paths.reference is not set"))?;
        let docs: Vec<_> = jsonl::read_corpus(reference)?.into_iter().map(|r| r.value).collect();
        return Ok(Box::new(MockTransport::new(
            &docs,
            &default_dimension_registry(),
            &fixture,
            !strict,
            cfg.diagnostics.seed,
        )));
    }
    let endpoint = std::env::var(&cfg.labeling.endpoint_env)
        .with_context(|| format!("set {} to the chat-completions URL or pass --mock-replies", cfg.labeling.endpoint_env))?;
    let key = std::env::var(&cfg.labeling.api_key_env)
        .with_context(|| format!("set {} to the API key", cfg.labeling.api_key_env))?;
    Ok(Box::new(ChatTransport::new(
        endpoint,
        key,
        cfg.labeling.temperature,
        Duration::from_secs(cfg.labeling.timeout_secs),
    )))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let common = &cli.common;
    if let Command::SynthEval { size } = cli.command {
        let report = synth::run(&common.out, common.seed.unwrap_or(0), size, common.force)?;
        return Ok(serde_json::to_value(report)?);
    }
    let cfg = config(common, &cli.command)?;
    let out = OutputDir::open(&common.out, &cfg.hash(), common.force)?;
    let manifest = match &cli.command {
        Command::Label {
            mock_replies,
            strict_mock,
        } => {
            let t = transport(&cfg, mock_replies.as_ref(), *strict_mock)?;
            pipeline::label(&cfg, &out, t.as_ref())?
        }
        Command::FitPca { .. } => pipeline::fit_pca(&cfg, &out)?,
        Command::TrainScorer { pc, .. } => pipeline::train_scorer(&cfg, &out, *pc)?.0,
        Command::Score => pipeline::score(&cfg, &out)?,
        Command::Select { .. } => pipeline::select(&cfg, &out)?.0,
        Command::Report => pipeline::report(&cfg, &out)?,
        Command::SynthEval { .. } => unreachable!("handled above"),
    };
    Ok(serde_json::json!({
        "stage": manifest.stage,
        "artifacts": manifest.artifacts.iter().map(|a| &a.path).collect::<Vec<_>>(),
        "notes": manifest.notes,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
