//! Command-line front end for the pre-training pipeline.
//!
//! Every subcommand reads the resolved configuration, checks that its inputs
//! exist, writes its artifacts into one run directory together with a
//! `config.toml` snapshot and a `manifest.json` of input and output digests.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use melhubert::trainer::{Stage, Stage2Mode};

use crate::commands::Needs;
use crate::config::{ConfigSources, PipelineConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "melhubert",
    version,
    about = "Masked-prediction pre-training on log-Mel features"
)]
pub struct Cli {
    /// TOML config file layered over the preset.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Named configuration (desk, melhubert-10ms, melhubert-20ms, melhubert-20ms-best).
    /// For `macs` it names an architecture instead.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Override one key, e.g. `--set train.lr=3e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads (overrides `workers`; 0 = one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Resolve the config, check inputs and print the config without running.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Scratch,
    Continued,
}

impl From<ModeArg> for Stage2Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Scratch => Stage2Mode::Scratch,
            ModeArg::Continued => Stage2Mode::Continued,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic vowel corpus.
    Synth,
    /// Compute log-Mel features and normalization statistics.
    Mel,
    /// Fit the stage-1 codebook and label every frame.
    Kmeans,
    /// Masked-prediction pre-training.
    Pretrain {
        #[arg(long, value_enum, default_value = "1")]
        stage: StageArg,
        /// Stage-2 initialization; defaults to `stage.stage2_mode`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Cluster hidden states of a checkpoint into stage-2 targets.
    Relabel,
    /// Train frozen-upstream probes.
    Probe,
    /// Layer-wise CCA with phones and with the input features.
    Cca,
    /// Phone and cluster purity of a label file.
    Purity {
        /// Label file; defaults to `paths.labels`.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Multiply-accumulate count per second of input.
    Macs {
        /// Architecture description in TOML.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
    },
    /// Run every stage in order.
    Pipeline,
}

impl Cli {
    fn sources(&self) -> ConfigSources {
        ConfigSources {
            preset: self.preset.clone(),
            file: self.config.clone(),
            overrides: self.overrides.clone(),
        }
    }
}

fn needs(cmd: &Command) -> Vec<Needs> {
    use Needs::*;
    match cmd {
        Command::Synth | Command::Macs { .. } | Command::Pipeline | Command::Purity { .. } => {
            vec![]
        }
        Command::Mel => vec![Corpus],
        Command::Kmeans => vec![Corpus, Features],
        Command::Pretrain {
            stage: StageArg::One,
            ..
        } => vec![Corpus, Features, Labels, Codebook],
        Command::Pretrain {
            stage: StageArg::Two,
            ..
        } => vec![Corpus, Features, Checkpoint, Stage2Labels, Stage2Codebook],
        Command::Relabel | Command::Probe | Command::Cca => vec![Corpus, Features, Checkpoint],
    }
}

fn init_workers(n: usize) {
    // Fails only if a pool already exists, as in tests running several commands.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Command::Macs { spec } = &cli.command {
        // A preset here names an architecture; the pipeline config is only
        // consulted when neither a preset nor a spec file is given.
        let cfg = if cli.preset.is_none() && spec.is_none() {
            Some(PipelineConfig::resolve(&cli.sources())?)
        } else {
            None
        };
        let report = commands::macs_report(cli.preset.as_deref(), spec.as_deref(), cfg.as_ref())?;
        if !cli.dry_run {
            println!("{report}");
        }
        return Ok(());
    }

    let mut cfg = PipelineConfig::resolve(&cli.sources())?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cli.dry_run {
        if let Command::Purity { labels } = &cli.command {
            commands::preflight(&cfg, &[Needs::Corpus])?;
            let p = labels.clone().unwrap_or_else(|| cfg.paths.labels_file());
            config::require(
                "paths.labels",
                &p,
                "run `melhubert kmeans`, pass --labels or set paths.labels",
            )
            .map_err(|e| CliError::config(vec![e]))?;
        }
        commands::preflight(&cfg, &needs(&cli.command))?;
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    init_workers(cfg.workers);

    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Mel => commands::mel(&cfg),
        Command::Kmeans => commands::kmeans(&cfg),
        Command::Pretrain {
            stage: StageArg::One,
            mode,
        } => {
            if mode.is_some() {
                return Err(CliError::config(vec![
                    "--mode: only applies to --stage 2".into()
                ]));
            }
            commands::pretrain_stage1(&cfg)
        }
        Command::Pretrain {
            stage: StageArg::Two,
            mode,
        } => commands::pretrain_stage2(&cfg, mode.map_or(cfg.stage.stage2_mode, Into::into)),
        Command::Relabel => commands::relabel_cmd(&cfg),
        Command::Probe => commands::probe(&cfg),
        Command::Cca => commands::cca(&cfg),
        Command::Purity { labels } => commands::purity_cmd(&cfg, labels.as_deref()),
        Command::Pipeline => pipeline(cfg),
        Command::Macs { .. } => unreachable!("handled above"),
    }
}

/// Every stage in order. Inputs named explicitly in `paths` are used as they
/// are; the rest are produced along the way.
fn pipeline(mut cfg: PipelineConfig) -> CliResult<()> {
    if cfg.paths.corpus.is_none() {
        commands::synth(&cfg)?;
    }
    if cfg.paths.features.is_none() {
        commands::mel(&cfg)?;
    }
    if cfg.paths.codebook.is_none() || cfg.paths.labels.is_none() {
        commands::kmeans(&cfg)?;
    }
    if cfg.paths.checkpoint.is_none() {
        commands::pretrain_stage1(&cfg)?;
    }
    commands::relabel_cmd(&cfg)?;
    let mode = cfg.stage.stage2_mode;
    commands::pretrain_stage2(&cfg, mode)?;
    cfg.paths.checkpoint = Some(commands::pretrain_dir(&cfg, Stage::Two, mode).join("final.mhck"));
    commands::probe(&cfg)?;
    commands::cca(&cfg)
}
