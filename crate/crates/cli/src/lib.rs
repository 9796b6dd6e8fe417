//! The `reportgen` command-line pipeline.
//!
//! Every command reads and writes artifacts in one output directory:
//!
//! | command      | reads                                   | writes |
//! |--------------|-----------------------------------------|--------|
//! | `synth`      | –                                       | `corpus.jsonl`, `images/`, `labels.json` |
//! | `preprocess` | corpus                                  | `tokenized.jsonl`, `vocab.json`, `splits.json` |
//! | `distill`    | `tokenized.jsonl`                       | `selection.json`, `topics.json`, `heatmap_<method>.csv/.svg` |
//! | `train`      | corpus, preprocess and distill outputs  | `model.ckpt`, `last.ckpt`, `train_log.jsonl` |
//! | `generate`   | corpus, `splits.json`, `model.ckpt`     | `predictions.jsonl`, `attention/` |
//! | `evaluate`   | `predictions.jsonl`, `tokenized.jsonl`  | `eval.json`, `eval.csv` |
//! | `bench-cluster` | –                                    | `bench.csv` |
//!
//! Exit codes: 0 success, 1 internal or numerical failure, 2 usage error or
//! missing input.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub mod artifacts;
pub mod commands;
pub mod config;

use config::{PipelineConfig, Split};

/// A problem with how the tool was invoked or with its inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "reportgen", version, about = "Topic-guided report generation from image pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; every module derives its own from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (1 = fully sequential).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output (artifact) directory.
    #[arg(short = 'o', long = "out", global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-template synthetic corpus with image pairs.
    Synth {
        #[arg(long)]
        templates: Option<usize>,
        #[arg(long)]
        records: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Normalise and tokenise the corpus, build the vocabulary and splits.
    Preprocess {
        /// Input corpus (JSON Lines).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Distil topic pseudo-labels from report text.
    Distill {
        #[command(flatten)]
        common: Common,
    },
    /// Train the visual extractor and report generator.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Generate reports for a split with the best checkpoint.
    Generate {
        #[arg(long, value_enum)]
        split: Option<Split>,
        /// Beam width; greedy decoding when absent.
        #[arg(long)]
        beam: Option<usize>,
        /// Also write per-report cross-attention tables.
        #[arg(long)]
        attention: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against reference reports.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Entailment scoring with a pretrained NLI model (not available).
        #[arg(long)]
        entailment: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Time K-Means, DBSCAN and agglomerative clustering across corpus sizes.
    BenchCluster {
        /// Comma-separated corpus sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Preprocess { common, .. }
            | Command::Distill { common }
            | Command::Train { common }
            | Command::Generate { common, .. }
            | Command::Evaluate { common, .. }
            | Command::BenchCluster { common, .. } => common,
        }
    }
}

fn build_config(command: &Command, overrides: &[(String, String)]) -> anyhow::Result<PipelineConfig> {
    let common = command.common();
    let mut config = PipelineConfig::assemble(common.config.as_deref(), overrides)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output = out.clone();
    }
    match command {
        Command::Synth { templates, records, .. } => {
            config.synth.templates = templates.unwrap_or(config.synth.templates);
            config.synth.records = records.unwrap_or(config.synth.records);
        }
        Command::Preprocess { corpus: Some(c), .. } => config.corpus = Some(c.clone()),
        Command::Generate { split, beam, attention, .. } => {
            if let Some(s) = split {
                config.generate.split = *s;
            }
            if let Some(w) = beam {
                config.generate.decode = reportgen_core::model::DecodeMode::Beam(*w);
            }
            config.generate.attention |= attention;
        }
        Command::Evaluate { lexicon: Some(l), .. } => config.lexicon = Some(l.clone()),
        Command::BenchCluster { sizes: Some(s), .. } => config.bench.sizes = s.clone(),
        _ => {}
    }
    Ok(config)
}

fn dispatch(command: &Command, config: &PipelineConfig) -> anyhow::Result<()> {
    match command {
        Command::Synth { .. } => commands::synth(config),
        Command::Preprocess { .. } => commands::preprocess(config),
        Command::Distill { .. } => commands::distill(config),
        Command::Train { .. } => commands::train(config),
        Command::Generate { .. } => commands::generate(config),
        Command::Evaluate { predictions, entailment, .. } => {
            commands::evaluate(config, predictions.as_deref(), *entailment)
        }
        Command::BenchCluster { .. } => commands::bench_cluster(config),
    }
}

/// Exit status for an error: 2 for usage problems and missing or malformed
/// inputs, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use reportgen_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<artifacts::MissingArtifact>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_)
                | E::DatasetTooSmall { .. }
                | E::Unsupported(_)
                | E::Pairing { .. }
                | E::Format(_)
                | E::Json(_)
                | E::EmptyCorpus
                | E::Label { .. } => 2,
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
    }
    1
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code.
pub fn run<I>(args: I) -> ExitCode
where
    I: IntoIterator<Item = OsString>,
{
    let (args, overrides) = match config::extract_overrides(args.into_iter().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.command.common().threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = build_config(&cli.command, &overrides).and_then(|config| dispatch(&cli.command, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
