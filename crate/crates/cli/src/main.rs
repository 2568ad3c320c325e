//! Command line front end: extraction, sanitization, feature export, the
//! full pipeline, grid-size ablation, and synthetic corpus generation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use sanitrace::corpus::{generate_synthetic, read_jsonl, write_jsonl, Document, SynthConfig};
use sanitrace::pipeline::{
    self, classify_records, compute_features, doc_seed, fit_scorer, read_features_jsonl,
    run_pipeline, write_features_jsonl, write_trajectory_csv,
};
use sanitrace::sanitize::{sanitize, SpanRecord};
use sanitrace::scorer::Metric;
use sanitrace::{extract, RunConfig, SensitivityRegistry};

#[derive(Parser)]
#[command(
    name = "sanitrace",
    version,
    about = "Budget-accounted entity sanitization and trajectory-based text classification"
)]
struct Cli {
    /// Run configuration JSON; omitted fields use their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Grid and metric overrides shared by the feature-producing commands.
#[derive(Args, Clone, Copy)]
struct GridArgs {
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    #[arg(long)]
    grid_count: Option<usize>,
    /// Token scoring rule: ll, rank, or entropy.
    #[arg(long, value_parser = Metric::from_str)]
    metric: Option<Metric>,
}

impl GridArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(min) = self.grid_min {
            config.grid.min = min;
        }
        if let Some(max) = self.grid_max {
            config.grid.max = max;
        }
        if let Some(count) = self.grid_count {
            config.grid.count = count;
        }
        if let Some(metric) = self.metric {
            config.metric = metric;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Lists every entity span found in each document.
    Extract {
        /// Input corpus, JSONL with doc_id and text fields.
        #[arg(long)]
        input: PathBuf,
        /// Output JSONL; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sanitizes each document under one total budget.
    Sanitize {
        #[arg(long)]
        input: PathBuf,
        /// Total budget per document.
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Computes trajectory features for each document.
    Features {
        #[arg(long)]
        input: PathBuf,
        /// Output features JSONL.
        #[arg(long)]
        out: PathBuf,
        /// Optional wide-format CSV of the trajectories.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Full run: filter, featurize, train, evaluate.
    Pipeline {
        /// Input corpus JSONL. Required unless --from-features is given.
        #[arg(long, required_unless_present = "from_features")]
        input: Option<PathBuf>,
        /// Skip feature computation and classify these records instead.
        #[arg(long)]
        from_features: Option<PathBuf>,
        /// Directory for all artifacts.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Classification quality as the grid size varies.
    Ablation {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated grid sizes, e.g. 10,30.
        #[arg(long, default_value = "10,30")]
        dims: String,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Generates a labeled synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_per_class: usize,
        #[arg(long, default_value_t = 6)]
        topics: usize,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config from {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn read_sorted_corpus(path: &Path) -> anyhow::Result<Vec<Document>> {
    let mut docs =
        read_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))?;
    if docs.is_empty() {
        bail!("corpus {} contains no documents", path.display());
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}

fn write_lines(out: &Option<PathBuf>, lines: &[String]) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            for line in lines {
                writeln!(file, "{line}")?;
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for line in lines {
                writeln!(lock, "{line}")?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ExtractionLine<'a> {
    doc_id: &'a str,
    density: f64,
    counts: &'a std::collections::BTreeMap<sanitrace::EntityKind, usize>,
    spans: &'a [sanitrace::EntitySpan],
}

fn cmd_extract(input: &Path, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let registry = SensitivityRegistry::default();
    let docs = read_sorted_corpus(input)?;
    let lines: Vec<String> = docs
        .iter()
        .map(|doc| {
            let result = extract(&doc.text, &registry);
            let line = ExtractionLine {
                doc_id: &doc.doc_id,
                density: result.density,
                counts: &result.counts,
                spans: &result.spans,
            };
            Ok(serde_json::to_string(&line)?)
        })
        .collect::<anyhow::Result<_>>()?;
    write_lines(out, &lines)
}

#[derive(Serialize)]
struct SanitizedLine<'a> {
    doc_id: &'a str,
    epsilon_total: f64,
    ledger_total: f64,
    sanitized_text: &'a str,
    records: &'a [SpanRecord],
}

fn cmd_sanitize(
    input: &Path,
    epsilon: f64,
    out: &Option<PathBuf>,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let registry = SensitivityRegistry::default();
    let docs = read_sorted_corpus(input)?;
    let sanitized = docs
        .par_iter()
        .map(|doc| {
            sanitize(
                &doc.text,
                epsilon,
                &registry,
                &config.sanitize,
                doc_seed(config.seed, &doc.doc_id),
                0,
            )
            .with_context(|| format!("sanitizing {}", doc.doc_id))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let lines: Vec<String> = docs
        .iter()
        .zip(&sanitized)
        .map(|(doc, result)| {
            let line = SanitizedLine {
                doc_id: &doc.doc_id,
                epsilon_total: epsilon,
                ledger_total: result.ledger.grand_total(),
                sanitized_text: &result.sanitized_text,
                records: &result.records,
            };
            Ok(serde_json::to_string(&line)?)
        })
        .collect::<anyhow::Result<_>>()?;
    write_lines(out, &lines)
}

fn cmd_features(
    input: &Path,
    out: &Path,
    csv: &Option<PathBuf>,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let registry = SensitivityRegistry::default();
    let docs = read_sorted_corpus(input)?;
    let n_input = docs.len();
    let outcome = sanitrace::corpus::filter_corpus(docs, &config.filter, &registry);
    if outcome.kept.is_empty() {
        bail!("the filter rejected all {n_input} documents");
    }
    log::info!(
        "{} of {} documents passed the filter",
        outcome.kept.len(),
        n_input
    );
    let scorer = fit_scorer(&outcome.kept, config)?;
    let records = compute_features(&outcome.kept, &scorer, config, &registry)?;
    write_features_jsonl(out, &records)?;
    if let Some(csv_path) = csv {
        write_trajectory_csv(csv_path, &records)?;
    }
    Ok(())
}

fn cmd_pipeline(
    input: &Option<PathBuf>,
    from_features: &Option<PathBuf>,
    out_dir: &Path,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let summary = match from_features {
        Some(path) => {
            let records = read_features_jsonl(path)
                .with_context(|| format!("reading features {}", path.display()))?;
            classify_records(&records, config, records.len(), 0, out_dir)?
        }
        None => {
            let input = input.as_ref().expect("clap enforces input presence");
            let docs = read_sorted_corpus(input)?;
            let registry = SensitivityRegistry::default();
            run_pipeline(docs, config, &registry, out_dir)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_ablation(
    input: &Path,
    dims: &str,
    out: &Option<PathBuf>,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let level_counts: Vec<usize> = dims
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .with_context(|| format!("bad grid size {part:?} in --dims"))
        })
        .collect::<anyhow::Result<_>>()?;
    let registry = SensitivityRegistry::default();
    let docs = read_sorted_corpus(input)?;
    let rows = pipeline::ablate(&docs, config, &level_counts, &registry)?;
    let csv = pipeline::ablation_csv(&rows);
    match out {
        Some(path) => std::fs::write(path, csv)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_synth(
    out: &Path,
    n_per_class: usize,
    topics: usize,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let registry = SensitivityRegistry::default();
    let synth = SynthConfig {
        n_per_class,
        topics,
        seed: config.seed,
        ..SynthConfig::default()
    };
    let docs = generate_synthetic(&synth, &registry)?;
    write_jsonl(out, &docs)?;
    log::info!("wrote {} documents to {}", docs.len(), out.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("initializing the worker pool")?;
    }
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Extract { input, out } => cmd_extract(input, out),
        Command::Sanitize {
            input,
            epsilon,
            out,
        } => cmd_sanitize(input, *epsilon, out, &config),
        Command::Features {
            input,
            out,
            csv,
            grid,
        } => {
            grid.apply(&mut config);
            cmd_features(input, out, csv, &config)
        }
        Command::Pipeline {
            input,
            from_features,
            out_dir,
            grid,
        } => {
            grid.apply(&mut config);
            cmd_pipeline(input, from_features, out_dir, &config)
        }
        Command::Ablation {
            input,
            dims,
            out,
            grid,
        } => {
            grid.apply(&mut config);
            cmd_ablation(input, dims, out, &config)
        }
        Command::Synth {
            out,
            n_per_class,
            topics,
        } => cmd_synth(out, *n_per_class, *topics, &config),
    }
}
