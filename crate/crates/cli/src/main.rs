use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hillsignal::evaluation::{fmt6, AVERAGE_ROW};
use hillsignal::features::{read_features, write_features, FeatureVector};
use hillsignal::forest::{Dataset, Forest};
use hillsignal::pipeline::{self, Inputs, PipelineConfig};
use hillsignal::snapshot::Snapshot;
use hillsignal::synth::{self, GeneratorConfig};
use hillsignal::{Error, EventStore};

#[derive(Parser)]
#[command(name = "hillsignal", version, about = "Adverse drug reaction signalling from longitudinal records")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted signals.
    Synth {
        /// Generator configuration (TOML).
        #[arg(long, short)]
        config: PathBuf,
        /// Directory for the generated CSV files.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Load the inputs and print record counts after filtering.
    IngestCheck(ConfigArg),
    /// List reference pairs that pass the eligibility filter.
    Pairs {
        #[command(flatten)]
        config: ConfigArg,
        /// Output CSV (defaults to <output_dir>/pairs.csv).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Extract the feature matrix, or a statistics snapshot for one patient shard.
    Features {
        #[command(flatten)]
        config: ConfigArg,
        /// Patient shard k/m; writes a mergeable snapshot instead of features.
        #[arg(long)]
        partition: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Merge shard snapshots into the feature matrix.
    Merge {
        /// Pipeline configuration; only its eligibility settings are used.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(required = true)]
        snapshots: Vec<PathBuf>,
    },
    /// Fit a forest on every labelled pair and save it as JSON.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, short)]
        features: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Leave-one-group-out evaluation of a feature matrix.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, short)]
        features: PathBuf,
    },
    /// Run feature extraction and evaluation end to end.
    Report(ConfigArg),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::DegenerateLabels(_)) => 3,
        Some(Error::Config(_)) => 1,
        Some(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    Ok(PipelineConfig::load(path)?)
}

fn output_dir(cfg: &PipelineConfig) -> anyhow::Result<&Path> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth { config, out } => {
            let cfg = GeneratorConfig::load(&config)?;
            let data = synth::generate(&cfg)?;
            data.write(&out)?;
            let n_adr = data.truth.rows.iter().filter(|r| r.mechanism.is_adr()).count();
            println!(
                "wrote {} patients, {} prescriptions, {} events, {} pairs ({} ADR) to {}",
                data.raw.patients.len(),
                data.raw.prescriptions.len(),
                data.raw.events.len(),
                data.truth.rows.len(),
                n_adr,
                out.display()
            );
        }
        Command::IngestCheck(c) => {
            let cfg = load_config(&c.config)?;
            let inputs = Inputs::load(&cfg)?;
            let store = EventStore::ingest(&inputs.raw, inputs.store_config)?;
            let s = store.summary();
            println!("observation_end={}", inputs.store_config.observation_end);
            println!("patients={}", s.patients);
            println!(
                "prescriptions read={} washout={} censored={} kept={}",
                s.prescriptions_read,
                s.prescriptions_washout,
                s.prescriptions_censored,
                s.prescriptions_kept()
            );
            println!("events read={} washout={} kept={}", s.events_read, s.events_washout, s.events_kept());
            println!("reference pairs={}", inputs.reference.len());
        }
        Command::Pairs { config, output } => {
            let cfg = load_config(&config.config)?;
            let inputs = Inputs::load(&cfg)?;
            let snapshot = pipeline::stats_snapshot(&inputs, &cfg, 0, 1)?;
            let path = match output {
                Some(p) => p,
                None => output_dir(&cfg)?.join("pairs.csv"),
            };
            let mut w = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
            w.write_record(["drug_key", "outcome_code", "label", "group", "n_patients_with_event"])?;
            let mut kept = 0;
            for r in &snapshot.records {
                if r.stats.n_patients_with_event >= cfg.min_patients as u64 {
                    kept += 1;
                    w.write_record([
                        r.pair.drug_key.as_str(),
                        r.pair.outcome.as_str(),
                        r.pair.label.as_str(),
                        r.pair.group.as_str(),
                        &r.stats.n_patients_with_event.to_string(),
                    ])?;
                }
            }
            w.flush()?;
            println!("{kept} of {} pairs eligible", snapshot.records.len());
        }
        Command::Features { config, partition, output } => {
            let cfg = load_config(&config.config)?;
            let inputs = Inputs::load(&cfg)?;
            match partition {
                None => {
                    let vectors = pipeline::extract_features(&inputs, &cfg)?;
                    let path = match output {
                        Some(p) => p,
                        None => output_dir(&cfg)?.join("features.csv"),
                    };
                    write_features(&path, &vectors)?;
                    println!("{} eligible pairs written to {}", vectors.len(), path.display());
                }
                Some(text) => {
                    let (k, m) = pipeline::parse_partition(&text)?;
                    let snapshot = pipeline::stats_snapshot(&inputs, &cfg, k, m)?;
                    let path = match output {
                        Some(p) => p,
                        None => output_dir(&cfg)?.join(format!("stats_{k}_of_{m}.stats")),
                    };
                    snapshot.write(&path)?;
                    println!("shard {k}/{m} snapshot written to {}", path.display());
                }
            }
        }
        Command::Merge { config, output, snapshots } => {
            let min_patients = match config {
                Some(p) => load_config(&p)?.min_patients,
                None => PipelineConfig::default().min_patients,
            };
            let parts = snapshots
                .iter()
                .map(|p| Snapshot::read(p))
                .collect::<Result<Vec<_>, _>>()?;
            let merged = Snapshot::merge(&parts)?;
            let vectors = pipeline::features_from_snapshot(&merged, min_patients)?;
            write_features(&output, &vectors)?;
            println!("{} eligible pairs written to {}", vectors.len(), output.display());
        }
        Command::Train { config, features, output } => {
            let cfg = load_config(&config.config)?;
            let vectors = labelled(read_features(&features)?);
            let columns: Vec<usize> = (1..=hillsignal::features::N_ATTRS).collect();
            let data = Dataset::from_vectors(&vectors, &columns)?;
            let forest = Forest::fit(&data, &cfg.train_config())?.with_columns(&columns);
            forest.save(&output)?;
            let cv = forest.cv_score();
            println!(
                "trained {} trees on {} pairs, mtry={}, cv_auc={}",
                forest.trees.len(),
                data.len(),
                forest.chosen_mtry,
                fmt6(cv.and_then(|c| c.mean_auc))
            );
        }
        Command::Evaluate { config, features } => {
            let cfg = load_config(&config.config)?;
            let vectors = read_features(&features)?;
            evaluate(&cfg, &vectors)?;
        }
        Command::Report(c) => {
            let cfg = load_config(&c.config)?;
            let inputs = Inputs::load(&cfg)?;
            let vectors = pipeline::extract_features(&inputs, &cfg)?;
            let path = output_dir(&cfg)?.join("features.csv");
            write_features(&path, &vectors)?;
            println!("{} eligible pairs written to {}", vectors.len(), path.display());
            evaluate(&cfg, &vectors)?;
        }
    }
    Ok(())
}

fn labelled(vectors: Vec<FeatureVector>) -> Vec<FeatureVector> {
    vectors
        .into_iter()
        .filter(|v| v.pair.label != hillsignal::Label::Unknown)
        .collect()
}

fn evaluate(cfg: &PipelineConfig, vectors: &[FeatureVector]) -> anyhow::Result<()> {
    let (evaluation, importance) = pipeline::evaluate(vectors, cfg)?;
    let dir = output_dir(cfg)?;
    hillsignal::evaluation::write_reports(dir, &evaluation, &importance)?;
    for r in evaluation.reports.iter().filter(|r| r.group == AVERAGE_ROW) {
        println!(
            "{} [{}]: n_adr={} n_nadr={} auc={} ap={} p10={}",
            r.group,
            r.subset,
            r.n_adr,
            r.n_nadr,
            fmt6(r.auc),
            fmt6(r.ap),
            fmt6(r.p10)
        );
    }
    let degenerate = evaluation
        .reports
        .iter()
        .filter(|r| r.group != AVERAGE_ROW && r.auc.is_none())
        .count();
    if degenerate > 0 {
        eprintln!("warning: {degenerate} group reports have degenerate labels");
    }
    println!("reports written to {}", dir.display());
    Ok(())
}
