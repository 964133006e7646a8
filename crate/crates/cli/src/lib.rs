//! Subcommands of the `dss` binary. Each command is a plain function so the
//! integration tests can drive the pipeline without spawning processes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dss_annotate::AnnotationService;
use dss_core::classifier::{self, ClassifierConfig, ModelArtifact};
use dss_core::corpus_store::{read_corpus, write_corpus, CorpusStore, DatasetSplit, Ratios, DEFAULT_SPLIT_SEED};
use dss_core::eval_report::{self, confusion, Averaging, EvaluationReport};
use dss_core::normalizer::{CleaningRules, CorpusStats, Normalizer};
use dss_core::synthetic::{annotated_corpus, separable_corpus, SyntheticSpec};
use dss_core::{CorpusRecord, Label, Segment, Target, TrialRecord};
use dss_ctgov::{CtgovClient, CtgovConfig, HarvestOptions, HarvestSummary};

#[derive(Debug, Parser)]
#[command(name = "dss", version, about = "Clinical-trial data-sharing statement pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download registry records that carry a data-sharing statement.
    Harvest(HarvestArgs),
    /// Clean and deduplicate a harvested corpus.
    Clean(CleanArgs),
    /// Assign a stratified train/validation/test split by manual label.
    Split(SplitArgs),
    /// Train a classifier on the train segment with early stopping.
    Train(TrainArgs),
    /// Add predicted labels and scores to a corpus file.
    Predict(PredictArgs),
    /// Evaluate a model on the test segment.
    Evaluate(EvaluateArgs),
    /// Agreement, discrepancy and yearly-count reports.
    Report(ReportArgs),
    /// Serve the labeling API (and optional static front end).
    AnnotateServe(ServeArgs),
    /// Write a deterministic synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct HarvestArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_records: Option<usize>,
    #[arg(long)]
    pub resume: bool,
    /// TOML file with a `[ctgov]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with cleaning rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Original,
    Manual,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Original => Target::OriginalCategory,
            TargetArg::Manual => Target::ManualLabel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Macro,
    Weighted,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::Macro => Averaging::Macro,
            AveragingArg::Weighted => Averaging::Weighted,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Label column to score against; defaults to the model's training target.
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    /// JSON report; a text table is written next to it with a `.txt` suffix.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "macro")]
    pub averaging: AveragingArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Agreement,
    Discrepancies,
    Yearly,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(value_enum)]
    pub kind: ReportKind,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = dss_annotate::DEFAULT_LEASE_MINUTES)]
    pub lease_minutes: i64,
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// 5,000 annotated statements with realistic wording.
    Annotated,
    /// Keyword texts whose manual label is trivially separable.
    Separable,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "annotated")]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Records per class for the separable corpus.
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
}

/// Metadata written next to a split corpus as `<corpus>.split.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSidecar {
    pub seed: u64,
    pub ratios: Ratios,
    /// Records in train, validation and test.
    pub sizes: [usize; 3],
}

pub fn split_sidecar_path(corpus: &Path) -> PathBuf {
    let mut name = corpus.as_os_str().to_owned();
    name.push(".split.json");
    PathBuf::from(name)
}

fn evaluation_text_path(out: &Path) -> PathBuf {
    out.with_extension("txt")
}

pub async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Harvest(a) => {
            let summary = run_harvest(&a).await?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Clean(a) => {
            let stats = clean(&a.input, &a.out, a.rules.as_deref())?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Split(a) => {
            let sidecar = split(&a.input, &a.out, a.seed)?;
            println!("{}", serde_json::to_string(&sidecar)?);
        }
        Command::Train(a) => {
            let config = ClassifierConfig::load(&a.config)?;
            let artifact = train(&config, &a.corpus, &a.out)?;
            println!(
                "{}",
                serde_json::json!({
                    "best_epoch": artifact.best_epoch,
                    "epochs_run": artifact.training_log.len(),
                    "training_log": artifact.training_log,
                })
            );
        }
        Command::Predict(a) => {
            let n = predict(&a.model, &a.input, &a.out)?;
            tracing::info!(records = n, out = %a.out.display(), "predictions written");
        }
        Command::Evaluate(a) => {
            let report = evaluate(&a.model, &a.corpus, a.target.map(Into::into), a.averaging.into(), &a.out)?;
            print!("{}", report.to_text());
        }
        Command::Report(a) => {
            let records = read_corpus(&a.corpus)?;
            let mut bytes = Vec::new();
            report(a.kind, &records, &mut bytes)?;
            match &a.out {
                Some(path) => std::fs::write(path, &bytes).with_context(|| path.display().to_string())?,
                None => std::io::stdout().write_all(&bytes)?,
            }
        }
        Command::AnnotateServe(a) => annotate_serve(&a).await?,
        Command::Synth(a) => {
            let records = synth(a.kind, a.seed, a.per_class);
            write_corpus(&a.out, &records)?;
            tracing::info!(records = records.len(), out = %a.out.display(), "synthetic corpus written");
        }
    }
    Ok(())
}

pub async fn run_harvest(args: &HarvestArgs) -> Result<HarvestSummary> {
    let mut config = match &args.config {
        Some(path) => CtgovConfig::load(path)?,
        None => CtgovConfig::default(),
    };
    config.apply_env();
    let client = CtgovClient::new(config)?;
    let options = HarvestOptions {
        out: args.out.clone(),
        max_records: args.max_records,
        resume: args.resume,
    };
    Ok(dss_ctgov::harvest(&client, &options).await?)
}

/// Cleans the statements of a harvested corpus file and writes the kept
/// records, ordered by identifier, to `out`.
pub fn clean(input: &Path, out: &Path, rules: Option<&Path>) -> Result<CorpusStats> {
    let rules = match rules {
        Some(path) => CleaningRules::load(path)?,
        None => CleaningRules::default(),
    };
    let raw: Vec<TrialRecord> = read_corpus(input)?
        .into_iter()
        .map(|r| TrialRecord {
            nct_id: r.nct_id,
            original_category: r.original_category,
            dss_text: r.dss_text,
            first_posted_year: r.first_posted_year,
        })
        .collect();
    let (kept, stats) = Normalizer::new(rules).build_corpus(raw)?;
    let records: Vec<CorpusRecord> = kept
        .into_iter()
        .map(|c| CorpusRecord {
            nct_id: c.nct_id,
            original_category: c.original_category,
            dss_text: c.clean_text,
            first_posted_year: c.first_posted_year,
            manual_label: None,
            split: None,
        })
        .collect();
    write_corpus(out, &records)?;
    Ok(stats)
}

/// Stratifies on the manual label, writes the corpus with its split column
/// filled in, and records the seed in a sidecar file.
pub fn split(input: &Path, out: &Path, seed: u64) -> Result<SplitSidecar> {
    let mut records = read_corpus(input)?;
    let split = DatasetSplit::from_manual_labels(&records, seed, Ratios::default())?;
    split.apply(&mut records);
    write_corpus(out, &records)?;
    let sidecar = SplitSidecar {
        seed,
        ratios: split.ratios,
        sizes: split.sizes(),
    };
    let path = split_sidecar_path(out);
    std::fs::write(&path, serde_json::to_vec_pretty(&sidecar)?).with_context(|| path.display().to_string())?;
    Ok(sidecar)
}

fn read_sidecar(corpus: &Path) -> Result<Option<SplitSidecar>> {
    let path = split_sidecar_path(corpus);
    match std::fs::read(&path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).with_context(|| path.display().to_string())?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e).with_context(|| path.display().to_string()),
    }
}

fn corpus_split(corpus: &Path, records: &[CorpusRecord]) -> Result<DatasetSplit> {
    if records.iter().all(|r| r.split.is_none()) {
        bail!("{} has no split column values; run `dss split` first", corpus.display());
    }
    let seed = read_sidecar(corpus)?.map(|s| s.seed);
    Ok(DatasetSplit::from_records(records, seed))
}

pub fn train(config: &ClassifierConfig, corpus: &Path, out: &Path) -> Result<ModelArtifact> {
    let records = read_corpus(corpus)?;
    let split = corpus_split(corpus, &records)?;
    let artifact = classifier::train(config, &records, &split)?;
    artifact.save(out)?;
    Ok(artifact)
}

/// Writes every input record with its predicted label and class scores.
pub fn predict(model: &Path, input: &Path, out: &Path) -> Result<usize> {
    let artifact = ModelArtifact::load(model)?;
    let records = read_corpus(input)?;
    let texts: Vec<&str> = records.iter().map(|r| r.dss_text.as_str()).collect();
    let predictions = classifier::predict_batch(&artifact, &texts)?;
    let file = File::create(out).with_context(|| out.display().to_string())?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    wtr.write_record([
        "nct_id",
        "original_category",
        "dss_text",
        "first_posted_year",
        "manual_label",
        "split",
        "predicted_label",
        "score_yes",
        "score_no",
        "score_undecided",
    ])?;
    for (r, p) in records.iter().zip(&predictions) {
        wtr.write_record([
            r.nct_id.as_str().to_string(),
            r.original_category.to_string(),
            r.dss_text.clone(),
            r.first_posted_year.to_string(),
            r.manual_label.map(|l| l.to_string()).unwrap_or_default(),
            r.split.map(|s| s.to_string()).unwrap_or_default(),
            p.label.to_string(),
            p.scores[0].to_string(),
            p.scores[1].to_string(),
            p.scores[2].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(records.len())
}

/// Scores the model on the test segment of `corpus`. Writes the JSON report
/// to `out` and a text rendering next to it.
pub fn evaluate(
    model: &Path,
    corpus: &Path,
    target: Option<Target>,
    averaging: Averaging,
    out: &Path,
) -> Result<EvaluationReport> {
    let artifact = ModelArtifact::load(model)?;
    let target = target.unwrap_or(artifact.config.target);
    let records = read_corpus(corpus)?;
    let split = corpus_split(corpus, &records)?;
    let test: Vec<&CorpusRecord> = records.iter().filter(|r| r.split == Some(Segment::Test)).collect();
    if test.is_empty() {
        bail!("{} has an empty test segment", corpus.display());
    }
    let mut golds = Vec::with_capacity(test.len());
    for r in &test {
        match r.label_for(target) {
            Some(l) => golds.push(l),
            None => bail!("record {} has no {} label", r.nct_id, target.as_str()),
        }
    }
    let texts: Vec<&str> = test.iter().map(|r| r.dss_text.as_str()).collect();
    let preds: Vec<Label> = classifier::predict_batch(&artifact, &texts)?
        .into_iter()
        .map(|p| p.label)
        .collect();
    let matrix = confusion(&golds, &preds)?;
    let report = EvaluationReport::new(target, averaging, matrix, artifact.config.clone(), split.seed)?;
    std::fs::write(out, serde_json::to_vec_pretty(&report)?).with_context(|| out.display().to_string())?;
    let text_path = evaluation_text_path(out);
    std::fs::write(&text_path, report.to_text()).with_context(|| text_path.display().to_string())?;
    Ok(report)
}

pub fn report<W: Write>(kind: ReportKind, records: &[CorpusRecord], mut w: W) -> Result<()> {
    match kind {
        ReportKind::Agreement => {
            let report = eval_report::agreement(records)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
        }
        ReportKind::Discrepancies => {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["nct_id", "original_category", "manual_label", "dss_text"])?;
            for d in eval_report::discrepancies(records)? {
                wtr.write_record([
                    d.nct_id.as_str(),
                    d.original_category.as_str(),
                    d.manual_label.as_str(),
                    d.dss_text.as_str(),
                ])?;
            }
            wtr.flush()?;
        }
        ReportKind::Yearly => eval_report::write_yearly_csv(w, &eval_report::yearly_counts(records))?,
    }
    Ok(())
}

pub async fn annotate_serve(args: &ServeArgs) -> Result<()> {
    let store = Arc::new(CorpusStore::open(&args.corpus)?);
    let service = Arc::new(AnnotationService::new(
        store.clone(),
        Arc::new(dss_annotate::SystemClock),
        chrono::Duration::minutes(args.lease_minutes),
    ));
    let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
    tracing::info!(addr = %listener.local_addr()?, records = store.len(), "labeling service listening");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    dss_annotate::serve(listener, service, args.ui_dir.clone(), shutdown).await?;
    store.compact()?;
    tracing::info!("labels compacted into {}", args.corpus.display());
    Ok(())
}

pub fn synth(kind: SynthKind, seed: Option<u64>, per_class: usize) -> Vec<CorpusRecord> {
    match kind {
        SynthKind::Annotated => {
            let mut spec = SyntheticSpec::default();
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            annotated_corpus(&spec)
        }
        SynthKind::Separable => separable_corpus(per_class, seed.unwrap_or(3)),
    }
}
