//! `qppsel`: batch front end for indexing, retrieval, query performance
//! prediction, variant selection and reporting.
//!
//! Every subcommand accepts `--config <toml>`; explicit flags override the
//! manifest. With a manifest, outputs default to the files that `pipeline`
//! would write in the configured output directory.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use qppsel::data_io::{
    write_predictor_scores, write_run_file, write_true_scores, Precision, VariantSet,
};
use qppsel::eval::{truth_table, CorrelationMethod, MetricName};
use qppsel::pipeline::{self as pl, files, PipelineConfig};
use qppsel::predictors::{predict_all, PredictionInputs, PredictorSpec};
use qppsel::selection::{
    evaluate_policies, select_all, write_correlations, write_report_csv, write_report_markdown,
    write_selections, SelectionPolicy,
};
use qppsel::{Error, Index};

#[derive(Parser)]
#[command(
    name = "qppsel",
    version,
    about = "Query performance prediction for query-variant selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an inverted index from a corpus (JSONL or TSV).
    Index(IndexArgs),
    /// Retrieve a ranked list for every query variant.
    Retrieve(RetrieveArgs),
    /// Score query variants with pre- and post-retrieval predictors.
    Predict(PredictArgs),
    /// Compute true effectiveness (nDCG, recall, nugget scores).
    Evaluate(EvaluateArgs),
    /// Pick one variant per need under each policy.
    Select(SelectArgs),
    /// Correlate predictor scores with true effectiveness.
    Correlate(CorrelateArgs),
    /// Summarise selection quality per policy and metric.
    Report(ReportArgs),
    /// Run every stage from a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for the index.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Comma-separated stopwords.
    #[arg(long, value_delimiter = ',')]
    stopwords: Option<Vec<String>>,
}

#[derive(Args)]
struct RetrievalFlags {
    /// `bm25` or `ql`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    variants: Option<PathBuf>,
    #[command(flatten)]
    retrieval: RetrievalFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    /// Pre-retrieval predictors (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pre: Vec<String>,
    /// Post-retrieval predictors (comma-separated).
    #[arg(long, value_delimiter = ',')]
    post: Vec<String>,
    /// Score-list depth for every post-retrieval predictor.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    variants: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    references: Option<PathBuf>,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Externally computed predictor scores to merge in.
    #[arg(long)]
    external: Vec<PathBuf>,
    #[command(flatten)]
    retrieval: RetrievalFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    nuggets: Option<PathBuf>,
    #[arg(long)]
    variants: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// `linear` or `exponential`.
    #[arg(long)]
    gain: Option<String>,
    #[arg(long)]
    recall_threshold: Option<u8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecisionInputs {
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    variants: Option<PathBuf>,
    /// `original`, `oracle:<metric>` or a predictor name (comma-separated).
    #[arg(long = "policy", value_delimiter = ',')]
    policies: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Decimal places in the output.
    #[arg(long)]
    precision: Option<usize>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: DecisionInputs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: DecisionInputs,
    /// `pearson`, `kendall` (comma-separated).
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Correlate over all pairs instead of within each need.
    #[arg(long)]
    pooled: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: DecisionInputs,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory (overrides the manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Manifest (or defaults) plus the `--jobs` override.
fn load_config(common: &Common) -> Result<(PipelineConfig, bool)> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok((cfg, common.config.is_some()))
}

fn pick(flag: &Option<PathBuf>, cfg: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.clone())
}

fn required(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::Config(format!("missing --{what} (or a manifest entry for it)")).into())
}

/// A default location inside the manifest's output directory.
fn in_output(cfg: &PipelineConfig, name: &str) -> Option<PathBuf> {
    cfg.paths.output.as_ref().map(|o| o.join(name))
}

fn index_dir(flag: &Option<PathBuf>, cfg: &PipelineConfig) -> Option<PathBuf> {
    pick(flag, &cfg.paths.index).or_else(|| in_output(cfg, files::INDEX))
}

fn run_path(flag: &Option<PathBuf>, cfg: &PipelineConfig) -> Option<PathBuf> {
    pick(flag, &cfg.paths.runs).or_else(|| in_output(cfg, files::RUN))
}

/// Write to a file atomically, or to stdout without a path.
fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => Ok(qppsel::data_io::write_atomic(p, contents)?),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn apply_retrieval(cfg: &mut PipelineConfig, f: &RetrievalFlags) {
    let r = &mut cfg.retrieval;
    if let Some(m) = &f.model {
        r.model = m.clone();
    }
    r.depth = f.depth.unwrap_or(r.depth);
    r.k1 = f.k1.unwrap_or(r.k1);
    r.b = f.b.unwrap_or(r.b);
    r.mu = f.mu.unwrap_or(r.mu);
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let (mut cfg, _) = load_config(&a.common)?;
    if let Some(sw) = a.stopwords {
        cfg.stopwords = sw;
    }
    let corpus = required(pick(&a.corpus, &cfg.paths.corpus), "corpus")?;
    let dir = required(index_dir(&a.index, &cfg), "index")?;
    let index = pl::build_index(&corpus, &cfg.tokenizer())?;
    index.save(&dir)?;
    let s = index.stats();
    log::info!(
        "indexed {} documents, {} tokens, {} terms",
        s.doc_count(),
        s.total_tokens(),
        s.vocabulary_size()
    );
    Ok(())
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<()> {
    let (mut cfg, _) = load_config(&a.common)?;
    apply_retrieval(&mut cfg, &a.retrieval);
    let model = cfg.retrieval.model()?;
    let index = Index::load(&required(index_dir(&a.index, &cfg), "index")?)?;
    let variants = pl::load_variants(&required(
        pick(&a.variants, &cfg.paths.variants),
        "variants",
    )?)?;
    let runs = pl::with_jobs(cfg.jobs, || {
        pl::retrieve_all(&index, &variants, cfg.retrieval.depth, model)
    })??;
    let out = a.out.or_else(|| in_output(&cfg, files::RUN));
    emit(
        out.as_deref(),
        &write_run_file(&runs, pl::RUN_TAG, Precision::Lossless),
    )
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let (mut cfg, _) = load_config(&a.common)?;
    apply_retrieval(&mut cfg, &a.retrieval);
    let model = cfg.retrieval.model()?;

    let mut specs: Vec<PredictorSpec> = if a.pre.is_empty() && a.post.is_empty() {
        cfg.predictors.clone()
    } else {
        a.pre
            .iter()
            .chain(&a.post)
            .map(|name| {
                cfg.predictors
                    .iter()
                    .find(|s| s.label() == name)
                    .cloned()
                    .unwrap_or_else(|| PredictorSpec::new(name.clone()))
            })
            .collect()
    };
    if let Some(k) = a.k {
        specs.iter_mut().for_each(|s| s.k = k);
    }
    for s in &specs {
        s.resolve()?;
    }
    if specs.is_empty() {
        return Err(Error::Config("no predictors given (--pre/--post or manifest)".into()).into());
    }

    let variants = pick(&a.variants, &cfg.paths.variants)
        .map(|p| pl::load_variants(&p))
        .transpose()?;
    let runs = run_path(&a.run, &cfg)
        .filter(|p| a.run.is_some() || p.exists())
        .map(|p| pl::load_runs(&p))
        .transpose()?;
    let index = index_dir(&a.index, &cfg)
        .filter(|p| a.index.is_some() || p.join("index.json").exists())
        .map(|p| Index::load(&p))
        .transpose()?;
    let embeddings = pick(&a.embeddings, &cfg.paths.embeddings)
        .map(|p| pl::load_embeddings(&p))
        .transpose()?;
    let references = pick(&a.references, &cfg.paths.references)
        .map(|p| pl::load_references(&p))
        .transpose()?;
    let history = pick(&a.history, &cfg.paths.history)
        .map(|p| pl::load_history(&p))
        .transpose()?;

    let inputs = PredictionInputs {
        variants: variants.as_deref(),
        runs: runs.as_deref(),
        index: index.as_ref(),
        embeddings: embeddings.as_ref(),
        references: references.as_deref(),
        history: history.as_deref(),
        model,
    };
    let batch = predict_all(&specs, &inputs, cfg.jobs)?;
    let external_paths = if a.external.is_empty() {
        cfg.paths.external_scores.clone()
    } else {
        a.external
    };
    let mut external = Vec::new();
    for p in &external_paths {
        external.extend(pl::load_scores(p)?);
    }
    let records = pl::merge_scores(batch.records, external)?;
    if !batch.undefined.is_empty() {
        log::warn!(
            "{} predictions undefined and skipped",
            batch.undefined.len()
        );
    }
    let out = a.out.or_else(|| in_output(&cfg, files::SCORES));
    emit(
        out.as_deref(),
        &write_predictor_scores(&records, Precision::Lossless),
    )
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (mut cfg, _) = load_config(&a.common)?;
    if let Some(m) = a.metrics {
        cfg.metrics = m;
    }
    if let Some(g) = a.gain {
        cfg.eval.gain = g;
    }
    if let Some(t) = a.recall_threshold {
        cfg.eval.recall_threshold = t;
    }
    let metrics = cfg.metric_names()?;
    let eval_cfg = cfg.eval.config()?;
    let runs = pl::load_runs(&required(run_path(&a.run, &cfg), "run")?)?;
    let qrels = pick(&a.qrels, &cfg.paths.qrels)
        .map(|p| pl::load_qrels(&p))
        .transpose()?;
    let nuggets = pick(&a.nuggets, &cfg.paths.nuggets)
        .map(|p| pl::load_nuggets(&p))
        .transpose()?;
    let variants = pick(&a.variants, &cfg.paths.variants)
        .map(|p| pl::load_variants(&p))
        .transpose()?;
    let truth = pl::with_jobs(cfg.jobs, || {
        truth_table(
            &runs,
            qrels.as_ref(),
            nuggets.as_ref(),
            variants.as_deref(),
            &metrics,
            &eval_cfg,
        )
    })??;
    let out = a.out.or_else(|| in_output(&cfg, files::TRUTH));
    emit(
        out.as_deref(),
        &write_true_scores(&truth, Precision::Lossless),
    )
}

/// Loaded inputs shared by `select`, `correlate` and `report`.
struct Decision {
    cfg: PipelineConfig,
    predictions: Vec<qppsel::data_io::PredictionRecord>,
    truth: Vec<qppsel::data_io::TrueScoreRecord>,
    needs: Vec<String>,
    metrics: Vec<MetricName>,
    policies: Vec<SelectionPolicy>,
    precision: Precision,
}

fn load_decision(common: &Common, i: DecisionInputs, need_truth: bool) -> Result<Decision> {
    let (mut cfg, _) = load_config(common)?;
    if let Some(m) = i.metrics {
        cfg.metrics = m;
    }
    if let Some(p) = i.precision {
        cfg.precision = p;
    }
    let metrics = cfg.metric_names()?;
    let scores = required(
        i.scores.or_else(|| in_output(&cfg, files::SCORES)),
        "scores",
    )?;
    let predictions = pl::load_scores(&scores)?;
    let truth_path = i.truth.or_else(|| in_output(&cfg, files::TRUTH));
    let truth = match truth_path {
        Some(p) if need_truth || p.exists() => pl::load_truth(&p)?,
        None if need_truth => return Err(Error::Config("missing --truth".into()).into()),
        _ => Vec::new(),
    };
    let variants: Option<Vec<VariantSet>> = pick(&i.variants, &cfg.paths.variants)
        .map(|p| pl::load_variants(&p))
        .transpose()?;
    let needs = pl::needs(variants.as_deref(), &predictions, &truth);
    let policies = match i.policies.or_else(|| cfg.policies.clone()) {
        Some(names) => pl::parse_list(&names)?,
        None => pl::default_policies(&cfg.predictors, &predictions, &metrics),
    };
    Ok(Decision {
        precision: cfg.report_precision(),
        cfg,
        predictions,
        truth,
        needs,
        metrics,
        policies,
    })
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let d = load_decision(&a.common, a.inputs, false)?;
    let selections = select_all(&d.policies, &d.predictions, &d.truth, &d.needs)?;
    let out = a.out.or_else(|| in_output(&d.cfg, files::SELECTIONS));
    emit(out.as_deref(), &write_selections(&selections, d.precision))
}

fn cmd_correlate(a: CorrelateArgs) -> Result<()> {
    let d = load_decision(&a.common, a.inputs, true)?;
    let methods: Vec<CorrelationMethod> = match a.method {
        Some(m) => pl::parse_list(&m)?,
        None => d.cfg.correlation_methods()?,
    };
    let reports = pl::correlate_all(
        &d.predictions,
        &d.truth,
        &pl::predictor_names(&d.policies),
        &d.metrics,
        &methods,
        a.pooled || d.cfg.pooled,
    )?;
    let out = a.out.or_else(|| in_output(&d.cfg, files::CORRELATIONS));
    emit(out.as_deref(), &write_correlations(&reports, d.precision))
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let d = load_decision(&a.common, a.inputs, true)?;
    let (_, report) =
        evaluate_policies(&d.policies, &d.predictions, &d.truth, &d.needs, &d.metrics)?;
    let csv = a.csv.or_else(|| in_output(&d.cfg, files::REPORT_CSV));
    let md = a.markdown.or_else(|| in_output(&d.cfg, files::REPORT_MD));
    if let Some(p) = &csv {
        emit(Some(p), &write_report_csv(&report, d.precision))?;
    }
    let markdown = write_report_markdown(&report, d.precision);
    match (&md, &csv) {
        (Some(p), _) => emit(Some(p), &markdown),
        (None, Some(_)) => Ok(()),
        (None, None) => emit(None, &markdown),
    }
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let config = a
        .common
        .config
        .clone()
        .ok_or_else(|| Error::Config("pipeline needs --config".into()))?;
    let (mut cfg, _) = load_config(&a.common)?;
    if let Some(o) = a.out {
        cfg.paths.output = Some(o);
    }
    let outputs =
        pl::run_pipeline(&cfg).with_context(|| format!("pipeline {}", config.display()))?;
    if outputs.undefined_predictions > 0 {
        log::warn!(
            "{} predictions undefined and skipped",
            outputs.undefined_predictions
        );
    }
    log::info!(
        "wrote {} files to {}",
        outputs.written.len(),
        outputs.dir.display()
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_usage() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Select(a) => cmd_select(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Report(a) => cmd_report(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
