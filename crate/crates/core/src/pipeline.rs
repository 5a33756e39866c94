//! Configuration and stage functions for the batch workflow
//! index → retrieve → predict → evaluate → select → correlate → report.
//!
//! Every stage is a plain function over in-memory values, so the CLI
//! subcommands and [`run_pipeline`] share one implementation. Intermediate
//! files are written losslessly; only the human-facing report is rounded.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::data_io::{
    self, parse_embeddings, parse_history, parse_nuggets, parse_predictor_scores, parse_qrels,
    parse_run_file, parse_true_scores, parse_variants, read_corpus, read_to_string, write_atomic,
    EmbeddingStore, HistoryEntry, NuggetJudgments, Precision, PredictionRecord, Qrels,
    TrueScoreRecord, VariantSet,
};
use crate::error::{Error, Result};
use crate::eval::{truth_table, CorrelationMethod, EvalConfig, Gain, MetricName, NuggetWeights};
use crate::index::{Bm25Params, Index, RankedList, RetrievalModel, DEFAULT_QL_MU};
use crate::predictors::{predict_all, PredictionInputs, PredictorSpec};
use crate::selection::{
    correlate_policies, evaluate_policies, write_correlations, write_report_csv,
    write_report_markdown, write_selections, CorrelationReport, SelectionPolicy,
};
use crate::tokenize::TokenizerConfig;

/// File names written into the output directory by [`run_pipeline`].
pub mod files {
    pub const INDEX: &str = "index";
    pub const RUN: &str = "run.txt";
    pub const SCORES: &str = "scores.tsv";
    pub const TRUTH: &str = "truth.tsv";
    pub const SELECTIONS: &str = "selections.tsv";
    pub const CORRELATIONS: &str = "correlations.tsv";
    pub const REPORT_CSV: &str = "report.csv";
    pub const REPORT_MD: &str = "report.md";
}

pub const RUN_TAG: &str = "qppsel";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Directory holding a saved index.
    pub index: Option<PathBuf>,
    /// Pre-computed runs; when absent, runs are produced by retrieval.
    pub runs: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub variants: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub nuggets: Option<PathBuf>,
    pub external_scores: Vec<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.index,
            &mut self.runs,
            &mut self.qrels,
            &mut self.variants,
            &mut self.embeddings,
            &mut self.references,
            &mut self.history,
            &mut self.nuggets,
            &mut self.output,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.external_scores.iter_mut().for_each(fix);
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub model: String,
    pub depth: usize,
    pub k1: f64,
    pub b: f64,
    pub mu: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let bm25 = Bm25Params::default();
        Self {
            model: "bm25".into(),
            depth: 100,
            k1: bm25.k1,
            b: bm25.b,
            mu: DEFAULT_QL_MU,
        }
    }
}

impl RetrievalConfig {
    pub fn model(&self) -> Result<RetrievalModel> {
        if self.depth == 0 {
            return Err(Error::Config("retrieval depth must be >= 1".into()));
        }
        RetrievalModel::from_name(
            &self.model,
            Bm25Params {
                k1: self.k1,
                b: self.b,
            },
            self.mu,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `linear` or `exponential`.
    pub gain: String,
    pub recall_threshold: u8,
    pub nugget_weights: NuggetWeights,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            gain: "linear".into(),
            recall_threshold: 1,
            nugget_weights: NuggetWeights::default(),
        }
    }
}

impl EvalSection {
    pub fn config(&self) -> Result<EvalConfig> {
        let gain = match self.gain.as_str() {
            "linear" => Gain::Linear,
            "exponential" => Gain::Exponential,
            other => {
                return Err(Error::UnknownName {
                    kind: "gain",
                    name: other.into(),
                    valid: "linear, exponential".into(),
                })
            }
        };
        Ok(EvalConfig {
            gain,
            recall_threshold: self.recall_threshold,
            nugget_weights: self.nugget_weights,
        })
    }
}

/// An experiment manifest (TOML). Relative paths are resolved against the
/// directory of the manifest file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Decimal places in reports.
    pub precision: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub metrics: Vec<String>,
    /// Policies to run; defaults to the original query, every predictor and
    /// one oracle per metric.
    pub policies: Option<Vec<String>>,
    pub correlation: Vec<String>,
    /// Correlate over all (need, variant) pairs instead of within needs.
    pub pooled: bool,
    pub stopwords: Vec<String>,
    pub paths: Paths,
    pub retrieval: RetrievalConfig,
    pub eval: EvalSection,
    pub predictors: Vec<PredictorSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            precision: 4,
            jobs: 0,
            metrics: MetricName::DEFAULTS.iter().map(|m| m.to_string()).collect(),
            policies: None,
            correlation: vec!["pearson".into(), "kendall".into()],
            pooled: false,
            stopwords: Vec::new(),
            paths: Paths::default(),
            retrieval: RetrievalConfig::default(),
            eval: EvalSection::default(),
            predictors: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.paths.rebase(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn metric_names(&self) -> Result<Vec<MetricName>> {
        parse_list(&self.metrics)
    }

    pub fn correlation_methods(&self) -> Result<Vec<CorrelationMethod>> {
        parse_list(&self.correlation)
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig::with_stopwords(&self.stopwords)
    }

    pub fn report_precision(&self) -> Precision {
        Precision::Fixed(self.precision)
    }
}

pub fn parse_list<T: std::str::FromStr<Err = Error>, S: AsRef<str>>(names: &[S]) -> Result<Vec<T>> {
    names.iter().map(|n| n.as_ref().trim().parse()).collect()
}

/// Run `f` on a pool of `jobs` threads (0: all cores).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("no {what} path configured")))
}

pub fn load_variants(path: &Path) -> Result<Vec<VariantSet>> {
    parse_variants(&read_to_string(path)?)
}

pub fn load_runs(path: &Path) -> Result<Vec<RankedList>> {
    Ok(parse_run_file(&read_to_string(path)?)?.value)
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(&read_to_string(path)?)
}

pub fn load_nuggets(path: &Path) -> Result<NuggetJudgments> {
    parse_nuggets(&read_to_string(path)?)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    parse_embeddings(&read_to_string(path)?)
}

pub fn load_references(path: &Path) -> Result<Vec<Vec<f64>>> {
    Ok(load_embeddings(path)?.vectors())
}

pub fn load_history(path: &Path) -> Result<Vec<HistoryEntry>> {
    parse_history(&read_to_string(path)?)
}

pub fn load_scores(path: &Path) -> Result<Vec<PredictionRecord>> {
    parse_predictor_scores(&read_to_string(path)?)
}

pub fn load_truth(path: &Path) -> Result<Vec<TrueScoreRecord>> {
    parse_true_scores(&read_to_string(path)?)
}

pub fn build_index(corpus: &Path, tokenizer: &TokenizerConfig) -> Result<Index> {
    Index::build(read_corpus(corpus)?, tokenizer)
}

/// Retrieve the top `depth` documents for every variant. Variants that
/// retrieve nothing get no list.
pub fn retrieve_all(
    index: &Index,
    variants: &[VariantSet],
    depth: usize,
    model: RetrievalModel,
) -> Result<Vec<RankedList>> {
    let queries: Vec<_> = variants.iter().flat_map(|s| &s.variants).collect();
    let lists: Vec<RankedList> = queries
        .par_iter()
        .map(|v| {
            let entries = index.retrieve(&index.tokenize(&v.text), depth, model)?;
            Ok(RankedList::new(
                v.need_id.clone(),
                v.variant_id.clone(),
                entries,
            ))
        })
        .collect::<Result<_>>()?;
    let mut lists: Vec<RankedList> = lists.into_iter().filter(|l| !l.is_empty()).collect();
    lists.sort_by(|a, b| (&a.need_id, &a.variant_id).cmp(&(&b.need_id, &b.variant_id)));
    Ok(lists)
}

/// Append external predictor scores, rejecting any (need, variant,
/// predictor) key that is already present.
pub fn merge_scores(
    mut records: Vec<PredictionRecord>,
    external: Vec<PredictionRecord>,
) -> Result<Vec<PredictionRecord>> {
    records.extend(external);
    records.sort_by(|a, b| {
        (&a.need_id, &a.variant_id, &a.predictor).cmp(&(&b.need_id, &b.variant_id, &b.predictor))
    });
    if let Some(w) = records.windows(2).find(|w| {
        (&w[0].need_id, &w[0].variant_id, &w[0].predictor)
            == (&w[1].need_id, &w[1].variant_id, &w[1].predictor)
    }) {
        return Err(Error::InvalidRecord {
            record: format!(
                "({}, {}, {})",
                w[0].need_id, w[0].variant_id, w[0].predictor
            ),
            field: "predictor".into(),
            message: "score given by more than one source".into(),
        });
    }
    Ok(records)
}

/// Needs to report on: those of the variant sets, or else every need that
/// has a prediction or a true score.
pub fn needs(
    variants: Option<&[VariantSet]>,
    predictions: &[PredictionRecord],
    truth: &[TrueScoreRecord],
) -> Vec<String> {
    match variants {
        Some(sets) => {
            let mut v: Vec<String> = sets.iter().map(|s| s.need_id.clone()).collect();
            v.sort();
            v
        }
        None => crate::selection::needs_of(predictions, truth),
    }
}

/// The policy list used when none is configured: original, every predictor
/// in the scores (in first-seen order of `specs`, then external names), and
/// one oracle per metric.
pub fn default_policies(
    specs: &[PredictorSpec],
    predictions: &[PredictionRecord],
    metrics: &[MetricName],
) -> Vec<SelectionPolicy> {
    let mut names: Vec<String> = specs.iter().map(|s| s.label().to_string()).collect();
    let mut external: Vec<String> = predictions
        .iter()
        .map(|r| r.predictor.clone())
        .filter(|p| !names.contains(p))
        .collect();
    external.sort();
    external.dedup();
    names.extend(external);
    std::iter::once(SelectionPolicy::Original)
        .chain(names.into_iter().map(SelectionPolicy::Predictor))
        .chain(metrics.iter().map(|&m| SelectionPolicy::Oracle(m)))
        .collect()
}

/// Predictor names in the order they appear in `policies`.
pub fn predictor_names(policies: &[SelectionPolicy]) -> Vec<String> {
    policies
        .iter()
        .filter_map(|p| match p {
            SelectionPolicy::Predictor(n) => Some(n.clone()),
            _ => None,
        })
        .collect()
}

pub fn correlate_all(
    predictions: &[PredictionRecord],
    truth: &[TrueScoreRecord],
    predictors: &[String],
    metrics: &[MetricName],
    methods: &[CorrelationMethod],
    pooled: bool,
) -> Result<Vec<CorrelationReport>> {
    let mut out = Vec::new();
    for p in predictors {
        for &m in metrics {
            for &method in methods {
                out.push(correlate_policies(
                    predictions,
                    truth,
                    p,
                    m,
                    method,
                    pooled,
                )?);
            }
        }
    }
    Ok(out)
}

/// Where [`run_pipeline`] put its outputs.
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
    pub undefined_predictions: usize,
}

/// Run every stage and write all outputs into the configured directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutputs> {
    let out = require(&cfg.paths.output, "output")?.to_path_buf();
    let precision = cfg.report_precision();
    let metrics = cfg.metric_names()?;
    let methods = cfg.correlation_methods()?;
    let eval_cfg = cfg.eval.config()?;
    let model = cfg.retrieval.model()?;
    for spec in &cfg.predictors {
        spec.resolve()?;
    }
    let policies: Option<Vec<SelectionPolicy>> =
        cfg.policies.as_deref().map(parse_list).transpose()?;

    let variants = load_variants(require(&cfg.paths.variants, "variants")?)?;
    let mut written = Vec::new();
    let mut write = |name: &str, contents: &str| -> Result<()> {
        let p = out.join(name);
        write_atomic(&p, contents)?;
        written.push(p);
        Ok(())
    };

    let index = match (&cfg.paths.index, &cfg.paths.corpus) {
        (Some(dir), _) if dir.join("index.json").exists() => Some(Index::load(dir)?),
        (_, Some(corpus)) => {
            let index = build_index(corpus, &cfg.tokenizer())?;
            let dir = cfg
                .paths
                .index
                .clone()
                .unwrap_or_else(|| out.join(files::INDEX));
            index.save(&dir)?;
            Some(index)
        }
        _ => None,
    };
    log::info!("index ready");

    let runs = match (&cfg.paths.runs, &index) {
        (Some(path), _) => load_runs(path)?,
        (None, Some(index)) => with_jobs(cfg.jobs, || {
            retrieve_all(index, &variants, cfg.retrieval.depth, model)
        })??,
        (None, None) => {
            return Err(Error::Config(
                "need either runs or a corpus/index to retrieve from".into(),
            ))
        }
    };
    write(
        files::RUN,
        &data_io::write_run_file(&runs, RUN_TAG, Precision::Lossless),
    )?;
    log::info!("{} ranked lists", runs.len());

    let embeddings = cfg
        .paths
        .embeddings
        .as_deref()
        .map(load_embeddings)
        .transpose()?;
    let references = cfg
        .paths
        .references
        .as_deref()
        .map(load_references)
        .transpose()?;
    let history = cfg.paths.history.as_deref().map(load_history).transpose()?;
    let inputs = PredictionInputs {
        variants: Some(&variants),
        runs: Some(&runs),
        index: index.as_ref(),
        embeddings: embeddings.as_ref(),
        references: references.as_deref(),
        history: history.as_deref(),
        model,
    };
    let batch = predict_all(&cfg.predictors, &inputs, cfg.jobs)?;
    let mut external = Vec::new();
    for path in &cfg.paths.external_scores {
        external.extend(load_scores(path)?);
    }
    let predictions = merge_scores(batch.records, external)?;
    write(
        files::SCORES,
        &data_io::write_predictor_scores(&predictions, Precision::Lossless),
    )?;
    log::info!("{} predictions", predictions.len());

    let qrels = cfg.paths.qrels.as_deref().map(load_qrels).transpose()?;
    let nuggets = cfg.paths.nuggets.as_deref().map(load_nuggets).transpose()?;
    let truth = with_jobs(cfg.jobs, || {
        truth_table(
            &runs,
            qrels.as_ref(),
            nuggets.as_ref(),
            Some(&variants),
            &metrics,
            &eval_cfg,
        )
    })??;
    write(
        files::TRUTH,
        &data_io::write_true_scores(&truth, Precision::Lossless),
    )?;

    let policies =
        policies.unwrap_or_else(|| default_policies(&cfg.predictors, &predictions, &metrics));
    let needs = needs(Some(&variants), &predictions, &truth);
    let selections = crate::selection::select_all(&policies, &predictions, &truth, &needs)?;
    write(files::SELECTIONS, &write_selections(&selections, precision))?;

    let correlations = correlate_all(
        &predictions,
        &truth,
        &predictor_names(&policies),
        &metrics,
        &methods,
        cfg.pooled,
    )?;
    write(
        files::CORRELATIONS,
        &write_correlations(&correlations, precision),
    )?;

    let (_, report) = evaluate_policies(&policies, &predictions, &truth, &needs, &metrics)?;
    write(files::REPORT_CSV, &write_report_csv(&report, precision))?;
    write(files::REPORT_MD, &write_report_markdown(&report, precision))?;

    Ok(PipelineOutputs {
        dir: out,
        written,
        undefined_predictions: batch.undefined.len(),
    })
}
