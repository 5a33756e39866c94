//! Predictor registry and batch scoring.
//!
//! Every predictor is addressed by a fixed name string (`idf_max`, `nqc_norm`,
//! ...). [`predict_all`] evaluates a list of configured predictors over every
//! query variant in parallel and returns records in a fixed order, so output
//! files do not depend on thread scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{EmbeddingStore, HistoryEntry, PredictionRecord, VariantSet};
use crate::error::{Error, Result};
use crate::index::{Index, RankedList, RetrievalModel, DEFAULT_QL_MU};
use crate::qpp_post::{self, NormalizationContext, ScoreList};
use crate::qpp_pre::{self, Aggregator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Original,
    Pre,
    Post,
    Oracle,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Original => "Original",
            Block::Pre => "Pre-retrieval",
            Block::Post => "Post-retrieval",
            Block::Oracle => "Oracle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Predictor {
    Idf(Aggregator),
    Ictf(Aggregator),
    Scq(Aggregator),
    ScsApx,
    ScsFull,
    Ql,
    Dm,
    QsdPre,
    Clarity,
    Wig { normalized: bool },
    Nqc { normalized: bool },
    Smv { normalized: bool },
    SigmaMax,
    SigmaHalf,
    Rsd,
    QsdPost,
}

impl Predictor {
    pub const PRE: [&'static str; 15] = [
        "idf_avg", "idf_max", "idf_sum", "idf_std", "ictf_avg", "ictf_max", "ictf_sum", "scq_avg",
        "scq_max", "scq_sum", "scs_apx", "scs_full", "ql", "dm", "qsd_pre",
    ];
    pub const POST: [&'static str; 11] = [
        "clarity",
        "wig",
        "wig_norm",
        "nqc",
        "nqc_norm",
        "smv",
        "smv_norm",
        "sigma_max",
        "sigma_half",
        "rsd",
        "qsd_post",
    ];

    pub fn block(self) -> Block {
        match self {
            Predictor::Idf(_)
            | Predictor::Ictf(_)
            | Predictor::Scq(_)
            | Predictor::ScsApx
            | Predictor::ScsFull
            | Predictor::Ql
            | Predictor::Dm
            | Predictor::QsdPre => Block::Pre,
            _ => Block::Post,
        }
    }

    fn needs_run(self) -> bool {
        self.block() == Block::Post
    }

    /// Report block of a predictor name; names outside the registry are
    /// external (e.g. supervised) post-retrieval predictors.
    pub fn block_of(name: &str) -> Block {
        name.parse::<Predictor>()
            .map(Predictor::block)
            .unwrap_or(Block::Post)
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let norm = |n: bool| if n { "_norm" } else { "" };
        match self {
            Predictor::Idf(a) => write!(f, "idf_{a}"),
            Predictor::Ictf(a) => write!(f, "ictf_{a}"),
            Predictor::Scq(a) => write!(f, "scq_{a}"),
            Predictor::ScsApx => f.write_str("scs_apx"),
            Predictor::ScsFull => f.write_str("scs_full"),
            Predictor::Ql => f.write_str("ql"),
            Predictor::Dm => f.write_str("dm"),
            Predictor::QsdPre => f.write_str("qsd_pre"),
            Predictor::Clarity => f.write_str("clarity"),
            Predictor::Wig { normalized } => write!(f, "wig{}", norm(*normalized)),
            Predictor::Nqc { normalized } => write!(f, "nqc{}", norm(*normalized)),
            Predictor::Smv { normalized } => write!(f, "smv{}", norm(*normalized)),
            Predictor::SigmaMax => f.write_str("sigma_max"),
            Predictor::SigmaHalf => f.write_str("sigma_half"),
            Predictor::Rsd => f.write_str("rsd"),
            Predictor::QsdPost => f.write_str("qsd_post"),
        }
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownName {
            kind: "predictor",
            name: s.to_string(),
            valid: Predictor::PRE
                .iter()
                .chain(Predictor::POST.iter())
                .copied()
                .collect::<Vec<_>>()
                .join(", "),
        };
        if !Predictor::PRE.contains(&s) && !Predictor::POST.contains(&s) {
            return Err(unknown());
        }
        let p = match s {
            "scs_apx" => Predictor::ScsApx,
            "scs_full" => Predictor::ScsFull,
            "ql" => Predictor::Ql,
            "dm" => Predictor::Dm,
            "qsd_pre" => Predictor::QsdPre,
            "clarity" => Predictor::Clarity,
            "wig" => Predictor::Wig { normalized: false },
            "wig_norm" => Predictor::Wig { normalized: true },
            "nqc" => Predictor::Nqc { normalized: false },
            "nqc_norm" => Predictor::Nqc { normalized: true },
            "smv" => Predictor::Smv { normalized: false },
            "smv_norm" => Predictor::Smv { normalized: true },
            "sigma_max" => Predictor::SigmaMax,
            "sigma_half" => Predictor::SigmaHalf,
            "rsd" => Predictor::Rsd,
            "qsd_post" => Predictor::QsdPost,
            _ => {
                let (family, agg) = s.split_once('_').ok_or_else(unknown)?;
                let agg: Aggregator = agg.parse()?;
                match family {
                    "idf" => Predictor::Idf(agg),
                    "ictf" => Predictor::Ictf(agg),
                    "scq" => Predictor::Scq(agg),
                    _ => return Err(unknown()),
                }
            }
        };
        Ok(p)
    }
}

fn default_k() -> usize {
    100
}

fn default_mu() -> f64 {
    DEFAULT_QL_MU
}

fn default_neighbors() -> usize {
    5
}

/// A predictor together with its parameters. Parameters that a predictor
/// does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    pub name: String,
    /// Name written to the scores file; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Score-list depth for post-retrieval predictors.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Dirichlet prior of clarity's document models.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Neighbour count for the query-space predictors.
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
    /// Depth of the document sets compared by `qsd_post`.
    #[serde(default = "default_k")]
    pub k_docs: usize,
}

impl PredictorSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            label: None,
            k: default_k(),
            mu: default_mu(),
            neighbors: default_neighbors(),
            k_docs: default_k(),
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }

    /// Parse the name and check the parameters.
    pub fn resolve(&self) -> Result<Predictor> {
        let p: Predictor = self.name.parse()?;
        if self.k == 0 || self.k_docs == 0 || self.neighbors == 0 {
            return Err(Error::param(format!(
                "{}: k, k_docs and neighbors must be >= 1",
                self.label()
            )));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::param(format!(
                "{}: mu must be finite and >= 0",
                self.label()
            )));
        }
        Ok(p)
    }
}

/// Everything a predictor may read. Inputs a predictor needs but that are
/// absent make the batch fail up front with a usage error.
#[derive(Clone, Copy)]
pub struct PredictionInputs<'a> {
    pub variants: Option<&'a [VariantSet]>,
    pub runs: Option<&'a [RankedList]>,
    pub index: Option<&'a Index>,
    pub embeddings: Option<&'a EmbeddingStore>,
    pub references: Option<&'a [Vec<f64>]>,
    pub history: Option<&'a [HistoryEntry]>,
    /// Model used for the collection score `s_C` of the normalized variants.
    pub model: RetrievalModel,
}

impl<'a> PredictionInputs<'a> {
    pub fn new(model: RetrievalModel) -> Self {
        Self {
            variants: None,
            runs: None,
            index: None,
            embeddings: None,
            references: None,
            history: None,
            model,
        }
    }
}

/// Predictor output plus the list of (variant, predictor) pairs that had no
/// defined value.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub records: Vec<PredictionRecord>,
    pub undefined: Vec<String>,
}

fn require<'a, T: ?Sized>(x: Option<&'a T>, what: &str, name: &str) -> Result<&'a T> {
    x.ok_or_else(|| Error::param(format!("predictor {name} needs {what}")))
}

fn check_inputs(p: Predictor, name: &str, inputs: &PredictionInputs) -> Result<()> {
    match p {
        Predictor::Dm => {
            require(inputs.embeddings, "embeddings", name)?;
            require(inputs.references, "reference vectors", name)?;
        }
        Predictor::QsdPre | Predictor::QsdPost => {
            require(inputs.embeddings, "embeddings", name)?;
            require(inputs.history, "a query history", name)?;
        }
        Predictor::Clarity => {
            require(inputs.index, "an index", name)?;
        }
        Predictor::Wig { .. } => {
            require(inputs.variants, "query variants", name)?;
        }
        _ if p.block() == Block::Pre => {
            require(inputs.index, "an index", name)?;
            require(inputs.variants, "query variants", name)?;
        }
        _ => {}
    }
    if p.needs_run() {
        require(inputs.runs, "ranked lists", name)?;
    }
    Ok(())
}

struct Query<'a> {
    need_id: &'a str,
    variant_id: &'a str,
    text: Option<&'a str>,
    list: Option<&'a RankedList>,
}

impl Query<'_> {
    fn qid(&self) -> String {
        format!("{}.{}", self.need_id, self.variant_id)
    }
}

fn tokens(q: &Query, inputs: &PredictionInputs) -> Result<Vec<String>> {
    let text = q
        .text
        .ok_or_else(|| Error::undefined(format!("no query text for {}", q.qid())))?;
    Ok(match inputs.index {
        Some(index) => index.tokenize(text),
        None => crate::tokenize::TokenizerConfig::default()
            .build()
            .tokenize(text),
    })
}

fn score_list<'a>(q: &Query<'a>) -> Result<(&'a RankedList, ScoreList)> {
    let list = q
        .list
        .ok_or_else(|| Error::undefined(format!("no ranked list for {}", q.qid())))?;
    Ok((list, ScoreList::from_ranked(list)?))
}

fn compute(
    p: Predictor,
    spec: &PredictorSpec,
    q: &Query,
    inputs: &PredictionInputs,
) -> Result<f64> {
    let stats = || inputs.index.map(Index::stats).expect("checked up front");
    let collection = |query: &[String]| {
        inputs
            .index
            .map(|i| i.collection_score(query, inputs.model))
    };
    match p {
        Predictor::Idf(a) => qpp_pre::idf(&tokens(q, inputs)?, stats(), a),
        Predictor::Ictf(a) => qpp_pre::ictf(&tokens(q, inputs)?, stats(), a),
        Predictor::Scq(a) => qpp_pre::scq(&tokens(q, inputs)?, stats(), a),
        Predictor::ScsApx => qpp_pre::scs_apx(&tokens(q, inputs)?, stats()),
        Predictor::ScsFull => qpp_pre::scs_full(&tokens(q, inputs)?, stats()),
        Predictor::Ql => Ok(qpp_pre::ql_pre(&tokens(q, inputs)?, stats())),
        Predictor::Dm => qpp_pre::dm(
            &q.qid(),
            inputs.embeddings.expect("checked"),
            inputs.references.expect("checked"),
        ),
        Predictor::QsdPre => qpp_pre::qsd_pre(
            &q.qid(),
            inputs.embeddings.expect("checked"),
            inputs.history.expect("checked"),
            spec.neighbors,
        ),
        Predictor::Clarity => {
            let (list, _) = score_list(q)?;
            let index = inputs.index.expect("checked");
            qpp_post::clarity_indexed(list, index, spec.k, spec.mu)
        }
        Predictor::QsdPost => {
            let (list, _) = score_list(q)?;
            qpp_post::qsd_post(
                &q.qid(),
                inputs.embeddings.expect("checked"),
                inputs.history.expect("checked"),
                list,
                spec.neighbors,
                spec.k_docs,
            )
        }
        Predictor::Wig { normalized } => {
            let (_, scores) = score_list(q)?;
            let query = tokens(q, inputs)?;
            if query.is_empty() {
                return Err(Error::undefined(format!("{} has no query tokens", q.qid())));
            }
            let ctx = NormalizationContext::new(&scores, collection(&query));
            qpp_post::wig(&scores, query.len(), spec.k, normalized, &ctx)
        }
        Predictor::Nqc { normalized } | Predictor::Smv { normalized } => {
            let (_, scores) = score_list(q)?;
            let s_c = if normalized {
                match q.text {
                    Some(_) => collection(&tokens(q, inputs)?),
                    None => None,
                }
            } else {
                None
            };
            let ctx = NormalizationContext::new(&scores, s_c);
            if matches!(p, Predictor::Nqc { .. }) {
                qpp_post::nqc(&scores, spec.k, normalized, &ctx)
            } else {
                qpp_post::smv(&scores, spec.k, normalized, &ctx)
            }
        }
        Predictor::SigmaMax => qpp_post::sigma_max(&score_list(q)?.1, spec.k),
        Predictor::SigmaHalf => qpp_post::sigma_half(&score_list(q)?.1),
        Predictor::Rsd => qpp_post::rsd(&score_list(q)?.1, spec.k),
    }
}

/// The (need, variant) pairs to score: the variant sets when given,
/// otherwise every ranked list.
fn queries<'a>(inputs: &PredictionInputs<'a>) -> Vec<Query<'a>> {
    let lists: BTreeMap<(&str, &str), &RankedList> = inputs
        .runs
        .unwrap_or_default()
        .iter()
        .map(|l| ((l.need_id.as_str(), l.variant_id.as_str()), l))
        .collect();
    match inputs.variants {
        Some(sets) => sets
            .iter()
            .flat_map(|s| &s.variants)
            .map(|v| Query {
                need_id: &v.need_id,
                variant_id: &v.variant_id,
                text: Some(&v.text),
                list: lists
                    .get(&(v.need_id.as_str(), v.variant_id.as_str()))
                    .copied(),
            })
            .collect(),
        None => lists
            .into_iter()
            .map(|((need_id, variant_id), list)| Query {
                need_id,
                variant_id,
                text: None,
                list: Some(list),
            })
            .collect(),
    }
}

/// Run every predictor over every query variant using up to `jobs` threads
/// (0 means all cores). Undefined values are reported, not recorded.
pub fn predict_all(
    specs: &[PredictorSpec],
    inputs: &PredictionInputs,
    jobs: usize,
) -> Result<PredictionBatch> {
    let mut labels = BTreeSet::new();
    let mut resolved = Vec::with_capacity(specs.len());
    for spec in specs {
        let p = spec.resolve()?;
        if !labels.insert(spec.label()) {
            return Err(Error::param(format!(
                "predictor `{}` listed twice",
                spec.label()
            )));
        }
        resolved.push((p, spec));
    }
    for &(p, spec) in &resolved {
        check_inputs(p, spec.label(), inputs)?;
    }
    let queries = queries(inputs);
    let tasks: Vec<(&Query, Predictor, &PredictorSpec)> = queries
        .iter()
        .flat_map(|q| resolved.iter().map(move |&(p, s)| (q, p, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    let results: Vec<Result<f64>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(q, p, spec)| compute(*p, spec, q, inputs))
            .collect()
    });

    let mut records = Vec::new();
    let mut undefined = Vec::new();
    for ((q, _, spec), r) in tasks.iter().zip(results) {
        match r {
            Ok(score) => records.push(PredictionRecord {
                need_id: q.need_id.to_string(),
                variant_id: q.variant_id.to_string(),
                predictor: spec.label().to_string(),
                score,
            }),
            Err(e) if e.is_undefined() => {
                undefined.push(format!("{} {}: {e}", q.qid(), spec.label()))
            }
            Err(e) => return Err(e),
        }
    }
    records.sort_by(|a, b| {
        (&a.need_id, &a.variant_id, &a.predictor).cmp(&(&b.need_id, &b.variant_id, &b.predictor))
    });
    for u in &undefined {
        log::debug!("{u}");
    }
    Ok(PredictionBatch { records, undefined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::parse_variants;
    use crate::index::toy_corpus;
    use crate::TokenizerConfig;

    #[test]
    fn names_round_trip() {
        for name in Predictor::PRE.iter().chain(Predictor::POST.iter()) {
            let p: Predictor = name.parse().unwrap();
            assert_eq!(p.to_string(), *name);
        }
        assert_eq!(Predictor::block_of("idf_max"), Block::Pre);
        assert_eq!(Predictor::block_of("bert_qpp"), Block::Post);
        let err = "scq_std".parse::<Predictor>().unwrap_err();
        assert!(err.is_usage() && err.to_string().contains("qsd_post"));
    }

    #[test]
    fn spec_defaults_from_toml() {
        let spec: PredictorSpec = toml::from_str("name = \"nqc\"\nk = 10").unwrap();
        assert_eq!(spec.k, 10);
        assert_eq!(spec.neighbors, 5);
        assert!(toml::from_str::<PredictorSpec>("name = \"nqc\"\nkk = 1").is_err());
    }

    #[test]
    fn batch_over_toy() {
        let index = Index::build(toy_corpus(), &TokenizerConfig::default()).unwrap();
        let variants = parse_variants("n1\tv00\toriginal\ta b\nn1\tv01\tMuGI\tzzz\n").unwrap();
        let model = RetrievalModel::default();
        let runs: Vec<RankedList> = variants[0]
            .variants
            .iter()
            .map(|v| {
                let e = index.retrieve(&index.tokenize(&v.text), 10, model).unwrap();
                RankedList::new(v.need_id.clone(), v.variant_id.clone(), e)
            })
            .collect();
        let inputs = PredictionInputs {
            variants: Some(&variants),
            runs: Some(&runs),
            index: Some(&index),
            ..PredictionInputs::new(model)
        };
        let specs: Vec<PredictorSpec> = ["idf_max", "nqc", "ql"]
            .into_iter()
            .map(PredictorSpec::new)
            .collect();
        let one = predict_all(&specs, &inputs, 1).unwrap();
        let four = predict_all(&specs, &inputs, 4).unwrap();
        assert_eq!(one, four);
        // v01 is all OOV: idf and nqc undefined, ql defined.
        assert_eq!(one.records.len(), 4);
        assert_eq!(one.undefined.len(), 2);
        let idf = &one.records[0];
        assert_eq!(
            (idf.variant_id.as_str(), idf.predictor.as_str()),
            ("v00", "idf_max")
        );
        assert!((idf.score - (4.0f64 / 2.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_inputs_fail_up_front() {
        let inputs = PredictionInputs::new(RetrievalModel::default());
        let err = predict_all(&[PredictorSpec::new("dm")], &inputs, 1).unwrap_err();
        assert!(err.is_usage(), "{err}");
        let err = predict_all(
            &[PredictorSpec::new("nqc"), PredictorSpec::new("nqc")],
            &inputs,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("twice"));
    }
}
