//! The decision layer: pick one variant per information need, either by a
//! predictor's argmax, by the true metric (oracle), or by keeping the
//! original query, then report how good those picks are.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::data_io::{Precision, PredictionRecord, TrueScoreRecord};
use crate::error::{Error, Result};
use crate::eval::{CorrelationMethod, CorrelationResult, MetricName};
use crate::predictors::{Block, Predictor};
use crate::ORIGINAL_VARIANT;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SelectionPolicy {
    Original,
    Predictor(String),
    Oracle(MetricName),
}

impl SelectionPolicy {
    pub fn block(&self) -> Block {
        match self {
            SelectionPolicy::Original => Block::Original,
            SelectionPolicy::Predictor(name) => Predictor::block_of(name),
            SelectionPolicy::Oracle(_) => Block::Oracle,
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::Original => f.write_str("original"),
            SelectionPolicy::Predictor(name) => f.write_str(name),
            SelectionPolicy::Oracle(m) => write!(f, "oracle:{m}"),
        }
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    /// `original`, `oracle:<metric>`, or any predictor name (external names
    /// included; they are checked against the loaded scores later).
    fn from_str(s: &str) -> Result<Self> {
        if s == "original" {
            Ok(SelectionPolicy::Original)
        } else if let Some(m) = s.strip_prefix("oracle:") {
            Ok(SelectionPolicy::Oracle(m.parse()?))
        } else if s.is_empty() || s.chars().any(char::is_whitespace) {
            Err(Error::param(format!("invalid policy name `{s}`")))
        } else {
            Ok(SelectionPolicy::Predictor(s.to_string()))
        }
    }
}

/// The variant a policy picked for one need.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub need_id: String,
    pub policy: SelectionPolicy,
    pub variant_id: String,
    /// The winning predicted (or, for the oracle, true) score.
    pub score: Option<f64>,
    /// No defined score existed, so the original query was kept.
    pub fallback: bool,
    /// True score of the chosen variant per metric; `None` where undefined.
    pub truth: BTreeMap<MetricName, Option<f64>>,
}

/// Argmax with the house tie rule: the original query wins ties, then the
/// smallest variant id.
pub fn argmax<'a, I>(scores: I) -> Option<(&'a str, f64)>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let rank = |id: &str| (id != ORIGINAL_VARIANT, id.to_string());
    scores.into_iter().fold(None, |best, (id, s)| match best {
        None => Some((id, s)),
        Some((bid, bs)) => {
            if s > bs || (s == bs && rank(id) < rank(bid)) {
                Some((id, s))
            } else {
                Some((bid, bs))
            }
        }
    })
}

fn choose(
    need_id: &str,
    policy: &SelectionPolicy,
    scores: Option<&BTreeMap<String, f64>>,
) -> SelectionResult {
    let picked = scores.and_then(|m| argmax(m.iter().map(|(v, &s)| (v.as_str(), s))));
    let (variant_id, score, fallback) = match picked {
        Some((v, s)) => (v.to_string(), Some(s), false),
        None => (ORIGINAL_VARIANT.to_string(), None, true),
    };
    SelectionResult {
        need_id: need_id.to_string(),
        policy: policy.clone(),
        variant_id,
        score,
        fallback,
        truth: BTreeMap::new(),
    }
}

/// Predictor argmax over one need's predictions (records for other needs or
/// predictors are ignored).
pub fn select_variant(
    need_id: &str,
    predictor: &str,
    predictions: &[PredictionRecord],
) -> SelectionResult {
    let scores: BTreeMap<String, f64> = predictions
        .iter()
        .filter(|r| r.need_id == need_id && r.predictor == predictor)
        .map(|r| (r.variant_id.clone(), r.score))
        .collect();
    choose(
        need_id,
        &SelectionPolicy::Predictor(predictor.to_string()),
        Some(&scores),
    )
}

/// Oracle argmax over one need's true scores for `metric`.
pub fn oracle_select(
    need_id: &str,
    metric: MetricName,
    truth: &[TrueScoreRecord],
) -> SelectionResult {
    let name = metric.to_string();
    let scores: BTreeMap<String, f64> = truth
        .iter()
        .filter(|r| r.need_id == need_id && r.metric == name)
        .map(|r| (r.variant_id.clone(), r.value))
        .collect();
    choose(need_id, &SelectionPolicy::Oracle(metric), Some(&scores))
}

/// need → key → variant → value
type Table = BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>;

fn prediction_table(records: &[PredictionRecord]) -> Table {
    let mut t = Table::new();
    for r in records {
        t.entry(r.need_id.clone())
            .or_default()
            .entry(r.predictor.clone())
            .or_default()
            .insert(r.variant_id.clone(), r.score);
    }
    t
}

fn truth_table(records: &[TrueScoreRecord]) -> Table {
    let mut t = Table::new();
    for r in records {
        t.entry(r.need_id.clone())
            .or_default()
            .entry(r.metric.clone())
            .or_default()
            .insert(r.variant_id.clone(), r.value);
    }
    t
}

fn lookup<'a>(t: &'a Table, need: &str, key: &str) -> Option<&'a BTreeMap<String, f64>> {
    t.get(need).and_then(|m| m.get(key))
}

fn select_one(
    policy: &SelectionPolicy,
    need: &str,
    preds: &Table,
    truths: &Table,
) -> SelectionResult {
    match policy {
        SelectionPolicy::Original => SelectionResult {
            fallback: false,
            ..choose(need, policy, None)
        },
        SelectionPolicy::Predictor(name) => choose(need, policy, lookup(preds, need, name)),
        SelectionPolicy::Oracle(m) => choose(need, policy, lookup(truths, need, &m.to_string())),
    }
}

fn check_predictors(policies: &[SelectionPolicy], predictions: &[PredictionRecord]) -> Result<()> {
    let known: BTreeSet<&str> = predictions.iter().map(|r| r.predictor.as_str()).collect();
    for p in policies {
        if let SelectionPolicy::Predictor(name) = p {
            if !known.contains(name.as_str()) {
                return Err(Error::UnknownName {
                    kind: "predictor",
                    name: name.clone(),
                    valid: known.iter().copied().collect::<Vec<_>>().join(", "),
                });
            }
        }
    }
    Ok(())
}

/// Apply each policy to each need, in the given order, without looking at
/// true scores except for oracle policies.
pub fn select_all(
    policies: &[SelectionPolicy],
    predictions: &[PredictionRecord],
    truth: &[TrueScoreRecord],
    needs: &[String],
) -> Result<Vec<SelectionResult>> {
    check_predictors(policies, predictions)?;
    let preds = prediction_table(predictions);
    let truths = truth_table(truth);
    Ok(policies
        .iter()
        .flat_map(|p| needs.iter().map(|n| select_one(p, n, &preds, &truths)))
        .collect())
}

/// Every need mentioned by predictions or truth, sorted.
pub fn needs_of(predictions: &[PredictionRecord], truth: &[TrueScoreRecord]) -> Vec<String> {
    let set: BTreeSet<&str> = predictions
        .iter()
        .map(|r| r.need_id.as_str())
        .chain(truth.iter().map(|r| r.need_id.as_str()))
        .collect();
    set.into_iter().map(String::from).collect()
}

/// One report cell: the mean true score of a policy on a metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Mean over the included needs; `None` if no need was included.
    pub mean: Option<f64>,
    pub needs: usize,
    /// Needs left out because the original query's score is undefined.
    pub excluded: usize,
    /// Strictly above the original query's mean.
    pub improved: bool,
    /// Highest mean within its pre- or post-retrieval block.
    pub best_in_block: bool,
    /// Oracle mean minus this mean.
    pub oracle_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub policy: SelectionPolicy,
    pub block: Block,
    /// Parallel to [`SummaryReport::metrics`].
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    pub metrics: Vec<MetricName>,
    /// Ordered Original, pre-retrieval, post-retrieval, oracle; requested
    /// order within a block.
    pub rows: Vec<ReportRow>,
}

impl SummaryReport {
    /// Recompute every flag and oracle gap from the numeric cells.
    pub fn annotate(&mut self) {
        for (j, metric) in self.metrics.iter().enumerate() {
            let original = self
                .rows
                .iter()
                .find(|r| r.policy == SelectionPolicy::Original)
                .and_then(|r| r.cells[j].mean);
            let oracle = self
                .rows
                .iter()
                .find(|r| r.policy == SelectionPolicy::Oracle(*metric))
                .and_then(|r| r.cells[j].mean);
            let mut best: BTreeMap<Block, f64> = BTreeMap::new();
            for r in &self.rows {
                if let (Some(m), Block::Pre | Block::Post) = (r.cells[j].mean, r.block) {
                    let b = best.entry(r.block).or_insert(m);
                    *b = b.max(m);
                }
            }
            for r in &mut self.rows {
                let block = r.block;
                let c = &mut r.cells[j];
                c.improved = matches!((c.mean, original), (Some(m), Some(o)) if m > o);
                c.best_in_block = match (c.mean, best.get(&block)) {
                    (Some(m), Some(&b)) => m == b,
                    _ => false,
                };
                c.oracle_gap = match (c.mean, oracle) {
                    (Some(m), Some(o)) => Some(o - m),
                    _ => None,
                };
            }
        }
    }

    pub fn row(&self, policy: &SelectionPolicy) -> Option<&ReportRow> {
        self.rows.iter().find(|r| &r.policy == policy)
    }
}

/// Run every policy on every need and summarise.
///
/// A need counts toward a metric only if its original query has a defined
/// score for that metric; otherwise it is excluded and counted. Within the
/// included needs, every chosen variant must have a true score. The
/// original row and one oracle row per metric are always present.
pub fn evaluate_policies(
    policies: &[SelectionPolicy],
    predictions: &[PredictionRecord],
    truth: &[TrueScoreRecord],
    needs: &[String],
    metrics: &[MetricName],
) -> Result<(Vec<SelectionResult>, SummaryReport)> {
    let preds = prediction_table(predictions);
    let truths = truth_table(truth);

    check_predictors(policies, predictions)?;

    let mut ordered: Vec<SelectionPolicy> = vec![SelectionPolicy::Original];
    for block in [Block::Pre, Block::Post] {
        for p in policies.iter().filter(|p| p.block() == block) {
            if !ordered.contains(p) {
                ordered.push(p.clone());
            }
        }
    }
    ordered.extend(metrics.iter().map(|&m| SelectionPolicy::Oracle(m)));
    for p in policies {
        if !ordered.contains(p) {
            ordered.push(p.clone());
        }
    }

    let mut selections = Vec::new();
    let mut rows = Vec::new();
    for policy in ordered {
        let mut sums = vec![(0.0f64, 0usize, 0usize); metrics.len()];
        for need in needs {
            let mut sel = select_one(&policy, need, &preds, &truths);
            for (j, metric) in metrics.iter().enumerate() {
                let name = metric.to_string();
                let table = lookup(&truths, need, &name);
                let value = table.and_then(|t| t.get(&sel.variant_id)).copied();
                sel.truth.insert(*metric, value);
                if table.and_then(|t| t.get(ORIGINAL_VARIANT)).is_none() {
                    sums[j].2 += 1;
                    continue;
                }
                let v = value.ok_or_else(|| Error::MissingTruth {
                    need: need.clone(),
                    variant: sel.variant_id.clone(),
                    metric: name.clone(),
                })?;
                sums[j].0 += v;
                sums[j].1 += 1;
            }
            selections.push(sel);
        }
        let cells = sums
            .into_iter()
            .map(|(sum, n, excluded)| Cell {
                mean: (n > 0).then(|| sum / n as f64),
                needs: n,
                excluded,
                improved: false,
                best_in_block: false,
                oracle_gap: None,
            })
            .collect();
        rows.push(ReportRow {
            block: policy.block(),
            policy,
            cells,
        });
    }

    let mut report = SummaryReport {
        metrics: metrics.to_vec(),
        rows,
    };
    report.annotate();
    Ok((selections, report))
}

/// Per-need correlations of one predictor against one metric and their
/// unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub predictor: String,
    pub metric: MetricName,
    pub method: CorrelationMethod,
    /// One entry per need, or a single `pooled` entry in pooled mode.
    pub per_need: Vec<(String, CorrelationResult)>,
    /// Mean of the defined per-need coefficients.
    pub aggregate: Option<f64>,
    /// Needs whose coefficient is undefined.
    pub excluded: usize,
}

/// Correlate predictions with truth within each need (the default), or over
/// all (need, variant) pairs at once when `pooled`.
pub fn correlate_policies(
    predictions: &[PredictionRecord],
    truth: &[TrueScoreRecord],
    predictor: &str,
    metric: MetricName,
    method: CorrelationMethod,
    pooled: bool,
) -> Result<CorrelationReport> {
    let preds = prediction_table(predictions);
    let truths = truth_table(truth);
    let name = metric.to_string();

    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (need, by_pred) in &preds {
        let (Some(p), Some(t)) = (by_pred.get(predictor), lookup(&truths, need, &name)) else {
            continue;
        };
        let key = if pooled {
            "pooled".to_string()
        } else {
            need.clone()
        };
        let g = groups.entry(key).or_default();
        for (variant, &score) in p {
            if let Some(&value) = t.get(variant) {
                g.0.push(score);
                g.1.push(value);
            }
        }
    }

    let mut per_need = Vec::new();
    let mut defined = Vec::new();
    for (need, (xs, ys)) in groups {
        let r = method.compute(&xs, &ys)?;
        if let Some(c) = r.coefficient {
            defined.push(c);
        }
        per_need.push((need, r));
    }
    let excluded = per_need.len() - defined.len();
    let aggregate =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(CorrelationReport {
        predictor: predictor.to_string(),
        metric,
        method,
        per_need,
        aggregate,
        excluded,
    })
}

pub fn write_selections(selections: &[SelectionResult], precision: Precision) -> String {
    let mut rows: Vec<&SelectionResult> = selections.iter().collect();
    rows.sort_by(|a, b| {
        (&a.need_id, a.policy.to_string()).cmp(&(&b.need_id, b.policy.to_string()))
    });
    let mut out = String::from("need_id\tpolicy\tchosen_variant\tpredicted_score\n");
    for s in rows {
        let score = match (&s.policy, s.score) {
            (_, _) if s.fallback => "fallback".to_string(),
            (SelectionPolicy::Predictor(_), Some(x)) => precision.format(x),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            s.need_id, s.policy, s.variant_id, score
        );
    }
    out
}

fn opt(x: Option<f64>, precision: Precision) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| precision.format(v))
}

pub fn write_correlations(reports: &[CorrelationReport], precision: Precision) -> String {
    let mut out = String::from("predictor\tmetric\tmethod\tscope\tcoefficient\tn\n");
    for r in reports {
        for (need, c) in &r.per_need {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{need}\t{}\t{}",
                r.predictor,
                r.metric,
                r.method,
                opt(c.coefficient, precision),
                c.n
            );
        }
        let _ = writeln!(
            out,
            "{}\t{}\t{}\taggregate\t{}\t{}",
            r.predictor,
            r.metric,
            r.method,
            opt(r.aggregate, precision),
            r.per_need.len() - r.excluded
        );
    }
    out
}

pub fn write_report_csv(report: &SummaryReport, precision: Precision) -> String {
    let mut out =
        String::from("block,policy,metric,mean,needs,excluded,improved,best_in_block,oracle_gap\n");
    for row in &report.rows {
        for (metric, c) in report.metrics.iter().zip(&row.cells) {
            let _ = writeln!(
                out,
                "{},{},{metric},{},{},{},{},{},{}",
                row.block,
                row.policy,
                opt(c.mean, precision),
                c.needs,
                c.excluded,
                c.improved,
                c.best_in_block,
                opt(c.oracle_gap, precision)
            );
        }
    }
    out
}

/// Markdown table with `*` marking an improvement over the original query
/// and `!` the best value of a pre- or post-retrieval block.
pub fn write_report_markdown(report: &SummaryReport, precision: Precision) -> String {
    let mut out = String::new();
    let header: Vec<String> = report.metrics.iter().map(|m| m.to_string()).collect();
    let _ = writeln!(out, "| Block | Policy | {} |", header.join(" | "));
    let _ = writeln!(out, "|---|---|{}", "---:|".repeat(header.len()));
    let mut last = None;
    for row in &report.rows {
        let block = if last == Some(row.block) {
            String::new()
        } else {
            row.block.to_string()
        };
        last = Some(row.block);
        let cells: Vec<String> = row
            .cells
            .iter()
            .map(|c| {
                let mut s = opt(c.mean, precision);
                if c.improved {
                    s.push('*');
                }
                if c.best_in_block {
                    s.push('!');
                }
                s
            })
            .collect();
        let _ = writeln!(out, "| {block} | {} | {} |", row.policy, cells.join(" | "));
    }

    let _ = writeln!(out, "\nGap to oracle:\n");
    let _ = writeln!(out, "| Policy | {} |", header.join(" | "));
    let _ = writeln!(out, "|---|{}", "---:|".repeat(header.len()));
    for row in report.rows.iter().filter(|r| r.block != Block::Oracle) {
        let gaps: Vec<String> = row
            .cells
            .iter()
            .map(|c| opt(c.oracle_gap, precision))
            .collect();
        let _ = writeln!(out, "| {} | {} |", row.policy, gaps.join(" | "));
    }

    if let Some(orig) = report.row(&SelectionPolicy::Original) {
        let notes: Vec<String> = report
            .metrics
            .iter()
            .zip(&orig.cells)
            .filter(|(_, c)| c.excluded > 0)
            .map(|(m, c)| format!("{m}: {} excluded", c.excluded))
            .collect();
        if !notes.is_empty() {
            let _ = writeln!(
                out,
                "\nNeeds without a defined original score: {}.",
                notes.join(", ")
            );
        }
    }
    out
}
