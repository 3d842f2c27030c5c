//! Micro-averaged scoring of predicted triplets against gold instances,
//! error taxonomy, and run comparison tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{normalize, validate};
use crate::model::{REInstance, RelationSet, RelationTriplet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction {pred} does not belong to gold instance {gold}")]
    IdMismatch { gold: String, pred: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("gold instance {0} has no prediction")]
    MissingPrediction(String),
    #[error("prediction {0} has no gold instance")]
    UnknownPrediction(String),
    #[error("nothing to score")]
    Empty,
    #[error("instance {0} is correct; there is no error to classify")]
    NotAnError(String),
    #[error("at least two reports are required, got {0}")]
    TooFewReports(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedLabel {
    pub label: String,
    pub exact: bool,
}

/// One line of a run file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub raw_answer: String,
    pub parsed: Vec<RelationTriplet>,
    #[serde(default, rename = "aligned")]
    pub aligned_relations: Vec<AlignedLabel>,
    /// Set when the answer could not be obtained; the record then scores as
    /// an empty prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn new(instance_id: impl Into<String>, raw_answer: impl Into<String>, parsed: Vec<RelationTriplet>) -> Self {
        Self {
            instance_id: instance_id.into(),
            raw_answer: raw_answer.into(),
            parsed,
            aligned_relations: Vec::new(),
            error: None,
        }
    }

    pub fn failed(instance_id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            instance_id: instance_id.into(),
            raw_answer: String::new(),
            parsed: Vec::new(),
            aligned_relations: Vec::new(),
            error: Some(error.into()),
        }
    }

    /// Relation of the `i`-th parsed triplet, preferring its aligned label.
    pub fn relation_at(&self, i: usize) -> String {
        if self.aligned_relations.len() == self.parsed.len() {
            normalize(&self.aligned_relations[i].label)
        } else {
            normalize(&self.parsed[i].relation)
        }
    }
}

pub fn parse_run(text: &str) -> Result<Vec<PredictionRecord>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn write_run_line(record: &PredictionRecord) -> String {
    let mut s = serde_json::to_string(record).expect("prediction records always serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn is_perfect(&self) -> bool {
        self.fp == 0 && self.fn_ == 0
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn strip_markers(s: &str) -> String {
    normalize(&s.replace(['[', ']'], ""))
}

/// Per-instance scoring detail.
#[derive(Debug, Clone, Default)]
struct Scored {
    counts: Counts,
    /// label -> (tp, fp, fn) contributions
    per_label: Vec<(String, Counts)>,
    predicted_on_pair: Vec<String>,
}

fn score_detail(gold: &REInstance, pred: &PredictionRecord) -> Result<Scored, EvalError> {
    if gold.id != pred.instance_id {
        return Err(EvalError::IdMismatch {
            gold: gold.id.clone(),
            pred: pred.instance_id.clone(),
        });
    }
    let gh = normalize(gold.head.surface());
    let gt = normalize(gold.tail.surface());
    let gold_labels: Vec<String> = gold.gold_relations.iter().map(normalize).collect();

    let mut on_pair: Vec<String> = Vec::new();
    let mut off_pair: HashSet<(String, String, String)> = HashSet::new();
    let mut off_order: Vec<String> = Vec::new();
    for (i, t) in pred.parsed.iter().enumerate() {
        let rel = pred.relation_at(i);
        let (h, tl) = (strip_markers(&t.head), strip_markers(&t.tail));
        if h == gh && tl == gt {
            if !on_pair.contains(&rel) {
                on_pair.push(rel);
            }
        } else if off_pair.insert((h, rel.clone(), tl)) {
            off_order.push(rel);
        }
    }

    let mut s = Scored::default();
    for r in &on_pair {
        if gold_labels.contains(r) {
            s.counts.tp += 1;
            s.per_label.push((r.clone(), Counts::new(1, 0, 0)));
        } else {
            s.counts.fp += 1;
            s.per_label.push((r.clone(), Counts::new(0, 1, 0)));
        }
    }
    for r in off_order {
        s.counts.fp += 1;
        s.per_label.push((r, Counts::new(0, 1, 0)));
    }
    for g in &gold_labels {
        if !on_pair.contains(g) {
            s.counts.fn_ += 1;
            s.per_label.push((g.clone(), Counts::new(0, 0, 1)));
        }
    }
    s.predicted_on_pair = on_pair;
    Ok(s)
}

/// `(tp, fp, fn)` for one instance. Only triplets naming the gold pair in
/// gold order can be true positives; every other distinct triplet is a false
/// positive.
pub fn score_instance(gold: &REInstance, pred: &PredictionRecord, _set: &RelationSet) -> Result<Counts, EvalError> {
    Ok(score_detail(gold, pred)?.counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Understanding,
    MultiRelation,
    Na,
    Nonexistent,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::Understanding,
        ErrorCategory::MultiRelation,
        ErrorCategory::Na,
        ErrorCategory::Nonexistent,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            ErrorCategory::Understanding => "Understanding",
            ErrorCategory::MultiRelation => "Multiple relations",
            ErrorCategory::Na => "NA",
            ErrorCategory::Nonexistent => "Nonexistent relation",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// First matching rule wins: nonexistent label, NA gold, multi-relation
/// gold, then understanding.
pub fn classify_error(
    gold: &REInstance,
    pred: &PredictionRecord,
    set: &RelationSet,
) -> Result<ErrorCategory, EvalError> {
    let s = score_detail(gold, pred)?;
    if s.counts.is_perfect() {
        return Err(EvalError::NotAnError(gold.id.clone()));
    }
    Ok(categorize(gold, pred, set))
}

fn categorize(gold: &REInstance, pred: &PredictionRecord, set: &RelationSet) -> ErrorCategory {
    if (0..pred.parsed.len()).any(|i| !validate(&pred.relation_at(i), set)) {
        return ErrorCategory::Nonexistent;
    }
    if let Some(na) = set.na_label() {
        if gold.gold_relations.is_only(na) {
            return ErrorCategory::Na;
        }
    }
    if gold.gold_relations.len() >= 2 {
        return ErrorCategory::MultiRelation;
    }
    ErrorCategory::Understanding
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Drop instances whose gold set is exactly `{NA}`.
    pub exclude_na: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorTaxonomy {
    pub understanding: usize,
    pub multi_relation: usize,
    pub na: usize,
    pub nonexistent: usize,
}

impl ErrorTaxonomy {
    pub fn get(&self, c: ErrorCategory) -> usize {
        match c {
            ErrorCategory::Understanding => self.understanding,
            ErrorCategory::MultiRelation => self.multi_relation,
            ErrorCategory::Na => self.na,
            ErrorCategory::Nonexistent => self.nonexistent,
        }
    }

    fn bump(&mut self, c: ErrorCategory) {
        match c {
            ErrorCategory::Understanding => self.understanding += 1,
            ErrorCategory::MultiRelation => self.multi_relation += 1,
            ErrorCategory::Na => self.na += 1,
            ErrorCategory::Nonexistent => self.nonexistent += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.understanding + self.multi_relation + self.na + self.nonexistent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_label: BTreeMap<String, LabelScore>,
    pub error_taxonomy: ErrorTaxonomy,
    pub n_instances: usize,
    pub n_errors: usize,
    pub n_excluded: usize,
}

impl EvalReport {
    pub fn counts(&self) -> Counts {
        Counts::new(self.tp, self.fp, self.fn_)
    }

    /// `P 60.00 R 60.00 F1 60.00`
    pub fn headline(&self) -> String {
        format!(
            "P {:.2} R {:.2} F1 {:.2}",
            self.precision * 100.0,
            self.recall * 100.0,
            self.f1 * 100.0
        )
    }

    /// One `Name: 12.34% (n)` line per category, as a share of all errors.
    pub fn taxonomy_lines(&self) -> Vec<String> {
        ErrorCategory::ALL
            .iter()
            .map(|&c| {
                let n = self.error_taxonomy.get(c);
                let pct = if self.n_errors == 0 {
                    0.0
                } else {
                    100.0 * n as f64 / self.n_errors as f64
                };
                format!("{}: {:.2}% ({})", c.display_name(), pct, n)
            })
            .collect()
    }
}

/// Matches gold instances to run records by id. Every gold id must have
/// exactly one record and vice versa.
pub fn pair_by_id<'a>(
    gold: &'a [REInstance],
    run: &'a [PredictionRecord],
) -> Result<Vec<(&'a REInstance, &'a PredictionRecord)>, EvalError> {
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(run.len());
    for r in run {
        if by_id.insert(r.instance_id.as_str(), r).is_some() {
            return Err(EvalError::DuplicateId(r.instance_id.clone()));
        }
    }
    let mut seen = HashSet::with_capacity(gold.len());
    let mut out = Vec::with_capacity(gold.len());
    for g in gold {
        if !seen.insert(g.id.as_str()) {
            return Err(EvalError::DuplicateId(g.id.clone()));
        }
        let r = by_id
            .get(g.id.as_str())
            .ok_or_else(|| EvalError::MissingPrediction(g.id.clone()))?;
        out.push((g, *r));
    }
    if let Some(r) = run.iter().find(|r| !seen.contains(r.instance_id.as_str())) {
        return Err(EvalError::UnknownPrediction(r.instance_id.clone()));
    }
    Ok(out)
}

pub fn aggregate(
    records: &[(&REInstance, &PredictionRecord)],
    set: &RelationSet,
    options: EvalOptions,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut ids = HashSet::with_capacity(records.len());
    for (g, _) in records {
        if !ids.insert(g.id.as_str()) {
            return Err(EvalError::DuplicateId(g.id.clone()));
        }
    }

    let mut total = Counts::default();
    let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
    let mut taxonomy = ErrorTaxonomy::default();
    let (mut n_instances, mut n_errors, mut n_excluded) = (0, 0, 0);
    for (gold, pred) in records {
        if options.exclude_na && set.na_label().is_some_and(|na| gold.gold_relations.is_only(na)) {
            // still reject mismatched pairs
            score_detail(gold, pred)?;
            n_excluded += 1;
            continue;
        }
        let s = score_detail(gold, pred)?;
        n_instances += 1;
        total += s.counts;
        for (label, c) in s.per_label {
            *per_label.entry(label).or_default() += c;
        }
        if !s.counts.is_perfect() {
            n_errors += 1;
            taxonomy.bump(categorize(gold, pred, set));
        }
    }

    let per_label: BTreeMap<String, LabelScore> = per_label
        .into_iter()
        .map(|(l, c)| {
            (
                l,
                LabelScore {
                    tp: c.tp,
                    fp: c.fp,
                    fn_: c.fn_,
                    f1: c.f1(),
                },
            )
        })
        .collect();
    let (mp, mr, mf) = macro_scores(&per_label);
    Ok(EvalReport {
        tp: total.tp,
        fp: total.fp,
        fn_: total.fn_,
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        macro_precision: mp,
        macro_recall: mr,
        macro_f1: mf,
        per_label,
        error_taxonomy: taxonomy,
        n_instances,
        n_errors,
        n_excluded,
    })
}

fn macro_scores(per_label: &BTreeMap<String, LabelScore>) -> (f64, f64, f64) {
    if per_label.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = per_label.len() as f64;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for s in per_label.values() {
        let c = Counts::new(s.tp, s.fp, s.fn_);
        p += c.precision();
        r += c.recall();
        f += c.f1();
    }
    (p / n, r / n, f / n)
}

/// Report file contents: every report field plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub toolkit_version: String,
    pub config_hash: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_precision: bool,
    pub best_recall: bool,
    pub best_f1: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

/// Percentages rounded to two decimals; the best value per column is
/// flagged on every row that reaches it.
pub fn compare_runs(reports: &[(String, EvalReport)]) -> Result<Comparison, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let cents = |x: f64| (x * 10_000.0).round() as i64;
    let best = |f: fn(&EvalReport) -> f64| reports.iter().map(|(_, r)| cents(f(r))).max().unwrap_or(0);
    let (bp, br, bf) = (best(|r| r.precision), best(|r| r.recall), best(|r| r.f1));
    let rows = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            name: name.clone(),
            precision: percent(r.precision),
            recall: percent(r.recall),
            f1: percent(r.f1),
            best_precision: cents(r.precision) == bp,
            best_recall: cents(r.recall) == br,
            best_f1: cents(r.f1) == bf,
        })
        .collect();
    Ok(Comparison { rows })
}

impl Comparison {
    /// Fixed-width table; `*` marks the best cell in each column.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.chars().count())
            .chain(std::iter::once(3))
            .max()
            .unwrap_or(3);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>10}  {:>10}  {:>10}",
            "Run", "Precision", "Recall", "F1"
        );
        let mut line = String::new();
        let cell = |v: f64, best: bool| format!("{:.2}{}", v, if best { "*" } else { " " });
        for r in &self.rows {
            let pad = width - r.name.chars().count();
            line.clear();
            let _ = write!(
                line,
                "{}{}  {:>10}  {:>10}  {:>10}",
                r.name,
                " ".repeat(pad),
                cell(r.precision, r.best_precision),
                cell(r.recall, r.best_recall),
                cell(r.f1, r.best_f1),
            );
            s.push_str(line.trim_end());
            s.push('\n');
        }
        s
    }
}
