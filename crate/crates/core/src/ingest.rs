//! Dataset loading, canonical re-emission, and seeded subsampling.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Entity, GoldRelations, ModelError, REInstance, RelationSet, Sentence, Span};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("manifest has no split `{0}`")]
    MissingSplit(String),
    #[error("line {line}: {message}: {raw}")]
    Malformed { line: usize, message: String, raw: String },
    #[error("line {line}: relation {relation:?} is not in the relation set")]
    UnknownRelation { line: usize, relation: String },
    #[error("relation set: {0}")]
    RelationSet(#[source] ModelError),
    #[error("fraction {0} is outside (0, 1]")]
    FractionOutOfRange(String),
    #[error("cannot parse fraction {0:?}")]
    BadFraction(String),
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}` (expected train, dev or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    #[default]
    CanonicalJsonl,
    Tsv,
}

/// Column positions for the four TSV fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsvColumns {
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
    pub sentence: usize,
}

impl Default for TsvColumns {
    fn default() -> Self {
        Self {
            head: 0,
            tail: 1,
            relation: 2,
            sentence: 3,
        }
    }
}

impl TsvColumns {
    fn width(&self) -> usize {
        [self.head, self.tail, self.relation, self.sentence]
            .into_iter()
            .max()
            .unwrap_or(0)
            + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownRelationPolicy {
    #[default]
    Reject,
    WarnAndKeep,
}

/// On-disk manifest. Relative paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub splits: BTreeMap<SplitName, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_set_path: Option<PathBuf>,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default)]
    pub tsv_columns: TsvColumns,
    #[serde(default)]
    pub unknown_relation: UnknownRelationPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_relations: Option<usize>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| IngestError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in m.splits.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = m.relation_set_path.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in m.splits.values().chain(m.relation_set_path.iter()) {
            if !p.exists() {
                return Err(IngestError::Manifest {
                    path: path.to_path_buf(),
                    message: format!("referenced file {} does not exist", p.display()),
                });
            }
        }
        Ok(m)
    }

    pub fn relation_set(&self) -> Result<Option<RelationSet>, IngestError> {
        let Some(path) = &self.relation_set_path else {
            return Ok(None);
        };
        let set = load_relation_set(path)?;
        match self.expected_relations {
            Some(n) => set.expect_size(n).map(Some).map_err(IngestError::RelationSet),
            None => Ok(Some(set)),
        }
    }
}

pub fn load_relation_set(path: &Path) -> Result<RelationSet, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    RelationSet::parse(&text).map_err(IngestError::RelationSet)
}

#[derive(Debug, Clone, Default)]
pub struct LoadedSplit {
    pub instances: Vec<REInstance>,
    pub warnings: Vec<String>,
}

/// One canonical-jsonl line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub id: String,
    pub sentence: String,
    pub head: String,
    pub tail: String,
    pub relations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_span: Option<Span>,
}

impl From<&REInstance> for CanonicalRecord {
    fn from(i: &REInstance) -> Self {
        Self {
            id: i.id.clone(),
            sentence: i.sentence.text().to_string(),
            head: i.head.surface().to_string(),
            tail: i.tail.surface().to_string(),
            relations: i.gold_relations.iter().map(str::to_string).collect(),
            head_span: i.head.span(),
            tail_span: i.tail.span(),
        }
    }
}

struct RawRow {
    line: usize,
    raw: String,
    id: String,
    sentence: String,
    head: String,
    tail: String,
    relations: Vec<String>,
    head_span: Option<Span>,
    tail_span: Option<Span>,
}

pub fn load_split(manifest: &DatasetManifest, split: SplitName) -> Result<LoadedSplit, IngestError> {
    let path = manifest
        .splits
        .get(&split)
        .ok_or_else(|| IngestError::MissingSplit(split.as_str().to_string()))?;
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let set = manifest.relation_set()?;
    let rows = match manifest.format {
        DataFormat::CanonicalJsonl => parse_jsonl_rows(&text)?,
        DataFormat::Tsv => parse_tsv_rows(&text, manifest.tsv_columns)?,
    };
    assemble(rows, set.as_ref(), manifest.unknown_relation)
}

/// Parse canonical-jsonl text without a relation set.
pub fn parse_canonical(text: &str) -> Result<Vec<REInstance>, IngestError> {
    Ok(assemble(parse_jsonl_rows(text)?, None, UnknownRelationPolicy::Reject)?.instances)
}

pub fn parse_canonical_with(
    text: &str,
    set: Option<&RelationSet>,
    policy: UnknownRelationPolicy,
) -> Result<LoadedSplit, IngestError> {
    assemble(parse_jsonl_rows(text)?, set, policy)
}

pub fn parse_tsv(
    text: &str,
    columns: TsvColumns,
    set: Option<&RelationSet>,
    policy: UnknownRelationPolicy,
) -> Result<LoadedSplit, IngestError> {
    assemble(parse_tsv_rows(text, columns)?, set, policy)
}

pub fn read_canonical_file(path: &Path) -> Result<Vec<REInstance>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    parse_canonical(&text)
}

pub fn write_canonical<W: Write>(instances: &[REInstance], mut out: W) -> io::Result<()> {
    for inst in instances {
        let line = serde_json::to_string(&CanonicalRecord::from(inst))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_canonical_string(instances: &[REInstance]) -> String {
    let mut buf = Vec::new();
    write_canonical(instances, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

fn parse_jsonl_rows(text: &str) -> Result<Vec<RawRow>, IngestError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let raw = line.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let rec: CanonicalRecord = serde_json::from_str(raw).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
            raw: raw.to_string(),
        })?;
        rows.push(RawRow {
            line: line_no,
            raw: raw.to_string(),
            id: rec.id,
            sentence: rec.sentence,
            head: rec.head,
            tail: rec.tail,
            relations: rec.relations,
            head_span: rec.head_span,
            tail_span: rec.tail_span,
        });
    }
    Ok(rows)
}

fn parse_tsv_rows(text: &str, cols: TsvColumns) -> Result<Vec<RawRow>, IngestError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let raw = line.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() < cols.width() {
            return Err(IngestError::Malformed {
                line: line_no,
                message: format!(
                    "expected at least {} tab-separated fields, found {}",
                    cols.width(),
                    fields.len()
                ),
                raw: raw.to_string(),
            });
        }
        rows.push(RawRow {
            line: line_no,
            raw: raw.to_string(),
            id: line_no.to_string(),
            sentence: fields[cols.sentence].to_string(),
            head: fields[cols.head].to_string(),
            tail: fields[cols.tail].to_string(),
            relations: vec![fields[cols.relation].to_string()],
            head_span: None,
            tail_span: None,
        });
    }
    Ok(rows)
}

fn assemble(
    rows: Vec<RawRow>,
    set: Option<&RelationSet>,
    policy: UnknownRelationPolicy,
) -> Result<LoadedSplit, IngestError> {
    let mut out = LoadedSplit::default();
    let mut by_pair: HashMap<(String, String, String), usize> = HashMap::new();
    for row in rows {
        let malformed = |e: ModelError| IngestError::Malformed {
            line: row.line,
            message: e.to_string(),
            raw: row.raw.clone(),
        };
        if row.relations.is_empty() {
            return Err(malformed(ModelError::NoGoldRelation));
        }
        if let Some(set) = set {
            for r in &row.relations {
                if !set.contains(r) {
                    match policy {
                        UnknownRelationPolicy::Reject => {
                            return Err(IngestError::UnknownRelation {
                                line: row.line,
                                relation: r.clone(),
                            })
                        }
                        UnknownRelationPolicy::WarnAndKeep => out
                            .warnings
                            .push(format!("line {}: relation {r:?} is not in the relation set", row.line)),
                    }
                }
            }
        }
        let key = (row.sentence.clone(), row.head.clone(), row.tail.clone());
        if let Some(&idx) = by_pair.get(&key) {
            let inst = &mut out.instances[idx];
            for r in row.relations {
                inst.gold_relations.insert(r);
            }
            continue;
        }
        let sentence = Sentence::new(row.sentence.clone()).map_err(malformed)?;
        let head = entity(&row.head, row.head_span, &sentence).map_err(malformed)?;
        let tail = entity(&row.tail, row.tail_span, &sentence).map_err(malformed)?;
        let gold: GoldRelations = row.relations.iter().cloned().collect();
        let inst = REInstance::new(row.id.clone(), sentence, head, tail, gold).map_err(malformed)?;
        by_pair.insert(key, out.instances.len());
        out.instances.push(inst);
    }
    if let Some(set) = set {
        for inst in &mut out.instances {
            inst.gold_relations.sort_by_set(set);
        }
    }
    Ok(out)
}

fn entity(surface: &str, span: Option<Span>, sentence: &Sentence) -> Result<Entity, ModelError> {
    match span {
        Some(sp) => Entity::with_span(surface, sp, sentence),
        None => Entity::new(surface),
    }
}

/// A sampling fraction in `(0, 1]`, held exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction(Ratio<u64>);

impl Fraction {
    pub fn new(numer: u64, denom: u64) -> Result<Self, IngestError> {
        if denom == 0 || numer == 0 || numer > denom {
            return Err(IngestError::FractionOutOfRange(format!("{numer}/{denom}")));
        }
        Ok(Self(Ratio::new(numer, denom)))
    }

    pub fn is_one(&self) -> bool {
        *self.0.numer() == *self.0.denom()
    }

    /// `floor(self * n)`, computed exactly.
    pub fn of(&self, n: usize) -> usize {
        ((*self.0.numer() as u128 * n as u128) / *self.0.denom() as u128) as usize
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }
}

impl FromStr for Fraction {
    type Err = IngestError;

    /// Accepts `p/q`, a decimal like `0.4`, or a percentage like `40%`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || IngestError::BadFraction(s.to_string());
        if let Some((n, d)) = t.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return Fraction::new(n, d);
        }
        let (body, scale) = match t.strip_suffix('%') {
            Some(b) => (b.trim(), 100u64),
            None => (t, 1u64),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let denom = 10u64.pow(frac.len() as u32).checked_mul(scale).ok_or_else(bad)?;
        let digits = format!("{int}{frac}");
        let numer: u64 = if digits.is_empty() {
            0
        } else {
            digits.parse().map_err(|_| bad())?
        };
        if numer == 0 || numer > denom {
            return Err(IngestError::FractionOutOfRange(s.to_string()));
        }
        Ok(Self(Ratio::new(numer, denom)))
    }
}

/// Draws `floor(fraction * N)` instances without replacement. The returned
/// instances keep their original relative order.
pub fn sample_fraction(instances: &[REInstance], fraction: Fraction, seed: u64) -> Vec<REInstance> {
    if fraction.is_one() {
        return instances.to_vec();
    }
    let n = instances.len();
    let m = fraction.of(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| instances[i].clone()).collect()
}
