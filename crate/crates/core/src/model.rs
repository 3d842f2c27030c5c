//! Domain types shared across the pipeline.
//!
//! Sentences are indexed by Unicode scalar value. All offsets in this crate
//! are codepoint offsets, never byte offsets.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("sentence text is empty")]
    EmptySentence,
    #[error("entity surface is empty")]
    EmptyEntity,
    #[error("span {start}..{end} is out of bounds for a sentence of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("span {start}..{end} covers {found:?}, expected {expected:?}")]
    SpanMismatch {
        start: usize,
        end: usize,
        expected: String,
        found: String,
    },
    #[error("entity {0:?} does not occur in the sentence and has no span")]
    EntityAbsent(String),
    #[error("triplet field `{0}` is empty")]
    EmptyTripletField(&'static str),
    #[error("instance has no gold relation")]
    NoGoldRelation,
    #[error("duplicate label {0:?} in relation set")]
    DuplicateLabel(String),
    #[error("relation set is empty")]
    EmptyRelationSet,
    #[error("relation set declares {actual} labels, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("relation {0:?} is not in the relation set")]
    UnknownRelation(String),
}

/// Half-open codepoint range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", from = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    text: String,
    chars: Vec<char>,
}

impl Sentence {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let chars = text.chars().collect();
        Ok(Self { text, chars })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Length in codepoints.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn slice(&self, span: Span) -> Option<String> {
        if span.start > span.end || span.end > self.chars.len() {
            return None;
        }
        Some(self.chars[span.start..span.end].iter().collect())
    }

    /// All non-overlapping occurrences of `surface`, scanned left to right.
    pub fn find_occurrences(&self, surface: &str) -> Vec<Span> {
        find_occurrences(self, surface)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Leftmost non-overlapping scan for `surface` in `sentence`.
///
/// An empty surface has no occurrences.
pub fn find_occurrences(sentence: &Sentence, surface: &str) -> Vec<Span> {
    let needle: Vec<char> = surface.chars().collect();
    let hay = sentence.chars();
    let mut out = Vec::new();
    if needle.is_empty() || needle.len() > hay.len() {
        return out;
    }
    let mut i = 0;
    while i + needle.len() <= hay.len() {
        if hay[i..i + needle.len()] == needle[..] {
            out.push(Span::new(i, i + needle.len()));
            i += needle.len();
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entity {
    surface: String,
    span: Option<Span>,
}

impl Entity {
    pub fn new(surface: impl Into<String>) -> Result<Self, ModelError> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(ModelError::EmptyEntity);
        }
        Ok(Self { surface, span: None })
    }

    /// Entity with an explicit span, checked against the owning sentence.
    pub fn with_span(surface: impl Into<String>, span: Span, sentence: &Sentence) -> Result<Self, ModelError> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(ModelError::EmptyEntity);
        }
        let found = sentence.slice(span).ok_or(ModelError::SpanOutOfBounds {
            start: span.start,
            end: span.end,
            len: sentence.len(),
        })?;
        if found != surface {
            return Err(ModelError::SpanMismatch {
                start: span.start,
                end: span.end,
                expected: surface,
                found,
            });
        }
        Ok(Self {
            surface,
            span: Some(span),
        })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn span(&self) -> Option<Span> {
        self.span
    }

    pub fn char_len(&self) -> usize {
        self.surface.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RelationTriplet {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let t = Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        };
        if t.head.is_empty() {
            return Err(ModelError::EmptyTripletField("head"));
        }
        if t.relation.is_empty() {
            return Err(ModelError::EmptyTripletField("relation"));
        }
        if t.tail.is_empty() {
            return Err(ModelError::EmptyTripletField("tail"));
        }
        Ok(t)
    }
}

impl fmt::Display for RelationTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "([{}], {}, [{}])", self.head, self.relation, self.tail)
    }
}

/// The exact ASCII label that designates the no-relation class.
pub const NA_LABEL: &str = "NA";

/// Closed label inventory, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    na_label: Option<String>,
}

impl RelationSet {
    pub fn new<I, S>(labels: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(ModelError::EmptyRelationSet);
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(ModelError::DuplicateLabel(l.clone()));
            }
        }
        let na_label = index.contains_key(NA_LABEL).then(|| NA_LABEL.to_string());
        Ok(Self {
            labels,
            index,
            na_label,
        })
    }

    /// One label per line; blank lines are skipped and a trailing `\r` is dropped.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        Self::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string),
        )
    }

    pub fn expect_size(self, expected: usize) -> Result<Self, ModelError> {
        if self.labels.len() != expected {
            return Err(ModelError::SizeMismatch {
                expected,
                actual: self.labels.len(),
            });
        }
        Ok(self)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn na_label(&self) -> Option<&str> {
        self.na_label.as_deref()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.labels.join("\n");
        s.push('\n');
        s
    }
}

/// Deduplicated relation labels in a stable order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoldRelations(Vec<String>);

impl GoldRelations {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Returns false when the label was already present.
    pub fn insert(&mut self, label: impl Into<String>) -> bool {
        let label = label.into();
        if self.0.contains(&label) {
            return false;
        }
        self.0.push(label);
        true
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Reorder to relation-set file order; labels outside the set keep
    /// their relative order after every known label.
    pub fn sort_by_set(&mut self, set: &RelationSet) {
        self.0.sort_by_key(|l| set.position(l).unwrap_or(usize::MAX));
    }

    pub fn is_only(&self, label: &str) -> bool {
        self.0.len() == 1 && self.0[0] == label
    }
}

impl<S: Into<String>> FromIterator<S> for GoldRelations {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        let mut g = GoldRelations::new();
        for l in iter {
            g.insert(l);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct REInstance {
    pub id: String,
    pub sentence: Sentence,
    pub head: Entity,
    pub tail: Entity,
    pub gold_relations: GoldRelations,
}

impl REInstance {
    /// Checks that both entities can be located and at least one gold
    /// relation is present.
    pub fn new(
        id: impl Into<String>,
        sentence: Sentence,
        head: Entity,
        tail: Entity,
        gold_relations: GoldRelations,
    ) -> Result<Self, ModelError> {
        if gold_relations.is_empty() {
            return Err(ModelError::NoGoldRelation);
        }
        for e in [&head, &tail] {
            if e.span().is_none() && sentence.find_occurrences(e.surface()).is_empty() {
                return Err(ModelError::EntityAbsent(e.surface().to_string()));
            }
        }
        Ok(Self {
            id: id.into(),
            sentence,
            head,
            tail,
            gold_relations,
        })
    }

    pub fn validate_against(&self, set: &RelationSet) -> Result<(), ModelError> {
        match self.gold_relations.iter().find(|l| !set.contains(l)) {
            Some(l) => Err(ModelError::UnknownRelation(l.to_string())),
            None => Ok(()),
        }
    }

    pub fn gold_triplets(&self) -> Vec<RelationTriplet> {
        self.gold_relations
            .iter()
            .map(|r| RelationTriplet {
                head: self.head.surface().to_string(),
                relation: r.to_string(),
                tail: self.tail.surface().to_string(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn occurrences_by_codepoint() {
        let s = Sentence::new("双汇发展与双汇国际").unwrap();
        assert_eq!(s.find_occurrences("双汇"), vec![Span::new(0, 2), Span::new(5, 7)]);
    }

    #[test]
    fn occurrences_trivial_cases() {
        let s = Sentence::new("abc").unwrap();
        assert_eq!(s.find_occurrences("abc"), vec![Span::new(0, 3)]);
        assert!(s.find_occurrences("x").is_empty());
        let aaa = Sentence::new("aaa").unwrap();
        assert_eq!(aaa.find_occurrences("aa"), vec![Span::new(0, 2)]);
    }

    #[test]
    fn sentence_rejects_blank() {
        assert_eq!(Sentence::new("  \t").unwrap_err(), ModelError::EmptySentence);
    }

    #[test]
    fn entity_span_must_match() {
        let s = Sentence::new("双汇国际控股双汇").unwrap();
        assert!(Entity::with_span("双汇", Span::new(6, 8), &s).is_ok());
        assert!(matches!(
            Entity::with_span("双汇", Span::new(1, 3), &s),
            Err(ModelError::SpanMismatch { .. })
        ));
        assert!(matches!(
            Entity::with_span("双汇", Span::new(7, 9), &s),
            Err(ModelError::SpanOutOfBounds { .. })
        ));
    }

    #[test]
    fn instance_requires_locatable_entities() {
        let s = Sentence::new("abc").unwrap();
        let err = REInstance::new(
            "1",
            s,
            Entity::new("a").unwrap(),
            Entity::new("z").unwrap(),
            ["r"].into_iter().collect(),
        )
        .unwrap_err();
        assert_eq!(err, ModelError::EntityAbsent("z".into()));
    }

    #[test]
    fn relation_set_detects_na_and_duplicates() {
        let set = RelationSet::parse("NA\n拥有\r\n分析\n").unwrap();
        assert_eq!(set.na_label(), Some("NA"));
        assert_eq!(set.position("分析"), Some(2));
        assert!(matches!(
            RelationSet::parse("a\na\n"),
            Err(ModelError::DuplicateLabel(_))
        ));
        assert!(RelationSet::parse("a\nb").unwrap().na_label().is_none());
    }

    #[test]
    fn gold_relations_dedup_and_sort() {
        let set = RelationSet::new(["NA", "成立", "拥有"]).unwrap();
        let mut g: GoldRelations = ["拥有", "成立", "拥有", "x"].into_iter().collect();
        assert_eq!(g.len(), 3);
        g.sort_by_set(&set);
        assert_eq!(g.iter().collect::<Vec<_>>(), vec!["成立", "拥有", "x"]);
    }

    proptest! {
        #[test]
        fn occurrences_round_trip(hay in "[ab汇双]{1,24}", needle in "[ab汇双]{1,3}") {
            let s = Sentence::new(hay).unwrap();
            let spans = s.find_occurrences(&needle);
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for sp in &spans {
                prop_assert_eq!(s.slice(*sp).unwrap(), needle.clone());
            }
        }
    }
}
