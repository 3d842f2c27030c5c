//! Relation-set validation and nearest-label retrieval for free-form
//! generated relations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::model::RelationSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("relation set is empty")]
    EmptySet,
    #[error("k = {k} is outside 1..={len}")]
    BadK { k: usize, len: usize },
}

/// NFC plus edge-whitespace trim. Internal whitespace is kept.
pub fn normalize(s: &str) -> String {
    s.trim().nfc().collect::<String>().trim().to_string()
}

/// Pairwise string similarity in `[0, 1]`.
///
/// Implementations must be pure: `score(a, a) == 1`, symmetric, and `0`
/// when exactly one side is empty.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, a: &str, b: &str) -> f64;
}

impl<F> SimilarityScorer for F
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn score(&self, a: &str, b: &str) -> f64 {
        self(a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Gram {
    Uni(char),
    /// `None` is the start or end sentinel.
    Bi(Option<char>, Option<char>),
}

/// Cosine over character unigram and sentinel-padded bigram counts.
/// Single-character strings use unigrams only.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharNgramScorer;

impl CharNgramScorer {
    fn grams(s: &str) -> HashMap<Gram, f64> {
        let chars: Vec<char> = s.nfc().collect();
        let mut v = HashMap::new();
        for &c in &chars {
            *v.entry(Gram::Uni(c)).or_insert(0.0) += 1.0;
        }
        if chars.len() >= 2 {
            let padded: Vec<Option<char>> = std::iter::once(None)
                .chain(chars.iter().copied().map(Some))
                .chain(std::iter::once(None))
                .collect();
            for w in padded.windows(2) {
                *v.entry(Gram::Bi(w[0], w[1])).or_insert(0.0) += 1.0;
            }
        }
        v
    }
}

impl SimilarityScorer for CharNgramScorer {
    fn score(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        let (va, vb) = (Self::grams(a), Self::grams(b));
        if va.is_empty() || vb.is_empty() {
            return if va.is_empty() && vb.is_empty() { 1.0 } else { 0.0 };
        }
        let dot: f64 = va
            .iter()
            .filter_map(|(g, x)| vb.get(g).map(|y| x * y))
            .fold(0.0, |acc, v| acc + v);
        let na: f64 = va.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.values().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

pub fn default_scorer() -> CharNgramScorer {
    CharNgramScorer
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub query: String,
    pub best: String,
    pub score: f64,
    pub ranked: Vec<(String, f64)>,
    pub exact: bool,
}

/// Index of the set label equal to `relation` after normalization.
pub fn exact_match(relation: &str, set: &RelationSet) -> Option<usize> {
    let q = normalize(relation);
    set.labels().iter().position(|l| normalize(l) == q)
}

pub fn validate(relation: &str, set: &RelationSet) -> bool {
    exact_match(relation, set).is_some()
}

/// Top-`k` labels by score, ties broken by relation-set order. An exact
/// match is pinned first with score 1 without consulting the scorer.
pub fn align(
    relation: &str,
    set: &RelationSet,
    scorer: &dyn SimilarityScorer,
    k: usize,
) -> Result<AlignmentResult, AlignError> {
    if set.is_empty() {
        return Err(AlignError::EmptySet);
    }
    if k == 0 || k > set.len() {
        return Err(AlignError::BadK { k, len: set.len() });
    }
    let query = normalize(relation);
    let exact = exact_match(&query, set);
    let mut scored: Vec<(usize, f64)> = set
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if Some(i) == exact {
                (i, 1.0)
            } else {
                (i, scorer.score(&query, &normalize(l)))
            }
        })
        .collect();
    scored.sort_by(|(ia, sa), (ib, sb)| {
        let pin = |i: &usize| Some(*i) != exact;
        pin(ia).cmp(&pin(ib)).then(sb.total_cmp(sa)).then(ia.cmp(ib))
    });
    let ranked: Vec<(String, f64)> = scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (set.labels()[i].clone(), s))
        .collect();
    Ok(AlignmentResult {
        query,
        best: ranked[0].0.clone(),
        score: ranked[0].1,
        ranked,
        exact: exact.is_some(),
    })
}
