//! Instruction-tuning example construction with the entity-marker,
//! appended-triplet and triplet-result switches.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Entity, REInstance, Sentence, Span};

pub const DEFAULT_INSTRUCTION: &str = "Please extract the relation based on the given sentence and entities.";

/// Placed between the sentence and the appended query triplet.
pub const QUERY_SEPARATOR: &str = "\n";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("{role} entity {surface:?} has no span and does not occur in the sentence")]
    EntityNotFound { role: &'static str, surface: String },
    #[error("explicit head span {head} overlaps tail span {tail}")]
    OverlappingSpans { head: Span, tail: Span },
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("instance {id}: {source}")]
    Instance {
        id: String,
        #[source]
        source: Box<BuildError>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub instruction_text: String,
    /// Entity markers: wrap entity mentions in `[` `]`.
    pub em: bool,
    /// Appended triplet: suffix the input with `([h], ?, [t])`.
    pub at: bool,
    /// Triplet results: emit full triplets instead of bare labels.
    pub tr: bool,
    pub multi_separator: String,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            instruction_text: DEFAULT_INSTRUCTION.to_string(),
            em: true,
            at: true,
            tr: true,
            multi_separator: ", ".to_string(),
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), BuildError> {
        if self.instruction_text.trim().is_empty() {
            return Err(BuildError::EmptyInstruction);
        }
        Ok(())
    }
}

/// The five instruction-design variants compared in ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    WithoutEm,
    WithoutAt,
    WithoutTr,
    WithoutAtTr,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::WithoutEm,
        Ablation::WithoutAt,
        Ablation::WithoutTr,
        Ablation::WithoutAtTr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::WithoutEm => "w/o EM",
            Ablation::WithoutAt => "w/o AT",
            Ablation::WithoutTr => "w/o TR",
            Ablation::WithoutAtTr => "w/o AT+TR",
        }
    }

    pub fn apply(self, base: &BuildConfig) -> BuildConfig {
        let mut c = base.clone();
        c.em = true;
        c.at = true;
        c.tr = true;
        match self {
            Ablation::Full => {}
            Ablation::WithoutEm => c.em = false,
            Ablation::WithoutAt => c.at = false,
            Ablation::WithoutTr => c.tr = false,
            Ablation::WithoutAtTr => {
                c.at = false;
                c.tr = false;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionExample {
    pub instruction: String,
    pub input: String,
    pub output: String,
    #[serde(skip)]
    pub source_id: String,
}

fn candidate_spans(sentence: &Sentence, e: &Entity) -> Vec<Span> {
    let mut spans = sentence.find_occurrences(e.surface());
    if let Some(sp) = e.span() {
        if !spans.contains(&sp) {
            spans.push(sp);
        }
    }
    spans
}

/// Insert `[` `]` around every mention of head and tail.
///
/// Claim order: explicit spans, then occurrences of the longer surface,
/// then the shorter one. A mention overlapping an already-claimed span is
/// left unmarked, so brackets never nest or cross.
pub fn mark_entities(sentence: &Sentence, head: &Entity, tail: &Entity) -> Result<String, BuildError> {
    for (role, e) in [("head", head), ("tail", tail)] {
        if e.span().is_none() && sentence.find_occurrences(e.surface()).is_empty() {
            return Err(BuildError::EntityNotFound {
                role,
                surface: e.surface().to_string(),
            });
        }
    }
    if let (Some(h), Some(t)) = (head.span(), tail.span()) {
        if h != t && h.overlaps(&t) {
            return Err(BuildError::OverlappingSpans { head: h, tail: t });
        }
    }

    let mut claimed: Vec<Span> = Vec::new();
    let claim = |sp: Span, claimed: &mut Vec<Span>| {
        if !claimed.iter().any(|c| c.overlaps(&sp)) {
            claimed.push(sp);
        }
    };
    for sp in [head.span(), tail.span()].into_iter().flatten() {
        claim(sp, &mut claimed);
    }
    let (first, second) = if head.char_len() >= tail.char_len() {
        (head, tail)
    } else {
        (tail, head)
    };
    for e in [first, second] {
        for sp in candidate_spans(sentence, e) {
            claim(sp, &mut claimed);
        }
    }
    claimed.sort();

    let chars = sentence.chars();
    let mut out = String::with_capacity(sentence.text().len() + 2 * claimed.len());
    let mut pos = 0;
    for sp in claimed {
        out.extend(&chars[pos..sp.start]);
        out.push('[');
        out.extend(&chars[sp.start..sp.end]);
        out.push(']');
        pos = sp.end;
    }
    out.extend(&chars[pos..]);
    Ok(out)
}

pub fn query_triplet(head: &str, tail: &str, bracketed: bool) -> String {
    if bracketed {
        format!("([{head}], ?, [{tail}])")
    } else {
        format!("({head}, ?, {tail})")
    }
}

pub fn render_output(instance: &REInstance, config: &BuildConfig) -> String {
    if config.tr {
        instance
            .gold_triplets()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(&config.multi_separator)
    } else {
        instance.gold_relations.iter().collect::<Vec<_>>().join(",")
    }
}

/// The input string alone (marked or raw sentence plus optional query).
pub fn build_input(instance: &REInstance, config: &BuildConfig) -> Result<String, BuildError> {
    let mut input = if config.em {
        mark_entities(&instance.sentence, &instance.head, &instance.tail)?
    } else {
        instance.sentence.text().to_string()
    };
    if config.at {
        input.push_str(QUERY_SEPARATOR);
        input.push_str(&query_triplet(
            instance.head.surface(),
            instance.tail.surface(),
            config.em,
        ));
    }
    Ok(input)
}

pub fn build_example(instance: &REInstance, config: &BuildConfig) -> Result<InstructionExample, BuildError> {
    config.validate()?;
    Ok(InstructionExample {
        instruction: config.instruction_text.clone(),
        input: build_input(instance, config)?,
        output: render_output(instance, config),
        source_id: instance.id.clone(),
    })
}

/// Order-preserving; stops at the first failing instance.
pub fn build_dataset(instances: &[REInstance], config: &BuildConfig) -> Result<Vec<InstructionExample>, BuildError> {
    config.validate()?;
    instances
        .iter()
        .map(|inst| {
            build_example(inst, config).map_err(|e| BuildError::Instance {
                id: inst.id.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Like [`build_dataset`] but collects every failure.
pub fn build_dataset_all(
    instances: &[REInstance],
    config: &BuildConfig,
) -> Result<Vec<InstructionExample>, Vec<BuildError>> {
    config.validate().map_err(|e| vec![e])?;
    let mut ok = Vec::with_capacity(instances.len());
    let mut errs = Vec::new();
    for inst in instances {
        match build_example(inst, config) {
            Ok(ex) => ok.push(ex),
            Err(e) => errs.push(BuildError::Instance {
                id: inst.id.clone(),
                source: Box::new(e),
            }),
        }
    }
    if errs.is_empty() {
        Ok(ok)
    } else {
        Err(errs)
    }
}

/// Writes the dataset as a JSON array of `{instruction, input, output}`.
pub fn write_dataset<W: Write>(examples: &[InstructionExample], mut out: W) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut out, examples)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn read_dataset(text: &str) -> serde_json::Result<Vec<InstructionExample>> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GoldRelations;

    fn inst(sentence: &str, head: &str, tail: &str, rels: &[&str]) -> REInstance {
        REInstance::new(
            "x",
            Sentence::new(sentence).unwrap(),
            Entity::new(head).unwrap(),
            Entity::new(tail).unwrap(),
            rels.iter().copied().collect::<GoldRelations>(),
        )
        .unwrap()
    }

    #[test]
    fn marks_longest_first() {
        let s = Sentence::new("双汇国际控股双汇").unwrap();
        let out = mark_entities(&s, &Entity::new("双汇国际").unwrap(), &Entity::new("双汇").unwrap()).unwrap();
        assert_eq!(out, "[双汇国际]控股[双汇]");
        // order of arguments does not matter
        let out = mark_entities(&s, &Entity::new("双汇").unwrap(), &Entity::new("双汇国际").unwrap()).unwrap();
        assert_eq!(out, "[双汇国际]控股[双汇]");
    }

    #[test]
    fn equal_entities_marked_once() {
        let s = Sentence::new("甲和甲").unwrap();
        let e = Entity::new("甲").unwrap();
        assert_eq!(mark_entities(&s, &e, &e).unwrap(), "[甲]和[甲]");
    }

    #[test]
    fn missing_entity_errors() {
        let s = Sentence::new("今天天气很好").unwrap();
        let err = mark_entities(&s, &Entity::new("双汇").unwrap(), &Entity::new("天气").unwrap()).unwrap_err();
        assert_eq!(
            err,
            BuildError::EntityNotFound {
                role: "head",
                surface: "双汇".into()
            }
        );
    }

    #[test]
    fn crossing_mentions_do_not_cross() {
        let s = Sentence::new("ABCD").unwrap();
        let out = mark_entities(&s, &Entity::new("ABC").unwrap(), &Entity::new("CD").unwrap()).unwrap();
        assert_eq!(out, "[ABC]D");
    }

    #[test]
    fn explicit_span_is_claimed_first() {
        let s = Sentence::new("双汇国际控股双汇").unwrap();
        let head = Entity::with_span("双汇", Span::new(0, 2), &s).unwrap();
        let tail = Entity::new("双汇国际").unwrap();
        assert_eq!(mark_entities(&s, &head, &tail).unwrap(), "[双汇]国际控股[双汇]");
    }

    #[test]
    fn full_config_example() {
        let i = inst("双汇国际控股双汇", "双汇国际", "双汇", &["分析"]);
        let ex = build_example(&i, &BuildConfig::default()).unwrap();
        assert_eq!(ex.instruction, DEFAULT_INSTRUCTION);
        assert_eq!(ex.input, "[双汇国际]控股[双汇]\n([双汇国际], ?, [双汇])");
        assert_eq!(ex.output, "([双汇国际], 分析, [双汇])");
    }

    #[test]
    fn multi_relation_output_joined() {
        let i = inst("双汇国际控股双汇", "双汇国际", "双汇", &["自己", "分析"]);
        let ex = build_example(&i, &BuildConfig::default()).unwrap();
        assert_eq!(ex.output, "([双汇国际], 自己, [双汇]), ([双汇国际], 分析, [双汇])");
        let ex = build_example(&i, &Ablation::WithoutTr.apply(&BuildConfig::default())).unwrap();
        assert_eq!(ex.output, "自己,分析");
    }

    #[test]
    fn all_knobs_off() {
        let i = inst("甲与乙无关", "甲", "乙", &["NA"]);
        let cfg = BuildConfig {
            em: false,
            at: false,
            tr: false,
            ..BuildConfig::default()
        };
        let ex = build_example(&i, &cfg).unwrap();
        assert_eq!(ex.input, "甲与乙无关");
        assert_eq!(ex.output, "NA");
    }

    #[test]
    fn without_em_keeps_plain_query() {
        let i = inst("双汇国际控股双汇", "双汇国际", "双汇", &["分析"]);
        let ex = build_example(&i, &Ablation::WithoutEm.apply(&BuildConfig::default())).unwrap();
        assert_eq!(ex.input, "双汇国际控股双汇\n(双汇国际, ?, 双汇)");
        assert_eq!(ex.output, "([双汇国际], 分析, [双汇])");
    }

    #[test]
    fn dataset_error_names_instance() {
        let good = inst("AB", "A", "B", &["r"]);
        let mut bad = good.clone();
        bad.id = "2".into();
        bad.tail = Entity::new("Z").unwrap();
        let mut third = good.clone();
        third.id = "3".into();
        let err = build_dataset(&[good, bad, third], &BuildConfig::default()).unwrap_err();
        match err {
            BuildError::Instance { id, .. } => assert_eq!(id, "2"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn empty_instruction_rejected() {
        let i = inst("AB", "A", "B", &["r"]);
        let cfg = BuildConfig {
            instruction_text: " ".into(),
            ..BuildConfig::default()
        };
        assert_eq!(build_example(&i, &cfg).unwrap_err(), BuildError::EmptyInstruction);
    }

    #[test]
    fn dataset_file_has_three_fields() {
        let i = inst("AB", "A", "B", &["r"]);
        let ex = build_dataset(&[i], &BuildConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ex, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let obj = v[0].as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["input", "instruction", "output"]);
    }
}
