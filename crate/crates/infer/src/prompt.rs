use std::fmt;
use std::str::FromStr;

use dscre_core::instruct::{self, BuildConfig};
use dscre_core::{REInstance, RelationSet};

use crate::InferError;

pub const OPTIONS_HEADER: &str = "Options:";
pub const DEFAULT_SINGLE_WORD_REQUEST: &str = "Answer with a single word naming the relation.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Paradigm {
    /// Prompt exactly as the model was tuned on.
    #[default]
    Finetuned,
    /// The relation set is listed as options to choose from.
    ClassifyThenExtract,
    /// Free generation, aligned to the relation set afterwards.
    GenerateThenRetrieval,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Finetuned => "finetuned",
            Paradigm::ClassifyThenExtract => "classify_then_extract",
            Paradigm::GenerateThenRetrieval => "generate_then_retrieval",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "finetuned" => Ok(Paradigm::Finetuned),
            "classify_then_extract" => Ok(Paradigm::ClassifyThenExtract),
            "generate_then_retrieval" => Ok(Paradigm::GenerateThenRetrieval),
            _ => Err(format!(
                "unknown paradigm {s:?} (expected finetuned, classify_then_extract or generate_then_retrieval)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub paradigm: Paradigm,
    pub build_config: BuildConfig,
    pub relation_set: Option<RelationSet>,
    /// Appended under generate_then_retrieval.
    pub single_word_request: String,
}

impl PromptSpec {
    pub fn new(paradigm: Paradigm, build_config: BuildConfig, relation_set: Option<RelationSet>) -> Self {
        Self {
            paradigm,
            build_config,
            relation_set,
            single_word_request: DEFAULT_SINGLE_WORD_REQUEST.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), InferError> {
        self.build_config
            .validate()
            .map_err(|e| InferError::Spec(format!("build config: {e}")))?;
        if self.paradigm == Paradigm::ClassifyThenExtract && self.relation_set.is_none() {
            return Err(InferError::Spec(
                "classify_then_extract needs a relation set to list as options".into(),
            ));
        }
        if self.paradigm == Paradigm::GenerateThenRetrieval && self.single_word_request.trim().is_empty() {
            return Err(InferError::Spec("single-word request text is empty".into()));
        }
        Ok(())
    }
}

pub fn build_prompt(instance: &REInstance, spec: &PromptSpec) -> Result<String, InferError> {
    spec.validate()?;
    let input = instruct::build_input(instance, &spec.build_config).map_err(|source| InferError::Prompt {
        id: instance.id.clone(),
        source,
    })?;
    let mut prompt = format!("{}\n{}", spec.build_config.instruction_text, input);
    match spec.paradigm {
        Paradigm::Finetuned => {}
        Paradigm::ClassifyThenExtract => {
            let set = spec.relation_set.as_ref().expect("validated");
            prompt.push('\n');
            prompt.push_str(OPTIONS_HEADER);
            for label in set.labels() {
                prompt.push('\n');
                prompt.push_str(label);
            }
        }
        Paradigm::GenerateThenRetrieval => {
            prompt.push('\n');
            prompt.push_str(&spec.single_word_request);
        }
    }
    Ok(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paradigm_names_round_trip() {
        for p in [
            Paradigm::Finetuned,
            Paradigm::ClassifyThenExtract,
            Paradigm::GenerateThenRetrieval,
        ] {
            assert_eq!(p.as_str().parse::<Paradigm>().unwrap(), p);
        }
        assert_eq!(
            "generate-then-retrieval".parse::<Paradigm>().unwrap(),
            Paradigm::GenerateThenRetrieval
        );
        assert!("chat".parse::<Paradigm>().is_err());
    }

    #[test]
    fn options_require_a_set() {
        let spec = PromptSpec::new(Paradigm::ClassifyThenExtract, BuildConfig::default(), None);
        assert!(matches!(spec.validate(), Err(InferError::Spec(_))));
    }
}
