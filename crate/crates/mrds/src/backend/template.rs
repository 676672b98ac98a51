//! Prompt templates with `[placeholder]` substitution.
//!
//! The fixed templates ship as assets and are embedded at compile time.
//! The in-context-learning prompt is built programmatically for a given
//! number of example blocks.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` needs a value for `[{placeholder}]`")]
    MissingPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("template `{template}` has no placeholder `[{placeholder}]`")]
    UnknownPlaceholder {
        template: String,
        placeholder: String,
    },
}

/// The built-in prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateName {
    TopicExtraction,
    SummarySynthesis,
    DialogueSynthesis,
    Summarization,
    SummarizationZeroShot,
    SummarizationLengthControl,
}

impl TemplateName {
    fn body(self) -> &'static str {
        match self {
            TemplateName::TopicExtraction => {
                include_str!("../../assets/templates/topic_extraction.txt")
            }
            TemplateName::SummarySynthesis => {
                include_str!("../../assets/templates/summary_synthesis.txt")
            }
            TemplateName::DialogueSynthesis => {
                include_str!("../../assets/templates/dialogue_synthesis.txt")
            }
            TemplateName::Summarization => {
                include_str!("../../assets/templates/summarization.txt")
            }
            TemplateName::SummarizationZeroShot => {
                include_str!("../../assets/templates/summarization_zero_shot.txt")
            }
            TemplateName::SummarizationLengthControl => {
                include_str!("../../assets/templates/summarization_length_control.txt")
            }
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TemplateName::TopicExtraction => "topic_extraction",
            TemplateName::SummarySynthesis => "summary_synthesis",
            TemplateName::DialogueSynthesis => "dialogue_synthesis",
            TemplateName::Summarization => "summarization",
            TemplateName::SummarizationZeroShot => "summarization_zero_shot",
            TemplateName::SummarizationLengthControl => "summarization_length_control",
        };
        f.write_str(s)
    }
}

/// A prompt body whose `[name]` slots are filled by [`PromptTemplate::render`].
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    label: String,
    body: String,
}

impl PromptTemplate {
    pub fn builtin(name: TemplateName) -> Self {
        Self {
            label: name.to_string(),
            body: name.body().to_string(),
        }
    }

    /// Summarization prompt with `k` worked example blocks.
    ///
    /// Placeholders are `[dialogue 1]`/`[summary 1]` through
    /// `[dialogue k]`/`[summary k]`, then `[dialogue]` for the target.
    pub fn icl(k: usize) -> Self {
        let mut body = String::new();
        for i in 1..=k {
            body.push_str(&format!("Document: [dialogue {i}]\nSummary: [summary {i}]\n"));
        }
        body.push_str("Document: [dialogue]\nSummary:");
        Self {
            label: format!("icl_{k}"),
            body,
        }
    }

    pub fn custom(label: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            body: body.into(),
        }
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitutes every `[name]` slot from `bindings`.
    ///
    /// Every slot must have a binding and every binding must be used, so a
    /// typo on either side surfaces as an error instead of a malformed
    /// prompt. A `[` without a closing `]` is literal text.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        let mut used: HashSet<&str> = HashSet::new();
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('[') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find(']') {
                Some(close) => {
                    let name = &after[..close];
                    match bindings.iter().find(|(k, _)| *k == name) {
                        Some((k, v)) => {
                            used.insert(*k);
                            out.push_str(v);
                        }
                        None => {
                            return Err(TemplateError::MissingPlaceholder {
                                template: self.label.clone(),
                                placeholder: name.to_string(),
                            });
                        }
                    }
                    rest = &after[close + 1..];
                }
                None => {
                    out.push_str(&rest[open..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        if let Some((k, _)) = bindings.iter().find(|(k, _)| !used.contains(k)) {
            return Err(TemplateError::UnknownPlaceholder {
                template: self.label.clone(),
                placeholder: k.to_string(),
            });
        }
        Ok(out)
    }
}
