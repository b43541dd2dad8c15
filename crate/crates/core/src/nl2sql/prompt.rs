//! Prompt template and budgeted prompt assembly.

use std::path::Path;

use serde::Serialize;

use super::Nl2SqlError;
use crate::catalog::{serialize_schema_for_prompt, Catalog};

pub const SAMPLE_TEMPLATE: &str = include_str!("../../assets/system_prompt.tmpl");
pub const DEFAULT_TOKEN_BUDGET: usize = 8000;
const USER_MARKER: &str = "---user---";

/// Character-count approximation of model tokens: `ceil(chars / 4)`.
pub fn approx_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// System prompt template with `{schema}`, `{rules}`, `{examples}` and
/// `{question}` slots. A `---user---` line separates the system message from
/// the user message. Lines starting with `# ` before any other content are
/// header comments and are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    system: String,
    user: String,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, Nl2SqlError> {
        let mut version = String::from("unversioned");
        let mut body = Vec::new();
        let mut in_header = true;
        for line in text.lines() {
            if in_header {
                if let Some(comment) = line.strip_prefix("# ") {
                    if let Some(v) = comment.strip_prefix("template:") {
                        version = v.trim().to_string();
                    }
                    continue;
                }
                in_header = false;
            }
            body.push(line);
        }
        let body = body.join("\n");
        let (system, user) = body
            .split_once(&format!("\n{USER_MARKER}\n"))
            .ok_or_else(|| {
                Nl2SqlError::Config(format!("prompt template has no `{USER_MARKER}` line"))
            })?;
        for slot in ["{schema}", "{rules}", "{examples}", "{question}"] {
            if !system.contains(slot) && !user.contains(slot) {
                return Err(Nl2SqlError::Config(format!(
                    "prompt template is missing the {slot} slot"
                )));
            }
        }
        Ok(Self {
            version,
            system: system.to_string(),
            user: user.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Nl2SqlError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Nl2SqlError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn sample() -> Self {
        Self::parse(SAMPLE_TEMPLATE).expect("shipped template parses")
    }

    fn fill(part: &str, b: &PromptBundle) -> String {
        part.replace("{schema}", b.schema_section.trim_end())
            .replace("{rules}", b.system_section.trim_end())
            .replace("{examples}", &b.examples_text())
            .replace("{question}", &b.question_section)
    }
}

/// One few-shot example as placed in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptExample {
    pub example_id: String,
    pub question: String,
    pub sql: String,
    pub similarity: f64,
}

/// The two chat messages sent to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChatMessages {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub template_version: String,
    /// Policy and business rules.
    pub system_section: String,
    pub schema_section: String,
    /// Descending similarity.
    pub examples_section: Vec<PromptExample>,
    /// English question.
    pub question_section: String,
    pub approx_token_count: usize,
    #[serde(skip)]
    template: Option<PromptTemplate>,
}

impl PromptBundle {
    pub fn examples_text(&self) -> String {
        if self.examples_section.is_empty() {
            return "(none)".into();
        }
        let parts: Vec<String> = self
            .examples_section
            .iter()
            .map(|e| format!("Q: {}\nSQL: {}", e.question, e.sql))
            .collect();
        parts.join("\n\n")
    }

    pub fn messages(&self) -> ChatMessages {
        let t = self
            .template
            .as_ref()
            .expect("bundle built by assemble_prompt");
        ChatMessages {
            system: PromptTemplate::fill(&t.system, self),
            user: PromptTemplate::fill(&t.user, self),
        }
    }

    /// Messages for a retry, with the guard's reason appended to the user
    /// message.
    pub fn messages_with_feedback(&self, feedback: Option<&str>) -> ChatMessages {
        let mut m = self.messages();
        if let Some(reason) = feedback {
            m.user.push_str(&format!(
                "\n\nYour previous query was rejected by the validator: {reason}\nReturn a corrected query.\nSQL:\n"
            ));
        }
        m
    }

    fn count_tokens(&self) -> usize {
        let m = self.messages();
        approx_tokens(&m.system) + approx_tokens(&m.user)
    }
}

/// Policy text placed in the `{rules}` slot.
pub fn render_rules(catalog: &Catalog) -> String {
    let p = &catalog.policy;
    let mut out = Vec::new();
    out.push(format!(
        "- Allowed statements: {}.",
        p.allowed_statement_kinds.join(", ")
    ));
    if let Some(en) = p.forbidden_topic_terms.get(&crate::text::Language::En) {
        let topics: Vec<String> = en
            .iter()
            .map(|t| t.trim_end_matches('*').to_string())
            .collect();
        out.push(format!(
            "- Financial data is restricted. If the question is about any of: {}, reply exactly: REFUSE: {}",
            topics.join(", "),
            p.refusal_message
        ));
    }
    if !p.pii_redact_columns.is_empty() {
        let cols: Vec<String> = p
            .pii_redact_columns
            .iter()
            .map(ToString::to_string)
            .collect();
        out.push(format!(
            "- Identifier columns {} are redacted in every result.",
            cols.join(", ")
        ));
    }
    out.join("\n")
}

/// Builds the prompt. Examples arrive in descending similarity and at most
/// `k` are used; while the prompt exceeds `budget` tokens the least similar
/// remaining example is dropped. If system, schema and question alone do
/// not fit, the budget is a configuration error.
pub fn assemble_prompt(
    catalog: &Catalog,
    template: &PromptTemplate,
    examples: &[PromptExample],
    question: &str,
    k: usize,
    budget: usize,
) -> Result<PromptBundle, Nl2SqlError> {
    let mut bundle = PromptBundle {
        template_version: template.version.clone(),
        system_section: render_rules(catalog),
        schema_section: serialize_schema_for_prompt(catalog),
        examples_section: examples.iter().take(k).cloned().collect(),
        question_section: question.to_string(),
        approx_token_count: 0,
        template: Some(template.clone()),
    };
    loop {
        let tokens = bundle.count_tokens();
        if tokens <= budget {
            bundle.approx_token_count = tokens;
            return Ok(bundle);
        }
        if bundle.examples_section.pop().is_none() {
            return Err(Nl2SqlError::Config(format!(
                "token budget {budget} cannot hold the system, schema and question sections ({tokens} tokens)"
            )));
        }
    }
}
