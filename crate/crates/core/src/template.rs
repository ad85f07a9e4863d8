//! Prompt templates and unit tasks. A template is a named, versioned body
//! with positional placeholders; rendering it over inputs yields a unit task
//! whose text is a pure function of (template, inputs).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What kind of answer a task solicits from the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    ListSort,
    PairCompare,
    Rate,
    PairMatch,
    Impute,
}

/// A prompt template. Placeholders are `{0}`, `{1}`, ... and every one of
/// `0..arity` must be supplied at render time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub version: u32,
    pub kind: TaskKind,
    pub arity: usize,
    pub body: String,
}

impl Template {
    fn render(&self, inputs: &[String]) -> String {
        let mut text = self.body.clone();
        for (i, input) in inputs.iter().enumerate() {
            text = text.replace(&format!("{{{i}}}"), input);
        }
        text
    }
}

/// One oracle invocation: the rendered prompt plus enough metadata to cache
/// and replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTask {
    pub kind: TaskKind,
    pub template_id: String,
    pub template_version: u32,
    pub inputs: Vec<String>,
    pub rendered_text: String,
}

/// Named template registry. Ships with a default template per task kind;
/// callers may override any entry with their own wording.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, Template>,
}

pub const SORT_LIST_TEMPLATE: &str = "sort_list";
pub const PAIR_COMPARE_TEMPLATE: &str = "pair_compare";
pub const RATE_TEMPLATE: &str = "rate";
pub const PAIR_MATCH_TEMPLATE: &str = "pair_match";
pub const IMPUTE_TEMPLATE: &str = "impute";

impl TemplateStore {
    pub fn empty() -> Self {
        TemplateStore { templates: BTreeMap::new() }
    }

    /// Registry preloaded with the built-in v1 templates.
    pub fn with_defaults() -> Self {
        let mut store = Self::empty();
        store.register(Template {
            id: SORT_LIST_TEMPLATE.to_owned(),
            version: 1,
            kind: TaskKind::ListSort,
            arity: 1,
            body: "Sort the following items from first to last. Respond with one item per line and nothing else.\n{0}".to_owned(),
        });
        store.register(Template {
            id: PAIR_COMPARE_TEMPLATE.to_owned(),
            version: 1,
            kind: TaskKind::PairCompare,
            arity: 2,
            body: "Which of the following two items ranks first? Respond with that item and nothing else.\nItem 1: {0}\nItem 2: {1}".to_owned(),
        });
        store.register(Template {
            id: RATE_TEMPLATE.to_owned(),
            version: 1,
            kind: TaskKind::Rate,
            arity: 3,
            body: "Rate the following item on a scale from {1} (least) to {2} (most). Respond with a single integer.\nItem: {0}".to_owned(),
        });
        store.register(Template {
            id: PAIR_MATCH_TEMPLATE.to_owned(),
            version: 1,
            kind: TaskKind::PairMatch,
            arity: 2,
            body: "Are Citation A and Citation B the same? Yes or No? Citation A is {0}. Citation B is {1}. Are Citation A and Citation B the same? Start your response with Yes or No".to_owned(),
        });
        store.register(Template {
            id: IMPUTE_TEMPLATE.to_owned(),
            version: 1,
            kind: TaskKind::Impute,
            arity: 3,
            body: "Fill in the missing attribute. Respond with the value and nothing else.\n{0}{1} {2} is".to_owned(),
        });
        store
    }

    pub fn register(&mut self, template: Template) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.get(id)
    }

    /// Versions of every registered template, for report snapshots.
    pub fn versions(&self) -> BTreeMap<String, u32> {
        self.templates.iter().map(|(id, t)| (id.clone(), t.version)).collect()
    }

    pub fn render_task(&self, template_id: &str, inputs: Vec<String>) -> Result<UnitTask, RenderError> {
        let template = self
            .templates
            .get(template_id)
            .ok_or_else(|| RenderError::UnknownTemplate(template_id.to_owned()))?;
        if inputs.len() != template.arity {
            return Err(RenderError::ArityMismatch {
                template: template_id.to_owned(),
                expected: template.arity,
                got: inputs.len(),
            });
        }
        let rendered_text = template.render(&inputs);
        Ok(UnitTask {
            kind: template.kind,
            template_id: template.id.clone(),
            template_version: template.version,
            inputs,
            rendered_text,
        })
    }
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::with_defaults()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} takes {expected} inputs, got {got}")]
    ArityMismatch { template: String, expected: usize, got: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rendering_is_deterministic() {
        let store = TemplateStore::with_defaults();
        let a = store.render_task(PAIR_COMPARE_TEMPLATE, inputs(&["alpha", "beta"])).unwrap();
        let b = store.render_task(PAIR_COMPARE_TEMPLATE, inputs(&["alpha", "beta"])).unwrap();
        assert_eq!(a.rendered_text, b.rendered_text);
        let alpha = a.rendered_text.find("alpha").unwrap();
        let beta = a.rendered_text.find("beta").unwrap();
        assert!(alpha < beta);
    }

    #[test]
    fn match_prompt_ends_with_instruction() {
        let store = TemplateStore::with_defaults();
        let task = store
            .render_task(PAIR_MATCH_TEMPLATE, inputs(&["title is A.", "title is B."]))
            .unwrap();
        assert!(task.rendered_text.ends_with("Start your response with Yes or No"));
        assert_eq!(task.kind, TaskKind::PairMatch);
    }

    #[test]
    fn impute_prompt_contains_serialization() {
        let store = TemplateStore::with_defaults();
        let task = store
            .render_task(
                IMPUTE_TEMPLATE,
                inputs(&["", "name is Tom Tom; addr is 1 Main St.", "city"]),
            )
            .unwrap();
        assert!(task.rendered_text.contains("name is Tom Tom; addr is 1 Main St."));
        assert!(task.rendered_text.ends_with("city is"));
    }

    #[test]
    fn unknown_template_is_an_error() {
        let store = TemplateStore::with_defaults();
        let err = store.render_task("nope", vec![]).unwrap_err();
        assert_eq!(err, RenderError::UnknownTemplate("nope".to_owned()));
    }

    #[test]
    fn arity_mismatch_is_an_error() {
        let store = TemplateStore::with_defaults();
        let err = store.render_task(PAIR_COMPARE_TEMPLATE, inputs(&["only one"])).unwrap_err();
        assert_eq!(
            err,
            RenderError::ArityMismatch { template: PAIR_COMPARE_TEMPLATE.to_owned(), expected: 2, got: 1 }
        );
    }
}
