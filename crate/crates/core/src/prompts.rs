//! Prompt templates with `{name}` placeholders.
//!
//! Bundled defaults are compiled in; a template directory may override any
//! of them by file name.

use crate::perturb::AlterationKind;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {name} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("reading template {name}: {reason}")]
    Io { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TemplateName {
    GenerateObject,
    GenerateRelation,
    GenerateAttribute,
    JudgeAnswerable,
    JudgeUnanswerable,
    PopeDecompose,
    PopeVerify,
    PopeAnswer,
}

impl TemplateName {
    pub const ALL: [TemplateName; 8] = [
        TemplateName::GenerateObject,
        TemplateName::GenerateRelation,
        TemplateName::GenerateAttribute,
        TemplateName::JudgeAnswerable,
        TemplateName::JudgeUnanswerable,
        TemplateName::PopeDecompose,
        TemplateName::PopeVerify,
        TemplateName::PopeAnswer,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::GenerateObject => "generate_object.txt",
            TemplateName::GenerateRelation => "generate_relation.txt",
            TemplateName::GenerateAttribute => "generate_attribute.txt",
            TemplateName::JudgeAnswerable => "judge_answerable.txt",
            TemplateName::JudgeUnanswerable => "judge_unanswerable.txt",
            TemplateName::PopeDecompose => "pope_decompose.txt",
            TemplateName::PopeVerify => "pope_verify.txt",
            TemplateName::PopeAnswer => "pope_answer.txt",
        }
    }

    fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateName::GenerateObject
            | TemplateName::GenerateRelation
            | TemplateName::GenerateAttribute => &["altered_description", "change"],
            TemplateName::JudgeAnswerable | TemplateName::JudgeUnanswerable => {
                &["question", "gt_answer", "response"]
            }
            TemplateName::PopeDecompose => &["question"],
            TemplateName::PopeVerify => &["question", "gt_answer", "probe"],
            TemplateName::PopeAnswer => &["probe", "response"],
        }
    }

    fn bundled(self) -> &'static str {
        match self {
            TemplateName::GenerateObject => include_str!("../templates/generate_object.txt"),
            TemplateName::GenerateRelation => include_str!("../templates/generate_relation.txt"),
            TemplateName::GenerateAttribute => include_str!("../templates/generate_attribute.txt"),
            TemplateName::JudgeAnswerable => include_str!("../templates/judge_answerable.txt"),
            TemplateName::JudgeUnanswerable => include_str!("../templates/judge_unanswerable.txt"),
            TemplateName::PopeDecompose => include_str!("../templates/pope_decompose.txt"),
            TemplateName::PopeVerify => include_str!("../templates/pope_verify.txt"),
            TemplateName::PopeAnswer => include_str!("../templates/pope_answer.txt"),
        }
    }

    pub fn for_generation(kind: AlterationKind) -> Self {
        match kind {
            AlterationKind::SourceObject | AlterationKind::TargetObject => {
                TemplateName::GenerateObject
            }
            AlterationKind::Relation => TemplateName::GenerateRelation,
            AlterationKind::Attribute => TemplateName::GenerateAttribute,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Templates {
    texts: BTreeMap<TemplateName, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            texts: TemplateName::ALL
                .iter()
                .map(|n| (*n, n.bundled().to_string()))
                .collect(),
        }
    }
}

impl Templates {
    /// Bundled templates, overridden by any same-named file in `dir`.
    pub fn load(dir: Option<&Path>) -> Result<Self, TemplateError> {
        let mut t = Templates::default();
        if let Some(dir) = dir {
            for name in TemplateName::ALL {
                let path = dir.join(name.file_name());
                if path.exists() {
                    let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                        name: name.file_name().into(),
                        reason: e.to_string(),
                    })?;
                    t.set(name, text)?;
                }
            }
        }
        Ok(t)
    }

    pub fn set(&mut self, name: TemplateName, text: String) -> Result<(), TemplateError> {
        for p in name.placeholders() {
            if !text.contains(&format!("{{{p}}}")) {
                return Err(TemplateError::MissingPlaceholder {
                    name: name.file_name().into(),
                    placeholder: p.to_string(),
                });
            }
        }
        self.texts.insert(name, text);
        Ok(())
    }

    pub fn get(&self, name: TemplateName) -> &str {
        &self.texts[&name]
    }

    /// Substitute `{key}` for each pair in a single left-to-right pass, so
    /// substituted values are never re-expanded.
    pub fn render(&self, name: TemplateName, vars: &[(&str, &str)]) -> String {
        render(self.get(name), vars)
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_have_their_placeholders() {
        let mut t = Templates::default();
        for name in TemplateName::ALL {
            let text = t.get(name).to_string();
            t.set(name, text).unwrap();
        }
    }

    #[test]
    fn render_is_single_pass() {
        let s = render("a {x} b {y} {z}", &[("x", "{y}"), ("y", "Y")]);
        assert_eq!(s, "a {y} b Y {z}");
    }

    #[test]
    fn override_must_keep_placeholders() {
        let mut t = Templates::default();
        let e = t
            .set(TemplateName::JudgeAnswerable, "no placeholders".into())
            .unwrap_err();
        assert!(matches!(e, TemplateError::MissingPlaceholder { .. }));
    }
}
