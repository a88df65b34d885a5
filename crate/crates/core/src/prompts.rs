//! Prompt templates.
//!
//! Templates are plain text with `{name}` placeholders. Defaults are compiled
//! in from `prompts/`; any file with the same name in an override directory
//! replaces the default.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{HmragError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub judge: String,
    pub decompose: String,
    pub caption_refine: String,
    pub extract: String,
    pub keywords: String,
    pub vector_context: String,
    pub graph_answer: String,
    pub web_answer: String,
    pub summarize: String,
    pub refine_lightweight: String,
    pub refine_expert: String,
    pub final_answer: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            judge: include_str!("../prompts/judge.txt").to_string(),
            decompose: include_str!("../prompts/decompose.txt").to_string(),
            caption_refine: include_str!("../prompts/caption_refine.txt").to_string(),
            extract: include_str!("../prompts/extract.txt").to_string(),
            keywords: include_str!("../prompts/keywords.txt").to_string(),
            vector_context: include_str!("../prompts/vector_context.txt").to_string(),
            graph_answer: include_str!("../prompts/graph_answer.txt").to_string(),
            web_answer: include_str!("../prompts/web_answer.txt").to_string(),
            summarize: include_str!("../prompts/summarize.txt").to_string(),
            refine_lightweight: include_str!("../prompts/refine_lightweight.txt").to_string(),
            refine_expert: include_str!("../prompts/refine_expert.txt").to_string(),
            final_answer: include_str!("../prompts/final.txt").to_string(),
        }
    }
}

impl PromptSet {
    fn slots(&mut self) -> [(&'static str, &mut String); 12] {
        [
            ("judge.txt", &mut self.judge),
            ("decompose.txt", &mut self.decompose),
            ("caption_refine.txt", &mut self.caption_refine),
            ("extract.txt", &mut self.extract),
            ("keywords.txt", &mut self.keywords),
            ("vector_context.txt", &mut self.vector_context),
            ("graph_answer.txt", &mut self.graph_answer),
            ("web_answer.txt", &mut self.web_answer),
            ("summarize.txt", &mut self.summarize),
            ("refine_lightweight.txt", &mut self.refine_lightweight),
            ("refine_expert.txt", &mut self.refine_expert),
            ("final.txt", &mut self.final_answer),
        ]
    }

    /// Replaces defaults with any same-named files found in `dir`.
    pub fn with_overrides_from(mut self, dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(HmragError::Config(format!(
                "prompt directory {} does not exist",
                dir.display()
            )));
        }
        for (name, slot) in self.slots() {
            let path = dir.join(name);
            if path.is_file() {
                *slot = std::fs::read_to_string(&path).map_err(|e| HmragError::io(&path, e))?;
            }
        }
        Ok(self)
    }

    /// Replaces a single template from a file, addressed by its file name.
    pub fn override_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| HmragError::io(path, e))?;
        for (slot_name, slot) in self.slots() {
            if slot_name == name {
                *slot = text;
                return Ok(());
            }
        }
        Err(HmragError::Config(format!("unknown prompt template {name}")))
    }
}

/// Substitutes `{name}` placeholders in one left-to-right pass.
///
/// Unknown placeholders and braces that do not enclose an identifier are
/// left as written, and substituted values are never rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let vars: HashMap<&str, &str> = vars.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let ident_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        let closes = after[ident_len..].starts_with('}');
        match vars.get(&after[..ident_len]) {
            Some(value) if ident_len > 0 && closes => {
                out.push_str(value);
                rest = &after[ident_len + 1..];
            }
            _ => {
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
    fn substitutes_known_placeholders() {
        assert_eq!(render("Q: {question}!", &[("question", "why")]), "Q: why!");
    }

    #[test]
    fn leaves_json_braces_alone() {
        let t = r#"{"local_keywords": []} {question}"#;
        assert_eq!(render(t, &[("question", "x")]), r#"{"local_keywords": []} x"#);
    }

    #[test]
    fn values_are_not_rescanned() {
        assert_eq!(
            render("{a} {b}", &[("a", "{b}"), ("b", "B")]),
            "{b} B"
        );
    }

    #[test]
    fn unknown_placeholder_kept() {
        assert_eq!(render("{nope} {", &[]), "{nope} {");
    }

    #[test]
    fn defaults_carry_their_placeholders() {
        let p = PromptSet::default();
        assert!(p.judge.contains("{question}"));
        assert!(p.decompose.contains("{question}"));
        assert!(p.decompose.contains("2 to 3 simply and logically connected sub-questions"));
        assert!(p.extract.contains("{text}"));
        assert!(p.summarize.contains("{budget}"));
        assert!(p.refine_expert.contains("{evidence}"));
    }

    #[test]
    fn directory_overrides_replace_defaults() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("judge.txt"), "custom {question}").unwrap();
        let p = PromptSet::default().with_overrides_from(dir.path()).unwrap();
        assert_eq!(p.judge, "custom {question}");
        assert_eq!(p.decompose, PromptSet::default().decompose);
    }
}
