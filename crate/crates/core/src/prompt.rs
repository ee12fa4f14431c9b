//! Versioned prompt templates.
//!
//! Each template is a text resource holding a system prompt and a user
//! body separated by a `---` line; the body carries `{name}` placeholders.
//! Template ids are recorded in run provenance so a transcript can be
//! traced back to the exact prompt wording that produced it.

use crate::modelgate::ModelRequest;

#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub id: &'static str,
    raw: &'static str,
}

pub const PLAN: PromptTemplate = PromptTemplate {
    id: "plan.v1",
    raw: include_str!("../resources/prompts/plan.v1.txt"),
};
pub const PLAN_REPAIR: PromptTemplate = PromptTemplate {
    id: "plan_repair.v1",
    raw: include_str!("../resources/prompts/plan_repair.v1.txt"),
};
pub const SQL_ZEROSHOT: PromptTemplate = PromptTemplate {
    id: "sql_zeroshot.v1",
    raw: include_str!("../resources/prompts/sql_zeroshot.v1.txt"),
};
pub const WHERE: PromptTemplate = PromptTemplate {
    id: "where.v1",
    raw: include_str!("../resources/prompts/where.v1.txt"),
};
pub const WHERE_REPAIR: PromptTemplate = PromptTemplate {
    id: "where_repair.v1",
    raw: include_str!("../resources/prompts/where_repair.v1.txt"),
};
pub const RATIONALE: PromptTemplate = PromptTemplate {
    id: "rationale.v1",
    raw: include_str!("../resources/prompts/rationale.v1.txt"),
};
pub const DECIDE_RULE: PromptTemplate = PromptTemplate {
    id: "decide_rule.v1",
    raw: include_str!("../resources/prompts/decide_rule.v1.txt"),
};
pub const DECIDE_RULE_REPAIR: PromptTemplate = PromptTemplate {
    id: "decide_rule_repair.v1",
    raw: include_str!("../resources/prompts/decide_rule_repair.v1.txt"),
};
pub const DECIDE_DESCRIPTIVE: PromptTemplate = PromptTemplate {
    id: "decide_descriptive.v1",
    raw: include_str!("../resources/prompts/decide_descriptive.v1.txt"),
};
pub const DECIDE_DESCRIPTIVE_REPAIR: PromptTemplate = PromptTemplate {
    id: "decide_descriptive_repair.v1",
    raw: include_str!("../resources/prompts/decide_descriptive_repair.v1.txt"),
};

impl PromptTemplate {
    fn parts(&self) -> (&str, &str) {
        match self.raw.split_once("\n---\n") {
            Some((system, body)) => (system.trim(), body.trim_start()),
            None => ("", self.raw),
        }
    }

    /// Render system and user text with the given substitutions. Panics on
    /// a placeholder the call site failed to supply; templates and their
    /// call sites ship together, so that is a bug, not an input error.
    pub fn render(&self, subs: &[(&str, &str)]) -> (String, String) {
        let (system, body) = self.parts();
        (substitute(self.id, system, subs), substitute(self.id, body, subs))
    }

    /// Render into a single-text-part request.
    pub fn request(&self, model_id: &str, subs: &[(&str, &str)]) -> ModelRequest {
        let (system, body) = self.render(subs);
        ModelRequest::new(system, model_id).with_text(body)
    }
}

/// Content of the last ```tag fenced block in a completion, plus the text
/// before it (the reasoning trace). Last block wins: chain-of-thought
/// output sometimes sketches a draft block before committing.
pub fn extract_fenced<'a>(text: &'a str, tag: &str) -> Option<(&'a str, &'a str)> {
    let marker = format!("```{tag}");
    let mut start = text.rfind(&marker)?;
    // reject prefix collisions like ```planning when looking for ```plan
    loop {
        let after_tag = &text[start + marker.len()..];
        if after_tag.starts_with(['\n', '\r']) || after_tag.starts_with(' ') {
            let nl = after_tag.find('\n')?;
            let content = &after_tag[nl + 1..];
            let end = content.find("```")?;
            return Some((&text[..start], &content[..end]));
        }
        if start == 0 {
            return None;
        }
        start = text[..start].rfind(&marker)?;
    }
}

// single left-to-right pass over the template; substituted values are
// pasted verbatim and never rescanned
fn substitute(id: &str, template: &str, subs: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let key_end = after.find('}');
        let key = key_end.map(|end| &after[..end]).unwrap_or("");
        let placeholder =
            !key.is_empty() && key.chars().all(|c| c.is_ascii_lowercase() || c == '_');
        if placeholder {
            match subs.iter().find(|(k, _)| *k == key) {
                Some((_, value)) => out.push_str(value),
                None => panic!("template {id} placeholder {{{key}}} not supplied"),
            }
            rest = &after[key_end.unwrap() + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    out
}
