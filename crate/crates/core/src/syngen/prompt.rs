use serde::{Deserialize, Serialize};

use super::{GenerationSpec, Variant};

pub const SYSTEM_PROMPT: &str = "You are an experienced recruitment ad copywriter expert, good at generating recruitment ad sentences based on skills. Please respond by generating sentences used in hypothetical recruitment ads based on user requirements, representing the demand for specific skills. Ensure diversity in the generated sentences and do not repeat sentences or structures.";

const NO_SKILL_LINE: &str = "Do not include any requirements regarding labor skills.";

/// Appended for skills whose definitions sit close to many others.
pub const CONTEXT_ANCHOR_SUFFIX: &str =
    "Each sentence must name a concrete job role or task context, not only generic wording.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessages {
    pub system: String,
    pub user: String,
}

pub fn render_prompt(spec: &GenerationSpec) -> PromptMessages {
    let mut user = format!("Number of sentences: {}\n", spec.n_sentences);
    match spec.variant {
        Variant::Single => {
            let s = &spec.skills[0];
            user.push_str(&format!(
                "Skill: {}\nDefinition: {}",
                s.preferred_label, s.description
            ));
        }
        Variant::MultiConstrained | Variant::MultiRandom => {
            let (a, b) = (&spec.skills[0], &spec.skills[1]);
            user.push_str(&format!(
                "Skill 1: {}\nDefinition 1: {}\nSkill 2: {}\nDefinition 2: {}",
                a.preferred_label, a.description, b.preferred_label, b.description
            ));
        }
        Variant::None => user.push_str(NO_SKILL_LINE),
    }
    if spec.context_anchors && spec.variant != Variant::None {
        user.push('\n');
        user.push_str(CONTEXT_ANCHOR_SUFFIX);
    }
    PromptMessages {
        system: SYSTEM_PROMPT.to_string(),
        user,
    }
}

/// Strips one leading list marker, if present: `- `, `* `, `•`, or a
/// number followed by `.`, `)`, `、` or `．`.
fn strip_marker(line: &str) -> Option<&str> {
    if let Some(rest) = line.strip_prefix('•').or_else(|| line.strip_prefix('·')) {
        return Some(rest);
    }
    for bullet in ["- ", "* ", "-\t", "*\t"] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        for sep in ['.', ')', '、', '．', '）'] {
            if let Some(after) = rest.strip_prefix(sep) {
                return Some(after);
            }
        }
    }
    None
}

/// Splits raw model output into sentences: one per line, list markers and
/// surrounding whitespace removed, blank lines dropped, order kept.
pub fn parse_llm_output(raw: &str) -> Vec<String> {
    raw.lines()
        .filter_map(|line| {
            let mut s = line.trim();
            while let Some(rest) = strip_marker(s) {
                s = rest.trim_start();
            }
            let s = s.trim();
            (!s.is_empty()).then(|| s.to_string())
        })
        .collect()
}
