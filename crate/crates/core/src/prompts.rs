//! Prompt templates for generation and judging.
//!
//! Templates are plain text assets with `{slot}` placeholders; the bundled
//! set lives under `prompts/` and a directory of overrides can be loaded at
//! runtime. Substitution is literal (no escaping), so JSON examples inside
//! the templates pass through untouched.

use std::path::Path;

use crate::error::{Error, Result};

/// Replace each `{name}` slot with its value. Unknown slots are left as-is
/// so a forgotten variable shows up verbatim in the prompt (and in tests).
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// The full template set used by the dialogue engine and the evaluator.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    pub plan: String,
    pub phrases: String,
    pub turn: String,
    pub direct: String,
    pub cot: String,
    pub judge: String,
    pub judge_coverage: String,
}

impl PromptLibrary {
    pub fn bundled() -> Self {
        PromptLibrary {
            plan: include_str!("../prompts/plan.txt").to_string(),
            phrases: include_str!("../prompts/phrases.txt").to_string(),
            turn: include_str!("../prompts/turn.txt").to_string(),
            direct: include_str!("../prompts/direct.txt").to_string(),
            cot: include_str!("../prompts/cot.txt").to_string(),
            judge: include_str!("../prompts/judge.txt").to_string(),
            judge_coverage: include_str!("../prompts/judge_coverage.txt").to_string(),
        }
    }

    /// Load overrides from a directory holding the same file names as the
    /// bundled set (`plan.txt`, `phrases.txt`, `turn.txt`, `direct.txt`,
    /// `cot.txt`, `judge.txt`, `judge_coverage.txt`). Missing files fall
    /// back to the bundled template.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Validation(format!(
                "prompt directory {} does not exist",
                dir.display()
            )));
        }
        let mut lib = Self::bundled();
        let slots: [(&str, &mut String); 7] = [
            ("plan.txt", &mut lib.plan),
            ("phrases.txt", &mut lib.phrases),
            ("turn.txt", &mut lib.turn),
            ("direct.txt", &mut lib.direct),
            ("cot.txt", &mut lib.cot),
            ("judge.txt", &mut lib.judge),
            ("judge_coverage.txt", &mut lib.judge_coverage),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.is_file() {
                *slot = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(lib)
    }
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::bundled()
    }
}
