//! Dialogue quality evaluation: eight judged metrics on a 1-5 scale, a
//! coverage rate on 0-100 (judged or computed deterministically from
//! character n-gram overlap), and a single aggregate average.
//!
//! Judges are models too, so every reply gets the same one-reprompt
//! treatment as generation. A metric whose reply stays unusable becomes a
//! recorded gap rather than an error; gapped evaluations simply carry no
//! aggregate.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::engine::{filter_dialogue, Dialogue, FilterThresholds, FilterVerdict};
use crate::error::{Error, Result};
use crate::gateway::{
    complete_with_reprompt, extract_first_json_object, ChatBackend, ReplyOutcome,
};
use crate::prompts::{render, PromptLibrary};
use crate::span::coverage_fraction;

/// The nine quality metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Informativeness,
    Understanding,
    Usefulness,
    Fidelity,
    Flexibility,
    Consistency,
    Cohesion,
    Interactivity,
    CoverageRate,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Informativeness,
        Metric::Understanding,
        Metric::Usefulness,
        Metric::Fidelity,
        Metric::Flexibility,
        Metric::Consistency,
        Metric::Cohesion,
        Metric::Interactivity,
        Metric::CoverageRate,
    ];

    /// Short column key, also used for gap and rationale labels.
    pub fn key(self) -> &'static str {
        match self {
            Metric::Informativeness => "info",
            Metric::Understanding => "ud",
            Metric::Usefulness => "uf",
            Metric::Fidelity => "fd",
            Metric::Flexibility => "fl",
            Metric::Consistency => "cs",
            Metric::Cohesion => "co",
            Metric::Interactivity => "ia",
            Metric::CoverageRate => "cr",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Informativeness => "Informativeness",
            Metric::Understanding => "Understanding",
            Metric::Usefulness => "Usefulness",
            Metric::Fidelity => "Fidelity",
            Metric::Flexibility => "Flexibility",
            Metric::Consistency => "Consistency",
            Metric::Cohesion => "Cohesion",
            Metric::Interactivity => "Interactivity",
            Metric::CoverageRate => "Coverage",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            Metric::Informativeness => {
                "how much concrete, accurate information from the document the dialogue conveys"
            }
            Metric::Understanding => {
                "how well the turn interprets the conversation so far and responds to the point"
            }
            Metric::Usefulness => {
                "how useful the exchange would be to someone trying to learn what the document says"
            }
            Metric::Fidelity => {
                "how faithful the dialogue stays to the document, with no invented or contradicted facts"
            }
            Metric::Flexibility => {
                "how naturally the dialogue handles turns that step outside the document, such as opinions or asides"
            }
            Metric::Consistency => {
                "whether each speaker keeps a consistent voice, stance, and factual story across turns"
            }
            Metric::Cohesion => {
                "how smoothly each turn connects to the previous one so the whole reads as one conversation"
            }
            Metric::Interactivity => {
                "how engaged and mutually responsive the two speakers are"
            }
            Metric::CoverageRate => {
                "what share of the document's distinct content the dialogue touches"
            }
        }
    }
}

/// How the coverage rate is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrMethod {
    /// Ask the judge model for a 0-100 estimate.
    Judge,
    /// Compute 100 x n-gram coverage of the document by the turn text.
    Deterministic,
}

impl FromStr for CrMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "judge" => Ok(CrMethod::Judge),
            "deterministic" => Ok(CrMethod::Deterministic),
            other => Err(Error::Validation(format!(
                "unknown coverage method {other:?} (expected judge or deterministic)"
            ))),
        }
    }
}

/// The eight judged scores; `None` marks a gap.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub info: Option<f64>,
    pub ud: Option<f64>,
    pub uf: Option<f64>,
    pub fd: Option<f64>,
    pub fl: Option<f64>,
    pub cs: Option<f64>,
    pub co: Option<f64>,
    pub ia: Option<f64>,
}

impl MetricScores {
    /// All eight scores in fixed column order, if none is missing.
    pub fn all_eight(&self) -> Option<[f64; 8]> {
        Some([
            self.info?, self.ud?, self.uf?, self.fd?, self.fl?, self.cs?, self.co?, self.ia?,
        ])
    }
}

/// One dialogue's full evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEvaluation {
    pub dialogue_id: String,
    pub judge: String,
    pub mode: crate::engine::Mode,
    pub generator: String,
    pub topic: String,
    pub cr_method: CrMethod,
    pub scores: MetricScores,
    pub cr: Option<f64>,
    pub avg: Option<f64>,
    #[serde(default)]
    pub gaps: Vec<String>,
    #[serde(default)]
    pub rationales: BTreeMap<String, String>,
}

impl DialogueEvaluation {
    pub fn is_complete(&self) -> bool {
        self.gaps.is_empty() && self.avg.is_some()
    }
}

/// Combine the eight 1-5 scores and a 0-100 coverage rate into one number:
/// coverage is rescaled onto the same 0-5 band and the nine values are
/// averaged.
pub fn aggregate_avg(eight: [f64; 8], cr: f64) -> Result<f64> {
    for v in eight {
        if !(1.0..=5.0).contains(&v) {
            return Err(Error::Domain(format!("metric score {v} outside [1, 5]")));
        }
    }
    if !(0.0..=100.0).contains(&cr) {
        return Err(Error::Domain(format!(
            "coverage rate {cr} outside [0, 100]"
        )));
    }
    Ok((eight.iter().sum::<f64>() + cr / 20.0) / 9.0)
}

/// Coverage rate without a judge: how much of the document's content
/// n-grams appear anywhere in the dialogue's queries and responses.
pub fn compute_cr_deterministic(dlg: &Dialogue, doc: &Document) -> f64 {
    let texts: Vec<&str> = dlg
        .turns
        .iter()
        .flat_map(|t| [t.query.as_str(), t.response.as_str()])
        .collect();
    100.0 * coverage_fraction(doc, &texts)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Scores dialogues with a judge backend.
pub struct Evaluator<'a> {
    judge: &'a dyn ChatBackend,
    prompts: PromptLibrary,
    cr_method: CrMethod,
    thresholds: FilterThresholds,
}

impl<'a> Evaluator<'a> {
    pub fn new(judge: &'a dyn ChatBackend, cr_method: CrMethod) -> Self {
        Evaluator {
            judge,
            prompts: PromptLibrary::bundled(),
            cr_method,
            thresholds: FilterThresholds::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptLibrary) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_thresholds(mut self, thresholds: FilterThresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    /// Score one dialogue. The dialogue must pass the quality filter first;
    /// scoring rejects is a waste of judge calls and skews summaries.
    pub fn evaluate(&self, dlg: &Dialogue, doc: &Document) -> Result<DialogueEvaluation> {
        if let FilterVerdict::Reject { reason } = filter_dialogue(dlg, doc, &self.thresholds) {
            return Err(Error::Domain(format!(
                "dialogue {} rejected by filter: {reason}",
                dlg.id
            )));
        }

        let text = render_dialogue(dlg);
        let mut gaps: Vec<String> = Vec::new();
        let mut rationales: BTreeMap<String, String> = BTreeMap::new();
        let mut scores = MetricScores::default();

        let whole = "Judge the dialogue as a whole.".to_string();
        scores.info = self.score_single(
            Metric::Informativeness,
            whole.clone(),
            doc,
            &text,
            &mut gaps,
            &mut rationales,
        )?;

        // Understanding is judged turn by turn and averaged.
        let mut per_turn: Vec<f64> = Vec::with_capacity(dlg.turns.len());
        let mut understanding_gap = false;
        for i in 1..=dlg.turns.len() {
            let name = format!("Understanding (turn {i})");
            let focus = format!("Score only turn {i} against the conversation before it.");
            match self.judge_metric(
                &name,
                Metric::Understanding.definition(),
                &focus,
                doc,
                &text,
            )? {
                ReplyOutcome::Usable((score, rationale)) => {
                    per_turn.push(score as f64);
                    rationales.insert(format!("ud-turn-{i}"), rationale);
                }
                ReplyOutcome::Unusable(reason) => {
                    understanding_gap = true;
                    gaps.push(format!("ud-turn-{i}: {reason}"));
                }
            }
        }
        scores.ud = if understanding_gap || per_turn.is_empty() {
            None
        } else {
            Some(round2(per_turn.iter().sum::<f64>() / per_turn.len() as f64))
        };

        scores.uf = self.score_single(
            Metric::Usefulness,
            whole.clone(),
            doc,
            &text,
            &mut gaps,
            &mut rationales,
        )?;
        scores.fd = self.score_single(
            Metric::Fidelity,
            whole.clone(),
            doc,
            &text,
            &mut gaps,
            &mut rationales,
        )?;
        scores.fl = self.score_single(
            Metric::Flexibility,
            flexibility_focus(dlg),
            doc,
            &text,
            &mut gaps,
            &mut rationales,
        )?;
        scores.cs = self.score_single(
            Metric::Consistency,
            whole.clone(),
            doc,
            &text,
            &mut gaps,
            &mut rationales,
        )?;
        scores.co = self.score_single(
            Metric::Cohesion,
            whole.clone(),
            doc,
            &text,
            &mut gaps,
            &mut rationales,
        )?;
        scores.ia = self.score_single(
            Metric::Interactivity,
            whole,
            doc,
            &text,
            &mut gaps,
            &mut rationales,
        )?;

        let cr = match self.cr_method {
            CrMethod::Deterministic => Some(compute_cr_deterministic(dlg, doc)),
            CrMethod::Judge => self.judge_coverage(doc, &text, &mut gaps, &mut rationales)?,
        };

        let avg = match (scores.all_eight(), cr) {
            (Some(eight), Some(cr)) => Some(aggregate_avg(eight, cr)?),
            _ => None,
        };

        Ok(DialogueEvaluation {
            dialogue_id: dlg.id.clone(),
            judge: self.judge.model_name().to_string(),
            mode: dlg.mode,
            generator: dlg.generator.clone(),
            topic: doc.topic.clone(),
            cr_method: self.cr_method,
            scores,
            cr,
            avg,
            gaps,
            rationales,
        })
    }

    fn score_single(
        &self,
        metric: Metric,
        focus: String,
        doc: &Document,
        text: &str,
        gaps: &mut Vec<String>,
        rationales: &mut BTreeMap<String, String>,
    ) -> Result<Option<f64>> {
        match self.judge_metric(metric.name(), metric.definition(), &focus, doc, text)? {
            ReplyOutcome::Usable((score, rationale)) => {
                rationales.insert(metric.key().to_string(), rationale);
                Ok(Some(score as f64))
            }
            ReplyOutcome::Unusable(reason) => {
                gaps.push(format!("{}: {reason}", metric.key()));
                Ok(None)
            }
        }
    }

    fn judge_metric(
        &self,
        metric_name: &str,
        definition: &str,
        focus: &str,
        doc: &Document,
        text: &str,
    ) -> Result<ReplyOutcome<(i64, String)>> {
        let prompt = render(
            &self.prompts.judge,
            &[
                ("metric_name", metric_name),
                ("metric_definition", definition),
                ("document", doc.text()),
                ("dialogue", text),
                ("metric_focus", focus),
            ],
        );

        #[derive(Deserialize)]
        struct JudgeReply {
            score: serde_json::Value,
            #[serde(default)]
            rationale: String,
        }

        complete_with_reprompt(self.judge, prompt, "score, rationale", |reply| {
            let source = extract_first_json_object(reply)
                .ok_or_else(|| Error::Parse("no JSON object found in reply".into()))?;
            let parsed: JudgeReply = serde_json::from_str(source).map_err(|e| {
                Error::Validation(format!("reply does not fit the score shape: {e}"))
            })?;
            let score = parsed
                .score
                .as_i64()
                .ok_or_else(|| Error::Validation("score is not an integer".into()))?;
            if !(1..=5).contains(&score) {
                return Err(Error::Validation(format!("score {score} outside 1-5")));
            }
            Ok((score, parsed.rationale))
        })
    }

    fn judge_coverage(
        &self,
        doc: &Document,
        text: &str,
        gaps: &mut Vec<String>,
        rationales: &mut BTreeMap<String, String>,
    ) -> Result<Option<f64>> {
        let prompt = render(
            &self.prompts.judge_coverage,
            &[("document", doc.text()), ("dialogue", text)],
        );

        #[derive(Deserialize)]
        struct CoverageReply {
            coverage: serde_json::Value,
            #[serde(default)]
            rationale: String,
        }

        let outcome = complete_with_reprompt(self.judge, prompt, "coverage, rationale", |reply| {
            let source = extract_first_json_object(reply)
                .ok_or_else(|| Error::Parse("no JSON object found in reply".into()))?;
            let parsed: CoverageReply = serde_json::from_str(source).map_err(|e| {
                Error::Validation(format!("reply does not fit the coverage shape: {e}"))
            })?;
            let coverage = parsed
                .coverage
                .as_f64()
                .filter(|c| c.is_finite())
                .ok_or_else(|| Error::Validation("coverage is not a number".into()))?;
            if !(0.0..=100.0).contains(&coverage) {
                return Err(Error::Validation(format!(
                    "coverage {coverage} outside 0-100"
                )));
            }
            Ok((coverage, parsed.rationale))
        })?;

        Ok(match outcome {
            ReplyOutcome::Usable((coverage, rationale)) => {
                rationales.insert("cr".to_string(), rationale);
                Some(coverage)
            }
            ReplyOutcome::Unusable(reason) => {
                gaps.push(format!("cr: {reason}"));
                None
            }
        })
    }
}

/// One-shot evaluation with default prompts and thresholds.
pub fn evaluate_dialogue(
    dlg: &Dialogue,
    doc: &Document,
    judge: &dyn ChatBackend,
    cr_method: CrMethod,
) -> Result<DialogueEvaluation> {
    Evaluator::new(judge, cr_method).evaluate(dlg, doc)
}

fn flexibility_focus(dlg: &Dialogue) -> String {
    let ungrounded: Vec<String> = dlg
        .turns
        .iter()
        .filter(|t| !t.grounded)
        .map(|t| t.logic_link.turn_index.to_string())
        .collect();
    if ungrounded.is_empty() {
        "Every turn is grounded in the document.".to_string()
    } else {
        format!(
            "Turns without document grounding: {}. Judge how naturally they are handled.",
            ungrounded.join(", ")
        )
    }
}

fn render_dialogue(dlg: &Dialogue) -> String {
    dlg.turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            format!(
                "Turn {}\nUser: {}\nAssistant: {}",
                i + 1,
                t.query,
                t.response
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}
