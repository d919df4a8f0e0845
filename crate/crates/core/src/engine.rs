//! The dialogue engine: per turn, plan a logic link, elicit key phrases,
//! ground them with span search, and write the turn. Single-pass baseline
//! modes produce the same schema so everything downstream treats dialogues
//! uniformly.
//!
//! Model replies are never trusted: each structured reply gets one reprompt,
//! after which the engine degrades gracefully (fallback link, ungrounded
//! turn, or skipped turn) instead of aborting a batch.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::gateway::{
    complete_with_reprompt, extract_first_json_object, parse_structured_output, ChatBackend,
    FieldValue, ReplyOutcome, StructuredOutputSchema, ValueKind,
};
use crate::prompts::{render, PromptLibrary};
use crate::span::{coverage_fraction, find_spans, KeyPhraseSet, Span, MAX_KEY_PHRASES};

/// The closed set of per-turn logic types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogicType {
    #[serde(rename = "Question-Answer")]
    QuestionAnswer,
    #[serde(rename = "Question-Question")]
    QuestionQuestion,
    #[serde(rename = "Statement-Inquiry")]
    StatementInquiry,
    #[serde(rename = "Statement-Explanation")]
    StatementExplanation,
    #[serde(rename = "Opinion-Rebuttal")]
    OpinionRebuttal,
    #[serde(rename = "Opinion-Agreement")]
    OpinionAgreement,
}

impl LogicType {
    pub const ALL: [LogicType; 6] = [
        LogicType::QuestionAnswer,
        LogicType::QuestionQuestion,
        LogicType::StatementInquiry,
        LogicType::StatementExplanation,
        LogicType::OpinionRebuttal,
        LogicType::OpinionAgreement,
    ];

    /// Types a dialogue may open with; the others react to a prior
    /// utterance that does not exist yet at turn 1.
    pub const FIRST_TURN_ALLOWED: [LogicType; 3] = [
        LogicType::QuestionAnswer,
        LogicType::StatementInquiry,
        LogicType::StatementExplanation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LogicType::QuestionAnswer => "Question-Answer",
            LogicType::QuestionQuestion => "Question-Question",
            LogicType::StatementInquiry => "Statement-Inquiry",
            LogicType::StatementExplanation => "Statement-Explanation",
            LogicType::OpinionRebuttal => "Opinion-Rebuttal",
            LogicType::OpinionAgreement => "Opinion-Agreement",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.label().eq_ignore_ascii_case(label))
    }

    pub fn definition(self) -> &'static str {
        match self {
            LogicType::QuestionAnswer => {
                "the user asks a question and the assistant answers it directly"
            }
            LogicType::QuestionQuestion => {
                "a question is met with a clarifying or probing question instead of an answer"
            }
            LogicType::StatementInquiry => {
                "one speaker states something and the other follows up with a question about it"
            }
            LogicType::StatementExplanation => {
                "one speaker states something and the other expands on it with detail"
            }
            LogicType::OpinionRebuttal => {
                "one speaker voices an opinion and the other pushes back with a different view"
            }
            LogicType::OpinionAgreement => {
                "one speaker voices an opinion and the other agrees and adds support"
            }
        }
    }

    fn example_pair(self) -> (&'static str, &'static str) {
        match self {
            LogicType::QuestionAnswer => (
                "Who built the first seismoscope?",
                "Zhang Heng presented one at the Han court in 132 AD.",
            ),
            LogicType::QuestionQuestion => (
                "Could it detect every earthquake?",
                "Do you mean nearby shocks or distant ones as well?",
            ),
            LogicType::StatementInquiry => (
                "The device relied on a bronze ball.",
                "Where did the ball land when it was triggered?",
            ),
            LogicType::StatementExplanation => (
                "The mechanism was remarkably sensitive.",
                "Indeed - a hidden pendulum amplified even far-off tremors.",
            ),
            LogicType::OpinionRebuttal => (
                "I think this design is elegant.",
                "I disagree - it must have been a nightmare to calibrate.",
            ),
            LogicType::OpinionAgreement => (
                "I find the craftsmanship impressive.",
                "Absolutely, the casting quality alone proves real skill.",
            ),
        }
    }

    /// The `{type_definitions}` prompt slot: every type with a definition
    /// and a worked example pair.
    pub fn definitions_block() -> String {
        let mut out = String::new();
        for t in Self::ALL {
            let (q, r) = t.example_pair();
            out.push_str(&format!(
                "{}: {}.\n  Example - \"{}\" / \"{}\"\n",
                t.label(),
                t.definition(),
                q,
                r
            ));
        }
        out
    }
}

/// How a dialogue was produced: one prompt (Direct), one prompt with
/// explicit reasoning (CoT), or the per-turn planned loop (CoD).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    CoT,
    CoD,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Direct, Mode::CoT, Mode::CoD];

    pub fn slug(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::CoT => "cot",
            Mode::CoD => "cod",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Direct => "Direct",
            Mode::CoT => "CoT",
            Mode::CoD => "CoD",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "direct" => Ok(Mode::Direct),
            "cot" => Ok(Mode::CoT),
            "cod" => Ok(Mode::CoD),
            other => Err(Error::Validation(format!(
                "unknown mode {other:?} (expected direct, cot, or cod)"
            ))),
        }
    }
}

/// Where a logic link came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkOrigin {
    /// Planned by the model through the per-turn prompt.
    Planned,
    /// Substituted after an unusable or disallowed plan reply.
    Fallback,
    /// Synthesized for single-pass modes, which plan nothing.
    ModeInferred,
}

/// One link of the dialogue's logic chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicLink {
    pub turn_index: usize,
    #[serde(rename = "type")]
    pub logic_type: LogicType,
    pub progress: String,
    pub reasoning: String,
    pub purpose: String,
    pub origin: LinkOrigin,
}

/// One query/response exchange with its plan and grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub response: String,
    #[serde(rename = "logic")]
    pub logic_link: LogicLink,
    #[serde(default)]
    pub key_phrases: Vec<String>,
    #[serde(default)]
    pub grounding: Vec<Span>,
    pub grounded: bool,
}

/// Turn-loop limits and sampling knobs, snapshotted into each dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub max_turns: usize,
    pub min_turns: usize,
    pub target_coverage: f64,
    pub spans_per_turn: usize,
    pub span_window: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_turns: 8,
            min_turns: 3,
            target_coverage: 0.8,
            spans_per_turn: 3,
            span_window: 240,
            temperature: 0.7,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 || self.min_turns == 0 {
            return Err(Error::Validation("turn counts must be positive".into()));
        }
        if self.min_turns > self.max_turns {
            return Err(Error::Validation(format!(
                "min_turns {} exceeds max_turns {}",
                self.min_turns, self.max_turns
            )));
        }
        if !(0.0..=1.0).contains(&self.target_coverage) {
            return Err(Error::Validation(format!(
                "target_coverage {} outside [0, 1]",
                self.target_coverage
            )));
        }
        if self.spans_per_turn == 0 || self.span_window == 0 {
            return Err(Error::Validation(
                "spans_per_turn and span_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A complete generated dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub document_id: String,
    pub mode: Mode,
    pub generator: String,
    pub turns: Vec<Turn>,
    #[serde(rename = "config")]
    pub created_with: GenerationConfig,
}

impl Dialogue {
    pub fn responses(&self) -> Vec<&str> {
        self.turns.iter().map(|t| t.response.as_str()).collect()
    }

    pub fn queries_and_responses(&self) -> Vec<&str> {
        self.turns
            .iter()
            .flat_map(|t| [t.response.as_str(), t.query.as_str()])
            .collect()
    }
}

/// Degradations recorded while building one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BuildEvent {
    FallbackLink { turn_index: usize, reason: String },
    FallbackPhrases { turn_index: usize },
    SkippedTurn { turn_index: usize, reason: String },
}

#[derive(Debug)]
pub struct GenerationOutcome {
    pub dialogue: Dialogue,
    pub events: Vec<BuildEvent>,
}

/// Drives one backend through the turn loop (or a single-pass mode).
pub struct DialogueGenerator<'a> {
    backend: &'a dyn ChatBackend,
    prompts: PromptLibrary,
    cfg: GenerationConfig,
}

impl<'a> DialogueGenerator<'a> {
    pub fn new(backend: &'a dyn ChatBackend, cfg: GenerationConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(DialogueGenerator {
            backend,
            prompts: PromptLibrary::bundled(),
            cfg,
        })
    }

    pub fn with_prompts(mut self, prompts: PromptLibrary) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.cfg
    }

    /// Plan the logic link for the next turn. Never fails on bad model
    /// output: after the reprompt (or on a type the opening turn cannot
    /// carry) it substitutes a Question-Answer fallback link.
    pub fn plan_turn(&self, doc: &Document, history: &[Turn]) -> Result<LogicLink> {
        let turn_index = history.len() + 1;
        if turn_index > self.cfg.max_turns {
            return Err(Error::Domain(format!(
                "cannot plan turn {turn_index}: max_turns is {}",
                self.cfg.max_turns
            )));
        }
        let first_turn_note = if turn_index == 1 {
            " The opening turn must be Question-Answer, Statement-Inquiry, or Statement-Explanation."
        } else {
            ""
        };
        let chain = render_chain(history);
        let definitions = LogicType::definitions_block();
        let prompt = render(
            &self.prompts.plan,
            &[
                ("document", doc.text()),
                ("chain", &chain),
                ("type_definitions", &definitions),
                ("turn_index", &turn_index.to_string()),
                ("first_turn_note", first_turn_note),
            ],
        );
        let schema = StructuredOutputSchema::new(vec![
            (
                "logic_type".into(),
                ValueKind::EnumOf(
                    LogicType::ALL
                        .iter()
                        .map(|t| t.label().to_string())
                        .collect(),
                ),
            ),
            ("progress".into(), ValueKind::Text),
            ("reasoning".into(), ValueKind::Text),
            ("purpose".into(), ValueKind::Text),
        ])?;

        let outcome = complete_with_reprompt(
            self.backend,
            prompt,
            "logic_type, progress, reasoning, purpose",
            |reply| {
                let record = parse_structured_output(reply, &schema)?;
                let logic_type = LogicType::from_label(text_field(&record, "logic_type"))
                    .expect("enum value canonicalized by schema");
                let progress = nonempty_field(&record, "progress")?;
                let reasoning = nonempty_field(&record, "reasoning")?;
                let purpose = nonempty_field(&record, "purpose")?;
                Ok((logic_type, progress, reasoning, purpose))
            },
        )?;

        Ok(match outcome {
            ReplyOutcome::Usable((logic_type, progress, reasoning, purpose)) => {
                if turn_index == 1 && !LogicType::FIRST_TURN_ALLOWED.contains(&logic_type) {
                    fallback_link(
                        turn_index,
                        &format!(
                            "type {} not allowed on the opening turn",
                            logic_type.label()
                        ),
                    )
                } else {
                    LogicLink {
                        turn_index,
                        logic_type,
                        progress,
                        reasoning,
                        purpose,
                        origin: LinkOrigin::Planned,
                    }
                }
            }
            ReplyOutcome::Unusable(reason) => fallback_link(turn_index, &reason),
        })
    }

    /// Elicit up to five key phrases for the planned turn. An empty list is
    /// only usable for Question-Question (clarification needs no new facts);
    /// anything unusable degrades to an empty fallback set and the turn
    /// proceeds ungrounded.
    pub fn generate_key_phrases(&self, doc: &Document, link: &LogicLink) -> Result<KeyPhraseSet> {
        let prompt = render(
            &self.prompts.phrases,
            &[
                ("document", doc.text()),
                ("turn_index", &link.turn_index.to_string()),
                ("logic_type", link.logic_type.label()),
                ("purpose", &link.purpose),
                ("max_phrases", &MAX_KEY_PHRASES.to_string()),
            ],
        );
        let schema = StructuredOutputSchema::new(vec![("phrases".into(), ValueKind::TextList)])?;
        let clarification = link.logic_type == LogicType::QuestionQuestion;
        let turn_index = link.turn_index;

        let outcome = complete_with_reprompt(self.backend, prompt, "phrases", |reply| {
            let record = parse_structured_output(reply, &schema)?;
            let raw = record["phrases"]
                .as_list()
                .expect("schema-checked")
                .to_vec();
            let set = KeyPhraseSet::new(raw, turn_index);
            if set.is_empty() && !clarification {
                return Err(Error::Validation(
                    "empty phrase list for a turn that needs grounding".into(),
                ));
            }
            Ok(set)
        })?;

        Ok(match outcome {
            ReplyOutcome::Usable(set) => set,
            ReplyOutcome::Unusable(_) => KeyPhraseSet::empty_fallback(turn_index),
        })
    }

    /// Write the turn text for a planned link, grounded in `spans` when any
    /// were found. An unusable reply after the reprompt rejects the turn.
    pub fn generate_turn(
        &self,
        doc: &Document,
        history: &[Turn],
        link: &LogicLink,
        spans: &[Span],
    ) -> Result<Turn> {
        let span_instruction = if spans.is_empty() {
            "No document excerpt applies to this turn; answer from general knowledge without contradicting the document.".to_string()
        } else {
            let bullets: Vec<String> = spans.iter().map(|s| format!("- {}", s.text)).collect();
            format!(
                "Ground the response in these document excerpts and stay consistent with them:\n{}",
                bullets.join("\n")
            )
        };
        let history_text = render_history(history);
        let prompt = render(
            &self.prompts.turn,
            &[
                ("document", doc.text()),
                ("history", &history_text),
                ("turn_index", &link.turn_index.to_string()),
                ("logic_type", link.logic_type.label()),
                ("type_guidance", link.logic_type.definition()),
                ("purpose", &link.purpose),
                ("span_instruction", &span_instruction),
            ],
        );
        let schema = StructuredOutputSchema::new(vec![
            ("query".into(), ValueKind::Text),
            ("response".into(), ValueKind::Text),
        ])?;

        let outcome = complete_with_reprompt(self.backend, prompt, "query, response", |reply| {
            let record = parse_structured_output(reply, &schema)?;
            let query = nonempty_field(&record, "query")?;
            let response = nonempty_field(&record, "response")?;
            Ok((query, response))
        })?;

        match outcome {
            ReplyOutcome::Usable((query, response)) => Ok(Turn {
                query,
                response,
                logic_link: link.clone(),
                key_phrases: Vec::new(),
                grounding: spans.to_vec(),
                grounded: !spans.is_empty(),
            }),
            ReplyOutcome::Unusable(reason) => Err(Error::TurnRejected(format!(
                "turn {} of document {}: {reason}",
                link.turn_index, doc.id
            ))),
        }
    }

    /// Build one dialogue in the given mode.
    pub fn generate_dialogue(&self, doc: &Document, mode: Mode) -> Result<GenerationOutcome> {
        match mode {
            Mode::CoD => self.generate_chained(doc),
            Mode::Direct | Mode::CoT => self.generate_single_pass(doc, mode),
        }
    }

    fn generate_chained(&self, doc: &Document) -> Result<GenerationOutcome> {
        let mut turns: Vec<Turn> = Vec::new();
        let mut events: Vec<BuildEvent> = Vec::new();
        let mut responses: Vec<String> = Vec::new();

        for _slot in 0..self.cfg.max_turns {
            let link = self.plan_turn(doc, &turns)?;
            if link.origin == LinkOrigin::Fallback {
                events.push(BuildEvent::FallbackLink {
                    turn_index: link.turn_index,
                    reason: link.reasoning.clone(),
                });
            }
            let phrases = self.generate_key_phrases(doc, &link)?;
            if phrases.fallback {
                events.push(BuildEvent::FallbackPhrases {
                    turn_index: link.turn_index,
                });
            }
            let spans = if phrases.is_empty() {
                Vec::new()
            } else {
                find_spans(doc, &phrases, self.cfg.spans_per_turn, self.cfg.span_window)
            };
            match self.generate_turn(doc, &turns, &link, &spans) {
                Ok(mut turn) => {
                    turn.key_phrases = phrases.phrases.clone();
                    responses.push(turn.response.clone());
                    turns.push(turn);
                }
                Err(Error::TurnRejected(reason)) => {
                    events.push(BuildEvent::SkippedTurn {
                        turn_index: link.turn_index,
                        reason,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            }
            if turns.len() >= self.cfg.min_turns
                && coverage_fraction(doc, &responses) >= self.cfg.target_coverage
            {
                break;
            }
        }

        if turns.is_empty() {
            return Err(Error::DialogueGeneration(format!(
                "no usable turns for document {}",
                doc.id
            )));
        }
        Ok(GenerationOutcome {
            dialogue: self.assemble(doc, Mode::CoD, turns),
            events,
        })
    }

    fn generate_single_pass(&self, doc: &Document, mode: Mode) -> Result<GenerationOutcome> {
        let template = match mode {
            Mode::Direct => &self.prompts.direct,
            Mode::CoT => &self.prompts.cot,
            Mode::CoD => unreachable!("chained mode handled separately"),
        };
        let prompt = render(
            template,
            &[
                ("document", doc.text()),
                ("min_turns", &self.cfg.min_turns.to_string()),
                ("max_turns", &self.cfg.max_turns.to_string()),
            ],
        );

        #[derive(Deserialize)]
        struct RawPair {
            query: String,
            response: String,
        }
        #[derive(Deserialize)]
        struct RawDialogue {
            turns: Vec<RawPair>,
        }

        let outcome = complete_with_reprompt(self.backend, prompt, "turns", |reply| {
            let source = extract_first_json_object(reply)
                .ok_or_else(|| Error::Parse("no JSON object found in reply".into()))?;
            let raw: RawDialogue = serde_json::from_str(source).map_err(|e| {
                Error::Validation(format!("reply does not fit the turns shape: {e}"))
            })?;
            if raw.turns.is_empty() {
                return Err(Error::Validation("reply contains no turns".into()));
            }
            for (i, t) in raw.turns.iter().enumerate() {
                if t.query.trim().is_empty() || t.response.trim().is_empty() {
                    return Err(Error::Validation(format!("turn {} has empty text", i + 1)));
                }
            }
            Ok(raw.turns)
        })?;

        let raw_turns = match outcome {
            ReplyOutcome::Usable(t) => t,
            ReplyOutcome::Unusable(reason) => {
                return Err(Error::DialogueGeneration(format!(
                    "single-pass reply unusable for document {}: {reason}",
                    doc.id
                )))
            }
        };

        let turns: Vec<Turn> = raw_turns
            .into_iter()
            .take(self.cfg.max_turns)
            .enumerate()
            .map(|(i, pair)| Turn {
                query: pair.query.trim().to_string(),
                response: pair.response.trim().to_string(),
                logic_link: LogicLink {
                    turn_index: i + 1,
                    logic_type: LogicType::QuestionAnswer,
                    progress: format!("single-pass turn {}", i + 1),
                    reasoning: "synthesized for a one-shot generation".into(),
                    purpose: "convey document content".into(),
                    origin: LinkOrigin::ModeInferred,
                },
                key_phrases: Vec::new(),
                grounding: Vec::new(),
                grounded: false,
            })
            .collect();

        Ok(GenerationOutcome {
            dialogue: self.assemble(doc, mode, turns),
            events: Vec::new(),
        })
    }

    fn assemble(&self, doc: &Document, mode: Mode, turns: Vec<Turn>) -> Dialogue {
        Dialogue {
            id: format!("{}-{}-{}", doc.id, mode.slug(), self.cfg.seed),
            document_id: doc.id.clone(),
            mode,
            generator: self.backend.model_name().to_string(),
            turns,
            created_with: self.cfg.clone(),
        }
    }
}

fn text_field<'r>(record: &'r BTreeMap<String, FieldValue>, key: &str) -> &'r str {
    record[key].as_text().expect("schema-checked text field")
}

fn nonempty_field(record: &BTreeMap<String, FieldValue>, key: &str) -> Result<String> {
    let value = text_field(record, key).trim();
    if value.is_empty() {
        return Err(Error::Validation(format!("key {key:?} is empty")));
    }
    Ok(value.to_string())
}

fn fallback_link(turn_index: usize, reason: &str) -> LogicLink {
    LogicLink {
        turn_index,
        logic_type: LogicType::QuestionAnswer,
        progress: if turn_index == 1 {
            "dialogue opening".to_string()
        } else {
            format!("dialogue in progress at turn {turn_index}")
        },
        reasoning: format!("fallback: {reason}"),
        purpose: "ask a direct question about the document".to_string(),
        origin: LinkOrigin::Fallback,
    }
}

fn render_chain(history: &[Turn]) -> String {
    if history.is_empty() {
        return "(empty - the dialogue has not started)".to_string();
    }
    history
        .iter()
        .map(|t| {
            format!(
                "turn {} [{}]: {} -> {}",
                t.logic_link.turn_index,
                t.logic_link.logic_type.label(),
                t.logic_link.progress,
                t.logic_link.purpose
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_history(history: &[Turn]) -> String {
    if history.is_empty() {
        return "(the dialogue opens with this turn)".to_string();
    }
    history
        .iter()
        .map(|t| format!("User: {}\nAssistant: {}", t.query, t.response))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Acceptance thresholds for generated dialogues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    pub min_turns: usize,
    /// Minimum fraction of grounded turns, applied to CoD dialogues only.
    pub min_grounded: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_turns: 3,
            min_grounded: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum FilterVerdict {
    Accept,
    Reject { reason: String },
}

impl FilterVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, FilterVerdict::Accept)
    }

    fn reject(reason: impl Into<String>) -> Self {
        FilterVerdict::Reject {
            reason: reason.into(),
        }
    }
}

/// Decide whether a dialogue is good enough to keep. Grounding spans are
/// re-sliced against the source document so corrupted imports get caught
/// here too.
pub fn filter_dialogue(
    dlg: &Dialogue,
    doc: &Document,
    thresholds: &FilterThresholds,
) -> FilterVerdict {
    if dlg.document_id != doc.id {
        return FilterVerdict::reject(format!(
            "document id mismatch: dialogue references {:?}, got {:?}",
            dlg.document_id, doc.id
        ));
    }
    if dlg.turns.len() < thresholds.min_turns {
        return FilterVerdict::reject(format!(
            "too few turns: {} < {}",
            dlg.turns.len(),
            thresholds.min_turns
        ));
    }
    for (i, turn) in dlg.turns.iter().enumerate() {
        if turn.query.trim().is_empty() || turn.response.trim().is_empty() {
            return FilterVerdict::reject(format!("turn {} has empty text", i + 1));
        }
    }
    if dlg.mode == Mode::CoD {
        let grounded = dlg.turns.iter().filter(|t| t.grounded).count();
        let fraction = grounded as f64 / dlg.turns.len() as f64;
        if fraction < thresholds.min_grounded {
            return FilterVerdict::reject(format!(
                "insufficient grounding: {fraction:.2} < {}",
                thresholds.min_grounded
            ));
        }
    }
    for pair in dlg.turns.windows(2) {
        if pair[0].query == pair[1].query {
            return FilterVerdict::reject(format!(
                "duplicate consecutive queries at turn {}",
                pair[1].logic_link.turn_index
            ));
        }
    }
    let chars: Vec<char> = doc.text().chars().collect();
    for (i, turn) in dlg.turns.iter().enumerate() {
        for span in &turn.grounding {
            let valid = span.start < span.end
                && span.end <= chars.len()
                && chars[span.start..span.end].iter().collect::<String>() == span.text;
            if !valid {
                return FilterVerdict::reject(format!(
                    "grounding mismatch at turn {}: span [{}, {}) does not re-slice",
                    i + 1,
                    span.start,
                    span.end
                ));
            }
        }
    }
    FilterVerdict::Accept
}
