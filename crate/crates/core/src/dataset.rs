//! Train/test splitting and training-data exports.
//!
//! Splits are assigned by a keyed hash of (seed, id), so membership is a
//! pure function of the inputs — no RNG state, no order sensitivity.
//! Exports are ordered by dialogue id and therefore byte-stable.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Document, DocumentSet};
use crate::engine::Dialogue;
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};

/// A deterministic partition of dialogue ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub seed: u64,
    pub test_fraction: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitResult {
    pub fn total(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

/// Partition `ids` into train/test. Each id is ranked by
/// SHA-256(seed ‖ id) and the lowest `round(test_fraction × n)` become the
/// test set, which keeps the realized fraction within 1/n of the request
/// and makes membership independent of input order.
pub fn split(ids: &[String], test_fraction: f64, seed: u64) -> Result<SplitResult> {
    if ids.is_empty() {
        return Err(Error::Domain("cannot split an empty id list".into()));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Domain(format!("duplicate id {id:?}")));
        }
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "test_fraction {test_fraction} outside (0, 1)"
        )));
    }

    let k = ((test_fraction * ids.len() as f64).round() as usize).min(ids.len());
    let mut ranked: Vec<(&String, [u8; 32])> = ids
        .iter()
        .map(|id| {
            let mut hasher = Sha256::new();
            hasher.update(seed.to_le_bytes());
            hasher.update(id.as_bytes());
            (id, hasher.finalize().into())
        })
        .collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let mut test: Vec<String> = ranked[..k].iter().map(|(id, _)| (*id).clone()).collect();
    let mut train: Vec<String> = ranked[k..].iter().map(|(id, _)| (*id).clone()).collect();
    test.sort();
    train.sort();
    Ok(SplitResult {
        seed,
        test_fraction,
        train,
        test,
    })
}

/// One chat message in training-data form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: String,
    pub content: String,
}

/// Flatten a dialogue into alternating user/assistant messages. The logic
/// chain and grounding are deliberately absent: training targets are the
/// conversation alone.
pub fn sft_messages(dlg: &Dialogue) -> Vec<SftMessage> {
    let mut messages = Vec::with_capacity(dlg.turns.len() * 2);
    for turn in &dlg.turns {
        messages.push(SftMessage {
            role: "user".to_string(),
            content: turn.query.clone(),
        });
        messages.push(SftMessage {
            role: "assistant".to_string(),
            content: turn.response.clone(),
        });
    }
    messages
}

/// One line of chat-format training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<SftMessage>,
}

impl SftRecord {
    pub fn from_dialogue(dlg: &Dialogue) -> Result<Self> {
        if dlg.turns.is_empty() {
            return Err(Error::Validation(format!(
                "dialogue {} has no turns",
                dlg.id
            )));
        }
        for (i, turn) in dlg.turns.iter().enumerate() {
            if turn.query.trim().is_empty() || turn.response.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "dialogue {}: turn {} has empty text",
                    dlg.id,
                    i + 1
                )));
            }
        }
        Ok(SftRecord {
            messages: sft_messages(dlg),
        })
    }

    /// Strict alternation starting with user, even length, no empty content.
    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() || !self.messages.len().is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "message count {} is not a positive even number",
                self.messages.len()
            )));
        }
        for (i, message) in self.messages.iter().enumerate() {
            let expected = if i % 2 == 0 { "user" } else { "assistant" };
            if message.role != expected {
                return Err(Error::Validation(format!(
                    "message {} has role {:?}, expected {:?}",
                    i + 1,
                    message.role,
                    expected
                )));
            }
            if message.content.trim().is_empty() {
                return Err(Error::Validation(format!("message {} is empty", i + 1)));
            }
        }
        Ok(())
    }
}

/// Write one SFT record per dialogue, ordered by dialogue id.
pub fn export_sft_jsonl(dlgs: &[Dialogue], path: &Path) -> Result<usize> {
    let mut sorted: Vec<&Dialogue> = dlgs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let records: Vec<SftRecord> = sorted
        .iter()
        .map(|d| SftRecord::from_dialogue(d))
        .collect::<Result<_>>()?;
    write_jsonl(path, &records)
}

pub fn import_sft_jsonl(path: &Path) -> Result<Vec<SftRecord>> {
    let records: Vec<SftRecord> = read_jsonl(path)?;
    for (i, record) in records.iter().enumerate() {
        record
            .validate()
            .map_err(|e| Error::Validation(format!("record {}: {e}", i + 1)))?;
    }
    Ok(records)
}

/// One document→dialogue training example for an external generator model.
/// Unlike SFT records, the output keeps the logic chain so the trained
/// generator learns to emit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPair {
    pub input: String,
    pub output: String,
}

const GENERATOR_INSTRUCTION: &str =
    "Turn the following document into a grounded multi-turn dialogue, planning one logic link per turn.";

pub fn generator_pair(doc: &Document, dlg: &Dialogue) -> Result<GeneratorPair> {
    let output = serde_json::to_string(dlg)
        .map_err(|e| Error::Parse(format!("cannot serialize dialogue {}: {e}", dlg.id)))?;
    Ok(GeneratorPair {
        input: format!("{GENERATOR_INSTRUCTION}\n\n{}", doc.text()),
        output,
    })
}

pub fn parse_generator_output(pair: &GeneratorPair) -> Result<Dialogue> {
    serde_json::from_str(&pair.output)
        .map_err(|e| Error::Parse(format!("pair output is not a dialogue: {e}")))
}

/// Write one pair per dialogue, ordered by dialogue id. Every dialogue must
/// reference a document in `docs`.
pub fn export_generator_pairs(docs: &DocumentSet, dlgs: &[Dialogue], path: &Path) -> Result<usize> {
    let mut sorted: Vec<&Dialogue> = dlgs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let pairs: Vec<GeneratorPair> = sorted
        .iter()
        .map(|dlg| {
            let doc = docs.get(&dlg.document_id).ok_or_else(|| {
                Error::Referential(format!(
                    "dialogue {} references missing document {}",
                    dlg.id, dlg.document_id
                ))
            })?;
            generator_pair(doc, dlg)
        })
        .collect::<Result<_>>()?;
    write_jsonl(path, &pairs)
}

pub fn import_generator_pairs(path: &Path) -> Result<Vec<GeneratorPair>> {
    let pairs: Vec<GeneratorPair> = read_jsonl(path)?;
    for (i, pair) in pairs.iter().enumerate() {
        parse_generator_output(pair).map_err(|e| Error::Parse(format!("record {}: {e}", i + 1)))?;
    }
    Ok(pairs)
}

/// Write dialogues as JSONL, ordered by id.
pub fn write_dialogues_jsonl(dlgs: &[Dialogue], path: &Path) -> Result<usize> {
    let mut sorted: Vec<&Dialogue> = dlgs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    write_jsonl(path, &sorted)
}

pub fn read_dialogues_jsonl(path: &Path) -> Result<Vec<Dialogue>> {
    let dlgs: Vec<Dialogue> = read_jsonl(path)?;
    let mut seen = HashSet::with_capacity(dlgs.len());
    for dlg in &dlgs {
        if !seen.insert(dlg.id.as_str()) {
            return Err(Error::Domain(format!("duplicate dialogue id {:?}", dlg.id)));
        }
    }
    Ok(dlgs)
}
