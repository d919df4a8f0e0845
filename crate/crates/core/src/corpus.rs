//! Document ingestion, normalization, and corpus statistics.
//!
//! Documents arrive either as JSONL (one object per line, at least `id` and
//! `text`) or as a directory of `*.txt` files. Ingestion normalizes text,
//! rejects unusable records with a reason instead of repairing them, and
//! produces a machine-readable report alongside the accepted set.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

use crate::dataset::{sft_messages, SplitResult};
use crate::engine::Dialogue;
use crate::error::{Error, Result};

/// Normalize raw document text: Unicode NFC, CRLF/CR line endings to `\n`,
/// and leading/trailing whitespace trimmed. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    let unixed = nfc.replace("\r\n", "\n").replace('\r', "\n");
    unixed.trim().to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDocument {
    id: String,
    text: String,
    #[serde(default)]
    language: String,
    #[serde(default)]
    topic: String,
    #[serde(default)]
    source: String,
    #[serde(flatten)]
    extra: serde_json::Map<String, Value>,
}

/// One normalized source document.
///
/// `text` is private so the `char_count` bookkeeping cannot drift; construct
/// through [`Document::new`] or deserialization, both of which normalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDocument", into = "RawDocument")]
pub struct Document {
    pub id: String,
    text: String,
    pub language: String,
    pub topic: String,
    pub source: String,
    char_count: usize,
    extra: serde_json::Map<String, Value>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: &str,
        language: impl Into<String>,
        topic: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Validation("document id is empty".into()));
        }
        let text = normalize_text(text);
        if text.is_empty() {
            return Err(Error::Validation("empty text".into()));
        }
        let char_count = text.chars().count();
        Ok(Document {
            id,
            text,
            language: language.into(),
            topic: topic.into(),
            source: source.into(),
            char_count,
            extra: serde_json::Map::new(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Number of Unicode scalar values in the normalized text.
    pub fn char_count(&self) -> usize {
        self.char_count
    }
}

impl TryFrom<RawDocument> for Document {
    type Error = Error;

    fn try_from(raw: RawDocument) -> Result<Self> {
        let mut doc = Document::new(raw.id, &raw.text, raw.language, raw.topic, raw.source)?;
        doc.extra = raw.extra;
        Ok(doc)
    }
}

impl From<Document> for RawDocument {
    fn from(doc: Document) -> Self {
        RawDocument {
            id: doc.id,
            text: doc.text,
            language: doc.language,
            topic: doc.topic,
            source: doc.source,
            extra: doc.extra,
        }
    }
}

/// An immutable, id-indexed collection of documents.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentSet {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl DocumentSet {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::Domain(format!("duplicate document id {:?}", doc.id)));
            }
        }
        Ok(DocumentSet { docs, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }
}

/// Why one record was not ingested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// `file:line` for JSONL, file name for plain-dir.
    pub location: String,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejections: Vec<Rejection>,
}

impl IngestReport {
    pub fn is_clean(&self) -> bool {
        self.rejections.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IngestFormat {
    Jsonl,
    PlainDir,
}

/// Read documents from `path`, normalizing and validating each record.
/// Unusable records are dropped and reported; a later record reusing an id
/// is rejected in favor of the earlier one.
pub fn ingest_documents(path: &Path, format: IngestFormat) -> Result<(DocumentSet, IngestReport)> {
    match format {
        IngestFormat::Jsonl => ingest_jsonl(path),
        IngestFormat::PlainDir => ingest_plain_dir(path),
    }
}

fn ingest_jsonl(path: &Path) -> Result<(DocumentSet, IngestReport)> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs: Vec<Document> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut report = IngestReport::default();
    for (idx, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", path.display(), idx + 1);
        let raw: RawDocument = match serde_json::from_str(line) {
            Ok(raw) => raw,
            Err(e) => {
                report.rejections.push(Rejection {
                    location,
                    id: None,
                    reason: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        let id = raw.id.clone();
        match Document::try_from(raw) {
            Ok(doc) => {
                if seen.insert(doc.id.clone(), ()).is_some() {
                    report.rejections.push(Rejection {
                        location,
                        id: Some(doc.id),
                        reason: "duplicate id".into(),
                    });
                } else {
                    docs.push(doc);
                }
            }
            Err(e) => {
                let reason = match &e {
                    Error::Validation(msg) => msg.clone(),
                    other => other.to_string(),
                };
                report.rejections.push(Rejection {
                    location,
                    id: if id.is_empty() { None } else { Some(id) },
                    reason,
                });
            }
        }
    }
    report.accepted = docs.len();
    Ok((DocumentSet::new(docs)?, report))
}

fn ingest_plain_dir(path: &Path) -> Result<(DocumentSet, IngestReport)> {
    let mut files: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|ext| ext == "txt").unwrap_or(false))
        .collect();
    files.sort();

    let mut docs: Vec<Document> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut report = IngestReport::default();
    for file in files {
        let location = file.display().to_string();
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let source = file
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match Document::new(stem.clone(), &text, "", "", source) {
            Ok(doc) => {
                if seen.insert(doc.id.clone(), ()).is_some() {
                    report.rejections.push(Rejection {
                        location,
                        id: Some(doc.id),
                        reason: "duplicate id".into(),
                    });
                } else {
                    docs.push(doc);
                }
            }
            Err(e) => {
                let reason = match &e {
                    Error::Validation(msg) => msg.clone(),
                    other => other.to_string(),
                };
                report.rejections.push(Rejection {
                    location,
                    id: if stem.is_empty() { None } else { Some(stem) },
                    reason,
                });
            }
        }
    }
    report.accepted = docs.len();
    Ok((DocumentSet::new(docs)?, report))
}

/// Write documents as JSONL (unknown input fields ride along untouched).
pub fn write_documents_jsonl(path: &Path, docs: &DocumentSet) -> Result<usize> {
    crate::io::write_jsonl(path, docs.documents())
}

/// Size and length statistics for a corpus and (optionally) the dialogue
/// set generated from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub instruction_count: usize,
    pub test_count: usize,
    pub max_doc_chars: usize,
    pub avg_doc_chars: f64,
    pub max_instruction_chars: usize,
    pub avg_instruction_chars: f64,
}

impl CorpusStats {
    /// Two-column aligned text rendering, one row per statistic.
    pub fn render_table(&self) -> String {
        let rows = [
            ("documents".to_string(), self.doc_count.to_string()),
            (
                "instructions".to_string(),
                self.instruction_count.to_string(),
            ),
            ("test examples".to_string(), self.test_count.to_string()),
            (
                "max document chars".to_string(),
                self.max_doc_chars.to_string(),
            ),
            (
                "avg document chars".to_string(),
                format!("{:.1}", self.avg_doc_chars),
            ),
            (
                "max instruction chars".to_string(),
                self.max_instruction_chars.to_string(),
            ),
            (
                "avg instruction chars".to_string(),
                format!("{:.1}", self.avg_instruction_chars),
            ),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

/// Character count of the serialized chat-message list of one dialogue —
/// the "instruction length" convention used by the stats table.
pub fn instruction_char_count(dlg: &Dialogue) -> usize {
    let messages = sft_messages(dlg);
    serde_json::to_string(&messages)
        .map(|s| s.chars().count())
        .unwrap_or(0)
}

pub fn compute_corpus_stats(
    docs: &DocumentSet,
    instructions: Option<&[Dialogue]>,
    split: Option<&SplitResult>,
) -> Result<CorpusStats> {
    if docs.is_empty() {
        return Err(Error::Domain("empty document set".into()));
    }
    let doc_lens: Vec<usize> = docs.iter().map(|d| d.char_count()).collect();
    let max_doc_chars = doc_lens.iter().copied().max().unwrap_or(0);
    let avg_doc_chars = doc_lens.iter().sum::<usize>() as f64 / doc_lens.len() as f64;

    let inst_lens: Vec<usize> = instructions
        .unwrap_or(&[])
        .iter()
        .map(instruction_char_count)
        .collect();
    let instruction_count = inst_lens.len();
    let max_instruction_chars = inst_lens.iter().copied().max().unwrap_or(0);
    let avg_instruction_chars = if inst_lens.is_empty() {
        0.0
    } else {
        inst_lens.iter().sum::<usize>() as f64 / inst_lens.len() as f64
    };

    let test_count = split.map(|s| s.test.len()).unwrap_or(0);
    if test_count > instruction_count {
        return Err(Error::Domain(format!(
            "split test count {test_count} exceeds instruction count {instruction_count}"
        )));
    }

    Ok(CorpusStats {
        doc_count: docs.len(),
        instruction_count,
        test_count,
        max_doc_chars,
        avg_doc_chars,
        max_instruction_chars,
        avg_instruction_chars,
    })
}
