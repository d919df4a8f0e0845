//! Deterministic span retrieval and text-coverage scoring.
//!
//! Everything here is built on character n-grams: trigrams over case-folded
//! non-CJK runs, single codepoints for CJK. That one representation drives
//! both the fuzzy span ranking used to ground dialogue turns and the
//! coverage fraction used for the deterministic coverage-rate metric, and it
//! works for English and Chinese text without tokenization.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

/// n-gram width for non-CJK runs (CJK codepoints count singly).
const LATIN_NGRAM: usize = 3;

/// Hard cap on phrases per turn.
pub const MAX_KEY_PHRASES: usize = 5;

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF      // ideograph extension A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2EBEF  // extensions B..F
    )
}

/// Visit every n-gram of `text` after case folding: trigrams within each
/// non-CJK run, one gram per CJK codepoint.
fn for_each_ngram(text: &str, mut f: impl FnMut(&str)) {
    fn flush(run: &mut Vec<char>, buf: &mut String, f: &mut dyn FnMut(&str)) {
        if run.len() >= LATIN_NGRAM {
            for w in run.windows(LATIN_NGRAM) {
                buf.clear();
                buf.extend(w.iter());
                f(buf);
            }
        }
        run.clear();
    }

    let folded = text.to_lowercase();
    let mut run: Vec<char> = Vec::new();
    let mut buf = String::new();
    for c in folded.chars() {
        if is_cjk(c) {
            flush(&mut run, &mut buf, &mut f);
            buf.clear();
            buf.push(c);
            f(&buf);
        } else {
            run.push(c);
        }
    }
    flush(&mut run, &mut buf, &mut f);
}

fn ngram_multiset(text: &str) -> HashMap<String, u32> {
    let mut out = HashMap::new();
    for_each_ngram(text, |g| *out.entry(g.to_string()).or_insert(0) += 1);
    out
}

fn ngram_set(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    for_each_ngram(text, |g| {
        if !out.contains(g) {
            out.insert(g.to_string());
        }
    });
    out
}

/// Multiset n-gram overlap of `span_text` against `phrase`, normalized by
/// the phrase: 1.0 exactly when every phrase n-gram occurs in the span with
/// at least the phrase's multiplicity.
pub fn score_span(span_text: &str, phrase: &str) -> f64 {
    let phrase_grams = ngram_multiset(phrase);
    let total: u32 = phrase_grams.values().sum();
    if total == 0 {
        return 0.0;
    }
    let span_grams = ngram_multiset(span_text);
    let hit: u32 = phrase_grams
        .iter()
        .map(|(g, &c)| c.min(span_grams.get(g).copied().unwrap_or(0)))
        .sum();
    f64::from(hit) / f64::from(total)
}

/// A contiguous document region, addressed in character offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
    #[serde(default)]
    pub score: f64,
}

/// The phrases one turn wants grounded, already trimmed and capped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPhraseSet {
    pub phrases: Vec<String>,
    pub turn_index: usize,
    /// Set when the phrases come from the fallback path rather than a
    /// usable model reply. Not persisted.
    #[serde(skip, default)]
    pub fallback: bool,
}

impl KeyPhraseSet {
    pub fn new(raw: Vec<String>, turn_index: usize) -> Self {
        Self::with_max(raw, turn_index, MAX_KEY_PHRASES)
    }

    pub fn with_max(raw: Vec<String>, turn_index: usize, max: usize) -> Self {
        let phrases = raw
            .into_iter()
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .take(max)
            .collect();
        KeyPhraseSet {
            phrases,
            turn_index,
            fallback: false,
        }
    }

    pub fn empty_fallback(turn_index: usize) -> Self {
        KeyPhraseSet {
            phrases: Vec::new(),
            turn_index,
            fallback: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

const SENTENCE_DELIMITERS: [char; 7] = ['.', '!', '?', '。', '！', '？', '\n'];

fn is_sentence_delimiter(c: char) -> bool {
    SENTENCE_DELIMITERS.contains(&c)
}

/// Find all exact (case-sensitive) occurrences of `needle` in `hay`,
/// returned as [start, end) char ranges.
fn exact_occurrences(hay: &[char], needle: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if needle.is_empty() || needle.len() > hay.len() {
        return out;
    }
    for i in 0..=(hay.len() - needle.len()) {
        if &hay[i..i + needle.len()] == needle {
            out.push((i, i + needle.len()));
        }
    }
    out
}

/// Expand a hit to the enclosing sentence: back to the previous delimiter,
/// forward through the next one, leading whitespace dropped.
fn expand_to_sentence(chars: &[char], start: usize, end: usize) -> (usize, usize) {
    let mut s = start;
    while s > 0 && !is_sentence_delimiter(chars[s - 1]) {
        s -= 1;
    }
    while s < start && chars[s].is_whitespace() {
        s += 1;
    }
    let mut e = end;
    while e < chars.len() {
        let done = is_sentence_delimiter(chars[e - 1]);
        if done {
            break;
        }
        e += 1;
    }
    (s, e)
}

/// Rank document spans by phrase overlap.
///
/// Candidates are sliding windows (stride = window/2) plus every exact
/// phrase occurrence expanded to its sentence. Each candidate takes the best
/// score over all phrases; exact verbatim hits outrank fuzzy ones, then
/// higher score, earlier start, shorter span. Spans sharing no n-gram with
/// any phrase are dropped, so the result may be empty — the caller treats
/// that as an ungrounded turn, not an error.
pub fn find_spans(doc: &Document, phrases: &KeyPhraseSet, k: usize, window: usize) -> Vec<Span> {
    if k == 0 || phrases.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = doc.text().chars().collect();
    let n = chars.len();
    let longest = phrases
        .phrases
        .iter()
        .map(|p| p.chars().count())
        .max()
        .unwrap_or(0);
    let window = window.max(longest).max(1);
    let stride = (window / 2).max(1);

    let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut s = 0;
    loop {
        let e = (s + window).min(n);
        candidates.insert((s, e));
        if e == n {
            break;
        }
        s += stride;
    }
    for phrase in &phrases.phrases {
        let needle: Vec<char> = phrase.chars().collect();
        for (hs, he) in exact_occurrences(&chars, &needle) {
            candidates.insert(expand_to_sentence(&chars, hs, he));
        }
    }

    let mut scored: Vec<(bool, f64, usize, usize, String)> = Vec::new();
    for (cs, ce) in candidates {
        if cs >= ce {
            continue;
        }
        let text: String = chars[cs..ce].iter().collect();
        let score = phrases
            .phrases
            .iter()
            .map(|p| score_span(&text, p))
            .fold(0.0, f64::max);
        let exact = phrases.phrases.iter().any(|p| text.contains(p.as_str()));
        if score > 0.0 || exact {
            scored.push((exact, score, cs, ce, text));
        }
    }
    scored.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.partial_cmp(&a.1).expect("scores are finite"))
            .then(a.2.cmp(&b.2))
            .then((a.3 - a.2).cmp(&(b.3 - b.2)))
    });
    scored
        .into_iter()
        .take(k)
        .map(|(_, score, cs, ce, text)| Span {
            start: cs,
            end: ce,
            text,
            score,
        })
        .collect()
}

/// Trigrams to ignore when measuring content coverage, derived from a word
/// list: each word contributes the n-grams of `" word "` (padded, folded).
/// Only full-width trigrams are kept, so CJK unigrams are never suppressed.
#[derive(Debug, Clone, Default)]
pub struct StopwordList {
    grams: HashSet<String>,
}

impl StopwordList {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut grams = HashSet::new();
        for word in words {
            let word = word.as_ref().trim();
            if word.is_empty() {
                continue;
            }
            let padded = format!(" {word} ");
            for_each_ngram(&padded, |g| {
                if g.chars().count() == LATIN_NGRAM {
                    grams.insert(g.to_string());
                }
            });
        }
        StopwordList { grams }
    }

    /// One word per line; blank lines and `#` comments skipped.
    pub fn from_path(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_words(
            data.lines().filter(|l| !l.trim_start().starts_with('#')),
        ))
    }

    /// The list bundled with the crate (English function words).
    pub fn bundled() -> &'static StopwordList {
        static BUNDLED: OnceLock<StopwordList> = OnceLock::new();
        BUNDLED.get_or_init(|| {
            Self::from_words(
                include_str!("../data/stopwords_en.txt")
                    .lines()
                    .filter(|l| !l.trim_start().starts_with('#')),
            )
        })
    }

    fn contains(&self, gram: &str) -> bool {
        self.grams.contains(gram)
    }
}

/// Fraction of the document's distinct content n-grams that appear in at
/// least one of `texts`. Empty `texts` cover nothing; a document with no
/// content n-grams (all stopwords, or too short to form one) counts as
/// fully covered.
pub fn coverage_fraction<T: AsRef<str>>(doc: &Document, texts: &[T]) -> f64 {
    coverage_fraction_with(doc, texts, StopwordList::bundled())
}

pub fn coverage_fraction_with<T: AsRef<str>>(
    doc: &Document,
    texts: &[T],
    stopwords: &StopwordList,
) -> f64 {
    if texts.is_empty() {
        return 0.0;
    }
    let mut universe = ngram_set(doc.text());
    universe.retain(|g| !stopwords.contains(g));
    if universe.is_empty() {
        return 1.0;
    }
    let mut covered: HashSet<&str> = HashSet::new();
    for text in texts {
        for gram in ngram_set(text.as_ref()) {
            if let Some(g) = universe.get(gram.as_str()) {
                covered.insert(g.as_str());
            }
        }
    }
    covered.len() as f64 / universe.len() as f64
}
