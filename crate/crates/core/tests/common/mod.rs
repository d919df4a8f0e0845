//! Independent reference implementations for the acceptance suite.
//!
//! These deliberately avoid the library's internals: n-grams are enumerated
//! with index arithmetic over char vectors and kept in sorted vectors or
//! BTree sets, scores use two-pointer multiset intersection, correlation
//! uses the computational (sum-of-products) formula, and ranking ties are
//! counted rather than grouped. Agreement with the library is therefore a
//! check, not a tautology.

#![allow(dead_code)]

use std::collections::BTreeSet;

pub const NGRAM: usize = 3;

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2EBEF
    )
}

/// Every gram of the folded text as a sorted multiset: trigrams within
/// maximal non-CJK segments, single chars for CJK codepoints.
pub fn ref_grams(text: &str) -> Vec<String> {
    let folded: Vec<char> = text.to_lowercase().chars().collect();
    let mut grams = Vec::new();
    let mut i = 0;
    while i < folded.len() {
        if is_cjk(folded[i]) {
            grams.push(folded[i].to_string());
            i += 1;
        } else {
            let mut j = i;
            while j < folded.len() && !is_cjk(folded[j]) {
                j += 1;
            }
            if j - i >= NGRAM {
                for s in i..=(j - NGRAM) {
                    grams.push(folded[s..s + NGRAM].iter().collect());
                }
            }
            i = j;
        }
    }
    grams.sort();
    grams
}

pub fn ref_gram_set(text: &str) -> BTreeSet<String> {
    ref_grams(text).into_iter().collect()
}

/// Multiset overlap of the span's grams with the phrase's, normalized by
/// the phrase gram count.
pub fn ref_score(span_text: &str, phrase: &str) -> f64 {
    let phrase_grams = ref_grams(phrase);
    if phrase_grams.is_empty() {
        return 0.0;
    }
    let span_grams = ref_grams(span_text);
    let (mut i, mut j, mut hits) = (0usize, 0usize, 0usize);
    while i < span_grams.len() && j < phrase_grams.len() {
        match span_grams[i].cmp(&phrase_grams[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                hits += 1;
                i += 1;
                j += 1;
            }
        }
    }
    hits as f64 / phrase_grams.len() as f64
}

/// Trigrams contributed by the bundled stopword list, re-derived here from
/// the same data file by separate code.
pub fn ref_bundled_stopword_grams() -> BTreeSet<String> {
    let mut grams = BTreeSet::new();
    for line in include_str!("../../data/stopwords_en.txt").lines() {
        let word = line.trim();
        if word.is_empty() || word.starts_with('#') {
            continue;
        }
        for gram in ref_grams(&format!(" {word} ")) {
            if gram.chars().count() == NGRAM {
                grams.insert(gram);
            }
        }
    }
    grams
}

/// Set-based coverage: fraction of the document's non-stopword gram set
/// found anywhere in `texts`.
pub fn ref_coverage(doc_text: &str, texts: &[String]) -> f64 {
    if texts.is_empty() {
        return 0.0;
    }
    let stop = ref_bundled_stopword_grams();
    let universe: BTreeSet<String> = ref_gram_set(doc_text)
        .into_iter()
        .filter(|g| !stop.contains(g))
        .collect();
    if universe.is_empty() {
        return 1.0;
    }
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for text in texts {
        for gram in ref_gram_set(text) {
            if universe.contains(&gram) {
                seen.insert(gram);
            }
        }
    }
    seen.len() as f64 / universe.len() as f64
}

fn is_delim(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？' | '\n')
}

fn ref_expand(chars: &[char], start: usize, end: usize) -> (usize, usize) {
    let mut s = start;
    while s > 0 && !is_delim(chars[s - 1]) {
        s -= 1;
    }
    while s < start && chars[s].is_whitespace() {
        s += 1;
    }
    let mut e = end;
    while e < chars.len() && !is_delim(chars[e - 1]) {
        e += 1;
    }
    (s, e)
}

/// Exhaustive best candidate: enumerate every sliding window and every
/// sentence-expanded exact hit, score all of them, and keep the single
/// winner under (exact desc, score desc, start asc, length asc).
/// Returns (start, end, exact, score).
pub fn ref_best_span(
    doc_text: &str,
    phrases: &[String],
    window: usize,
) -> Option<(usize, usize, bool, f64)> {
    if phrases.is_empty() {
        return None;
    }
    let chars: Vec<char> = doc_text.chars().collect();
    let n = chars.len();
    let longest = phrases.iter().map(|p| p.chars().count()).max().unwrap_or(0);
    let w = window.max(longest).max(1);
    let stride = (w / 2).max(1);

    let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut s = 0;
    loop {
        let e = (s + w).min(n);
        candidates.insert((s, e));
        if e == n {
            break;
        }
        s += stride;
    }
    for phrase in phrases {
        let needle: Vec<char> = phrase.chars().collect();
        if needle.is_empty() || needle.len() > n {
            continue;
        }
        for i in 0..=(n - needle.len()) {
            if chars[i..i + needle.len()] == needle[..] {
                candidates.insert(ref_expand(&chars, i, i + needle.len()));
            }
        }
    }

    let mut best: Option<(usize, usize, bool, f64)> = None;
    for (cs, ce) in candidates {
        if cs >= ce {
            continue;
        }
        let text: String = chars[cs..ce].iter().collect();
        let score = phrases
            .iter()
            .map(|p| ref_score(&text, p))
            .fold(0.0, f64::max);
        let exact = phrases.iter().any(|p| text.contains(p.as_str()));
        if !(score > 0.0 || exact) {
            continue;
        }
        let candidate = (cs, ce, exact, score);
        best = Some(match best {
            None => candidate,
            Some(current) => {
                if ranks_ahead(candidate, current) {
                    candidate
                } else {
                    current
                }
            }
        });
    }
    best
}

fn ranks_ahead(a: (usize, usize, bool, f64), b: (usize, usize, bool, f64)) -> bool {
    if a.2 != b.2 {
        return a.2;
    }
    if a.3 != b.3 {
        return a.3 > b.3;
    }
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    (a.1 - a.0) < (b.1 - b.0)
}

/// Pearson via the computational formula (sums of products), clamped.
pub fn ref_pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(a, b)| a * b).sum();
    let sxx: f64 = xs.iter().map(|a| a * a).sum();
    let syy: f64 = ys.iter().map(|b| b * b).sum();
    let num = n * sxy - sx * sy;
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    if den == 0.0 || !den.is_finite() {
        return None;
    }
    Some((num / den).clamp(-1.0, 1.0))
}

/// Counting-based average ranks: 1 + how many are smaller, plus half the
/// tie group beyond self.
pub fn ref_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let less = values.iter().filter(|u| **u < *v).count();
            let equal = values.iter().filter(|u| **u == *v).count();
            less as f64 + (equal as f64 + 1.0) / 2.0
        })
        .collect()
}

pub fn ref_spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    ref_pearson(&ref_ranks(xs), &ref_ranks(ys))
}
