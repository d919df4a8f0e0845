//! Aggregation and agreement statistics over evaluation records: grouped
//! metric means plus Pearson and Spearman correlation between judge scores
//! and human scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::DialogueEvaluation;

/// One item scored by both a judge model and a human. The optional metric
/// tag lets a file carry per-metric pairs; untagged files are treated as
/// one pooled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    #[serde(rename = "item_id")]
    pub id: String,
    #[serde(rename = "judge_score")]
    pub judge: f64,
    #[serde(rename = "human_score")]
    pub human: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
}

/// Correlation between two raters. `None` means the statistic is undefined
/// because one side has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub n: usize,
}

fn check_paired(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 pairs, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Domain("scores must be finite".into()));
    }
    Ok(())
}

/// Pearson product-moment correlation, clamped to [-1, 1] against rounding
/// drift. `None` when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    check_paired(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0)))
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold the same value; ranks are 1-based
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    check_paired(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

pub fn correlation_report(pairs: &[ScorePair]) -> Result<CorrelationReport> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.judge).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.human).collect();
    Ok(CorrelationReport {
        pearson: pearson(&xs, &ys)?,
        spearman: spearman(&xs, &ys)?,
        n: pairs.len(),
    })
}

/// Which evaluation field to group summary rows by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Mode,
    Generator,
    Topic,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "mode" => Ok(GroupBy::Mode),
            "generator" => Ok(GroupBy::Generator),
            "topic" => Ok(GroupBy::Topic),
            other => Err(Error::Validation(format!(
                "unknown grouping {other:?} (expected mode, generator, or topic)"
            ))),
        }
    }
}

/// Mean scores for one group of complete evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub n: usize,
    pub info: f64,
    pub ud: f64,
    pub uf: f64,
    pub fd: f64,
    pub fl: f64,
    pub cs: f64,
    pub co: f64,
    pub ia: f64,
    pub cr: f64,
    pub avg: f64,
}

/// Mean every metric within each group. Evaluations with gaps (no aggregate)
/// are skipped; summarizing nothing but gaps is an error.
pub fn summarize(evals: &[DialogueEvaluation], group_by: GroupBy) -> Result<Vec<SummaryRow>> {
    let mut groups: BTreeMap<String, Vec<&DialogueEvaluation>> = BTreeMap::new();
    for eval in evals {
        let complete = eval.gaps.is_empty()
            && eval.scores.all_eight().is_some()
            && eval.cr.is_some()
            && eval.avg.is_some();
        if !complete {
            continue;
        }
        let key = match group_by {
            GroupBy::Mode => eval.mode.to_string(),
            GroupBy::Generator => eval.generator.clone(),
            GroupBy::Topic => eval.topic.clone(),
        };
        groups.entry(key).or_default().push(eval);
    }
    if groups.is_empty() {
        return Err(Error::Domain("no complete evaluations to summarize".into()));
    }

    let mean = |values: Vec<f64>| values.iter().sum::<f64>() / values.len() as f64;
    let rows = groups
        .into_iter()
        .map(|(group, members)| {
            let eights: Vec<[f64; 8]> = members
                .iter()
                .map(|e| e.scores.all_eight().expect("checked complete"))
                .collect();
            let column = |i: usize| mean(eights.iter().map(|e| e[i]).collect());
            SummaryRow {
                group,
                n: members.len(),
                info: column(0),
                ud: column(1),
                uf: column(2),
                fd: column(3),
                fl: column(4),
                cs: column(5),
                co: column(6),
                ia: column(7),
                cr: mean(members.iter().map(|e| e.cr.expect("checked")).collect()),
                avg: mean(members.iter().map(|e| e.avg.expect("checked")).collect()),
            }
        })
        .collect();
    Ok(rows)
}

fn cells(row: &SummaryRow) -> Vec<String> {
    let mut out = vec![row.group.clone(), row.n.to_string()];
    for v in [
        row.info, row.ud, row.uf, row.fd, row.fl, row.cs, row.co, row.ia, row.cr, row.avg,
    ] {
        out.push(format!("{v:.2}"));
    }
    out
}

const HEADER: [&str; 12] = [
    "Group", "N", "Info", "UD", "UF", "FD", "FL", "CS", "CO", "IA", "CR", "Avg",
];

pub fn render_tsv(rows: &[SummaryRow]) -> String {
    let mut out = HEADER.join("\t");
    for row in rows {
        out.push('\n');
        out.push_str(&cells(row).join("\t"));
    }
    out
}

/// Fixed-width table for terminals.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut table: Vec<Vec<String>> = vec![HEADER.iter().map(|s| s.to_string()).collect()];
    table.extend(rows.iter().map(cells));
    let widths: Vec<usize> = (0..HEADER.len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    table
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, cell)| format!("{cell:>width$}", width = widths[c]))
                .collect::<Vec<_>>()
                .join("  ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
