//! Accuracy, chrF++ and run summaries.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::InferenceRecord;
use crate::task::{TaskFamily, TaskSpec};

/// Fraction of predictions equivalent to their gold answers.
pub fn accuracy<P: AsRef<str>, G: AsRef<str>>(preds: &[P], golds: &[G], task: &TaskSpec) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::degenerate(format!(
            "{} predictions for {} gold answers",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::degenerate("accuracy of an empty set"));
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| task.equivalent(p.as_ref(), g.as_ref()))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

const CHAR_ORDER: usize = 6;
const WORD_ORDER: usize = 2;
const BETA: f64 = 2.0;

fn ngram_counts<T: Ord + Clone>(items: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    if items.len() >= n {
        for w in items.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// F-beta for one n-gram order, or `None` when neither side has n-grams of
/// that order.
fn order_f<T: Ord + Clone>(hyp: &[T], reference: &[T], n: usize) -> Option<f64> {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let h_total: usize = h.values().sum();
    let r_total: usize = r.values().sum();
    if h_total == 0 && r_total == 0 {
        return None;
    }
    let matched: usize = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    let p = if h_total == 0 { 0.0 } else { matched as f64 / h_total as f64 };
    let r = if r_total == 0 { 0.0 } else { matched as f64 / r_total as f64 };
    let b2 = BETA * BETA;
    Some(if p + r == 0.0 { 0.0 } else { (1.0 + b2) * p * r / (b2 * p + r) })
}

/// Sentence-level chrF++ on a 0-100 scale: character 1-6-grams (whitespace
/// removed) and word 1-2-grams, beta = 2, F averaged over the orders where
/// either side has n-grams.
pub fn chrf_pp(hypothesis: &str, reference: &str) -> Result<f64> {
    let ref_chars: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if ref_chars.is_empty() {
        return Err(Error::degenerate("chrF++ reference is empty"));
    }
    let hyp_chars: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    if hyp_chars.is_empty() {
        return Ok(0.0);
    }
    let hyp_words: Vec<&str> = hypothesis.split_whitespace().collect();
    let ref_words: Vec<&str> = reference.split_whitespace().collect();
    let scores: Vec<f64> = (1..=CHAR_ORDER)
        .filter_map(|n| order_f(&hyp_chars, &ref_chars, n))
        .chain((1..=WORD_ORDER).filter_map(|n| order_f(&hyp_words, &ref_words, n)))
        .collect();
    Ok(100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub n: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub metric: String,
    pub mean: f64,
    pub n: usize,
    /// Classification: accuracy per gold label.
    pub buckets: BTreeMap<String, Bucket>,
}

/// Scores inference records against `golds` (id -> gold answer). Failed
/// records score zero.
pub fn summarize_run(
    results: &[InferenceRecord],
    golds: &HashMap<String, String>,
    task: &TaskSpec,
) -> Result<RunSummary> {
    if results.is_empty() {
        return Err(Error::degenerate("no results to summarize"));
    }
    let mut per_item = Vec::with_capacity(results.len());
    let mut buckets: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in results {
        let gold = golds
            .get(&r.example_id)
            .ok_or_else(|| Error::config(format!("no gold answer for {:?}", r.example_id)))?;
        let value = match task.task_family {
            _ if r.error.is_some() || r.prediction.trim().is_empty() => 0.0,
            TaskFamily::Translation => chrf_pp(&r.prediction, gold)?,
            _ => f64::from(u8::from(task.equivalent(&r.prediction, gold))),
        };
        per_item.push(value);
        if task.task_family == TaskFamily::Classification {
            let b = buckets.entry(crate::parse::normalize_answer(task, gold)).or_default();
            b.0 += 1;
            b.1 += value;
        }
    }
    let metric = match task.task_family {
        TaskFamily::Translation => "chrf++",
        _ => "accuracy",
    };
    Ok(RunSummary {
        metric: metric.to_string(),
        mean: per_item.iter().sum::<f64>() / per_item.len() as f64,
        n: per_item.len(),
        buckets: buckets
            .into_iter()
            .map(|(k, (n, s))| (k, Bucket { n, mean: s / n as f64 }))
            .collect(),
    })
}

/// One line of the scaling-curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub k_gt: usize,
    pub k_psd: usize,
    pub scorer: String,
    pub metric_name: String,
    pub value: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}
