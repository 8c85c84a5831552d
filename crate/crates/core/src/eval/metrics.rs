//! Text overlap, faithfulness and ranking metrics.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::hypothesis::Statement;

pub const KS: [usize; 3] = [1, 3, 5];

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { row[j + 1].max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Token LCS length over reference length.
pub fn rouge_l(candidate: &str, reference: &str) -> Result<f64, EvalError> {
    let r = tokens(reference);
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    Ok(lcs_len(&tokens(candidate), &r) as f64 / r.len() as f64)
}

/// Fraction of statements accepted by `supported`.
pub fn faithfulness<F: Fn(&Statement) -> bool>(statements: &[Statement], supported: F) -> Result<f64, EvalError> {
    if statements.is_empty() {
        return Err(EvalError::EmptyStatements);
    }
    Ok(statements.iter().filter(|s| supported(s)).count() as f64 / statements.len() as f64)
}

/// Statements backed by the current state or KKT multipliers.
pub fn instantaneous_faithfulness(statements: &[Statement]) -> Result<f64, EvalError> {
    faithfulness(statements, |s| s.tag.is_instantaneous())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingAtK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub at: Vec<RankingAtK>,
    pub mrr: f64,
}

impl RankingMetrics {
    pub fn at_k(&self, k: usize) -> Option<&RankingAtK> {
        self.at.iter().find(|m| m.k == k)
    }
}

/// Precision, recall, F1 and binary-relevance NDCG at one cutoff.
pub fn ranking_at_k(predicted: &[String], truth: &[String], k: usize) -> RankingAtK {
    let k = k.max(1);
    let hits: Vec<bool> = predicted.iter().take(k).map(|p| truth.contains(p)).collect();
    let n_hit = hits.iter().filter(|h| **h).count() as f64;
    let precision = n_hit / k as f64;
    let recall = if truth.is_empty() { 0.0 } else { n_hit / truth.len() as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let dcg: f64 = hits.iter().enumerate().filter(|(_, h)| **h).map(|(i, _)| 1.0 / (i as f64 + 2.0).log2()).sum();
    let idcg: f64 = (0..truth.len().min(k)).map(|i| 1.0 / (i as f64 + 2.0).log2()).sum();
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    RankingAtK { k, precision, recall, f1, ndcg }
}

/// Metrics at K = 1, 3, 5 plus reciprocal rank of the first hit.
pub fn ranking_metrics(predicted: &[String], truth: &[String]) -> RankingMetrics {
    let mrr = predicted
        .iter()
        .position(|p| truth.contains(p))
        .map_or(0.0, |i| 1.0 / (i as f64 + 1.0));
    RankingMetrics { at: KS.iter().map(|&k| ranking_at_k(predicted, truth, k)).collect(), mrr }
}
