//! Link-prediction ranking metrics and protein-centric Fmax.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphbuild::Triplet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    /// Number of ranked queries (two per triplet).
    pub queries: usize,
}

impl RankingMetrics {
    /// `(name, value)` pairs in reporting order.
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [("mr", self.mr), ("mrr", self.mrr), ("hits@1", self.hits1), ("hits@3", self.hits3), ("hits@10", self.hits10)]
    }

    pub fn from_ranks(ranks: &[f64]) -> Self {
        if ranks.is_empty() {
            return Self::default();
        }
        let n = ranks.len() as f64;
        let mean = |f: &dyn Fn(f64) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n;
        Self {
            mr: mean(&|r| r),
            mrr: mean(&|r| 1.0 / r),
            hits1: mean(&|r| f64::from(u8::from(r <= 1.0))),
            hits3: mean(&|r| f64::from(u8::from(r <= 3.0))),
            hits10: mean(&|r| f64::from(u8::from(r <= 10.0))),
            queries: ranks.len(),
        }
    }
}

/// Rank of `target` among the candidates not removed by `filtered`:
/// `1 + #greater + #equal / 2`.
pub fn filtered_rank(scores: &[f64], target: usize, filtered: impl Fn(usize) -> bool) -> Result<f64> {
    let Some(&s) = scores.get(target) else {
        return Err(Error::Data(format!("no score for candidate {target}")));
    };
    let (mut greater, mut equal) = (0usize, 0usize);
    for (e, &x) in scores.iter().enumerate() {
        if e == target || filtered(e) {
            continue;
        }
        if x > s {
            greater += 1;
        } else if x == s {
            equal += 1;
        }
    }
    Ok(1.0 + greater as f64 + equal as f64 / 2.0)
}

/// Filtered head and tail ranking. `tail_scores[i][e]` scores
/// `(h_i, r_i, e)` and `head_scores[i][e]` scores `(e, r_i, t_i)`; other
/// triplets in `known` are removed from the candidates.
pub fn ranking_metrics(
    test: &[Triplet],
    tail_scores: &[Vec<f64>],
    head_scores: &[Vec<f64>],
    num_entities: usize,
    known: &HashSet<Triplet>,
) -> Result<RankingMetrics> {
    if tail_scores.len() != test.len() || head_scores.len() != test.len() {
        return Err(Error::Data("missing candidate scores".into()));
    }
    let mut ranks = Vec::with_capacity(2 * test.len());
    for (i, q) in test.iter().enumerate() {
        if tail_scores[i].len() != num_entities || head_scores[i].len() != num_entities {
            return Err(Error::Data(format!("missing candidate scores for query {i}")));
        }
        ranks.push(filtered_rank(&tail_scores[i], q.t, |e| known.contains(&Triplet::new(q.h, q.r, e)))?);
        ranks.push(filtered_rank(&head_scores[i], q.h, |e| known.contains(&Triplet::new(e, q.r, q.t)))?);
    }
    Ok(RankingMetrics::from_ranks(&ranks))
}

/// Expected reciprocal rank of a uniformly random ranking of `n`
/// candidates: `H_n / n`.
pub fn random_mrr(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}

/// Score thresholds `0.01, 0.02, …, 0.99`.
pub fn fmax_thresholds() -> impl Iterator<Item = f64> {
    (1..100).map(|k| k as f64 / 100.0)
}

/// Precision and recall averaged over proteins at one threshold. Proteins
/// without any positive label are skipped.
pub fn precision_recall_at(scores: &Tensor<f64>, labels: &Tensor<f64>, t: f64) -> (f64, f64) {
    let (mut p_sum, mut p_n, mut r_sum, mut r_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..scores.rows() {
        let (s, y) = (scores.row(i), labels.row(i));
        let pos = y.iter().filter(|&&v| v > 0.5).count();
        if pos == 0 {
            continue;
        }
        let pred = s.iter().filter(|&&v| v >= t).count();
        let tp = s.iter().zip(y).filter(|&(&v, &l)| v >= t && l > 0.5).count();
        if pred > 0 {
            p_sum += tp as f64 / pred as f64;
            p_n += 1;
        }
        r_sum += tp as f64 / pos as f64;
        r_n += 1;
    }
    let p = if p_n > 0 { p_sum / p_n as f64 } else { 0.0 };
    let r = if r_n > 0 { r_sum / r_n as f64 } else { 0.0 };
    (p, r)
}

pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_fmax_inputs(scores: &Tensor<f64>, labels: &Tensor<f64>) -> Result<()> {
    if scores.shape() != labels.shape() || scores.shape().len() != 2 {
        return Err(Error::dim("fmax", format!("scores {:?} vs labels {:?}", scores.shape(), labels.shape())));
    }
    if let Some(v) = scores.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!("score {v} outside [0, 1]")));
    }
    if let Some(v) = labels.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(format!("label {v} is not binary")));
    }
    Ok(())
}

/// Maximum F-score over the thresholds `0.01..=0.99`, with precision
/// averaged over proteins having at least one prediction and recall over
/// all labeled proteins.
pub fn fmax(scores: &Tensor<f64>, labels: &Tensor<f64>) -> Result<f64> {
    check_fmax_inputs(scores, labels)?;
    Ok(fmax_thresholds()
        .map(|t| {
            let (p, r) = precision_recall_at(scores, labels, t);
            f_score(p, r)
        })
        .fold(0.0, f64::max))
}

fn read_triples_csv(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || (i == 0 && t.starts_with("protein_id")) {
            continue;
        }
        let f: Vec<&str> = t.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::parse(path, i + 1, format!("expected 3 fields, got {}", f.len())));
        }
        let v = f[2].parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad value `{}`", f[2])))?;
        out.push((f[0].to_string(), f[1].to_string(), v));
    }
    Ok(out)
}

/// Reads `protein_id,task_id,score` predictions and a labels file of the same
/// layout into aligned `P × T` matrices. Proteins and tasks come from the
/// labels file in first-appearance order; pairs without a prediction score
/// 0.
pub fn read_fmax_csv(predictions: &Path, labels: &Path) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let lab = read_triples_csv(labels)?;
    let mut proteins = BTreeMap::new();
    let mut tasks = BTreeMap::new();
    for (p, t, _) in &lab {
        let n = proteins.len();
        proteins.entry(p.clone()).or_insert(n);
        let n = tasks.len();
        tasks.entry(t.clone()).or_insert(n);
    }
    let (np, nt) = (proteins.len(), tasks.len());
    let mut y = Tensor::zeros(vec![np, nt]);
    for (p, t, v) in &lab {
        y.set(proteins[p], tasks[t], *v);
    }
    let mut s = Tensor::zeros(vec![np, nt]);
    for (p, t, v) in read_triples_csv(predictions)? {
        match (proteins.get(&p), tasks.get(&t)) {
            (Some(&i), Some(&j)) => s.set(i, j, v),
            _ => return Err(Error::Data(format!("prediction for unlabeled pair ({p}, {t})"))),
        }
    }
    Ok((s, y))
}
