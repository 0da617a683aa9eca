//! Slow, literal reference implementations used to cross-check the fast
//! paths. Everything here works in `f64` with plain nested loops.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use crate::graphbuild::{PatchGrid, ProteinChain, ProteinGraphConfig};
use crate::layers::{AlphaMode, Gating, Grmp, Linear, RgConv};
use crate::params::{ParamId, ParamStore};
use crate::relgraph::{Edge, LineGraphOptions, RelGraph};
use crate::tensor::{Scalar, Tensor};

type Mat = Vec<Vec<f64>>;

fn mat<T: Scalar>(t: &Tensor<T>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).iter().map(|x| x.as_f64()).collect()).collect()
}

fn param<T: Scalar>(store: &ParamStore<T>, id: ParamId) -> Mat {
    mat(store.get(id))
}

/// `x · W` for one row.
fn vec_mat(x: &[f64], w: &Mat) -> Vec<f64> {
    let n = w.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..n {
            out[j] += xi * w[i][j];
        }
    }
    out
}

fn linear<T: Scalar>(store: &ParamStore<T>, l: &Linear, x: &[f64]) -> Vec<f64> {
    let mut y = vec_mat(x, &param(store, l.w));
    if let Some(b) = l.b {
        let b = &param(store, b)[0];
        for (yi, bi) in y.iter_mut().zip(b) {
            *yi += bi;
        }
    }
    y
}

/// Per-relation aggregation through dense row-normalized adjacency
/// matrices: row `v·|R| + r` is `Σ_u A_r[v][u] z_u`.
pub fn dense_rel_aggregate<T: Scalar>(g: &RelGraph, z: &Tensor<T>) -> Tensor<f64> {
    let (n, r, c) = (g.num_nodes(), g.num_relations(), z.cols());
    let z = mat(z);
    let mut out = vec![0.0; n * r * c];
    for rel in 0..r {
        let mut adj = vec![vec![0.0; n]; n];
        for e in g.edges().filter(|e| e.rel == rel) {
            adj[e.dst][e.src] += 1.0;
        }
        for (v, row) in adj.iter_mut().enumerate() {
            let deg: f64 = row.iter().sum();
            if deg > 0.0 {
                row.iter_mut().for_each(|a| *a /= deg);
            }
            for (u, &a) in row.iter().enumerate() {
                for ch in 0..c {
                    out[(v * r + rel) * c + ch] += a * z[u][ch];
                }
            }
        }
    }
    Tensor::new(vec![n * r, c], out).expect("consistent shape")
}

/// `z'_v = z_v W_self + b_self + Σ_r [N_r(v) ≠ ∅] (mean_{u ∈ N_r(v)} z_u · W_r + b_r)`,
/// one node and one relation at a time.
pub fn rgconv_loop<T: Scalar>(layer: &RgConv, store: &ParamStore<T>, g: &RelGraph, z: &Tensor<T>) -> Tensor<f64> {
    let c = layer.channels;
    let zm = mat(z);
    let w_rel = param(store, layer.w_rel);
    let b_rel = param(store, layer.b_rel);
    let w_self = param(store, layer.w_self);
    let b_self = &param(store, layer.b_self)[0];
    let mut out = Vec::new();
    for v in 0..g.num_nodes() {
        let mut acc = vec_mat(&zm[v], &w_self);
        for (a, b) in acc.iter_mut().zip(b_self) {
            *a += b;
        }
        for r in 0..g.num_relations() {
            let nbrs = g.neighbors(v, r);
            if nbrs.is_empty() {
                continue;
            }
            let w_r: Mat = w_rel[r * c..(r + 1) * c].to_vec();
            for &u in nbrs {
                let m = vec_mat(&zm[u as usize], &w_r);
                for (a, x) in acc.iter_mut().zip(&m) {
                    *a += x / nbrs.len() as f64;
                }
            }
            for (a, b) in acc.iter_mut().zip(&b_rel[r]) {
                *a += b;
            }
        }
        out.extend(acc);
    }
    Tensor::new(vec![g.num_nodes(), c], out).expect("consistent shape")
}

/// `z'_v = z_v W_self ⊙ W_out(Σ_r α_r(v) Σ_{u ∈ N_r(v)} |N_r(v)|⁻¹ w_r ⊙ W_in z_u)`
/// with the variant's substitutions, one node at a time.
pub fn grmp_loop<T: Scalar>(layer: &Grmp, store: &ParamStore<T>, g: &RelGraph, z: &Tensor<T>) -> Tensor<f64> {
    let (c, nr) = (layer.channels, layer.num_relations);
    let zm = mat(z);
    let w_rel = &param(store, layer.w_rel)[0];
    let z_in: Mat = zm
        .iter()
        .map(|zu| match &layer.w_in {
            Some(l) => linear(store, l, zu),
            None => zu.clone(),
        })
        .collect();
    let mut out = Vec::new();
    for v in 0..g.num_nodes() {
        let alpha = match (&layer.w_alpha, layer.variant.alpha) {
            (Some(l), AlphaMode::Learned) => linear(store, l, &zm[v]),
            _ => vec![1.0 / nr as f64; nr],
        };
        let mut acc = vec![0.0; c];
        for r in 0..nr {
            let nbrs = g.neighbors(v, r);
            for &u in nbrs {
                for ch in 0..c {
                    acc[ch] += alpha[r] * w_rel[r * c + ch] * z_in[u as usize][ch] / nbrs.len() as f64;
                }
            }
        }
        let aggr = match &layer.w_out {
            Some(l) => linear(store, l, &acc),
            None => acc,
        };
        let own = linear(store, &layer.w_self, &zm[v]);
        for ch in 0..c {
            out.push(match layer.variant.gating {
                Gating::Gate => own[ch] * aggr[ch],
                Gating::Add => own[ch] + aggr[ch],
            });
        }
    }
    Tensor::new(vec![g.num_nodes(), c], out).expect("consistent shape")
}

/// `x ↦ GELU(x W1 + b1) W2 + b2`, row by row.
pub fn ffn_loop<T: Scalar>(fc1: &Linear, fc2: &Linear, store: &ParamStore<T>, x: &Tensor<T>) -> Tensor<f64> {
    let mut out = Vec::new();
    for row in mat(x) {
        let h: Vec<f64> = linear(store, fc1, &row)
            .into_iter()
            .map(|v| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
            .collect();
        out.extend(linear(store, fc2, &h));
    }
    Tensor::new(vec![x.rows(), fc2.out_dim], out).expect("consistent shape")
}

/// Medium-range image edges from the full squared-distance matrix: for every patch,
/// all candidates outside its 2×2 window sorted by (distance, index), first
/// `k` kept.
pub fn image_medium_brute<T: Scalar>(grid: &PatchGrid<T>, k: usize) -> BTreeSet<Edge> {
    let n = grid.h * grid.w;
    let f = mat(&grid.features);
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            dist[i][j] = f[i].iter().zip(&f[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    let win = |p: usize| (p / grid.w / 2, p % grid.w / 2);
    let mut edges = BTreeSet::new();
    for v in 0..n {
        let mut cands: Vec<usize> = (0..n).filter(|&u| win(u) != win(v)).collect();
        cands.sort_by(|&a, &b| dist[v][a].partial_cmp(&dist[v][b]).unwrap().then(a.cmp(&b)));
        edges.extend(cands.into_iter().take(k).map(|u| Edge::new(u, v, 0)));
    }
    edges
}

/// Medium-range protein edges: every pair filtered on sequence and space,
/// sorted by (distance, index), ranks split at `medium_k`. Relation ids are
/// 0 for the near group and 1 for the far group.
pub fn protein_medium_brute(chain: &ProteinChain, cfg: &ProteinGraphConfig) -> BTreeSet<Edge> {
    let l = chain.len();
    let d = |i: usize, j: usize| {
        let (a, b) = (chain.coords[i], chain.coords[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    let mut edges = BTreeSet::new();
    for v in 0..l {
        let mut cands: Vec<usize> =
            (0..l).filter(|&u| u.abs_diff(v) > cfg.medium_min_seq && d(u, v) > cfg.radius).collect();
        cands.sort_by(|&a, &b| d(v, a).partial_cmp(&d(v, b)).unwrap().then(a.cmp(&b)));
        for (rank, u) in cands.into_iter().take(2 * cfg.medium_k).enumerate() {
            edges.insert(Edge::new(u, v, usize::from(rank >= cfg.medium_k)));
        }
    }
    edges
}

/// Line graph by testing every ordered pair of distinct edges for
/// adjacency.
pub fn line_graph_brute(g: &RelGraph, coords: &[[f64; 3]], opts: LineGraphOptions) -> BTreeSet<Edge> {
    let edges: Vec<Edge> = g.edges().collect();
    let mut out = BTreeSet::new();
    for (i, e1) in edges.iter().enumerate() {
        for (j, e2) in edges.iter().enumerate() {
            if i == j || e1.dst != e2.src {
                continue;
            }
            if !opts.include_reverse && e2.dst == e1.src && e1.src != e1.dst {
                continue;
            }
            let (a, b, c) = (coords[e1.src], coords[e1.dst], coords[e2.dst]);
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let w = [c[0] - b[0], c[1] - b[1], c[2] - b[2]];
            let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            let nw = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            let bin = if nu == 0.0 || nw == 0.0 {
                0
            } else {
                let cos = ((u[0] * w[0] + u[1] * w[1] + u[2] * w[2]) / (nu * nw)).clamp(-1.0, 1.0);
                let width = std::f64::consts::PI / opts.num_bins as f64;
                ((cos.acos() / width) as usize).min(opts.num_bins - 1)
            };
            out.insert(Edge::new(i, j, bin));
        }
    }
    out
}

/// Concatenation `[z(2i,2j) ; z(2i+1,2j) ; z(2i,2j+1) ; z(2i+1,2j+1)]` for
/// every output patch.
pub fn patch_merge_gather<T: Scalar>(z: &Tensor<T>, h: usize, w: usize) -> Tensor<f64> {
    let zm = mat(z);
    let c = z.cols();
    let mut out = Vec::new();
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                out.extend_from_slice(&zm[(2 * i + di) * w + 2 * j + dj]);
            }
        }
    }
    Tensor::new(vec![(h / 2) * (w / 2), 4 * c], out).expect("consistent shape")
}

/// F-score maximized over an explicit list of thresholds, recomputing every
/// per-protein count from scratch.
pub fn fmax_sweep(scores: &[Vec<f64>], labels: &[Vec<bool>], thresholds: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &t in thresholds {
        let mut precisions = Vec::new();
        let mut recalls = Vec::new();
        for (s, y) in scores.iter().zip(labels) {
            let positives = y.iter().filter(|&&b| b).count();
            if positives == 0 {
                continue;
            }
            let mut predicted = 0;
            let mut correct = 0;
            for (&si, &yi) in s.iter().zip(y) {
                if si >= t {
                    predicted += 1;
                    if yi {
                        correct += 1;
                    }
                }
            }
            if predicted > 0 {
                precisions.push(correct as f64 / predicted as f64);
            }
            recalls.push(correct as f64 / positives as f64);
        }
        let p = if precisions.is_empty() { 0.0 } else { precisions.iter().sum::<f64>() / precisions.len() as f64 };
        let r = if recalls.is_empty() { 0.0 } else { recalls.iter().sum::<f64>() / recalls.len() as f64 };
        if p + r > 0.0 {
            best = best.max(2.0 * p * r / (p + r));
        }
    }
    best
}

/// Every distinct score value as a threshold.
pub fn fmax_dense(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> f64 {
    let mut ts: Vec<f64> = scores.iter().flatten().copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    fmax_sweep(scores, labels, &ts)
}

/// Rank of `target` by sorting all unfiltered candidates, averaging the
/// positions of every candidate tied with it.
pub fn rank_by_sorting(scores: &[f64], target: usize, filtered: &[usize]) -> f64 {
    let mut kept: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(e, _)| *e == target || !filtered.contains(e))
        .map(|(e, &s)| (s, e))
        .collect();
    kept.sort_by(|a, b| b.0.total_cmp(&a.0));
    let s = scores[target];
    let positions: Vec<usize> = kept.iter().enumerate().filter(|(_, x)| x.0 == s).map(|(i, _)| i + 1).collect();
    // the target's own position among its ties is uniform, so its expected rank is their mean
    positions.iter().sum::<usize>() as f64 / positions.len() as f64
}

/// Elementwise AdamW written out per scalar, for comparison against the
/// optimizer. Returns the parameter trajectory after each step.
pub fn adamw_reference(
    theta0: &[f64],
    grads: &[Vec<f64>],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Vec<Vec<f64>> {
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut out = Vec::new();
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..theta.len() {
            theta[i] *= 1.0 - lr * weight_decay;
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / (1.0 - beta1.powi(t));
            let v_hat = v[i] / (1.0 - beta2.powi(t));
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        out.push(theta.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_averaging_by_sorting() {
        assert_eq!(rank_by_sorting(&[0.5; 4], 2, &[]), 2.5);
        assert_eq!(rank_by_sorting(&[0.1, 0.9, 0.5], 2, &[1]), 1.0);
    }

    #[test]
    fn dense_sweep_on_a_two_protein_case() {
        let s = vec![vec![0.9, 0.8], vec![0.2, 0.1]];
        let y = vec![vec![true, false], vec![true, true]];
        // at t = 0.1 every score is a prediction: P = (1/2 + 1)/2, R = 1
        let f = fmax_dense(&s, &y);
        let p: f64 = 0.75;
        assert!((f - 2.0 * p / (p + 1.0)).abs() < 1e-15);
    }
}
