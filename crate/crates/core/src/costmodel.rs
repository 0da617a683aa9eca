//! Closed-form FLOPs of the RGConv and GRMP layers, with the per-step
//! decompositions that the instrumented counter is checked against.
//!
//! Bias terms are not counted. With `R = |R|`, `V = |V|`, `d` the mean
//! per-relation in-degree and `C` the channel count:
//!
//! * RGConv: `R(2dVC + 2VC²) + 2VC² + VC`
//! * GRMP: `R(2d + 7)VC + 6VC²`

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostParams {
    pub num_relations: u64,
    /// Mean in-degree per node under each relation.
    pub avg_in_degree: f64,
    pub num_nodes: u64,
    pub channels: u64,
}

impl CostParams {
    pub fn new(num_relations: u64, avg_in_degree: f64, num_nodes: u64, channels: u64) -> Self {
        Self { num_relations, avg_in_degree, num_nodes, channels }
    }

    /// `2·d·R·V·C`, the sparse aggregation term. Exact when `d·V` is an
    /// integer, otherwise rounded to the nearest integer.
    fn aggregation(&self) -> u64 {
        let dv = self.avg_in_degree * self.num_nodes as f64;
        let rc2 = 2 * self.num_relations * self.channels;
        if dv.fract() == 0.0 {
            rc2 * dv as u64
        } else {
            (rc2 as f64 * dv).round() as u64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostBreakdown {
    pub steps: Vec<u64>,
    pub total: u64,
}

impl CostBreakdown {
    fn from_steps(steps: Vec<u64>) -> Self {
        let total = steps.iter().sum();
        Self { steps, total }
    }
}

/// Steps: aggregation `2dRVC`, per-relation kernels `2RVC²`, self-update
/// `2VC² + VC`.
pub fn rgconv_breakdown(p: &CostParams) -> CostBreakdown {
    let (r, v, c) = (p.num_relations, p.num_nodes, p.channels);
    CostBreakdown::from_steps(vec![p.aggregation(), 2 * r * v * c * c, 2 * v * c * c + v * c])
}

/// Steps: input mixing `2VC²`, channel-wise aggregation `2dRVC + 2RVC`,
/// relation weighting `5RVC − VC`, output mixing `2VC²`, gated self-update
/// `2VC² + VC`.
pub fn grmp_breakdown(p: &CostParams) -> Result<CostBreakdown> {
    if p.num_relations == 0 {
        return Err(Error::Contract("GRMP cost needs at least one relation".into()));
    }
    let (r, v, c) = (p.num_relations, p.num_nodes, p.channels);
    Ok(CostBreakdown::from_steps(vec![
        2 * v * c * c,
        p.aggregation() + 2 * r * v * c,
        5 * r * v * c - v * c,
        2 * v * c * c,
        2 * v * c * c + v * c,
    ]))
}

pub fn rgconv_flops(p: &CostParams) -> u64 {
    let (r, v, c) = (p.num_relations, p.num_nodes, p.channels);
    p.aggregation() + r * 2 * v * c * c + 2 * v * c * c + v * c
}

pub fn grmp_flops(p: &CostParams) -> Result<u64> {
    grmp_flops_with_constant(p, GRMP_PER_RELATION)
}

/// Per-relation, per-node, per-channel FLOPs of GRMP beyond the sparse
/// aggregation.
pub const GRMP_PER_RELATION: u64 = 7;

/// GRMP cost with the per-relation constant replaced by `k`. Used to check
/// that the exactness suite notices a wrong formula.
pub fn grmp_flops_with_constant(p: &CostParams, k: u64) -> Result<u64> {
    if p.num_relations == 0 {
        return Err(Error::Contract("GRMP cost needs at least one relation".into()));
    }
    Ok(grmp_polynomial(p, k))
}

fn grmp_polynomial(p: &CostParams, k: u64) -> u64 {
    let (r, v, c) = (p.num_relations, p.num_nodes, p.channels);
    p.aggregation() + k * r * v * c + 6 * v * c * c
}

/// FLOPs of a two-layer feed-forward block `C → γC → C` with GELU, biases
/// excluded: `4γVC² + γVC`.
pub fn ffn_flops(num_nodes: u64, channels: u64, ratio: u64) -> u64 {
    4 * ratio * num_nodes * channels * channels + ratio * num_nodes * channels
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageCost {
    pub num_nodes: u64,
    pub channels: u64,
    pub depth: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ArchCost {
    pub stages: Vec<StageCost>,
    pub ffn_ratio: u64,
}

impl ArchCost {
    /// The four-stage tiny configuration at a square input resolution:
    /// `(res/4)²` nodes at 96 channels, then halving resolution and doubling
    /// channels, with depths 2, 2, 6, 2.
    pub fn eurnet_t(resolution: u64) -> Self {
        let depths = [2, 2, 6, 2];
        let stages = depths
            .iter()
            .enumerate()
            .map(|(i, &depth)| {
                let side = resolution / (4 << i);
                StageCost { num_nodes: side * side, channels: 96 << i, depth }
            })
            .collect();
        Self { stages, ffn_ratio: 4 }
    }

    /// `(GRMP, RGConv)` marginal cost of one more relation with unit
    /// in-degree, per stage.
    pub fn marginal_costs(&self) -> Vec<(u64, u64)> {
        self.stages
            .iter()
            .map(|s| {
                let (v, c) = (s.num_nodes, s.channels);
                (s.depth * 9 * v * c, s.depth * (2 * v * c + 2 * v * c * c))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub k: u64,
    pub rgconv_flops: u64,
    pub grmp_flops: u64,
    /// Cost added by going from `k − 1` to `k` relations.
    pub rgconv_marginal: u64,
    pub grmp_marginal: u64,
}

/// Model-level `(RGConv, GRMP)` FLOPs with `k` unit-degree relations. The
/// polynomials are evaluated as written, so `k = 0` gives the cost of the
/// relation-independent terms.
fn model_flops(arch: &ArchCost, k: u64) -> (u64, u64) {
    let mut rg = 0;
    let mut gr = 0;
    for s in &arch.stages {
        let p = CostParams::new(k, 1.0, s.num_nodes, s.channels);
        let ffn = ffn_flops(s.num_nodes, s.channels, arch.ffn_ratio);
        rg += s.depth * (rgconv_flops(&p) + ffn);
        gr += s.depth * (grmp_polynomial(&p, GRMP_PER_RELATION) + ffn);
    }
    (rg, gr)
}

/// Model-level FLOPs when the `k`-th nearest neighbor is the `k`-th relation
/// (unit in-degree per relation) for every `k` in `ks`. FFN cost is included
/// identically in both columns.
pub fn sweep_knn_relations(arch: &ArchCost, ks: impl IntoIterator<Item = u64>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for k in ks {
        if k == 0 {
            return Err(Error::Contract("relation sweep starts at K = 1".into()));
        }
        let (rg, gr) = model_flops(arch, k);
        let (rg_prev, gr_prev) = model_flops(arch, k - 1);
        rows.push(SweepRow {
            k,
            rgconv_flops: rg,
            grmp_flops: gr,
            rgconv_marginal: rg - rg_prev,
            grmp_marginal: gr - gr_prev,
        });
    }
    if rows.is_empty() {
        return Err(Error::Contract("empty relation sweep".into()));
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: &mut W) -> Result<()> {
    writeln!(w, "K,rgconv_flops,grmp_flops,rgconv_marginal,grmp_marginal")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.k, r.rgconv_flops, r.grmp_flops, r.rgconv_marginal, r.grmp_marginal)?;
    }
    Ok(())
}
