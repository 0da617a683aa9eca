//! Self-check suites: finite-difference gradients, exact FLOPs counts,
//! E(3) invariance of protein graphs, and agreement with the slow oracles.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::costmodel::{
    grmp_breakdown, grmp_flops_with_constant, rgconv_breakdown, rgconv_flops, sweep_knn_relations, ArchCost,
    CostParams, GRMP_PER_RELATION,
};
use crate::error::{Error, Result};
use crate::graphbuild::{image_medium_edges, protein_edges, PatchGrid, ProteinChain, ProteinGraphConfig, Range};
use crate::layers::{AlphaMode, Ffn, Gating, Grmp, GrmpVariant, PatchMerging, RgConv};
use crate::models::{filtered_rank, fmax, ProteinEncoder, ProteinEncoderConfig};
use crate::oracles;
use crate::params::{ParamId, ParamStore};
use crate::relgraph::{build_line_graph, Edge, LineGraphOptions, RelGraph};
use crate::tensor::gradcheck::{check_param_gradients, weighted_sum};
use crate::tensor::{OpCounter, Scalar, Tape, Tensor};
use crate::training::{OptimizerConfig, OptimizerState};

/// Largest accepted relative error between analytic and numeric gradients.
pub const GRADCHECK_TOL: f64 = 1e-5;
/// Tolerance of the 32-bit layers against their 64-bit loop oracles.
pub const LAYER_ORACLE_TOL: f64 = 1e-6;
/// Tolerance of protein representations under rigid motions.
pub const E3_TOL: f64 = 1e-5;
/// Smallest gap kept between any distance and a threshold or rank boundary
/// in generated protein chains.
pub const GENERIC_GAP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gradcheck,
    FlopsExact,
    E3,
    Oracles,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradcheck, Suite::FlopsExact, Suite::E3, Suite::Oracles];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::FlopsExact => "flops-exact",
            Suite::E3 => "e3",
            Suite::Oracles => "oracles",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown suite `{s}` (expected gradcheck, flops-exact, e3 or oracles)"))
        })
    }
}

/// Deliberate faults for checking that a suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Expect 8 instead of 7 FLOPs per relation, node and channel in the
    /// GRMP formula.
    GrmpConstant,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub e3_transforms: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, e3_transforms: 100, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn within(name: impl Into<String>, err: f64, tol: f64) -> Self {
        Self::new(name, err < tol, format!("max error {err:.3e} (tolerance {tol:.0e})"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Gradcheck => gradcheck_suite(opts)?,
        Suite::FlopsExact => flops_suite(opts)?,
        Suite::E3 => e3_suite(opts)?,
        Suite::Oracles => oracle_suite(opts)?,
    };
    Ok(SuiteReport { suite, passed: checks.iter().all(|c| c.passed), checks })
}

/// `R` relations where node `v` receives from `v + 1 + r·d + j (mod V)`,
/// `j < d`: every node has in-degree exactly `d` under every relation.
pub fn regular_graph(num_relations: usize, degree: usize, num_nodes: usize) -> Result<RelGraph> {
    if degree > num_nodes {
        return Err(Error::Config(format!("in-degree {degree} needs at least as many nodes, got {num_nodes}")));
    }
    let mut edges = Vec::with_capacity(num_relations * degree * num_nodes);
    for r in 0..num_relations {
        for v in 0..num_nodes {
            for j in 0..degree {
                edges.push(Edge::new((v + 1 + r * degree + j) % num_nodes, v, r));
            }
        }
    }
    RelGraph::from_edges(num_nodes, num_relations, &edges)
}

/// Up to `num_edges` uniformly drawn edges, duplicates merged.
pub fn random_graph<R: Rng + ?Sized>(
    rng: &mut R,
    num_nodes: usize,
    num_relations: usize,
    num_edges: usize,
) -> Result<RelGraph> {
    let edges: Vec<Edge> = (0..num_edges)
        .map(|_| {
            Edge::new(
                rng.random_range(0..num_nodes),
                rng.random_range(0..num_nodes),
                rng.random_range(0..num_relations),
            )
        })
        .collect();
    RelGraph::from_edges_dedup(num_nodes, num_relations, &edges)
}

pub fn random_tensor<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::cst(std * rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// Replaces every parameter by Gaussian noise, so that zero biases and
/// all-ones relation weights do not hide errors.
pub fn randomize_params<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, std: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, random_tensor(rng, shape, std)).expect("same shape");
    }
}

/// The four ablation variants: full, without `W_in`, without `W_out`, and
/// with uniform relation weights.
pub fn grmp_variants() -> [GrmpVariant; 4] {
    let full = GrmpVariant::default();
    [
        full,
        GrmpVariant { use_w_in: false, ..full },
        GrmpVariant { use_w_out: false, ..full },
        GrmpVariant { alpha: AlphaMode::Uniform, ..full },
    ]
}

fn gradcheck_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for seed in opts.seed..opts.seed + 5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = Arc::new(random_graph(&mut rng, 7, 3, 16)?);
        let c = 3;
        let mut store = ParamStore::<f64>::new();
        let z = store.add("z", random_tensor(&mut rng, vec![7, c], 1.0))?;
        let rg = RgConv::new(&mut store, &mut rng, "rgconv", c, 3)?;
        let additive = GrmpVariant { gating: Gating::Add, ..GrmpVariant::default() };
        let grmps = grmp_variants()
            .into_iter()
            .chain([additive])
            .enumerate()
            .map(|(i, v)| Grmp::new(&mut store, &mut rng, &format!("grmp{i}"), c, 3, v))
            .collect::<Result<Vec<_>>>()?;
        randomize_params(&mut store, &mut rng, 0.7);

        let rg_ids: Vec<ParamId> = store.ids().filter(|&id| id == z || store.name(id).starts_with("rgconv")).collect();
        let r = check_param_gradients(&store, &rg_ids, usize::MAX, |tape, s| {
            let zv = tape.param(s, z)?;
            let out = rg.forward(tape, s, &graph, zv)?;
            weighted_sum(tape, out, seed)
        })?;
        checks.push(Check::within(format!("rgconv seed {seed} ({} entries)", r.checked), r.max_rel_err, GRADCHECK_TOL));

        for (i, layer) in grmps.iter().enumerate() {
            let prefix = format!("grmp{i}.");
            let ids: Vec<ParamId> = store.ids().filter(|&id| id == z || store.name(id).starts_with(&prefix)).collect();
            let r = check_param_gradients(&store, &ids, usize::MAX, |tape, s| {
                let zv = tape.param(s, z)?;
                let out = layer.forward(tape, s, &graph, zv)?;
                weighted_sum(tape, out, seed)
            })?;
            checks.push(Check::within(
                format!("grmp {:?} seed {seed} ({} entries)", layer.variant, r.checked),
                r.max_rel_err,
                GRADCHECK_TOL,
            ));
        }
    }
    Ok(checks)
}

/// Instrumented FLOPs of one forward pass, total and per phase.
fn counted<F>(f: F) -> Result<(u64, Vec<u64>)>
where
    F: FnOnce(&mut Tape<f32>) -> Result<()>,
{
    let mut tape = Tape::with_counter(OpCounter::without_bias());
    f(&mut tape)?;
    let c = tape.counter();
    Ok((c.total(), c.phases().iter().map(|&(_, n)| n).collect()))
}

pub fn count_rgconv(graph: &Arc<RelGraph>, channels: usize) -> Result<(u64, Vec<u64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let layer = RgConv::new(&mut store, &mut rng, "rgconv", channels, graph.num_relations())?;
    counted(|tape| {
        let z = tape.constant(Tensor::ones(vec![graph.num_nodes(), channels]))?;
        layer.forward(tape, &store, graph, z).map(drop)
    })
}

pub fn count_grmp(graph: &Arc<RelGraph>, channels: usize, variant: GrmpVariant) -> Result<(u64, Vec<u64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let layer = Grmp::new(&mut store, &mut rng, "grmp", channels, graph.num_relations(), variant)?;
    counted(|tape| {
        let z = tape.constant(Tensor::ones(vec![graph.num_nodes(), channels]))?;
        layer.forward(tape, &store, graph, z).map(drop)
    })
}

/// The configuration grid of the exactness checks:
/// `(relations, in-degree, nodes, channels)`.
pub fn flops_grid() -> Vec<(usize, usize, usize, usize)> {
    let mut grid = Vec::new();
    for r in [1, 2, 4, 7, 9] {
        for d in [1, 2, 4] {
            for v in [8, 64] {
                for c in [4, 16, 64] {
                    grid.push((r, d, v, c));
                }
            }
        }
    }
    grid
}

fn flops_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let k = match opts.fault {
        Some(Fault::GrmpConstant) => GRMP_PER_RELATION + 1,
        None => GRMP_PER_RELATION,
    };
    let grid = flops_grid();
    let mut bad = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for &(r, d, v, c) in &grid {
        let g = Arc::new(regular_graph(r, d, v)?);
        let p = CostParams::new(r as u64, d as f64, v as u64, c as u64);
        let (total, steps) = count_rgconv(&g, c)?;
        if total != rgconv_flops(&p) {
            bad[0].push(format!("R={r} d={d} V={v} C={c}: counted {total}, formula {}", rgconv_flops(&p)));
        }
        if steps != rgconv_breakdown(&p).steps {
            bad[1].push(format!("R={r} d={d} V={v} C={c}: steps {steps:?}"));
        }
        let (total, steps) = count_grmp(&g, c, GrmpVariant::default())?;
        let expected = grmp_flops_with_constant(&p, k)?;
        if total != expected {
            bad[2].push(format!("R={r} d={d} V={v} C={c}: counted {total}, formula {expected}"));
        }
        if steps != grmp_breakdown(&p)?.steps {
            bad[3].push(format!("R={r} d={d} V={v} C={c}: steps {steps:?}"));
        }
    }
    let names = ["rgconv total", "rgconv per step", "grmp total", "grmp per step"];
    let mut checks: Vec<Check> = names
        .iter()
        .zip(&bad)
        .map(|(name, b)| {
            let detail = match b.first() {
                None => format!("{} configurations exact", grid.len()),
                Some(first) => format!("{} of {} differ, first {first}", b.len(), grid.len()),
            };
            Check::new(*name, b.is_empty(), detail)
        })
        .collect();

    // one more unit-degree relation, counted layer by layer at every stage
    let arch = ArchCost::eurnet_t(224);
    let mut mismatches = Vec::new();
    for (s, (grmp_m, rg_m)) in arch.stages.iter().zip(arch.marginal_costs()) {
        let (v, c) = (s.num_nodes as usize, s.channels as usize);
        let a = count_grmp(&Arc::new(regular_graph(2, 1, v)?), c, GrmpVariant::default())?.0;
        let b = count_grmp(&Arc::new(regular_graph(3, 1, v)?), c, GrmpVariant::default())?.0;
        let expected = s.depth * (2 + k) * s.num_nodes * s.channels;
        if s.depth * (b - a) != expected || grmp_m != expected || grmp_m >= rg_m {
            mismatches.push(format!("V={v} C={c}: counted {}, expected {expected}, rgconv {rg_m}", s.depth * (b - a)));
        }
    }
    checks.push(Check::new(
        "marginal relation cost per stage",
        mismatches.is_empty(),
        mismatches.first().cloned().unwrap_or_else(|| "GRMP adds 9VC per layer, below RGConv".into()),
    ));

    let rows = sweep_knn_relations(&arch, 1..=24)?;
    let step: u64 = arch.stages.iter().map(|s| s.depth * (2 + k) * s.num_nodes * s.channels).sum();
    let linear = rows.windows(2).all(|w| w[1].grmp_flops - w[0].grmp_flops == step);
    // per layer GRMP − RGConv = (7 − 2C)KVC + 4VC² − VC, negative from K = 3 at C ≥ 96
    let below = rows.iter().filter(|r| r.k >= 3).all(|r| r.grmp_flops < r.rgconv_flops);
    checks.push(Check::new(
        "relation sweep K = 1..24",
        linear && below && rows.len() == 24,
        format!("GRMP step {step} per relation, constant: {linear}; below RGConv for K ≥ 3: {below}"),
    ));
    Ok(checks)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// True if no distance of the chain lies within `gap` of the radius, and
/// the medium rank groups of every residue are separated by at least `gap`
/// from the next candidate.
pub fn chain_is_generic(chain: &ProteinChain, cfg: &ProteinGraphConfig, gap: f64) -> bool {
    let l = chain.len();
    for v in 0..l {
        for u in 0..l {
            if u != v && (dist(chain.coords[u], chain.coords[v]) - cfg.radius).abs() < gap {
                return false;
            }
        }
        let ranked = crate::graphbuild::protein::medium_ranking(chain, v, cfg.medium_min_seq, cfg.radius);
        let d: Vec<f64> = ranked.iter().map(|&u| dist(chain.coords[u], chain.coords[v])).collect();
        for cut in [cfg.medium_k, 2 * cfg.medium_k] {
            if cut > 0 && cut < d.len() && d[cut] - d[cut - 1] < gap {
                return false;
            }
        }
    }
    true
}

/// A random-walk chain with 3.8 Å steps, redrawn until it is generic for
/// `cfg`.
pub fn random_chain<R: Rng + ?Sized>(rng: &mut R, len: usize, cfg: &ProteinGraphConfig) -> Result<ProteinChain> {
    for _ in 0..1000 {
        let mut coords = vec![[0.0; 3]];
        while coords.len() < len {
            let d: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let p = *coords.last().expect("nonempty");
            coords.push(std::array::from_fn(|i| p[i] + 3.8 * d[i] / n));
        }
        let residues = (0..len).map(|_| rng.random_range(0..20)).collect();
        let chain = ProteinChain::new(residues, coords)?;
        if chain_is_generic(&chain, cfg, GENERIC_GAP) {
            return Ok(chain);
        }
    }
    Err(Error::Contract("no generic chain found in 1000 draws".into()))
}

/// A uniformly random rotation, composed with a reflection half of the
/// time, followed by a translation of up to 50 Å per axis.
pub fn random_rigid_motion<R: Rng + ?Sized>(rng: &mut R) -> ([[f64; 3]; 3], [f64; 3]) {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let mut m = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ];
    if rng.random_bool(0.5) {
        for row in &mut m {
            row[0] = -row[0];
        }
    }
    let t = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
    (m, t)
}

pub fn apply_motion(chain: &ProteinChain, m: &[[f64; 3]; 3], t: &[f64; 3]) -> Result<ProteinChain> {
    let coords = chain
        .coords
        .iter()
        .map(|p| std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + t[i]))
        .collect();
    ProteinChain::new(chain.residues.clone(), coords)
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn e3_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cfg = ProteinEncoderConfig { num_layers: 2, hidden_dim: 8, num_tasks: 3, ..Default::default() };
    let chain = random_chain(&mut rng, 40, &cfg.graph)?;
    let mut store = ParamStore::<f64>::new();
    let enc = ProteinEncoder::new(&mut store, &mut rng, cfg)?;
    randomize_params(&mut store, &mut rng, 0.5);
    let represent = |c: &ProteinChain| -> Result<(Vec<Edge>, Vec<f64>)> {
        let pg = enc.build_graph(c)?;
        let mut tape = Tape::new();
        let out = enc.forward_with_graph(&mut tape, &store, c, &pg)?;
        Ok((pg.graph.edges().collect(), tape.value(out.representation).to_f64_vec()))
    };
    let (edges0, rep0) = represent(&chain)?;
    let mut edge_failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..opts.e3_transforms {
        let (m, t) = random_rigid_motion(&mut rng);
        let (edges, rep) = represent(&apply_motion(&chain, &m, &t)?)?;
        edge_failures += usize::from(edges != edges0);
        worst = worst.max(max_rel_diff(&rep, &rep0));
    }
    Ok(vec![
        Check::new(
            format!("protein graph under {} rigid motions", opts.e3_transforms),
            edge_failures == 0,
            format!("{} edges, {edge_failures} transforms changed the edge set", edges0.len()),
        ),
        Check::within(format!("representation under {} rigid motions", opts.e3_transforms), worst, E3_TOL),
    ])
}

/// `max |a − b| / max |b|`.
fn normwise_rel(a: &Tensor<f32>, b: &Tensor<f64>) -> f64 {
    max_rel_diff(&a.to_f64_vec(), b.data())
}

fn oracle_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..5 {
        let n = rng.random_range(1..=16);
        let g = Arc::new(random_graph(&mut rng, n, 3, 3 * n)?);
        let z: Tensor<f64> = random_tensor(&mut rng, vec![n, 5], 1.0);
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone())?;
        let agg = tape.rel_aggregate(&g, zv)?;
        worst = worst.max(tape.value(agg).max_abs_diff(&oracles::dense_rel_aggregate(&g, &z)));
    }
    checks.push(Check::within("aggregation vs dense adjacency", worst, 1e-12));

    let (mut rg_err, mut grmp_err, mut ffn_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..5 {
        let g = Arc::new(random_graph(&mut rng, 12, 4, 40)?);
        let c = 8;
        let mut store = ParamStore::<f32>::new();
        let rg = RgConv::new(&mut store, &mut rng, "rgconv", c, 4)?;
        let grmps = grmp_variants()
            .into_iter()
            .chain([GrmpVariant { gating: Gating::Add, ..GrmpVariant::default() }])
            .enumerate()
            .map(|(i, v)| Grmp::new(&mut store, &mut rng, &format!("grmp{i}"), c, 4, v))
            .collect::<Result<Vec<_>>>()?;
        let ffn = Ffn::new(&mut store, &mut rng, "ffn", c, 4)?;
        randomize_params(&mut store, &mut rng, 0.5);
        let z: Tensor<f32> = random_tensor(&mut rng, vec![12, c], 1.0);
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone())?;
        let out = rg.forward(&mut tape, &store, &g, zv)?;
        rg_err = rg_err.max(normwise_rel(tape.value(out), &oracles::rgconv_loop(&rg, &store, &g, &z)));
        for layer in &grmps {
            let out = layer.forward(&mut tape, &store, &g, zv)?;
            grmp_err = grmp_err.max(normwise_rel(tape.value(out), &oracles::grmp_loop(layer, &store, &g, &z)));
        }
        let out = ffn.forward(&mut tape, &store, zv)?;
        ffn_err = ffn_err.max(normwise_rel(tape.value(out), &oracles::ffn_loop(&ffn.fc1, &ffn.fc2, &store, &z)));
    }
    checks.push(Check::within("rgconv vs per-node loop (32-bit)", rg_err, LAYER_ORACLE_TOL));
    checks.push(Check::within("grmp variants vs per-node loop (32-bit)", grmp_err, LAYER_ORACLE_TOL));
    checks.push(Check::within("feed-forward vs row loop (32-bit)", ffn_err, LAYER_ORACLE_TOL));

    let mut image_ok = true;
    for (h, w, quantized) in [(8, 8, false), (8, 8, true), (6, 10, true), (2, 2, false)] {
        let mut f: Tensor<f64> = random_tensor(&mut rng, vec![h * w, 3], 1.0);
        if quantized {
            f = f.map(|x| x.round());
        }
        let grid = PatchGrid::new(h, w, f)?;
        for k in [0, 1, 5, 12, h * w] {
            let fast: BTreeSet<Edge> = image_medium_edges(&grid, k).into_iter().collect();
            image_ok &= fast == oracles::image_medium_brute(&grid, k);
        }
    }
    checks.push(Check::new("image medium edges vs full sort", image_ok, "grids with and without tied features"));

    let mut protein_ok = true;
    for (len, quantized) in [(40, false), (30, true), (8, false)] {
        let cfg = ProteinGraphConfig::default();
        let mut chain = random_chain(&mut rng, len, &ProteinGraphConfig { radius: 0.0, ..cfg })?;
        if quantized {
            for p in &mut chain.coords {
                *p = p.map(|x| (x / 2.0).round() * 2.0);
            }
        }
        let pg = protein_edges(&chain, &cfg)?;
        let medium = pg.registry.ids_in(Range::Medium);
        let fast: BTreeSet<Edge> = pg
            .graph
            .edges()
            .filter_map(|e| medium.iter().position(|&m| m == e.rel).map(|i| Edge::new(e.src, e.dst, i)))
            .collect();
        protein_ok &= fast == oracles::protein_medium_brute(&chain, &cfg);
    }
    checks.push(Check::new("protein medium edges vs full sort", protein_ok, "chains with and without tied distances"));

    let mut line_ok = true;
    for _ in 0..5 {
        let n = rng.random_range(2..=8);
        let g = random_graph(&mut rng, n, 2, 3 * n)?;
        let mut coords: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        // a repeated position gives zero-length displacements
        coords[n - 1] = coords[0];
        let ct = Tensor::from_rows(&coords.iter().map(|p| p.to_vec()).collect::<Vec<_>>())?;
        for include_reverse in [true, false] {
            let o = LineGraphOptions { num_bins: 8, include_reverse };
            let fast: BTreeSet<Edge> = build_line_graph::<f64>(&g, &ct, o)?.edges().collect();
            line_ok &= fast == oracles::line_graph_brute(&g, &coords, o);
        }
    }
    checks.push(Check::new("line graph vs pair enumeration", line_ok, "with and without reverse edges"));

    let mut merge_ok = true;
    for (h, w) in [(2, 2), (4, 6), (8, 8)] {
        let z: Tensor<f64> = random_tensor(&mut rng, vec![h * w, 3], 1.0);
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone())?;
        let parts = PatchMerging::gather_indices(h, w)?
            .iter()
            .map(|ix| tape.gather_rows(zv, ix))
            .collect::<Result<Vec<_>>>()?;
        let cat = tape.concat_cols(&parts)?;
        merge_ok &= tape.value(cat) == &oracles::patch_merge_gather(&z, h, w);
    }
    checks.push(Check::new("patch merging gather order", merge_ok, "2x2, 4x6 and 8x8 grids"));

    let mut fmax_err = 0.0f64;
    let mut rank_ok = true;
    for _ in 0..10 {
        let (p, t) = (rng.random_range(1..8), rng.random_range(1..6));
        let scores: Vec<Vec<f64>> =
            (0..p).map(|_| (0..t).map(|_| (rng.random_range(0.0..1.0f64) * 100.0).round() / 100.0).collect()).collect();
        let labels: Vec<Vec<bool>> = (0..p).map(|_| (0..t).map(|_| rng.random_bool(0.4)).collect()).collect();
        let st = Tensor::from_rows(&scores)?;
        let lt = Tensor::from_rows(
            &labels.iter().map(|r| r.iter().map(|&b| f64::from(u8::from(b))).collect()).collect::<Vec<_>>(),
        )?;
        let grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
        fmax_err = fmax_err.max((fmax(&st, &lt)? - oracles::fmax_sweep(&scores, &labels, &grid)).abs());

        let cand: Vec<f64> = (0..20).map(|_| f64::from(rng.random_range(0..5u8))).collect();
        let target = rng.random_range(0..20);
        let filtered: Vec<usize> = (0..20).filter(|&e| e != target && rng.random_bool(0.3)).collect();
        let fast = filtered_rank(&cand, target, |e| filtered.contains(&e))?;
        rank_ok &= fast == oracles::rank_by_sorting(&cand, target, &filtered);
    }
    checks.push(Check::within("fmax vs threshold sweep", fmax_err, 1e-12));
    checks.push(Check::new("filtered rank vs sorting", rank_ok, "tied and filtered candidates"));

    let theta0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let cfg = OptimizerConfig::default();
    let mut store = ParamStore::<f64>::new();
    let id = store.add("theta", Tensor::from_f64(vec![2, 3], &theta0)?)?;
    let mut opt = OptimizerState::new(&store, cfg);
    let lr = 0.05;
    let expected = oracles::adamw_reference(&theta0, &grads, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut adam_err = 0.0f64;
    for (g, want) in grads.iter().zip(&expected) {
        opt.step(&mut store, &[(id, Tensor::from_f64(vec![2, 3], g)?)], lr)?;
        adam_err = adam_err.max(max_rel_diff(&store.get(id).to_f64_vec(), want));
    }
    checks.push(Check::within("AdamW vs elementwise reference", adam_err, 1e-12));
    Ok(checks)
}
