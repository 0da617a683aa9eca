use std::sync::Arc;

use rayon::prelude::*;

use super::counter::{OpCounter, OpKind};
use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::relgraph::RelGraph;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Hadamard(Var, Var),
    HadamardRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    ExpandRows(Var),
    ExpandCols(Var),
    Reshape(Var),
    ColBlock { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { src: Var, index: Vec<usize> },
    SumAll(Var),
    MeanRows(Var),
    SumRows(Var),
    RelAggregate { src: Var, graph: Arc<RelGraph> },
    RelBias { x: Var, bias: Var, graph: Arc<RelGraph> },
    DepthwiseConv { x: Var, kernel: Var, geom: ConvGeom },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, normed: Vec<T>, inv_std: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    BceWithLogits { logits: Var, targets: Vec<T>, weights: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation: values, the operations that produced them, and
/// the FLOPs counter for the forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    counter: OpCounter,
    params: Vec<(Var, ParamId)>,
}

/// Gradients of a scalar with respect to every recorded value that
/// requires a gradient.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or an all-zero tensor of `like`'s shape when the
    /// value did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_2d<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::dim(op, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn col_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (g.rows(), g.cols());
    let mut out = vec![T::zero(); n];
    for i in 0..m {
        for (o, &v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::new(vec![1, n], out).expect("column sums")
}

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::cst(0.5);
    half * x * (T::one() + (x * T::cst(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::cst(0.5);
    let cdf = half * (T::one() + (x * T::cst(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::cst(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_counter(OpCounter::new())
    }

    pub fn with_counter(counter: OpCounter) -> Self {
        Self { nodes: Vec::new(), counter, params: Vec::new() }
    }

    pub fn counter(&self) -> &OpCounter {
        &self.counter
    }

    pub fn counter_mut(&mut self) -> &mut OpCounter {
        &mut self.counter
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Records a parameter from `store` as a gradient-tracking leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let v = self.leaf(store.get(id).clone(), true)?;
        self.params.push((v, id));
        Ok(v)
    }

    /// Gradients of every parameter recorded with [`Tape::param`], summed
    /// over repeated recordings of the same parameter.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = Vec::new();
        for &(v, id) in &self.params {
            let g = grads.get_or_zeros(v, self.value(v));
            if let Some((_, acc)) = out.iter_mut().find(|(pid, _)| *pid == id) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            } else {
                out.push((id, g));
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d("matmul", self.value(a))?;
        let (k2, n) = check_2d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.counter.record(OpKind::MatMul, 2 * (m * n * k) as u64);
        let rg = self.rg(&[a, b]);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// Elementwise product. `b` may also be a `1×n` row broadcast over the
    /// rows of an `m×n` matrix `a`.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let rg = self.rg(&[a, b]);
        if sa == sb {
            let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
            self.counter.record(OpKind::Hadamard, self.value(a).len() as u64);
            return self.push("hadamard", Tensor::new(sa, data)?, Op::Hadamard(a, b), rg);
        }
        if sa.len() == 2 && sb.len() == 2 && sb[0] == 1 && sb[1] == sa[1] {
            let n = sa[1];
            let brow = self.value(b).data().to_vec();
            let data = self.value(a).data().iter().enumerate().map(|(i, &x)| x * brow[i % n]).collect();
            self.counter.record(OpKind::Hadamard, self.value(a).len() as u64);
            return self.push("hadamard", Tensor::new(sa, data)?, Op::HadamardRow(a, b), rg);
        }
        Err(Error::dim("hadamard", format!("{sa:?} vs {sb:?}")))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.counter.record(OpKind::Add, out.len() as u64);
        let rg = self.rg(&[a, b]);
        self.push("add", out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.counter.record(OpKind::Add, out.len() as u64);
        let rg = self.rg(&[a, b]);
        self.push("sub", out, Op::Sub(a, b), rg)
    }

    /// Adds a `1×n` bias row to every row of `a`. Counted as [`OpKind::Bias`].
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = check_2d("add_bias", self.value(a))?;
        if self.shape(bias) != [1, n] {
            return Err(Error::dim("add_bias", format!("bias {:?} for {n} columns", self.shape(bias))));
        }
        let b = self.value(bias).data().to_vec();
        let out = self.value(a).map(|x| x);
        let data: Vec<T> = out.data().iter().enumerate().map(|(i, &x)| x + b[i % n]).collect();
        self.counter.record(OpKind::Bias, data.len() as u64);
        let rg = self.rg(&[a, bias]);
        self.push("add_bias", Tensor::new(out.shape().to_vec(), data)?, Op::AddBias(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::cst(s);
        let out = self.value(a).map(|x| x * s);
        self.counter.record(OpKind::Scale, out.len() as u64);
        let rg = self.rg(&[a]);
        self.push("scale", out, Op::Scale(a, s), rg)
    }

    /// `1×n -> m×n`, i.e. the outer product `1_m · a`. One multiply per
    /// output element.
    pub fn expand_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let (r, n) = check_2d("expand_rows", self.value(a))?;
        if r != 1 {
            return Err(Error::dim("expand_rows", format!("expected 1 row, got {r}")));
        }
        let row = self.value(a).data().to_vec();
        let data: Vec<T> = (0..m).flat_map(|_| row.iter().copied()).collect();
        self.counter.record(OpKind::Broadcast, (m * n) as u64);
        let rg = self.rg(&[a]);
        self.push("expand_rows", Tensor::new(vec![m, n], data)?, Op::ExpandRows(a), rg)
    }

    /// `m×1 -> m×n`, i.e. the outer product `a · 1_nᵀ`.
    pub fn expand_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let (m, c) = check_2d("expand_cols", self.value(a))?;
        if c != 1 {
            return Err(Error::dim("expand_cols", format!("expected 1 column, got {c}")));
        }
        let col = self.value(a).data().to_vec();
        let data: Vec<T> = col.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        self.counter.record(OpKind::Broadcast, (m * n) as u64);
        let rg = self.rg(&[a]);
        self.push("expand_cols", Tensor::new(vec![m, n], data)?, Op::ExpandCols(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push("reshape", out, Op::Reshape(a), rg)
    }

    /// Columns `start..start + width` of a matrix.
    pub fn col_block(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = check_2d("col_block", self.value(a))?;
        if start + width > n {
            return Err(Error::dim("col_block", format!("{start}+{width} > {n}")));
        }
        let src = self.value(a);
        let data: Vec<T> = (0..m).flat_map(|i| src.row(i)[start..start + width].iter().copied()).collect();
        let rg = self.rg(&[a]);
        self.push("col_block", Tensor::new(vec![m, width], data)?, Op::ColBlock { src: a, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(&p) => check_2d("concat_cols", self.value(p))?.0,
            None => return Err(Error::dim("concat_cols", "no inputs")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = check_2d("concat_cols", self.value(p))?;
            if r != m {
                return Err(Error::dim("concat_cols", format!("row counts {m} vs {r}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.rg(parts);
        self.push("concat_cols", Tensor::new(vec![m, n], data)?, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = match parts.first() {
            Some(&p) => check_2d("concat_rows", self.value(p))?.1,
            None => return Err(Error::dim("concat_rows", "no inputs")),
        };
        let mut m = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = check_2d("concat_rows", self.value(p))?;
            if c != n {
                return Err(Error::dim("concat_rows", format!("column counts {n} vs {c}")));
            }
            m += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        self.push("concat_rows", Tensor::new(vec![m, n], data)?, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Rows of `a` selected by `index` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = check_2d("gather_rows", self.value(a))?;
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            if i >= m {
                return Err(Error::Index { what: "row", index: i, bound: m });
            }
            data.extend_from_slice(self.value(a).row(i));
        }
        let rg = self.rg(&[a]);
        let op = Op::GatherRows { src: a, index: index.to_vec() };
        self.push("gather_rows", Tensor::new(vec![index.len(), n], data)?, op, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.counter.record(OpKind::Reduction, self.value(a).len() as u64);
        let rg = self.rg(&[a]);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Column means, `m×n -> 1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, _) = check_2d("mean_rows", self.value(a))?;
        if m == 0 {
            return Err(Error::dim("mean_rows", "empty input"));
        }
        let s = col_sums(self.value(a));
        let inv = T::one() / T::cst(m as f64);
        let out = s.map(|x| x * inv);
        self.counter.record(OpKind::Reduction, self.value(a).len() as u64);
        let rg = self.rg(&[a]);
        self.push("mean_rows", out, Op::MeanRows(a), rg)
    }

    /// Column sums, `m×n -> 1×n`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        check_2d("sum_rows", self.value(a))?;
        let out = col_sums(self.value(a));
        self.counter.record(OpKind::Reduction, self.value(a).len() as u64);
        let rg = self.rg(&[a]);
        self.push("sum_rows", out, Op::SumRows(a), rg)
    }

    /// Mean-normalized per-relation aggregation: slot `v·|R| + r` of the
    /// `|V||R|×C` output holds `(1/|N_r(v)|) Σ_{u ∈ N_r(v)} z_u`, or zeros
    /// for an empty neighborhood. Counts `2|E|C`.
    pub fn rel_aggregate(&mut self, graph: &Arc<RelGraph>, z: Var) -> Result<Var> {
        let (v, c) = check_2d("rel_aggregate", self.value(z))?;
        if v != graph.num_nodes() {
            return Err(Error::dim("rel_aggregate", format!("{v} feature rows for {} nodes", graph.num_nodes())));
        }
        let slots = graph.num_slots();
        let mut out = vec![T::zero(); slots * c];
        let zd = self.value(z).data();
        out.par_chunks_mut(c.max(1)).enumerate().for_each(|(slot, o)| {
            let w = T::cst(graph.slot_norm(slot));
            for &u in graph.slot_sources(slot) {
                let zu = &zd[u as usize * c..(u as usize + 1) * c];
                for (ov, &x) in o.iter_mut().zip(zu) {
                    *ov += w * x;
                }
            }
        });
        self.counter.record(OpKind::SparseAggregate, 2 * (graph.num_edges() * c) as u64);
        let rg = self.rg(&[z]);
        let op = Op::RelAggregate { src: z, graph: Arc::clone(graph) };
        self.push("rel_aggregate", Tensor::new(vec![slots, c], out)?, op, rg)
    }

    /// Adds the per-relation bias of mean aggregation to `x`: row `v` gains
    /// the bias rows `b_r` of every relation with a non-empty neighborhood at
    /// `v`. Counted as [`OpKind::Bias`].
    pub fn add_rel_bias(&mut self, graph: &Arc<RelGraph>, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = check_2d("add_rel_bias", self.value(bias))?;
        if r != graph.num_relations() {
            return Err(Error::dim("add_rel_bias", format!("{r} bias rows for {} relations", graph.num_relations())));
        }
        let nv = graph.num_nodes();
        if self.shape(x) != [nv, c] {
            return Err(Error::dim("add_rel_bias", format!("input {:?} for [{nv}, {c}]", self.shape(x))));
        }
        let b = self.value(bias);
        let mut out = self.value(x).data().to_vec();
        let mut flops = 0u64;
        for v in 0..nv {
            for rel in 0..r {
                if graph.in_degree(v, rel) > 0 {
                    for (o, &bv) in out[v * c..(v + 1) * c].iter_mut().zip(b.row(rel)) {
                        *o += bv;
                    }
                    flops += c as u64;
                }
            }
        }
        self.counter.record(OpKind::Bias, flops);
        let rg = self.rg(&[x, bias]);
        let op = Op::RelBias { x, bias, graph: Arc::clone(graph) };
        self.push("add_rel_bias", Tensor::new(vec![nv, c], out)?, op, rg)
    }

    /// Same-padded depthwise convolution of an `H×W×C` grid with a `k×k×C`
    /// kernel (cross-correlation). Counts `2·H·W·C·k²`.
    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 || ks.len() != 3 {
            return Err(Error::dim("depthwise_conv2d", format!("x {xs:?}, kernel {ks:?}")));
        }
        if ks[0] != ks[1] {
            return Err(Error::dim("depthwise_conv2d", format!("non-square kernel {ks:?}")));
        }
        if ks[0].is_multiple_of(2) {
            return Err(Error::Config(format!("depthwise kernel size {} must be odd", ks[0])));
        }
        if ks[2] != xs[2] {
            return Err(Error::dim("depthwise_conv2d", format!("channels {} vs {}", xs[2], ks[2])));
        }
        let geom = ConvGeom { h: xs[0], w: xs[1], c: xs[2], k: ks[0] };
        let out = kernels::depthwise_conv(self.value(x).data(), self.value(kernel).data(), geom);
        self.counter.record(OpKind::DepthwiseConv, 2 * (geom.h * geom.w * geom.c * geom.k * geom.k) as u64);
        let rg = self.rg(&[x, kernel]);
        self.push("depthwise_conv2d", Tensor::new(xs, out)?, Op::DepthwiseConv { x, kernel, geom }, rg)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>, kind: OpKind) -> Result<Var> {
        let out = self.value(a).map(f);
        self.counter.record(kind, out.len() as u64);
        let rg = self.rg(&[a]);
        self.push(name, out, op, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary("gelu", a, gelu, Op::Gelu(a), OpKind::Activation)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a), OpKind::Activation)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a), OpKind::Activation)
    }

    /// Row-wise layer normalization with affine `1×n` parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = check_2d("layer_norm", self.value(x))?;
        if self.shape(gamma) != [1, n] || self.shape(beta) != [1, n] {
            return Err(Error::dim("layer_norm", "affine parameters must be 1×n"));
        }
        let eps = T::cst(eps);
        let nf = T::cst(n as f64);
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normed = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                normed[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        self.counter.record(OpKind::Normalization, (m * n) as u64);
        let rg = self.rg(&[x, gamma, beta]);
        let op = Op::LayerNorm { x, gamma, beta, normed, inv_std };
        self.push("layer_norm", Tensor::new(vec![m, n], out)?, op, rg)
    }

    /// Mean softmax cross-entropy of `B×K` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, k) = check_2d("cross_entropy", self.value(logits))?;
        if targets.len() != b {
            return Err(Error::dim("cross_entropy", format!("{} targets for {b} rows", targets.len())));
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); b * k];
        let mut loss = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::Index { what: "class", index: t, bound: k });
            }
            let row = lv.row(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - mx).exp() / z;
            }
            loss += z.ln() + mx - row[t];
        }
        loss = loss / T::cst(b as f64);
        self.counter.record(OpKind::Loss, (b * k) as u64);
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        self.push("cross_entropy", Tensor::scalar(loss), op, rg)
    }

    /// Weighted binary cross-entropy on logits: `Σ_i w_i · bce(x_i, y_i)`.
    /// Normalization is carried by the weights.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        let n = self.value(logits).len();
        if targets.len() != n || weights.len() != n {
            return Err(Error::dim("bce_with_logits", "targets/weights length mismatch"));
        }
        let mut loss = T::zero();
        for ((&x, &y), &w) in self.value(logits).data().iter().zip(targets).zip(weights) {
            let l = x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln();
            loss += w * l;
        }
        self.counter.record(OpKind::Loss, n as u64);
        let rg = self.rg(&[logits]);
        let op = Op::BceWithLogits { logits, targets: targets.to_vec(), weights: weights.to_vec() };
        self.push("bce_with_logits", Tensor::scalar(loss), op, rg)
    }

    /// Reverse pass from a scalar `loss`. The tape is left intact, so it can
    /// be differentiated again.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.shape(loss).to_vec(), vec![T::one()])?);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Like [`Tape::backward`] but consumes the tape.
    pub fn backward_consuming(self, loss: Var) -> Result<(Gradients<T>, OpCounter)> {
        let g = self.backward(loss)?;
        Ok((g, self.counter))
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                if self.requires_grad(a) {
                    let da = kernels::matmul_nt(g.data(), self.value(b).data(), m, k, n);
                    self.acc(grads, a, Tensor::new(vec![m, k], da)?);
                }
                if self.requires_grad(b) {
                    let db = kernels::matmul_tn(self.value(a).data(), g.data(), m, k, n);
                    self.acc(grads, b, Tensor::new(vec![k, n], db)?);
                }
            }
            &Op::Hadamard(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let da: Vec<T> = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                let db: Vec<T> = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                self.acc(grads, a, Tensor::new(va.shape().to_vec(), da)?);
                self.acc(grads, b, Tensor::new(vb.shape().to_vec(), db)?);
            }
            &Op::HadamardRow(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let n = vb.len();
                let da: Vec<T> = g.data().iter().enumerate().map(|(i, &x)| x * vb.data()[i % n]).collect();
                let mut db = vec![T::zero(); n];
                for (i, (&x, &y)) in g.data().iter().zip(va.data()).enumerate() {
                    db[i % n] += x * y;
                }
                self.acc(grads, a, Tensor::new(va.shape().to_vec(), da)?);
                self.acc(grads, b, Tensor::new(vec![1, n], db)?);
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, g.clone());
                self.acc(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, g.clone());
                self.acc(grads, b, g.map(|x| -x));
            }
            &Op::AddBias(a, b) => {
                self.acc(grads, a, g.clone());
                self.acc(grads, b, col_sums(g));
            }
            &Op::Scale(a, s) => self.acc(grads, a, g.map(|x| x * s)),
            &Op::ExpandRows(a) => self.acc(grads, a, col_sums(g)),
            &Op::ExpandCols(a) => {
                let m = g.rows();
                let sums: Vec<T> = (0..m).map(|i| g.row(i).iter().copied().sum()).collect();
                self.acc(grads, a, Tensor::new(vec![m, 1], sums)?);
            }
            &Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                self.acc(grads, a, g.clone().reshape(shape)?);
            }
            &Op::ColBlock { src, start } => {
                let (m, n) = (self.value(src).rows(), self.value(src).cols());
                let w = g.cols();
                let mut d = vec![T::zero(); m * n];
                for i in 0..m {
                    d[i * n + start..i * n + start + w].copy_from_slice(g.row(i));
                }
                self.acc(grads, src, Tensor::new(vec![m, n], d)?);
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let d: Vec<T> = (0..m).flat_map(|i| g.row(i)[offset..offset + w].iter().copied()).collect();
                    self.acc(grads, p, Tensor::new(vec![m, w], d)?);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut row = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    let d = g.data()[row * n..(row + r) * n].to_vec();
                    self.acc(grads, p, Tensor::new(vec![r, n], d)?);
                    row += r;
                }
            }
            Op::GatherRows { src, index } => {
                let (m, n) = (self.value(*src).rows(), self.value(*src).cols());
                let mut d = vec![T::zero(); m * n];
                for (k, &i) in index.iter().enumerate() {
                    for (o, &x) in d[i * n..(i + 1) * n].iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                self.acc(grads, *src, Tensor::new(vec![m, n], d)?);
            }
            &Op::SumAll(a) => {
                let s = g.data()[0];
                self.acc(grads, a, Tensor::full(self.shape(a).to_vec(), s));
            }
            &Op::MeanRows(a) | &Op::SumRows(a) => {
                let (m, n) = (self.value(a).rows(), self.value(a).cols());
                let scale = match node.op {
                    Op::MeanRows(_) => T::one() / T::cst(m as f64),
                    _ => T::one(),
                };
                let d: Vec<T> = (0..m).flat_map(|_| g.data().iter().map(move |&x| x * scale)).collect();
                self.acc(grads, a, Tensor::new(vec![m, n], d)?);
            }
            Op::RelAggregate { src, graph } => {
                let (nv, c) = (self.value(*src).rows(), self.value(*src).cols());
                let mut d = vec![T::zero(); nv * c];
                for slot in 0..graph.num_slots() {
                    let w = T::cst(graph.slot_norm(slot));
                    let gs = g.row(slot);
                    for &u in graph.slot_sources(slot) {
                        let u = u as usize;
                        for (o, &x) in d[u * c..(u + 1) * c].iter_mut().zip(gs) {
                            *o += w * x;
                        }
                    }
                }
                self.acc(grads, *src, Tensor::new(vec![nv, c], d)?);
            }
            Op::RelBias { x, bias, graph } => {
                self.acc(grads, *x, g.clone());
                let (r, c) = (self.value(*bias).rows(), self.value(*bias).cols());
                let mut d = vec![T::zero(); r * c];
                for v in 0..graph.num_nodes() {
                    for rel in 0..r {
                        if graph.in_degree(v, rel) > 0 {
                            for (o, &x) in d[rel * c..(rel + 1) * c].iter_mut().zip(g.row(v)) {
                                *o += x;
                            }
                        }
                    }
                }
                self.acc(grads, *bias, Tensor::new(vec![r, c], d)?);
            }
            &Op::DepthwiseConv { x, kernel, geom } => {
                let (dx, dk) =
                    kernels::depthwise_conv_backward(self.value(x).data(), self.value(kernel).data(), g.data(), geom);
                self.acc(grads, x, Tensor::new(self.shape(x).to_vec(), dx)?);
                self.acc(grads, kernel, Tensor::new(self.shape(kernel).to_vec(), dk)?);
            }
            &Op::Gelu(a) => {
                let d = g.data().iter().zip(self.value(a).data()).map(|(&gv, &x)| gv * gelu_grad(x)).collect();
                self.acc(grads, a, Tensor::new(g.shape().to_vec(), d)?);
            }
            &Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                self.acc(grads, a, Tensor::new(g.shape().to_vec(), d)?);
            }
            &Op::Sigmoid(a) => {
                let d = g.data().iter().zip(node.value.data()).map(|(&gv, &s)| gv * s * (T::one() - s)).collect();
                self.acc(grads, a, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::LayerNorm { x, gamma, beta, normed, inv_std } => {
                let (m, n) = (g.rows(), g.cols());
                let gam = self.value(*gamma).data();
                let nf = T::cst(n as f64);
                let mut dx = vec![T::zero(); m * n];
                let mut dg = vec![T::zero(); n];
                let mut db = vec![T::zero(); n];
                for i in 0..m {
                    let gr = g.row(i);
                    let h = &normed[i * n..(i + 1) * n];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..n {
                        let dh = gr[j] * gam[j];
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                        dg[j] += gr[j] * h[j];
                        db[j] += gr[j];
                    }
                    mean_dh = mean_dh / nf;
                    mean_dh_h = mean_dh_h / nf;
                    for j in 0..n {
                        let dh = gr[j] * gam[j];
                        dx[i * n + j] = inv_std[i] * (dh - mean_dh - h[j] * mean_dh_h);
                    }
                }
                self.acc(grads, *x, Tensor::new(vec![m, n], dx)?);
                self.acc(grads, *gamma, Tensor::new(vec![1, n], dg)?);
                self.acc(grads, *beta, Tensor::new(vec![1, n], db)?);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (b, k) = (self.value(*logits).rows(), self.value(*logits).cols());
                let s = g.data()[0] / T::cst(b as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * s).collect();
                for (i, &t) in targets.iter().enumerate() {
                    d[i * k + t] -= s;
                }
                self.acc(grads, *logits, Tensor::new(vec![b, k], d)?);
            }
            Op::BceWithLogits { logits, targets, weights } => {
                let s = g.data()[0];
                let d = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&x, &y), &w)| s * w * (sigmoid(x) - y))
                    .collect();
                self.acc(grads, *logits, Tensor::new(self.shape(*logits).to_vec(), d)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::gradcheck::{check_gradients, weighted_sum};

    fn rand_t(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn m(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let mut t = Tape::<f64>::new();
        let i = t.constant(Tensor::identity(2)).unwrap();
        let b = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let c = t.matmul(i, b).unwrap();
        assert_eq!(t.value(c), t.value(b));

        let mut t = Tape::<f64>::new();
        let a = t.constant(m(&[&[1.0, 2.0]])).unwrap();
        let b = t.constant(m(&[&[3.0], &[4.0]])).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);
        assert_eq!(t.counter().total(), 4);
        assert!(matches!(t.matmul(a, a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (rand_t(&mut rng, vec![3, 3]), rand_t(&mut rng, vec![3, 3]));
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a.clone()).unwrap(), t.constant(b.clone()).unwrap());
        let c = t.matmul(va, vb).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..3).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((t.value(c).get(i, j) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn identity_associativity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tape::<f64>::new();
        let a = t.constant(rand_t(&mut rng, vec![4, 5])).unwrap();
        let b = t.constant(rand_t(&mut rng, vec![5, 3])).unwrap();
        let i = t.constant(Tensor::identity(5)).unwrap();
        let ai = t.matmul(a, i).unwrap();
        let left = t.matmul(ai, b).unwrap();
        let ib = t.matmul(i, b).unwrap();
        let right = t.matmul(a, ib).unwrap();
        let plain = t.matmul(a, b).unwrap();
        assert_eq!(t.value(left), t.value(plain));
        assert_eq!(t.value(right), t.value(plain));
    }

    #[test]
    fn hadamard_cases() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(m(&[&[2.0, 3.0]])).unwrap();
        let b = t.constant(m(&[&[4.0, 5.0]])).unwrap();
        let c = t.hadamard(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[8.0, 15.0]);
        assert_eq!(t.counter().get(OpKind::Hadamard), 2);
        let ones = t.constant(Tensor::ones(vec![1, 2])).unwrap();
        let same = t.hadamard(a, ones).unwrap();
        assert_eq!(t.value(same), t.value(a));
        let z = t.constant(Tensor::zeros(vec![1, 2])).unwrap();
        let zero = t.hadamard(z, b).unwrap();
        assert!(t.value(zero).data().iter().all(|&x| x == 0.0));
        let wide = t.constant(Tensor::zeros(vec![1, 3])).unwrap();
        assert!(matches!(t.hadamard(a, wide), Err(Error::Dimension { .. })));
    }

    #[test]
    fn hadamard_broadcasts_a_row() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let r = t.constant(m(&[&[10.0, 100.0]])).unwrap();
        let c = t.hadamard(a, r).unwrap();
        assert_eq!(t.value(c).data(), &[10.0, 200.0, 30.0, 400.0]);
    }

    fn naive_dw(x: &Tensor<f64>, k: &Tensor<f64>) -> Vec<f64> {
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let ks = k.shape()[0] as isize;
        let pad = ks / 2;
        let mut out = vec![0.0; h * w * c];
        for i in 0..h as isize {
            for j in 0..w as isize {
                for ch in 0..c {
                    let mut s = 0.0;
                    for di in 0..ks {
                        for dj in 0..ks {
                            let (si, sj) = (i + di - pad, j + dj - pad);
                            if si >= 0 && sj >= 0 && si < h as isize && sj < w as isize {
                                s += x.data()[(si as usize * w + sj as usize) * c + ch]
                                    * k.data()[(di * ks + dj) as usize * c + ch];
                            }
                        }
                    }
                    out[(i as usize * w + j as usize) * c + ch] = s;
                }
            }
        }
        out
    }

    #[test]
    fn depthwise_conv_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_t(&mut rng, vec![4, 4, 2]);
        let mut delta = Tensor::<f64>::zeros(vec![3, 3, 2]);
        delta.data_mut()[4 * 2] = 1.0;
        delta.data_mut()[4 * 2 + 1] = 1.0;
        let mut t = Tape::new();
        let vx = t.constant(x.clone()).unwrap();
        let vd = t.constant(delta).unwrap();
        let y = t.depthwise_conv2d(vx, vd).unwrap();
        assert_eq!(t.value(y), &x);
        assert_eq!(t.counter().get(OpKind::DepthwiseConv), 2 * 4 * 4 * 2 * 9);

        let mut t = Tape::<f64>::new();
        let one = t.constant(Tensor::full(vec![1, 1, 1], 2.5)).unwrap();
        let k = t.constant(Tensor::ones(vec![3, 3, 1])).unwrap();
        let y = t.depthwise_conv2d(one, k).unwrap();
        assert_eq!(t.value(y).data(), &[2.5]);

        let k = rand_t(&mut rng, vec![3, 3, 2]);
        let mut t = Tape::<f32>::new();
        let vx = t.constant(x.cast()).unwrap();
        let vk = t.constant(k.cast()).unwrap();
        let y = t.depthwise_conv2d(vx, vk).unwrap();
        for (a, b) in t.value(y).data().iter().zip(naive_dw(&x, &k)) {
            assert!((*a as f64 - b).abs() <= 1e-6);
        }

        let even = t.constant(Tensor::ones(vec![2, 2, 2])).unwrap();
        assert!(matches!(t.depthwise_conv2d(vx, even), Err(Error::Config(_))));
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a0 = rand_t(&mut rng, vec![3, 2]);
        let mut t = Tape::new();
        let a = t.leaf(a0.clone(), true).unwrap();
        let s = t.sum_all(a).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &Tensor::ones(vec![3, 2]));

        let aa = t.hadamard(a, a).unwrap();
        let s2 = t.sum_all(aa).unwrap();
        let g = t.backward(s2).unwrap();
        assert_eq!(g.get(a).unwrap(), &a0.map(|x| 2.0 * x));
        // the tape stays usable after a reverse pass
        let again = t.backward(s2).unwrap();
        assert_eq!(again.get(a), g.get(a));
    }

    #[test]
    fn backward_needs_a_scalar() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::ones(vec![2, 2]), true).unwrap();
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut t = Tape::<f32>::new();
        let a = t.leaf(Tensor::full(vec![1, 1], 1e30), true).unwrap();
        assert!(matches!(t.hadamard(a, a), Err(Error::NonFinite { op: "hadamard" })));
        assert!(t.leaf(Tensor::full(vec![1], f32::NAN), false).is_err());
    }

    #[test]
    fn counter_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut t = Tape::<f32>::new();
            let a = t.constant(rand_t(&mut rng, vec![5, 4]).cast()).unwrap();
            let b = t.constant(rand_t(&mut rng, vec![4, 3]).cast()).unwrap();
            let c = t.matmul(a, b).unwrap();
            let d = t.gelu(c).unwrap();
            let e = t.sum_all(d).unwrap();
            let _ = t.backward(e).unwrap();
            t.counter().per_op().clone()
        };
        assert_eq!(run(), run());
    }

    fn check(seed_base: u64, shapes: &[Vec<usize>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) {
        for seed in seed_base..seed_base + 5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<_> = shapes.iter().map(|s| rand_t(&mut rng, s.clone())).collect();
            let report = check_gradients(&inputs, |t, v| {
                let out = f(t, v)?;
                weighted_sum(t, out, seed)
            })
            .unwrap();
            assert!(report.max_rel_err < 1e-6, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn gradients_of_linear_ops() {
        check(10, &[vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1]));
        check(20, &[vec![3, 4], vec![3, 4]], |t, v| t.hadamard(v[0], v[1]));
        check(30, &[vec![3, 4], vec![1, 4]], |t, v| t.hadamard(v[0], v[1]));
        check(40, &[vec![3, 4], vec![3, 4]], |t, v| t.add(v[0], v[1]));
        check(50, &[vec![3, 4], vec![3, 4]], |t, v| t.sub(v[0], v[1]));
        check(60, &[vec![3, 4], vec![1, 4]], |t, v| t.add_bias(v[0], v[1]));
        check(70, &[vec![3, 4]], |t, v| t.scale(v[0], -1.7));
    }

    #[test]
    fn gradients_of_shape_ops() {
        check(100, &[vec![1, 4]], |t, v| t.expand_rows(v[0], 3));
        check(110, &[vec![4, 1]], |t, v| t.expand_cols(v[0], 3));
        check(120, &[vec![3, 4]], |t, v| t.reshape(v[0], vec![2, 6]));
        check(130, &[vec![3, 5]], |t, v| t.col_block(v[0], 1, 3));
        check(140, &[vec![3, 2], vec![3, 3]], |t, v| t.concat_cols(&[v[0], v[1], v[0]]));
        check(150, &[vec![2, 3], vec![1, 3]], |t, v| t.concat_rows(&[v[0], v[1]]));
        check(160, &[vec![4, 3]], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3]));
        check(170, &[vec![4, 3]], |t, v| t.mean_rows(v[0]));
        check(180, &[vec![4, 3]], |t, v| t.sum_rows(v[0]));
    }

    #[test]
    fn gradients_of_nonlinear_ops() {
        check(200, &[vec![3, 4]], |t, v| t.gelu(v[0]));
        check(210, &[vec![3, 4]], |t, v| t.relu(v[0]));
        check(220, &[vec![3, 4]], |t, v| t.sigmoid(v[0]));
        check(230, &[vec![3, 5], vec![1, 5], vec![1, 5]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5));
        check(240, &[vec![4, 4, 3], vec![3, 3, 3]], |t, v| t.depthwise_conv2d(v[0], v[1]));
        check(250, &[vec![3, 4]], |t, v| t.cross_entropy(v[0], &[1, 3, 0]));
        check(260, &[vec![2, 3]], |t, v| {
            let y = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
            let w = [0.5, 0.1, 0.2, 0.3, 0.25, 1.0];
            t.bce_with_logits(v[0], &y, &w)
        });
    }

    #[test]
    fn gradients_of_relational_ops() {
        let g = Arc::new(
            RelGraph::from_edges(4, 2, &[(0, 1, 0), (2, 1, 0), (3, 1, 1), (1, 0, 1), (1, 2, 0), (3, 3, 0)]).unwrap(),
        );
        let g2 = Arc::clone(&g);
        check(300, &[vec![4, 3]], move |t, v| t.rel_aggregate(&g, v[0]));
        check(310, &[vec![4, 3], vec![2, 3]], move |t, v| t.add_rel_bias(&g2, v[0], v[1]));
    }

    #[test]
    fn losses_match_closed_forms() {
        let mut t = Tape::<f64>::new();
        let l = t.constant(m(&[&[0.0, 0.0]])).unwrap();
        let ce = t.cross_entropy(l, &[1]).unwrap();
        assert!((t.value(ce).data()[0] - 2f64.ln()).abs() < 1e-15);
        let x = t.constant(m(&[&[0.0, 3.0]])).unwrap();
        let b = t.bce_with_logits(x, &[1.0, 0.0], &[1.0, 2.0]).unwrap();
        let want = 2f64.ln() + 2.0 * (1.0 + 3f64.exp()).ln();
        assert!((t.value(b).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn param_gradients_accumulate_over_reuse() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::full(vec![1, 2], 3.0)).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, w).unwrap();
        let b = t.param(&store, w).unwrap();
        let p = t.hadamard(a, b).unwrap();
        let s = t.sum_all(p).unwrap();
        let g = t.backward(s).unwrap();
        let pg = t.param_grads(&g);
        assert_eq!(pg.len(), 1);
        assert_eq!(pg[0].1.data(), &[6.0, 6.0]);
    }
}
