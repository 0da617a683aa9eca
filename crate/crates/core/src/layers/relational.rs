use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Linear;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::relgraph::RelGraph;
use crate::tensor::{Scalar, Tape, Var};

/// Relational graph convolution with one dense kernel per relation:
///
/// `z'_v = z_v W_self + b_self + Σ_r [N_r(v) ≠ ∅] (mean_{u ∈ N_r(v)} z_u W_r + b_r)`
#[derive(Clone, Debug)]
pub struct RgConv {
    pub channels: usize,
    pub num_relations: usize,
    /// The `W_r` stacked vertically: `|R|·C × C`.
    pub w_rel: ParamId,
    /// One bias row per relation: `|R| × C`.
    pub b_rel: ParamId,
    pub w_self: ParamId,
    pub b_self: ParamId,
}

impl RgConv {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        num_relations: usize,
    ) -> Result<Self> {
        let c = channels;
        Ok(Self {
            channels,
            num_relations,
            w_rel: store.add_trunc_normal(format!("{name}.w_rel"), vec![num_relations * c, c], rng)?,
            b_rel: store.add_zeros(format!("{name}.b_rel"), vec![num_relations, c])?,
            w_self: store.add_trunc_normal(format!("{name}.w_self"), vec![c, c], rng)?,
            b_self: store.add_zeros(format!("{name}.b_self"), vec![1, c])?,
        })
    }

    /// Aggregate per relation, apply all relation kernels as one
    /// `V × |R|C` by `|R|C × C` product, then add the self-update.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        graph: &Arc<RelGraph>,
        z: Var,
    ) -> Result<Var> {
        let (v, c, r) = (graph.num_nodes(), self.channels, self.num_relations);
        check_inputs(tape, graph, z, c, r)?;
        tape.counter_mut().begin_phase("aggregation");
        let agg = tape.rel_aggregate(graph, z)?;
        tape.counter_mut().begin_phase("relation kernels");
        let flat = tape.reshape(agg, vec![v, r * c])?;
        let w_rel = tape.param(store, self.w_rel)?;
        let msg = tape.matmul(flat, w_rel)?;
        let b_rel = tape.param(store, self.b_rel)?;
        let msg = tape.add_rel_bias(graph, msg, b_rel)?;
        tape.counter_mut().begin_phase("self update");
        let w_self = tape.param(store, self.w_self)?;
        let own = tape.matmul(z, w_self)?;
        let b_self = tape.param(store, self.b_self)?;
        let own = tape.add_bias(own, b_self)?;
        tape.add(msg, own)
    }
}

fn check_inputs<T: Scalar>(tape: &Tape<T>, graph: &RelGraph, z: Var, c: usize, r: usize) -> Result<()> {
    if graph.num_relations() != r {
        return Err(Error::dim(
            "relational layer",
            format!("layer built for {r} relations, graph has {}", graph.num_relations()),
        ));
    }
    if tape.shape(z) != [graph.num_nodes(), c] {
        return Err(Error::dim(
            "relational layer",
            format!("features {:?} for {} nodes × {c} channels", tape.shape(z), graph.num_nodes()),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    /// `z' = z W_self ⊙ z_aggr`
    #[default]
    Gate,
    /// `z' = z W_self + z_aggr`
    Add,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    /// `α(v) = z_v W_α + b_α`, unnormalized.
    #[default]
    Learned,
    /// `α_r(v) = 1/|R|`.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrmpVariant {
    pub gating: Gating,
    pub alpha: AlphaMode,
    pub use_w_in: bool,
    pub use_w_out: bool,
}

impl Default for GrmpVariant {
    fn default() -> Self {
        Self { gating: Gating::Gate, alpha: AlphaMode::Learned, use_w_in: true, use_w_out: true }
    }
}

/// Gated relational message passing:
///
/// `z_aggr_v = W_out(Σ_r α_r(v) · mean_{u ∈ N_r(v)} w_r ⊙ W_in z_u)`,
/// `z'_v = W_self z_v ⊙ z_aggr_v`.
///
/// Parameters disabled by the variant are not allocated.
#[derive(Clone, Debug)]
pub struct Grmp {
    pub channels: usize,
    pub num_relations: usize,
    pub variant: GrmpVariant,
    pub w_in: Option<Linear>,
    pub w_out: Option<Linear>,
    pub w_self: Linear,
    pub w_alpha: Option<Linear>,
    /// The `w_r` laid side by side: `1 × |R|·C`.
    pub w_rel: ParamId,
}

impl Grmp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        num_relations: usize,
        variant: GrmpVariant,
    ) -> Result<Self> {
        if num_relations == 0 {
            return Err(Error::Contract("GRMP needs at least one relation".into()));
        }
        let c = channels;
        let w_in = match variant.use_w_in {
            true => Some(Linear::new(store, rng, &format!("{name}.w_in"), c, c, true)?),
            false => None,
        };
        let w_alpha = match variant.alpha {
            AlphaMode::Learned => Some(Linear::new(store, rng, &format!("{name}.w_alpha"), c, num_relations, true)?),
            AlphaMode::Uniform => None,
        };
        let w_rel = store.add_ones(format!("{name}.w_rel"), vec![1, num_relations * c])?;
        let w_out = match variant.use_w_out {
            true => Some(Linear::new(store, rng, &format!("{name}.w_out"), c, c, true)?),
            false => None,
        };
        let w_self = Linear::new(store, rng, &format!("{name}.w_self"), c, c, false)?;
        Ok(Self { channels, num_relations, variant, w_in, w_out, w_self, w_alpha, w_rel })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        graph: &Arc<RelGraph>,
        z: Var,
    ) -> Result<Var> {
        let (v, c, r) = (graph.num_nodes(), self.channels, self.num_relations);
        check_inputs(tape, graph, z, c, r)?;

        // input channel mixing
        tape.counter_mut().begin_phase("input mixing");
        let z_in = match &self.w_in {
            Some(l) => l.forward(tape, store, z)?,
            None => z,
        };

        // channel-wise relational aggregation
        tape.counter_mut().begin_phase("aggregation");
        let agg = tape.rel_aggregate(graph, z_in)?;
        let flat = tape.reshape(agg, vec![v, r * c])?;
        let w_rel = tape.param(store, self.w_rel)?;
        let w_rel = tape.expand_rows(w_rel, v)?;
        let per_rel = tape.hadamard(flat, w_rel)?;

        // node-adaptive relation weighting
        tape.counter_mut().begin_phase("relation weighting");
        let mut total = None;
        let alpha = match &self.w_alpha {
            Some(l) => Some(l.forward(tape, store, z)?),
            None => None,
        };
        for rel in 0..r {
            let block = tape.col_block(per_rel, rel * c, c)?;
            let term = match alpha {
                Some(a) => {
                    let a_r = tape.col_block(a, rel, 1)?;
                    let a_r = tape.expand_cols(a_r, c)?;
                    tape.hadamard(a_r, block)?
                }
                None => block,
            };
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let mut mixed = total.expect("at least one relation");
        if alpha.is_none() {
            mixed = tape.scale(mixed, 1.0 / r as f64)?;
        }

        // output channel mixing
        tape.counter_mut().begin_phase("output mixing");
        let z_aggr = match &self.w_out {
            Some(l) => l.forward(tape, store, mixed)?,
            None => mixed,
        };

        // self update
        tape.counter_mut().begin_phase("self update");
        let own = self.w_self.forward(tape, store, z)?;
        match self.variant.gating {
            Gating::Gate => tape.hadamard(own, z_aggr),
            Gating::Add => tape.add(own, z_aggr),
        }
    }
}
