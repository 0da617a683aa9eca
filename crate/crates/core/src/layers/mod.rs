//! Differentiable building blocks. Each layer holds [`ParamId`]s into a
//! shared [`ParamStore`] and records its forward pass on a [`Tape`].

mod relational;
mod spatial;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Var};

pub use relational::{AlphaMode, Gating, Grmp, GrmpVariant, RgConv};
pub use spatial::{ContextStack, ContextStackConfig, PatchMerging};

/// Epsilon of every layer normalization.
pub const LN_EPS: f64 = 1e-5;

/// `x·W (+ b)` with `W` stored `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add_trunc_normal(format!("{name}.weight"), vec![in_dim, out_dim], rng)?;
        let b = if bias { Some(store.add_zeros(format!("{name}.bias"), vec![1, out_dim])?) } else { None };
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w)?;
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b)?;
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalization with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_ones(format!("{name}.gamma"), vec![1, dim])?,
            beta: store.add_zeros(format!("{name}.beta"), vec![1, dim])?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma)?;
        let b = tape.param(store, self.beta)?;
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Two-layer feed-forward map `C → γC → C` with GELU and biases.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Ffn {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        ratio: usize,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), channels, ratio * channels, true)?,
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), ratio * channels, channels, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.gelu(h)?;
        self.fc2.forward(tape, store, h)
    }
}

/// Whole-graph feature: the column means of `z`.
pub fn global_virtual_feature<T: Scalar>(tape: &mut Tape<T>, z: Var) -> Result<Var> {
    if tape.shape(z).first() == Some(&0) {
        return Err(Error::Contract("global pooling of an empty node set".into()));
    }
    tape.mean_rows(z)
}

/// Appends virtual-node rows below the node features.
pub fn append_rows<T: Scalar>(tape: &mut Tape<T>, z: Var, extra: &[Var]) -> Result<Var> {
    if extra.is_empty() {
        return Ok(z);
    }
    let mut parts = vec![z];
    parts.extend_from_slice(extra);
    tape.concat_rows(&parts)
}

/// The first `n` rows of `z`.
pub fn take_rows<T: Scalar>(tape: &mut Tape<T>, z: Var, n: usize) -> Result<Var> {
    if tape.shape(z)[0] == n {
        return Ok(z);
    }
    let idx: Vec<usize> = (0..n).collect();
    tape.gather_rows(z, &idx)
}
