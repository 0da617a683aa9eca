use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextStackConfig {
    /// Kernel size of each depthwise layer, applied in order.
    pub kernel_sizes: Vec<usize>,
    /// Apply GELU after every layer.
    pub activation: bool,
}

impl Default for ContextStackConfig {
    /// Three 3×3 layers: an accumulated receptive field of 7.
    fn default() -> Self {
        Self { kernel_sizes: vec![3, 3, 3], activation: true }
    }
}

impl ContextStackConfig {
    pub fn receptive_field(&self) -> usize {
        1 + self.kernel_sizes.iter().map(|k| k - 1).sum::<usize>()
    }
}

/// Stack of same-padded depthwise convolutions producing one context
/// feature per patch.
#[derive(Clone, Debug)]
pub struct ContextStack {
    pub kernels: Vec<ParamId>,
    pub config: ContextStackConfig,
    pub channels: usize,
}

impl ContextStack {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        config: ContextStackConfig,
    ) -> Result<Self> {
        if let Some(&k) = config.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::Config(format!("depthwise kernel size {k} must be odd")));
        }
        let kernels = config
            .kernel_sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| store.add_trunc_normal(format!("{name}.dw{i}"), vec![k, k, channels], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernels, config, channels })
    }

    /// `z` holds `H·W` patch rows; returns `H·W` context rows.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        z: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let c = self.channels;
        if tape.shape(z) != [h * w, c] {
            return Err(Error::dim("context stack", format!("{:?} for a {h}x{w} grid", tape.shape(z))));
        }
        let mut x = tape.reshape(z, vec![h, w, c])?;
        for &k in &self.kernels {
            let k = tape.param(store, k)?;
            x = tape.depthwise_conv2d(x, k)?;
            if self.config.activation {
                x = tape.gelu(x)?;
            }
        }
        tape.reshape(x, vec![h * w, c])
    }
}

/// Concatenates each 2×2 block of patches (4C), normalizes, and projects to
/// 2C.
#[derive(Clone, Debug)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduction: Linear,
    pub channels: usize,
}

impl PatchMerging {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), 4 * channels)?,
            reduction: Linear::new(store, rng, &format!("{name}.reduction"), 4 * channels, 2 * channels, false)?,
            channels,
        })
    }

    /// Row indices of the merged blocks, in concatenation order: for output
    /// patch `(i, j)` the inputs `(2i, 2j)`, `(2i+1, 2j)`, `(2i, 2j+1)`,
    /// `(2i+1, 2j+1)`.
    pub fn gather_indices(h: usize, w: usize) -> Result<[Vec<usize>; 4]> {
        if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
            return Err(Error::Config(format!("patch merging needs an even grid, got {h}x{w}")));
        }
        let mut idx: [Vec<usize>; 4] = Default::default();
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                for (q, (di, dj)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                    idx[q].push((2 * i + di) * w + 2 * j + dj);
                }
            }
        }
        Ok(idx)
    }

    /// Returns the merged features and the new grid size.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        z: Var,
        h: usize,
        w: usize,
    ) -> Result<(Var, usize, usize)> {
        let idx = Self::gather_indices(h, w)?;
        if tape.shape(z) != [h * w, self.channels] {
            return Err(Error::dim("patch merging", format!("{:?} for a {h}x{w} grid", tape.shape(z))));
        }
        let parts = idx.iter().map(|ix| tape.gather_rows(z, ix)).collect::<Result<Vec<_>>>()?;
        let cat = tape.concat_cols(&parts)?;
        let normed = self.norm.forward(tape, store, cat)?;
        let out = self.reduction.forward(tape, store, normed)?;
        Ok((out, h / 2, w / 2))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn delta(k: usize, c: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(vec![k, k, c]);
        let centre = (k / 2) * k + k / 2;
        for ch in 0..c {
            t.data_mut()[centre * c + ch] = 1.0;
        }
        t
    }

    #[test]
    fn delta_stack_is_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let cfg = ContextStackConfig { kernel_sizes: vec![3, 3], activation: false };
        let stack = ContextStack::new(&mut store, &mut rng, "ctx", 2, cfg).unwrap();
        for &k in &stack.kernels {
            store.set(k, delta(3, 2)).unwrap();
        }
        let x = Tensor::from_f64(vec![12, 2], &(0..24).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let mut tape = Tape::new();
        let z = tape.constant(x.clone()).unwrap();
        let y = stack.forward(&mut tape, &store, z, 3, 4).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn averaging_kernel_on_a_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let cfg = ContextStackConfig { kernel_sizes: vec![3], activation: false };
        let stack = ContextStack::new(&mut store, &mut rng, "ctx", 1, cfg).unwrap();
        store.set(stack.kernels[0], Tensor::full(vec![3, 3, 1], 1.0 / 9.0)).unwrap();
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::full(vec![16, 1], 2.0)).unwrap();
        let y = stack.forward(&mut tape, &store, z, 4, 4).unwrap();
        let v = tape.value(y);
        // interior patch (1,1) sees the full window; corner (0,0) sees 4 of 9
        assert!((v.get(5, 0) - 2.0).abs() < 1e-15);
        assert!((v.get(0, 0) - 2.0 * 4.0 / 9.0).abs() < 1e-15);
        assert!((v.get(1, 0) - 2.0 * 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn even_kernels_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let cfg = ContextStackConfig { kernel_sizes: vec![3, 4], activation: true };
        assert!(matches!(ContextStack::new(&mut store, &mut rng, "c", 2, cfg), Err(Error::Config(_))));
        assert_eq!(ContextStackConfig::default().receptive_field(), 7);
    }

    #[test]
    fn merging_identical_rows_with_a_prefix_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let c = 2;
        let pm = PatchMerging::new(&mut store, &mut rng, "pm", c).unwrap();
        let mut proj = Tensor::zeros(vec![4 * c, 2 * c]);
        for i in 0..2 * c {
            proj.set(i, i, 1.0);
        }
        store.set(pm.reduction.w, proj).unwrap();
        let row = [1.0, -1.0];
        let x = Tensor::from_rows(&vec![row.to_vec(); 4]).unwrap();
        let mut tape = Tape::new();
        let z = tape.constant(x).unwrap();
        let (y, h, w) = pm.forward(&mut tape, &store, z, 2, 2).unwrap();
        assert_eq!((h, w), (1, 1));
        // the concatenated row [1,-1,1,-1,...] normalizes to itself (up to eps)
        let got = tape.value(y).data().to_vec();
        for (g, want) in got.iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!((g - want).abs() < 1e-4);
        }
    }

    #[test]
    fn merging_gathers_in_block_order_and_rejects_odd_grids() {
        let idx = PatchMerging::gather_indices(4, 4).unwrap();
        assert_eq!(idx[0], vec![0, 2, 8, 10]);
        assert_eq!(idx[1], vec![4, 6, 12, 14]);
        assert_eq!(idx[2], vec![1, 3, 9, 11]);
        assert_eq!(idx[3], vec![5, 7, 13, 15]);
        assert!(matches!(PatchMerging::gather_indices(3, 4), Err(Error::Config(_))));
    }
}
