//! Single-stage protein encoder with a multi-label task head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::{protein_edges, ProteinChain, ProteinGraph, ProteinGraphConfig, RESIDUE_CODES};
use crate::layers::{append_rows, global_virtual_feature, take_rows, Grmp, GrmpVariant, LayerNorm, Linear};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProteinEncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_tasks: usize,
    pub graph: ProteinGraphConfig,
    pub variant: GrmpVariant,
}

impl Default for ProteinEncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            hidden_dim: 512,
            num_tasks: 1,
            graph: ProteinGraphConfig::default(),
            variant: GrmpVariant::default(),
        }
    }
}

impl ProteinEncoderConfig {
    pub fn num_relations(&self) -> usize {
        2 * self.graph.seq_window + 1 + 3 + usize::from(self.graph.virtual_node)
    }
}

#[derive(Clone, Debug)]
pub struct ProteinEncoder {
    pub config: ProteinEncoderConfig,
    /// One-hot residue types to the hidden width.
    pub input: Linear,
    pub layers: Vec<(Grmp, LayerNorm)>,
    /// Three-layer MLP on the concatenated per-layer pools.
    pub head: [Linear; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct ProteinOutput {
    /// `1 × num_layers·hidden_dim`.
    pub representation: Var,
    /// `1 × num_tasks`.
    pub logits: Var,
}

/// `L × 22` one-hot encoding of the residue types.
pub fn one_hot_residues<T: Scalar>(chain: &ProteinChain) -> Tensor<T> {
    let k = RESIDUE_CODES.len();
    let mut t = Tensor::zeros(vec![chain.len(), k]);
    for (i, &r) in chain.residues.iter().enumerate() {
        t.set(i, r, T::one());
    }
    t
}

impl ProteinEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        config: ProteinEncoderConfig,
    ) -> Result<Self> {
        if config.num_layers == 0 || config.hidden_dim == 0 || config.num_tasks == 0 {
            return Err(Error::Config("protein encoder needs layers, a hidden width and tasks".into()));
        }
        let h = config.hidden_dim;
        let r = config.num_relations();
        let input = Linear::new(store, rng, "input", RESIDUE_CODES.len(), h, true)?;
        let layers = (0..config.num_layers)
            .map(|i| {
                Ok((
                    Grmp::new(store, rng, &format!("layer{i}.grmp"), h, r, config.variant)?,
                    LayerNorm::new(store, &format!("layer{i}.norm"), h)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let rep = config.num_layers * h;
        let head = [
            Linear::new(store, rng, "head.fc1", rep, h, true)?,
            Linear::new(store, rng, "head.fc2", h, h, true)?,
            Linear::new(store, rng, "head.fc3", h, config.num_tasks, true)?,
        ];
        Ok(Self { config, input, layers, head })
    }

    pub fn build_graph(&self, chain: &ProteinChain) -> Result<ProteinGraph> {
        protein_edges(chain, &self.config.graph)
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        chain: &ProteinChain,
    ) -> Result<ProteinOutput> {
        let pg = self.build_graph(chain)?;
        self.forward_with_graph(tape, store, chain, &pg)
    }

    /// Runs the encoder on a graph already built from `chain`.
    pub fn forward_with_graph<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        chain: &ProteinChain,
        pg: &ProteinGraph,
    ) -> Result<ProteinOutput> {
        let l = chain.len();
        if pg.num_residues != l {
            return Err(Error::dim(
                "protein encoder",
                format!("graph of {} residues for a chain of {l}", pg.num_residues),
            ));
        }
        let x = tape.constant(one_hot_residues(chain))?;
        let mut z = self.input.forward(tape, store, x)?;
        let mut pools = Vec::with_capacity(self.layers.len());
        for (grmp, norm) in &self.layers {
            let ext = match pg.virtual_node {
                Some(_) => {
                    let g = global_virtual_feature(tape, z)?;
                    append_rows(tape, z, &[g])?
                }
                None => z,
            };
            let y = grmp.forward(tape, store, &pg.graph, ext)?;
            let y = take_rows(tape, y, l)?;
            let y = norm.forward(tape, store, y)?;
            z = tape.relu(y)?;
            pools.push(tape.sum_rows(z)?);
        }
        let representation = tape.concat_cols(&pools)?;
        let mut y = representation;
        for (i, fc) in self.head.iter().enumerate() {
            y = fc.forward(tape, store, y)?;
            if i < 2 {
                y = tape.relu(y)?;
            }
        }
        Ok(ProteinOutput { representation, logits: y })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> ProteinEncoderConfig {
        ProteinEncoderConfig { num_layers: 3, hidden_dim: 8, num_tasks: 4, ..Default::default() }
    }

    fn chain(l: usize, seed: u64) -> ProteinChain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProteinChain::new(
            (0..l).map(|_| rng.random_range(0..20)).collect(),
            (0..l).map(|_| [0.0; 3].map(|_: f64| rng.random_range(-15.0..15.0))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn representation_width_and_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let enc = ProteinEncoder::new(&mut store, &mut rng, small()).unwrap();
        for l in [1, 2, 7] {
            let mut tape = Tape::new();
            let out = enc.forward(&mut tape, &store, &chain(l, l as u64)).unwrap();
            assert_eq!(tape.shape(out.representation), [1, 24]);
            assert_eq!(tape.shape(out.logits), [1, 4]);
        }
    }

    #[test]
    fn single_residue_pools_are_its_own_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let enc = ProteinEncoder::new(&mut store, &mut rng, small()).unwrap();
        let mut tape = Tape::new();
        let c = chain(1, 5);
        let out = enc.forward(&mut tape, &store, &c).unwrap();
        let rep = tape.value(out.representation).clone();
        // recompute the per-layer node rows by hand from the tape-free layers
        let pg = enc.build_graph(&c).unwrap();
        let mut tape2 = Tape::new();
        let x = tape2.constant(one_hot_residues(&c)).unwrap();
        let mut z = enc.input.forward(&mut tape2, &store, x).unwrap();
        let mut rows = Vec::new();
        for (grmp, norm) in &enc.layers {
            let ext = tape2.concat_rows(&[z, z]).unwrap();
            let y = grmp.forward(&mut tape2, &store, &pg.graph, ext).unwrap();
            let y = take_rows(&mut tape2, y, 1).unwrap();
            let y = norm.forward(&mut tape2, &store, y).unwrap();
            z = tape2.relu(y).unwrap();
            rows.extend_from_slice(tape2.value(z).data());
        }
        assert_eq!(rep.data(), rows.as_slice());
    }

    #[test]
    fn empty_chain_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let enc = ProteinEncoder::new(&mut store, &mut rng, small()).unwrap();
        let mut tape = Tape::new();
        let empty = ProteinChain::new(vec![], vec![]).unwrap();
        assert!(enc.forward(&mut tape, &store, &empty).is_err());
    }

    #[test]
    fn registry_size_matches_the_layer_width() {
        let cfg = small();
        let pg = protein_edges(&chain(5, 0), &cfg.graph).unwrap();
        assert_eq!(pg.registry.len(), cfg.num_relations());
    }
}
