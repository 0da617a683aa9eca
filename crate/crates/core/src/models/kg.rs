//! Triplet scorer over entity representations from GRMP on the fact graph.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::{Triplet, TripletStore};
use crate::layers::{Grmp, GrmpVariant, LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::relgraph::RelGraph;
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgModelConfig {
    pub num_layers: usize,
    /// Width of entity and relation embeddings and of every GRMP layer.
    pub channels: usize,
    pub scorer_hidden: usize,
    pub negatives: usize,
    /// Standard deviation of the entity and relation embedding init.
    pub embedding_std: f64,
    pub variant: GrmpVariant,
}

impl Default for KgModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            channels: 32,
            scorer_hidden: 64,
            negatives: 32,
            embedding_std: 1.0,
            variant: GrmpVariant::default(),
        }
    }
}

/// Scores `MLP([z_h ; e_r ; z_t])`, where `z` are GRMP outputs over the
/// fact graph and `e_r` is a learned relation embedding.
#[derive(Clone, Debug)]
pub struct KgModel {
    pub config: KgModelConfig,
    pub num_entities: usize,
    pub num_relations: usize,
    pub entity_emb: ParamId,
    pub relation_emb: ParamId,
    pub layers: Vec<(Grmp, LayerNorm)>,
    pub fc1: Linear,
    /// Zero-initialized, so every score starts at 0.
    pub fc2: Linear,
}

impl KgModel {
    /// `num_relations` counts inverse relations too.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        config: KgModelConfig,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<Self> {
        if config.num_layers == 0 || config.channels == 0 || config.scorer_hidden == 0 {
            return Err(Error::Config("KG model needs layers, channels and a scorer width".into()));
        }
        let c = config.channels;
        let entity_emb = store.add_normal("entity_emb", vec![num_entities, c], config.embedding_std, rng)?;
        let relation_emb = store.add_normal("relation_emb", vec![num_relations, c], config.embedding_std, rng)?;
        let layers = (0..config.num_layers)
            .map(|i| {
                Ok((
                    Grmp::new(store, rng, &format!("layer{i}.grmp"), c, num_relations, config.variant)?,
                    LayerNorm::new(store, &format!("layer{i}.norm"), c)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let fc1 = Linear::new(store, rng, "scorer.fc1", 3 * c, config.scorer_hidden, true)?;
        let fc2 = Linear::new(store, rng, "scorer.fc2", config.scorer_hidden, 1, true)?;
        store.set(fc2.w, Tensor::zeros(vec![config.scorer_hidden, 1]))?;
        Ok(Self { config, num_entities, num_relations, entity_emb, relation_emb, layers, fc1, fc2 })
    }

    pub fn for_store<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        config: KgModelConfig,
        kg: &TripletStore,
    ) -> Result<Self> {
        Self::new(store, rng, config, kg.num_entities(), kg.num_relations())
    }

    /// Entity representations `N × C`: each layer adds
    /// `ReLU(LN(GRMP(z)))` to its input.
    pub fn entity_reps<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        graph: &Arc<RelGraph>,
    ) -> Result<Var> {
        if graph.num_nodes() != self.num_entities || graph.num_relations() != self.num_relations {
            return Err(Error::dim(
                "KG model",
                format!(
                    "fact graph has {} nodes and {} relations, model expects {} and {}",
                    graph.num_nodes(),
                    graph.num_relations(),
                    self.num_entities,
                    self.num_relations
                ),
            ));
        }
        let mut z = tape.param(store, self.entity_emb)?;
        for (grmp, norm) in &self.layers {
            let y = grmp.forward(tape, store, graph, z)?;
            let y = norm.forward(tape, store, y)?;
            let y = tape.relu(y)?;
            z = tape.add(z, y)?;
        }
        Ok(z)
    }

    /// Scores `B × 1` for a batch of triplets, given representations from
    /// [`KgModel::entity_reps`].
    pub fn score<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        reps: Var,
        triplets: &[Triplet],
    ) -> Result<Var> {
        for t in triplets {
            if t.h >= self.num_entities || t.t >= self.num_entities {
                return Err(Error::Index { what: "entity", index: t.h.max(t.t), bound: self.num_entities });
            }
            if t.r >= self.num_relations {
                return Err(Error::Index { what: "relation", index: t.r, bound: self.num_relations });
            }
        }
        let heads: Vec<usize> = triplets.iter().map(|t| t.h).collect();
        let rels: Vec<usize> = triplets.iter().map(|t| t.r).collect();
        let tails: Vec<usize> = triplets.iter().map(|t| t.t).collect();
        let zh = tape.gather_rows(reps, &heads)?;
        let rel_table = tape.param(store, self.relation_emb)?;
        let er = tape.gather_rows(rel_table, &rels)?;
        let zt = tape.gather_rows(reps, &tails)?;
        let x = tape.concat_cols(&[zh, er, zt])?;
        let hdn = self.fc1.forward(tape, store, x)?;
        let hdn = tape.relu(hdn)?;
        self.fc2.forward(tape, store, hdn)
    }

    /// Scores of `(h, r, e)` for every entity `e` when `tail` is set,
    /// otherwise of `(e, r, t)`.
    pub fn candidate_scores<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        reps: Var,
        query: Triplet,
        tail: bool,
    ) -> Result<Vec<f64>> {
        let batch: Vec<Triplet> = (0..self.num_entities)
            .map(|e| match tail {
                true => Triplet::new(query.h, query.r, e),
                false => Triplet::new(e, query.r, query.t),
            })
            .collect();
        let s = self.score(tape, store, reps, &batch)?;
        Ok(tape.value(s).to_f64_vec())
    }
}
