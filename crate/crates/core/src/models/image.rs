//! Four-stage hierarchical image classifier.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::image::{build_image_graph, ImageGraphConfig, PatchGrid};
use crate::layers::{
    append_rows, global_virtual_feature, take_rows, ContextStack, ContextStackConfig, Ffn, Grmp, GrmpVariant,
    LayerNorm, Linear, PatchMerging,
};
use crate::params::ParamStore;
use crate::relgraph::RelGraph;
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageModelConfig {
    pub in_channels: usize,
    pub patch_size: usize,
    pub channels: Vec<usize>,
    pub depths: Vec<usize>,
    /// Medium-range neighbors per patch in stages 2–4.
    pub medium_k: usize,
    pub ffn_ratio: usize,
    pub num_classes: usize,
    pub context: ContextStackConfig,
    pub variant: GrmpVariant,
}

impl Default for ImageModelConfig {
    /// The tiny configuration: C = 96, depths 2/2/6/2, 1000 classes.
    fn default() -> Self {
        Self {
            in_channels: 3,
            patch_size: 4,
            channels: vec![96, 192, 384, 768],
            depths: vec![2, 2, 6, 2],
            medium_k: 12,
            ffn_ratio: 4,
            num_classes: 1000,
            context: ContextStackConfig::default(),
            variant: GrmpVariant::default(),
        }
    }
}

impl ImageModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 4 || self.depths.len() != 4 {
            return Err(Error::Config("image model needs exactly 4 stages".into()));
        }
        if self.channels.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::Config(format!("stage channels {:?} must double", self.channels)));
        }
        if self.channels[0] == 0 || self.patch_size == 0 || self.num_classes == 0 {
            return Err(Error::Config("channels, patch size and class count must be positive".into()));
        }
        Ok(())
    }

    /// Input side lengths must be multiples of this.
    pub fn divisor(&self) -> usize {
        self.patch_size * 8
    }

    /// Graph construction settings of stage `s` (0-based).
    pub fn stage_graph(&self, s: usize) -> ImageGraphConfig {
        ImageGraphConfig { medium_k: (s > 0).then_some(self.medium_k), long_range: true }
    }
}

/// Pre-norm residual block: GRMP with virtual rows, then FFN.
#[derive(Clone, Debug)]
pub struct ImageBlock {
    pub norm1: LayerNorm,
    pub context: ContextStack,
    pub grmp: Grmp,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
}

impl ImageBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        num_relations: usize,
        cfg: &ImageModelConfig,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), channels)?,
            context: ContextStack::new(store, rng, &format!("{name}.context"), channels, cfg.context.clone())?,
            grmp: Grmp::new(store, rng, &format!("{name}.grmp"), channels, num_relations, cfg.variant)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), channels)?,
            ffn: Ffn::new(store, rng, &format!("{name}.ffn"), channels, cfg.ffn_ratio)?,
        })
    }

    fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        graph: &Arc<RelGraph>,
        z: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let n = h * w;
        let zn = self.norm1.forward(tape, store, z)?;
        // virtual rows follow the patches: the global node, then one context node per patch
        let global = global_virtual_feature(tape, zn)?;
        let context = self.context.forward(tape, store, zn, h, w)?;
        let ext = append_rows(tape, zn, &[global, context])?;
        let y = self.grmp.forward(tape, store, graph, ext)?;
        let y = take_rows(tape, y, n)?;
        let z = tape.add(z, y)?;
        let zn = self.norm2.forward(tape, store, z)?;
        let y = self.ffn.forward(tape, store, zn)?;
        tape.add(z, y)
    }
}

#[derive(Clone, Debug)]
pub struct ImageModel {
    pub config: ImageModelConfig,
    pub stem: Linear,
    pub stem_norm: LayerNorm,
    pub stages: Vec<Vec<ImageBlock>>,
    pub merges: Vec<PatchMerging>,
    pub norm: LayerNorm,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct ImageOutput {
    /// `1 × num_classes`.
    pub logits: Var,
    /// Patch count seen by each stage.
    pub stage_nodes: Vec<usize>,
    /// Relation count of each stage graph.
    pub stage_relations: Vec<usize>,
}

/// Splits an `H × W × C` image into non-overlapping `p × p` patches, one
/// row of `p·p·C` values per patch in `(dy, dx, channel)` order.
pub fn patchify<T: Scalar>(image: &Tensor<T>, p: usize) -> Result<PatchGrid<T>> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::dim("patchify", format!("expected H×W×C, got {:?}", image.shape())));
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!("{h}x{w} image is not divisible into {p}x{p} patches")));
    }
    let (gh, gw) = (h / p, w / p);
    let x = image.data();
    let mut out = Vec::with_capacity(h * w * c);
    for i in 0..gh {
        for j in 0..gw {
            for dy in 0..p {
                let start = ((i * p + dy) * w + j * p) * c;
                out.extend_from_slice(&x[start..start + p * c]);
            }
        }
    }
    PatchGrid::new(gh, gw, Tensor::new(vec![gh * gw, p * p * c], out)?)
}

fn stage_relations(cfg: &ImageModelConfig, s: usize) -> usize {
    let g = cfg.stage_graph(s);
    4 + usize::from(g.medium_k.is_some()) + 2 * usize::from(g.long_range)
}

impl ImageModel {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        config: ImageModelConfig,
    ) -> Result<Self> {
        config.validate()?;
        let c0 = config.channels[0];
        let stem = Linear::new(store, rng, "stem", config.patch_size.pow(2) * config.in_channels, c0, true)?;
        let stem_norm = LayerNorm::new(store, "stem.norm", c0)?;
        let mut stages = Vec::new();
        let mut merges = Vec::new();
        for s in 0..4 {
            let c = config.channels[s];
            if s > 0 {
                merges.push(PatchMerging::new(store, rng, &format!("merge{s}"), config.channels[s - 1])?);
            }
            let blocks = (0..config.depths[s])
                .map(|b| {
                    ImageBlock::new(store, rng, &format!("stage{s}.block{b}"), c, stage_relations(&config, s), &config)
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        let c_last = config.channels[3];
        let norm = LayerNorm::new(store, "norm", c_last)?;
        let head = Linear::new(store, rng, "head", c_last, config.num_classes, true)?;
        Ok(Self { config, stem, stem_norm, stages, merges, norm, head })
    }

    /// Classifies one `H × W × in_channels` image.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        image: &Tensor<T>,
    ) -> Result<ImageOutput> {
        let cfg = &self.config;
        let shape = image.shape();
        if shape.len() != 3 || shape[2] != cfg.in_channels {
            return Err(Error::dim("image model", format!("expected H×W×{}, got {shape:?}", cfg.in_channels)));
        }
        let d = cfg.divisor();
        if !shape[0].is_multiple_of(d) || !shape[1].is_multiple_of(d) || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::Config(format!("{}x{} input must be divisible by {d}", shape[0], shape[1])));
        }
        let patches = patchify(image, cfg.patch_size)?;
        let (mut h, mut w) = (patches.h, patches.w);
        let x = tape.constant(patches.features)?;
        let z = self.stem.forward(tape, store, x)?;
        let mut z = self.stem_norm.forward(tape, store, z)?;

        let mut stage_nodes = Vec::new();
        let mut stage_relations = Vec::new();
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                (z, h, w) = self.merges[s - 1].forward(tape, store, z, h, w)?;
            }
            let grid = PatchGrid::new(h, w, tape.value(z).clone())?;
            let graph = build_image_graph(&grid, &cfg.stage_graph(s))?.graph;
            stage_nodes.push(h * w);
            stage_relations.push(graph.num_relations());
            for block in blocks {
                z = block.forward(tape, store, &graph, z, h, w)?;
            }
        }
        let z = self.norm.forward(tape, store, z)?;
        let pooled = tape.mean_rows(z)?;
        let logits = self.head.forward(tape, store, pooled)?;
        Ok(ImageOutput { logits, stage_nodes, stage_relations })
    }
}
