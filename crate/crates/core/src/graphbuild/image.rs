//! Patch-grid graphs: 4-neighborhood short edges, feature-space KNN medium
//! edges, and virtual nodes for whole-image and per-patch context.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Range, RelationRegistry};
use crate::error::{Error, Result};
use crate::relgraph::{Edge, RelGraph};
use crate::tensor::{Scalar, Tensor};

/// `"EPG1"` read as a little-endian `u32`.
pub const PATCH_GRID_MAGIC: u32 = u32::from_le_bytes(*b"EPG1");

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

/// An `H×W` grid of patch features, patches indexed row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<T> {
    pub h: usize,
    pub w: usize,
    pub features: Tensor<T>,
}

impl<T: Scalar> PatchGrid<T> {
    pub fn new(h: usize, w: usize, features: Tensor<T>) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != h * w {
            return Err(Error::dim("patch grid", format!("{h}x{w} grid with features {:?}", features.shape())));
        }
        Ok(Self { h, w, features })
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Writes the binary grid format: magic, H, W, C as little-endian `u32`,
    /// then `H·W·C` little-endian `f32` values.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        for v in [PATCH_GRID_MAGIC, self.h as u32, self.w as u32, self.channels() as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for &x in self.features.data() {
            out.write_all(&(x.as_f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 {
            return Err(Error::Data(format!("{}: truncated patch-grid header", path.display())));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        if word(0) != PATCH_GRID_MAGIC {
            return Err(Error::Data(format!("{}: not a patch-grid file", path.display())));
        }
        let (h, w, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let body = &bytes[16..];
        if body.len() != h * w * c * 4 {
            return Err(Error::Data(format!(
                "{}: expected {} feature bytes, found {}",
                path.display(),
                h * w * c * 4,
                body.len()
            )));
        }
        let data: Vec<T> =
            body.chunks_exact(4).map(|b| T::cst(f32::from_le_bytes(b.try_into().unwrap()) as f64)).collect();
        let features = Tensor::new(vec![h * w, c], data)?;
        if !features.all_finite() {
            return Err(Error::Data(format!("{}: non-finite patch features", path.display())));
        }
        Self::new(h, w, features)
    }
}

/// Incoming edges from the up/down/left/right neighbor of every patch,
/// one relation per direction.
pub fn image_short_edges(h: usize, w: usize) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(2 * h * w.saturating_sub(1) + 2 * w * h.saturating_sub(1));
    for i in 0..h {
        for j in 0..w {
            let v = i * w + j;
            if i > 0 {
                edges.push(Edge::new(v - w, v, UP));
            }
            if i + 1 < h {
                edges.push(Edge::new(v + w, v, DOWN));
            }
            if j > 0 {
                edges.push(Edge::new(v - 1, v, LEFT));
            }
            if j + 1 < w {
                edges.push(Edge::new(v + 1, v, RIGHT));
            }
        }
    }
    edges
}

fn window(p: usize, w: usize) -> (usize, usize) {
    (p / w / 2, p % w / 2)
}

/// For each patch, incoming edges (relation 0) from its `k` nearest patches
/// in feature space, excluding patches in the same non-overlapping 2×2
/// window. Distance ties go to the lower patch index.
pub fn image_medium_edges<T: Scalar>(grid: &PatchGrid<T>, k: usize) -> Vec<Edge> {
    let n = grid.h * grid.w;
    if k == 0 || n == 0 {
        return Vec::new();
    }
    let c = grid.channels();
    let feats: Vec<f64> = grid.features.to_f64_vec();
    let w = grid.w;
    (0..n)
        .into_par_iter()
        .flat_map_iter(|v| {
            let fv = &feats[v * c..(v + 1) * c];
            let wv = window(v, w);
            let mut cands: Vec<(f64, usize)> = (0..n)
                .filter(|&u| window(u, w) != wv)
                .map(|u| {
                    let d = feats[u * c..(u + 1) * c].iter().zip(fv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    (d, u)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            let take = k.min(cands.len());
            if take < cands.len() {
                cands.select_nth_unstable_by(take, cmp);
                cands.truncate(take);
            }
            cands.sort_unstable_by(cmp);
            cands.into_iter().map(move |(_, u)| Edge::new(u, v, 0))
        })
        .collect()
}

/// Virtual-node layout for the two long-range relations of an `H×W` grid:
/// one global node feeding every patch, and one context node per patch
/// feeding that patch. Virtual nodes are numbered after the patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LongEdgeSpec {
    pub num_patches: usize,
}

impl LongEdgeSpec {
    pub fn global_node(&self) -> usize {
        self.num_patches
    }

    pub fn context_node(&self, patch: usize) -> usize {
        self.num_patches + 1 + patch
    }

    pub fn num_virtual_nodes(&self) -> usize {
        self.num_patches + 1
    }

    /// `(virtual source, patch)` pairs of the global relation.
    pub fn global_edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_patches).map(|p| (self.global_node(), p)).collect()
    }

    /// `(virtual source, patch)` pairs of the context relation.
    pub fn context_edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_patches).map(|p| (self.context_node(p), p)).collect()
    }
}

pub fn image_long_edge_spec(h: usize, w: usize) -> LongEdgeSpec {
    LongEdgeSpec { num_patches: h * w }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageGraphConfig {
    /// Number of medium-range neighbors; `None` omits the medium relation.
    pub medium_k: Option<usize>,
    pub long_range: bool,
}

impl Default for ImageGraphConfig {
    fn default() -> Self {
        Self { medium_k: Some(12), long_range: true }
    }
}

#[derive(Clone, Debug)]
pub struct ImageGraph {
    pub graph: Arc<RelGraph>,
    pub registry: RelationRegistry,
    pub h: usize,
    pub w: usize,
    pub long: Option<LongEdgeSpec>,
}

impl ImageGraph {
    pub fn num_patches(&self) -> usize {
        self.h * self.w
    }

    /// Relation ids of the global and context relations, when present.
    pub fn long_relations(&self) -> Option<(usize, usize)> {
        Some((self.registry.id("long_global")?, self.registry.id("long_context")?))
    }
}

/// Short relations (up, down, left, right), then optionally the medium KNN
/// relation, then optionally the global and context relations with their
/// virtual nodes.
pub fn build_image_graph<T: Scalar>(grid: &PatchGrid<T>, cfg: &ImageGraphConfig) -> Result<ImageGraph> {
    if grid.h == 0 || grid.w == 0 {
        return Err(Error::Config("image graph needs a non-empty grid".into()));
    }
    let mut registry = RelationRegistry::new();
    for name in ["short_up", "short_down", "short_left", "short_right"] {
        registry.add(Range::Short, name);
    }
    let mut edges = image_short_edges(grid.h, grid.w);
    if let Some(k) = cfg.medium_k {
        let rel = registry.add(Range::Medium, "medium_knn");
        edges.extend(image_medium_edges(grid, k).into_iter().map(|e| Edge::new(e.src, e.dst, rel)));
    }
    let n = grid.h * grid.w;
    let mut num_nodes = n;
    let mut long = None;
    if cfg.long_range {
        let spec = image_long_edge_spec(grid.h, grid.w);
        let g = registry.add(Range::Long, "long_global");
        let c = registry.add(Range::Long, "long_context");
        edges.extend(spec.global_edges().into_iter().map(|(s, d)| Edge::new(s, d, g)));
        edges.extend(spec.context_edges().into_iter().map(|(s, d)| Edge::new(s, d, c)));
        num_nodes += spec.num_virtual_nodes();
        long = Some(spec);
    }
    let graph = RelGraph::from_edges(num_nodes, registry.len(), &edges)?;
    Ok(ImageGraph { graph: Arc::new(graph), registry, h: grid.h, w: grid.w, long })
}
