//! Multi-relational directed graphs stored by destination.
//!
//! Edges are grouped into slots `v·|R| + r`, one per (destination,
//! relation) pair, and each slot lists its sources in ascending order. That
//! layout is the one [`Tape::rel_aggregate`](crate::tensor::Tape::rel_aggregate)
//! walks, and it fixes the summation order of every aggregation.

mod line_graph;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use line_graph::{build_line_graph, LineGraphOptions};

/// A directed edge `src → dst` under relation `rel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub rel: usize,
}

impl Edge {
    pub fn new(src: usize, dst: usize, rel: usize) -> Self {
        Self { src, dst, rel }
    }
}

impl From<(usize, usize, usize)> for Edge {
    fn from((src, dst, rel): (usize, usize, usize)) -> Self {
        Self { src, dst, rel }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelGraph {
    num_nodes: usize,
    num_relations: usize,
    offsets: Vec<usize>,
    sources: Vec<u32>,
    norm: Vec<f64>,
}

/// Mean in-degree per relation, and its average over relations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegreeProfile {
    pub per_relation: Vec<f64>,
    pub mean: f64,
}

impl RelGraph {
    /// Builds a graph, rejecting duplicate edges.
    pub fn from_edges<E: Into<Edge> + Copy>(num_nodes: usize, num_relations: usize, edges: &[E]) -> Result<Self> {
        Self::build(num_nodes, num_relations, edges.iter().map(|&e| e.into()), false)
    }

    /// Builds a graph, silently merging duplicate edges.
    pub fn from_edges_dedup<E: Into<Edge> + Copy>(num_nodes: usize, num_relations: usize, edges: &[E]) -> Result<Self> {
        Self::build(num_nodes, num_relations, edges.iter().map(|&e| e.into()), true)
    }

    fn build(num_nodes: usize, num_relations: usize, edges: impl Iterator<Item = Edge>, dedupe: bool) -> Result<Self> {
        if num_nodes > u32::MAX as usize {
            return Err(Error::Config(format!("{num_nodes} nodes exceed the u32 index range")));
        }
        let mut keyed = Vec::new();
        for e in edges {
            for (what, index, bound) in [
                ("source node", e.src, num_nodes),
                ("destination node", e.dst, num_nodes),
                ("relation", e.rel, num_relations),
            ] {
                if index >= bound {
                    return Err(Error::Index { what, index, bound });
                }
            }
            keyed.push((e.dst * num_relations + e.rel, e.src));
        }
        keyed.sort_unstable();
        if !dedupe {
            if let Some(w) = keyed.windows(2).find(|w| w[0] == w[1]) {
                let (slot, src) = w[0];
                return Err(Error::DuplicateEdge { src, dst: slot / num_relations, rel: slot % num_relations });
            }
        }
        keyed.dedup();
        let slots = num_nodes * num_relations;
        let mut offsets = vec![0usize; slots + 1];
        for &(slot, _) in &keyed {
            offsets[slot + 1] += 1;
        }
        for i in 0..slots {
            offsets[i + 1] += offsets[i];
        }
        let sources: Vec<u32> = keyed.iter().map(|&(_, s)| s as u32).collect();
        let norm = (0..slots)
            .map(|s| {
                let n = offsets[s + 1] - offsets[s];
                if n == 0 {
                    0.0
                } else {
                    1.0 / n as f64
                }
            })
            .collect();
        Ok(Self { num_nodes, num_relations, offsets, sources, norm })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn num_slots(&self) -> usize {
        self.num_nodes * self.num_relations
    }

    /// Sources of slot `v·|R| + r`, ascending.
    pub fn slot_sources(&self, slot: usize) -> &[u32] {
        &self.sources[self.offsets[slot]..self.offsets[slot + 1]]
    }

    /// `1/|N_r(v)|` for slot `v·|R| + r`, or 0 for an empty neighborhood.
    pub fn slot_norm(&self, slot: usize) -> f64 {
        self.norm[slot]
    }

    pub fn neighbors(&self, v: usize, r: usize) -> &[u32] {
        self.slot_sources(v * self.num_relations + r)
    }

    pub fn in_degree(&self, v: usize, r: usize) -> usize {
        let s = v * self.num_relations + r;
        self.offsets[s + 1] - self.offsets[s]
    }

    /// `Some(1/|N_r(v)|)` when the neighborhood is non-empty.
    pub fn norm_weight(&self, v: usize, r: usize) -> Option<f64> {
        (self.in_degree(v, r) > 0).then(|| self.norm[v * self.num_relations + r])
    }

    pub fn relation_edge_count(&self, r: usize) -> usize {
        (0..self.num_nodes).map(|v| self.in_degree(v, r)).sum()
    }

    /// All edges in canonical order: by destination, then relation, then
    /// source.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.num_slots()).flat_map(move |slot| {
            let (dst, rel) = (slot / self.num_relations.max(1), slot % self.num_relations.max(1));
            self.slot_sources(slot).iter().map(move |&s| Edge::new(s as usize, dst, rel))
        })
    }

    pub fn degree_profile(&self) -> DegreeProfile {
        let per_relation: Vec<f64> = (0..self.num_relations)
            .map(|r| if self.num_nodes == 0 { 0.0 } else { self.relation_edge_count(r) as f64 / self.num_nodes as f64 })
            .collect();
        let mean =
            if per_relation.is_empty() { 0.0 } else { per_relation.iter().sum::<f64>() / per_relation.len() as f64 };
        DegreeProfile { per_relation, mean }
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::dim("permute", format!("{} labels for {} nodes", perm.len(), self.num_nodes)));
        }
        let edges: Vec<Edge> = self.edges().map(|e| Edge::new(perm[e.src], perm[e.dst], e.rel)).collect();
        Self::from_edges(self.num_nodes, self.num_relations, &edges)
    }

    /// Writes the edge-list text format: a `# num_nodes=N num_relations=R`
    /// comment, then `src\tdst\trel` lines in canonical order.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# num_nodes={} num_relations={}", self.num_nodes, self.num_relations)?;
        for e in self.edges() {
            writeln!(w, "{}\t{}\t{}", e.src, e.dst, e.rel)?;
        }
        Ok(())
    }

    /// Reads the edge-list text format. Without a size comment the node and
    /// relation counts are inferred from the largest indices.
    pub fn read_tsv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut sizes: Option<(usize, usize)> = None;
        let mut edges = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let trimmed = line.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                if sizes.is_none() {
                    sizes = parse_size_comment(comment);
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            let mut nums = [0usize; 3];
            for (n, f) in nums.iter_mut().zip(&fields) {
                *n = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("`{f}` is not a non-negative integer")))?;
            }
            edges.push(Edge::new(nums[0], nums[1], nums[2]));
        }
        let (n, r) = sizes.unwrap_or_else(|| {
            let n = edges.iter().map(|e| e.src.max(e.dst) + 1).max().unwrap_or(0);
            let r = edges.iter().map(|e| e.rel + 1).max().unwrap_or(0);
            (n, r)
        });
        Self::from_edges(n, r, &edges)
    }
}

fn parse_size_comment(comment: &str) -> Option<(usize, usize)> {
    let mut n = None;
    let mut r = None;
    for tok in comment.split_whitespace() {
        if let Some(v) = tok.strip_prefix("num_nodes=") {
            n = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("num_relations=") {
            r = v.parse().ok();
        }
    }
    Some((n?, r?))
}
