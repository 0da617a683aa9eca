//! Cα graphs of single protein chains.
//!
//! Relations, in id order: sequential offsets −2, −1, 0, +1, +2; radius;
//! medium ranks 1–5; medium ranks 6–10; virtual. The virtual node is numbered
//! `L`, after the residues.

use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Range, RelationRegistry};
use crate::error::{Error, Result};
use crate::relgraph::{Edge, RelGraph};

/// One-letter residue codes: the 20 standard amino acids, then
/// selenocysteine (U) and pyrrolysine (O).
pub const RESIDUE_CODES: &[u8; 22] = b"ACDEFGHIKLMNPQRSTVWYUO";

#[derive(Clone, Debug, PartialEq)]
pub struct ProteinChain {
    /// Residue type indices into [`RESIDUE_CODES`].
    pub residues: Vec<usize>,
    /// Cα positions in ångströms.
    pub coords: Vec<[f64; 3]>,
}

impl ProteinChain {
    pub fn new(residues: Vec<usize>, coords: Vec<[f64; 3]>) -> Result<Self> {
        if residues.len() != coords.len() {
            return Err(Error::Data(format!("{} residues but {} coordinates", residues.len(), coords.len())));
        }
        if let Some(&r) = residues.iter().find(|&&r| r >= RESIDUE_CODES.len()) {
            return Err(Error::Data(format!("residue type {r} out of range")));
        }
        if coords.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite Cα coordinate".into()));
        }
        Ok(Self { residues, coords })
    }

    /// Builds a chain from one-letter codes.
    pub fn from_codes(codes: &str, coords: Vec<[f64; 3]>) -> Result<Self> {
        let residues = codes
            .bytes()
            .map(|b| residue_index(b).ok_or_else(|| Error::Data(format!("unknown residue code `{}`", b as char))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(residues, coords)
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Parses one residue per line: `index code x y z`. Blank lines and `#`
    /// comments are skipped; residues keep file order.
    pub fn read_text(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut residues = Vec::new();
        let mut coords = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = t.split_whitespace().collect();
            if f.len() != 5 {
                return Err(Error::parse(path, lineno, format!("expected 5 fields, got {}", f.len())));
            }
            f[0].parse::<usize>().map_err(|_| Error::parse(path, lineno, format!("bad residue index `{}`", f[0])))?;
            let code = match f[1].as_bytes() {
                [b] => residue_index(*b),
                _ => None,
            }
            .ok_or_else(|| Error::parse(path, lineno, format!("unknown residue code `{}`", f[1])))?;
            let mut xyz = [0.0f64; 3];
            for (x, s) in xyz.iter_mut().zip(&f[2..]) {
                *x = s.parse().map_err(|_| Error::parse(path, lineno, format!("bad coordinate `{s}`")))?;
                if !x.is_finite() {
                    return Err(Error::parse(path, lineno, "non-finite coordinate"));
                }
            }
            residues.push(code);
            coords.push(xyz);
        }
        Self::new(residues, coords)
    }
}

pub fn residue_index(code: u8) -> Option<usize> {
    RESIDUE_CODES.iter().position(|&c| c == code.to_ascii_uppercase())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProteinGraphConfig {
    /// Sequential edges connect residues at most this far apart in sequence.
    pub seq_window: usize,
    /// Radius of the spatial relation, in ångströms.
    pub radius: f64,
    /// Medium candidates must be more than this far apart in sequence.
    pub medium_min_seq: usize,
    /// Size of each of the two medium rank groups.
    pub medium_k: usize,
    pub virtual_node: bool,
}

impl Default for ProteinGraphConfig {
    fn default() -> Self {
        Self { seq_window: 2, radius: 10.0, medium_min_seq: 5, medium_k: 5, virtual_node: true }
    }
}

#[derive(Clone, Debug)]
pub struct ProteinGraph {
    pub graph: Arc<RelGraph>,
    pub registry: RelationRegistry,
    pub num_residues: usize,
    /// Index of the virtual node, when present.
    pub virtual_node: Option<usize>,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Medium-range candidates of residue `v`, nearest first (ties to lower
/// index), after dropping residues within `min_seq` in sequence or within
/// `radius` in space.
pub fn medium_ranking(chain: &ProteinChain, v: usize, min_seq: usize, radius: f64) -> Vec<usize> {
    let mut c: Vec<(f64, usize)> = (0..chain.len())
        .filter(|&u| u.abs_diff(v) > min_seq)
        .map(|u| (dist(&chain.coords[u], &chain.coords[v]), u))
        .filter(|&(d, _)| d > radius)
        .collect();
    c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    c.into_iter().map(|(_, u)| u).collect()
}

pub fn protein_edges(chain: &ProteinChain, cfg: &ProteinGraphConfig) -> Result<ProteinGraph> {
    let l = chain.len();
    if l == 0 {
        return Err(Error::Data("empty protein chain".into()));
    }
    let mut registry = RelationRegistry::new();
    let w = cfg.seq_window as isize;
    let seq_ids: Vec<usize> = (-w..=w).map(|o| registry.add(Range::Short, format!("seq{o:+}"))).collect();
    let radius_rel = registry.add(Range::Short, "radius");
    let med_a = registry.add(Range::Medium, "medium_near");
    let med_b = registry.add(Range::Medium, "medium_far");

    let mut edges = Vec::new();
    for v in 0..l {
        for (k, &rel) in seq_ids.iter().enumerate() {
            // relation offset o means the source sits at v − o
            let o = k as isize - w;
            let u = v as isize - o;
            if u >= 0 && (u as usize) < l {
                edges.push(Edge::new(u as usize, v, rel));
            }
        }
        for u in 0..l {
            if u != v && dist(&chain.coords[u], &chain.coords[v]) <= cfg.radius {
                edges.push(Edge::new(u, v, radius_rel));
            }
        }
        let ranked = medium_ranking(chain, v, cfg.medium_min_seq, cfg.radius);
        for (rank, &u) in ranked.iter().take(2 * cfg.medium_k).enumerate() {
            edges.push(Edge::new(u, v, if rank < cfg.medium_k { med_a } else { med_b }));
        }
    }
    let mut num_nodes = l;
    let mut virtual_node = None;
    if cfg.virtual_node {
        let rel = registry.add(Range::Long, "virtual");
        edges.extend((0..l).map(|v| Edge::new(l, v, rel)));
        num_nodes += 1;
        virtual_node = Some(l);
    }
    let graph = RelGraph::from_edges(num_nodes, registry.len(), &edges)?;
    Ok(ProteinGraph { graph: Arc::new(graph), registry, num_residues: l, virtual_node })
}
