use std::f64::consts::PI;

use super::{Edge, RelGraph};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LineGraphOptions {
    pub num_bins: usize,
    /// Connect an edge `a→b` to its reverse `b→a` (angle π, top bin).
    pub include_reverse: bool,
}

impl Default for LineGraphOptions {
    fn default() -> Self {
        Self { num_bins: 8, include_reverse: true }
    }
}

/// Angle between two displacement vectors, or `None` if either has zero
/// length.
pub(crate) fn angle(d1: [f64; 3], d2: [f64; 3]) -> Option<f64> {
    let n1 = d1.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n2 = d2.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return None;
    }
    let dot: f64 = d1.iter().zip(&d2).map(|(a, b)| a * b).sum();
    Some((dot / (n1 * n2)).clamp(-1.0, 1.0).acos())
}

pub(crate) fn angle_bin(theta: Option<f64>, num_bins: usize) -> usize {
    match theta {
        None => 0,
        Some(t) => ((t / (PI / num_bins as f64)).floor() as usize).min(num_bins - 1),
    }
}

/// Builds the line graph of `g`: one node per edge of `g` (in canonical
/// edge order), and an edge `e1 → e2` whenever `e1 = a→b` and `e2 = b→c`,
/// labeled by the binned angle between `b − a` and `c − b`.
pub fn build_line_graph<T: Scalar>(g: &RelGraph, coords: &Tensor<T>, opts: LineGraphOptions) -> Result<RelGraph> {
    if coords.shape() != [g.num_nodes(), 3] {
        return Err(Error::dim("build_line_graph", format!("coords {:?} for {} nodes", coords.shape(), g.num_nodes())));
    }
    if opts.num_bins == 0 {
        return Err(Error::Config("line graph needs at least one angle bin".into()));
    }
    let pos = |v: usize| -> [f64; 3] {
        let r = coords.row(v);
        [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()]
    };
    let edges: Vec<Edge> = g.edges().collect();
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); g.num_nodes()];
    for (i, e) in edges.iter().enumerate() {
        outgoing[e.src].push(i);
    }
    let mut line_edges = Vec::new();
    for (i1, e1) in edges.iter().enumerate() {
        let (a, b) = (pos(e1.src), pos(e1.dst));
        let d1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        for &i2 in &outgoing[e1.dst] {
            if i2 == i1 {
                continue;
            }
            let e2 = edges[i2];
            if !opts.include_reverse && e2.dst == e1.src && e1.src != e1.dst {
                continue;
            }
            let c = pos(e2.dst);
            let d2 = [c[0] - b[0], c[1] - b[1], c[2] - b[2]];
            line_edges.push(Edge::new(i1, i2, angle_bin(angle(d1, d2), opts.num_bins)));
        }
    }
    RelGraph::from_edges(edges.len(), opts.num_bins, &line_edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(rows: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_edge_gives_isolated_node() {
        let g = RelGraph::from_edges(2, 1, &[(0, 1, 0)]).unwrap();
        let lg = build_line_graph(&g, &coords(&[[0.0; 3], [1.0, 0.0, 0.0]]), LineGraphOptions::default()).unwrap();
        assert_eq!((lg.num_nodes(), lg.num_edges(), lg.num_relations()), (1, 0, 8));
    }

    #[test]
    fn right_angle_lands_in_bin_four() {
        let g = RelGraph::from_edges(3, 1, &[(0, 1, 0), (1, 2, 0)]).unwrap();
        let c = coords(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let lg = build_line_graph(&g, &c, LineGraphOptions::default()).unwrap();
        let e: Vec<_> = lg.edges().collect();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].rel, 4);
    }

    #[test]
    fn reverse_pairs_follow_the_switch() {
        let g = RelGraph::from_edges(2, 1, &[(0, 1, 0), (1, 0, 0)]).unwrap();
        let c = coords(&[[0.0; 3], [2.0, 0.0, 0.0]]);
        let with = build_line_graph(&g, &c, LineGraphOptions::default()).unwrap();
        assert_eq!(with.num_edges(), 2);
        assert!(with.edges().all(|e| e.rel == 7));
        let without =
            build_line_graph(&g, &c, LineGraphOptions { include_reverse: false, ..Default::default() }).unwrap();
        assert_eq!(without.num_edges(), 0);
    }

    #[test]
    fn degenerate_displacement_uses_bin_zero() {
        assert_eq!(angle_bin(angle([0.0; 3], [1.0, 0.0, 0.0]), 8), 0);
        assert_eq!(angle_bin(Some(PI), 8), 7);
        assert_eq!(angle_bin(Some(0.0), 8), 0);
    }
}
