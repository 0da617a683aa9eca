//! Domain graph constructors: image patch grids, protein Cα chains and
//! knowledge graphs, each producing a [`RelGraph`](crate::relgraph::RelGraph)
//! together with a [`RelationRegistry`] naming its relations.

pub mod image;
pub mod kg;
pub mod protein;

use serde::Serialize;

pub use image::{
    build_image_graph, image_long_edge_spec, image_medium_edges, image_short_edges, ImageGraph, ImageGraphConfig,
    LongEdgeSpec, PatchGrid,
};
pub use kg::{load_triplet_file, load_triplets, Triplet, TripletStore};
pub use protein::{protein_edges, ProteinChain, ProteinGraph, ProteinGraphConfig, RESIDUE_CODES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Range {
    Short,
    Medium,
    Long,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RelationSpec {
    pub id: usize,
    pub name: String,
    pub range: Range,
}

/// Named relations with contiguous ids starting at 0.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RelationRegistry {
    relations: Vec<RelationSpec>,
}

impl RelationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a relation and returns its id.
    pub fn add(&mut self, range: Range, name: impl Into<String>) -> usize {
        let id = self.relations.len();
        self.relations.push(RelationSpec { id, name: name.into(), range });
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.relations.iter().find(|r| r.name == name).map(|r| r.id)
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn relations(&self) -> &[RelationSpec] {
        &self.relations
    }

    pub fn ids_in(&self, range: Range) -> Vec<usize> {
        self.relations.iter().filter(|r| r.range == range).map(|r| r.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_contiguous() {
        let mut r = RelationRegistry::new();
        assert_eq!(r.add(Range::Short, "a"), 0);
        assert_eq!(r.add(Range::Long, "b"), 1);
        assert_eq!(r.add(Range::Short, "c"), 2);
        assert_eq!(r.len(), 3);
        assert_eq!(r.ids_in(Range::Short), vec![0, 2]);
        assert_eq!(r.id("b"), Some(1));
    }
}
