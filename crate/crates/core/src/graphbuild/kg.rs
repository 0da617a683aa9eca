//! Knowledge-graph triplets and the fact graph used for message passing.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::relgraph::{Edge, RelGraph};

/// `(head, relation, tail)` over integer ids. Relation ids below
/// [`TripletStore::num_base_relations`] are the original relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Triplet {
    pub h: usize,
    pub r: usize,
    pub t: usize,
}

impl Triplet {
    pub fn new(h: usize, r: usize, t: usize) -> Self {
        Self { h, r, t }
    }
}

/// Vocabularies shared by all splits, and the split triplets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripletStore {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub train: Vec<Triplet>,
    pub valid: Vec<Triplet>,
    pub test: Vec<Triplet>,
}

#[derive(Default)]
struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn id(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }
}

fn read_split(path: &Path, ents: &mut Vocab, rels: &mut Vocab) -> Result<Vec<Triplet>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim_end_matches(['\r', '\n']);
        if t.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = t.split('\t').collect();
        if f.len() != 3 || f.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected `head<TAB>relation<TAB>tail`, got {} field(s)", f.len()),
            ));
        }
        let (h, r, tl) = (f[0].trim(), f[1].trim(), f[2].trim());
        out.push(Triplet::new(ents.id(h), rels.id(r), ents.id(tl)));
    }
    Ok(out)
}

/// Loads the three splits. Vocabularies are built from all of them, in
/// first-appearance order over train, valid, test.
pub fn load_triplets(train: &Path, valid: &Path, test: &Path) -> Result<TripletStore> {
    let mut ents = Vocab::default();
    let mut rels = Vocab::default();
    let train = read_split(train, &mut ents, &mut rels)?;
    let valid = read_split(valid, &mut ents, &mut rels)?;
    let test = read_split(test, &mut ents, &mut rels)?;
    let store = TripletStore { entities: ents.names, relations: rels.names, train, valid, test };
    store.validate()?;
    Ok(store)
}

/// Loads a single file as the training split, with empty valid and test
/// splits.
pub fn load_triplet_file(path: &Path) -> Result<TripletStore> {
    let mut ents = Vocab::default();
    let mut rels = Vocab::default();
    let train = read_split(path, &mut ents, &mut rels)?;
    let store = TripletStore { entities: ents.names, relations: rels.names, train, ..Default::default() };
    store.validate()?;
    Ok(store)
}

impl TripletStore {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relation count after adding one inverse per relation.
    pub fn num_relations(&self) -> usize {
        2 * self.relations.len()
    }

    pub fn inverse(&self, r: usize) -> usize {
        let n = self.relations.len();
        if r < n {
            r + n
        } else {
            r - n
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Data("the training split is empty".into()));
        }
        for t in self.train.iter().chain(&self.valid).chain(&self.test) {
            if t.h >= self.num_entities() || t.t >= self.num_entities() {
                return Err(Error::Index { what: "entity", index: t.h.max(t.t), bound: self.num_entities() });
            }
            if t.r >= self.num_base_relations() {
                return Err(Error::Index { what: "relation", index: t.r, bound: self.num_base_relations() });
            }
        }
        Ok(())
    }

    /// Message-passing graph over training facts: an edge `h → t` under `r`
    /// and `t → h` under the inverse of `r`, duplicates merged.
    pub fn fact_graph(&self) -> Result<RelGraph> {
        let edges: Vec<Edge> = self
            .train
            .iter()
            .flat_map(|t| [Edge::new(t.h, t.t, t.r), Edge::new(t.t, t.h, self.inverse(t.r))])
            .collect();
        RelGraph::from_edges_dedup(self.num_entities(), self.num_relations(), &edges)
    }

    /// Every known true triplet across splits, with inverses.
    pub fn all_true(&self) -> std::collections::HashSet<Triplet> {
        self.train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .flat_map(|t| [*t, Triplet::new(t.t, self.inverse(t.r), t.h)])
            .collect()
    }

    /// Writes one split as `head<TAB>relation<TAB>tail` names.
    pub fn write_split<W: Write>(&self, split: &[Triplet], w: &mut W) -> Result<()> {
        for t in split {
            writeln!(w, "{}\t{}\t{}", self.entities[t.h], self.relations[t.r], self.entities[t.t])?;
        }
        Ok(())
    }
}
