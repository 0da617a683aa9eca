//! Seeded kinship-style knowledge graph: people in random family trees with
//! direct and composite family relations.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graphbuild::{Triplet, TripletStore};

pub const KINSHIP_RELATIONS: [&str; 9] = [
    "spouse_of",
    "parent_of",
    "child_of",
    "sibling_of",
    "grandparent_of",
    "grandchild_of",
    "aunt_or_uncle_of",
    "niece_or_nephew_of",
    "cousin_of",
];

/// Largest family tree before a new one is started.
const TREE_SIZE: usize = 25;
const GENERATIONS: usize = 3;

struct Person {
    parents: Option<(usize, usize)>,
}

fn grow_trees(rng: &mut ChaCha8Rng, num_people: usize) -> (Vec<Person>, Vec<(usize, usize)>) {
    let mut people: Vec<Person> = Vec::new();
    let mut couples = Vec::new();
    while people.len() + 2 <= num_people {
        let tree_start = people.len();
        let a = people.len();
        people.push(Person { parents: None });
        people.push(Person { parents: None });
        couples.push((a, a + 1));
        let mut queue = vec![((a, a + 1), 0usize)];
        let mut qi = 0;
        while qi < queue.len() {
            let ((p, q), gen) = queue[qi];
            qi += 1;
            if gen >= GENERATIONS {
                continue;
            }
            for _ in 0..rng.random_range(1..=3) {
                if people.len() >= num_people || people.len() - tree_start >= TREE_SIZE {
                    break;
                }
                let child = people.len();
                people.push(Person { parents: Some((p, q)) });
                let room = people.len() < num_people && people.len() - tree_start < TREE_SIZE;
                if gen + 1 < GENERATIONS && room && rng.random_bool(0.7) {
                    let spouse = people.len();
                    people.push(Person { parents: None });
                    couples.push((child, spouse));
                    queue.push(((child, spouse), gen + 1));
                }
            }
        }
    }
    // an odd person out joins the last couple as a child
    if people.len() < num_people {
        let parents = couples.last().copied();
        people.push(Person { parents });
    }
    (people, couples)
}

/// All facts of the generated population, sorted.
fn kinship_facts(people: &[Person], couples: &[(usize, usize)]) -> BTreeSet<(usize, usize, usize)> {
    let n = people.len();
    let rel = |name: &str| KINSHIP_RELATIONS.iter().position(|&r| r == name).unwrap();
    let parents_of = |c: usize| -> Vec<usize> { people[c].parents.map_or(vec![], |(a, b)| vec![a, b]) };
    let siblings = |x: usize, y: usize| x != y && people[x].parents.is_some() && people[x].parents == people[y].parents;

    let mut facts = BTreeSet::new();
    for &(a, b) in couples {
        facts.insert((a, rel("spouse_of"), b));
        facts.insert((b, rel("spouse_of"), a));
    }
    for c in 0..n {
        for p in parents_of(c) {
            facts.insert((p, rel("parent_of"), c));
            facts.insert((c, rel("child_of"), p));
            for g in parents_of(p) {
                facts.insert((g, rel("grandparent_of"), c));
                facts.insert((c, rel("grandchild_of"), g));
            }
        }
    }
    for x in 0..n {
        for y in 0..n {
            if siblings(x, y) {
                facts.insert((x, rel("sibling_of"), y));
            }
            // y is a child of one of x's siblings
            if parents_of(y).iter().any(|&p| siblings(x, p)) {
                facts.insert((x, rel("aunt_or_uncle_of"), y));
                facts.insert((y, rel("niece_or_nephew_of"), x));
            }
            let px = parents_of(x);
            let py = parents_of(y);
            if px.iter().any(|&a| py.iter().any(|&b| siblings(a, b))) {
                facts.insert((x, rel("cousin_of"), y));
            }
        }
    }
    facts
}

/// Generates `num_people` people in family trees and splits their facts
/// 80/10/10 into train, valid and test.
pub fn toy_kinship(seed: u64, num_people: usize) -> Result<TripletStore> {
    if num_people < 2 {
        return Err(Error::Config("a kinship graph needs at least two people".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (people, couples) = grow_trees(&mut rng, num_people);
    let mut facts: Vec<_> = kinship_facts(&people, &couples).into_iter().collect();
    facts.shuffle(&mut rng);
    let n_valid = facts.len() / 10;
    let n_test = facts.len() / 10;
    let n_train = facts.len() - n_valid - n_test;
    let to_triplets = |s: &[(usize, usize, usize)]| s.iter().map(|&(h, r, t)| Triplet::new(h, r, t)).collect();
    let store = TripletStore {
        entities: (0..people.len()).map(|i| format!("person{i:03}")).collect(),
        relations: KINSHIP_RELATIONS.iter().map(|s| s.to_string()).collect(),
        train: to_triplets(&facts[..n_train]),
        valid: to_triplets(&facts[n_train..n_train + n_valid]),
        test: to_triplets(&facts[n_train + n_valid..]),
    };
    store.validate()?;
    Ok(store)
}

/// Writes `train.tsv`, `valid.tsv` and `test.tsv` into `dir`.
pub fn write_splits(store: &TripletStore, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, split) in [("train", &store.train), ("valid", &store.valid), ("test", &store.test)] {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}.tsv")))?);
        store.write_split(split, &mut f)?;
        std::io::Write::flush(&mut f)?;
    }
    Ok(())
}
