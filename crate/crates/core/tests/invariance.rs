use std::sync::Arc;

use eurnet::graphbuild::{protein_edges, ProteinGraphConfig};
use eurnet::layers::{Grmp, RgConv};
use eurnet::models::{ProteinEncoder, ProteinEncoderConfig};
use eurnet::params::ParamStore;
use eurnet::tensor::{Tape, Tensor};
use eurnet::verify::{
    apply_motion, grmp_variants, random_chain, random_graph, random_rigid_motion, random_tensor, randomize_params,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn permute_rows(z: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let c = z.cols();
    let mut out = Tensor::zeros(vec![z.rows(), c]);
    for (v, &p) in perm.iter().enumerate() {
        for j in 0..c {
            out.set(p, j, z.get(v, j));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Relabeling nodes permutes the output rows the same way.
    #[test]
    fn layers_are_permutation_equivariant(seed in 0u64..10_000, n in 2usize..12, r in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Arc::new(random_graph(&mut rng, n, r, 3 * n).unwrap());
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pg = Arc::new(g.permute(&perm).unwrap());

        let mut store = ParamStore::<f64>::new();
        let rg = RgConv::new(&mut store, &mut rng, "rg", 3, r).unwrap();
        let grmps: Vec<Grmp> = grmp_variants()
            .into_iter()
            .enumerate()
            .map(|(i, v)| Grmp::new(&mut store, &mut rng, &format!("g{i}"), 3, r, v).unwrap())
            .collect();
        randomize_params(&mut store, &mut rng, 0.5);
        let z: Tensor<f64> = random_tensor(&mut rng, vec![n, 3], 1.0);
        let zp = permute_rows(&z, &perm);

        let mut tape = Tape::new();
        let a = tape.constant(z).unwrap();
        let b = tape.constant(zp).unwrap();
        let mut outs = vec![(rg.forward(&mut tape, &store, &g, a).unwrap(), rg.forward(&mut tape, &store, &pg, b).unwrap())];
        for l in &grmps {
            outs.push((l.forward(&mut tape, &store, &g, a).unwrap(), l.forward(&mut tape, &store, &pg, b).unwrap()));
        }
        for (x, y) in outs {
            let expected = permute_rows(tape.value(x), &perm);
            prop_assert!(tape.value(y).max_abs_diff(&expected) < 1e-12);
        }
    }
}

#[test]
fn protein_graph_and_representation_survive_rigid_motions() {
    let cfg = ProteinGraphConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let chain = random_chain(&mut rng, 40, &cfg).unwrap();
    let base: Vec<_> = protein_edges(&chain, &cfg).unwrap().graph.edges().collect();

    let mut store = ParamStore::<f64>::new();
    let enc_cfg = ProteinEncoderConfig { num_layers: 2, hidden_dim: 8, num_tasks: 2, ..Default::default() };
    let enc = ProteinEncoder::new(&mut store, &mut rng, enc_cfg).unwrap();
    randomize_params(&mut store, &mut rng, 0.3);
    let mut tape = Tape::new();
    let rep = enc.forward(&mut tape, &store, &chain).unwrap().representation;
    let rep = tape.value(rep).clone();

    for _ in 0..25 {
        let (m, t) = random_rigid_motion(&mut rng);
        let moved = apply_motion(&chain, &m, &t).unwrap();
        let edges: Vec<_> = protein_edges(&moved, &cfg).unwrap().graph.edges().collect();
        assert_eq!(edges, base);
        let mut tape = Tape::new();
        let out = enc.forward(&mut tape, &store, &moved).unwrap().representation;
        let scale = rep.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
        assert!(tape.value(out).max_abs_diff(&rep) / scale < 1e-5);
    }
}

#[test]
fn reflections_are_included() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dets: Vec<f64> = (0..40)
        .map(|_| {
            let (m, _) = random_rigid_motion(&mut rng);
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        })
        .collect();
    assert!(dets.iter().all(|d| (d.abs() - 1.0).abs() < 1e-12));
    assert!(dets.iter().any(|&d| d < 0.0) && dets.iter().any(|&d| d > 0.0));
}
