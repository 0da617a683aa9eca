use std::sync::Arc;

use eurnet::layers::{ContextStack, ContextStackConfig, Ffn, Grmp, GrmpVariant, LayerNorm, PatchMerging};
use eurnet::models::{ImageModel, ImageModelConfig, KgModel, KgModelConfig};
use eurnet::params::{ParamId, ParamStore};
use eurnet::tensor::gradcheck::{check_gradients, check_param_gradients, weighted_sum};
use eurnet::tensor::Tensor;
use eurnet::training::toy_kinship;
use eurnet::verify::{random_graph, random_tensor, randomize_params, GRADCHECK_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_ids(store: &ParamStore<f64>) -> Vec<ParamId> {
    store.ids().collect()
}

#[test]
fn layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let ln = LayerNorm::new(&mut store, "ln", 6).unwrap();
    let x = store.add("x", random_tensor(&mut rng, vec![4, 6], 1.5)).unwrap();
    randomize_params(&mut store, &mut rng, 0.8);
    let r = check_param_gradients(&store, &all_ids(&store), usize::MAX, |tape, s| {
        let xv = tape.param(s, x)?;
        let y = ln.forward(tape, s, xv)?;
        weighted_sum(tape, y, 1)
    })
    .unwrap();
    assert!(r.max_rel_err < GRADCHECK_TOL, "{r:?}");
}

#[test]
fn feed_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let ffn = Ffn::new(&mut store, &mut rng, "ffn", 3, 4).unwrap();
    let x = store.add("x", random_tensor(&mut rng, vec![5, 3], 1.0)).unwrap();
    randomize_params(&mut store, &mut rng, 0.6);
    let r = check_param_gradients(&store, &all_ids(&store), usize::MAX, |tape, s| {
        let xv = tape.param(s, x)?;
        let y = ffn.forward(tape, s, xv)?;
        weighted_sum(tape, y, 2)
    })
    .unwrap();
    assert!(r.max_rel_err < GRADCHECK_TOL, "{r:?}");
}

#[test]
fn context_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let cfg = ContextStackConfig { kernel_sizes: vec![3, 5], activation: true };
    let ctx = ContextStack::new(&mut store, &mut rng, "ctx", 2, cfg).unwrap();
    let (h, w) = (4, 5);
    let z = store.add("z", random_tensor(&mut rng, vec![h * w, 2], 1.0)).unwrap();
    randomize_params(&mut store, &mut rng, 0.5);
    let r = check_param_gradients(&store, &all_ids(&store), usize::MAX, |tape, s| {
        let zv = tape.param(s, z)?;
        let y = ctx.forward(tape, s, zv, h, w)?;
        weighted_sum(tape, y, 3)
    })
    .unwrap();
    assert!(r.max_rel_err < GRADCHECK_TOL, "{r:?}");
}

#[test]
fn patch_merging() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let merge = PatchMerging::new(&mut store, &mut rng, "merge", 2).unwrap();
    let z = store.add("z", random_tensor(&mut rng, vec![4 * 6, 2], 1.0)).unwrap();
    randomize_params(&mut store, &mut rng, 0.5);
    let r = check_param_gradients(&store, &all_ids(&store), usize::MAX, |tape, s| {
        let zv = tape.param(s, z)?;
        let (y, h, w) = merge.forward(tape, s, zv, 4, 6)?;
        assert_eq!((h, w), (2, 3));
        weighted_sum(tape, y, 4)
    })
    .unwrap();
    assert!(r.max_rel_err < GRADCHECK_TOL, "{r:?}");
}

#[test]
fn elementwise_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Tensor<f64> = random_tensor(&mut rng, vec![3, 4], 1.0);
    let b: Tensor<f64> = random_tensor(&mut rng, vec![4, 2], 1.0);
    let r = check_gradients(&[a, b], |tape, v| {
        let m = tape.matmul(v[0], v[1])?;
        let g = tape.gelu(m)?;
        let s = tape.sigmoid(m)?;
        let p = tape.hadamard(g, s)?;
        let ce = tape.cross_entropy(p, &[1, 0, 1])?;
        let flat = tape.reshape(m, vec![6, 1])?;
        let bce = tape.bce_with_logits(flat, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0], &[0.5, 0.1, 0.1, 0.1, 0.1, 0.1])?;
        tape.add(ce, bce)
    })
    .unwrap();
    assert!(r.max_rel_err < GRADCHECK_TOL, "{r:?}");
}

#[test]
fn grmp_with_virtual_rows_and_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let graph = Arc::new(random_graph(&mut rng, 6, 2, 12).unwrap());
    let mut store = ParamStore::<f64>::new();
    let layer = Grmp::new(&mut store, &mut rng, "g", 3, 2, GrmpVariant::default()).unwrap();
    let norm = LayerNorm::new(&mut store, "n", 3).unwrap();
    let z = store.add("z", random_tensor(&mut rng, vec![6, 3], 1.0)).unwrap();
    randomize_params(&mut store, &mut rng, 0.6);
    let r = check_param_gradients(&store, &all_ids(&store), usize::MAX, |tape, s| {
        let zv = tape.param(s, z)?;
        let y = layer.forward(tape, s, &graph, zv)?;
        let y = norm.forward(tape, s, y)?;
        let y = tape.add(zv, y)?;
        weighted_sum(tape, y, 6)
    })
    .unwrap();
    assert!(r.max_rel_err < GRADCHECK_TOL, "{r:?}");
}

#[test]
fn kg_model_score() {
    let kg = toy_kinship(1, 12).unwrap();
    let graph = Arc::new(kg.fact_graph().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new();
    let cfg = KgModelConfig { num_layers: 2, channels: 3, scorer_hidden: 4, ..Default::default() };
    let model = KgModel::for_store(&mut store, &mut rng, cfg, &kg).unwrap();
    randomize_params(&mut store, &mut rng, 0.5);
    let batch: Vec<_> = kg.train.iter().take(6).copied().collect();
    // a limited sample of each parameter keeps the check quick
    let r = check_param_gradients(&store, &all_ids(&store), 12, |tape, s| {
        let reps = model.entity_reps(tape, s, &graph)?;
        let logits = model.score(tape, s, reps, &batch)?;
        tape.bce_with_logits(logits, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &[1.0 / 6.0; 6])
    })
    .unwrap();
    assert!(r.max_rel_err < GRADCHECK_TOL, "{r:?}");
}

#[test]
fn tiny_image_model_classification_loss() {
    let cfg = ImageModelConfig {
        channels: vec![2, 4, 8, 16],
        depths: vec![1, 1, 1, 1],
        patch_size: 1,
        medium_k: 2,
        ffn_ratio: 2,
        num_classes: 3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let model = ImageModel::new(&mut store, &mut rng, cfg).unwrap();
    randomize_params(&mut store, &mut rng, 0.4);
    let image: Tensor<f64> = random_tensor(&mut rng, vec![8, 8, 3], 1.0);
    let r = check_param_gradients(&store, &all_ids(&store), 6, |tape, s| {
        let out = model.forward(tape, s, &image)?;
        tape.cross_entropy(out.logits, &[2])
    })
    .unwrap();
    assert!(r.max_rel_err < GRADCHECK_TOL, "{r:?}");
}
