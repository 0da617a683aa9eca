use eurnet::graphbuild::{load_triplet_file, PatchGrid, ProteinChain};
use eurnet::models::{ImageModel, ImageModelConfig, KgModelConfig, ProteinEncoder, ProteinEncoderConfig};
use eurnet::params::ParamStore;
use eurnet::relgraph::RelGraph;
use eurnet::tensor::{Tape, Tensor};
use eurnet::training::{evaluate_kg, init_kg_model, toy_kinship, train_kg, KgTrainConfig};
use eurnet::verify::random_tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_image() -> ImageModelConfig {
    ImageModelConfig {
        channels: vec![4, 8, 16, 32],
        depths: vec![1, 1, 2, 1],
        medium_k: 3,
        num_classes: 5,
        ..Default::default()
    }
}

#[test]
fn tiny_image_model_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let model = ImageModel::new(&mut store, &mut rng, tiny_image()).unwrap();
    let image: Tensor<f32> = random_tensor(&mut rng, vec![32, 64, 3], 1.0);
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &store, &image).unwrap();
    assert_eq!(tape.shape(out.logits), [1, 5]);
    assert_eq!(out.stage_nodes, [8 * 16, 4 * 8, 2 * 4, 2]);
    // four directions and two virtual relations, plus medium edges after stage 1
    assert_eq!(out.stage_relations, [6, 7, 7, 7]);
}

#[test]
fn image_input_must_divide_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let model = ImageModel::new(&mut store, &mut rng, tiny_image()).unwrap();
    let mut tape = Tape::new();
    assert!(model.forward(&mut tape, &store, &Tensor::zeros(vec![30, 32, 3])).is_err());
    assert!(model.forward(&mut tape, &store, &Tensor::zeros(vec![32, 32, 1])).is_err());
}

#[test]
fn protein_encoder_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    let cfg = ProteinEncoderConfig { num_layers: 3, hidden_dim: 6, num_tasks: 4, ..Default::default() };
    let enc = ProteinEncoder::new(&mut store, &mut rng, cfg).unwrap();
    let coords: Vec<[f64; 3]> = (0..12).map(|i| [3.8 * i as f64, (i % 3) as f64, 0.0]).collect();
    let chain = ProteinChain::from_codes("MKVLAAGGHHWY", coords).unwrap();
    let mut tape = Tape::new();
    let out = enc.forward(&mut tape, &store, &chain).unwrap();
    assert_eq!(tape.shape(out.representation), [1, 18]);
    assert_eq!(tape.shape(out.logits), [1, 4]);
}

fn small_kg_config(seed: u64) -> KgTrainConfig {
    KgTrainConfig {
        model: KgModelConfig { num_layers: 2, channels: 8, scorer_hidden: 16, negatives: 4, ..Default::default() },
        epochs: 2,
        seed,
        ..Default::default()
    }
}

#[test]
fn kg_training_is_deterministic() {
    let kg = toy_kinship(3, 24).unwrap();
    let a = train_kg::<f32>(&kg, &small_kg_config(5)).unwrap();
    let b = train_kg::<f32>(&kg, &small_kg_config(5)).unwrap();
    assert_eq!(a.history, b.history);
    for id in a.store.ids() {
        assert_eq!(a.store.get(id).data(), b.store.get(id).data());
    }
    let c = train_kg::<f32>(&kg, &small_kg_config(6)).unwrap();
    assert_ne!(a.losses, c.losses);
}

#[test]
fn saved_parameters_restore_the_trained_model() {
    let kg = toy_kinship(3, 24).unwrap();
    let cfg = small_kg_config(2);
    let run = train_kg::<f64>(&kg, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.params");
    run.store.save(&path).unwrap();

    let (model, mut store) = init_kg_model::<f64>(&kg, &cfg).unwrap();
    store.load(&path).unwrap();
    let graph = std::sync::Arc::new(kg.fact_graph().unwrap());
    let again = evaluate_kg(&model, &store, &kg, &graph, &kg.test).unwrap();
    assert_eq!(again, run.test);
}

#[test]
fn file_round_trips() {
    let dir = tempfile::tempdir().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let grid = PatchGrid::new(3, 5, random_tensor::<f32, _>(&mut rng, vec![15, 4], 1.0)).unwrap();
    let mut bytes = Vec::new();
    grid.write_binary(&mut bytes).unwrap();
    let p = dir.path().join("grid.bin");
    std::fs::write(&p, &bytes).unwrap();
    let back = PatchGrid::<f32>::read_binary(&p).unwrap();
    assert_eq!((back.h, back.w), (3, 5));
    assert_eq!(back.features.data(), grid.features.data());

    let g = RelGraph::from_edges(4, 2, &[(0, 1, 0), (3, 1, 1), (2, 0, 1)]).unwrap();
    let mut text = Vec::new();
    g.write_tsv(&mut text).unwrap();
    let p = dir.path().join("edges.tsv");
    std::fs::write(&p, &text).unwrap();
    let back = RelGraph::read_tsv(&p).unwrap();
    assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
}

#[test]
fn malformed_inputs_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.tsv");
    std::fs::write(&p, "a\tr\tb\nc\tr\n").unwrap();
    let err = load_triplet_file(&p).unwrap_err();
    assert!(err.is_data_error());
    assert!(err.to_string().contains('2'), "{err}");

    let p = dir.path().join("chain.txt");
    std::fs::write(&p, "0 A 0 0 0\n1 B 1 1 1\n").unwrap();
    let err = ProteinChain::read_text(&p).unwrap_err();
    assert!(err.is_data_error(), "{err}");
}
