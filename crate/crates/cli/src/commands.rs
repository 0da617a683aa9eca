use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use eurnet::costmodel::{sweep_knn_relations, write_sweep_csv, ArchCost};
use eurnet::graphbuild::{
    build_image_graph, load_triplet_file, load_triplets, protein_edges, PatchGrid, ProteinChain, RelationRegistry,
    TripletStore,
};
use eurnet::models::{fmax, metrics::read_fmax_csv};
use eurnet::relgraph::RelGraph;
use eurnet::tensor::Scalar;
use eurnet::training::{evaluate_kg, init_kg_model, toy_kinship, train_kg, write_history_csv, write_splits};
use eurnet::verify::{run_suite, Fault, Suite, VerifyOptions};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{Cli, Command, Domain, EvalCommand, FaultArg, SuiteArg};

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    eurnet::Error::Config(msg.into()).into()
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let g = &cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    cfg.command = match &cli.command {
        Command::BuildGraph { .. } => "build-graph",
        Command::BenchFlops { .. } => "bench-flops",
        Command::Verify { .. } => "verify",
        Command::TrainKg { .. } => "train-kg",
        Command::Eval(EvalCommand::Kg { .. }) => "eval-kg",
        Command::Eval(EvalCommand::Fmax { .. }) => "eval-fmax",
        Command::GenToyKg { .. } => "gen-toy-kg",
    }
    .into();
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    cfg.f64 |= g.f64;
    if g.out.is_some() {
        cfg.output = g.out.clone();
    }
    match &cli.command {
        Command::BuildGraph { input, medium_k, .. } => {
            cfg.inputs = vec![input.clone()];
            if medium_k.is_some() {
                cfg.image_graph.medium_k = *medium_k;
            }
        }
        Command::BenchFlops { k_min, k_max, resolution } => {
            cfg.flops.k_min = k_min.unwrap_or(cfg.flops.k_min);
            cfg.flops.k_max = k_max.unwrap_or(cfg.flops.k_max);
            cfg.flops.resolution = resolution.unwrap_or(cfg.flops.resolution);
        }
        Command::Verify { transforms, .. } => {
            cfg.verify.transforms = transforms.unwrap_or(cfg.verify.transforms);
        }
        Command::TrainKg { data, epochs } => {
            cfg.inputs = vec![data.clone()];
            cfg.kg.epochs = epochs.unwrap_or(cfg.kg.epochs);
        }
        Command::Eval(EvalCommand::Kg { data, model, .. }) => cfg.inputs = vec![data.clone(), model.clone()],
        Command::Eval(EvalCommand::Fmax { predictions, labels }) => {
            cfg.inputs = vec![predictions.clone(), labels.clone()]
        }
        Command::GenToyKg { people } => cfg.toy.people = people.unwrap_or(cfg.toy.people),
    }
    cfg.kg.seed = cfg.seed;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<&Path> {
    cfg.output.as_deref().ok_or_else(|| config_error(format!("`{}` needs --out", cfg.command)))
}

/// Returns `Ok(false)` when a verification check failed.
pub fn run(cli: Cli) -> anyhow::Result<bool> {
    let cfg = resolve(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::BuildGraph { domain, input, .. } => build_graph(&cfg, *domain, input).map(|_| true),
        Command::BenchFlops { .. } => bench_flops(&cfg).map(|_| true),
        Command::Verify { suite, inject_fault, .. } => verify(&cfg, *suite, *inject_fault),
        Command::TrainKg { data, .. } => match cfg.f64 {
            true => train::<f64>(&cfg, data),
            false => train::<f32>(&cfg, data),
        }
        .map(|_| true),
        Command::Eval(EvalCommand::Kg { data, model, split }) => eval_kg(&cfg, data, model, split).map(|_| true),
        Command::Eval(EvalCommand::Fmax { predictions, labels }) => eval_fmax(&cfg, predictions, labels).map(|_| true),
        Command::GenToyKg { .. } => {
            let dir = out_dir(&cfg)?;
            let store = toy_kinship(cfg.seed, cfg.toy.people)?;
            write_splits(&store, dir)?;
            println!(
                "{} people, {} relations, {}/{}/{} train/valid/test facts",
                store.num_entities(),
                store.num_base_relations(),
                store.train.len(),
                store.valid.len(),
                store.test.len()
            );
            Ok(true)
        }
    }
}

fn relation_rows(graph: &RelGraph, registry: &RelationRegistry) -> Vec<Value> {
    registry
        .relations()
        .iter()
        .map(|r| json!({"id": r.id, "name": r.name, "range": r.range, "edges": graph.relation_edge_count(r.id)}))
        .collect()
}

fn write_graph(dir: &Path, graph: &RelGraph, registry: Value) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("edges.tsv"))?);
    graph.write_tsv(&mut f)?;
    f.flush()?;
    std::fs::write(dir.join("registry.json"), serde_json::to_string_pretty(&registry)? + "\n")?;
    Ok(())
}

fn load_kg(input: &Path) -> anyhow::Result<TripletStore> {
    Ok(match input.is_dir() {
        true => load_triplets(&input.join("train.tsv"), &input.join("valid.tsv"), &input.join("test.tsv"))?,
        false => load_triplet_file(input)?,
    })
}

fn build_graph(cfg: &RunConfig, domain: Domain, input: &Path) -> anyhow::Result<()> {
    let dir = out_dir(cfg)?;
    let (graph, registry) = match domain {
        Domain::Image => {
            let grid = PatchGrid::<f64>::read_binary(input)?;
            let ig = build_image_graph(&grid, &cfg.image_graph)?;
            let virtual_nodes: Vec<Value> = match ig.long {
                Some(spec) => std::iter::once(json!({"id": spec.global_node(), "kind": "global"}))
                    .chain(
                        (0..spec.num_patches)
                            .map(|p| json!({"id": spec.context_node(p), "kind": "context", "patch": p})),
                    )
                    .collect(),
                None => Vec::new(),
            };
            let reg = json!({
                "domain": "image",
                "grid": [ig.h, ig.w],
                "num_nodes": ig.graph.num_nodes(),
                "num_edges": ig.graph.num_edges(),
                "relations": relation_rows(&ig.graph, &ig.registry),
                "virtual_nodes": virtual_nodes,
                "long_edge_spec": ig.long,
            });
            (ig.graph, reg)
        }
        Domain::Protein => {
            let chain = ProteinChain::read_text(input)?;
            let pg = protein_edges(&chain, &cfg.protein_graph)?;
            let virtual_nodes: Vec<Value> =
                pg.virtual_node.map(|v| json!({"id": v, "kind": "global"})).into_iter().collect();
            let reg = json!({
                "domain": "protein",
                "num_residues": pg.num_residues,
                "num_nodes": pg.graph.num_nodes(),
                "num_edges": pg.graph.num_edges(),
                "relations": relation_rows(&pg.graph, &pg.registry),
                "virtual_nodes": virtual_nodes,
            });
            (pg.graph, reg)
        }
        Domain::Kg => {
            let kg = load_kg(input)?;
            let graph = Arc::new(kg.fact_graph()?);
            let n = kg.num_base_relations();
            let relations: Vec<Value> = (0..kg.num_relations())
                .map(|r| {
                    let name = match r < n {
                        true => kg.relations[r].clone(),
                        false => format!("{}_inverse", kg.relations[r - n]),
                    };
                    json!({"id": r, "name": name, "edges": graph.relation_edge_count(r)})
                })
                .collect();
            let reg = json!({
                "domain": "kg",
                "num_nodes": graph.num_nodes(),
                "num_edges": graph.num_edges(),
                "entities": kg.entities,
                "relations": relations,
                "virtual_nodes": [],
            });
            (graph, reg)
        }
    };
    write_graph(dir, &graph, registry.clone())?;
    cfg.echo_into(dir)?;
    let virtual_rows = registry["virtual_nodes"].as_array().map_or(0, Vec::len);
    let summary = json!({
        "nodes": graph.num_nodes(),
        "edges": graph.num_edges(),
        "virtual_nodes": virtual_rows,
        "total": graph.num_edges() + virtual_rows,
        "relations": graph.num_relations(),
    });
    println!("{summary}");
    Ok(())
}

fn bench_flops(cfg: &RunConfig) -> anyhow::Result<()> {
    let f = &cfg.flops;
    if f.k_min == 0 || f.k_min > f.k_max {
        return Err(config_error(format!("relation range {}..={} must start at 1 or more", f.k_min, f.k_max)));
    }
    let arch = ArchCost::eurnet_t(f.resolution);
    let rows = sweep_knn_relations(&arch, f.k_min..=f.k_max)?;
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    match &cfg.output {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, &csv)?;
            for (i, (s, (g, r))) in arch.stages.iter().zip(arch.marginal_costs()).enumerate() {
                eprintln!(
                    "stage {}: {} nodes x {} channels, depth {}: one more relation costs GRMP {g}, RGConv {r}",
                    i + 1,
                    s.num_nodes,
                    s.channels,
                    s.depth
                );
            }
        }
        None => std::io::stdout().write_all(&csv)?,
    }
    Ok(())
}

fn verify(cfg: &RunConfig, suite: SuiteArg, fault: Option<FaultArg>) -> anyhow::Result<bool> {
    let suites: Vec<Suite> = match suite {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Gradcheck => vec![Suite::Gradcheck],
        SuiteArg::FlopsExact => vec![Suite::FlopsExact],
        SuiteArg::E3 => vec![Suite::E3],
        SuiteArg::Oracles => vec![Suite::Oracles],
    };
    let opts = VerifyOptions {
        seed: cfg.seed,
        e3_transforms: cfg.verify.transforms,
        fault: fault.map(|FaultArg::GrmpConstant| Fault::GrmpConstant),
    };
    let mut reports = Vec::new();
    for s in suites {
        let r = run_suite(s, &opts)?;
        for c in &r.checks {
            println!("{} {s}: {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        reports.push(r);
    }
    let passed = reports.iter().all(|r| r.passed);
    if let Some(path) = &cfg.output {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let report = json!({"passed": passed, "seed": cfg.seed, "suites": reports});
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    println!("{}", if passed { "all checks passed" } else { "verification FAILED" });
    Ok(passed)
}

fn write_metrics(path: &Path, split: &str, metrics: &eurnet::models::RankingMetrics) -> anyhow::Result<()> {
    let mut s = String::from("split,metric,value\n");
    for (k, v) in metrics.named() {
        s += &format!("{split},{k},{v}\n");
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn train<T: Scalar>(cfg: &RunConfig, data: &Path) -> anyhow::Result<()> {
    let dir = out_dir(cfg)?;
    let kg = load_kg(data)?;
    let result = train_kg::<T>(&kg, &cfg.kg)?;
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("history.csv"))?);
    write_history_csv(&result.history, &mut f)?;
    f.flush()?;
    write_metrics(&dir.join("metrics.csv"), "test", &result.test)?;
    result.store.save(&dir.join("model.params"))?;
    cfg.echo_into(dir)?;
    let t = &result.test;
    println!(
        "test: MR {:.3} MRR {:.4} Hits@1 {:.4} Hits@3 {:.4} Hits@10 {:.4} ({} queries)",
        t.mr, t.mrr, t.hits1, t.hits3, t.hits10, t.queries
    );
    Ok(())
}

fn eval_kg(cfg: &RunConfig, data: &Path, model_dir: &Path, split: &str) -> anyhow::Result<()> {
    let trained = RunConfig::load(Some(&model_dir.join("config.toml")))?;
    let kg = load_kg(data)?;
    let triplets = match split {
        "train" => &kg.train,
        "valid" => &kg.valid,
        "test" => &kg.test,
        other => return Err(config_error(format!("unknown split `{other}` (expected train, valid or test)"))),
    };
    let graph = Arc::new(kg.fact_graph()?);
    let params: PathBuf = model_dir.join("model.params");
    let metrics = match trained.f64 {
        true => {
            let (model, mut store) = init_kg_model::<f64>(&kg, &trained.kg)?;
            store.load(&params)?;
            evaluate_kg(&model, &store, &kg, &graph, triplets)?
        }
        false => {
            let (model, mut store) = init_kg_model::<f32>(&kg, &trained.kg)?;
            store.load(&params)?;
            evaluate_kg(&model, &store, &kg, &graph, triplets)?
        }
    };
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
        write_metrics(&dir.join("metrics.csv"), split, &metrics)?;
        cfg.echo_into(dir)?;
    }
    for (k, v) in metrics.named() {
        println!("{split},{k},{v}");
    }
    Ok(())
}

fn eval_fmax(cfg: &RunConfig, predictions: &Path, labels: &Path) -> anyhow::Result<()> {
    let (scores, truth) = read_fmax_csv(predictions, labels)?;
    let f = fmax(&scores, &truth)?;
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), format!("metric,value\nfmax,{f}\n"))?;
        cfg.echo_into(dir)?;
    }
    println!("fmax,{f}");
    Ok(())
}
