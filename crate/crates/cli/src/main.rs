use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acvae_core::dataset::{
    format_edge_list, format_features, generate_synthetic, load_dataset_with, read_edge_list,
    read_features, save_dataset, tfidf, Dataset, EdgeListOptions, SyntheticSpec,
};
use acvae_core::eval::{distances_for_mode, rank_targets, split_edges, write_matrix};
use acvae_core::graph::{Graph, SpanningForest};
use acvae_core::neural::Posteriors;
use acvae_core::oracle;
use acvae_core::trainer::{train, write_metrics_log, Checkpoint, Mode, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser)]
#[command(name = "acvae", version, about = "Adaptive correlated VAEs for graph-structured data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-partition dataset (edges.tsv, features.tsv).
    Generate(GenerateArgs),
    /// Hold out test edges (train_edges.tsv, test_edges.tsv).
    Split(SplitArgs),
    /// Train one model; writes checkpoint.json, metrics.jsonl and config.txt.
    Train(TrainArgs),
    /// Rank held-out edges with a trained checkpoint.
    Eval(EvalArgs),
    /// Train a matrix of modes and seeds and summarize test NCRR.
    Compare(CompareArgs),
    /// Embedding means, forest correlations and the distance matrix.
    Export(ExportArgs),
    /// Run brute-force verification suites.
    Oracle(OracleArgs),
    /// Feature preprocessing.
    Features {
        #[command(subcommand)]
        command: FeatureCommand,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    clusters: usize,
    #[arg(long, default_value_t = 0.08)]
    p_intra: f64,
    #[arg(long, default_value_t = 0.001)]
    p_inter: f64,
    #[arg(long, default_value_t = 120)]
    vocab: usize,
    #[arg(long, default_value_t = 20)]
    doc_length: usize,
    #[arg(long, default_value_t = 0.1)]
    topic_strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArgs {
    /// Tab-separated edge list (`u<TAB>v`, lone ids declare vertices).
    #[arg(long)]
    edges: PathBuf,
    /// Sparse `node<TAB>index<TAB>value` triplets or dense CSV with a `node,` header.
    #[arg(long)]
    features: PathBuf,
    /// Keep an edge only when both directions are listed.
    #[arg(long)]
    bidirectional_only: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let opts = EdgeListOptions {
            bidirectional_only: self.bidirectional_only,
        };
        load_dataset_with(&self.edges, &self.features, opts)
            .with_context(|| format!("loading {} and {}", self.edges.display(), self.features.display()))
    }
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Training flags; each overrides the config file, which overrides defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long = "latent-dim", short = 'd')]
    latent_dim: Option<usize>,
    #[arg(long)]
    h1: Option<usize>,
    #[arg(long)]
    h2: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    b1: Option<usize>,
    #[arg(long)]
    b2: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Forest sense of the saddle update (`min` or `max`).
    #[arg(long)]
    mst_sense: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        let flags: [(&str, Option<String>); 15] = [
            ("mode", self.mode.clone()),
            ("latent_dim", self.latent_dim.map(|v| v.to_string())),
            ("h1", self.h1.map(|v| v.to_string())),
            ("h2", self.h2.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("b1", self.b1.map(|v| v.to_string())),
            ("b2", self.b2.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("eval_every", self.eval_every.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("mst_sense", self.mst_sense.clone()),
            ("samples", self.samples.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).with_context(|| format!("flag --{}", key.replace('_', "-")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Held-out edges, reported as test NCRR during training.
    #[arg(long)]
    test_edges: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    test_edges: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Use forest-edge pairs and independent pairs elsewhere instead of
    /// refined marginals (adaptive modes only).
    #[arg(long)]
    no_refine: bool,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Full edge list; held-out edges are split off with `--split-seed`.
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "vae,cvae_ind,cvae_corr,acvae_saddle,acvae_eb")]
    modes: Vec<String>,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
    /// JSON summary path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// One of forest, gaussian, gradient, pi, objective, bp, ranking or all.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum FeatureCommand {
    /// Reweight count features by TF-IDF.
    Tfidf {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_heldout(path: &Path, data: &Dataset) -> Result<Vec<(usize, usize)>> {
    let list = read_edge_list(path, Some(&data.vertex_ids), EdgeListOptions::default())
        .with_context(|| format!("reading held-out edges {}", path.display()))?;
    let mut edges = Vec::new();
    for (a, b) in list.edges {
        if a == b {
            continue;
        }
        let e = (a.min(b), a.max(b));
        if data.graph.has_edge(e.0, e.1) {
            bail!("held-out edge {}-{} is also a training edge", data.vertex_ids[a], data.vertex_ids[b]);
        }
        edges.push(e);
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

fn checkpoint_forest(ck: &Checkpoint, g: &Graph) -> Result<Option<SpanningForest>> {
    let (_, forest) = ck.selected();
    Ok(match forest {
        Some(idx) => Some(SpanningForest::from_edge_indices(g, idx.to_vec())?),
        None => None,
    })
}

fn load_checkpoint(path: &Path, data: &Dataset) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ck.params.arch.input_dim != data.features.dim() {
        bail!(
            "checkpoint expects {} feature columns, dataset has {}",
            ck.params.arch.input_dim,
            data.features.dim()
        );
    }
    Ok(ck)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_vertices: args.n,
        n_clusters: args.clusters,
        p_intra: args.p_intra,
        p_inter: args.p_inter,
        vocab: args.vocab,
        doc_length: args.doc_length,
        topic_strength: args.topic_strength,
        seed: args.seed,
    };
    let ds = generate_synthetic(&spec)?;
    create_dir(&args.out_dir)?;
    save_dataset(&ds, &args.out_dir.join("edges.tsv"), &args.out_dir.join("features.tsv"))?;
    println!(
        "{} vertices, {} edges, {} components",
        ds.n_vertices(),
        ds.graph.n_edges(),
        ds.graph.n_components()
    );
    Ok(())
}

fn split(args: SplitArgs) -> Result<()> {
    let ds = args.data.load()?;
    let s = split_edges(&ds.graph, args.seed);
    create_dir(&args.out_dir)?;
    fs::write(
        args.out_dir.join("train_edges.tsv"),
        format_edge_list(&ds.vertex_ids, s.train_graph.edges()),
    )?;
    fs::write(
        args.out_dir.join("test_edges.tsv"),
        format_edge_list(&ds.vertex_ids, &s.test_edges),
    )?;
    println!("{} train edges, {} held out", s.train_graph.n_edges(), s.test_edges.len());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let ds = args.data.load()?;
    let heldout = match &args.test_edges {
        Some(p) => read_heldout(p, &ds)?,
        None => Vec::new(),
    };
    let out = train(&cfg, &ds, &heldout)?;
    create_dir(&args.out_dir)?;
    Checkpoint::from_outcome(&out).save(&args.out_dir.join("checkpoint.json"))?;
    write_metrics_log(&args.out_dir.join("metrics.jsonl"), &out.log)?;
    fs::write(args.out_dir.join("config.txt"), cfg.to_text())?;
    if let Some(reason) = &out.aborted {
        eprintln!("training stopped early: {reason}");
    }
    match out.best_test_ncrr() {
        Some(x) => println!("{}: final objective {:.4}, test NCRR {x:.4}", cfg.mode, out.final_objective.total),
        None => println!("{}: final objective {:.4}", cfg.mode, out.final_objective.total),
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let ds = args.data.load()?;
    let heldout = read_heldout(&args.test_edges, &ds)?;
    let ck = load_checkpoint(&args.checkpoint, &ds)?;
    let forest = checkpoint_forest(&ck, &ds.graph)?;
    let (params, _) = ck.selected();
    let dist = distances_for_mode(
        ck.config.mode,
        params,
        ds.features.rows(),
        &ds.graph,
        forest.as_ref(),
        !args.no_refine,
    )?;
    let report = rank_targets(&dist, &heldout, &ds.graph)?;
    let per_vertex: Vec<_> = (0..ds.n_vertices())
        .filter_map(|v| {
            report.ncrr[v].map(|x| {
                json!({
                    "vertex": ds.vertex_ids[v],
                    "targets": report.targets[v],
                    "candidates": report.candidates[v],
                    "crr": report.crr[v],
                    "ncrr": x,
                })
            })
        })
        .collect();
    let doc = json!({
        "mode": ck.config.mode.name(),
        "refined": ck.config.mode.adaptive() && !args.no_refine,
        "checkpoint_epoch": ck.best.as_ref().map(|b| b.epoch),
        "mean_ncrr": report.mean_ncrr,
        "ranked_vertices": report.n_ranked(),
        "heldout_edges": heldout.len(),
        "per_vertex": per_vertex,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    match &args.out {
        Some(p) => {
            fs::write(p, text)?;
            println!("mean NCRR {:.4} over {} vertices", report.mean_ncrr, report.n_ranked());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn compare(args: CompareArgs) -> Result<()> {
    let base = args.config.resolve()?;
    let modes = args
        .modes
        .iter()
        .map(|m| m.parse::<Mode>())
        .collect::<acvae_core::Result<Vec<_>>>()?;
    if args.seeds == 0 {
        bail!("--seeds must be positive");
    }
    let full = args.data.load()?;
    let s = split_edges(&full.graph, args.split_seed);
    let ds = full.with_graph(s.train_graph.clone())?;
    let cells: Vec<(Mode, u64)> = modes
        .iter()
        .flat_map(|&m| (0..args.seeds).map(move |k| (m, base.seed + k)))
        .collect();
    let results: Vec<(Mode, u64, f64, f64)> = cells
        .par_iter()
        .map(|&(mode, seed)| {
            let cfg = TrainConfig { mode, seed, ..base.clone() };
            let out = train(&cfg, &ds, &s.test_edges)?;
            if let Some(reason) = &out.aborted {
                bail!("{mode} seed {seed}: training stopped early: {reason}");
            }
            let ncrr = out.best_test_ncrr().context("no evaluation recorded")?;
            Ok((mode, seed, ncrr, out.final_objective.total))
        })
        .collect::<Result<_>>()?;

    println!("{:<14} {:>20} {:>16}", "mode", "test NCRR", "train objective");
    let mut rows = Vec::new();
    for &mode in &modes {
        let mine: Vec<_> = results.iter().filter(|r| r.0 == mode).collect();
        let ncrr: Vec<f64> = mine.iter().map(|r| r.2).collect();
        let obj: Vec<f64> = mine.iter().map(|r| r.3).collect();
        let (m, sd) = mean_std(&ncrr);
        let (om, _) = mean_std(&obj);
        println!("{:<14} {:>11.4} ± {:<6.4} {:>16.2}", mode.name(), m, sd, om);
        rows.push(json!({
            "mode": mode.name(),
            "mean_ncrr": m,
            "std_ncrr": sd,
            "mean_objective": om,
            "seeds": mine.iter().map(|r| json!({"seed": r.1, "ncrr": r.2, "objective": r.3})).collect::<Vec<_>>(),
        }));
    }
    if let Some(p) = &args.out {
        fs::write(p, serde_json::to_string_pretty(&json!({ "rows": rows }))?)?;
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let ds = args.data.load()?;
    let ck = load_checkpoint(&args.checkpoint, &ds)?;
    let forest = checkpoint_forest(&ck, &ds.graph)?;
    let (params, _) = ck.selected();
    let rows = ds.features.rows();
    create_dir(&args.out_dir)?;

    let post = Posteriors::compute(params, rows, ck.config.mode.correlated());
    let d = params.latent_dim();
    let means: Vec<f64> = post.singletons().iter().flat_map(|q| q.mean.iter().copied()).collect();
    let file = fs::File::create(args.out_dir.join("means.bin"))?;
    write_matrix(std::io::BufWriter::new(file), ds.n_vertices(), d, &means)?;

    if let Some(f) = &forest {
        let mut text = String::from("# u\tv\trho per latent dimension\n");
        for &e in f.edge_indices() {
            let (i, j) = ds.graph.edges()[e];
            let rho: Vec<String> = post.rho(i, j).iter().map(|r| r.to_string()).collect();
            text.push_str(&format!("{}\t{}\t{}\n", ds.vertex_ids[i], ds.vertex_ids[j], rho.join("\t")));
        }
        fs::write(args.out_dir.join("forest.tsv"), text)?;
    }
    let dist = distances_for_mode(ck.config.mode, params, rows, &ds.graph, forest.as_ref(), true)?;
    dist.save(&args.out_dir.join("distances.bin"))?;
    fs::write(args.out_dir.join("vertices.txt"), ds.vertex_ids.join("\n") + "\n")?;
    println!("exported {} vertices to {}", ds.n_vertices(), args.out_dir.display());
    Ok(())
}

fn oracle_cmd(args: OracleArgs) -> Result<bool> {
    let reports = oracle::run_suite(&args.suite, args.seed)?;
    let mut ok = true;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAILED" };
        println!(
            "{status:<6} {:<58} cases {:>5}  failures {:>3}  worst {:.3e}  tolerance {:.0e}",
            r.name, r.cases, r.failures, r.worst, r.tolerance
        );
        ok &= r.passed();
    }
    Ok(ok)
}

fn tfidf_cmd(edges: &Path, input: &Path, output: &Path) -> Result<()> {
    let list = read_edge_list(edges, None, EdgeListOptions::default())?;
    let features = read_features(input, &list.vertex_ids)?;
    fs::write(output, format_features(&list.vertex_ids, &tfidf(&features)))?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate(a) => generate(a)?,
        Command::Split(a) => split(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Eval(a) => eval_cmd(a)?,
        Command::Compare(a) => compare(a)?,
        Command::Export(a) => export(a)?,
        Command::Oracle(a) => return oracle_cmd(a),
        Command::Features {
            command: FeatureCommand::Tfidf { edges, input, output },
        } => tfidf_cmd(&edges, &input, &output)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
