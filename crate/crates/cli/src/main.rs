//! `head`: batch driver for preparing data, training, evaluation,
//! visualisation, self-checks and grid search.

mod manifest;
mod workspace;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use head::config::{parse_switch, RunConfig};
use head::data::{load_reviews, seeded_rng, split_dataset, Domain, RecordKeys, SplitSpec};
use head::embedding::DEFAULT_DIM;
use head::evaluation::selfcheck::{fd_check, geometry_checks, grl_exact, operator_cases};
use head::evaluation::viz::{degree_radius_rows, rows_to_csv, VizRow};
use head::evaluation::{check_theorems, generate_synthetic, CheckOptions, EvalReport, SyntheticSpec};
use head::model::{checkpoint, ModelConfig, ModelParams};
use head::training::{fit, grid_search, loss_curves_csv, GridResult};
use head::{Error, ErrorClass};

use manifest::{io_error, Manifest};
use workspace::{EmbeddingSource, Loaded};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_CHECK: u8 = 5;

#[derive(Parser)]
#[command(name = "head", version, about = "Hyperbolic review-based cross-domain recommendation")]
struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true, env = "HEAD_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the target domain 80/10/10 and write partitions, degree
    /// tables and the vocabulary.
    Prepare(PrepareArgs),
    /// Train a model on a prepared directory.
    Train(TrainArgs),
    /// Score the test partition and write the evaluation report.
    Eval(EvalArgs),
    /// Export degree, Poincaré radius and 2-d coordinates of sampled items.
    Viz(VizArgs),
    /// Run the geometry, gradient and analytic property checks.
    Check(CheckArgs),
    /// Train one model per (lambda1, lambda2) cell.
    Grid(GridArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Source-domain review file (one JSON object per line).
    #[arg(long, required_unless_present = "synthetic")]
    source: Option<PathBuf>,
    /// Target-domain review file.
    #[arg(long, required_unless_present = "synthetic")]
    target: Option<PathBuf>,
    /// Generate the desk-scale synthetic pair instead of reading files.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    synthetic: bool,
    /// Topics the synthetic domains share.
    #[arg(long, requires = "synthetic")]
    shared_topics: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Prepared directory.
    #[arg(long)]
    data: PathBuf,
    /// `synthetic`, or a word-vector file with `token v1 ... vd` lines.
    #[arg(long, default_value = "synthetic")]
    embedding: String,
    /// Geometry of the vectors in an embedding file.
    #[arg(long, default_value = "euclidean", value_parser = ["euclidean", "poincare"])]
    embedding_geometry: String,
    /// Dimension of synthetic word vectors.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    embed_dim: usize,
    /// Flat key = value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = switch)]
    aligned: Option<bool>,
    #[arg(long, value_parser = switch)]
    degree_norm: Option<bool>,
    #[arg(long, value_parser = switch)]
    use_source: Option<bool>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    patience: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    filters_per_width: Option<usize>,
    #[arg(long)]
    doc_cap: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "0.01,0.05,0.1,0.5,1.0", value_delimiter = ',')]
    lambda1_grid: Vec<f64>,
    #[arg(long, default_value = "0.01,0.05,0.1,0.5,1.0", value_delimiter = ',')]
    lambda2_grid: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for `report.txt`; the report always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    candidates: Option<usize>,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Items to sample.
    #[arg(long, default_value_t = 1000)]
    limit: usize,
    /// Upper edges of the degree bands in the summary.
    #[arg(long, default_value = "5,10,20", value_delimiter = ',')]
    bands: Vec<u32>,
}

#[derive(Args)]
struct CheckArgs {
    /// Check a trained model instead of a fresh one.
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    /// Prepared directory supplying degrees and features.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_grl_bug: bool,
}

fn switch(s: &str) -> Result<bool, String> {
    parse_switch(s).ok_or_else(|| format!("expected on or off, got {s:?}"))
}

/// A failure together with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Usage => EXIT_USAGE,
            ErrorClass::InputOutput => EXIT_IO,
            ErrorClass::Numerical => EXIT_NUMERICAL,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn create_dir(path: &Path) -> head::Result<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn write_file(path: &Path, text: &str) -> head::Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn prepare(args: &PrepareArgs, seed: u64) -> Outcome {
    let mut manifest = Manifest::new("prepare", seed);
    let (source, target) = if args.synthetic {
        let spec = SyntheticSpec {
            shared_topics: args.shared_topics.unwrap_or(SyntheticSpec::desk(seed).shared_topics),
            ..SyntheticSpec::desk(seed)
        };
        manifest
            .inputs
            .push(("synthetic".into(), format!("desk shared_topics={}", spec.shared_topics)));
        generate_synthetic(&spec)?
    } else {
        let keys = RecordKeys::default();
        let (s, t) = (args.source.as_ref().unwrap(), args.target.as_ref().unwrap());
        manifest.input("source", s)?;
        manifest.input("target", t)?;
        (load_reviews(s, Domain::Source, &keys)?, load_reviews(t, Domain::Target, &keys)?)
    };
    let split = split_dataset(&target, &SplitSpec::with_seed(seed))?;
    create_dir(&args.out)?;
    manifest.artifacts = workspace::write_prepared(&args.out, &source, &split)?;
    manifest.write(&args.out)?;
    println!(
        "source {} interactions; target train/valid/test {}/{}/{}",
        source.len(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok(())
}

fn resolve(args: &ModelArgs, seed: Option<u64>) -> head::Result<(RunConfig, EmbeddingSource)> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    let w = &mut cfg.weights;
    macro_rules! apply {
        ($($src:ident => $dst:expr),* $(,)?) => {
            $(if let Some(v) = args.$src.clone() { $dst = v; })*
        };
    }
    apply!(
        lambda1 => w.lambda1,
        lambda2 => w.lambda2,
        margin => w.margin,
        lr => t.lr,
        aligned => t.aligned,
        degree_norm => t.degree_norm,
        use_source => t.use_source,
        candidates => t.candidates,
        max_iters => t.max_iters,
        patience => t.patience,
        eval_every => t.eval_every,
        batch_size => t.batch_size,
        filters_per_width => t.filters_per_width,
        doc_cap => t.doc_cap,
    );
    if let Some(s) = seed {
        t.seed = s;
    }
    cfg.validate()?;
    let embedding = if args.embedding == "synthetic" {
        EmbeddingSource::Synthetic {
            dim: args.embed_dim,
            seed: cfg.train.seed ^ workspace::TABLE_SALT,
        }
    } else {
        EmbeddingSource::File {
            path: PathBuf::from(&args.embedding),
            geometry: workspace::parse_geometry(&args.embedding_geometry)?,
        }
    };
    Ok((cfg, embedding))
}

fn record_data(manifest: &mut Manifest, dir: &Path, embedding: &EmbeddingSource) -> head::Result<()> {
    for path in workspace::data_files(dir) {
        let label = path.file_name().unwrap().to_string_lossy().into_owned();
        manifest.input(&label, &path)?;
    }
    if let EmbeddingSource::File { path, .. } = embedding {
        manifest.input("embedding", path)?;
    }
    Ok(())
}

fn train(args: &TrainArgs, seed: Option<u64>) -> Outcome {
    let (cfg, embedding) = resolve(&args.model, seed)?;
    let loaded = Loaded::open(&args.model.data, &embedding)?;
    let data = loaded.data();
    let result = fit(&data, &cfg.train, &cfg.weights)?;
    create_dir(&args.out)?;
    let mut meta = embedding.meta();
    meta.push(("seed".into(), cfg.train.seed.to_string()));
    meta.push(("aligned".into(), cfg.train.aligned.to_string()));
    meta.push(("candidates".into(), cfg.train.candidates.to_string()));
    let mut best_meta = meta.clone();
    best_meta.push(("iteration".into(), result.best_iteration.to_string()));
    checkpoint::save(&args.out.join("best.ckpt"), &result.params, &best_meta)?;
    meta.push(("iteration".into(), result.iterations.to_string()));
    checkpoint::save(&args.out.join("last.ckpt"), &result.last, &meta)?;
    write_file(&args.out.join("curves.csv"), &loss_curves_csv(&result.history))?;
    let mut evals = String::from("iteration,ndcg@10,hr@10\n");
    for e in &result.evals {
        let _ = writeln!(evals, "{},{:?},{:?}", e.iteration, e.metrics.ndcg, e.metrics.hr);
    }
    write_file(&args.out.join("evals.csv"), &evals)?;
    write_file(&args.out.join("config.txt"), &cfg.to_text())?;
    let mut manifest = Manifest::new("train", cfg.train.seed);
    record_data(&mut manifest, &args.model.data, &embedding)?;
    manifest.artifacts = ["best.ckpt", "last.ckpt", "curves.csv", "evals.csv", "config.txt"]
        .map(String::from)
        .to_vec();
    manifest.config = Some(cfg.to_text());
    manifest.write(&args.out)?;
    println!(
        "iterations {} best_iteration {} initial_ndcg@10 {:.4} best_ndcg@10 {:.4}",
        result.iterations, result.best_iteration, result.initial_ndcg, result.best_ndcg
    );
    Ok(())
}

fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

/// Loads a checkpoint with the data it was trained on and verifies shapes.
fn open_model(ckpt: &Path, dir: &Path) -> head::Result<(ModelParams, Vec<(String, String)>, Loaded)> {
    let (params, meta) = checkpoint::load(ckpt)?;
    let embedding = EmbeddingSource::from_meta(&meta)?;
    let loaded = Loaded::open(dir, &embedding)?;
    let c: &ModelConfig = &params.config;
    let data = loaded.data();
    let expected = (
        data.table.dim(),
        [data.source.n_users(), data.target.n_users()],
        [data.source.n_items(), data.target.n_items()],
    );
    if (c.embed_dim, c.n_users, c.n_items) != expected {
        return Err(Error::Config(format!(
            "checkpoint shapes (dim {}, users {:?}, items {:?}) do not match the data (dim {}, users {:?}, items {:?})",
            c.embed_dim, c.n_users, c.n_items, expected.0, expected.1, expected.2
        )));
    }
    Ok((params, meta, loaded))
}

fn checkpoint_seed(meta: &[(String, String)], flag: Option<u64>) -> u64 {
    flag.or_else(|| meta_value(meta, "seed").and_then(|s| s.parse().ok())).unwrap_or(0)
}

fn eval(args: &EvalArgs, seed: Option<u64>) -> Outcome {
    let (params, meta, loaded) = open_model(&args.checkpoint, &args.data)?;
    let seed = checkpoint_seed(&meta, seed);
    let aligned = meta_value(&meta, "aligned") != Some("false");
    let candidates = args
        .candidates
        .or_else(|| meta_value(&meta, "candidates").and_then(|s| s.parse().ok()))
        .unwrap_or(99);
    let data = loaded.data();
    let lists = loaded.target.eval_lists(&loaded.target.test, candidates, &mut seeded_rng(seed));
    let mut report = EvalReport::compute(&params, &data, &lists, aligned, seed)?;
    let checks = check_theorems(&params, Some(&data), &CheckOptions { seed, ..Default::default() });
    report.checks_passed = Some(checks.passed());
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("report.txt"), &text)?;
        let mut manifest = Manifest::new("eval", seed);
        manifest.input("checkpoint", &args.checkpoint)?;
        record_data(&mut manifest, &args.data, &EmbeddingSource::from_meta(&meta)?)?;
        manifest.artifacts = vec!["report.txt".into()];
        manifest.write(out)?;
    }
    Ok(())
}

fn band_summary(rows: &[VizRow], edges: &[u32]) -> String {
    let mut out = String::from("band,items,mean_radius\n");
    let mut lo = 1;
    let uppers = edges.iter().map(|&e| Some(e)).chain(std::iter::once(None));
    for hi in uppers {
        let inside: Vec<f64> = rows
            .iter()
            .filter(|r| r.degree >= lo && hi.is_none_or(|h| r.degree <= h))
            .map(|r| r.radius)
            .collect();
        let label = match hi {
            Some(h) => format!("{lo}-{h}"),
            None => format!(">{}", lo - 1),
        };
        let mean = if inside.is_empty() {
            f64::NAN
        } else {
            inside.iter().sum::<f64>() / inside.len() as f64
        };
        let _ = writeln!(out, "{label},{},{mean:.6}", inside.len());
        lo = hi.map_or(lo, |h| h + 1);
    }
    out
}

fn viz(args: &VizArgs, seed: Option<u64>) -> Outcome {
    if args.bands.windows(2).any(|w| w[0] >= w[1]) || args.bands.first() == Some(&0) {
        return Err(Error::Usage("band edges must be positive and increasing".into()).into());
    }
    let (params, meta, loaded) = open_model(&args.checkpoint, &args.data)?;
    let seed = checkpoint_seed(&meta, seed);
    let rows = degree_radius_rows(&params, &loaded.data(), Domain::Target, args.limit, seed)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("viz.csv"), &rows_to_csv(&rows))?;
    let bands = band_summary(&rows, &args.bands);
    write_file(&args.out.join("bands.csv"), &bands)?;
    let mut manifest = Manifest::new("viz", seed);
    manifest.input("checkpoint", &args.checkpoint)?;
    record_data(&mut manifest, &args.data, &EmbeddingSource::from_meta(&meta)?)?;
    manifest.artifacts = vec!["viz.csv".into(), "bands.csv".into()];
    manifest.write(&args.out)?;
    print!("{bands}");
    Ok(())
}

fn fixture_params(seed: u64) -> head::Result<ModelParams> {
    let config = ModelConfig {
        embed_dim: 8,
        filters_per_width: 4,
        widths: vec![3, 4, 5],
        doc_cap: 16,
        n_users: [4, 4],
        n_items: [4, 4],
    };
    ModelParams::init(config, &mut seeded_rng(seed))
}

fn check(args: &CheckArgs, seed: Option<u64>) -> Outcome {
    let seed = seed.unwrap_or(0);
    let mut text = String::new();
    let mut ok = true;
    let mut line = |passed: bool, name: &str, detail: String| {
        ok &= passed;
        let _ = writeln!(text, "{name} {} {detail}", if passed { "pass" } else { "FAIL" });
    };
    for c in geometry_checks(1000, seed) {
        line(c.passed, &format!("geometry.{}", c.name), c.detail);
    }
    for (k, case) in operator_cases().iter().enumerate() {
        let r = fd_check(case, 100, seed.wrapping_add(k as u64));
        line(r.passed(), &format!("gradient.{}", r.name), format!("max_rel_error={:.3e}", r.max_rel_error));
    }
    let grl = grl_exact(100, seed, args.inject_grl_bug);
    line(grl, "gradient.grl", "backward is exact negation".into());
    let options = CheckOptions {
        seed,
        faulty_grl: args.inject_grl_bug,
    };
    let theorems = match (&args.checkpoint, &args.data) {
        (Some(ckpt), Some(dir)) => {
            let (params, _, loaded) = open_model(ckpt, dir)?;
            check_theorems(&params, Some(&loaded.data()), &options)
        }
        (None, Some(dir)) => {
            let loaded = Loaded::open(dir, &EmbeddingSource::Synthetic { dim: 8, seed })?;
            let data = loaded.data();
            let config = head::training::TrainConfig {
                seed,
                filters_per_width: 4,
                ..Default::default()
            };
            let params = ModelParams::init(config.model_config(&data), &mut seeded_rng(seed))?;
            check_theorems(&params, Some(&data), &options)
        }
        _ => check_theorems(&fixture_params(seed)?, None, &options),
    };
    ok &= theorems.passed();
    text.push_str(&theorems.to_text());
    let _ = writeln!(text, "overall {}", if ok { "pass" } else { "FAIL" });
    print!("{text}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("checks.txt"), &text)?;
        let mut manifest = Manifest::new("check", seed);
        manifest.artifacts = vec!["checks.txt".into()];
        manifest.write(out)?;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_CHECK,
            message: "one or more checks failed".into(),
        })
    }
}

fn grid(args: &GridArgs, seed: Option<u64>) -> Outcome {
    if args.lambda1_grid.is_empty() || args.lambda2_grid.is_empty() {
        return Err(Error::Usage("grids must not be empty".into()).into());
    }
    let (cfg, embedding) = resolve(&args.model, seed)?;
    let loaded = Loaded::open(&args.model.data, &embedding)?;
    let result: GridResult = grid_search(
        &loaded.data(),
        &args.lambda1_grid,
        &args.lambda2_grid,
        &cfg.train,
        &cfg.weights,
    )?;
    create_dir(&args.out)?;
    write_file(&args.out.join("grid.csv"), &result.to_csv())?;
    let mut manifest = Manifest::new("grid", cfg.train.seed);
    record_data(&mut manifest, &args.model.data, &embedding)?;
    manifest.artifacts = vec!["grid.csv".into()];
    manifest.config = Some(cfg.to_text());
    manifest.write(&args.out)?;
    print!("{}", result.to_csv());
    println!("best lambda1={} lambda2={} ndcg@10={:.4}", result.best.0, result.best.1, result.best_score);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Prepare(a) => prepare(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed),
        Command::Viz(a) => viz(a, cli.seed),
        Command::Check(a) => check(a, cli.seed),
        Command::Grid(a) => grid(a, cli.seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
