use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use head::corpus::DomainCorpus;
use head::data::{load_reviews, load_split, seeded_rng, Domain, RecordKeys};
use head::embedding::EmbeddingTable;
use head::evaluation::EvalReport;
use head::model::checkpoint;
use head::training::TrainData;
use tempfile::TempDir;

const WORDS: [&str; 8] = ["sturdy", "cheap", "lovely", "broken", "fast", "quiet", "bright", "soft"];

fn record(user: &str, item: &str, rating: usize, k: usize) -> String {
    let text: Vec<&str> = (0..5).map(|j| WORDS[(k * 3 + j * 5) % WORDS.len()]).collect();
    serde_json::json!({"reviewerID": user, "asin": item, "overall": rating, "reviewText": text.join(" ")}).to_string()
}

/// Source: 60 reviews, user `s0` wrote 7. Target: 200 reviews over 40
/// users and 50 items.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut source: Vec<String> = (0..7).map(|k| record("s0", &format!("a{k}"), 5, k)).collect();
    source.extend((7..60).map(|k| record(&format!("s{}", 1 + k % 9), &format!("a{}", k % 20), 1 + k % 5, k)));
    let target: Vec<String> = (0..200)
        .map(|k| record(&format!("t{}", k % 40), &format!("b{}", k / 4), 1 + k % 5, k))
        .collect();
    let (s, t) = (dir.join("source.json"), dir.join("target.json"));
    fs::write(&s, source.join("\n")).unwrap();
    fs::write(&t, target.join("\n")).unwrap();
    (s, t)
}

fn head(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_head")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = head(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.is_empty()).count()
}

struct Prepared {
    _tmp: TempDir,
    root: PathBuf,
    data: PathBuf,
}

fn prepared() -> Prepared {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().to_path_buf();
    let (src, tgt) = fixture(&root);
    let data = root.join("data");
    ok(&["--seed", "7", "prepare", "--source", s(&src), "--target", s(&tgt), "--out", s(&data)]);
    Prepared { _tmp: tmp, root, data }
}

const SMALL: [&str; 8] = ["--embed-dim", "8", "--filters-per-width", "4", "--doc-cap", "16", "--batch-size", "8"];

fn train(p: &Prepared, name: &str, extra: &[&str]) -> PathBuf {
    let out = p.root.join(name);
    let mut args = vec!["--seed", "7", "train", "--data", s(&p.data), "--out", s(&out)];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args);
    out
}

#[test]
fn prepare_splits_80_10_10_and_is_reproducible() {
    let p = prepared();
    let counts: Vec<usize> = ["train", "valid", "test"]
        .iter()
        .map(|part| lines(&p.data.join(format!("target.{part}.jsonl"))))
        .collect();
    assert_eq!(counts, [160, 20, 20]);
    let degrees = fs::read_to_string(p.data.join("degrees.source.users.csv")).unwrap();
    assert!(degrees.lines().any(|l| l == "s0,7"), "{degrees}");

    let (src, tgt) = (p.root.join("source.json"), p.root.join("target.json"));
    let again = p.root.join("again");
    ok(&["--seed", "7", "prepare", "--source", s(&src), "--target", s(&tgt), "--out", s(&again)]);
    for entry in fs::read_dir(&p.data).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(p.data.join(&name)).unwrap(),
            fs::read(again.join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
    let manifest = fs::read_to_string(p.data.join("manifest.txt")).unwrap();
    assert!(manifest.contains("input.target = ") && manifest.contains("sha256:"));
}

#[test]
fn train_writes_one_curve_row_per_iteration() {
    let p = prepared();
    let out = train(&p, "run", &["--max-iters", "10", "--eval-every", "5"]);
    assert_eq!(lines(&out.join("curves.csv")), 11);
    assert_eq!(lines(&out.join("evals.csv")), 4);
    for f in ["best.ckpt", "last.ckpt", "config.txt", "manifest.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn zero_learning_rate_leaves_the_initial_parameters() {
    let p = prepared();
    let frozen = train(&p, "frozen", &["--max-iters", "20", "--lr", "0"]);
    let initial = train(&p, "initial", &["--max-iters", "0"]);
    let (a, _) = checkpoint::load(&frozen.join("last.ckpt")).unwrap();
    let (b, _) = checkpoint::load(&initial.join("last.ckpt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_is_deterministic_and_matches_the_library() {
    let p = prepared();
    let run = train(&p, "run", &["--max-iters", "30"]);
    let ckpt = run.join("best.ckpt");
    let first = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&p.data), "--out", s(&p.root.join("e"))]);
    let second = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&p.data)]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(fs::read(p.root.join("e/report.txt")).unwrap(), first.stdout);

    let keys = RecordKeys::default();
    let vocab: Vec<String> = fs::read_to_string(p.data.join("vocab.txt"))
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    let (params, meta) = checkpoint::load(&ckpt).unwrap();
    let embed_seed: u64 = meta.iter().find(|(k, _)| k == "embed_seed").unwrap().1.parse().unwrap();
    let table = EmbeddingTable::synthetic(&vocab, 8, embed_seed);
    let source = load_reviews(&p.data.join("source.jsonl"), Domain::Source, &keys).unwrap();
    let parts = ["train", "valid", "test"].map(|x| p.data.join(format!("target.{x}.jsonl")));
    let split = load_split([&parts[0], &parts[1], &parts[2]], Domain::Target, &keys).unwrap();
    let source = DomainCorpus::train_only(source, &table).unwrap();
    let target = DomainCorpus::new(Domain::Target, split, &table).unwrap();
    let data = TrainData { source: &source, target: &target, table: &table };
    let lists = target.eval_lists(&target.test, 99, &mut seeded_rng(7));
    let report = EvalReport::compute(&params, &data, &lists, true, 7).unwrap();
    let text = String::from_utf8(first.stdout).unwrap();
    let value = |key: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(key)).unwrap().trim().parse().unwrap()
    };
    assert_eq!(value("ndcg@10 "), report.metrics.ndcg);
    assert_eq!(value("hr@10 "), report.metrics.hr);
}

#[test]
fn eval_rejects_a_checkpoint_for_other_data() {
    let p = prepared();
    let run = train(&p, "run", &["--max-iters", "0"]);
    let other = p.root.join("other");
    ok(&["--seed", "1", "prepare", "--synthetic", "--out", s(&other)]);
    let out = head(&["eval", "--checkpoint", s(&run.join("best.ckpt")), "--data", s(&other)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn viz_emits_one_row_per_item_inside_the_ball() {
    let p = prepared();
    let run = train(&p, "run", &["--max-iters", "10"]);
    let ckpt = run.join("best.ckpt");
    let a = p.root.join("viz_a");
    let b = p.root.join("viz_b");
    ok(&["viz", "--checkpoint", s(&ckpt), "--data", s(&p.data), "--out", s(&a)]);
    ok(&["viz", "--checkpoint", s(&ckpt), "--data", s(&p.data), "--out", s(&b)]);
    let csv = fs::read_to_string(a.join("viz.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 50);
    for row in &rows {
        let radius: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..1.0).contains(&radius), "{row}");
    }
    assert_eq!(csv, fs::read_to_string(b.join("viz.csv")).unwrap());
}

#[test]
fn check_passes_and_catches_a_broken_reversal() {
    let out = ok(&["check"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("overall pass"));
    let buckets: Vec<&str> = text.lines().filter(|l| l.starts_with("ratio ")).collect();
    assert!(!buckets.is_empty());
    for line in buckets {
        let field = |k: &str| -> f64 {
            line.split_whitespace().find_map(|f| f.strip_prefix(k)).unwrap().parse().unwrap()
        };
        let (d, max) = (field("degree="), field("max="));
        assert!((field("observed=") - (max - d) / max).abs() < 1e-6, "{line}");
    }

    let broken = head(&["check", "--inject-grl-bug"]);
    assert_eq!(broken.status.code(), Some(5));
    let text = String::from_utf8(broken.stdout).unwrap();
    assert!(text.contains("check.discriminator.scale_invariance FAIL"), "{text}");
}

#[test]
fn exit_codes_distinguish_usage_and_io_errors() {
    assert_eq!(head(&["train", "--data", "x"]).status.code(), Some(2));
    assert_eq!(head(&["train", "--data", "x", "--out", "y", "--aligned", "sometimes"]).status.code(), Some(2));
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing");
    let out = head(&["train", "--data", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "not json\n").unwrap();
    let out = head(&["prepare", "--source", s(&bad), "--target", s(&bad), "--out", s(&tmp.path().join("p"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let p = prepared();
    let out = head(&["train", "--data", s(&p.data), "--out", s(&p.root.join("r")), "--lr", "-1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
