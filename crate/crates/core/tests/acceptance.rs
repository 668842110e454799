//! Desk-scale acceptance run. Prints one line per criterion and exits
//! non-zero if any criterion misses its threshold or its time budget.
//!
//! `HEAD_ACCEPT=6,7` runs a subset.

use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use head::data::{seeded_rng, Domain};
use head::evaluation::report::discriminator_bce;
use head::evaluation::selfcheck::{fd_check, grl_exact, operator_cases};
use head::evaluation::synthetic::Benchmark;
use head::evaluation::{check_theorems, evaluate_lists, item_hierarchy_fidelity, CheckOptions, SyntheticSpec};
use head::geometry::{exp_origin, log_origin, lorentz_dist, lorentz_to_poincare, poincare_dist, LorentzVec, TangentVec};
use head::model::ModelParams;
use head::objectives::LossWeights;
use head::training::{fit, grid_search, sample_batch, train_step, TrainConfig, TrainState};

const EMBED_DIM: usize = 16;
const GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

struct Outcome {
    passed: bool,
    detail: String,
}

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        batch_size: 16,
        filters_per_width: 8,
        doc_cap: 32,
        max_iters: 1000,
        ..TrainConfig::default()
    }
}

fn weights(lambda1: f64, lambda2: f64) -> LossWeights {
    LossWeights {
        lambda1,
        lambda2,
        ..LossWeights::default()
    }
}

fn bench(spec: SyntheticSpec) -> Benchmark {
    Benchmark::build(&spec, EMBED_DIM).expect("benchmark")
}

/// Trains for exactly `max_iters` steps and returns the last parameters.
fn train_to_end(b: &Benchmark, config: &TrainConfig, w: &LossWeights) -> ModelParams {
    let config = TrainConfig {
        patience: config.max_iters,
        ..config.clone()
    };
    fit(&b.data(), &config, w).expect("training").last
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_tangent(dim: usize, max_norm: f64, rng: &mut head::data::Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dir: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = rng.random_range(0.0..=max_norm);
    dir.iter().map(|x| x / n * r).collect()
}

fn geometry_suite() -> Outcome {
    let mut rng = seeded_rng(11);
    let (mut round, mut radial, mut iso) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..1000 {
        let dim = 2 + k % 15;
        let v = random_tangent(dim, 10.0, &mut rng);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let x = exp_origin(&TangentVec::from_space(&v));
        let back = log_origin(&x);
        for (a, b) in back.space().iter().zip(&v) {
            round = round.max((a - b).abs());
        }
        let d = lorentz_dist(&LorentzVec::origin(dim), &x).unwrap();
        radial = radial.max((d - norm).abs());
        let y = exp_origin(&TangentVec::from_space(&random_tangent(dim, 10.0, &mut rng)));
        let dl = lorentz_dist(&x, &y).unwrap();
        let dp = poincare_dist(&lorentz_to_poincare(&x), &lorentz_to_poincare(&y)).unwrap();
        iso = iso.max((dl - dp).abs());
    }
    Outcome {
        passed: round < 1e-6 && radial <= 1e-8 && iso <= 1e-6,
        detail: format!("round_trip={round:.2e} origin_distance={radial:.2e} isometry={iso:.2e}"),
    }
}

fn autodiff_suite() -> Outcome {
    let cases = operator_cases();
    let mut failed = Vec::new();
    let mut worst = 0.0f64;
    for (k, case) in cases.iter().enumerate() {
        let r = fd_check(case, 100, 100 + k as u64);
        worst = worst.max(r.max_rel_error);
        if !r.passed() {
            failed.push(format!("{}={:.2e}", r.name, r.max_rel_error));
        }
    }
    let grl = grl_exact(100, 5, false);
    Outcome {
        passed: failed.is_empty() && grl,
        detail: format!(
            "operators={} worst_rel_error={worst:.2e} grl_exact={grl} failed=[{}]",
            cases.len(),
            failed.join(",")
        ),
    }
}

fn init_params(b: &Benchmark, seed: u64) -> ModelParams {
    TrainState::init(&b.data(), &desk_config(seed)).unwrap().params
}

fn degree_ratio_check() -> Outcome {
    let b = bench(SyntheticSpec::desk(1));
    let report = check_theorems(&init_params(&b, 1), Some(&b.data()), &CheckOptions { seed: 1, ..Default::default() });
    let a = &report.checks[0];
    let max = b.target.train.max_item_degree();
    let wanted = [0, max / 3, 2 * max / 3, max];
    let covered = wanted.iter().all(|d| report.buckets.iter().any(|x| x.degree == *d));
    let worst = report.buckets.iter().map(|x| (x.observed - x.expected).abs()).fold(0.0, f64::max);
    Outcome {
        passed: a.passed && covered && worst <= 1e-6,
        detail: format!("buckets={:?} max_error={worst:.2e}", wanted),
    }
}

fn rescale_invariance_check() -> Outcome {
    let b = bench(SyntheticSpec::desk(2));
    let report = check_theorems(&init_params(&b, 2), Some(&b.data()), &CheckOptions { seed: 2, ..Default::default() });
    let c = &report.checks[2];
    Outcome {
        passed: c.passed,
        detail: c.detail.clone(),
    }
}

fn unit_norm_inputs_check() -> Outcome {
    let b = bench(SyntheticSpec::desk(3));
    let data = b.data();
    let config = desk_config(3);
    let w = weights(0.05, 0.05);
    let mut state = TrainState::init(&data, &config).unwrap();
    let (mut worst, mut degenerate) = (0.0f64, 0);
    for _ in 0..200 {
        let batch = sample_batch(&data, &config, &mut state.rng).unwrap();
        let r = train_step(&mut state, &data, &batch, &w, &config).unwrap();
        worst = worst.max(r.max_disc_input_deviation);
        degenerate += r.degenerate_alignments;
    }
    let report = check_theorems(&state.params, None, &CheckOptions { seed: 3, ..Default::default() });
    let growth = &report.checks[1];
    Outcome {
        passed: worst <= 1e-9 && degenerate == 0 && growth.passed,
        detail: format!("max_norm_deviation={worst:.2e} degenerate={degenerate} {}", growth.detail),
    }
}

fn separability_trend() -> Outcome {
    let mut rows = Vec::new();
    let mut passed = true;
    for seed in 1..=3 {
        let b = bench(SyntheticSpec {
            shared_topics: 1,
            ..SyntheticSpec::desk(seed)
        });
        let config = desk_config(seed);
        let w = weights(0.05, 0.05);
        let mut bce = [0.0; 2];
        for (k, aligned) in [true, false].into_iter().enumerate() {
            let c = TrainConfig { aligned, ..config.clone() };
            let params = train_to_end(&b, &c, &w);
            bce[k] = discriminator_bce(&params, &b.data(), aligned, 200, seed).unwrap();
        }
        passed &= bce[0] < bce[1];
        rows.push(format!("s{seed}:{:.4}<{:.4}", bce[0], bce[1]));
    }
    Outcome {
        passed,
        detail: format!("bce aligned<unaligned {}", rows.join(" ")),
    }
}

fn hierarchy_trend() -> Outcome {
    let mut gaps = Vec::new();
    let mut rows = Vec::new();
    for seed in 1..=3 {
        let b = bench(SyntheticSpec::desk(seed));
        let w = weights(0.1, 0.05);
        let mut rho = [0.0; 2];
        for (k, degree_norm) in [true, false].into_iter().enumerate() {
            let c = TrainConfig {
                degree_norm,
                ..desk_config(seed)
            };
            let params = train_to_end(&b, &c, &w);
            rho[k] = item_hierarchy_fidelity(&params, &b.data(), Domain::Target, 1000, seed).unwrap().rho;
        }
        gaps.push(rho[0] - rho[1]);
        rows.push(format!("s{seed}:{:.3}/{:.3}", rho[0], rho[1]));
    }
    let m = median(gaps);
    Outcome {
        passed: m >= 0.2,
        detail: format!("median_gap={m:.3} rho(norm/plain) {}", rows.join(" ")),
    }
}

fn grid_trend() -> Outcome {
    let mut sum = vec![vec![0.0; GRID.len()]; GRID.len()];
    for seed in 1..=3 {
        let b = bench(SyntheticSpec::desk(seed));
        let g = grid_search(&b.data(), &GRID, &GRID, &desk_config(seed), &LossWeights::default()).unwrap();
        for (r, row) in g.matrix.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                sum[r][c] += v / 3.0;
            }
        }
    }
    let g = head::training::GridResult::from_matrix(GRID.to_vec(), GRID.to_vec(), sum);
    let small = |l: f64| l <= 0.1;
    let best_small = GRID
        .iter()
        .enumerate()
        .filter(|(_, l)| small(**l))
        .flat_map(|(r, _)| GRID.iter().enumerate().filter(|(_, l)| small(**l)).map(move |(c, _)| (r, c)))
        .map(|(r, c)| g.matrix[r][c])
        .fold(f64::NEG_INFINITY, f64::max);
    let last = GRID.len() - 1;
    let large_max = (0..GRID.len())
        .flat_map(|k| [g.matrix[last][k], g.matrix[k][last]])
        .fold(f64::NEG_INFINITY, f64::max);
    let best_is_small = small(g.best.0) && small(g.best.1);
    Outcome {
        passed: best_is_small && large_max < best_small,
        detail: format!(
            "best=({},{}) {:.4} best_small={best_small:.4} best_with_lambda_1={large_max:.4}\n{}",
            g.best.0,
            g.best.1,
            g.best_score,
            g.to_csv().trim_end()
        ),
    }
}

fn test_ndcg(b: &Benchmark, config: &TrainConfig, w: &LossWeights) -> f64 {
    let data = b.data();
    let fit = fit(&data, config, w).unwrap();
    let lists = b.target.eval_lists(&b.target.test, config.candidates, &mut seeded_rng(config.seed ^ 0x7e57));
    evaluate_lists(&fit.params, &data, Domain::Target, &lists).unwrap().ndcg
}

fn ablation() -> Outcome {
    let w = weights(0.05, 0.05);
    let (mut full, mut no_align, mut no_norm) = (Vec::new(), Vec::new(), Vec::new());
    let mut gain = Vec::new();
    for seed in 1..=5 {
        let b = bench(SyntheticSpec::desk(seed));
        let c = desk_config(seed);
        full.push(test_ndcg(&b, &c, &w));
        no_align.push(test_ndcg(&b, &TrainConfig { aligned: false, ..c.clone() }, &w));
        no_norm.push(test_ndcg(&b, &TrainConfig { degree_norm: false, ..c.clone() }, &w));
        let control = bench(SyntheticSpec {
            shared_topics: 0,
            ..SyntheticSpec::desk(seed)
        });
        let with_source = test_ndcg(&control, &c, &w);
        let target_only = test_ndcg(&control, &TrainConfig { use_source: false, ..c.clone() }, &w);
        gain.push(with_source - target_only);
    }
    let (mf, ma, mn) = (median(full), median(no_align), median(no_norm));
    // One-sided paired t-test for a positive transfer gain.
    let n = gain.len() as f64;
    let mean = gain.iter().sum::<f64>() / n;
    let sd = (gain.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let p = if sd > 0.0 {
        1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(mean / (sd / n.sqrt()))
    } else if mean > 0.0 {
        0.0
    } else {
        1.0
    };
    Outcome {
        passed: mf >= ma && mf >= mn && p >= 0.05,
        detail: format!(
            "median full={mf:.4} no_alignment={ma:.4} no_degree_norm={mn:.4} control_gain={mean:+.4} p={p:.3}"
        ),
    }
}

fn seconds_per_step(b: &Benchmark, steps: usize) -> f64 {
    let data = b.data();
    let config = desk_config(1);
    let w = weights(0.05, 0.05);
    let mut state = TrainState::init(&data, &config).unwrap();
    let mut run = |n: usize| {
        let t = Instant::now();
        for _ in 0..n {
            let batch = sample_batch(&data, &config, &mut state.rng).unwrap();
            train_step(&mut state, &data, &batch, &w, &config).unwrap();
        }
        t.elapsed().as_secs_f64() / n as f64
    };
    run(20);
    (0..3).map(|_| run(steps)).fold(f64::INFINITY, f64::min)
}

fn linear_cost() -> Outcome {
    let small = bench(SyntheticSpec::desk(1));
    let base = small.spec.clone();
    let large = bench(SyntheticSpec {
        users: [base.users[0], 2 * base.users[1]],
        items: [base.items[0], 2 * base.items[1]],
        ..base
    });
    let (ts, tl) = (seconds_per_step(&small, 150), seconds_per_step(&large, 150));
    let ratio = tl / ts;
    Outcome {
        passed: ratio <= 1.3,
        detail: format!(
            "step_ms={:.2}->{:.2} ratio={ratio:.3} target_interactions={}->{}",
            ts * 1e3,
            tl * 1e3,
            small.target.train.len(),
            large.target.train.len()
        ),
    }
}

type Criterion = (usize, &'static str, u64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "geometry suite", 5, geometry_suite),
        (2, "autodiff suite", 30, autodiff_suite),
        (3, "degree-scaled gradient ratio", 10, degree_ratio_check),
        (4, "aligned discriminator rescale invariance", 10, rescale_invariance_check),
        (5, "unit-norm discriminator inputs and raw growth", 10, unit_norm_inputs_check),
        (6, "alignment improves domain separability", 300, separability_trend),
        (7, "degree normalisation improves hierarchy fidelity", 300, hierarchy_trend),
        (8, "small loss weights win the grid", 1800, grid_trend),
        (9, "full model versus ablations and zero-overlap control", 900, ablation),
        (10, "per-step cost when the target doubles", 300, linear_cost),
    ];
    let only: Option<Vec<usize>> = std::env::var("HEAD_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let ok = outcome.passed && in_time;
        let mut lines = outcome.detail.lines();
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s of {budget}s]",
            if ok { "PASS" } else { "FAIL" },
            lines.next().unwrap_or(""),
            elapsed.as_secs_f64()
        );
        for extra in lines {
            println!("    {extra}");
        }
        if !ok {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
