//! Executable versions of the three analytic properties the method relies
//! on: degree-scaled gradients, scale growth without alignment, and scale
//! invariance of the aligned discriminator.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::data::{seeded_rng, Domain};
use crate::model::{discriminator, scale_align, BindMode, ModelParams};
use crate::objectives::{degree_weight, weighted_deviation, NodeGroup};
use crate::training::TrainData;

use super::item_feature;

pub const RATIO_TOL: f64 = 1e-6;
pub const UNIT_TOL: f64 = 1e-9;
pub const GRAD_REL_TOL: f64 = 1e-10;
pub const RESCALES: [f64; 3] = [0.1, 10.0, 1000.0];

#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Test hook: makes the gradient-reversal layer pass gradients through
    /// unchanged.
    #[doc(hidden)]
    pub faulty_grl: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    /// Group: `degree`, `alignment` or `discriminator`.
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBucket {
    pub degree: u32,
    pub max_degree: u32,
    pub expected: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub checks: Vec<CheckOutcome>,
    pub buckets: Vec<RatioBucket>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "FAIL" };
            let _ = writeln!(out, "check.{}.{} {status} {}", c.id, c.name, c.detail);
        }
        for b in &self.buckets {
            let _ = writeln!(
                out,
                "ratio degree={} max={} expected={:.9} observed={:.9}",
                b.degree, b.max_degree, b.expected, b.observed
            );
        }
        out
    }
}

/// Per node, `|grad_h of the weighted deviation| / |grad_h of the
/// unweighted deviation|`, with the root detached.
pub fn degree_gradient_ratios(features: &[Vec<f64>], degrees: &[u32], max_degree: u32) -> crate::Result<Vec<f64>> {
    let grad_norms = |weights: Vec<f64>| -> crate::Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = features.iter().map(|f| tape.leaf(f.clone(), vec![f.len()])).collect();
        let group = NodeGroup {
            features: vars.clone(),
            weights,
        };
        let dev = weighted_deviation(&mut tape, &group)?;
        let g = tape.backward(dev)?;
        Ok(vars
            .iter()
            .map(|&v| g.get(v).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect())
    };
    let weighted = grad_norms(degrees.iter().map(|&d| degree_weight(d, max_degree)).collect())?;
    let plain = grad_norms(vec![1.0; features.len()])?;
    Ok(weighted.iter().zip(&plain).map(|(w, p)| w / p).collect())
}

fn check_degree_ratio(params: &ModelParams, data: Option<&TrainData>, seed: u64) -> (CheckOutcome, Vec<RatioBucket>) {
    let max_degree = data
        .map(|d| d.target.train.max_item_degree())
        .filter(|&m| m >= 3)
        .unwrap_or(12);
    let bucket_degrees = [0, max_degree / 3, 2 * max_degree / 3, max_degree];
    let degrees: Vec<u32> = bucket_degrees.iter().chain(&bucket_degrees).copied().collect();
    let df = params.config.feature_dim();
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let features: Vec<Vec<f64>> = (0..degrees.len())
        .map(|k| {
            let from_model = data.and_then(|d| {
                let n = d.target.n_items();
                (n > 0).then(|| item_feature(params, d, Domain::Target, (k * 7919) % n))
            });
            // Random jitter keeps every node off the root.
            let mut f = from_model.unwrap_or_else(|| vec![0.0; df]);
            for x in &mut f {
                *x += normal.sample(&mut rng);
            }
            f
        })
        .collect();
    let mut buckets = Vec::new();
    let outcome = match degree_gradient_ratios(&features, &degrees, max_degree) {
        Ok(ratios) => {
            let mut worst = 0.0f64;
            for (&d, &r) in degrees.iter().zip(&ratios) {
                let expected = degree_weight(d, max_degree);
                worst = worst.max((r - expected).abs());
                buckets.push(RatioBucket {
                    degree: d,
                    max_degree,
                    expected,
                    observed: r,
                });
            }
            CheckOutcome {
                id: "degree",
                name: "degree_gradient_ratio",
                passed: worst <= RATIO_TOL,
                detail: format!("max_abs_error={worst:e} tol={RATIO_TOL:e}"),
            }
        }
        Err(e) => CheckOutcome {
            id: "degree",
            name: "degree_gradient_ratio",
            passed: false,
            detail: e.to_string(),
        },
    };
    (outcome, buckets)
}

/// One gradient-ascent step on `|d_S - d_T|^2` from `d_S = (1, 0)`,
/// `d_T = (-1, 0)`; returns the updated `d_S`.
pub fn antipodal_ascent_step(step: f64) -> Vec<f64> {
    let mut tape = Tape::new();
    let ds = tape.leaf(vec![1.0, 0.0], vec![2]);
    let dt = tape.leaf(vec![-1.0, 0.0], vec![2]);
    let diff = tape.sub(ds, dt);
    let sep = tape.dot(diff, diff);
    let g = tape.backward(sep).expect("scalar root");
    tape.value(ds).iter().zip(g.get(ds)).map(|(x, gx)| x + step * gx).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_scale_preservation(seed: u64) -> CheckOutcome {
    let mut problems = Vec::new();
    let updated = antipodal_ascent_step(0.1);
    let grown = norm(&updated);
    if !(grown > 1.0) || (grown - 1.4).abs() > 1e-12 {
        problems.push(format!("raw update norm {grown} (expected 1.4)"));
    }
    // Keep separating two random vectors; the raw ones grow, the aligned
    // copies handed to the discriminator must stay on the unit sphere.
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut s: Vec<f64> = (0..8).map(|_| normal.sample(&mut rng)).collect();
    let mut t: Vec<f64> = (0..8).map(|_| normal.sample(&mut rng)).collect();
    let start = norm(&s);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut tape = Tape::new();
        let sv = tape.leaf(s.clone(), vec![s.len()]);
        let tv = tape.leaf(t.clone(), vec![t.len()]);
        for v in [sv, tv] {
            let a = scale_align(&mut tape, v);
            worst = worst.max((norm(tape.value(a.var)) - 1.0).abs());
        }
        let diff = tape.sub(sv, tv);
        let sep = tape.dot(diff, diff);
        let g = tape.backward(sep).expect("scalar root");
        for (x, gx) in s.iter_mut().zip(g.get(sv)) {
            *x += 0.1 * gx;
        }
        for (x, gx) in t.iter_mut().zip(g.get(tv)) {
            *x += 0.1 * gx;
        }
    }
    if !(norm(&s) > start) {
        problems.push("raw features did not grow".into());
    }
    if worst > UNIT_TOL {
        problems.push(format!("aligned input norm off by {worst:e}"));
    }
    CheckOutcome {
        id: "alignment",
        name: "scale_preservation",
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("raw_norm_after_step={grown} aligned_max_deviation={worst:e}")
        } else {
            problems.join("; ")
        },
    }
}

/// Discriminator output and parameter gradients for input `x`.
fn discriminate_once(params: &ModelParams, x: &[f64], aligned: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, BindMode::Trainable);
    let input = tape.leaf(x.to_vec(), vec![x.len()]);
    let fed = if aligned { scale_align(&mut tape, input).var } else { input };
    let out = discriminator(&mut tape, &bound, fed);
    let g = tape.backward(out).expect("scalar root");
    let d = bound.discriminator;
    let grads = [d.w1, d.b1, d.w2, d.b2].iter().map(|&v| g.get(v)).collect();
    (tape.scalar(out), grads)
}

fn max_rel_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        let scale = x.abs().max(y.abs());
        if scale > 0.0 {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    worst
}

/// Input gradient through `F_d(g(x / |x|))`, and without the reversal.
fn reversal_gradients(params: &ModelParams, x: &[f64], faulty: bool) -> (Vec<f64>, Vec<f64>) {
    let run = |reverse: bool| {
        let mut tape = Tape::new();
        if faulty {
            tape.inject_faulty_grl();
        }
        let bound = params.bind(&mut tape, BindMode::Frozen);
        let input = tape.leaf(x.to_vec(), vec![x.len()]);
        let a = scale_align(&mut tape, input).var;
        let fed = if reverse { tape.grl(a) } else { a };
        let out = discriminator(&mut tape, &bound, fed);
        tape.backward(out).expect("scalar root").get(input)
    };
    (run(true), run(false))
}

/// Discriminator input made of signed powers of two, so every rescaling
/// used below is exact in floating point.
pub fn power_of_two_fixture(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    (0..len)
        .map(|_| {
            let e: i32 = rng.random_range(-3..=3);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * 2f64.powi(e)
        })
        .collect()
}

fn check_scale_invariance(params: &ModelParams, options: &CheckOptions) -> CheckOutcome {
    let x = power_of_two_fixture(2 * params.config.feature_dim(), options.seed);
    let mut problems = Vec::new();
    let (base, base_grads) = discriminate_once(params, &x, true);
    let (raw_base, _) = discriminate_once(params, &x, false);
    let mut raw_moved = 0.0f64;
    let mut grad_worst = 0.0f64;
    for c in std::iter::once(1.0).chain(RESCALES) {
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        let (out, grads) = discriminate_once(params, &scaled, true);
        if out.to_bits() != base.to_bits() {
            problems.push(format!("aligned output changed under c={c}: {base} vs {out}"));
        }
        let rel = max_rel_diff(&base_grads, &grads);
        grad_worst = grad_worst.max(rel);
        if rel > GRAD_REL_TOL || (c == 1.0 && rel != 0.0) {
            problems.push(format!("parameter gradients moved by {rel:e} under c={c}"));
        }
        let (raw, _) = discriminate_once(params, &scaled, false);
        raw_moved = raw_moved.max((raw - raw_base).abs());
    }
    if !(raw_moved > 0.0) {
        problems.push("unaligned discriminator ignored input scale".into());
    }
    let (reversed, plain) = reversal_gradients(params, &x, options.faulty_grl);
    if reversed.iter().zip(&plain).any(|(r, p)| *r != -p) || plain.iter().all(|p| *p == 0.0) {
        problems.push("gradient reversal does not negate the input gradient".into());
    }
    CheckOutcome {
        id: "discriminator",
        name: "scale_invariance",
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("grad_rel_error={grad_worst:e} unaligned_output_shift={raw_moved:e}")
        } else {
            problems.join("; ")
        },
    }
}

/// Runs all three checks against `params`; `data`, when given, supplies
/// real item features and degrees for the gradient-ratio check.
pub fn check_theorems(params: &ModelParams, data: Option<&TrainData>, options: &CheckOptions) -> TheoremReport {
    let (a, buckets) = check_degree_ratio(params, data, options.seed);
    let b = check_scale_preservation(options.seed);
    let c = check_scale_invariance(params, options);
    TheoremReport {
        checks: vec![a, b, c],
        buckets,
    }
}
