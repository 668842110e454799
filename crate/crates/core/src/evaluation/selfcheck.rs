//! Finite-difference checks for every tape operator and a small geometry
//! suite, shared by the `check` command and the test-suite.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::data::{seeded_rng, Rng};
use crate::geometry::{
    constraint_residual, exp_origin, log_origin, lorentz_dist, lorentz_to_poincare, poincare_dist, LorentzVec,
    TangentVec,
};

use super::theorems::CheckOutcome;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so that near-zero gradients
/// are compared absolutely.
pub const FD_FLOOR: f64 = 1e-3;

type Inputs = Vec<(Vec<f64>, Vec<usize>)>;

/// One operator under test: a generator of input points kept away from
/// kinks, and the graph built on them.
#[derive(Clone, Copy)]
pub struct OpCase {
    pub name: &'static str,
    pub inputs: fn(&mut Rng) -> Inputs,
    pub build: fn(&mut Tape, &[Var]) -> Var,
}

fn normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn uniform(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Normal draws pushed at least `gap` away from zero.
fn off_zero(rng: &mut Rng, n: usize, gap: f64) -> Vec<f64> {
    normal(rng, n).into_iter().map(|x| if x.abs() < gap { x.signum() * gap + x } else { x }).collect()
}

fn vec5(rng: &mut Rng) -> Inputs {
    vec![(normal(rng, 5), vec![5])]
}

fn two_vec5(rng: &mut Rng) -> Inputs {
    vec![(normal(rng, 5), vec![5]), (normal(rng, 5), vec![5])]
}

/// A `[T, C]` sequence whose per-column maxima are separated from the
/// runner-up.
fn separated_sequence(rng: &mut Rng) -> Inputs {
    let (t, c) = (6, 3);
    let mut data = vec![0.0; t * c];
    for col in 0..c {
        let mut levels: Vec<f64> = (0..t).map(|k| k as f64 * 0.3).collect();
        for i in (1..t).rev() {
            levels.swap(i, rng.random_range(0..=i));
        }
        for (row, l) in levels.into_iter().enumerate() {
            data[row * c + col] = l + rng.random_range(-0.05..0.05);
        }
    }
    vec![(data, vec![t, c])]
}

pub fn operator_cases() -> Vec<OpCase> {
    vec![
        OpCase { name: "add", inputs: two_vec5, build: |t, v| t.add(v[0], v[1]) },
        OpCase { name: "sub", inputs: two_vec5, build: |t, v| t.sub(v[0], v[1]) },
        OpCase { name: "mul", inputs: two_vec5, build: |t, v| t.mul(v[0], v[1]) },
        OpCase {
            name: "matmul_vector",
            inputs: |r| vec![(normal(r, 12), vec![3, 4]), (normal(r, 4), vec![4])],
            build: |t, v| t.matmul(v[0], v[1]),
        },
        OpCase {
            name: "matmul_matrix",
            inputs: |r| vec![(normal(r, 6), vec![2, 3]), (normal(r, 12), vec![3, 4])],
            build: |t, v| t.matmul(v[0], v[1]),
        },
        OpCase {
            name: "conv1d",
            inputs: |r| vec![(normal(r, 14), vec![7, 2]), (normal(r, 18), vec![3, 3, 2]), (normal(r, 3), vec![3])],
            build: |t, v| t.conv1d(v[0], v[1], Some(v[2])),
        },
        OpCase { name: "max_pool_time", inputs: separated_sequence, build: |t, v| t.max_pool_time(v[0]) },
        OpCase {
            name: "concat",
            inputs: |r| vec![(normal(r, 3), vec![3]), (normal(r, 4), vec![2, 2]), (normal(r, 1), vec![1])],
            build: |t, v| t.concat(v),
        },
        OpCase { name: "mean", inputs: vec5, build: |t, v| t.mean(v[0]) },
        OpCase { name: "sum", inputs: vec5, build: |t, v| t.sum(v[0]) },
        OpCase { name: "tanh", inputs: vec5, build: |t, v| t.tanh(v[0]) },
        OpCase { name: "sigmoid", inputs: vec5, build: |t, v| t.sigmoid(v[0]) },
        OpCase { name: "relu", inputs: |r| vec![(off_zero(r, 5, 0.01), vec![5])], build: |t, v| t.relu(v[0]) },
        OpCase { name: "max_zero", inputs: |r| vec![(off_zero(r, 5, 0.01), vec![5])], build: |t, v| t.max_zero(v[0]) },
        OpCase { name: "cosh", inputs: vec5, build: |t, v| t.cosh(v[0]) },
        OpCase { name: "sinh", inputs: vec5, build: |t, v| t.sinh(v[0]) },
        OpCase { name: "norm2", inputs: |r| vec![(off_zero(r, 5, 0.1), vec![5])], build: |t, v| t.norm2(v[0]) },
        OpCase {
            name: "div_scalar",
            inputs: |r| vec![(normal(r, 5), vec![5]), (off_zero(r, 1, 0.5), vec![1])],
            build: |t, v| t.div_scalar(v[0], v[1]),
        },
        OpCase { name: "log", inputs: |r| vec![(uniform(r, 5, 0.2, 3.0), vec![5])], build: |t, v| t.log(v[0]) },
        OpCase { name: "square", inputs: vec5, build: |t, v| t.square(v[0]) },
        OpCase { name: "scale", inputs: vec5, build: |t, v| t.scale(v[0], -1.7) },
        OpCase { name: "add_scalar", inputs: vec5, build: |t, v| t.add_scalar(v[0], 0.3) },
        OpCase {
            name: "clamp",
            inputs: |r| {
                let x = uniform(r, 6, -2.0, 2.0)
                    .into_iter()
                    .map(|x: f64| if ((x.abs()) - 1.0).abs() < 0.01 { x * 1.05 } else { x })
                    .collect();
                vec![(x, vec![6])]
            },
            build: |t, v| t.clamp(v[0], -1.0, 1.0),
        },
        OpCase { name: "powf", inputs: |r| vec![(uniform(r, 5, 0.2, 3.0), vec![5])], build: |t, v| t.powf(v[0], -0.5) },
        OpCase { name: "arcosh", inputs: |r| vec![(uniform(r, 5, 1.1, 5.0), vec![5])], build: |t, v| t.arcosh(v[0]) },
        OpCase {
            name: "row",
            inputs: |r| vec![(normal(r, 12), vec![4, 3])],
            build: |t, v| t.row(v[0], 2),
        },
        OpCase { name: "dot", inputs: two_vec5, build: |t, v| t.dot(v[0], v[1]) },
        OpCase {
            name: "composite_extractor",
            inputs: |r| vec![(normal(r, 12), vec![6, 2]), (normal(r, 12), vec![2, 3, 2]), (normal(r, 2), vec![2])],
            build: |t, v| {
                let c = t.conv1d(v[0], v[1], Some(v[2]));
                let h = t.tanh(c);
                let p = t.max_pool_time(h);
                let n = t.norm2(p);
                t.div_scalar(p, n)
            },
        },
    ]
}

/// Worst relative error over `points` random inputs of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct FdResult {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_error: f64,
}

impl FdResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < FD_TOL
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

fn weighted_output(case: &OpCase, inputs: &Inputs, weights: &[f64]) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(d, s)| tape.leaf(d.clone(), s.clone())).collect();
    let out = (case.build)(&mut tape, &vars);
    let w = tape.constant(weights.to_vec(), tape.shape(out).to_vec());
    let loss = tape.dot(out, w);
    (tape, vars, loss)
}

/// Compares reverse-mode gradients of `sum(w * f(x))` with central
/// differences; `w` is a fresh random weighting at every point.
pub fn fd_check(case: &OpCase, points: usize, seed: u64) -> FdResult {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let inputs = (case.inputs)(&mut rng);
        let out_len = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|(d, s)| tape.leaf(d.clone(), s.clone())).collect();
            let out = (case.build)(&mut tape, &vars);
            tape.value(out).len()
        };
        let weights = normal(&mut rng, out_len);
        let (tape, vars, loss) = weighted_output(case, &inputs, &weights);
        let grads = tape.backward(loss).expect("backward");
        for (k, (data, _)) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]);
            for j in 0..data.len() {
                let eval = |delta: f64| {
                    let mut shifted = inputs.clone();
                    shifted[k].0[j] += delta;
                    let (t, _, l) = weighted_output(case, &shifted, &weights);
                    t.scalar(l)
                };
                let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(analytic[j], numeric));
            }
        }
    }
    FdResult { name: case.name, points, max_rel_error: worst }
}

/// Whether reversal yields exactly the negated upstream gradient at
/// `points` random inputs.
pub fn grl_exact(points: usize, seed: u64, faulty: bool) -> bool {
    let mut rng = seeded_rng(seed);
    (0..points).all(|_| {
        let x = normal(&mut rng, 5);
        let w = normal(&mut rng, 5);
        let mut tape = Tape::new();
        if faulty {
            tape.inject_faulty_grl();
        }
        let v = tape.leaf(x, vec![5]);
        let r = tape.grl(v);
        let wc = tape.vector_constant(w.clone());
        let loss = tape.dot(r, wc);
        let g = tape.backward(loss).expect("backward").get(v);
        g.iter().zip(&w).all(|(a, b)| *a == -*b)
    })
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { id: "geometry", name, passed, detail }
}

/// Round-trip, distance and projection identities at random points.
pub fn geometry_checks(points: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut rng = seeded_rng(seed);
    let mut roundtrip = 0.0f64;
    let mut manifold = 0.0f64;
    let mut agreement = 0.0f64;
    let mut symmetric = 0.0f64;
    let mut self_dist = 0.0f64;
    for _ in 0..points {
        let dim = rng.random_range(2..8);
        let draw = |rng: &mut Rng| {
            let v = normal(rng, dim);
            let scale = rng.random_range(0.0..3.0) / v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            TangentVec::from_space(&v.iter().map(|x| x * scale).collect::<Vec<_>>())
        };
        let (u, w) = (draw(&mut rng), draw(&mut rng));
        let (x, y) = (exp_origin(&u), exp_origin(&w));
        let back = log_origin(&x);
        roundtrip = roundtrip.max(back.space().iter().zip(u.space()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        manifold = manifold.max(constraint_residual(x.coords()).abs());
        let dl = lorentz_dist(&x, &y).expect("same dim");
        let dp = poincare_dist(&lorentz_to_poincare(&x), &lorentz_to_poincare(&y)).expect("same dim");
        agreement = agreement.max((dl - dp).abs() / dl.max(1.0));
        symmetric = symmetric.max((dl - lorentz_dist(&y, &x).expect("same dim")).abs());
        self_dist = self_dist.max(lorentz_dist(&x, &x).expect("same dim"));
    }
    let origin = LorentzVec::origin(3);
    vec![
        outcome("exp_log_roundtrip", roundtrip < 1e-9, format!("max error {roundtrip:e}")),
        outcome("on_manifold", manifold < 1e-9, format!("max residual {manifold:e}")),
        outcome("lorentz_poincare_agree", agreement < 1e-6, format!("max relative gap {agreement:e}")),
        outcome("distance_symmetric", symmetric < 1e-12, format!("max asymmetry {symmetric:e}")),
        outcome("self_distance_zero", self_dist == 0.0, format!("max d(x, x) {self_dist:e}")),
        outcome("origin_maps_to_centre", lorentz_to_poincare(&origin).radius() == 0.0, String::new()),
    ]
}
