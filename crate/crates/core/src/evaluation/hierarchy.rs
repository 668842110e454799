//! Degree/radius rank agreement of item embeddings.

use rand::seq::index;

use crate::data::{seeded_rng, Domain};
use crate::error::{Error, Result};
use crate::geometry::{exp_origin, lorentz_to_poincare, TangentVec};
use crate::model::ModelParams;
use crate::training::TrainData;

use super::item_feature;

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fidelity {
    pub rho: f64,
    /// The correlation was undefined and `rho` was set to 0.
    pub flagged: bool,
    pub items: usize,
}

/// Poincaré-ball radius of a tangent feature lifted at the origin.
pub fn poincare_radius(feature: &[f64]) -> f64 {
    lorentz_to_poincare(&exp_origin(&TangentVec::from_space(feature))).radius()
}

/// Spearman correlation between degree and negative Poincaré radius.
pub fn hierarchy_fidelity(features: &[Vec<f64>], degrees: &[u32]) -> Result<Fidelity> {
    if features.len() != degrees.len() {
        return Err(Error::Usage("one degree per feature is required".into()));
    }
    if features.len() < 2 {
        return Err(Error::Usage("hierarchy fidelity needs at least 2 items".into()));
    }
    let neg_radius: Vec<f64> = features.iter().map(|f| -poincare_radius(f)).collect();
    let deg: Vec<f64> = degrees.iter().map(|&d| d as f64).collect();
    Ok(match spearman(&deg, &neg_radius) {
        Some(rho) => Fidelity {
            rho,
            flagged: false,
            items: features.len(),
        },
        None => Fidelity {
            rho: 0.0,
            flagged: true,
            items: features.len(),
        },
    })
}

/// Items of `domain` with at least one training interaction, sampled down
/// to `limit` with a seeded draw and returned in ascending id order.
pub fn sample_items(data: &TrainData, domain: Domain, limit: usize, seed: u64) -> Vec<usize> {
    let train = &data.corpus(domain).train;
    let eligible: Vec<usize> = (0..train.n_items()).filter(|&i| train.item_degree(i) > 0).collect();
    if eligible.len() <= limit {
        return eligible;
    }
    let mut picks: Vec<usize> = index::sample(&mut seeded_rng(seed), eligible.len(), limit)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    picks.sort_unstable();
    picks
}

/// [`hierarchy_fidelity`] over up to `limit` trained items of `domain`.
pub fn item_hierarchy_fidelity(params: &ModelParams, data: &TrainData, domain: Domain, limit: usize, seed: u64) -> Result<Fidelity> {
    let items = sample_items(data, domain, limit, seed);
    let train = &data.corpus(domain).train;
    let features: Vec<Vec<f64>> = items.iter().map(|&i| item_feature(params, data, domain, i)).collect();
    let degrees: Vec<u32> = items.iter().map(|&i| train.item_degree(i)).collect();
    hierarchy_fidelity(&features, &degrees)
}
