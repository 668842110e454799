//! Degree/radius export with a 2-D principal-component layout.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::geometry::{exp_origin, lorentz_to_poincare, TangentVec};
use crate::model::ModelParams;
use crate::training::TrainData;

use super::hierarchy::{poincare_radius, sample_items};
use super::item_feature;

#[derive(Debug, Clone, PartialEq)]
pub struct VizRow {
    pub item: String,
    pub degree: u32,
    pub radius: f64,
    pub x: f64,
    pub y: f64,
}

/// Projects rows onto their top two principal directions. Each direction
/// is oriented so that its largest component is positive.
pub fn top2_projection(features: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = features.len();
    let d = features.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return vec![[0.0, 0.0]; n];
    }
    let mean: Vec<f64> = (0..d).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| features[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut dirs = Vec::new();
    for &k in order.iter().take(2) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        dirs.push(v);
    }
    while dirs.len() < 2 {
        dirs.push(vec![0.0; d]);
    }
    (0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            [p(&dirs[0]), p(&dirs[1])]
        })
        .collect()
}

/// One row per sampled trained item of `domain`: degree, Poincaré radius of
/// `1/2 (S + S^)`, and the ball coordinates of its 2-D projection.
pub fn degree_radius_rows(params: &ModelParams, data: &TrainData, domain: Domain, limit: usize, seed: u64) -> Result<Vec<VizRow>> {
    let items = sample_items(data, domain, limit, seed);
    if items.is_empty() {
        return Err(Error::EmptyDataset(format!("no trained {domain} items")));
    }
    let train = &data.corpus(domain).train;
    let features: Vec<Vec<f64>> = items.iter().map(|&i| item_feature(params, data, domain, i)).collect();
    let planar = top2_projection(&features);
    Ok(items
        .iter()
        .zip(&features)
        .zip(planar)
        .map(|((&i, f), xy)| {
            let ball = lorentz_to_poincare(&exp_origin(&TangentVec::from_space(&xy)));
            VizRow {
                item: train.items.name(i).to_string(),
                degree: train.item_degree(i),
                radius: poincare_radius(f),
                x: ball.coords()[0],
                y: ball.coords()[1],
            }
        })
        .collect())
}

pub fn rows_to_csv(rows: &[VizRow]) -> String {
    let mut out = String::from("item,degree,radius,x,y\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:?},{:?},{:?}", r.item, r.degree, r.radius, r.x, r.y);
    }
    out
}
