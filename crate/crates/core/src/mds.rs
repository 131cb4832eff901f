//! Metric multidimensional scaling: classical scaling start, then SMACOF
//! (Guttman transform) iterations on raw stress.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proximity::DistanceMatrix;
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// `n × dim` coordinates.
    pub coords: Array2<f64>,
    pub stress: f64,
    /// Stress at the start and after every iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
}

pub const DEFAULT_MAX_ITER: usize = 300;
const REL_TOL: f64 = 1e-9;

/// Raw stress `Σ_{i<j} (d_ij − ‖y_i − y_j‖)²`.
pub fn stress(dist: &DistanceMatrix, coords: &Array2<f64>) -> f64 {
    let n = dist.len();
    // Row sums are collected in order so the total is reproducible.
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let e = euclid(coords, i, j);
                    (dist.get(i, j) - e).powi(2)
                })
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum()
}

fn euclid(y: &Array2<f64>, i: usize, j: usize) -> f64 {
    y.row(i)
        .iter()
        .zip(y.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Classical (Torgerson) scaling. Dimensions without a positive eigenvalue
/// are filled with small seeded noise so SMACOF can move them.
pub fn classical_scaling(dist: &DistanceMatrix, dim: usize, seed: u64) -> Array2<f64> {
    let n = dist.len();
    let mut b = DMatrix::<f64>::from_fn(n, n, |i, j| -0.5 * dist.get(i, j).powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| b.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| dist.get(i, j))
        .fold(0.0, f64::max)
        .max(1.0);
    let mut rng = seeds::rng(seed, 0);
    let mut coords = Array2::zeros((n, dim));
    for k in 0..dim {
        let lambda = order.get(k).map(|&c| eig.eigenvalues[c]).unwrap_or(0.0);
        if lambda > 1e-12 {
            let v = eig.eigenvectors.column(order[k]);
            // Fix the sign so the largest-magnitude entry is positive.
            let pivot = (0..n).max_by(|&a, &c| v[a].abs().total_cmp(&v[c].abs()).then(c.cmp(&a))).unwrap_or(0);
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..n {
                coords[[i, k]] = sign * v[i] * lambda.sqrt();
            }
        } else {
            for i in 0..n {
                coords[[i, k]] = 1e-3 * scale * (rng.random::<f64>() - 0.5);
            }
        }
    }
    coords
}

/// One Guttman transform with unit weights: `Y ← B(Y) Y / n`.
fn guttman(dist: &DistanceMatrix, y: &Array2<f64>) -> Array2<f64> {
    let n = y.nrows();
    let dim = y.ncols();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; dim];
            let mut diag = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e = euclid(y, i, j);
                let bij = if e > 0.0 { -dist.get(i, j) / e } else { 0.0 };
                diag -= bij;
                for k in 0..dim {
                    out[k] += bij * y[[j, k]];
                }
            }
            for k in 0..dim {
                out[k] = (out[k] + diag * y[[i, k]]) / n as f64;
            }
            out
        })
        .collect();
    Array2::from_shape_vec((n, dim), rows.into_iter().flatten().collect()).expect("shape")
}

/// Embed `dist` in `dim` dimensions.
pub fn mds_embed(dist: &DistanceMatrix, dim: usize, max_iter: usize, seed: u64) -> Result<Embedding> {
    if dim == 0 {
        return Err(Error::Param("embedding dimension must be at least 1".into()));
    }
    // Re-validate in case the matrix was built without checks.
    DistanceMatrix::new(dist.values().clone(), dist.backend())?;
    let n = dist.len();
    let mut y = classical_scaling(dist, dim, seed);
    let mut s = stress(dist, &y);
    let mut history = vec![s];
    let mut iterations = 0;
    if n > 1 {
        while iterations < max_iter && s > 0.0 {
            let next = guttman(dist, &y);
            let s_next = stress(dist, &next);
            iterations += 1;
            // Majorization never increases stress; guard against round-off.
            if s_next > s {
                history.push(s);
                break;
            }
            y = next;
            let rel = (s - s_next) / s;
            s = s_next;
            history.push(s);
            if rel < REL_TOL {
                break;
            }
        }
    }
    Ok(Embedding {
        coords: y,
        stress: s,
        history,
        iterations,
    })
}
