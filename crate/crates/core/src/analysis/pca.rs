use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `m × d`, one unit-norm principal axis per row.
    pub components: Tensor,
    /// Variance share of every axis (length `d`), nonincreasing.
    pub explained_ratio: Vec<f64>,
    /// `n × m` projections onto the retained axes.
    pub coords: Tensor,
    /// `n × 2` projections onto the first two axes (zero-padded when `d = 1`).
    pub coords_2d: Tensor,
}

impl Pca {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }
}

/// Keeps the fewest principal axes whose cumulative explained variance
/// reaches `var_threshold`. Axis signs are fixed so the largest-magnitude
/// loading is positive.
pub fn pca_reduce(x: &Tensor, var_threshold: f64) -> Result<Pca> {
    let (n, d) = x.dims2();
    if n < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 rows, got {n}")));
    }
    if !(var_threshold > 0.0 && var_threshold <= 1.0) {
        return Err(Error::Config(format!("variance threshold must lie in (0, 1], got {var_threshold}")));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.at(i, j)).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x.at(i, j) - mean[j]);
    let scale = x.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if centered.iter().all(|v| v.abs() <= 1e-12 * scale) {
        return Err(Error::Degenerate("all rows are identical (zero variance)".into()));
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let explained_ratio: Vec<f64> = values.iter().map(|v| v / total).collect();

    let mut m = d;
    let mut cumulative = 0.0;
    for (i, r) in explained_ratio.iter().enumerate() {
        cumulative += r;
        if cumulative >= var_threshold - 1e-12 {
            m = i + 1;
            break;
        }
    }

    let axes: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let mut axis: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let pivot = axis
                .iter()
                .copied()
                .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
            if pivot < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            axis
        })
        .collect();

    let project = |count: usize| -> Result<Tensor> {
        let mut out = Vec::with_capacity(n * count);
        for i in 0..n {
            for axis in axes.iter().take(count) {
                out.push(centered.row(i).iter().zip(axis).map(|(a, b)| a * b).sum());
            }
            out.extend(std::iter::repeat_n(0.0, count.saturating_sub(axes.len())));
        }
        Tensor::matrix(n, count, out)
    };

    Ok(Pca {
        mean,
        components: Tensor::matrix(m, d, axes[..m].concat())?,
        explained_ratio,
        coords: project(m)?,
        coords_2d: project(2)?,
    })
}
