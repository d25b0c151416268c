//! Fréchet distance between Gaussian fits of two feature sets, and diversity.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Weight of the scaled-identity target used when a set has no more samples than dimensions.
pub const SHRINKAGE: f64 = 0.1;

fn to_matrix(set: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = set.len();
    let d = set.first().map(|r| r.len()).ok_or_else(|| Error::invalid("empty feature set"))?;
    if set.iter().any(|r| r.len() != d) {
        return Err(Error::LengthMismatch("feature vectors differ in dimension".into()));
    }
    if let Some(i) = set.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { frame: i });
    }
    Ok(DMatrix::from_fn(n, d, |i, j| set[i][j]))
}

/// Sample mean and unbiased covariance (zero covariance for a single sample),
/// shrunk towards `tr(S)/d * I` when `n <= d`.
pub fn gaussian_fit(set: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = to_matrix(set)?;
    let (n, d) = m.shape();
    let mean = DVector::from_fn(d, |j, _| m.column(j).sum() / n as f64);
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = if n > 1 {
        centered.transpose() * &centered / (n as f64 - 1.0)
    } else {
        DMatrix::zeros(d, d)
    };
    if n <= d {
        let scale = cov.trace() / d as f64;
        cov = cov * (1.0 - SHRINKAGE) + DMatrix::identity(d, d) * (SHRINKAGE * scale);
    }
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, floored at 0. The
/// trace of the root is taken from the symmetric form `sqrt(A) B sqrt(A)`.
pub fn fid_from_stats(mu_a: &DVector<f64>, s_a: &DMatrix<f64>, mu_b: &DVector<f64>, s_b: &DMatrix<f64>) -> f64 {
    let diff = (mu_a - mu_b).norm_squared();
    let ra = sym_sqrt(s_a);
    let inner = &ra * s_b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    (diff + s_a.trace() + s_b.trace() - 2.0 * tr_root).max(0.0)
}

pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, sa) = gaussian_fit(a)?;
    let (mb, sb) = gaussian_fit(b)?;
    if ma.len() != mb.len() {
        return Err(Error::LengthMismatch("feature sets differ in dimension".into()));
    }
    Ok(fid_from_stats(&ma, &sa, &mb, &sb))
}

/// Mean Euclidean distance over up to `pairs` disjoint pairs drawn with `seed`.
pub fn diversity(set: &[Vec<f64>], pairs: usize, seed: u64) -> Result<f64> {
    let m = to_matrix(set)?;
    if set.len() < 2 {
        return Err(Error::invalid("diversity needs at least two samples"));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let p = pairs.clamp(1, set.len() / 2);
    let total: f64 = (0..p)
        .map(|k| (m.row(idx[2 * k]) - m.row(idx[2 * k + 1])).norm())
        .sum();
    Ok(total / p as f64)
}

/// Z-normalizes both sets with the mean/std of `reference`. Dimensions that are
/// constant in the reference (std below 1e-9) are centered but not scaled.
pub fn normalize_by(reference: &[Vec<f64>], sets: &[&[Vec<f64>]]) -> Vec<Vec<Vec<f64>>> {
    let d = reference.first().map(|r| r.len()).unwrap_or(0);
    let n = reference.len().max(1) as f64;
    let mean: Vec<f64> = (0..d).map(|j| reference.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let v = reference.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            let sd = v.sqrt();
            if sd < 1e-9 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    sets.iter()
        .map(|s| {
            s.iter()
                .map(|r| r.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]).collect())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets() {
        let a: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64, 1.5]).collect();
        assert!(fid(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn one_dimensional_closed_form() {
        // sample variance 1 with the unbiased estimator
        let a = vec![vec![-1.0 / 2f64.sqrt()], vec![1.0 / 2f64.sqrt()]];
        let b: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] + 1.0]).collect();
        // n <= d does not hold here (2 samples, 1 dim), no shrinkage
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mean_shift() {
        let a: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 5) as f64, (i % 3) as f64]).collect();
        let b: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] + 3.0, r[1] - 4.0]).collect();
        assert!((fid(&a, &b).unwrap() - 25.0).abs() < 1e-8);
        assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite() {
        let a = vec![vec![1.0], vec![f64::NAN]];
        assert!(fid(&a, &a).is_err());
    }

    #[test]
    fn diversity_cases() {
        let same = vec![vec![1.0, 2.0]; 6];
        assert_eq!(diversity(&same, 3, 0).unwrap(), 0.0);
        let two = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_eq!(diversity(&two, 1, 5).unwrap(), 5.0);
        let many: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        assert_eq!(diversity(&many, 5, 7).unwrap(), diversity(&many, 5, 7).unwrap());
    }

    #[test]
    fn constant_reference_dimension_is_not_scaled() {
        let r = vec![vec![0.0, 1.0], vec![0.0, 3.0]];
        let g = vec![vec![0.5, 2.0]];
        let n = normalize_by(&r, &[&g]);
        assert_eq!(n[0][0][0], 0.5);
        assert!((n[0][0][1] - 0.0).abs() < 1e-12);
    }
}
