use serde::{Deserialize, Serialize};

use super::{check_dim, Dataset};
use crate::artifact::{Artifact, ArtifactKind};
use crate::error::{Error, Result};

/// RBF kernel `exp(-|a-b|^2 / (2 bandwidth^2))`.
pub fn rbf_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrrConfig {
    pub bandwidth: f64,
    pub ridge: f64,
}

impl Default for KrrConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.5,
            ridge: 1e-3,
        }
    }
}

/// Kernel ridge regressor with predictions clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRegressor {
    pub support: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub bandwidth: f64,
    pub ridge: f64,
}

impl Artifact for TrainedRegressor {
    const KIND: ArtifactKind = ArtifactKind::Regressor;
}

impl TrainedRegressor {
    /// Solve `(K + ridge I) alpha = y` by Cholesky factorization.
    pub fn fit(data: &Dataset, config: KrrConfig) -> Result<Self> {
        let KrrConfig { bandwidth, ridge } = config;
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ridge must be positive, got {ridge}"
            )));
        }
        if data.is_empty() {
            return Err(Error::DegenerateData("regressor needs at least one sample".into()));
        }
        if let Some(t) = data.targets().iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidParameter(format!("target {t} outside [0, 1]")));
        }
        let x = data.inputs();
        let mut system = gram_matrix(x, bandwidth);
        for (i, row) in system.iter_mut().enumerate() {
            row[i] += ridge;
        }
        let coefficients = cholesky_solve(system, data.targets())?;
        Ok(Self {
            support: x.to_vec(),
            coefficients,
            bandwidth,
            ridge,
        })
    }

    /// Unclamped kernel expansion `sum_i alpha_i k(x_i, x)`.
    pub fn raw_predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.support.first().map_or(0, Vec::len), x)?;
        Ok(self
            .support
            .iter()
            .zip(&self.coefficients)
            .map(|(s, a)| a * rbf_kernel(s, x, self.bandwidth))
            .sum())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.raw_predict(x)?.clamp(0.0, 1.0))
    }

    pub fn input_dim(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }
}

pub(crate) fn gram_matrix(x: &[Vec<f64>], bandwidth: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        k[i][i] = 1.0;
        for j in 0..i {
            let v = rbf_kernel(&x[i], &x[j], bandwidth);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Solve `A z = b` for symmetric positive definite `A`.
fn cholesky_solve(mut a: Vec<Vec<f64>>, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    // In-place lower factor: A = L L^T.
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return Err(Error::DegenerateData(
                "kernel system is not positive definite".into(),
            ));
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= a[i][k] * z[k];
        }
        z[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= a[k][i] * z[k];
        }
        z[i] /= a[i][i];
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng as _;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng::rng_from(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen()).collect()).collect()
    }

    #[test]
    fn single_sample_shrinks_by_ridge() {
        let d = Dataset::regression(vec![vec![0.3, 0.4]], vec![1.0]).unwrap();
        for ridge in [1e-3, 0.5, 2.0] {
            let r = TrainedRegressor::fit(&d, KrrConfig { bandwidth: 0.5, ridge }).unwrap();
            let p = r.predict(&[0.3, 0.4]).unwrap();
            assert!((p - 1.0 / (1.0 + ridge)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_targets_shrink_and_converge_with_small_ridge() {
        let x = random_points(12, 3, 1);
        let d = Dataset::regression(x.clone(), vec![0.7; 12]).unwrap();
        let big = TrainedRegressor::fit(&d, KrrConfig { bandwidth: 0.5, ridge: 0.1 }).unwrap();
        let tiny = TrainedRegressor::fit(&d, KrrConfig { bandwidth: 0.5, ridge: 1e-9 }).unwrap();
        // K (K + λI)^-1 has spectrum in [0, 1): fitted values shrink in norm,
        // though a single point may overshoot.
        let fitted: f64 = x.iter().map(|xi| big.raw_predict(xi).unwrap().powi(2)).sum();
        assert!(fitted.sqrt() <= (12.0f64 * 0.49).sqrt());
        for xi in &x {
            assert!(big.predict(xi).unwrap() > 0.0);
            assert!((tiny.predict(xi).unwrap() - 0.7).abs() < 1e-5);
        }
    }

    #[test]
    fn interpolates_and_matches_direct_solver() {
        let x = random_points(5, 3, 8);
        let mut rng = crate::rng::rng_from(9);
        let y: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
        let d = Dataset::regression(x.clone(), y.clone()).unwrap();
        let cfg = KrrConfig { bandwidth: 0.5, ridge: 1e-8 };
        let r = TrainedRegressor::fit(&d, cfg).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((r.predict(xi).unwrap() - yi).abs() < 1e-4);
        }
        // Independent route: LU solve of the same system.
        let k = DMatrix::from_fn(5, 5, |i, j| {
            rbf_kernel(&x[i], &x[j], 0.5) + if i == j { 1e-8 } else { 0.0 }
        });
        let alpha = k.lu().solve(&DVector::from_vec(y)).unwrap();
        for (a, b) in alpha.iter().zip(&r.coefficients) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn residual_is_tiny() {
        let x = random_points(30, 4, 3);
        let mut rng = crate::rng::rng_from(4);
        let y: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let d = Dataset::regression(x.clone(), y.clone()).unwrap();
        let r = TrainedRegressor::fit(&d, KrrConfig::default()).unwrap();
        let k = gram_matrix(&x, 0.5);
        for i in 0..30 {
            let lhs: f64 = (0..30).map(|j| k[i][j] * r.coefficients[j]).sum::<f64>()
                + 1e-3 * r.coefficients[i];
            assert!((lhs - y[i]).abs() <= 1e-8);
        }
    }

    #[test]
    fn gram_matrix_is_psd() {
        for seed in 0..5 {
            let x = random_points(8, 3, seed);
            let k = gram_matrix(&x, 0.4);
            let m = DMatrix::from_fn(8, 8, |i, j| k[i][j]);
            assert_eq!(m, m.transpose());
            for ev in m.symmetric_eigenvalues().iter() {
                assert!(*ev >= -1e-9);
            }
        }
    }

    #[test]
    fn bad_hyperparameters() {
        let d = Dataset::regression(vec![vec![0.0]], vec![0.5]).unwrap();
        assert!(TrainedRegressor::fit(&d, KrrConfig { bandwidth: 0.0, ridge: 1.0 }).is_err());
        assert!(TrainedRegressor::fit(&d, KrrConfig { bandwidth: 1.0, ridge: -1.0 }).is_err());
    }

    #[test]
    fn outputs_are_clamped() {
        let d = Dataset::regression(vec![vec![0.0], vec![0.05]], vec![1.0, 0.0]).unwrap();
        let r = TrainedRegressor::fit(&d, KrrConfig { bandwidth: 0.5, ridge: 1e-6 }).unwrap();
        for i in 0..100 {
            let p = r.predict(&[i as f64 / 50.0 - 1.0]).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }
}
