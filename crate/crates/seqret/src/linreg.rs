//! Ordinary least squares via column-pivoted QR.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::DesignMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct LinearFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    /// Homoskedastic vcov; bootstrap overrides it for reported inference.
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
    pub n_obs: usize,
    pub r2: f64,
}

impl LinearFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vcov[(i, i)].max(0.0).sqrt())
    }

    pub fn coefficient_map(&self) -> std::collections::BTreeMap<String, f64> {
        self.names
            .iter()
            .cloned()
            .zip(self.coefficients.iter().copied())
            .collect()
    }
}

/// Least squares of `y` on the design columns. Rank deficiency (relative to
/// a 1e-10 pivot tolerance) is an error listing the collinear columns.
pub fn ols(design: &DesignMatrix, y: &[f64]) -> Result<LinearFit> {
    let n = design.n_rows();
    let p = design.n_cols();
    assert_eq!(y.len(), n);
    if n < p {
        return Err(Error::RankDeficient(design.names.clone()));
    }
    let a = &design.matrix;
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let mut idx = DMatrix::from_fn(1, p, |_, c| c as f64);
    qr.p().permute_columns(&mut idx);
    let perm: Vec<usize> = (0..p).map(|i| idx[(0, i)] as usize).collect();

    let tol = 1e-10 * r[(0, 0)].abs().max(1.0);
    let deficient: Vec<String> = (0..p)
        .filter(|&i| r[(i, i)].abs() <= tol)
        .map(|i| design.names[perm[i]].clone())
        .collect();
    if !deficient.is_empty() {
        return Err(Error::RankDeficient(deficient));
    }

    let yv = DVector::from_column_slice(y);
    let q = qr.q();
    let qty = q.transpose() * &yv; // p-vector
    // back substitution R z = Q'y
    let mut z = DVector::zeros(p);
    for i in (0..p).rev() {
        let mut s = qty[i];
        for j in (i + 1)..p {
            s -= r[(i, j)] * z[j];
        }
        z[i] = s / r[(i, i)];
    }
    let mut beta = DVector::zeros(p);
    for i in 0..p {
        beta[perm[i]] = z[i];
    }

    let fitted = a * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };

    // vcov = sigma^2 P R^-1 R^-T P'
    let sigma2 = if n > p { rss / (n - p) as f64 } else { 0.0 };
    let mut rinv = DMatrix::identity(p, p);
    for col in 0..p {
        let mut x = DVector::zeros(p);
        for i in (0..p).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for j in (i + 1)..p {
                s -= r[(i, j)] * x[j];
            }
            x[i] = s / r[(i, i)];
        }
        rinv.set_column(col, &x);
    }
    let cov_perm = &rinv * rinv.transpose() * sigma2;
    let mut vcov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            vcov[(perm[i], perm[j])] = cov_perm[(i, j)];
        }
    }

    Ok(LinearFit {
        names: design.names.clone(),
        coefficients: beta.iter().copied().collect(),
        residuals,
        vcov,
        n_obs: n,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn design_from(matrix: DMatrix<f64>, names: &[&str]) -> DesignMatrix {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let index: BTreeMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        DesignMatrix {
            matrix,
            names,
            index,
        }
    }

    #[test]
    fn exact_recovery_without_noise() {
        let n = 50;
        let mut m = DMatrix::zeros(n, 3);
        for i in 0..n {
            m[(i, 0)] = 1.0;
            m[(i, 1)] = (i as f64) / 10.0;
            m[(i, 2)] = ((i * i) % 7) as f64;
        }
        let d = design_from(m.clone(), &["const", "x1", "x2"]);
        let beta = [2.0, -1.5, 0.25];
        let y: Vec<f64> = (0..n)
            .map(|i| beta[0] + beta[1] * m[(i, 1)] + beta[2] * m[(i, 2)])
            .collect();
        let fit = ols(&d, &y).unwrap();
        for (b, e) in fit.coefficients.iter().zip(beta) {
            assert!((b - e).abs() < 1e-10);
        }
        assert!((fit.r2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let n = 80;
        let mut m = DMatrix::zeros(n, 2);
        for i in 0..n {
            m[(i, 0)] = 1.0;
            m[(i, 1)] = (i as f64 * 0.7).sin();
        }
        let d = design_from(m.clone(), &["const", "x"]);
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
        let fit = ols(&d, &y).unwrap();
        for c in 0..2 {
            let dot: f64 = (0..n).map(|i| m[(i, c)] * fit.residuals[i]).sum();
            assert!(dot.abs() < 1e-8 * n as f64);
        }
    }

    #[test]
    fn collinear_columns_reported() {
        let n = 30;
        let mut m = DMatrix::zeros(n, 3);
        for i in 0..n {
            m[(i, 0)] = 1.0;
            m[(i, 1)] = i as f64;
            m[(i, 2)] = 2.0 * i as f64; // exact copy of x1 scaled
        }
        let d = design_from(m, &["const", "x1", "x1_twice"]);
        let y = vec![1.0; n];
        match ols(&d, &y) {
            Err(Error::RankDeficient(cols)) => assert!(!cols.is_empty()),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn dummy_regression_recovers_group_means() {
        // y on a one-hot dummy: coefficient = group mean difference
        let n = 40;
        let mut m = DMatrix::zeros(n, 2);
        let mut y = Vec::new();
        for i in 0..n {
            m[(i, 0)] = 1.0;
            let g = (i % 2) as f64;
            m[(i, 1)] = g;
            y.push(if g > 0.5 { 5.0 } else { 2.0 });
        }
        let d = design_from(m, &["const", "g"]);
        let fit = ols(&d, &y).unwrap();
        assert!((fit.coefficient("const").unwrap() - 2.0).abs() < 1e-10);
        assert!((fit.coefficient("g").unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn analytic_se_sanity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let mut m = DMatrix::zeros(n, 2);
        let mut y = Vec::new();
        for i in 0..n {
            m[(i, 0)] = 1.0;
            let x: f64 = rng.gen_range(-1.0..1.0);
            m[(i, 1)] = x;
            let eps: f64 = rng.gen_range(-0.5..0.5);
            y.push(1.0 + 2.0 * x + eps);
        }
        let d = design_from(m, &["const", "x"]);
        let fit = ols(&d, &y).unwrap();
        // uniform(-0.5,0.5) noise: var 1/12; x uniform(-1,1): var 1/3
        // se(beta_x) ~ sqrt((1/12)/(n/3))
        let expect = ((1.0 / 12.0) / (n as f64 / 3.0)).sqrt();
        let got = fit.se("x").unwrap();
        assert!((got / expect - 1.0).abs() < 0.15, "{got} vs {expect}");
    }
}
