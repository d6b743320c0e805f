//! Multinomial-logit engine: log-likelihood, analytic score and observed
//! information, Newton optimizer with backtracking line search, prediction,
//! Wald tests and marginal effects at means.
//!
//! Coefficients are a (K-1) x p matrix over the non-baseline alternatives in
//! index order; the baseline row is implicitly zero. The flattened parameter
//! vector is alternative-major: entry r*p + c belongs to non-baseline row r,
//! design column c.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MnlConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub ridge: f64,
}

impl Default for MnlConfig {
    fn default() -> Self {
        MnlConfig {
            tol: 1e-8,
            max_iter: 200,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MnlModel {
    pub n_alternatives: usize,
    pub baseline: usize,
    pub column_names: Vec<String>,
    /// (K-1) x p, rows in alternative index order skipping the baseline.
    pub coefficients: DMatrix<f64>,
    /// Inverse of (-Hessian + ridge I) at the optimum.
    pub vcov: DMatrix<f64>,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub pseudo_r2: f64,
    pub separation_flagged: bool,
}

impl MnlModel {
    /// Non-baseline alternatives in flattened row order.
    pub fn non_baseline(&self) -> Vec<usize> {
        (0..self.n_alternatives)
            .filter(|a| *a != self.baseline)
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.coefficients.nrows() * self.coefficients.ncols()
    }

    pub fn param_index(&self, alternative: usize, column: usize) -> Option<usize> {
        let row = self.non_baseline().iter().position(|a| *a == alternative)?;
        Some(row * self.coefficients.ncols() + column)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for a in self.non_baseline() {
            for c in &self.column_names {
                names.push(format!("alt{a}:{c}"));
            }
        }
        names
    }
}

/// Row-wise choice probabilities for an arbitrary coefficient matrix.
/// Utilities use max-subtraction so |Xb| up to ~700 cannot overflow.
fn probabilities(
    coefficients: &DMatrix<f64>,
    baseline: usize,
    design: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = design.nrows();
    let k = coefficients.nrows() + 1;
    let non_base: Vec<usize> = (0..k).filter(|a| *a != baseline).collect();
    // utilities: N x K with baseline column zero
    let xb = design * coefficients.transpose(); // N x (K-1)
    let mut probs = DMatrix::zeros(n, k);
    for i in 0..n {
        let mut u = vec![0.0f64; k];
        for (r, &a) in non_base.iter().enumerate() {
            u[a] = xb[(i, r)];
        }
        let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in u.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for a in 0..k {
            probs[(i, a)] = u[a] / denom;
        }
    }
    probs
}

fn check_finite(design: &DesignMatrix) -> Result<()> {
    for i in 0..design.n_rows() {
        for c in 0..design.n_cols() {
            if !design.matrix[(i, c)].is_finite() {
                return Err(Error::NonFiniteDesign {
                    row: i,
                    column: design.names[c].clone(),
                });
            }
        }
    }
    Ok(())
}

/// Sum of log predicted probabilities of the observed choices.
pub fn mnl_loglik(
    coefficients: &DMatrix<f64>,
    baseline: usize,
    design: &DesignMatrix,
    choices: &[usize],
) -> Result<f64> {
    check_finite(design)?;
    let probs = probabilities(coefficients, baseline, &design.matrix);
    let mut ll = 0.0;
    for (i, &y) in choices.iter().enumerate() {
        ll += probs[(i, y)].max(f64::MIN_POSITIVE).ln();
    }
    Ok(ll)
}

/// Analytic score: entry (a, c) is sum_i (1{y_i=a} - P_ia) x_ic.
pub fn mnl_gradient(
    coefficients: &DMatrix<f64>,
    baseline: usize,
    design: &DesignMatrix,
    choices: &[usize],
) -> Result<DVector<f64>> {
    check_finite(design)?;
    let probs = probabilities(coefficients, baseline, &design.matrix);
    Ok(gradient_from_probs(
        &probs,
        baseline,
        &design.matrix,
        choices,
    ))
}

fn gradient_from_probs(
    probs: &DMatrix<f64>,
    baseline: usize,
    design: &DMatrix<f64>,
    choices: &[usize],
) -> DVector<f64> {
    let k = probs.ncols();
    let p = design.ncols();
    let non_base: Vec<usize> = (0..k).filter(|a| *a != baseline).collect();
    let mut g = DVector::zeros(non_base.len() * p);
    for (r, &a) in non_base.iter().enumerate() {
        for i in 0..design.nrows() {
            let resid = (choices[i] == a) as u8 as f64 - probs[(i, a)];
            for c in 0..p {
                g[r * p + c] += resid * design[(i, c)];
            }
        }
    }
    g
}

/// Observed information: block (a, b) is -sum_i x_i x_i' P_ia (1{a=b} - P_ib).
pub fn mnl_hessian(
    coefficients: &DMatrix<f64>,
    baseline: usize,
    design: &DesignMatrix,
    choices: &[usize],
) -> Result<DMatrix<f64>> {
    let _ = choices;
    check_finite(design)?;
    let probs = probabilities(coefficients, baseline, &design.matrix);
    Ok(hessian_from_probs(&probs, baseline, &design.matrix))
}

fn hessian_from_probs(probs: &DMatrix<f64>, baseline: usize, design: &DMatrix<f64>) -> DMatrix<f64> {
    let k = probs.ncols();
    let p = design.ncols();
    let n = design.nrows();
    let non_base: Vec<usize> = (0..k).filter(|a| *a != baseline).collect();
    let kk = non_base.len();
    // upper-triangle blocks, each a weighted X'X; deterministic row order
    let blocks: Vec<((usize, usize), DMatrix<f64>)> = (0..kk)
        .flat_map(|r| (r..kk).map(move |s| (r, s)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(r, s)| {
            let (a, b) = (non_base[r], non_base[s]);
            let mut block = DMatrix::zeros(p, p);
            for i in 0..n {
                let w = -probs[(i, a)] * ((a == b) as u8 as f64 - probs[(i, b)]);
                let x = design.row(i);
                for c in 0..p {
                    let wx = w * x[c];
                    for d in c..p {
                        block[(c, d)] += wx * x[d];
                    }
                }
            }
            for c in 0..p {
                for d in 0..c {
                    block[(c, d)] = block[(d, c)];
                }
            }
            ((r, s), block)
        })
        .collect();
    let mut h = DMatrix::zeros(kk * p, kk * p);
    for ((r, s), block) in blocks {
        h.view_mut((r * p, s * p), (p, p)).copy_from(&block);
        if r != s {
            h.view_mut((s * p, r * p), (p, p)).copy_from(&block.transpose());
        }
    }
    h
}

fn mat_from_vec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = v[r * cols + c];
        }
    }
    m
}

/// Columns that a pivoted QR of the design declares (near-)collinear.
pub fn collinear_columns(design: &DesignMatrix) -> Vec<String> {
    let p = design.n_cols();
    let qr = design.matrix.clone().col_piv_qr();
    let r = qr.r();
    let mut idx = DMatrix::from_fn(1, p, |_, c| c as f64);
    qr.p().permute_columns(&mut idx);
    let rank_tol = 1e-10 * r[(0, 0)].abs().max(1.0);
    let mut out = Vec::new();
    for i in 0..r.nrows().min(p) {
        if r[(i, i)].abs() <= rank_tol {
            out.push(design.names[idx[(0, i)] as usize].clone());
        }
    }
    out
}

pub fn fit_mnl(
    design: &DesignMatrix,
    choices: &[usize],
    n_alternatives: usize,
    baseline: usize,
    config: &MnlConfig,
) -> Result<MnlModel> {
    let n = design.n_rows();
    let p = design.n_cols();
    assert_eq!(choices.len(), n);
    for a in 0..n_alternatives {
        if !choices.iter().any(|&y| y == a) {
            return Err(Error::UnobservedAlternative(a));
        }
    }
    check_finite(design)?;

    let kk = n_alternatives - 1;
    let mut coef = DMatrix::zeros(kk, p);
    let mut ridge = config.ridge;
    let threshold = config.tol * (n as f64).max(1.0);
    let mut ll = mnl_loglik(&coef, baseline, design, choices)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut separation = false;

    for iter in 0..config.max_iter {
        iterations = iter + 1;
        let probs = probabilities(&coef, baseline, &design.matrix);
        let g = gradient_from_probs(&probs, baseline, &design.matrix, choices);
        if g.amax() < threshold {
            converged = true;
            iterations = iter;
            break;
        }
        let h = hessian_from_probs(&probs, baseline, &design.matrix);
        let mut neg_h = -h;
        if ridge > 0.0 {
            for i in 0..neg_h.nrows() {
                neg_h[(i, i)] += ridge;
            }
        }
        let direction = match Cholesky::new(neg_h.clone()) {
            Some(chol) => chol.solve(&g),
            None => {
                // singular information: escalate ridge, else gradient step
                let auto = 1e-8 * neg_h.trace().abs().max(1.0);
                ridge = ridge.max(auto);
                for i in 0..neg_h.nrows() {
                    neg_h[(i, i)] += auto;
                }
                match Cholesky::new(neg_h) {
                    Some(chol) => chol.solve(&g),
                    None => {
                        let cols = collinear_columns(design);
                        if !cols.is_empty() {
                            return Err(Error::RankDeficient(cols));
                        }
                        g.clone() / (n as f64)
                    }
                }
            }
        };

        // backtracking line search with Armijo condition on the likelihood
        let slope = g.dot(&direction);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let trial = &coef + step * mat_from_vec(&direction, kk, p);
            let trial_ll = mnl_loglik(&trial, baseline, design, choices)?;
            if trial_ll >= ll + 1e-4 * step * slope {
                coef = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if !separation && coef.amax() > 30.0 {
            separation = true;
            ridge = ridge.max(1e-4);
        }
    }

    // final diagnostics at the optimum
    let probs = probabilities(&coef, baseline, &design.matrix);
    let g = gradient_from_probs(&probs, baseline, &design.matrix, choices);
    if g.amax() < threshold {
        converged = true;
    }
    let h = hessian_from_probs(&probs, baseline, &design.matrix);
    let mut neg_h = -h;
    for i in 0..neg_h.nrows() {
        neg_h[(i, i)] += ridge;
    }
    let vcov = match Cholesky::new(neg_h.clone()) {
        Some(chol) => chol.inverse(),
        None => {
            let auto = 1e-8 * neg_h.trace().abs().max(1.0);
            for i in 0..neg_h.nrows() {
                neg_h[(i, i)] += auto;
            }
            Cholesky::new(neg_h)
                .map(|c| c.inverse())
                .unwrap_or_else(|| DMatrix::zeros(kk * p, kk * p))
        }
    };

    // McFadden pseudo R^2 against the intercept-only null
    let mut counts = vec![0usize; n_alternatives];
    for &y in choices {
        counts[y] += 1;
    }
    let ll_null: f64 = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                c as f64 * (c as f64 / n as f64).ln()
            }
        })
        .sum();
    let pseudo_r2 = if ll_null < 0.0 { 1.0 - ll / ll_null } else { 0.0 };

    Ok(MnlModel {
        n_alternatives,
        baseline,
        column_names: design.names.clone(),
        coefficients: coef,
        vcov,
        log_likelihood: ll,
        n_obs: n,
        converged,
        iterations,
        pseudo_r2,
        separation_flagged: separation,
    })
}

/// N x K matrix of predicted choice probabilities.
pub fn predict_proba(model: &MnlModel, design: &DesignMatrix) -> Result<DMatrix<f64>> {
    if design.names != model.column_names {
        return Err(Error::LayoutMismatch(format!(
            "model columns {:?} vs design columns {:?}",
            model.column_names, design.names
        )));
    }
    check_finite(design)?;
    Ok(probabilities(
        &model.coefficients,
        model.baseline,
        &design.matrix,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct WaldTest {
    pub stat: f64,
    pub df: usize,
    pub p: f64,
}

/// Joint Wald chi-square test that the selected flattened coefficients are 0.
pub fn wald_joint(model: &MnlModel, selector: &[usize]) -> Result<WaldTest> {
    assert!(!selector.is_empty());
    let q = selector.len();
    let mut theta = DVector::zeros(q);
    let mut sub = DMatrix::zeros(q, q);
    let p = model.coefficients.ncols();
    for (i, &si) in selector.iter().enumerate() {
        theta[i] = model.coefficients[(si / p, si % p)];
        for (j, &sj) in selector.iter().enumerate() {
            sub[(i, j)] = model.vcov[(si, sj)];
        }
    }
    let chol = Cholesky::new(sub).ok_or(Error::Singular("wald vcov submatrix"))?;
    let stat = theta.dot(&chol.solve(&theta));
    let dist = ChiSquared::new(q as f64).expect("df > 0");
    let p_value = 1.0 - dist.cdf(stat);
    Ok(WaldTest {
        stat,
        df: q,
        p: p_value,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MemEntry {
    pub variable: String,
    pub alternative: usize,
    pub effect: f64,
    pub se: f64,
}

/// Marginal effects at means table: probability-scale derivatives of each
/// alternative with respect to the requested continuous columns, with
/// delta-method standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct MemTable {
    pub entries: Vec<MemEntry>,
}

fn effects_at_row(
    coefficients: &DMatrix<f64>,
    baseline: usize,
    k: usize,
    row: &DMatrix<f64>,
    col: usize,
) -> Vec<f64> {
    let probs = probabilities(coefficients, baseline, row);
    let non_base: Vec<usize> = (0..k).filter(|a| *a != baseline).collect();
    let beta_col = |a: usize| -> f64 {
        if a == baseline {
            0.0
        } else {
            let r = non_base.iter().position(|x| *x == a).unwrap();
            coefficients[(r, col)]
        }
    };
    let avg: f64 = (0..k).map(|b| probs[(0, b)] * beta_col(b)).sum();
    (0..k)
        .map(|a| probs[(0, a)] * (beta_col(a) - avg))
        .collect()
}

pub fn marginal_effects_at_means(
    model: &MnlModel,
    design: &DesignMatrix,
    variables: &[String],
) -> Result<MemTable> {
    let x_bar = design.mean_row();
    let mut entries = Vec::new();
    for var in variables {
        let col = design.column_position(var)?;
        let values = design.matrix.column(col);
        if values.iter().all(|v| *v == 0.0 || *v == 1.0) {
            return Err(Error::IndicatorMarginalEffect(var.clone()));
        }
        let effects = effects_at_row(
            &model.coefficients,
            model.baseline,
            model.n_alternatives,
            &x_bar,
            col,
        );
        // delta method with a central-difference jacobian over theta
        let kk = model.coefficients.nrows();
        let p = model.coefficients.ncols();
        let h = 1e-6;
        let mut jac = DMatrix::zeros(model.n_alternatives, kk * p);
        for r in 0..kk {
            for c in 0..p {
                let mut up = model.coefficients.clone();
                up[(r, c)] += h;
                let mut dn = model.coefficients.clone();
                dn[(r, c)] -= h;
                let e_up = effects_at_row(&up, model.baseline, model.n_alternatives, &x_bar, col);
                let e_dn = effects_at_row(&dn, model.baseline, model.n_alternatives, &x_bar, col);
                for a in 0..model.n_alternatives {
                    jac[(a, r * p + c)] = (e_up[a] - e_dn[a]) / (2.0 * h);
                }
            }
        }
        let cov = &jac * &model.vcov * jac.transpose();
        for a in 0..model.n_alternatives {
            entries.push(MemEntry {
                variable: var.clone(),
                alternative: a,
                effect: effects[a],
                se: cov[(a, a)].max(0.0).sqrt(),
            });
        }
    }
    Ok(MemTable { entries })
}

/// JSON document for fitted models; coefficient round-trips are bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MnlModelJson {
    pub n_alternatives: usize,
    pub baseline: usize,
    pub column_names: Vec<String>,
    /// row-major (K-1) x p
    pub coefficients: Vec<f64>,
    /// lower triangle of vcov, row-major
    pub vcov_lower: Vec<f64>,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub pseudo_r2: f64,
    pub separation_flagged: bool,
}

impl MnlModel {
    pub fn to_json(&self) -> MnlModelJson {
        let mut coefficients = Vec::with_capacity(self.n_params());
        for r in 0..self.coefficients.nrows() {
            for c in 0..self.coefficients.ncols() {
                coefficients.push(self.coefficients[(r, c)]);
            }
        }
        let q = self.vcov.nrows();
        let mut vcov_lower = Vec::new();
        for i in 0..q {
            for j in 0..=i {
                vcov_lower.push(self.vcov[(i, j)]);
            }
        }
        MnlModelJson {
            n_alternatives: self.n_alternatives,
            baseline: self.baseline,
            column_names: self.column_names.clone(),
            coefficients,
            vcov_lower,
            log_likelihood: self.log_likelihood,
            n_obs: self.n_obs,
            converged: self.converged,
            iterations: self.iterations,
            pseudo_r2: self.pseudo_r2,
            separation_flagged: self.separation_flagged,
        }
    }

    pub fn from_json(j: &MnlModelJson) -> MnlModel {
        let p = j.column_names.len();
        let kk = j.n_alternatives - 1;
        let mut coefficients = DMatrix::zeros(kk, p);
        for r in 0..kk {
            for c in 0..p {
                coefficients[(r, c)] = j.coefficients[r * p + c];
            }
        }
        let q = kk * p;
        let mut vcov = DMatrix::zeros(q, q);
        let mut it = j.vcov_lower.iter();
        for i in 0..q {
            for jj in 0..=i {
                let v = *it.next().expect("triangle length");
                vcov[(i, jj)] = v;
                vcov[(jj, i)] = v;
            }
        }
        MnlModel {
            n_alternatives: j.n_alternatives,
            baseline: j.baseline,
            column_names: j.column_names.clone(),
            coefficients,
            vcov,
            log_likelihood: j.log_likelihood,
            n_obs: j.n_obs,
            converged: j.converged,
            iterations: j.iterations,
            pseudo_r2: j.pseudo_r2,
            separation_flagged: j.separation_flagged,
        }
    }
}
