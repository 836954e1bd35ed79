//! Linear regression with HC3 standard errors and logistic regression by IRLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Two-sided normal critical value for 95% intervals.
pub const Z_95: f64 = 1.96;
pub const LOGISTIC_MAX_ITER: usize = 100;
pub const LOGISTIC_TOL: f64 = 1e-8;
/// Linear predictor magnitude below which a score-converged fit is accepted.
const ETA_CONVERGED: f64 = 20.0;
/// Linear predictor magnitude that signals separation when both classes occur.
const ETA_SEPARATION: f64 = 30.0;
const WEIGHT_FLOOR: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;
const LEVERAGE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ols,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub model: ModelKind,
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub p_value: Vec<f64>,
    /// Coefficient covariance (HC3 for OLS, inverse information for logistic).
    pub cov: Vec<Vec<f64>>,
    pub n: usize,
    pub iterations: usize,
}

impl RegressionResult {
    fn new(model: ModelKind, names: &[String], coef: Vec<f64>, cov: DMatrix<f64>, n: usize, iterations: usize) -> Self {
        let p = coef.len();
        let se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
        let ci_lo = coef.iter().zip(&se).map(|(b, s)| b - Z_95 * s).collect();
        let ci_hi = coef.iter().zip(&se).map(|(b, s)| b + Z_95 * s).collect();
        let p_value = coef.iter().zip(&se).map(|(b, s)| normal_p_value(*b, *s)).collect();
        Self {
            model,
            names: names.to_vec(),
            coef,
            se,
            ci_lo,
            ci_hi,
            p_value,
            cov: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
            n,
            iterations,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|j| self.coef[j])
    }

    /// Linear predictor and its standard error at covariate vector `x`.
    pub fn linear_prediction(&self, x: &[f64]) -> (f64, f64) {
        let eta: f64 = self.coef.iter().zip(x).map(|(b, v)| b * v).sum();
        let mut var = 0.0;
        for (i, xi) in x.iter().enumerate() {
            for (j, xj) in x.iter().enumerate() {
                var += xi * self.cov[i][j] * xj;
            }
        }
        (eta, var.max(0.0).sqrt())
    }

    /// Table cell "β (lo, hi)" with significance stars.
    pub fn format_cell(&self, j: usize) -> String {
        format!(
            "{:.3} ({:.3}, {:.3}){}",
            self.coef[j],
            self.ci_lo[j],
            self.ci_hi[j],
            stars(self.p_value[j])
        )
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Two-sided p-value of a Wald statistic under the normal reference.
pub fn normal_p_value(beta: f64, se: f64) -> f64 {
    if se > 0.0 {
        erfc((beta / se).abs() / std::f64::consts::SQRT_2)
    } else if beta != 0.0 {
        0.0
    } else {
        1.0
    }
}

fn check_shape(n_y: usize, x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    if x.nrows() != n_y {
        return Err(Error::Input(format!("design has {} rows for {} responses", x.nrows(), n_y)));
    }
    if names.len() != x.ncols() {
        return Err(Error::Input(format!("{} names for {} columns", names.len(), x.ncols())));
    }
    if x.nrows() <= x.ncols() {
        return Err(Error::Input(format!(
            "need more observations ({}) than coefficients ({})",
            x.nrows(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("design matrix contains non-finite values".into()));
    }
    Ok(())
}

/// Thin QR of `x` with a rank check that names the first dependent column.
fn qr_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..r.ncols()).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..r.ncols() {
        let col_norm = x.column(j).norm();
        if r[(j, j)].abs() <= RANK_TOL * scale.max(col_norm) || col_norm == 0.0 {
            return Err(Error::Numerical(format!(
                "design matrix is rank deficient: column `{}` is collinear with {}",
                names[j],
                if j == 0 { "nothing (all zero)".to_string() } else { format!("columns {:?}", &names[..j]) }
            )));
        }
    }
    Ok((qr.q(), r))
}

fn upper_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = r.ncols();
    r.solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))
}

/// Ordinary least squares with HC3 heteroskedasticity-robust covariance.
pub fn ols_hc3(y: &[f64], x: &DMatrix<f64>, names: &[String]) -> Result<RegressionResult> {
    check_shape(y.len(), x, names)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("response contains non-finite values".into()));
    }
    let (q, r) = qr_full_rank(x, names)?;
    let yv = DVector::from_column_slice(y);
    let qty = q.transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let resid = &yv - x * &beta;
    let r_inv = upper_inverse(&r)?;
    // (X'X)^-1 = R^-1 R^-T
    let bread = &r_inv * r_inv.transpose();
    let p = x.ncols();
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let h = q.row(i).norm_squared();
        if h >= 1.0 - LEVERAGE_TOL {
            return Err(Error::Numerical(format!(
                "observation {i} has leverage 1; HC3 is undefined"
            )));
        }
        let w = (resid[i] / (1.0 - h)).powi(2);
        let xi = x.row(i);
        meat += w * xi.transpose() * xi;
    }
    let cov = &bread * meat * &bread;
    Ok(RegressionResult::new(ModelKind::Ols, names, beta.iter().copied().collect(), cov, y.len(), 0))
}

/// Classical OLS covariance s²(X'X)^-1, used as a reference for HC3.
pub fn ols_classical_cov(y: &[f64], x: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    check_shape(y.len(), x, names)?;
    let (q, r) = qr_full_rank(x, names)?;
    let yv = DVector::from_column_slice(y);
    let beta = r
        .solve_upper_triangular(&(q.transpose() * &yv))
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let resid = &yv - x * beta;
    let s2 = resid.norm_squared() / (x.nrows() - x.ncols()) as f64;
    let r_inv = upper_inverse(&r)?;
    Ok(s2 * &r_inv * r_inv.transpose())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression by iteratively reweighted least squares.
///
/// Converges when the largest score component is below 1e-8 with finite
/// linear predictors; standard errors come from the inverse information.
pub fn logistic_fit(y: &[bool], x: &DMatrix<f64>, names: &[String]) -> Result<RegressionResult> {
    check_shape(y.len(), x, names)?;
    qr_full_rank(x, names)?;
    let n = x.nrows();
    let p = x.ncols();
    let yv = DVector::from_iterator(n, y.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let positives = y.iter().filter(|b| **b).count();
    let both_classes = positives > 0 && positives < n;
    let mut beta = DVector::zeros(p);
    let mut last_score = f64::INFINITY;
    let mut last_eta = 0.0;
    for it in 0..LOGISTIC_MAX_ITER {
        let eta = x * &beta;
        let max_eta = eta.amax();
        if both_classes && max_eta >= ETA_SEPARATION {
            return Err(Error::Numerical(format!(
                "logistic fit diverges (|linear predictor| = {max_eta:.1} after {it} iterations): \
                 the outcome looks perfectly separated by the covariates; inspect the data"
            )));
        }
        let prob = eta.map(sigmoid);
        let w = prob.map(|v| (v * (1.0 - v)).max(WEIGHT_FLOOR));
        let score = x.transpose() * (&yv - &prob);
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let xi = x.row(i);
            info += w[i] * xi.transpose() * xi;
        }
        last_score = score.amax();
        last_eta = max_eta;
        let chol = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("information matrix is not positive definite".into()))?;
        if last_score < LOGISTIC_TOL && max_eta < ETA_CONVERGED {
            let cov = chol.inverse();
            return Ok(RegressionResult::new(
                ModelKind::Logistic,
                names,
                beta.iter().copied().collect(),
                cov,
                n,
                it,
            ));
        }
        beta += chol.solve(&score);
    }
    Err(Error::Numerical(format!(
        "logistic fit did not converge in {LOGISTIC_MAX_ITER} iterations \
         (max |score| = {last_score:.3e}, max |linear predictor| = {last_eta:.1}, \
         {positives} of {n} outcomes positive)"
    )))
}
