//! Penalized functional linear regression on a common grid: scalar
//! responses `Y = b0 + int X(t) beta(t) dt + e` and concurrent functional
//! responses `Y(t) = b0(t) + X(t) beta(t) + e(t)`, plus the train/test
//! replicate protocol used to compare input smoothers.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::error::{Error, Result};
use crate::stochastic::{pseudo_inverse, RngStream};

pub const X_BASIS_SIZE: usize = 20;
pub const BETA_BASIS_SIZE: usize = 10;
/// Relative singular-value cutoff for rank decisions.
const RANK_TOL: f64 = 1e-12;
const Z95: f64 = 1.96;

pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// Trapezoid weights on an increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let p = grid.len();
    if p < 2 {
        return vec![0.0; p];
    }
    (0..p)
        .map(|j| {
            let lo = grid[j.saturating_sub(1)];
            let hi = grid[(j + 1).min(p - 1)];
            0.5 * (hi - lo)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    ScalarOnFunction,
    Concurrent,
}

/// Covariate curves on a common grid with the bases and penalty they are
/// fitted with.
#[derive(Clone, Debug)]
pub struct RegressionDesign {
    pub grid: Vec<f64>,
    /// Raw covariate values, `n x p`.
    pub x: DMatrix<f64>,
    /// Covariates after projection onto the x-basis.
    pub x_fit: DMatrix<f64>,
    pub x_basis: BSplineBasis,
    pub beta_basis: BSplineBasis,
    pub weights: Vec<f64>,
    /// Beta basis on the grid, `p x K_beta`.
    psi: DMatrix<f64>,
    /// Curvature penalty of the beta basis.
    penalty: DMatrix<f64>,
    /// Least-squares projector onto the x-basis, evaluated back on the grid.
    x_smoother: DMatrix<f64>,
    pub lambda_grid: Vec<f64>,
}

impl RegressionDesign {
    pub fn new(grid: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        Self::with_bases(grid, x, X_BASIS_SIZE, BETA_BASIS_SIZE)
    }

    pub fn with_bases(grid: Vec<f64>, x: DMatrix<f64>, x_size: usize, beta_size: usize) -> Result<Self> {
        let p = grid.len();
        if x.ncols() != p {
            return Err(Error::shape(format!("covariates have {} columns for a grid of {p}", x.ncols())));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("regression grid must be finite and strictly increasing"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("covariates must be finite"));
        }
        if p < x_size {
            return Err(Error::param(format!("grid of {p} points cannot support {x_size} x-basis functions")));
        }
        let domain = (grid[0], grid[p - 1]);
        let x_basis = BSplineBasis::uniform(domain, x_size)?;
        let beta_basis = BSplineBasis::uniform(domain, beta_size)?;
        let phi = x_basis.eval(&grid);
        let gram = phi.transpose() * &phi;
        let x_smoother = &phi * pseudo_inverse(&gram, RANK_TOL) * phi.transpose();
        let x_fit = &x * &x_smoother;
        Ok(RegressionDesign {
            weights: trapezoid_weights(&grid),
            psi: beta_basis.eval(&grid),
            penalty: beta_basis.penalty(2),
            x_smoother,
            x_fit,
            x,
            x_basis,
            beta_basis,
            grid,
            lambda_grid: default_lambda_grid(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    fn rows(&self, kind: ModelKind, xf: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
        design_rows(kind, &self.psi, &self.weights, xf, i)
    }

    fn row_weights(&self, kind: ModelKind) -> Vec<f64> {
        match kind {
            ModelKind::ScalarOnFunction => vec![1.0],
            ModelKind::Concurrent => self.weights.clone(),
        }
    }

    fn full_penalty(&self, kind: ModelKind) -> DMatrix<f64> {
        let kb = self.beta_basis.k;
        match kind {
            ModelKind::ScalarOnFunction => {
                let mut p = DMatrix::zeros(1 + kb, 1 + kb);
                p.view_mut((1, 1), (kb, kb)).copy_from(&self.penalty);
                p
            }
            ModelKind::Concurrent => {
                let mut p = DMatrix::zeros(2 * kb, 2 * kb);
                p.view_mut((0, 0), (kb, kb)).copy_from(&self.penalty);
                p.view_mut((kb, kb), (kb, kb)).copy_from(&self.penalty);
                p
            }
        }
    }
}

/// Design rows of curve `i` for covariates `xf` already projected onto the
/// x-basis: one row `[1, int x psi]` for the scalar model, one row per grid
/// point `[psi(t), x(t) psi(t)]` for the concurrent model.
fn design_rows(kind: ModelKind, psi: &DMatrix<f64>, weights: &[f64], xf: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    let (p, kb) = psi.shape();
    match kind {
        ModelKind::ScalarOnFunction => {
            let mut d = DMatrix::zeros(1, 1 + kb);
            d[(0, 0)] = 1.0;
            for k in 0..kb {
                d[(0, 1 + k)] = (0..p).map(|j| weights[j] * xf[(i, j)] * psi[(j, k)]).sum();
            }
            d
        }
        ModelKind::Concurrent => {
            let mut d = DMatrix::zeros(p, 2 * kb);
            for j in 0..p {
                for k in 0..kb {
                    d[(j, k)] = psi[(j, k)];
                    d[(j, kb + k)] = xf[(i, j)] * psi[(j, k)];
                }
            }
            d
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegressionFit {
    pub kind: ModelKind,
    pub lambda: f64,
    /// Scalar model: `[b0, beta coefficients]`; concurrent:
    /// `[b0 coefficients, beta coefficients]`.
    pub coef: DVector<f64>,
    /// `n x 1` or `n x p`.
    pub fitted: DMatrix<f64>,
    /// Residual variance (`1 x 1`) or pointwise residual covariance
    /// (`p x p`), against the observed responses.
    pub sigma_e: DMatrix<f64>,
    grid: Vec<f64>,
    psi: DMatrix<f64>,
    /// `(N + lambda P)^{-1}`, a pseudo-inverse when singular.
    inv_normal: DMatrix<f64>,
    /// Per-curve design rows, kept for the standard errors.
    rows: Vec<DMatrix<f64>>,
    row_weights: Vec<f64>,
    x_smoother: DMatrix<f64>,
    beta_basis: BSplineBasis,
}

fn response_rows(kind: ModelKind, y: &DMatrix<f64>, p: usize) -> Result<()> {
    match kind {
        ModelKind::ScalarOnFunction if y.ncols() != 1 => Err(Error::shape("scalar responses must be a single column")),
        ModelKind::Concurrent if y.ncols() != p => {
            Err(Error::shape(format!("functional responses have {} columns for a grid of {p}", y.ncols())))
        }
        _ => Ok(()),
    }
}

fn fit(design: &RegressionDesign, kind: ModelKind, y: &DMatrix<f64>, lambda: f64) -> Result<RegressionFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!("lambda must be nonnegative, got {lambda}")));
    }
    let n = design.n();
    if y.nrows() != n {
        return Err(Error::shape(format!("{} responses for {n} curves", y.nrows())));
    }
    response_rows(kind, y, design.grid.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("responses must be finite"));
    }
    let w = design.row_weights(kind);
    let rows: Vec<DMatrix<f64>> = (0..n).map(|i| design.rows(kind, &design.x_fit, i)).collect();
    let q = rows[0].ncols();
    let mut normal = design.full_penalty(kind) * lambda;
    let mut rhs = DVector::zeros(q);
    for (i, d) in rows.iter().enumerate() {
        let mut wd = d.clone();
        for (r, wr) in w.iter().enumerate() {
            wd.row_mut(r).scale_mut(*wr);
        }
        normal += wd.transpose() * d;
        rhs += wd.transpose() * y.row(i).transpose();
    }
    crate::stochastic::symmetrize(&mut normal);
    let sv = normal.clone().singular_values();
    let deficient = !(sv.min() > RANK_TOL * sv.max());
    if deficient && lambda == 0.0 {
        return Err(Error::Conditioning(
            "the unpenalized design is rank deficient; use lambda > 0".into(),
        ));
    }
    let inv_normal = pseudo_inverse(&normal, RANK_TOL);
    let coef = &inv_normal * rhs;
    let mut fitted = DMatrix::zeros(n, y.ncols());
    for (i, d) in rows.iter().enumerate() {
        fitted.row_mut(i).copy_from(&(d * &coef).transpose());
    }
    let resid = y - &fitted;
    let sigma_e = match kind {
        ModelKind::ScalarOnFunction => DMatrix::from_element(1, 1, resid.norm_squared() / n as f64),
        ModelKind::Concurrent => crate::summary::row_covariance(&resid),
    };
    Ok(RegressionFit {
        kind,
        lambda,
        coef,
        fitted,
        sigma_e,
        grid: design.grid.clone(),
        psi: design.psi.clone(),
        inv_normal,
        rows,
        row_weights: w,
        x_smoother: design.x_smoother.clone(),
        beta_basis: design.beta_basis.clone(),
    })
}

pub fn fit_scalar_on_function(design: &RegressionDesign, y: &[f64], lambda: f64) -> Result<RegressionFit> {
    fit(design, ModelKind::ScalarOnFunction, &DMatrix::from_column_slice(y.len(), 1, y), lambda)
}

/// Both coefficient functions carry the curvature penalty. When `X` is
/// constant the two are confounded; the minimum-norm solution splits them.
pub fn fit_concurrent(design: &RegressionDesign, y: &DMatrix<f64>, lambda: f64) -> Result<RegressionFit> {
    fit(design, ModelKind::Concurrent, y, lambda)
}

impl RegressionFit {
    fn kb(&self) -> usize {
        self.beta_basis.k
    }

    /// Intercept on the grid (constant for the scalar model).
    pub fn beta0(&self) -> Vec<f64> {
        match self.kind {
            ModelKind::ScalarOnFunction => vec![self.coef[0]; self.grid.len()],
            ModelKind::Concurrent => (&self.psi * self.coef.rows(0, self.kb())).as_slice().to_vec(),
        }
    }

    pub fn beta(&self) -> Vec<f64> {
        let off = self.coef.len() - self.kb();
        (&self.psi * self.coef.rows(off, self.kb())).as_slice().to_vec()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Responses for new covariate curves on the same grid.
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_new.ncols() != self.grid.len() {
            return Err(Error::shape(format!(
                "new covariates have {} columns for a grid of {}",
                x_new.ncols(),
                self.grid.len()
            )));
        }
        let xf = x_new * &self.x_smoother;
        let weights = trapezoid_weights(&self.grid);
        let cols = match self.kind {
            ModelKind::ScalarOnFunction => 1,
            ModelKind::Concurrent => self.grid.len(),
        };
        let mut out = DMatrix::zeros(xf.nrows(), cols);
        for i in 0..xf.nrows() {
            let d = design_rows(self.kind, &self.psi, &weights, &xf, i);
            out.row_mut(i).copy_from(&(d * &self.coef).transpose());
        }
        Ok(out)
    }

    /// Coefficient covariance `M (sum_i D_i^T W S W D_i) M` for residual
    /// (co)variance `S`.
    pub fn coef_cov(&self, sigma_e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let r = self.row_weights.len();
        if sigma_e.shape() != (r, r) {
            return Err(Error::shape(format!("residual covariance must be {r} x {r}")));
        }
        let mut ws = sigma_e.clone();
        for i in 0..r {
            for j in 0..r {
                ws[(i, j)] *= self.row_weights[i] * self.row_weights[j];
            }
        }
        let q = self.coef.len();
        let mut meat = DMatrix::zeros(q, q);
        for d in &self.rows {
            meat += d.transpose() * &ws * d;
        }
        let mut cov = &self.inv_normal * meat * &self.inv_normal;
        crate::stochastic::symmetrize(&mut cov);
        Ok(cov)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub beta0_se: Vec<f64>,
    pub beta_se: Vec<f64>,
    pub beta0_lower: Vec<f64>,
    pub beta0_upper: Vec<f64>,
    pub beta_lower: Vec<f64>,
    pub beta_upper: Vec<f64>,
}

/// Pointwise `+-1.96` standard-error bands. Uses the fit's own residual
/// (co)variance unless one is supplied.
pub fn stderr_bands(fit: &RegressionFit, sigma_e: Option<&DMatrix<f64>>) -> Result<Bands> {
    let cov = fit.coef_cov(sigma_e.unwrap_or(&fit.sigma_e))?;
    let kb = fit.kb();
    let q = fit.coef.len();
    let pointwise = |off: usize| -> Vec<f64> {
        let block = cov.view((off, off), (kb, kb));
        (0..fit.grid.len())
            .map(|j| {
                let b = fit.psi.row(j);
                (b * block * b.transpose())[(0, 0)].max(0.0).sqrt()
            })
            .collect()
    };
    let beta0_se = match fit.kind {
        ModelKind::ScalarOnFunction => vec![cov[(0, 0)].max(0.0).sqrt(); fit.grid.len()],
        ModelKind::Concurrent => pointwise(0),
    };
    let beta_se = pointwise(q - kb);
    let band = |est: Vec<f64>, se: &[f64], sign: f64| -> Vec<f64> {
        est.iter().zip(se).map(|(e, s)| e + sign * Z95 * s).collect()
    };
    Ok(Bands {
        beta0_lower: band(fit.beta0(), &beta0_se, -1.0),
        beta0_upper: band(fit.beta0(), &beta0_se, 1.0),
        beta_lower: band(fit.beta(), &beta_se, -1.0),
        beta_upper: band(fit.beta(), &beta_se, 1.0),
        beta0_se,
        beta_se,
    })
}

pub enum Response<'a> {
    Scalar(&'a [f64]),
    Functional(&'a DMatrix<f64>),
}

/// Leave-one-curve-out CV over the design's lambda grid. Returns the
/// minimizing lambda (ties go to the smaller one) and the CV SSE per lambda.
pub fn cross_validate(design: &RegressionDesign, response: Response<'_>) -> Result<(f64, Vec<f64>)> {
    let n = design.n();
    if n < 3 {
        return Err(Error::param("cross-validation needs at least three curves"));
    }
    if design.lambda_grid.is_empty() {
        return Err(Error::param("lambda grid is empty"));
    }
    let (kind, y) = match response {
        Response::Scalar(v) => (ModelKind::ScalarOnFunction, DMatrix::from_column_slice(v.len(), 1, v)),
        Response::Functional(m) => (ModelKind::Concurrent, m.clone()),
    };
    if y.nrows() != n {
        return Err(Error::shape(format!("{} responses for {n} curves", y.nrows())));
    }
    let w = design.row_weights(kind);
    let mut sse = Vec::with_capacity(design.lambda_grid.len());
    for &lambda in &design.lambda_grid {
        let mut total = 0.0;
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            let sub = RegressionDesign {
                x: design.x.select_rows(&keep),
                x_fit: design.x_fit.select_rows(&keep),
                ..design.clone()
            };
            let f = fit(&sub, kind, &y.select_rows(&keep), lambda)?;
            let pred = f.predict(&design.x.rows(i, 1).into_owned())?;
            total += (0..y.ncols()).map(|j| w[j] * (y[(i, j)] - pred[(0, j)]).powi(2)).sum::<f64>();
        }
        sse.push(total);
    }
    let mut best = 0;
    for (k, s) in sse.iter().enumerate() {
        if *s < sse[best] {
            best = k;
        }
    }
    Ok((design.lambda_grid[best], sse))
}

/// Replicated train/test comparison of two input smoothers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub replicates: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { n_train: 20, n_test: 10, replicates: 100, lambda: 0.1, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseCell {
    pub mean: f64,
    /// Absent for a single replicate.
    pub std: Option<f64>,
}

impl MseCell {
    fn from(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        MseCell { mean, std }
    }
}

/// Mean (std) MSE over replicates for {fitted, predicted} x {scalar,
/// functional} and each input smoother.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub labels: [String; 2],
    pub replicates: usize,
    pub fitted_scalar: [MseCell; 2],
    pub fitted_functional: [MseCell; 2],
    pub predicted_scalar: [MseCell; 2],
    pub predicted_functional: [MseCell; 2],
}

impl ProtocolReport {
    pub fn to_table(&self) -> String {
        let f = |c: &MseCell| match c.std {
            Some(s) => format!("{:.3} ({:.3})", c.mean, s),
            None => format!("{:.3}", c.mean),
        };
        let mut out = format!(
            "MSE (std)  | {a} Y | {a} Y(t) | {b} Y | {b} Y(t)\n",
            a = self.labels[0],
            b = self.labels[1]
        );
        out += &format!(
            "Fitted     | {} | {} | {} | {}\n",
            f(&self.fitted_scalar[0]),
            f(&self.fitted_functional[0]),
            f(&self.fitted_scalar[1]),
            f(&self.fitted_functional[1])
        );
        out += &format!(
            "Predicted  | {} | {} | {} | {}\n",
            f(&self.predicted_scalar[0]),
            f(&self.predicted_functional[0]),
            f(&self.predicted_scalar[1]),
            f(&self.predicted_functional[1])
        );
        out
    }
}

fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

/// Responses are generated from the true curves with `beta(t) = t^2`:
/// `Y_i = int X_i(t) t^2 dt + e` (trapezoid rule) and
/// `Y_i(t) = X_i(t) t^2 + e(t)`, `e ~ N(0, 1)`. Both smoothed inputs are
/// fitted with the same responses and scored against the noiseless ones.
pub fn run_protocol(
    grid: &[f64],
    x_true: &DMatrix<f64>,
    inputs: [(&str, &DMatrix<f64>); 2],
    cfg: &ProtocolConfig,
) -> Result<ProtocolReport> {
    let n = x_true.nrows();
    let p = grid.len();
    if n < 3 {
        return Err(Error::param("the regression protocol needs at least three curves"));
    }
    if cfg.n_train + cfg.n_test > n || cfg.n_train < 3 || cfg.n_test == 0 {
        return Err(Error::param(format!(
            "train/test sizes {}/{} do not fit {n} curves",
            cfg.n_train, cfg.n_test
        )));
    }
    if cfg.replicates == 0 {
        return Err(Error::param("at least one replicate is required"));
    }
    for (_, x) in &inputs {
        if x.shape() != x_true.shape() {
            return Err(Error::shape("smoothed inputs must match the true curves"));
        }
    }
    if x_true.ncols() != p {
        return Err(Error::shape("curves do not match the grid"));
    }
    let w = trapezoid_weights(grid);
    let beta: Vec<f64> = grid.iter().map(|t| t * t).collect();
    let y_fun_true = DMatrix::from_fn(n, p, |i, j| x_true[(i, j)] * beta[j]);
    let y_sc_true: Vec<f64> = (0..n).map(|i| (0..p).map(|j| w[j] * y_fun_true[(i, j)]).sum()).collect();

    let reps: Vec<[[f64; 4]; 2]> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<[[f64; 4]; 2]> {
            let mut rng = RngStream::new(cfg.seed, r as u64);
            let perm = sample(&mut rng, n, cfg.n_train + cfg.n_test).into_vec();
            let train = &perm[..cfg.n_train];
            let test = &perm[cfg.n_train..];
            let y_sc: Vec<f64> = y_sc_true.iter().map(|v| v + rng.standard_normal()).collect();
            let mut y_fun = y_fun_true.clone();
            for v in y_fun.iter_mut() {
                *v += rng.standard_normal();
            }
            let sel_v = |v: &[f64], idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| v[i]).collect() };
            let sc_train_true = DMatrix::from_vec(train.len(), 1, sel_v(&y_sc_true, train));
            let sc_test_true = DMatrix::from_vec(test.len(), 1, sel_v(&y_sc_true, test));
            let fun_train_true = y_fun_true.select_rows(train);
            let fun_test_true = y_fun_true.select_rows(test);
            let mut out = [[0.0; 4]; 2];
            for (k, (_, x)) in inputs.iter().enumerate() {
                let design = RegressionDesign::new(grid.to_vec(), x.select_rows(train))?;
                let x_test = x.select_rows(test);
                let sc = fit_scalar_on_function(&design, &sel_v(&y_sc, train), cfg.lambda)?;
                let fun = fit_concurrent(&design, &y_fun.select_rows(train), cfg.lambda)?;
                out[k] = [
                    mse(&sc_train_true, &sc.fitted),
                    mse(&fun_train_true, &fun.fitted),
                    mse(&sc_test_true, &sc.predict(&x_test)?),
                    mse(&fun_test_true, &fun.predict(&x_test)?),
                ];
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let cell = |k: usize, m: usize| MseCell::from(&reps.iter().map(|r| r[k][m]).collect::<Vec<_>>());
    Ok(ProtocolReport {
        labels: [inputs[0].0.to_string(), inputs[1].0.to_string()],
        replicates: cfg.replicates,
        fitted_scalar: [cell(0, 0), cell(1, 0)],
        fitted_functional: [cell(0, 1), cell(1, 1)],
        predicted_scalar: [cell(0, 2), cell(1, 2)],
        predicted_functional: [cell(0, 3), cell(1, 3)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::linspace;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn grid() -> Vec<f64> {
        linspace(0.0, FRAC_PI_2, 40)
    }

    /// Smooth random covariates: random combinations of a few sinusoids.
    fn covariates(n: usize, seed: u64) -> DMatrix<f64> {
        let g = grid();
        let mut rng = RngStream::new(seed, 0);
        let coefs: Vec<Vec<f64>> = (0..n).map(|_| (0..12).map(|_| rng.standard_normal()).collect()).collect();
        DMatrix::from_fn(n, 40, |i, j| {
            let t = g[j];
            (0..6)
                .map(|k| {
                    let f = (k + 1) as f64;
                    coefs[i][2 * k] * (f * t).sin() / f + coefs[i][2 * k + 1] * (f * t).cos() / f
                })
                .sum()
        })
    }

    fn scalar_truth(x: &DMatrix<f64>) -> Vec<f64> {
        let g = grid();
        let w = trapezoid_weights(&g);
        (0..x.nrows()).map(|i| (0..40).map(|j| w[j] * x[(i, j)] * g[j] * g[j]).sum()).collect()
    }

    #[test]
    fn trapezoid_quadrature() {
        let g = grid();
        let w = trapezoid_weights(&g);
        let integral: f64 = g.iter().zip(&w).map(|(t, w)| w * t * t).sum();
        let exact = FRAC_PI_2.powi(3) / 3.0;
        assert!((integral - exact).abs() < 2e-3, "{integral}");
        // O(h^2): a 4x finer grid cuts the error about 16-fold
        let fine = linspace(0.0, FRAC_PI_2, 157);
        let wf = trapezoid_weights(&fine);
        let fi: f64 = fine.iter().zip(&wf).map(|(t, w)| w * t * t).sum();
        let ratio = (integral - exact).abs() / (fi - exact).abs();
        assert!(ratio > 12.0 && ratio < 20.0, "{ratio}");
        // equal spacing matches the end-corrected sum
        let h = g[1] - g[0];
        let corrected = h * (g.iter().map(|t| t * t).sum::<f64>() - 0.5 * (g[0] * g[0] + g[39] * g[39]));
        assert_relative_eq!(integral, corrected, epsilon = 1e-12);
    }

    #[test]
    fn zero_covariates_give_mean_intercept() {
        let d = RegressionDesign::new(grid(), DMatrix::zeros(12, 40)).unwrap();
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let f = fit_scalar_on_function(&d, &y, 0.5).unwrap();
        assert_relative_eq!(f.coef[0], 5.5, epsilon = 1e-10);
        assert!(f.beta().iter().all(|b| b.abs() < 1e-10));
        assert!(fit_scalar_on_function(&d, &y, 0.0).is_err());
        let pred = f.predict(&covariates(3, 1)).unwrap();
        assert!(pred.iter().all(|v| (v - 5.5).abs() < 1e-10));
    }

    #[test]
    fn noiseless_scalar_fit_recovers_beta() {
        let x = covariates(30, 2);
        let y = scalar_truth(&x);
        let d = RegressionDesign::new(grid(), x.clone()).unwrap();
        let f = fit_scalar_on_function(&d, &y, 1e-6).unwrap();
        let fitted: Vec<f64> = f.fitted.iter().copied().collect();
        for (a, b) in fitted.iter().zip(&y) {
            assert!((a - b).abs() < 1e-2, "{a} vs {b}");
        }
        assert_eq!(f.predict(&x).unwrap(), f.fitted);
        let g = grid();
        let err: f64 = f.beta().iter().zip(&g).map(|(b, t)| (b - t * t).powi(2)).sum::<f64>() / 40.0;
        assert!(err.sqrt() < 0.2, "{}", err.sqrt());
    }

    #[test]
    fn unpenalized_equals_least_squares() {
        let x = covariates(25, 3);
        let mut rng = RngStream::new(4, 0);
        let y: Vec<f64> = scalar_truth(&x).iter().map(|v| v + rng.standard_normal()).collect();
        let d = RegressionDesign::with_bases(grid(), x, 20, 6).unwrap();
        let f = fit_scalar_on_function(&d, &y, 0.0).unwrap();
        let z = DMatrix::from_fn(25, 7, |i, k| d.rows(ModelKind::ScalarOnFunction, &d.x_fit, i)[(0, k)]);
        let ls = (z.transpose() * &z).lu().solve(&(z.transpose() * DVector::from_vec(y))).unwrap();
        assert_relative_eq!(f.coef, ls, max_relative = 1e-6);
    }

    #[test]
    fn fit_is_linear_in_responses() {
        let x = covariates(15, 5);
        let d = RegressionDesign::new(grid(), x).unwrap();
        let mut rng = RngStream::new(6, 0);
        let y1 = DMatrix::from_fn(15, 40, |_, _| rng.standard_normal());
        let y2 = DMatrix::from_fn(15, 40, |_, _| rng.standard_normal());
        let a = fit_concurrent(&d, &y1, 0.3).unwrap();
        let b = fit_concurrent(&d, &y2, 0.3).unwrap();
        let c = fit_concurrent(&d, &(&y1 * 2.0 + &y2 * -3.0), 0.3).unwrap();
        assert_relative_eq!(c.coef, a.coef * 2.0 + b.coef * -3.0, epsilon = 1e-8);
    }

    #[test]
    fn concurrent_recovers_truth() {
        let x = covariates(30, 7);
        let g = grid();
        let y = DMatrix::from_fn(30, 40, |i, j| x[(i, j)] * g[j] * g[j]);
        let d = RegressionDesign::new(g.clone(), x).unwrap();
        let f = fit_concurrent(&d, &y, 1e-8).unwrap();
        assert!((&f.fitted - &y).amax() < 1e-3);
        assert!(f.beta0().iter().all(|b| b.abs() < 1e-2));
    }

    #[test]
    fn constant_covariate_is_confounded_but_fits() {
        let g = grid();
        let y = DMatrix::from_fn(6, 40, |_, j| g[j].sin());
        let d = RegressionDesign::new(g.clone(), DMatrix::from_element(6, 40, 1.0)).unwrap();
        let f = fit_concurrent(&d, &y, 0.01).unwrap();
        let sum: Vec<f64> = f.beta0().iter().zip(f.beta()).map(|(a, b)| a + b).collect();
        for (s, t) in sum.iter().zip(&g) {
            assert!((s - t.sin()).abs() < 0.05, "{s} vs {}", t.sin());
        }
    }

    #[test]
    fn bands_scale_with_sigma() {
        let x = covariates(20, 8);
        let mut rng = RngStream::new(9, 0);
        let y: Vec<f64> = scalar_truth(&x).iter().map(|v| v + rng.standard_normal()).collect();
        let d = RegressionDesign::new(grid(), x).unwrap();
        let f = fit_scalar_on_function(&d, &y, 0.1).unwrap();
        let b1 = stderr_bands(&f, None).unwrap();
        let b2 = stderr_bands(&f, Some(&(&f.sigma_e * 4.0))).unwrap();
        for (s1, s2) in b1.beta_se.iter().zip(&b2.beta_se) {
            assert_relative_eq!(*s2, 2.0 * s1, max_relative = 1e-10);
        }
        let b0 = stderr_bands(&f, Some(&DMatrix::zeros(1, 1))).unwrap();
        assert!(b0.beta_se.iter().all(|s| *s == 0.0));
        assert!(b1.beta_lower.iter().zip(&b1.beta_upper).all(|(l, u)| l <= u));
    }

    #[test]
    fn cross_validation_cases() {
        let x = covariates(12, 10);
        let mut rng = RngStream::new(11, 0);
        let noise: Vec<f64> = (0..12).map(|_| rng.standard_normal()).collect();
        let mut d = RegressionDesign::new(grid(), x).unwrap();
        d.lambda_grid = vec![0.3];
        assert_eq!(cross_validate(&d, Response::Scalar(&noise)).unwrap().0, 0.3);
        d.lambda_grid = vec![1e-6, 1e-3, 1.0, 1e3];
        let (_, sse) = cross_validate(&d, Response::Scalar(&noise)).unwrap();
        assert!(sse[3] < sse[0], "{sse:?}");
        let small = RegressionDesign::new(grid(), covariates(2, 1)).unwrap();
        assert!(cross_validate(&small, Response::Scalar(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn predict_rejects_grid_mismatch() {
        let d = RegressionDesign::new(grid(), covariates(5, 1)).unwrap();
        let f = fit_scalar_on_function(&d, &[1.0, 2.0, 3.0, 4.0, 5.0], 0.1).unwrap();
        assert!(f.predict(&DMatrix::zeros(2, 39)).is_err());
    }

    #[test]
    fn protocol_is_deterministic() {
        let x = covariates(30, 12);
        let cfg = ProtocolConfig { replicates: 3, ..Default::default() };
        let a = run_protocol(&grid(), &x, [("a", &x), ("b", &x)], &cfg).unwrap();
        let b = run_protocol(&grid(), &x, [("a", &x), ("b", &x)], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fitted_scalar[0], a.fitted_scalar[1]);
        let one = run_protocol(&grid(), &x, [("a", &x), ("b", &x)], &ProtocolConfig { replicates: 1, ..cfg }).unwrap();
        assert!(one.fitted_scalar[0].std.is_none());
        assert!(one.to_table().contains("Fitted"));
    }
}
