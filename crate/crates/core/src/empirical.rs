//! Empirical mean/covariance/noise estimates from individually smoothed
//! curves, and the hyperparameters built from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::css::{css_eval, css_gcv, css_smooth_to};
use crate::datagen::FunctionalDataset;
use crate::error::{Error, Result};
use crate::kernels::{fit_matern_with, CovarianceModel};
use crate::stochastic::SpdMatrix;

/// Floor applied to a zero noise-variance estimate.
pub const NOISE_VAR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct EmpiricalEstimates {
    /// Grid the mean and covariance are evaluated on.
    pub grid: Vec<f64>,
    pub mu_hat: DVector<f64>,
    pub sigma_hat: SpdMatrix,
    pub noise_var: f64,
    /// Each curve's CSS smooth on `grid` (rows are curves).
    pub smoothed: DMatrix<f64>,
}

/// Estimates on the pooled grid.
pub fn empirical_estimates(data: &FunctionalDataset, candidates: &[f64]) -> Result<EmpiricalEstimates> {
    empirical_estimates_at(data, &data.pooled, candidates)
}

/// CSS-smooths every curve with GCV, evaluates the fits on `grid`, and
/// takes the pointwise mean, the sample covariance (divisor `n - 1`) and
/// the mean squared residual at the observed points.
pub fn empirical_estimates_at(
    data: &FunctionalDataset,
    grid: &[f64],
    candidates: &[f64],
) -> Result<EmpiricalEstimates> {
    let n = data.n();
    if n < 2 {
        return Err(Error::param("empirical covariance needs at least two curves"));
    }
    let p = grid.len();
    let mut smoothed = DMatrix::zeros(n, p);
    let mut noise_acc = 0.0;
    for (i, c) in data.curves.iter().enumerate() {
        let (fit, _) = css_gcv(&c.t, &c.x, candidates)
            .map_err(|e| Error::param(format!("curve {i} cannot be smoothed: {e}")))?;
        noise_acc += fit.rss / c.len() as f64;
        for (j, v) in css_eval(&fit, grid).into_iter().enumerate() {
            smoothed[(i, j)] = v;
        }
    }
    let mu_hat = DVector::from_fn(p, |j, _| smoothed.column(j).sum() / n as f64);
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        let e = smoothed.row(i).transpose() - &mu_hat;
        cov.ger(1.0, &e, &e, 1.0);
    }
    cov /= (n - 1) as f64;
    crate::stochastic::symmetrize(&mut cov);
    Ok(EmpiricalEstimates {
        grid: grid.to_vec(),
        mu_hat,
        sigma_hat: SpdMatrix::new(cov)?,
        noise_var: noise_acc / n as f64,
        smoothed,
    })
}

/// Prior settings that are not derived from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSettings {
    /// Matérn prior structure (`true`) or the empirical covariance.
    pub mat: bool,
    pub w: f64,
    pub ws: f64,
    pub delta: f64,
    pub c: f64,
    pub nu: Option<f64>,
    pub rho: Option<f64>,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            mat: true,
            w: 1.0,
            ws: 0.1,
            delta: 5.0,
            c: 1.0,
            nu: None,
            rho: None,
        }
    }
}

impl PriorSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w", self.w), ("ws", self.ws), ("c", self.c)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 2.0) || !self.delta.is_finite() {
            return Err(Error::param(format!("delta must exceed 2, got {}", self.delta)));
        }
        Ok(())
    }
}

/// `(mu0, c, delta, A, a_eps, b_eps, a_s, b_s)` on a fixed grid.
#[derive(Clone, Debug)]
pub struct HyperParams {
    pub grid: Vec<f64>,
    pub mu0: DVector<f64>,
    pub c: f64,
    pub delta: f64,
    pub a_model: CovarianceModel,
    /// `A` evaluated on `grid`.
    pub a: SpdMatrix,
    pub a_eps: f64,
    pub b_eps: f64,
    pub a_s: f64,
    pub b_s: f64,
    pub w: f64,
    pub ws: f64,
}

/// Moment-matched hyperparameters: the noise-precision prior has mean
/// `1 / noise_var` and the covariance-scale prior has mean `delta - 2`,
/// with `w` and `ws` acting as prior pseudo-counts.
pub fn build_hyperparams(
    est: &EmpiricalEstimates,
    settings: &PriorSettings,
    candidates: &[f64],
) -> Result<HyperParams> {
    settings.validate()?;
    let grid = &est.grid;
    let mu0 = if grid.len() >= 4 {
        DVector::from_vec(css_smooth_to(grid, est.mu_hat.as_slice(), candidates, grid)?)
    } else {
        est.mu_hat.clone()
    };
    let a_model = if settings.mat {
        let (s2, params) = fit_matern_with(est.sigma_hat.matrix(), grid, settings.nu, settings.rho)?;
        CovarianceModel::StationaryMatern { s2, params }
    } else {
        CovarianceModel::Empirical {
            grid: grid.clone(),
            base: est.sigma_hat.matrix().clone(),
        }
    };
    let a = a_model.matrix(grid)?;
    let mut noise = est.noise_var;
    if !(noise >= NOISE_VAR_FLOOR) {
        log::warn!("noise variance estimate {noise:e} floored at {NOISE_VAR_FLOOR:e}");
        noise = NOISE_VAR_FLOOR;
    }
    let m_s = settings.delta - 2.0;
    Ok(HyperParams {
        grid: grid.clone(),
        mu0,
        c: settings.c,
        delta: settings.delta,
        a_model,
        a,
        a_eps: settings.w,
        b_eps: settings.w * noise,
        a_s: settings.ws,
        b_s: settings.ws / m_s,
        w: settings.w,
        ws: settings.ws,
    })
}
