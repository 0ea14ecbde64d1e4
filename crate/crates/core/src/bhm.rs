//! Full-grid Gibbs sampler over signals, mean, covariance, noise precision
//! and covariance scale.
//!
//! Model, on the pooled grid of length `p`:
//! `X_i = H_i Z_i + eps`, `Z_i ~ N(mu, Sigma)`, `mu | Sigma ~ N(mu0, Sigma / c)`,
//! `Sigma ~ IW(delta, sigma_s2 A)`, `1/sigma_eps2 ~ Gamma(a_eps, b_eps)`,
//! `sigma_s2 ~ Gamma(a_s, b_s)`.
//!
//! The covariance conditional gets `n + 1` extra degrees of freedom: `n`
//! from the signals and one from the mean, whose prior also involves
//! `Sigma`. The covariance-scale conditional collects the `sigma_s2` terms
//! of the IW density, `|sigma_s2 A|^{(delta+p-1)/2} exp(-sigma_s2 tr(A W)/2)`.

use nalgebra::{DMatrix, DVector};

use crate::datagen::FunctionalDataset;
use crate::diagnostics::pdm_pvalues;
use crate::empirical::{EmpiricalEstimates, HyperParams};
use crate::error::{Error, Result};
use crate::mcmc::{
    monitor_indices, monitor_names, pack_upper, packed_len, pool, run_chains, GibbsChain, McmcSettings, Pooled,
    Progress,
};
use crate::stochastic::{sample_gamma, sample_inverse_wishart_factored, CovDraw, RngStream, SpdMatrix};
use crate::summary::{block, row_covariance, to_rows, Method, NamedSummary, RunDraws, SmoothResult};

#[derive(Clone, Debug)]
pub struct BhmState {
    /// Signals on the pooled grid, one row per curve.
    pub z: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: CovDraw,
    pub sigma_eps2: f64,
    pub sigma_s2: f64,
}

pub type BhmDraws = RunDraws;

/// Curves sharing one observation pattern share one factorization.
#[derive(Clone, Debug)]
struct Pattern {
    curves: Vec<usize>,
    idx: Vec<usize>,
}

/// Data and hyperparameters, fixed for the whole run.
#[derive(Clone, Debug)]
pub struct BhmModel {
    pub p: usize,
    pub n: usize,
    obs: Vec<Vec<f64>>,
    map: Vec<Vec<usize>>,
    patterns: Vec<Pattern>,
    total_obs: usize,
    mu0: DVector<f64>,
    a: DMatrix<f64>,
    c: f64,
    delta: f64,
    a_eps: f64,
    b_eps: f64,
    a_s: f64,
    b_s: f64,
    init: BhmState,
    monitor: [usize; 3],
}

impl BhmModel {
    /// Checks that the estimates and hyperparameters live on the pooled
    /// grid and builds the initial state.
    pub fn new(data: &FunctionalDataset, est: &EmpiricalEstimates, hyper: &HyperParams) -> Result<Self> {
        data.validate()?;
        let p = data.pooled.len();
        let n = data.n();
        if hyper.grid != data.pooled || est.grid != data.pooled {
            return Err(Error::shape("hyperparameters must be built on the pooled grid"));
        }
        if est.smoothed.nrows() != n || est.smoothed.ncols() != p {
            return Err(Error::shape("empirical smooths do not match the dataset"));
        }
        let map = data.selection_map();
        let mut patterns: Vec<Pattern> = Vec::new();
        for (i, idx) in map.iter().enumerate() {
            match patterns.iter_mut().find(|g| &g.idx == idx) {
                Some(g) => g.curves.push(i),
                None => patterns.push(Pattern { curves: vec![i], idx: idx.clone() }),
            }
        }
        let obs: Vec<Vec<f64>> = data.curves.iter().map(|c| c.x.clone()).collect();
        let mut z = est.smoothed.clone();
        for (i, idx) in map.iter().enumerate() {
            for (k, &j) in idx.iter().enumerate() {
                z[(i, j)] = obs[i][k];
            }
        }
        let init = BhmState {
            z,
            mu: est.mu_hat.clone(),
            sigma: CovDraw::identity(p),
            sigma_eps2: est.noise_var.max(crate::empirical::NOISE_VAR_FLOOR),
            sigma_s2: hyper.delta - 2.0,
        };
        Ok(BhmModel {
            p,
            n,
            total_obs: data.total_obs(),
            obs,
            map,
            patterns,
            mu0: hyper.mu0.clone(),
            a: hyper.a.jittered(),
            c: hyper.c,
            delta: hyper.delta,
            a_eps: hyper.a_eps,
            b_eps: hyper.b_eps,
            a_s: hyper.a_s,
            b_s: hyper.b_s,
            init,
            monitor: monitor_indices(p),
        })
    }

    /// Empirical mean and noise variance, raw data on the observed points,
    /// identity covariance.
    pub fn init(&self) -> BhmState {
        self.init.clone()
    }

    pub fn map(&self) -> &[Vec<usize>] {
        &self.map
    }

    /// `Z_i ~ N(V_i (W mu + H_i^T X_i / s2), V_i)` with
    /// `V_i = (W + H_i^T H_i / s2)^{-1}` and `W = Sigma^{-1}`.
    pub fn step_signals(&self, st: &mut BhmState, rng: &mut RngStream) -> Result<()> {
        let w = &st.sigma.precision;
        let prior_b = w * &st.mu;
        let inv_s2 = 1.0 / st.sigma_eps2;
        for g in &self.patterns {
            let mut q = w.clone();
            for &j in &g.idx {
                q[(j, j)] += inv_s2;
            }
            let q = SpdMatrix::new(q)?;
            let l = q.factor();
            let m = g.curves.len();
            let mut rhs = DMatrix::zeros(self.p, m);
            for (col, &i) in g.curves.iter().enumerate() {
                let mut c = rhs.column_mut(col);
                c.copy_from(&prior_b);
                for (k, &j) in g.idx.iter().enumerate() {
                    c[j] += self.obs[i][k] * inv_s2;
                }
            }
            let mut y = l
                .solve_lower_triangular(&rhs)
                .ok_or_else(|| Error::Conditioning("singular signal precision factor".into()))?;
            for v in y.iter_mut() {
                *v += rng.standard_normal();
            }
            let draw = l
                .tr_solve_lower_triangular(&y)
                .ok_or_else(|| Error::Conditioning("singular signal precision factor".into()))?;
            for (col, &i) in g.curves.iter().enumerate() {
                st.z.row_mut(i).copy_from(&draw.column(col).transpose());
            }
        }
        Ok(())
    }

    pub fn ssr(&self, st: &BhmState) -> f64 {
        let mut ssr = 0.0;
        for (i, idx) in self.map.iter().enumerate() {
            for (k, &j) in idx.iter().enumerate() {
                ssr += (self.obs[i][k] - st.z[(i, j)]).powi(2);
            }
        }
        ssr
    }

    /// `1 / sigma_eps2 ~ Gamma(a_eps + N/2, b_eps + SSR/2)`.
    pub fn step_noise(&self, st: &mut BhmState, rng: &mut RngStream) -> Result<()> {
        let prec = sample_gamma(
            self.a_eps + self.total_obs as f64 / 2.0,
            self.b_eps + self.ssr(st) / 2.0,
            rng,
        )?;
        st.sigma_eps2 = 1.0 / prec;
        Ok(())
    }

    /// `mu ~ N((c mu0 + sum Z_i) / (c + n), Sigma / (c + n))`.
    pub fn step_mean(&self, st: &mut BhmState, rng: &mut RngStream) -> Result<()> {
        let k = self.c + self.n as f64;
        let mut mean = &self.mu0 * self.c;
        for i in 0..self.n {
            mean += st.z.row(i).transpose();
        }
        mean /= k;
        let z = rng.normal_vector(self.p);
        st.mu = mean + &st.sigma.root * z / k.sqrt();
        Ok(())
    }

    /// `Sigma ~ IW(delta + n + 1, sigma_s2 A + S + c (mu - mu0)(mu - mu0)^T)`.
    pub fn step_cov(&self, st: &mut BhmState, rng: &mut RngStream) -> Result<()> {
        let mut centred = st.z.clone();
        let mu_t = st.mu.transpose();
        for mut row in centred.row_iter_mut() {
            row -= &mu_t;
        }
        let mut scale = centred.transpose() * &centred;
        scale += &self.a * st.sigma_s2;
        let d = &st.mu - &self.mu0;
        scale.ger(self.c, &d, &d, 1.0);
        let scale = SpdMatrix::new(scale)?;
        st.sigma = sample_inverse_wishart_factored(self.delta + self.n as f64 + 1.0, &scale, rng)?;
        Ok(())
    }

    /// `sigma_s2 ~ Gamma(a_s + p (delta + p - 1) / 2, b_s + tr(A Sigma^{-1}) / 2)`.
    pub fn step_scale(&self, st: &mut BhmState, rng: &mut RngStream) -> Result<()> {
        let p = self.p as f64;
        let tr = self.a.dot(&st.sigma.precision);
        st.sigma_s2 = sample_gamma(self.a_s + p * (self.delta + p - 1.0) / 2.0, self.b_s + tr / 2.0, rng)?;
        Ok(())
    }

    pub fn iterate(&self, st: &mut BhmState, rng: &mut RngStream) -> Result<()> {
        self.step_signals(st, rng)?;
        self.step_noise(st, rng)?;
        self.step_mean(st, rng)?;
        self.step_cov(st, rng)?;
        self.step_scale(st, rng)
    }

    fn record_len(&self) -> usize {
        self.n * self.p + self.p + packed_len(self.p) + 2
    }
}

struct BhmChain<'a> {
    model: &'a BhmModel,
    state: BhmState,
}

impl GibbsChain for BhmChain<'_> {
    fn iterate(&mut self, rng: &mut RngStream) -> Result<()> {
        self.model.iterate(&mut self.state, rng)
    }

    fn record_len(&self) -> usize {
        self.model.record_len()
    }

    fn record(&self, out: &mut [f64]) {
        let (n, p) = (self.model.n, self.model.p);
        let st = &self.state;
        out[..n * p].copy_from_slice(st.z.as_slice());
        out[n * p..n * p + p].copy_from_slice(st.mu.as_slice());
        let off = n * p + p;
        pack_upper(&st.sigma.cov, &mut out[off..off + packed_len(p)]);
        let off = off + packed_len(p);
        out[off] = 1.0 / st.sigma_eps2;
        out[off + 1] = st.sigma_s2;
    }

    fn monitored(&self) -> Vec<f64> {
        let st = &self.state;
        let mut v = vec![st.sigma_eps2, st.sigma_s2];
        v.extend(self.model.monitor.iter().map(|&j| st.mu[j]));
        v.extend(self.model.monitor.iter().map(|&j| st.sigma.cov[(j, j)]));
        v
    }

    fn residuals(&self, out: &mut [f64]) -> f64 {
        let mut k = 0;
        for (i, idx) in self.model.map.iter().enumerate() {
            for (t, &j) in idx.iter().enumerate() {
                out[k] = self.model.obs[i][t] - self.state.z[(i, j)];
                k += 1;
            }
        }
        self.state.sigma_eps2
    }
}

/// Runs the sampler and summarizes the pooled chains.
pub fn bhm_run(
    data: &FunctionalDataset,
    est: &EmpiricalEstimates,
    hyper: &HyperParams,
    settings: &McmcSettings,
    progress: Option<Progress<'_>>,
) -> Result<(SmoothResult, BhmDraws)> {
    settings.validate()?;
    let model = BhmModel::new(data, est, hyper)?;
    let lengths: Vec<usize> = data.curves.iter().map(|c| c.len()).collect();
    let outputs = run_chains(
        settings,
        &lengths,
        |_| Ok(BhmChain { model: &model, state: model.init() }),
        progress,
    )?;
    let pooled = pool(&outputs)?;
    let result = summarize(&model, &pooled, hyper, settings, data.pooled.clone())?;
    let draws = RunDraws { monitor_names: monitor_names(), traces: pooled.traces, residuals: pooled.residuals };
    Ok((result, draws))
}

fn summarize(
    model: &BhmModel,
    pooled: &Pooled,
    hyper: &HyperParams,
    settings: &McmcSettings,
    grid: Vec<f64>,
) -> Result<SmoothResult> {
    let (n, p) = (model.n, model.p);
    let z = block(&pooled.mean, 0, n, p);
    let z_cl = block(&pooled.lower, 0, n, p);
    let z_ul = block(&pooled.upper, 0, n, p);
    let mu_off = n * p;
    let s_off = mu_off + p;
    let r_off = s_off + packed_len(p);
    let unpack = |v: &[f64]| to_rows(&crate::mcmc::unpack_upper(p, &v[s_off..r_off]));
    let fit = fit_diagnostics(pooled)?;
    let matern = hyper.a_model.matern();
    Ok(SmoothResult {
        method: Method::Bhm,
        grid,
        sigma_se: to_rows(&row_covariance(&z)),
        z: to_rows(&z),
        z_cl: to_rows(&z_cl),
        z_ul: to_rows(&z_ul),
        mu: pooled.mean[mu_off..s_off].to_vec(),
        mu_ci: vec![pooled.lower[mu_off..s_off].to_vec(), pooled.upper[mu_off..s_off].to_vec()],
        sigma: unpack(&pooled.mean),
        sigma_cl: Some(unpack(&pooled.lower)),
        sigma_ul: Some(unpack(&pooled.upper)),
        rn: pooled.mean[r_off],
        rn_ci: [pooled.lower[r_off], pooled.upper[r_off]],
        rs: pooled.mean[r_off + 1],
        rs_ci: [pooled.lower[r_off + 1], pooled.upper[r_off + 1]],
        rho: matern.map(|m| m.rho),
        nu: matern.map(|m| m.nu),
        pmin_vec: fit.0,
        interpretation: fit.1,
        psrf: named_psrf(pooled),
        chains: settings.chains,
        retained: pooled.retained,
        seed: settings.seed,
        babf: None,
    })
}

pub(crate) fn fit_diagnostics(pooled: &Pooled) -> Result<(Vec<f64>, Vec<crate::diagnostics::FitEvidence>)> {
    if pooled.residuals.draws() == 0 {
        log::warn!("no residual draws were stored; goodness-of-fit p-values are omitted");
        return Ok((vec![], vec![]));
    }
    let fit = pdm_pvalues(&pooled.residuals)?;
    Ok((fit.pmin_vec, fit.interpretation))
}

pub(crate) fn named_psrf(pooled: &Pooled) -> Option<Vec<NamedSummary>> {
    pooled.psrf.as_ref().map(|v| {
        monitor_names()
            .into_iter()
            .zip(v.iter().cloned())
            .map(|(name, summary)| NamedSummary { name, summary })
            .collect()
    })
}
