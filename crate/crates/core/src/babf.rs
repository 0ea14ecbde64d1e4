//! Basis-approximated Gibbs sampler. Signals are written as
//! `Z_i(t) = B(t) zeta_i` with a cubic B-spline basis interpolating at a
//! working grid `tau`; the GP prior on `Z(tau)` induces a normal /
//! inverse-Wishart prior on the coefficients through `B(tau)^{-1}`, and the
//! Gibbs steps run on `K`-vectors instead of full-grid signals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bhm::{fit_diagnostics, named_psrf};
use crate::bspline::{build_basis, coeff_transform, select_working_grid, BSplineBasis, WorkingGrid};
use crate::datagen::FunctionalDataset;
use crate::empirical::{build_hyperparams, empirical_estimates_at, EmpiricalEstimates, HyperParams, PriorSettings};
use crate::error::{Error, Result};
use crate::mcmc::{
    monitor_indices, monitor_names, pack_upper, packed_len, pool, run_chains, unpack_upper, GibbsChain,
    McmcSettings, Pooled, Progress,
};
use crate::stochastic::{sample_gamma, sample_inverse_wishart_factored, symmetrize, CovDraw, RngStream, SpdMatrix};
use crate::summary::{block, row_covariance, to_rows, BabfSummary, Method, Rows, RunDraws, SmoothResult};

/// Evaluation grids longer than this get no `Sigma_cgrid` bands; keeping
/// `E (E + 1) / 2` values per draw would dominate memory.
pub const SIGMA_BAND_MAX_GRID: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BabfConfig {
    /// Working-grid length `L` (also the number of basis functions).
    pub l: usize,
    /// User working grid; overrides `l`.
    pub tau: Option<Vec<f64>>,
    /// Defaults to the pooled grid.
    pub eval_grid: Option<Vec<f64>>,
}

impl Default for BabfConfig {
    fn default() -> Self {
        BabfConfig { l: 20, tau: None, eval_grid: None }
    }
}

#[derive(Clone, Debug)]
pub struct BabfState {
    /// Coefficients, one row per curve.
    pub zeta: DMatrix<f64>,
    pub mu_zeta: DVector<f64>,
    pub sigma_zeta: CovDraw,
    pub sigma_eps2: f64,
    pub sigma_s2: f64,
}

pub type BabfDraws = RunDraws;

/// Curves sharing a grid share `B_i^T B_i`.
#[derive(Clone, Debug)]
struct GridGroup {
    curves: Vec<usize>,
    btb: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct BabfModel {
    pub n: usize,
    pub k: usize,
    pub basis: BSplineBasis,
    pub tau: Vec<f64>,
    pub eval_grid: Vec<f64>,
    /// `B(tau)` and its inverse.
    pub b_tau: DMatrix<f64>,
    pub b_tau_inv: DMatrix<f64>,
    /// `B(t_i)` per curve.
    pub b_obs: Vec<DMatrix<f64>>,
    pub b_eval: DMatrix<f64>,
    obs: Vec<DVector<f64>>,
    btx: Vec<DVector<f64>>,
    groups: Vec<GridGroup>,
    total_obs: usize,
    mu0_zeta: DVector<f64>,
    a_zeta: DMatrix<f64>,
    c: f64,
    delta: f64,
    a_eps: f64,
    b_eps: f64,
    a_s: f64,
    b_s: f64,
    sigma_bands: bool,
    init: BabfState,
    monitor: [usize; 3],
}

/// `B^{-1} M B^{-T}`, symmetrized.
fn congruence(b_inv: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b_inv * m * b_inv.transpose();
    symmetrize(&mut out);
    out
}

/// Working grid, basis, and the empirical estimates and hyperparameters on
/// the working grid.
pub fn babf_prepare(
    data: &FunctionalDataset,
    prior: &PriorSettings,
    cfg: &BabfConfig,
    candidates: &[f64],
) -> Result<(WorkingGrid, BSplineBasis, EmpiricalEstimates, HyperParams)> {
    data.validate()?;
    let wg = match &cfg.tau {
        Some(t) => WorkingGrid::user(t.clone())?,
        None => select_working_grid(&data.pooled, cfg.l)?,
    };
    let basis = build_basis(&wg, data.domain_or_range())?;
    let est = empirical_estimates_at(data, &wg.tau, candidates)?;
    let hyper = build_hyperparams(&est, prior, candidates)?;
    Ok((wg, basis, est, hyper))
}

impl BabfModel {
    pub fn new(
        data: &FunctionalDataset,
        est: &EmpiricalEstimates,
        hyper: &HyperParams,
        basis: BSplineBasis,
        eval_grid: Option<Vec<f64>>,
    ) -> Result<Self> {
        let tau = hyper.grid.clone();
        if est.grid != tau || tau.len() != basis.k {
            return Err(Error::shape("estimates, hyperparameters and basis must share the working grid"));
        }
        let n = data.n();
        let k = basis.k;
        let (lo, hi) = basis.domain;
        let eval_grid = eval_grid.unwrap_or_else(|| data.pooled.clone());
        if eval_grid.is_empty() || eval_grid.iter().any(|t| !(*t >= lo && *t <= hi)) {
            return Err(Error::param(format!("evaluation grid must be nonempty and inside [{lo}, {hi}]")));
        }
        let (b_tau, b_tau_inv) = coeff_transform(&basis, &tau)?;
        let b_obs: Vec<DMatrix<f64>> = data.curves.iter().map(|c| basis.eval(&c.t)).collect();
        let obs: Vec<DVector<f64>> = data.curves.iter().map(|c| DVector::from_column_slice(&c.x)).collect();
        let btx = b_obs.iter().zip(&obs).map(|(b, x)| b.transpose() * x).collect();
        let mut groups: Vec<GridGroup> = Vec::new();
        for (i, c) in data.curves.iter().enumerate() {
            match groups.iter_mut().find(|g| data.curves[g.curves[0]].t == c.t) {
                Some(g) => g.curves.push(i),
                None => groups.push(GridGroup {
                    curves: vec![i],
                    btb: b_obs[i].transpose() * &b_obs[i],
                }),
            }
        }
        let b_eval = basis.eval(&eval_grid);

        let zeta = (&b_tau_inv * est.smoothed.transpose()).transpose();
        let sigma0 = SpdMatrix::new(congruence(&b_tau_inv, &est.sigma_hat.jittered()))?;
        let init = BabfState {
            zeta,
            mu_zeta: &b_tau_inv * &est.mu_hat,
            sigma_zeta: CovDraw::from_spd(&sigma0),
            sigma_eps2: est.noise_var.max(crate::empirical::NOISE_VAR_FLOOR),
            sigma_s2: hyper.delta - 2.0,
        };
        let sigma_bands = eval_grid.len() <= SIGMA_BAND_MAX_GRID;
        if !sigma_bands {
            log::warn!(
                "evaluation grid has {} points; Sigma_cgrid bands are skipped",
                eval_grid.len()
            );
        }
        Ok(BabfModel {
            n,
            k,
            tau,
            monitor: monitor_indices(eval_grid.len()),
            eval_grid,
            mu0_zeta: &b_tau_inv * &hyper.mu0,
            a_zeta: congruence(&b_tau_inv, &hyper.a.jittered()),
            b_tau,
            b_tau_inv,
            b_obs,
            b_eval,
            obs,
            btx,
            groups,
            total_obs: data.total_obs(),
            c: hyper.c,
            delta: hyper.delta,
            a_eps: hyper.a_eps,
            b_eps: hyper.b_eps,
            a_s: hyper.a_s,
            b_s: hyper.b_s,
            sigma_bands,
            init,
            basis,
        })
    }

    /// Coefficients from each curve's smooth at `tau`, mean and covariance
    /// from the empirical estimates pushed through `B(tau)^{-1}`.
    pub fn init(&self) -> BabfState {
        self.init.clone()
    }

    pub fn mu0_zeta(&self) -> &DVector<f64> {
        &self.mu0_zeta
    }

    pub fn a_zeta(&self) -> &DMatrix<f64> {
        &self.a_zeta
    }

    /// `zeta_i ~ N(V_i (B_i^T X_i / s2 + W mu), V_i)`,
    /// `V_i = (B_i^T B_i / s2 + W)^{-1}`.
    pub fn step_coeffs(&self, st: &mut BabfState, rng: &mut RngStream) -> Result<()> {
        let w = &st.sigma_zeta.precision;
        let prior_b = w * &st.mu_zeta;
        let inv_s2 = 1.0 / st.sigma_eps2;
        for g in &self.groups {
            let q = SpdMatrix::new(w + &g.btb * inv_s2)?;
            let l = q.factor();
            let mut rhs = DMatrix::zeros(self.k, g.curves.len());
            for (col, &i) in g.curves.iter().enumerate() {
                rhs.set_column(col, &(&prior_b + &self.btx[i] * inv_s2));
            }
            let mut y = l
                .solve_lower_triangular(&rhs)
                .ok_or_else(|| Error::Conditioning("singular coefficient precision factor".into()))?;
            for v in y.iter_mut() {
                *v += rng.standard_normal();
            }
            let draw = l
                .tr_solve_lower_triangular(&y)
                .ok_or_else(|| Error::Conditioning("singular coefficient precision factor".into()))?;
            for (col, &i) in g.curves.iter().enumerate() {
                st.zeta.row_mut(i).copy_from(&draw.column(col).transpose());
            }
        }
        Ok(())
    }

    /// `mu_zeta ~ N((c mu0_zeta + sum zeta_i) / (c + n), Sigma_zeta / (c + n))`,
    /// then `Sigma_zeta ~ IW(delta + n + 1, sigma_s2 A_zeta + S + c d d^T)`.
    pub fn step_meancov(&self, st: &mut BabfState, rng: &mut RngStream) -> Result<()> {
        let kn = self.c + self.n as f64;
        let mut mean = &self.mu0_zeta * self.c;
        for i in 0..self.n {
            mean += st.zeta.row(i).transpose();
        }
        mean /= kn;
        st.mu_zeta = mean + &st.sigma_zeta.root * rng.normal_vector(self.k) / kn.sqrt();

        let mut centred = st.zeta.clone();
        let mu_t = st.mu_zeta.transpose();
        for mut row in centred.row_iter_mut() {
            row -= &mu_t;
        }
        let mut scale = centred.transpose() * &centred;
        scale += &self.a_zeta * st.sigma_s2;
        let d = &st.mu_zeta - &self.mu0_zeta;
        scale.ger(self.c, &d, &d, 1.0);
        let scale = SpdMatrix::new(scale)?;
        st.sigma_zeta = sample_inverse_wishart_factored(self.delta + self.n as f64 + 1.0, &scale, rng)?;
        Ok(())
    }

    /// `Z` on curve `i`'s own grid.
    pub fn reconstruct_curve(&self, st: &BabfState, i: usize) -> DVector<f64> {
        &self.b_obs[i] * st.zeta.row(i).transpose()
    }

    /// Signals, mean and covariance on the evaluation grid.
    pub fn reconstruct_eval(&self, st: &BabfState) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let z = &st.zeta * self.b_eval.transpose();
        let mu = &self.b_eval * &st.mu_zeta;
        let mut sigma = &self.b_eval * &st.sigma_zeta.cov * self.b_eval.transpose();
        symmetrize(&mut sigma);
        (z, mu, sigma)
    }

    /// `Sigma_Z(tau, tau) = B(tau) Sigma_zeta B(tau)^T`.
    pub fn reconstruct_tau(&self, st: &BabfState) -> DMatrix<f64> {
        let mut s = &self.b_tau * &st.sigma_zeta.cov * self.b_tau.transpose();
        symmetrize(&mut s);
        s
    }

    pub fn ssr(&self, st: &BabfState) -> f64 {
        (0..self.n)
            .map(|i| (&self.obs[i] - self.reconstruct_curve(st, i)).norm_squared())
            .sum()
    }

    pub fn step_noise(&self, st: &mut BabfState, rng: &mut RngStream) -> Result<()> {
        let prec = sample_gamma(
            self.a_eps + self.total_obs as f64 / 2.0,
            self.b_eps + self.ssr(st) / 2.0,
            rng,
        )?;
        st.sigma_eps2 = 1.0 / prec;
        Ok(())
    }

    /// Gamma update with `L` in place of `p`. The trace
    /// `tr(A(tau) Sigma_Z(tau)^{-1})` equals `tr(A_zeta Sigma_zeta^{-1})`.
    pub fn step_scale(&self, st: &mut BabfState, rng: &mut RngStream) -> Result<()> {
        let l = self.k as f64;
        let tr = self.a_zeta.dot(&st.sigma_zeta.precision);
        st.sigma_s2 = sample_gamma(self.a_s + l * (self.delta + l - 1.0) / 2.0, self.b_s + tr / 2.0, rng)?;
        Ok(())
    }

    pub fn iterate(&self, st: &mut BabfState, rng: &mut RngStream) -> Result<()> {
        self.step_coeffs(st, rng)?;
        self.step_meancov(st, rng)?;
        self.step_noise(st, rng)?;
        self.step_scale(st, rng)
    }

    fn layout(&self) -> Layout {
        let (n, k, e) = (self.n, self.k, self.eval_grid.len());
        let mu = n * k;
        let sigma = mu + k;
        let rn = sigma + packed_len(k);
        let zt = rn + 2;
        let z_eval = zt + self.b_obs.iter().map(|b| b.nrows()).sum::<usize>();
        let mu_eval = z_eval + n * e;
        let sigma_eval = mu_eval + e;
        let len = sigma_eval + if self.sigma_bands { packed_len(e) } else { 0 };
        Layout { mu, sigma, rn, zt, z_eval, mu_eval, sigma_eval, len }
    }
}

/// Offsets into a record: `[zeta, mu_zeta, Sigma_zeta, rn, rs, Zt, Z_cgrid,
/// mu_cgrid, Sigma_cgrid?]`.
struct Layout {
    mu: usize,
    sigma: usize,
    rn: usize,
    zt: usize,
    z_eval: usize,
    mu_eval: usize,
    sigma_eval: usize,
    len: usize,
}

struct BabfChain<'a> {
    model: &'a BabfModel,
    state: BabfState,
}

impl GibbsChain for BabfChain<'_> {
    fn iterate(&mut self, rng: &mut RngStream) -> Result<()> {
        self.model.iterate(&mut self.state, rng)
    }

    fn record_len(&self) -> usize {
        self.model.layout().len
    }

    fn record(&self, out: &mut [f64]) {
        let m = self.model;
        let lay = m.layout();
        let st = &self.state;
        out[..lay.mu].copy_from_slice(st.zeta.as_slice());
        out[lay.mu..lay.sigma].copy_from_slice(st.mu_zeta.as_slice());
        pack_upper(&st.sigma_zeta.cov, &mut out[lay.sigma..lay.rn]);
        out[lay.rn] = 1.0 / st.sigma_eps2;
        out[lay.rn + 1] = st.sigma_s2;
        let mut o = lay.zt;
        for i in 0..m.n {
            let z = m.reconstruct_curve(st, i);
            out[o..o + z.len()].copy_from_slice(z.as_slice());
            o += z.len();
        }
        let z = &st.zeta * m.b_eval.transpose();
        out[lay.z_eval..lay.mu_eval].copy_from_slice(z.as_slice());
        let mu = &m.b_eval * &st.mu_zeta;
        out[lay.mu_eval..lay.sigma_eval].copy_from_slice(mu.as_slice());
        if m.sigma_bands {
            let mut s = &m.b_eval * &st.sigma_zeta.cov * m.b_eval.transpose();
            symmetrize(&mut s);
            pack_upper(&s, &mut out[lay.sigma_eval..lay.len]);
        }
    }

    fn monitored(&self) -> Vec<f64> {
        let m = self.model;
        let st = &self.state;
        let mut v = vec![st.sigma_eps2, st.sigma_s2];
        for &j in &m.monitor {
            v.push(m.b_eval.row(j).dot(&st.mu_zeta.transpose()));
        }
        for &j in &m.monitor {
            let b = m.b_eval.row(j).transpose();
            v.push(b.dot(&(&st.sigma_zeta.cov * &b)));
        }
        v
    }

    fn residuals(&self, out: &mut [f64]) -> f64 {
        let mut k = 0;
        for i in 0..self.model.n {
            let r = &self.model.obs[i] - self.model.reconstruct_curve(&self.state, i);
            out[k..k + r.len()].copy_from_slice(r.as_slice());
            k += r.len();
        }
        self.state.sigma_eps2
    }
}

/// Builds the basis and hyperparameters, runs the chains and summarizes.
pub fn babf_run(
    data: &FunctionalDataset,
    prior: &PriorSettings,
    cfg: &BabfConfig,
    settings: &McmcSettings,
    candidates: &[f64],
    progress: Option<Progress<'_>>,
) -> Result<(SmoothResult, BabfDraws)> {
    settings.validate()?;
    let (_, basis, est, hyper) = babf_prepare(data, prior, cfg, candidates)?;
    let model = BabfModel::new(data, &est, &hyper, basis, cfg.eval_grid.clone())?;
    let lengths: Vec<usize> = data.curves.iter().map(|c| c.len()).collect();
    let outputs = run_chains(
        settings,
        &lengths,
        |_| Ok(BabfChain { model: &model, state: model.init() }),
        progress,
    )?;
    let pooled = pool(&outputs)?;
    let result = summarize(&model, &pooled, &hyper, settings)?;
    let draws = RunDraws { monitor_names: monitor_names(), traces: pooled.traces, residuals: pooled.residuals };
    Ok((result, draws))
}

fn summarize(model: &BabfModel, pooled: &Pooled, hyper: &HyperParams, settings: &McmcSettings) -> Result<SmoothResult> {
    let (n, k, e) = (model.n, model.k, model.eval_grid.len());
    let lay = model.layout();
    let zeta = block(&pooled.mean, 0, n, k);
    let mu_zeta = DVector::from_column_slice(&pooled.mean[lay.mu..lay.sigma]);
    let sigma_zeta = unpack_upper(k, &pooled.mean[lay.sigma..lay.rn]);
    let packed_k = |v: &[f64]| to_rows(&unpack_upper(k, &v[lay.sigma..lay.rn]));

    // function-space means straight from the coefficient means
    let z_eval = &zeta * model.b_eval.transpose();
    let mu_eval = &model.b_eval * &mu_zeta;
    let mut sigma_eval = &model.b_eval * &sigma_zeta * model.b_eval.transpose();
    symmetrize(&mut sigma_eval);
    let mut sigma_tau = &model.b_tau * &sigma_zeta * model.b_tau.transpose();
    symmetrize(&mut sigma_tau);
    let zt: Vec<Vec<f64>> = (0..n)
        .map(|i| (&model.b_obs[i] * zeta.row(i).transpose()).as_slice().to_vec())
        .collect();
    let ragged = |v: &[f64]| {
        let mut o = lay.zt;
        model
            .b_obs
            .iter()
            .map(|b| {
                o += b.nrows();
                v[o - b.nrows()..o].to_vec()
            })
            .collect::<Rows>()
    };

    let z_cl = to_rows(&block(&pooled.lower, lay.z_eval, n, e));
    let z_ul = to_rows(&block(&pooled.upper, lay.z_eval, n, e));
    let mu_ci = vec![
        pooled.lower[lay.mu_eval..lay.sigma_eval].to_vec(),
        pooled.upper[lay.mu_eval..lay.sigma_eval].to_vec(),
    ];
    let (s_cl, s_ul) = if model.sigma_bands {
        let un = |v: &[f64]| to_rows(&unpack_upper(e, &v[lay.sigma_eval..lay.len]));
        (Some(un(&pooled.lower)), Some(un(&pooled.upper)))
    } else {
        (None, None)
    };
    let z_rows = to_rows(&z_eval);
    let sigma_rows = to_rows(&sigma_eval);
    let mu_vec = mu_eval.as_slice().to_vec();
    let sigma_se = to_rows(&row_covariance(&z_eval));
    let fit = fit_diagnostics(pooled)?;
    let matern = hyper.a_model.matern();
    let extras = BabfSummary {
        tau: model.tau.clone(),
        knots: model.basis.knots.clone(),
        zt,
        zt_cl: ragged(&pooled.lower),
        zt_ul: ragged(&pooled.upper),
        z_cgrid: z_rows.clone(),
        z_cgrid_cl: z_cl.clone(),
        z_cgrid_ul: z_ul.clone(),
        mu_cgrid: mu_vec.clone(),
        mu_cgrid_ci: mu_ci.clone(),
        sigma_cgrid: sigma_rows.clone(),
        sigma_cgrid_cl: s_cl.clone(),
        sigma_cgrid_ul: s_ul.clone(),
        zeta: to_rows(&zeta),
        zeta_cl: to_rows(&block(&pooled.lower, 0, n, k)),
        zeta_ul: to_rows(&block(&pooled.upper, 0, n, k)),
        mu_zeta: mu_zeta.as_slice().to_vec(),
        mu_zeta_ci: vec![
            pooled.lower[lay.mu..lay.sigma].to_vec(),
            pooled.upper[lay.mu..lay.sigma].to_vec(),
        ],
        sigma_zeta: to_rows(&sigma_zeta),
        sigma_zeta_cl: packed_k(&pooled.lower),
        sigma_zeta_ul: packed_k(&pooled.upper),
        sigma_zeta_se: to_rows(&row_covariance(&zeta)),
        btau: to_rows(&model.b_tau),
        bt: model.b_obs.iter().map(to_rows).collect(),
        sigma_tau: to_rows(&sigma_tau),
        mu_tau: (&model.b_tau * &mu_zeta).as_slice().to_vec(),
    };
    Ok(SmoothResult {
        method: Method::Babf,
        grid: model.eval_grid.clone(),
        z: z_rows,
        z_cl,
        z_ul,
        mu: mu_vec,
        mu_ci,
        sigma: sigma_rows,
        sigma_cl: s_cl,
        sigma_ul: s_ul,
        sigma_se,
        rn: pooled.mean[lay.rn],
        rn_ci: [pooled.lower[lay.rn], pooled.upper[lay.rn]],
        rs: pooled.mean[lay.rn + 1],
        rs_ci: [pooled.lower[lay.rn + 1], pooled.upper[lay.rn + 1]],
        rho: matern.map(|m| m.rho),
        nu: matern.map(|m| m.nu),
        pmin_vec: fit.0,
        interpretation: fit.1,
        psrf: named_psrf(pooled),
        chains: settings.chains,
        retained: pooled.retained,
        seed: settings.seed,
        babf: Some(extras),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bhm::bhm_run;
    use crate::css::gcv_candidates;
    use crate::datagen::{sim_gfd, sim_gfd_rgrid, SimConfig};
    use crate::empirical::empirical_estimates;
    use approx::assert_relative_eq;

    fn cands() -> Vec<f64> {
        gcv_candidates(0.9, 0.99, 0.01).unwrap()
    }

    fn model_for(cfg: &SimConfig, l: usize) -> (FunctionalDataset, BabfModel, EmpiricalEstimates) {
        let data = sim_gfd(cfg).unwrap();
        let prior = PriorSettings { ws: 1.0, ..Default::default() };
        let (_, basis, est, hyper) =
            babf_prepare(&data, &prior, &BabfConfig { l, ..Default::default() }, &cands()).unwrap();
        let model = BabfModel::new(&data, &est, &hyper, basis, None).unwrap();
        (data, model, est)
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn init_round_trips_through_the_basis() {
        let (_, model, est) = model_for(&SimConfig { n: 10, p: 30, ..Default::default() }, 10);
        let st = model.init();
        assert_relative_eq!(&model.b_tau * &st.mu_zeta, est.mu_hat.clone(), epsilon = 1e-10);
        let back = model.reconstruct_tau(&st);
        assert_relative_eq!(back, est.sigma_hat.jittered(), epsilon = 1e-8 * est.sigma_hat.matrix().amax());
        for i in 0..10 {
            let at_tau = &model.b_tau * st.zeta.row(i).transpose();
            assert_relative_eq!(at_tau, est.smoothed.row(i).transpose(), epsilon = 1e-9);
        }
    }

    #[test]
    fn partition_of_unity_reconstruction() {
        let (data, model, _) = model_for(&SimConfig { n: 4, p: 30, ..Default::default() }, 8);
        let mut st = model.init();
        st.zeta.fill(1.0);
        st.mu_zeta.fill(1.0);
        for i in 0..4 {
            for v in model.reconstruct_curve(&st, i).iter() {
                assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
            }
        }
        let (z, mu, sigma) = model.reconstruct_eval(&st);
        assert!(z.iter().chain(mu.iter()).all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(sigma.nrows(), data.pooled.len());
        assert!(model.reconstruct_tau(&st).cholesky().is_some());
        assert_eq!(z.ncols(), data.pooled.len());
    }

    #[test]
    fn constant_mean_maps_to_constant_coefficients() {
        let (_, model, _) = model_for(&SimConfig { n: 4, p: 30, ..Default::default() }, 8);
        let c = DVector::from_element(8, 2.5);
        let coeff = &model.b_tau_inv * c;
        assert!(coeff.iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn identity_covariance_transform() {
        let (_, model, _) = model_for(&SimConfig { n: 4, p: 30, ..Default::default() }, 8);
        let t = congruence(&model.b_tau_inv, &DMatrix::identity(8, 8));
        assert_relative_eq!(t, &model.b_tau_inv * model.b_tau_inv.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn coefficient_limits() {
        let (data, model, _) = model_for(&SimConfig { n: 3, p: 8, ..Default::default() }, 8);
        let mut rng = RngStream::new(21, 0);
        let mut st = model.init();
        st.sigma_zeta = CovDraw::identity(8);
        st.sigma_eps2 = 1e-10;
        model.step_coeffs(&mut st, &mut rng).unwrap();
        for i in 0..3 {
            let z = model.reconstruct_curve(&st, i);
            for (a, b) in z.iter().zip(&data.curves[i].x) {
                assert!((a - b).abs() < 1e-3);
            }
        }
        let mut st = model.init();
        st.sigma_eps2 = 1e12;
        st.sigma_zeta = CovDraw::from_spd(&SpdMatrix::new(DMatrix::identity(8, 8) * 1e-8).unwrap());
        model.step_coeffs(&mut st, &mut rng).unwrap();
        for i in 0..3 {
            for j in 0..8 {
                assert!((st.zeta[(i, j)] - st.mu_zeta[j]).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn scale_conditional_matches_gamma() {
        let (_, model, _) = model_for(&SimConfig { n: 12, p: 20, ..Default::default() }, 6);
        let mut st = model.init();
        let l = 6.0;
        let tr = model.a_zeta().dot(&st.sigma_zeta.precision);
        let shape = model.a_s + l * (model.delta + l - 1.0) / 2.0;
        let rate = model.b_s + tr / 2.0;
        // the trace is the same as on the working grid
        let tau_cov = SpdMatrix::new(model.reconstruct_tau(&st)).unwrap();
        let a_tau = &model.b_tau * model.a_zeta() * model.b_tau.transpose();
        assert_relative_eq!(a_tau.dot(&tau_cov.inverse()), tr, max_relative = 1e-6);
        let mut rng = RngStream::new(22, 0);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                model.step_scale(&mut st, &mut rng).unwrap();
                st.sigma_s2
            })
            .collect();
        let (m, v) = mean_var(&draws);
        assert!((m - shape / rate).abs() < 4.0 * (v / 20_000.0).sqrt());
    }

    #[test]
    fn run_outputs_are_consistent() {
        let data = sim_gfd_rgrid(&SimConfig { n: 8, p: 25, ..Default::default() }).unwrap();
        let s = McmcSettings { iterations: 300, burnin: 100, chains: 2, seed: 5, resid_thin: 10, draw_thin: 1 };
        let bc = BabfConfig { l: 10, ..Default::default() };
        let (r, d) = babf_run(&data, &PriorSettings::default(), &bc, &s, &cands(), None).unwrap();
        let (r2, _) = babf_run(&data, &PriorSettings::default(), &bc, &s, &cands(), None).unwrap();
        assert_eq!(r, r2);
        let x = r.babf.as_ref().unwrap();
        assert_eq!(x.zeta.len(), 8);
        assert_eq!(x.zeta[0].len(), 10);
        assert_eq!(x.zt[3].len(), data.curves[3].len());
        assert_eq!(r.z.len(), 8);
        assert_eq!(r.z[0].len(), data.pooled.len());
        assert_eq!(d.residuals.draws(), 40);
        assert_eq!(r.pmin_vec.len(), 8);
        for i in 0..8 {
            for j in 0..data.pooled.len() {
                assert!(x.z_cgrid_cl[i][j] <= x.z_cgrid_ul[i][j]);
            }
        }
        assert_eq!(x.bt.len(), 8);
        assert_eq!(x.btau.len(), 10);
        assert!(x.sigma_cgrid_cl.is_some());
    }

    #[test]
    fn eval_grid_outside_domain_rejected() {
        let data = sim_gfd(&SimConfig { n: 4, p: 20, ..Default::default() }).unwrap();
        let bc = BabfConfig { l: 8, eval_grid: Some(vec![0.0, 5.0]), ..Default::default() };
        let s = McmcSettings { iterations: 20, burnin: 10, ..Default::default() };
        assert!(babf_run(&data, &PriorSettings::default(), &bc, &s, &cands(), None).is_err());
    }

    /// Batch-means Monte Carlo standard error.
    fn mc_se(xs: &[f64]) -> f64 {
        let b = 50;
        let size = xs.len() / b;
        let means: Vec<f64> = xs.chunks(size).take(b).map(|c| c.iter().sum::<f64>() / size as f64).collect();
        (mean_var(&means).1 / b as f64).sqrt()
    }

    #[test]
    fn exact_basis_matches_full_grid_sampler() {
        let cfg = SimConfig { n: 5, p: 10, ..Default::default() };
        let data = sim_gfd(&cfg).unwrap();
        let prior = PriorSettings { ws: 1.0, ..Default::default() };
        let s = McmcSettings { iterations: 20_000, burnin: 2_000, ..Default::default() };
        let bc = BabfConfig { l: 10, ..Default::default() };
        let (_, db) = babf_run(&data, &prior, &bc, &s, &cands(), None).unwrap();
        let est = empirical_estimates(&data, &cands()).unwrap();
        let hyper = build_hyperparams(&est, &prior, &cands()).unwrap();
        let (_, dh) = bhm_run(&data, &est, &hyper, &s, None).unwrap();
        // monitored scalars 2..5 are mu at three grid points
        for k in 2..5 {
            let (a, b) = (&db.traces[0][k], &dh.traces[0][k]);
            let diff = mean_var(a).0 - mean_var(b).0;
            let se = (mc_se(a).powi(2) + mc_se(b).powi(2)).sqrt();
            assert!(diff.abs() < 3.0 * se, "{k}: diff {diff}, se {se}");
        }
    }
}
