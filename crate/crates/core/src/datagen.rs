//! Functional datasets and the Gaussian-process simulation generators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{nonstationary_cov, stationary_cov, transformed_grid, MaternParams};
use crate::stochastic::{RngStream, SpdMatrix};

/// One observed curve: its grid, the noisy values and (for simulated data)
/// the noiseless signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

impl Curve {
    pub fn new(t: Vec<f64>, x: Vec<f64>, truth: Option<Vec<f64>>) -> Result<Self> {
        let c = Curve { t, x, truth };
        c.validate(0)?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.t.is_empty() {
            return Err(Error::param(format!("curve {index} has no observations")));
        }
        if self.t.len() != self.x.len() {
            return Err(Error::shape(format!(
                "curve {index}: {} grid points but {} values",
                self.t.len(),
                self.x.len()
            )));
        }
        if let Some(tr) = &self.truth {
            if tr.len() != self.t.len() {
                return Err(Error::shape(format!(
                    "curve {index}: {} grid points but {} truth values",
                    self.t.len(),
                    tr.len()
                )));
            }
        }
        let all = self.t.iter().chain(&self.x).chain(self.truth.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::param(format!("curve {index} has non-finite entries")));
        }
        if let Some(j) = self.t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::param(format!(
                "curve {index}: grid is not strictly increasing at positions {j} and {}",
                j + 1
            )));
        }
        Ok(())
    }
}

/// A set of curves together with their pooled grid and optional ground
/// truth on a reference grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub curves: Vec<Curve>,
    pub pooled: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<(f64, f64)>,
    /// Grid on which `true_mean` / `true_cov` are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_cov: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_config: Option<SimConfig>,
}

impl FunctionalDataset {
    pub fn new(curves: Vec<Curve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::param("a dataset needs at least one curve"));
        }
        for (i, c) in curves.iter().enumerate() {
            c.validate(i)?;
        }
        let pooled = pooled_grid(&curves);
        Ok(FunctionalDataset {
            curves,
            pooled,
            domain: None,
            truth_grid: None,
            true_mean: None,
            true_cov: None,
            sim_config: None,
        })
    }

    /// Re-checks every invariant, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.curves.is_empty() {
            return Err(Error::param("a dataset needs at least one curve"));
        }
        for (i, c) in self.curves.iter().enumerate() {
            c.validate(i)?;
        }
        if self.pooled != pooled_grid(&self.curves) {
            return Err(Error::param("pooled grid is not the sorted union of the curve grids"));
        }
        if let Some((a, b)) = self.domain {
            if !(a < b) {
                return Err(Error::param(format!("domain ({a}, {b}) is empty")));
            }
            let (lo, hi) = (self.pooled[0], self.pooled[self.pooled.len() - 1]);
            if lo < a || hi > b {
                return Err(Error::param(format!("observations span [{lo}, {hi}], outside the domain ({a}, {b})")));
            }
        }
        match (&self.truth_grid, &self.true_mean, &self.true_cov) {
            (None, None, None) => {}
            (Some(g), m, c) => {
                if m.as_ref().is_some_and(|m| m.len() != g.len()) {
                    return Err(Error::shape("true mean length differs from its grid"));
                }
                if c.as_ref().is_some_and(|c| c.nrows() != g.len() || c.ncols() != g.len()) {
                    return Err(Error::shape("true covariance shape differs from its grid"));
                }
            }
            _ => return Err(Error::param("true mean/covariance given without their grid")),
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    pub fn total_obs(&self) -> usize {
        self.curves.iter().map(|c| c.len()).sum()
    }

    /// True when every curve is observed on the whole pooled grid.
    pub fn is_common_grid(&self) -> bool {
        self.curves.iter().all(|c| c.t == self.pooled)
    }

    pub fn has_truth(&self) -> bool {
        self.curves.iter().all(|c| c.truth.is_some())
    }

    /// Domain if recorded, else the pooled-grid range.
    pub fn domain_or_range(&self) -> (f64, f64) {
        self.domain
            .unwrap_or((self.pooled[0], self.pooled[self.pooled.len() - 1]))
    }

    /// For each curve, the positions of its grid points in the pooled grid.
    pub fn selection_map(&self) -> Vec<Vec<usize>> {
        self.curves
            .iter()
            .map(|c| {
                c.t.iter()
                    .map(|t| {
                        self.pooled
                            .binary_search_by(|p| p.partial_cmp(t).expect("finite grid"))
                            .expect("curve grid is a subset of the pooled grid")
                    })
                    .collect()
            })
            .collect()
    }
}

fn pooled_grid(curves: &[Curve]) -> Vec<f64> {
    let mut all: Vec<f64> = curves.iter().flat_map(|c| c.t.iter().copied()).collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    all.dedup();
    all
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
        }
    }
}

/// Settings of the simulation generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub au: f64,
    pub bu: f64,
    /// Signal standard deviation.
    pub s: f64,
    /// Signal-to-noise ratio; the noise sd is `s / r`.
    pub r: f64,
    pub nu: f64,
    pub rho: f64,
    pub dense: f64,
    pub cgrid: bool,
    pub stat: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 30,
            p: 40,
            au: 0.0,
            bu: std::f64::consts::FRAC_PI_2,
            s: 5f64.sqrt(),
            r: 2.0,
            nu: 3.5,
            rho: 0.5,
            dense: 0.6,
            cgrid: true,
            stat: true,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 1 {
            return Err(Error::param(format!("n and p must be at least 1, got n={} p={}", self.n, self.p)));
        }
        if !(self.au < self.bu) || !self.au.is_finite() || !self.bu.is_finite() {
            return Err(Error::param(format!("domain needs au < bu, got ({}, {})", self.au, self.bu)));
        }
        if !(self.s > 0.0) || !(self.r > 0.0) {
            return Err(Error::param(format!("s and r must be positive, got s={} r={}", self.s, self.r)));
        }
        if !(self.dense > 0.0 && self.dense <= 1.0) {
            return Err(Error::param(format!("dense must lie in (0, 1], got {}", self.dense)));
        }
        if !self.stat && self.au < 0.0 {
            return Err(Error::param("the nonstationary model needs a nonnegative domain"));
        }
        self.matern()?;
        Ok(())
    }

    pub fn matern(&self) -> Result<MaternParams> {
        MaternParams::new(self.rho, self.nu)
    }

    pub fn noise_sd(&self) -> f64 {
        self.s / self.r
    }

    pub fn pgrid(&self) -> Vec<f64> {
        linspace(self.au, self.bu, self.p)
    }

    pub fn true_mean(&self, t: f64) -> f64 {
        if self.stat {
            3.0 * (4.0 * t).sin()
        } else {
            3.0 * (t + 0.5) * (4.0 * t.powf(2.0 / 3.0)).sin()
        }
    }

    /// The generating covariance on a strictly increasing grid.
    pub fn true_cov(&self, grid: &[f64]) -> Result<SpdMatrix> {
        let s2 = self.s * self.s;
        if self.stat {
            stationary_cov(grid, s2, &self.matern()?)
        } else {
            nonstationary_cov(grid, s2, &self.matern()?)
        }
    }

    /// Points kept per curve on an uncommon grid.
    pub fn kept_points(&self) -> usize {
        (self.dense * self.p as f64).round() as usize
    }

    /// Draws one signal on `grid`. Nonstationary draws are generated on the
    /// transformed grid and rescaled.
    fn draw_signal(&self, grid: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        let params = self.matern()?;
        let s2 = self.s * self.s;
        let base_grid = if self.stat { grid.to_vec() } else { transformed_grid(grid) };
        let cov = stationary_cov(&base_grid, s2, &params)?;
        let z = rng.normal_vector(grid.len());
        let dev: DVector<f64> = cov.factor() * z;
        Ok(grid
            .iter()
            .zip(dev.iter())
            .map(|(t, e)| {
                let scale = if self.stat { 1.0 } else { t + 0.5 };
                self.true_mean(*t) + scale * e
            })
            .collect())
    }
}

/// Simulates `n` curves on the equally spaced pooled grid, optionally
/// keeping a random subset of `round(dense * p)` points per curve.
pub fn sim_gfd(cfg: &SimConfig) -> Result<FunctionalDataset> {
    cfg.validate()?;
    let keep = cfg.kept_points();
    if !cfg.cgrid && keep < 2 {
        return Err(Error::param(format!(
            "dense={} keeps {keep} of {} points per curve; at least 2 are needed",
            cfg.dense, cfg.p
        )));
    }
    let pgrid = cfg.pgrid();
    let noise = cfg.noise_sd();
    let mut curves = Vec::with_capacity(cfg.n);
    let base = RngStream::new(cfg.seed, 0);
    for i in 0..cfg.n {
        let mut rng = base.substream(i as u64 + 1);
        let truth = cfg.draw_signal(&pgrid, &mut rng)?;
        let raw: Vec<f64> = truth.iter().map(|v| v + noise * rng.standard_normal()).collect();
        let curve = if cfg.cgrid {
            Curve { t: pgrid.clone(), x: raw, truth: Some(truth) }
        } else {
            let mut idx = rand::seq::index::sample(&mut rng, cfg.p, keep).into_vec();
            idx.sort_unstable();
            Curve {
                t: idx.iter().map(|&j| pgrid[j]).collect(),
                x: idx.iter().map(|&j| raw[j]).collect(),
                truth: Some(idx.iter().map(|&j| truth[j]).collect()),
            }
        };
        curves.push(curve);
    }
    let mut ds = FunctionalDataset::new(curves)?;
    ds.domain = Some((cfg.au, cfg.bu));
    ds.true_mean = Some(pgrid.iter().map(|t| cfg.true_mean(*t)).collect());
    ds.true_cov = Some(cfg.true_cov(&pgrid)?.into_matrix());
    ds.truth_grid = Some(pgrid);
    ds.sim_config = Some(cfg.clone());
    Ok(ds)
}

/// Simulates `n` curves, each on its own `p` sorted uniform points in
/// `(au, bu)`. The pooled grid is generically of size `n * p`, so the true
/// mean and covariance are not stored; they follow from `sim_config`.
pub fn sim_gfd_rgrid(cfg: &SimConfig) -> Result<FunctionalDataset> {
    cfg.validate()?;
    let noise = cfg.noise_sd();
    let base = RngStream::new(cfg.seed, 0);
    let mut curves = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = base.substream(i as u64 + 1);
        let t = loop {
            let mut t: Vec<f64> = (0..cfg.p).map(|_| rng.random_range(cfg.au..cfg.bu)).collect();
            t.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            if t.windows(2).all(|w| w[1] > w[0]) {
                break t;
            }
        };
        let truth = cfg.draw_signal(&t, &mut rng)?;
        let raw = truth.iter().map(|v| v + noise * rng.standard_normal()).collect();
        curves.push(Curve { t, x: raw, truth: Some(truth) });
    }
    let mut ds = FunctionalDataset::new(curves)?;
    ds.domain = Some((cfg.au, cfg.bu));
    ds.sim_config = Some(cfg.clone());
    Ok(ds)
}
