//! Convergence (PSRF), goodness of fit (PDM p-values) and accuracy metrics.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Minimum retained draws per chain for a PSRF.
pub const PSRF_MIN_DRAWS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub psrf: f64,
    pub within: f64,
    pub between: f64,
    pub chains: usize,
}

/// Gelman–Rubin potential scale reduction factor. Chains must have equal
/// lengths of at least [`PSRF_MIN_DRAWS`]. The statistic can dip to
/// `sqrt((n-1)/n)` when the chain means agree exactly; constant chains
/// give 1.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    chain_summary(chains).map(|s| s.psrf)
}

pub fn chain_summary(chains: &[Vec<f64>]) -> Result<ChainSummary> {
    if chains.len() < 2 {
        return Err(Error::param("PSRF needs at least two chains"));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::shape("PSRF chains must have equal lengths"));
    }
    if n < PSRF_MIN_DRAWS {
        return Err(Error::param(format!(
            "PSRF needs at least {PSRF_MIN_DRAWS} draws per chain, got {n}"
        )));
    }
    let nf = n as f64;
    let m = chains.len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let within = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    let grand = means.iter().sum::<f64>() / m;
    let between = nf * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let psrf = if within <= 0.0 {
        if between <= 0.0 {
            log::warn!("PSRF of constant chains is defined as 1");
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        (((nf - 1.0) / nf * within + between / nf) / within).sqrt()
    };
    Ok(ChainSummary { psrf, within, between, chains: chains.len() })
}

/// Residual draws kept for goodness-of-fit checks: raw residuals at every
/// observed point of every curve, with that draw's noise variance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualDraws {
    /// Observation count of each curve; residuals are concatenated in this
    /// curve order.
    pub lengths: Vec<usize>,
    pub sigma2: Vec<f64>,
    /// `draws x total` row-major.
    pub values: Vec<f64>,
}

impl ResidualDraws {
    pub fn new(lengths: Vec<usize>) -> Self {
        ResidualDraws { lengths, sigma2: vec![], values: vec![] }
    }

    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn draws(&self) -> usize {
        self.sigma2.len()
    }

    pub fn push(&mut self, sigma2: f64, residuals: &[f64]) {
        debug_assert_eq!(residuals.len(), self.total());
        self.sigma2.push(sigma2);
        self.values.extend_from_slice(residuals);
    }

    pub fn append(&mut self, other: &ResidualDraws) -> Result<()> {
        if self.lengths != other.lengths {
            return Err(Error::shape("residual draws from different datasets"));
        }
        self.sigma2.extend_from_slice(&other.sigma2);
        self.values.extend_from_slice(&other.values);
        Ok(())
    }

    pub fn draw(&self, d: usize) -> &[f64] {
        let t = self.total();
        &self.values[d * t..(d + 1) * t]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitEvidence {
    /// p > 0.25
    NoEvidence,
    /// 0.05 <= p <= 0.25
    SomeEvidence,
    /// p < 0.05
    StrongEvidence,
}

impl FitEvidence {
    pub fn classify(p: f64) -> Self {
        if p > 0.25 {
            FitEvidence::NoEvidence
        } else if p >= 0.05 {
            FitEvidence::SomeEvidence
        } else {
            FitEvidence::StrongEvidence
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            FitEvidence::NoEvidence => "no evidence of model inadequacy",
            FitEvidence::SomeEvidence => "some evidence of model inadequacy",
            FitEvidence::StrongEvidence => "strong evidence of model inadequacy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub pmin_vec: Vec<f64>,
    pub interpretation: Vec<FitEvidence>,
}

/// Per curve and draw, `D = sum_t ((x - z) / sigma)^2` is chi-square with
/// `n_i` degrees of freedom under the model. The curve's p-value is the
/// Bonferroni-adjusted minimum over draws of the upper-tail probability.
pub fn pdm_pvalues(res: &ResidualDraws) -> Result<FitDiagnostics> {
    let draws = res.draws();
    if draws == 0 {
        return Err(Error::param(
            "no residual draws were stored; lower resid_thin or run more iterations",
        ));
    }
    let mut offsets = Vec::with_capacity(res.lengths.len());
    let mut acc = 0;
    for l in &res.lengths {
        offsets.push(acc);
        acc += l;
    }
    let mut pmin = vec![f64::INFINITY; res.lengths.len()];
    for d in 0..draws {
        let row = res.draw(d);
        let s2 = res.sigma2[d];
        if !(s2 > 0.0) {
            return Err(Error::param("residual draw has a non-positive noise variance"));
        }
        for (i, (&off, &len)) in offsets.iter().zip(&res.lengths).enumerate() {
            if len == 0 {
                pmin[i] = pmin[i].min(1.0);
                continue;
            }
            let stat: f64 = row[off..off + len].iter().map(|r| r * r).sum::<f64>() / s2;
            let p = if stat <= 0.0 { 1.0 } else { gamma_ur(len as f64 / 2.0, stat / 2.0) };
            pmin[i] = pmin[i].min(p);
        }
    }
    let pmin_vec: Vec<f64> = pmin.into_iter().map(|p| (draws as f64 * p).min(1.0)).collect();
    let interpretation = pmin_vec.iter().map(|p| FitEvidence::classify(*p)).collect();
    Ok(FitDiagnostics { pmin_vec, interpretation })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub rmse: f64,
    pub mse: f64,
}

pub fn accuracy(estimate: &[f64], truth: &[f64]) -> Result<Accuracy> {
    if estimate.len() != truth.len() {
        return Err(Error::shape(format!(
            "estimate has {} entries, truth {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::shape("accuracy of empty inputs"));
    }
    let mse = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / estimate.len() as f64;
    Ok(Accuracy { rmse: mse.sqrt(), mse })
}

/// Fraction of points with `lower <= truth <= upper`.
pub fn coverage(lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<f64> {
    if lower.len() != upper.len() || lower.len() != truth.len() {
        return Err(Error::shape("band and truth lengths differ"));
    }
    if truth.is_empty() {
        return Err(Error::shape("coverage of empty inputs"));
    }
    if let Some(i) = lower.iter().zip(upper).position(|(l, u)| l > u) {
        return Err(Error::param(format!("band is inverted at point {i}")));
    }
    let hit = lower
        .iter()
        .zip(upper)
        .zip(truth)
        .filter(|((l, u), t)| *l <= *t && *t <= *u)
        .count();
    Ok(hit as f64 / truth.len() as f64)
}
