//! Posterior summaries written to the results file.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::FunctionalDataset;
use crate::diagnostics::{ChainSummary, FitEvidence, ResidualDraws};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bhm,
    Babf,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bhm => "bhm",
            Method::Babf => "babf",
        }
    }
}

/// Matrices are stored as lists of rows.
pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Rows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::shape("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedSummary {
    pub name: String,
    #[serde(flatten)]
    pub summary: ChainSummary,
}

/// Coefficient-space and reconstruction outputs of the basis sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BabfSummary {
    /// Working grid.
    pub tau: Vec<f64>,
    pub knots: Vec<f64>,
    /// Signal estimates on each curve's own grid.
    #[serde(rename = "Zt")]
    pub zt: Rows,
    #[serde(rename = "Zt_CL")]
    pub zt_cl: Rows,
    #[serde(rename = "Zt_UL")]
    pub zt_ul: Rows,
    #[serde(rename = "Z_cgrid")]
    pub z_cgrid: Rows,
    #[serde(rename = "Z_cgrid_CL")]
    pub z_cgrid_cl: Rows,
    #[serde(rename = "Z_cgrid_UL")]
    pub z_cgrid_ul: Rows,
    pub mu_cgrid: Vec<f64>,
    #[serde(rename = "mu_cgrid_CI")]
    pub mu_cgrid_ci: Rows,
    #[serde(rename = "Sigma_cgrid")]
    pub sigma_cgrid: Rows,
    /// Absent when the evaluation grid is too large to keep covariance draws.
    #[serde(rename = "Sigma_cgrid_CL", default, skip_serializing_if = "Option::is_none")]
    pub sigma_cgrid_cl: Option<Rows>,
    #[serde(rename = "Sigma_cgrid_UL", default, skip_serializing_if = "Option::is_none")]
    pub sigma_cgrid_ul: Option<Rows>,
    #[serde(rename = "Zeta")]
    pub zeta: Rows,
    #[serde(rename = "Zeta_CL")]
    pub zeta_cl: Rows,
    #[serde(rename = "Zeta_UL")]
    pub zeta_ul: Rows,
    pub mu_zeta: Vec<f64>,
    #[serde(rename = "mu_zeta_CI")]
    pub mu_zeta_ci: Rows,
    #[serde(rename = "Sigma_zeta")]
    pub sigma_zeta: Rows,
    #[serde(rename = "Sigma_zeta_CL")]
    pub sigma_zeta_cl: Rows,
    #[serde(rename = "Sigma_zeta_UL")]
    pub sigma_zeta_ul: Rows,
    #[serde(rename = "Sigma_zeta_SE")]
    pub sigma_zeta_se: Rows,
    /// Basis evaluated at the working grid.
    #[serde(rename = "Btau")]
    pub btau: Rows,
    /// Basis evaluated at each curve's grid.
    #[serde(rename = "BT")]
    pub bt: Vec<Rows>,
    #[serde(rename = "Sigma_tau")]
    pub sigma_tau: Rows,
    pub mu_tau: Vec<f64>,
}

/// Posterior means and 95% pointwise credible bands. For the basis sampler
/// `grid` is the evaluation grid and `Z`, `mu`, `Sigma` repeat the
/// `*_cgrid` fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothResult {
    pub method: Method,
    pub grid: Vec<f64>,
    #[serde(rename = "Z")]
    pub z: Rows,
    #[serde(rename = "Z_CL")]
    pub z_cl: Rows,
    #[serde(rename = "Z_UL")]
    pub z_ul: Rows,
    pub mu: Vec<f64>,
    /// Lower and upper band rows.
    #[serde(rename = "mu_CI")]
    pub mu_ci: Rows,
    #[serde(rename = "Sigma")]
    pub sigma: Rows,
    #[serde(rename = "Sigma_CL", default, skip_serializing_if = "Option::is_none")]
    pub sigma_cl: Option<Rows>,
    #[serde(rename = "Sigma_UL", default, skip_serializing_if = "Option::is_none")]
    pub sigma_ul: Option<Rows>,
    /// Sample covariance of the smoothed signals.
    #[serde(rename = "Sigma_SE")]
    pub sigma_se: Rows,
    /// Noise precision.
    pub rn: f64,
    #[serde(rename = "rn_CI")]
    pub rn_ci: [f64; 2],
    /// Covariance scale.
    pub rs: f64,
    #[serde(rename = "rs_CI")]
    pub rs_ci: [f64; 2],
    pub rho: Option<f64>,
    pub nu: Option<f64>,
    pub pmin_vec: Vec<f64>,
    pub interpretation: Vec<FitEvidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psrf: Option<Vec<NamedSummary>>,
    pub chains: usize,
    pub retained: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub babf: Option<BabfSummary>,
}

impl SmoothResult {
    pub fn z_matrix(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.z)
    }

    pub fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.sigma)
    }

    /// Posterior mean and band of every signal at that curve's own
    /// observation points.
    pub fn observed_signals(&self, data: &FunctionalDataset) -> Result<Vec<CurveBand>> {
        if self.z.len() != data.n() {
            return Err(Error::shape(format!(
                "results hold {} curves, dataset has {}",
                self.z.len(),
                data.n()
            )));
        }
        if let Some(b) = &self.babf {
            return (0..data.n())
                .map(|i| {
                    if b.zt[i].len() != data.curves[i].len() {
                        return Err(Error::shape(format!("curve {i} differs from the smoothed data")));
                    }
                    Ok(CurveBand { estimate: b.zt[i].clone(), lower: b.zt_cl[i].clone(), upper: b.zt_ul[i].clone() })
                })
                .collect();
        }
        if self.grid != data.pooled {
            return Err(Error::shape("results grid differs from the dataset's pooled grid"));
        }
        Ok(data
            .selection_map()
            .iter()
            .enumerate()
            .map(|(i, idx)| {
                let pick = |rows: &Rows| idx.iter().map(|&j| rows[i][j]).collect();
                CurveBand { estimate: pick(&self.z), lower: pick(&self.z_cl), upper: pick(&self.z_ul) }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveBand {
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Draw-level output that goes to the binary sidecars.
#[derive(Clone, Debug, Default)]
pub struct RunDraws {
    pub monitor_names: Vec<String>,
    /// `[chain][scalar][draw]`
    pub traces: Vec<Vec<Vec<f64>>>,
    pub residuals: ResidualDraws,
}

/// Sample covariance (divisor `n - 1`) of the rows of `m`.
pub fn row_covariance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = c.transpose() * &c;
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    crate::stochastic::symmetrize(&mut cov);
    cov
}

/// Reads a `rows x cols` column-major block out of a flat record.
pub fn block(record: &[f64], offset: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, &record[offset..offset + rows * cols])
}
