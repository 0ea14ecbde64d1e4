//! Smoothing run configuration. Field names follow the option names of the
//! original toolbox so existing scripts translate directly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::babf::BabfConfig;
use crate::css::gcv_candidates;
use crate::datagen::{linspace, FunctionalDataset};
use crate::empirical::PriorSettings;
use crate::error::{Error, Result};
use crate::mcmc::McmcSettings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothMethod {
    Bhm,
    Babf,
    /// Parsed so the user gets an explicit message, never run.
    Bgp,
    Bfpca,
}

impl FromStr for SmoothMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bhm" => Ok(SmoothMethod::Bhm),
            "babf" => Ok(SmoothMethod::Babf),
            "bgp" => Ok(SmoothMethod::Bgp),
            "bfpca" => Ok(SmoothMethod::Bfpca),
            other => Err(Error::param(format!("unknown smethod '{other}' (expected bhm or babf)"))),
        }
    }
}

impl fmt::Display for SmoothMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SmoothMethod::Bhm => "bhm",
            SmoothMethod::Babf => "babf",
            SmoothMethod::Bgp => "bgp",
            SmoothMethod::Bfpca => "bfpca",
        };
        f.write_str(s)
    }
}

/// A grid given either as `a:b:n` (n equally spaced points) or as a comma
/// separated list of strictly increasing values.
#[derive(Clone, Debug, PartialEq)]
pub enum GridSpec {
    Linspace { a: f64, b: f64, n: usize },
    Points(Vec<f64>),
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::Linspace { a, b, n } => linspace(*a, *b, *n),
            GridSpec::Points(p) => p.clone(),
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::param(format!("'{}' is not a number", s.trim())))?;
    if !v.is_finite() {
        return Err(Error::param(format!("grid value '{}' is not finite", s.trim())));
    }
    Ok(v)
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::param("empty grid"));
        }
        let spec = if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::param(format!("grid '{s}': expected a:b:n")));
            }
            let a = parse_f64(parts[0])?;
            let b = parse_f64(parts[1])?;
            let n: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("grid '{s}': point count is not an integer")))?;
            if n < 2 || !(a < b) {
                return Err(Error::param(format!("grid '{s}': need a < b and n >= 2")));
            }
            if n > 1_000_000 {
                return Err(Error::param(format!("grid '{s}': too many points")));
            }
            GridSpec::Linspace { a, b, n }
        } else {
            let pts = s.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?;
            if let Some(j) = pts.windows(2).position(|w| !(w[1] > w[0])) {
                return Err(Error::param(format!("grid is not strictly increasing at position {}", j + 1)));
            }
            GridSpec::Points(pts)
        };
        Ok(spec)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Linspace { a, b, n } => write!(f, "{a}:{b}:{n}"),
            GridSpec::Points(p) => {
                let s: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                f.write_str(&s.join(","))
            }
        }
    }
}

impl Serialize for GridSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub smethod: SmoothMethod,
    /// The curves share one grid.
    pub cgrid: bool,
    /// Matérn prior covariance structure.
    pub mat: bool,
    pub M: usize,
    pub Burnin: usize,
    pub w: f64,
    pub ws: f64,
    pub c: f64,
    pub delta: f64,
    pub nu: Option<f64>,
    pub rho: Option<f64>,
    /// Working-grid length.
    #[serde(rename = "m", alias = "L")]
    pub l: usize,
    pub tau: Option<GridSpec>,
    pub eval_grid: Option<GridSpec>,
    pub resid_thin: usize,
    pub lamb_min: f64,
    pub lamb_max: f64,
    pub lamb_step: f64,
    pub chains: usize,
    pub seed: u64,
    /// Principal-component fitting of the covariance; not supported.
    pub pace: bool,
    pub draw_thin: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            smethod: SmoothMethod::Babf,
            cgrid: true,
            mat: true,
            M: 10_000,
            Burnin: 2_000,
            w: 1.0,
            ws: 0.1,
            c: 1.0,
            delta: 5.0,
            nu: None,
            rho: None,
            l: 20,
            tau: None,
            eval_grid: None,
            resid_thin: 10,
            lamb_min: 0.9,
            lamb_max: 0.99,
            lamb_step: 0.01,
            chains: 1,
            seed: 1,
            pace: false,
            draw_thin: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match self.smethod {
            SmoothMethod::Bgp | SmoothMethod::Bfpca => {
                return Err(Error::Unsupported(format!("smethod '{}'", self.smethod)));
            }
            SmoothMethod::Bhm | SmoothMethod::Babf => {}
        }
        if self.pace {
            return Err(Error::Unsupported("pace = 1".into()));
        }
        self.prior().validate()?;
        self.mcmc().validate()?;
        self.candidates()?;
        if self.l < 4 {
            return Err(Error::param(format!("m (working-grid length) must be at least 4, got {}", self.l)));
        }
        for (name, v) in [("nu", self.nu), ("rho", self.rho)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::param(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Checks the grid flag against the data.
    pub fn check_dataset(&self, data: &FunctionalDataset) -> Result<()> {
        if self.cgrid && !data.is_common_grid() {
            return Err(Error::param(
                "cgrid = 1 but the curves are observed on different grids; set cgrid to 0",
            ));
        }
        if self.smethod == SmoothMethod::Bhm && self.eval_grid.is_some() {
            log::warn!("eval_grid is ignored by bhm; results are on the pooled grid");
        }
        Ok(())
    }

    pub fn prior(&self) -> PriorSettings {
        PriorSettings {
            mat: self.mat,
            w: self.w,
            ws: self.ws,
            delta: self.delta,
            c: self.c,
            nu: self.nu,
            rho: self.rho,
        }
    }

    pub fn mcmc(&self) -> McmcSettings {
        McmcSettings {
            iterations: self.M,
            burnin: self.Burnin,
            chains: self.chains,
            seed: self.seed,
            resid_thin: self.resid_thin,
            draw_thin: self.draw_thin,
        }
    }

    pub fn babf(&self) -> BabfConfig {
        BabfConfig {
            l: self.l,
            tau: self.tau.as_ref().map(GridSpec::points),
            eval_grid: self.eval_grid.as_ref().map(GridSpec::points),
        }
    }

    /// Smoothing-parameter candidates for the spline pre-smoother.
    pub fn candidates(&self) -> Result<Vec<f64>> {
        gcv_candidates(self.lamb_min, self.lamb_max, self.lamb_step)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_toolbox() {
        let c = RunConfig::default();
        assert_eq!((c.M, c.Burnin, c.resid_thin, c.l), (10_000, 2_000, 10, 20));
        assert!(c.cgrid && c.mat && !c.pace);
        assert_eq!((c.delta, c.c, c.w, c.ws), (5.0, 1.0, 1.0, 0.1));
        assert_eq!((c.lamb_min, c.lamb_max, c.lamb_step), (0.9, 0.99, 0.01));
        c.validate().unwrap();
    }

    #[test]
    fn out_of_scope_methods_are_unsupported() {
        for m in [SmoothMethod::Bgp, SmoothMethod::Bfpca] {
            let c = RunConfig { smethod: m, ..Default::default() };
            assert_eq!(c.validate().unwrap_err().exit_code(), 4);
        }
        let c = RunConfig { pace: true, ..Default::default() };
        assert_eq!(c.validate().unwrap_err().exit_code(), 4);
    }

    #[test]
    fn burnin_at_least_m_is_rejected() {
        let c = RunConfig { M: 100, Burnin: 100, ..Default::default() };
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn grid_specs_parse() {
        let g: GridSpec = "0:1:5".parse().unwrap();
        assert_eq!(g.points(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g: GridSpec = "0.1, 0.2,0.7".parse().unwrap();
        assert_eq!(g.points(), vec![0.1, 0.2, 0.7]);
        for bad in ["", "1:0:5", "0:1:1", "0:1", "0.2,0.1", "a,b", "0,inf"] {
            assert!(bad.parse::<GridSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = RunConfig {
            smethod: SmoothMethod::Bhm,
            eval_grid: Some(GridSpec::Points(vec![0.1, 1.0 / 3.0, 0.9])),
            nu: Some(2.5),
            seed: u64::MAX,
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        let partial = RunConfig::from_json(r#"{"smethod":"bhm","M":500}"#).unwrap();
        assert_eq!((partial.M, partial.Burnin), (500, 2_000));
        assert!(RunConfig::from_json(r#"{"smethod":"bhm","iters":5}"#).is_err());
    }
}
