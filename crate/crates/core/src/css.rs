//! Natural cubic smoothing splines in the `csaps` weighting convention,
//! fitted with the banded Reinsch algorithm, plus GCV selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted natural cubic spline, stored as values and second derivatives
/// at the knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineFit {
    pub knots: Vec<f64>,
    /// Fitted values at the knots.
    pub values: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    pub second: Vec<f64>,
    pub lambda: f64,
    pub rss: f64,
    /// Trace of the smoother matrix.
    pub trace: f64,
    pub gcv: f64,
}

/// Candidate weights `min, min + step, ...` up to `max` (inclusive).
pub fn gcv_candidates(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(min <= max) {
        return Err(Error::param(format!(
            "lambda grid needs step > 0 and min <= max, got ({min}, {max}, {step})"
        )));
    }
    let k = ((max - min) / step + 1e-9).floor() as usize;
    let c: Vec<f64> = (0..=k).map(|i| min + step * i as f64).collect();
    if c.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
        return Err(Error::param(format!("lambda candidates must lie in (0, 1], got {c:?}")));
    }
    Ok(c)
}

/// The interpolation-like weight `1 / (1 + h^3 / 6)` with `h` the mean
/// spacing of `grid`.
pub fn interpolation_weight(grid: &[f64]) -> f64 {
    if grid.len() < 2 {
        return 1.0;
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    1.0 / (1.0 + h.powi(3) / 6.0)
}

fn check_inputs(grid: &[f64], values: &[f64]) -> Result<()> {
    if grid.len() != values.len() {
        return Err(Error::shape(format!(
            "{} grid points but {} values",
            grid.len(),
            values.len()
        )));
    }
    if grid.len() < 4 {
        return Err(Error::param(format!(
            "a smoothing spline needs at least 4 points, got {}",
            grid.len()
        )));
    }
    if grid.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::param("non-finite input to smoothing spline"));
    }
    if let Some(i) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::param(format!(
            "smoothing spline abscissae must be strictly increasing (positions {i} and {})",
            i + 1
        )));
    }
    Ok(())
}

/// Symmetric pentadiagonal matrix: `d0` main diagonal, `d1` first and `d2`
/// second super-diagonals.
struct Penta {
    d0: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

/// `L D L^T` factor of a `Penta` with unit lower `L` (`l1`, `l2` are its
/// first and second sub-diagonals).
struct PentaLdl {
    d: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl Penta {
    fn ldl(&self) -> Result<PentaLdl> {
        let m = self.d0.len();
        let mut d = vec![0.0; m];
        let mut l1 = vec![0.0; m.saturating_sub(1)];
        let mut l2 = vec![0.0; m.saturating_sub(2)];
        for i in 0..m {
            let mut di = self.d0[i];
            if i >= 1 {
                di -= l1[i - 1] * l1[i - 1] * d[i - 1];
            }
            if i >= 2 {
                di -= l2[i - 2] * l2[i - 2] * d[i - 2];
            }
            if !(di > 0.0) {
                return Err(Error::Conditioning("smoothing-spline system is not positive definite".into()));
            }
            d[i] = di;
            if i + 1 < m {
                let mut v = self.d1[i];
                if i >= 1 {
                    v -= l1[i - 1] * l2[i - 1] * d[i - 1];
                }
                l1[i] = v / di;
            }
            if i + 2 < m {
                l2[i] = self.d2[i] / di;
            }
        }
        Ok(PentaLdl { d, l1, l2 })
    }
}

impl PentaLdl {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = self.d.len();
        let mut z = b.to_vec();
        for i in 0..m {
            if i >= 1 {
                z[i] -= self.l1[i - 1] * z[i - 1];
            }
            if i >= 2 {
                z[i] -= self.l2[i - 2] * z[i - 2];
            }
        }
        for i in 0..m {
            z[i] /= self.d[i];
        }
        for i in (0..m).rev() {
            if i + 1 < m {
                z[i] -= self.l1[i] * z[i + 1];
            }
            if i + 2 < m {
                z[i] -= self.l2[i] * z[i + 2];
            }
        }
        z
    }

    /// Band (width 2) of the inverse, by the backward recursion
    /// `S = D^{-1} L^{-1} + (I - L^T) S`.
    fn inverse_band(&self) -> Penta {
        let m = self.d.len();
        let mut s0 = vec![0.0; m];
        let mut s1 = vec![0.0; m.saturating_sub(1)];
        let mut s2 = vec![0.0; m.saturating_sub(2)];
        for i in (0..m).rev() {
            let a = if i + 1 < m { self.l1[i] } else { 0.0 };
            let b = if i + 2 < m { self.l2[i] } else { 0.0 };
            if i + 2 < m {
                s2[i] = -a * s1[i + 1] - b * s0[i + 2];
            }
            if i + 1 < m {
                let s21 = if i + 2 < m { s1[i + 1] } else { 0.0 };
                s1[i] = -a * s0[i + 1] - b * s21;
            }
            let t1 = if i + 1 < m { s1[i] } else { 0.0 };
            let t2 = if i + 2 < m { s2[i] } else { 0.0 };
            s0[i] = 1.0 / self.d[i] - a * t1 - b * t2;
        }
        Penta { d0: s0, d1: s1, d2: s2 }
    }
}

/// Reinsch matrices for the knot spacings `h`: `Q^T y` (as a closure),
/// `R`, and `Q^T Q`.
struct Reinsch {
    h: Vec<f64>,
    r: Penta,
    qtq: Penta,
}

impl Reinsch {
    fn new(grid: &[f64]) -> Self {
        let n = grid.len();
        let h: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
        let m = n - 2;
        let mut r = Penta { d0: vec![0.0; m], d1: vec![0.0; m - 1], d2: vec![0.0; m.saturating_sub(2)] };
        for j in 0..m {
            r.d0[j] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < m {
                r.d1[j] = h[j + 1] / 6.0;
            }
        }
        // Column j of Q has entries (1/h_j, -1/h_j - 1/h_{j+1}, 1/h_{j+1})
        // in rows j, j+1, j+2.
        let col = |j: usize| [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]];
        let mut qtq = Penta { d0: vec![0.0; m], d1: vec![0.0; m - 1], d2: vec![0.0; m.saturating_sub(2)] };
        for j in 0..m {
            let a = col(j);
            qtq.d0[j] = a.iter().map(|v| v * v).sum();
            if j + 1 < m {
                let b = col(j + 1);
                qtq.d1[j] = a[1] * b[0] + a[2] * b[1];
            }
            if j + 2 < m {
                let c = col(j + 2);
                qtq.d2[j] = a[2] * c[0];
            }
        }
        Reinsch { h, r, qtq }
    }

    fn qt(&self, y: &[f64]) -> Vec<f64> {
        let h = &self.h;
        (0..y.len() - 2)
            .map(|j| (y[j + 2] - y[j + 1]) / h[j + 1] - (y[j + 1] - y[j]) / h[j])
            .collect()
    }

    /// `Q gamma` for interior second derivatives `gamma`.
    fn q(&self, gamma: &[f64]) -> Vec<f64> {
        let n = gamma.len() + 2;
        let h = &self.h;
        let mut out = vec![0.0; n];
        for (j, g) in gamma.iter().enumerate() {
            out[j] += g / h[j];
            out[j + 1] += g * (-1.0 / h[j] - 1.0 / h[j + 1]);
            out[j + 2] += g / h[j + 1];
        }
        out
    }

    fn system(&self, alpha: f64) -> Penta {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect();
        Penta {
            d0: add(&self.r.d0, &self.qtq.d0),
            d1: add(&self.r.d1, &self.qtq.d1),
            d2: add(&self.r.d2, &self.qtq.d2),
        }
    }
}

fn fit_with(reinsch: &Reinsch, grid: &[f64], values: &[f64], lambda: f64) -> Result<SplineFit> {
    let n = grid.len();
    let alpha = (1.0 - lambda) / lambda;
    let ldl = reinsch.system(alpha).ldl()?;
    let gamma = ldl.solve(&reinsch.qt(values));
    let qg = reinsch.q(&gamma);
    let fitted: Vec<f64> = values.iter().zip(&qg).map(|(y, q)| y - alpha * q).collect();
    let rss: f64 = values.iter().zip(&fitted).map(|(y, g)| (y - g).powi(2)).sum();
    let inv = ldl.inverse_band();
    let g = &reinsch.qtq;
    let mut tr = inv.d0.iter().zip(&g.d0).map(|(a, b)| a * b).sum::<f64>();
    tr += 2.0 * inv.d1.iter().zip(&g.d1).map(|(a, b)| a * b).sum::<f64>();
    tr += 2.0 * inv.d2.iter().zip(&g.d2).map(|(a, b)| a * b).sum::<f64>();
    let trace = n as f64 - alpha * tr;
    let denom = n as f64 - trace;
    let gcv = if denom > 1e-10 * n as f64 {
        n as f64 * rss / (denom * denom)
    } else {
        f64::INFINITY
    };
    let mut second = vec![0.0; n];
    second[1..n - 1].copy_from_slice(&gamma);
    Ok(SplineFit {
        knots: grid.to_vec(),
        values: fitted,
        second,
        lambda,
        rss,
        trace,
        gcv,
    })
}

/// Fits the natural cubic spline minimising
/// `lambda * sum (y_i - f(t_i))^2 + (1 - lambda) * int f''^2`.
pub fn css_fit(grid: &[f64], values: &[f64], lambda: f64) -> Result<SplineFit> {
    check_inputs(grid, values)?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::param(format!("smoothing weight must lie in (0, 1], got {lambda}")));
    }
    fit_with(&Reinsch::new(grid), grid, values, lambda)
}

/// Fits every candidate weight and keeps the GCV minimiser (ties go to the
/// smaller weight).
pub fn css_gcv(grid: &[f64], values: &[f64], candidates: &[f64]) -> Result<(SplineFit, f64)> {
    check_inputs(grid, values)?;
    if candidates.is_empty() {
        return Err(Error::param("no smoothing-weight candidates"));
    }
    if let Some(l) = candidates.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
        return Err(Error::param(format!("smoothing weight must lie in (0, 1], got {l}")));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let reinsch = Reinsch::new(grid);
    let mut best: Option<SplineFit> = None;
    for &l in &sorted {
        let fit = fit_with(&reinsch, grid, values, l)?;
        if best.as_ref().is_none_or(|b| fit.gcv < b.gcv) {
            best = Some(fit);
        }
    }
    let best = best.expect("non-empty candidates");
    let l = best.lambda;
    Ok((best, l))
}

/// Evaluates the spline; beyond the end knots it continues linearly.
pub fn css_eval(fit: &SplineFit, at: &[f64]) -> Vec<f64> {
    at.iter().map(|&t| eval_one(fit, t)).collect()
}

fn eval_one(fit: &SplineFit, t: f64) -> f64 {
    let x = &fit.knots;
    let g = &fit.values;
    let c = &fit.second;
    let n = x.len();
    if t <= x[0] {
        let h = x[1] - x[0];
        let slope = (g[1] - g[0]) / h - h * (2.0 * c[0] + c[1]) / 6.0;
        return g[0] + (t - x[0]) * slope;
    }
    if t >= x[n - 1] {
        let h = x[n - 1] - x[n - 2];
        let slope = (g[n - 1] - g[n - 2]) / h + h * (2.0 * c[n - 1] + c[n - 2]) / 6.0;
        return g[n - 1] + (t - x[n - 1]) * slope;
    }
    let i = match x.binary_search_by(|v| v.partial_cmp(&t).expect("finite")) {
        Ok(i) => return g[i],
        Err(i) => i - 1,
    };
    let h = x[i + 1] - x[i];
    let a = t - x[i];
    let b = x[i + 1] - t;
    (a * g[i + 1] + b * g[i]) / h - a * b / 6.0 * ((1.0 + a / h) * c[i + 1] + (1.0 + b / h) * c[i])
}

/// GCV-smooths `values` and evaluates the spline on `at`.
pub fn css_smooth_to(grid: &[f64], values: &[f64], candidates: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    let (fit, _) = css_gcv(grid, values, candidates)?;
    Ok(css_eval(&fit, at))
}
