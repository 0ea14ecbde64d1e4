//! Cubic B-spline bases, working-grid selection and the collocation
//! transforms between function values on the working grid and coefficients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::pseudo_inverse;

pub const CUBIC: usize = 4;
/// Largest collocation condition number accepted by [`build_basis`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSource {
    Percentile,
    EquallySpaced,
    User,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkingGrid {
    pub tau: Vec<f64>,
    pub source: GridSource,
}

impl WorkingGrid {
    pub fn user(tau: Vec<f64>) -> Result<Self> {
        if tau.len() < CUBIC {
            return Err(Error::param(format!("working grid needs at least {CUBIC} points")));
        }
        if tau.iter().any(|t| !t.is_finite()) || tau.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("working grid must be finite and strictly increasing"));
        }
        Ok(WorkingGrid { tau, source: GridSource::User })
    }
}

/// Linear-interpolation quantile with plotting position `q (N + 1)`, so the
/// `k / (N + 1)` quantile of `N` sorted points is the `k`-th point.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = q * (n + 1) as f64;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

/// The `k / (L + 1)` quantiles (`k = 1..L`) of the pooled grid, or equally
/// spaced interior points if the quantiles collapse.
pub fn select_working_grid(pooled: &[f64], l: usize) -> Result<WorkingGrid> {
    if l < CUBIC {
        return Err(Error::param(format!(
            "working grid length {l} is below {CUBIC}; a cubic basis needs at least {CUBIC} functions"
        )));
    }
    if pooled.len() < l {
        return Err(Error::param(format!(
            "working grid length {l} exceeds the {} pooled grid points",
            pooled.len()
        )));
    }
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    let mut tau: Vec<f64> = (1..=l).map(|k| quantile(&sorted, k as f64 / (l + 1) as f64)).collect();
    tau.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    if tau.len() == l {
        return Ok(WorkingGrid { tau, source: GridSource::Percentile });
    }
    let (a, b) = (sorted[0], sorted[sorted.len() - 1]);
    if !(b > a) {
        return Err(Error::param("pooled grid has zero range"));
    }
    let h = (b - a) / (l + 1) as f64;
    Ok(WorkingGrid {
        tau: (1..=l).map(|k| a + h * k as f64).collect(),
        source: GridSource::EquallySpaced,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub order: usize,
    /// Full knot sequence including the repeated boundary knots.
    pub knots: Vec<f64>,
    pub k: usize,
    pub domain: (f64, f64),
}

impl BSplineBasis {
    /// A basis from an explicit interior knot list.
    pub fn from_interior(domain: (f64, f64), interior: &[f64], order: usize) -> Result<Self> {
        let (a, b) = domain;
        if !(a < b) {
            return Err(Error::param(format!("basis domain ({a}, {b}) is empty")));
        }
        if order < 1 {
            return Err(Error::param("spline order must be at least 1"));
        }
        if interior.iter().any(|t| !(*t > a && *t < b)) || interior.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("interior knots must be nondecreasing and strictly inside the domain"));
        }
        let mut knots = vec![a; order];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(b, order));
        let k = knots.len() - order;
        Ok(BSplineBasis { order, knots, k, domain })
    }

    /// `nbasis` cubic B-splines with equally spaced interior knots.
    pub fn uniform(domain: (f64, f64), nbasis: usize) -> Result<Self> {
        if nbasis < CUBIC {
            return Err(Error::param(format!("need at least {CUBIC} cubic basis functions, got {nbasis}")));
        }
        let (a, b) = domain;
        let m = nbasis - CUBIC;
        let interior: Vec<f64> = (1..=m).map(|j| a + (b - a) * j as f64 / (m + 1) as f64).collect();
        Self::from_interior(domain, &interior, CUBIC)
    }

    /// Knot-span index `mu` with `knots[mu] <= t < knots[mu + 1]`; points
    /// at or beyond the right end use the last nonempty span.
    fn span(&self, t: f64) -> usize {
        let last = self.k - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        let mut lo = self.order - 1;
        let mut hi = last;
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.knots[mid] <= t {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    fn clamp(&self, t: f64) -> f64 {
        let (a, b) = self.domain;
        if t < a || t > b {
            let tol = 1e-10 * (b - a);
            if t < a - tol || t > b + tol {
                log::warn!("basis evaluated at {t} outside its domain ({a}, {b}); clamping");
            }
            t.clamp(a, b)
        } else {
            t
        }
    }

    /// Values of the `m` nonzero order-`m` B-splines at `t` in span `mu`
    /// for every `m = 1..=order` (de Boor's recurrence).
    fn all_orders(&self, mu: usize, t: f64) -> Vec<Vec<f64>> {
        let k = self.order;
        let kn = &self.knots;
        let mut out = Vec::with_capacity(k);
        let mut b = vec![1.0];
        out.push(b.clone());
        for j in 1..k {
            let mut next = vec![0.0; j + 1];
            let mut saved = 0.0;
            for i in 0..j {
                let right = kn[mu + i + 1] - t;
                let left = t - kn[mu + i + 1 - j];
                let denom = right + left;
                let term = if denom != 0.0 { b[i] / denom } else { 0.0 };
                next[i] = saved + right * term;
                saved = left * term;
            }
            next[j] = saved;
            b = next;
            out.push(b.clone());
        }
        out
    }

    /// `deriv`-th derivative of the nonzero basis functions at `t`, returned
    /// with the index of the first of them.
    pub fn local(&self, t: f64, deriv: usize) -> (usize, Vec<f64>) {
        let k = self.order;
        let t = self.clamp(t);
        let mu = self.span(t);
        let first = mu + 1 - k;
        if deriv >= k {
            return (first, vec![0.0; k]);
        }
        let orders = self.all_orders(mu, t);
        // w holds derivatives of the order-m splines with indices
        // mu-m+1..=mu, padded to length k (index offset from `first`).
        let m0 = k - deriv;
        let mut w = vec![0.0; k];
        for (i, v) in orders[m0 - 1].iter().enumerate() {
            w[k - m0 + i] = *v;
        }
        let kn = &self.knots;
        for m in (m0 + 1)..=k {
            let mut next = vec![0.0; k];
            for off in (k - m)..k {
                let i = first + off;
                let mut v = 0.0;
                let d1 = kn[i + m - 1] - kn[i];
                if d1 > 0.0 {
                    v += w[off] / d1;
                }
                if off + 1 < k {
                    let d2 = kn[i + m] - kn[i + 1];
                    if d2 > 0.0 {
                        v -= w[off + 1] / d2;
                    }
                }
                next[off] = (m - 1) as f64 * v;
            }
            w = next;
        }
        (first, w)
    }

    /// `len(at) x K` matrix of basis values.
    pub fn eval(&self, at: &[f64]) -> DMatrix<f64> {
        self.eval_deriv(at, 0)
    }

    pub fn eval_deriv(&self, at: &[f64], deriv: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(at.len(), self.k);
        for (r, &t) in at.iter().enumerate() {
            let (first, vals) = self.local(t, deriv);
            for (j, v) in vals.into_iter().enumerate() {
                m[(r, first + j)] = v;
            }
        }
        m
    }

    /// Gram matrix of the `deriv`-th derivatives, exact for polynomial
    /// integrands via Gauss–Legendre on each knot interval.
    pub fn penalty(&self, deriv: usize) -> DMatrix<f64> {
        const NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
        const WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
        let mut g = DMatrix::zeros(self.k, self.k);
        for w in self.knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !(b > a) {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, wt) in NODES.iter().zip(WEIGHTS) {
                let t = mid + half * x;
                let (first, vals) = self.local(t, deriv);
                for (i, vi) in vals.iter().enumerate() {
                    for (j, vj) in vals.iter().enumerate() {
                        g[(first + i, first + j)] += half * wt * vi * vj;
                    }
                }
            }
        }
        g
    }
}

/// Cubic basis with `K = L` functions interpolating at the working grid:
/// interior knots are averages of three consecutive working-grid points and
/// the boundary knots sit at the domain ends.
pub fn build_basis(tau: &WorkingGrid, domain: (f64, f64)) -> Result<BSplineBasis> {
    let t = &tau.tau;
    let l = t.len();
    if l < CUBIC {
        return Err(Error::param(format!("working grid needs at least {CUBIC} points")));
    }
    let (a, b) = domain;
    if t[0] < a || t[l - 1] > b {
        return Err(Error::param(format!(
            "working grid [{}, {}] leaves the domain ({a}, {b})",
            t[0],
            t[l - 1]
        )));
    }
    let interior: Vec<f64> = (0..l - CUBIC)
        .map(|j| (t[j + 1] + t[j + 2] + t[j + 3]) / 3.0)
        .collect();
    let basis = BSplineBasis::from_interior(domain, &interior, CUBIC)?;
    check_schoenberg_whitney(&basis, t)?;
    let coll = basis.eval(t);
    let cond = condition_number(&coll);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Conditioning(format!(
            "collocation matrix condition number {cond:e} exceeds {MAX_CONDITION:e}; use a smaller working grid"
        )));
    }
    Ok(basis)
}

/// Every basis function must be positive at its interpolation point.
pub fn check_schoenberg_whitney(basis: &BSplineBasis, tau: &[f64]) -> Result<()> {
    if tau.len() != basis.k {
        return Err(Error::shape(format!("{} points for {} basis functions", tau.len(), basis.k)));
    }
    let kn = &basis.knots;
    let k = basis.order;
    let (a, b) = basis.domain;
    for (j, &t) in tau.iter().enumerate() {
        let lo = kn[j];
        let hi = kn[j + k];
        let ok = (t > lo || (t == lo && lo == a)) && (t < hi || (t == hi && hi == b));
        if !ok {
            return Err(Error::Conditioning(format!(
                "Schoenberg-Whitney condition fails at working-grid point {j} ({t} not in ({lo}, {hi}))"
            )));
        }
    }
    Ok(())
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().singular_values();
    let max = s.max();
    let min = s.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// The collocation matrix `B(tau)` and its inverse (a pseudo-inverse when
/// the collocation is numerically singular).
pub fn coeff_transform(basis: &BSplineBasis, tau: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let forward = basis.eval(tau);
    if forward.nrows() != forward.ncols() {
        return Ok((forward.clone(), pseudo_inverse(&forward, 1e-12)));
    }
    let cond = condition_number(&forward);
    if cond.is_finite() && cond < 1e12 {
        if let Some(inv) = forward.clone().lu().try_inverse() {
            return Ok((forward, inv));
        }
    }
    log::warn!("collocation matrix is singular (condition {cond:e}); using the pseudo-inverse");
    let inv = pseudo_inverse(&forward, 1e-12);
    Ok((forward, inv))
}
