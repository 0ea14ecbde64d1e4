//! Matérn correlation, stationary and nonstationary covariance matrices, and
//! a grid-search fit of Matérn parameters to an empirical covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::stochastic::SpdMatrix;

/// Matérn scale `rho` (grid units) and smoothness `nu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub rho: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(rho: f64, nu: f64) -> Result<Self> {
        let p = MaternParams { rho, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() || !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::param(format!(
                "Matérn parameters must be positive and finite, got rho={} nu={}",
                self.rho, self.nu
            )));
        }
        Ok(())
    }
}

/// Prior covariance structure `A(., .)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovarianceModel {
    StationaryMatern { s2: f64, params: MaternParams },
    NonstationaryTransformed { s2: f64, params: MaternParams },
    /// A matrix estimated on a fixed grid; it can only be evaluated there.
    Empirical { grid: Vec<f64>, base: DMatrix<f64> },
}

impl CovarianceModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CovarianceModel::StationaryMatern { .. } => "stationary-matern",
            CovarianceModel::NonstationaryTransformed { .. } => "nonstationary-transformed",
            CovarianceModel::Empirical { .. } => "empirical",
        }
    }

    pub fn matern(&self) -> Option<MaternParams> {
        match self {
            CovarianceModel::StationaryMatern { params, .. }
            | CovarianceModel::NonstationaryTransformed { params, .. } => Some(*params),
            CovarianceModel::Empirical { .. } => None,
        }
    }

    /// The model evaluated on `grid`.
    pub fn matrix(&self, grid: &[f64]) -> Result<SpdMatrix> {
        match self {
            CovarianceModel::StationaryMatern { s2, params } => stationary_cov(grid, *s2, params),
            CovarianceModel::NonstationaryTransformed { s2, params } => nonstationary_cov(grid, *s2, params),
            CovarianceModel::Empirical { grid: g, base } => {
                let same = g.len() == grid.len()
                    && g.iter().zip(grid).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                if !same {
                    return Err(Error::param(
                        "an empirical covariance can only be evaluated on the grid it was estimated on",
                    ));
                }
                SpdMatrix::new(base.clone())
            }
        }
    }
}

/// Coefficients of the Taylor series `1/Gamma(z) = sum_k C[k-1] z^k`.
const RECIP_GAMMA: [f64; 30] = [
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
    1.186_692_254_751_600_332_6e-18,
    1.412_380_655_318_031_781_6e-18,
    -2.298_745_684_435_370_206_6e-19,
    1.714_406_321_927_337_433_4e-20,
];

/// Returns `(gam1, gam2)` for `|mu| <= 1/2` where
/// `gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu)` and
/// `gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64) {
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    // Horner over the even / odd coefficients separately, highest first.
    for k in (1..=RECIP_GAMMA.len()).rev() {
        let c = RECIP_GAMMA[k - 1];
        if k % 2 == 0 {
            gam1 = gam1 * mu * mu - c;
        } else {
            gam2 = gam2 * mu * mu + c;
        }
    }
    (gam1, gam2)
}

/// Modified Bessel function of the second kind `K_nu(x)` for `nu >= 0`,
/// `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const MAXIT: usize = 10_000;
    assert!(nu >= 0.0 && x > 0.0, "bessel_k needs nu >= 0 and x > 0");
    let nl = (nu + 0.5).floor() as usize;
    let xmu = nu - nl as f64;
    let xmu2 = xmu * xmu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;
    let (mut rkmu, mut rk1);
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = std::f64::consts::PI * xmu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = xmu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2) = temme_gammas(xmu);
        let gampl = gam2 - xmu * gam1;
        let gammi = gam2 + xmu * gam1;
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - xmu2);
            c *= dd / fi;
            p /= fi - xmu;
            q /= fi + xmu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        rkmu = sum;
        rk1 = sum1 * xi2;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - xmu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        rkmu = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        rk1 = rkmu * (xmu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (xmu + i as f64) * xi2 * rk1 + rkmu;
        rkmu = rk1;
        rk1 = next;
    }
    rkmu
}

fn half_integer_order(nu: f64) -> Option<u32> {
    let twice = 2.0 * nu;
    let m = (nu - 0.5).round();
    if (twice - twice.round()).abs() < 1e-14 && twice.round() as i64 % 2 == 1 && (0.0..=30.0).contains(&m) {
        Some(m as u32)
    } else {
        None
    }
}

/// Matérn correlation at lag `d`. Half-integer smoothness uses the
/// finite closed form; everything else goes through `K_nu`.
pub fn matern_cor(d: f64, params: &MaternParams) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    match half_integer_order(params.nu) {
        Some(m) => matern_half_integer(d.abs(), params, m),
        None => matern_cor_bessel(d, params),
    }
}

fn matern_half_integer(d: f64, params: &MaternParams, m: u32) -> f64 {
    let x = (2.0 * params.nu).sqrt() * d / params.rho;
    // e^{-x} m!/(2m)! sum_k (m+k)!/(k!(m-k)!) (2x)^{m-k}
    let m = m as usize;
    let mut poly = 0.0;
    // coefficient for k = m is (2m)!/m!; build downward so the leading
    // m!/(2m)! cancels without factorials.
    let mut coef = 1.0; // (m+k)!/(k!(m-k)!) * m!/(2m)! at k = m
    let mut pow = 1.0;
    for k in (0..=m).rev() {
        poly += coef * pow;
        if k > 0 {
            // ratio of term k-1 to term k
            coef *= k as f64 / ((m + k) * (m - k + 1)) as f64;
            pow *= 2.0 * x;
        }
    }
    ((-x).exp() * poly).min(1.0)
}

/// Matérn correlation evaluated through the general Bessel routine, for any
/// smoothness.
pub fn matern_cor_bessel(d: f64, params: &MaternParams) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let nu = params.nu;
    let x = (2.0 * nu).sqrt() * d.abs() / params.rho;
    let k = bessel_k(nu, x);
    if k == 0.0 {
        return 0.0;
    }
    let log_v = nu * x.ln() - ln_gamma(nu) - (nu - 1.0) * std::f64::consts::LN_2 + k.ln();
    let v = log_v.exp();
    if v.is_finite() {
        v.min(1.0)
    } else {
        1.0
    }
}

fn check_increasing(grid: &[f64]) -> Result<()> {
    for (i, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::param(format!(
                "grid must be strictly increasing: points {} and {} are {} and {}",
                i,
                i + 1,
                w[0],
                w[1]
            )));
        }
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::param("grid has non-finite points"));
    }
    Ok(())
}

fn matern_matrix(grid: &[f64], s2: f64, params: &MaternParams) -> DMatrix<f64> {
    let p = grid.len();
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        m[(j, j)] = s2;
        for i in (j + 1)..p {
            let v = s2 * matern_cor((grid[i] - grid[j]).abs(), params);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `s2 * Matern_cor(|t_i - t_j|)` on a strictly increasing grid.
pub fn stationary_cov(grid: &[f64], s2: f64, params: &MaternParams) -> Result<SpdMatrix> {
    params.validate()?;
    if !(s2 > 0.0) {
        return Err(Error::param(format!("signal variance must be positive, got {s2}")));
    }
    check_increasing(grid)?;
    SpdMatrix::new(matern_matrix(grid, s2, params))
}

/// `s2 (t+0.5)(t'+0.5) Matern_cor(|t^{2/3} - t'^{2/3}|)`.
pub fn nonstationary_cov(grid: &[f64], s2: f64, params: &MaternParams) -> Result<SpdMatrix> {
    params.validate()?;
    if !(s2 > 0.0) {
        return Err(Error::param(format!("signal variance must be positive, got {s2}")));
    }
    if let Some((i, t)) = grid.iter().enumerate().find(|(_, t)| **t < 0.0) {
        return Err(Error::param(format!(
            "nonstationary covariance needs a nonnegative grid; point {i} is {t}"
        )));
    }
    check_increasing(grid)?;
    let u = transformed_grid(grid);
    let mut m = matern_matrix(&u, s2, params);
    for j in 0..grid.len() {
        for i in 0..grid.len() {
            m[(i, j)] *= (grid[i] + 0.5) * (grid[j] + 0.5);
        }
    }
    SpdMatrix::new(m)
}

/// `t -> t^{2/3}`, the time change behind the nonstationary model.
pub fn transformed_grid(grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|t| t.powf(2.0 / 3.0)).collect()
}

/// Smoothness values searched by [`fit_matern`].
pub const FIT_NU_GRID: [f64; 5] = [0.5, 1.5, 2.5, 3.5, 4.5];
/// Number of log-spaced scale values searched by [`fit_matern`].
pub const FIT_RHO_POINTS: usize = 50;

/// The log-spaced scale candidates: from the mean grid spacing to the
/// grid range.
pub fn fit_rho_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::param("fitting a Matérn kernel needs at least two grid points"));
    }
    let range = grid[grid.len() - 1] - grid[0];
    let spacing = range / (grid.len() - 1) as f64;
    if !(range > 0.0) {
        return Err(Error::param("grid has zero range"));
    }
    let (lo, hi) = (spacing.ln(), range.ln());
    Ok((0..FIT_RHO_POINTS)
        .map(|k| {
            if FIT_RHO_POINTS == 1 {
                spacing
            } else {
                (lo + (hi - lo) * k as f64 / (FIT_RHO_POINTS - 1) as f64).exp()
            }
        })
        .collect())
}

/// Fits `s2` (mean diagonal) and `(nu, rho)` by least squares between the
/// Matérn correlation and the empirical correlation over all off-diagonal
/// pairs. `rho` is searched on [`fit_rho_grid`] and then refined locally;
/// ties go to the first candidate (smaller `nu`, then smaller `rho`).
pub fn fit_matern(emp_cov: &DMatrix<f64>, grid: &[f64]) -> Result<(f64, MaternParams)> {
    fit_matern_with(emp_cov, grid, None, None)
}

/// [`fit_matern`] with either parameter optionally held fixed.
pub fn fit_matern_with(
    emp_cov: &DMatrix<f64>,
    grid: &[f64],
    fixed_nu: Option<f64>,
    fixed_rho: Option<f64>,
) -> Result<(f64, MaternParams)> {
    let p = grid.len();
    if emp_cov.nrows() != p || emp_cov.ncols() != p {
        return Err(Error::shape(format!(
            "covariance is {}x{} but grid has {} points",
            emp_cov.nrows(),
            emp_cov.ncols(),
            p
        )));
    }
    let diag: Vec<f64> = emp_cov.diagonal().iter().copied().collect();
    if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::param(format!(
            "empirical covariance has a non-positive variance at grid point {i}"
        )));
    }
    let s2 = diag.iter().sum::<f64>() / p as f64;
    let rhos = match fixed_rho {
        Some(r) => vec![MaternParams::new(r, 1.0)?.rho],
        None => fit_rho_grid(grid)?,
    };
    let nus = match fixed_nu {
        Some(v) => vec![MaternParams::new(1.0, v)?.nu],
        None => FIT_NU_GRID.to_vec(),
    };
    let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
    for j in 0..p {
        for i in (j + 1)..p {
            let r = emp_cov[(i, j)] / (diag[i] * diag[j]).sqrt();
            pairs.push(((grid[i] - grid[j]).abs(), r));
        }
    }
    let sse = |params: &MaternParams| -> f64 {
        pairs.iter().map(|(d, r)| (matern_cor(*d, params) - r).powi(2)).sum()
    };
    let mut best = (f64::INFINITY, MaternParams { rho: rhos[0], nu: nus[0] });
    for &nu in &nus {
        let scores: Vec<f64> = rhos.iter().map(|&rho| sse(&MaternParams { rho, nu })).collect();
        let mut k = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s < scores[k] {
                k = i;
            }
        }
        // Golden-section refinement of log(rho) between the neighbouring
        // grid points, so the smoothness comparison is not decided by where
        // the true scale happens to fall on the grid.
        let mut cand = (scores[k], rhos[k]);
        let lo = rhos[k.saturating_sub(1)].ln();
        let hi = rhos[(k + 1).min(rhos.len() - 1)].ln();
        if hi > lo {
            let f = |lr: f64| sse(&MaternParams { rho: lr.exp(), nu });
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let (mut a, mut b) = (lo, hi);
            let mut x1 = b - g * (b - a);
            let mut x2 = a + g * (b - a);
            let (mut f1, mut f2) = (f(x1), f(x2));
            for _ in 0..40 {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - g * (b - a);
                    f1 = f(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + g * (b - a);
                    f2 = f(x2);
                }
            }
            let (fx, x) = if f1 <= f2 { (f1, x1) } else { (f2, x2) };
            if fx < cand.0 {
                cand = (fx, x.exp());
            }
        }
        if cand.0 < best.0 {
            best = (cand.0, MaternParams { rho: cand.1, nu });
        }
    }
    Ok((s2, best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn mp(rho: f64, nu: f64) -> MaternParams {
        MaternParams::new(rho, nu).unwrap()
    }

    #[test]
    fn bessel_reference_values() {
        let cases = [
            (0.3, 1.7, 0.169_073_052_272_134_391_27),
            (3.2, 0.05, 162_167.955_976_370_131_95),
            (4.5, 25.0, 5.148_642_909_105_087_521_7e-12),
            (1.0, 1.0, 0.601_907_230_197_234_574_74),
            (2.0, 0.5, 7.550_183_551_240_869_436_6),
            (0.75, 3.0, 0.037_696_423_405_926_790_862),
            (3.5, 2.0, 1.154_401_055_192_591_430_9),
            (1.25, 10.0, 0.000_019_155_410_658_695_632_408),
            (0.1, 0.001, 7.673_590_519_053_184_346_7),
        ];
        for (nu, x, expected) in cases {
            assert_relative_eq!(bessel_k(nu, x), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn bessel_half_order_closed_form() {
        for &x in &[0.01, 0.5, 1.9, 2.0, 2.1, 7.0, 40.0] {
            let k = (PI / (2.0 * x)).sqrt() * (-x).exp();
            assert_relative_eq!(bessel_k(0.5, x), k, max_relative = 1e-13);
            assert_relative_eq!(bessel_k(1.5, x), k * (1.0 + 1.0 / x), max_relative = 1e-13);
        }
    }

    #[test]
    fn matern_reference_values() {
        assert_eq!(matern_cor(0.0, &mp(0.5, 3.5)), 1.0);
        assert_relative_eq!(matern_cor(PI / 2.0, &mp(0.5, 3.5)), 0.018_475_189_532_210_849_616, max_relative = 1e-12);
        assert_relative_eq!(matern_cor(0.3, &mp(0.7, 1.0)), 0.778_859_294_764_279_556_75, max_relative = 1e-12);
        assert_relative_eq!(matern_cor(0.2, &mp(0.4, 2.2)), 0.819_855_241_245_004_997_08, max_relative = 1e-12);
    }

    #[test]
    fn matern_low_order_closed_forms() {
        assert_relative_eq!(matern_cor(0.5, &mp(0.5, 0.5)), (-1.0f64).exp(), max_relative = 1e-14);
        let s3 = 3f64.sqrt();
        assert_relative_eq!(matern_cor(1.0, &mp(1.0, 1.5)), (1.0 + s3) * (-s3).exp(), max_relative = 1e-14);
        assert_relative_eq!(matern_cor_bessel(1.0, &mp(1.0, 1.5)), 0.483_357_7, epsilon = 1e-6);
    }

    #[test]
    fn half_integer_path_agrees_with_bessel() {
        for &nu in &[0.5, 1.5, 2.5, 3.5, 4.5, 7.5] {
            for &d in &[1e-6, 0.01, 0.2, 0.7, 1.5, 4.0] {
                let p = mp(0.5, nu);
                assert_relative_eq!(matern_cor(d, &p), matern_cor_bessel(d, &p), epsilon = 1e-12, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn matern_monotone_and_decays() {
        for &nu in &FIT_NU_GRID {
            let p = mp(0.5, nu);
            let mut prev = 1.0;
            for k in 0..1000 {
                let v = matern_cor(k as f64 * 0.005, &p);
                assert!(v <= prev + 1e-15, "nu={nu} k={k}");
                prev = v;
            }
            assert!(matern_cor(20.0 * 0.5, &p) < 1e-3);
        }
        assert!(matern_cor_bessel(10.0, &mp(0.5, 2.2)) < 1e-3);
    }

    #[test]
    fn stationary_examples() {
        let p = mp(0.5, 3.5);
        let one = stationary_cov(&[0.3], 5.0, &p).unwrap();
        assert_eq!(one.matrix()[(0, 0)], 5.0);
        let two = stationary_cov(&[0.0, PI / 2.0], 5.0, &p).unwrap();
        assert_relative_eq!(two.matrix()[(0, 1)], 5.0 * matern_cor(PI / 2.0, &p), max_relative = 1e-15);
        let grid: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let a = stationary_cov(&grid, 1.0, &p).unwrap();
        let b = stationary_cov(&grid, 4.0, &p).unwrap();
        assert_relative_eq!(b.matrix(), &(a.matrix() * 4.0), max_relative = 1e-15);
    }

    #[test]
    fn stationary_rejects_duplicates() {
        let err = stationary_cov(&[0.0, 0.5, 0.5], 1.0, &mp(0.5, 1.5)).unwrap_err();
        assert!(err.to_string().contains("1 and 2"), "{err}");
    }

    #[test]
    fn stationary_spd_up_to_200_points() {
        for &p in &[10usize, 50, 200] {
            let grid: Vec<f64> = (0..p).map(|i| i as f64 * (PI / 2.0) / (p - 1) as f64).collect();
            for &nu in &[0.5, 3.5, 4.5] {
                assert!(stationary_cov(&grid, 5.0, &mp(0.5, nu)).is_ok());
            }
        }
    }

    #[test]
    fn nonstationary_diagonal_and_factorization() {
        let p = mp(0.5, 3.5);
        let c = nonstationary_cov(&[0.5], 5.0, &p).unwrap();
        assert_relative_eq!(c.matrix()[(0, 0)], 5.0, max_relative = 1e-15);
        let grid = [0.0, 0.2, 0.4, 0.9, 1.3];
        let ns = nonstationary_cov(&grid, 5.0, &p).unwrap();
        let st = stationary_cov(&transformed_grid(&grid), 5.0, &p).unwrap();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(5, grid.iter().map(|t| t + 0.5)));
        assert_relative_eq!(ns.matrix(), &(&d * st.matrix() * &d), epsilon = 1e-10);
        assert!(nonstationary_cov(&[-0.1, 0.2], 5.0, &p).is_err());
    }

    #[test]
    fn fit_recovers_generating_params() {
        let grid: Vec<f64> = (0..40).map(|i| i as f64 * (PI / 2.0) / 39.0).collect();
        let truth = mp(0.5, 3.5);
        let c = stationary_cov(&grid, 5.0, &truth).unwrap();
        let (s2, fit) = fit_matern(c.matrix(), &grid).unwrap();
        assert_relative_eq!(s2, 5.0, max_relative = 1e-12);
        assert_eq!(fit.nu, 3.5);
        let rhos = fit_rho_grid(&grid).unwrap();
        let step = (rhos[1] / rhos[0]).ln();
        assert!((fit.rho / 0.5).ln().abs() <= step, "{}", fit.rho);
    }

    #[test]
    fn fit_white_and_constant_extremes() {
        let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let rhos = fit_rho_grid(&grid).unwrap();
        let white = DMatrix::<f64>::identity(20, 20) * 2.0;
        let (_, w) = fit_matern(&white, &grid).unwrap();
        assert_eq!(w.rho, rhos[0]);
        let constant = DMatrix::from_element(20, 20, 3.0);
        let (_, c) = fit_matern(&constant, &grid).unwrap();
        assert_eq!(c.rho, *rhos.last().unwrap());
    }

    #[test]
    fn fit_with_fixed_parameters() {
        let grid: Vec<f64> = (0..30).map(|i| i as f64 * 0.05).collect();
        let c = stationary_cov(&grid, 2.0, &mp(0.4, 1.5)).unwrap();
        let (_, both) = fit_matern_with(c.matrix(), &grid, Some(2.5), Some(0.3)).unwrap();
        assert_eq!((both.nu, both.rho), (2.5, 0.3));
        let (_, nu_only) = fit_matern_with(c.matrix(), &grid, Some(1.5), None).unwrap();
        assert!((nu_only.rho - 0.4).abs() < 1e-3);
        let (_, rho_only) = fit_matern_with(c.matrix(), &grid, None, Some(0.4)).unwrap();
        assert_eq!(rho_only.nu, 1.5);
    }

    #[test]
    fn fit_rejects_nonpositive_variance() {
        let grid = [0.0, 1.0];
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(fit_matern(&m, &grid).is_err());
    }

    #[test]
    fn empirical_model_only_on_own_grid() {
        let m = CovarianceModel::Empirical {
            grid: vec![0.0, 1.0],
            base: DMatrix::identity(2, 2),
        };
        assert!(m.matrix(&[0.0, 1.0]).is_ok());
        assert!(m.matrix(&[0.0, 0.5]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nonstationary_identity_random_grids(mut pts in proptest::collection::vec(0.0f64..2.0, 2..15), rho in 0.1f64..2.0) {
                pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                pts.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
                prop_assume!(pts.len() >= 2);
                let p = mp(rho, 2.5);
                let ns = matern_matrix(&transformed_grid(&pts), 3.0, &p);
                let d: Vec<f64> = pts.iter().map(|t| t + 0.5).collect();
                let direct = nonstationary_cov(&pts, 3.0, &p);
                if let Ok(direct) = direct {
                    for i in 0..pts.len() {
                        for j in 0..pts.len() {
                            prop_assert!((direct.matrix()[(i, j)] - d[i] * d[j] * ns[(i, j)]).abs() < 1e-10);
                        }
                    }
                }
            }

            #[test]
            fn matern_in_unit_interval(d in 0.0f64..50.0, rho in 0.01f64..5.0, nu in 0.1f64..6.0) {
                let v = matern_cor(d, &mp(rho, nu));
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
