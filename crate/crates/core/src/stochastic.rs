//! Seeded random streams, SPD matrices with a jitter schedule, and the
//! multivariate normal / inverse-Wishart / gamma draws the samplers use.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Ridge multipliers tried (relative to the mean absolute diagonal) when a
/// plain Cholesky factorization fails.
pub const JITTER_SCHEDULE: [f64; 7] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5];
/// Last step of the schedule; anything needing more is reported as non-SPD.
pub const JITTER_MAX: f64 = 1e-4;

/// A reproducible random stream. Identical `(seed, stream)` pairs give
/// identical sequences; distinct stream ids select independent ChaCha
/// streams under the same key.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// A fresh stream under the same seed.
    pub fn substream(&self, stream: u64) -> RngStream {
        RngStream::new(self.seed, stream)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.standard_normal())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// A symmetric positive definite matrix together with its lower Cholesky
/// factor. `matrix()` is the symmetrized input; the factor is of
/// `matrix() + jitter * I`.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl SpdMatrix {
    /// Symmetrizes `m` and factors it, walking the jitter schedule if needed.
    pub fn new(mut m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("matrix has non-finite entries"));
        }
        let scale = m.amax();
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::param(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                let avg = 0.5 * (a + b);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        let (factor, jitter) = factor_with_jitter(&m)?;
        Ok(SpdMatrix {
            matrix: m,
            factor,
            jitter,
        })
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix {
            matrix: DMatrix::identity(dim, dim),
            factor: DMatrix::identity(dim, dim),
            jitter: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The matrix that was actually factored.
    pub fn jittered(&self) -> DMatrix<f64> {
        let mut m = self.matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += self.jitter;
        }
        m
    }

    /// Lower Cholesky factor of `jittered()`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Absolute ridge added to the diagonal before factoring.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Solves `jittered() * x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .factor
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal");
        self.factor
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Inverse of `jittered()`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let linv = self
            .factor
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("cholesky factor has a positive diagonal");
        let mut inv = linv.transpose() * &linv;
        symmetrize(&mut inv);
        inv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Replaces `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn factor_with_jitter(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    let mean_diag = if n == 0 {
        0.0
    } else {
        m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64
    };
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut last_minor = 0;
    for mult in JITTER_SCHEDULE.iter().chain(std::iter::once(&JITTER_MAX)) {
        let ridge = mult * scale;
        match cholesky_lower(m, ridge) {
            Ok(l) => return Ok((l, ridge)),
            Err(minor) => last_minor = minor,
        }
    }
    Err(Error::NotPositiveDefinite {
        dim: n,
        minor: last_minor,
        jitter: JITTER_MAX * scale,
    })
}

/// Lower Cholesky factor of `a + ridge * I`; on failure returns the 1-based
/// index of the leading minor that was not positive.
pub(crate) fn cholesky_lower(a: &DMatrix<f64>, ridge: f64) -> std::result::Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut col = vec![0.0; n];
    {
        let ls = l.as_mut_slice();
        for j in 0..n {
            col[j..n].copy_from_slice(&a.as_slice()[j * n + j..(j + 1) * n]);
            col[j] += ridge;
            for k in 0..j {
                let f = ls[k * n + j];
                if f != 0.0 {
                    let src = &ls[k * n + j..(k + 1) * n];
                    for (c, s) in col[j..n].iter_mut().zip(src) {
                        *c -= f * s;
                    }
                }
            }
            let d = col[j];
            if !(d > 0.0) || !d.is_finite() {
                return Err(j + 1);
            }
            let root = d.sqrt();
            let dst = &mut ls[j * n + j..(j + 1) * n];
            dst[0] = root;
            for (o, c) in dst[1..].iter_mut().zip(&col[j + 1..n]) {
                *o = c / root;
            }
        }
    }
    Ok(l)
}

/// Draws `mean + L z` with `L` the Cholesky factor of `cov`.
pub fn sample_mvn(mean: &DVector<f64>, cov: &SpdMatrix, rng: &mut RngStream) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::shape(format!(
            "mean has length {} but covariance is {}x{}",
            mean.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let z = rng.normal_vector(mean.len());
    Ok(mean + cov.factor() * z)
}

/// Draws from `N(Q^{-1} b, Q^{-1})` given the precision `Q`. Returns the
/// draw and the conditional mean.
pub fn sample_mvn_canonical(
    b: &DVector<f64>,
    precision: &SpdMatrix,
    rng: &mut RngStream,
) -> (DVector<f64>, DVector<f64>) {
    let mean = precision.solve(b);
    let z = rng.normal_vector(b.len());
    let noise = precision
        .factor()
        .tr_solve_lower_triangular(&z)
        .expect("cholesky factor has a positive diagonal");
    (&mean + noise, mean)
}

/// An inverse-Wishart draw kept together with its inverse and a square
/// root (`cov = root * root^T`), which the Gibbs steps need anyway.
#[derive(Clone, Debug)]
pub struct CovDraw {
    pub cov: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub root: DMatrix<f64>,
}

impl CovDraw {
    pub fn identity(dim: usize) -> Self {
        CovDraw {
            cov: DMatrix::identity(dim, dim),
            precision: DMatrix::identity(dim, dim),
            root: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_spd(m: &SpdMatrix) -> Self {
        CovDraw {
            cov: m.jittered(),
            precision: m.inverse(),
            root: m.factor().clone(),
        }
    }
}

/// Inverse-Wishart draw in the process parameterization: for a `p`-variate
/// marginal the standard degrees of freedom are `delta + p - 1`, so the mean
/// is `scale / (delta - 2)` whatever `p` is.
///
/// Uses the Bartlett decomposition of the Wishart precision: with
/// `scale = U U^T`, `precision = (U^{-T} A)(U^{-T} A)^T` and
/// `cov = (U A^{-T})(U A^{-T})^T`.
pub fn sample_inverse_wishart_factored(
    delta: f64,
    scale: &SpdMatrix,
    rng: &mut RngStream,
) -> Result<CovDraw> {
    if !(delta > 2.0) || !delta.is_finite() {
        return Err(Error::param(format!(
            "inverse-Wishart shape delta must exceed 2, got {delta}"
        )));
    }
    let p = scale.dim();
    let dof = delta + p as f64 - 1.0;
    let mut bartlett = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| Error::param(e.to_string()))?;
        bartlett[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = rng.standard_normal();
        }
    }
    let u = scale.factor();
    let g = u
        .tr_solve_lower_triangular(&bartlett)
        .ok_or_else(|| Error::Conditioning("singular scale factor".into()))?;
    let mut precision = &g * g.transpose();
    symmetrize(&mut precision);

    let a_inv = bartlett
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Conditioning("singular Bartlett factor".into()))?;
    let root = u * a_inv.transpose();
    let mut cov = &root * root.transpose();
    symmetrize(&mut cov);
    Ok(CovDraw {
        cov,
        precision,
        root,
    })
}

pub fn sample_inverse_wishart(delta: f64, scale: &SpdMatrix, rng: &mut RngStream) -> Result<SpdMatrix> {
    let draw = sample_inverse_wishart_factored(delta, scale, rng)?;
    SpdMatrix::new(draw.cov)
}

/// Gamma draw with (shape, rate) parameters.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(Error::param(format!(
            "gamma needs positive shape and rate, got ({shape}, {rate})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::param(e.to_string()))?;
    // Guard the (practically unreachable) zero draw so precisions stay finite.
    Ok(g.sample(rng).max(f64::MIN_POSITIVE))
}

/// Moore–Penrose inverse via the SVD. Singular values at or below
/// `tol * max_singular_value` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.max();
    let cutoff = tol * smax;
    let mut out = DMatrix::<f64>::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    out
}
