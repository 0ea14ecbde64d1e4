//! Chain driver shared by both Gibbs samplers: burn-in, retention,
//! thinning, parallel chains and posterior summaries of the retained draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{chain_summary, ChainSummary, ResidualDraws, PSRF_MIN_DRAWS};
use crate::error::{Error, Result};
use crate::stochastic::RngStream;

/// Upper bound on the number of stored band values per chain (512 MiB of
/// f64). `draw_thin` is raised automatically past it.
pub const MAX_STORED_VALUES: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    /// Total iterations `M`.
    pub iterations: usize,
    pub burnin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Stride between stored residual draws.
    pub resid_thin: usize,
    /// Stride between draws kept for credible bands.
    pub draw_thin: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            iterations: 10_000,
            burnin: 2_000,
            chains: 1,
            seed: 1,
            resid_thin: 10,
            draw_thin: 1,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burnin {
            return Err(Error::param(format!(
                "M ({}) must exceed Burnin ({})",
                self.iterations, self.burnin
            )));
        }
        if self.chains == 0 {
            return Err(Error::param("at least one chain is required"));
        }
        if self.resid_thin == 0 || self.draw_thin == 0 {
            return Err(Error::param("thinning strides must be positive"));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations - self.burnin
    }

    pub fn residual_draws(&self) -> usize {
        self.retained() / self.resid_thin
    }

    /// Band draws kept per chain with stride `thin`: retained draws
    /// `1, 1 + thin, 1 + 2 thin, ...`.
    pub fn stored_draws(&self, thin: usize) -> usize {
        self.retained().div_ceil(thin)
    }
}

/// One Gibbs chain. The record is a flat vector of every quantity that gets
/// a posterior mean and a credible band.
pub trait GibbsChain: Send {
    fn iterate(&mut self, rng: &mut RngStream) -> Result<()>;
    fn record_len(&self) -> usize;
    fn record(&self, out: &mut [f64]);
    fn monitored(&self) -> Vec<f64>;
    /// Writes raw residuals at every observed point and returns the
    /// current noise variance.
    fn residuals(&self, out: &mut [f64]) -> f64;
}

/// Draws stored element-major so per-element quantiles read contiguous
/// memory.
#[derive(Clone, Debug)]
pub struct DrawStore {
    dim: usize,
    capacity: usize,
    len: usize,
    data: Vec<f64>,
}

impl DrawStore {
    pub fn new(dim: usize, capacity: usize) -> Self {
        DrawStore { dim, capacity, len: 0, data: vec![0.0; dim * capacity] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, draw: &[f64]) {
        assert!(self.len < self.capacity, "draw store is full");
        assert_eq!(draw.len(), self.dim);
        for (e, v) in draw.iter().enumerate() {
            self.data[e * self.capacity + self.len] = *v;
        }
        self.len += 1;
    }

    /// Stored draws of element `e`.
    pub fn element(&self, e: usize) -> &[f64] {
        &self.data[e * self.capacity..e * self.capacity + self.len]
    }

    /// Draw `d` as a record vector.
    pub fn draw(&self, d: usize) -> Vec<f64> {
        (0..self.dim).map(|e| self.data[e * self.capacity + d]).collect()
    }
}

/// Output of a single chain.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub chain: usize,
    /// Sum of the record over every retained draw.
    pub sums: Vec<f64>,
    pub retained: usize,
    pub store: DrawStore,
    /// `traces[k]` is monitored scalar `k` over the retained draws.
    pub traces: Vec<Vec<f64>>,
    pub residuals: ResidualDraws,
    pub draw_thin: usize,
}

pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// Runs `settings.chains` chains in parallel. Chain `k` draws from
/// `RngStream::new(seed, k)`; any step error aborts with the chain and
/// iteration index.
pub fn run_chains<C, F>(
    settings: &McmcSettings,
    curve_lengths: &[usize],
    build: F,
    progress: Option<Progress<'_>>,
) -> Result<Vec<ChainOutput>>
where
    C: GibbsChain,
    F: Fn(usize) -> Result<C> + Sync,
{
    settings.validate()?;
    (0..settings.chains)
        .into_par_iter()
        .map(|k| run_one(settings, curve_lengths, &build, k, progress))
        .collect()
}

fn run_one<C, F>(
    settings: &McmcSettings,
    curve_lengths: &[usize],
    build: &F,
    chain: usize,
    progress: Option<Progress<'_>>,
) -> Result<ChainOutput>
where
    C: GibbsChain,
    F: Fn(usize) -> Result<C>,
{
    let abort = |iteration, e: Error| Error::ChainAbort { chain, iteration, source: Box::new(e) };
    let mut state = build(chain).map_err(|e| abort(0, e))?;
    let mut rng = RngStream::new(settings.seed, chain as u64);
    let dim = state.record_len();

    let mut thin = settings.draw_thin;
    while dim.saturating_mul(settings.stored_draws(thin)) > MAX_STORED_VALUES {
        thin *= 2;
    }
    if thin != settings.draw_thin {
        log::warn!("draw_thin raised from {} to {thin} to bound band storage", settings.draw_thin);
    }
    let mut store = DrawStore::new(dim, settings.stored_draws(thin));
    let mut residuals = ResidualDraws::new(curve_lengths.to_vec());
    let total_obs = residuals.total();
    let mut sums = vec![0.0; dim];
    let mut traces: Vec<Vec<f64>> = Vec::new();
    let mut record = vec![0.0; dim];
    let mut resid = vec![0.0; total_obs];

    for it in 1..=settings.iterations {
        state.iterate(&mut rng).map_err(|e| abort(it, e))?;
        if let Some(cb) = progress {
            cb(chain, it);
        }
        if it <= settings.burnin {
            continue;
        }
        let r = it - settings.burnin;
        state.record(&mut record);
        for (s, v) in sums.iter_mut().zip(&record) {
            *s += v;
        }
        if (r - 1) % thin == 0 {
            store.push(&record);
        }
        let mon = state.monitored();
        if traces.is_empty() {
            traces = vec![Vec::with_capacity(settings.retained()); mon.len()];
        }
        for (t, v) in traces.iter_mut().zip(mon) {
            t.push(v);
        }
        if r % settings.resid_thin == 0 {
            let s2 = state.residuals(&mut resid);
            residuals.push(s2, &resid);
        }
    }
    Ok(ChainOutput {
        chain,
        sums,
        retained: settings.retained(),
        store,
        traces,
        residuals,
        draw_thin: thin,
    })
}

/// Pooled summary over chains.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub retained: usize,
    pub stored: usize,
    pub residuals: ResidualDraws,
    /// `[chain][scalar][draw]`
    pub traces: Vec<Vec<Vec<f64>>>,
    pub psrf: Option<Vec<ChainSummary>>,
}

/// Type-7 (linear interpolation) sample quantile; reorders `xs`.
pub fn quantile(xs: &mut [f64], q: f64) -> f64 {
    assert!(!xs.is_empty());
    let h = (xs.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, a, rest) = xs.select_nth_unstable_by(lo, f64::total_cmp);
    let a = *a;
    if frac == 0.0 || rest.is_empty() {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

/// Means over all retained draws and 2.5/97.5 percentile bands over the
/// stored draws of all chains.
pub fn pool(outputs: &[ChainOutput]) -> Result<Pooled> {
    let first = outputs.first().ok_or_else(|| Error::param("no chains"))?;
    let dim = first.store.dim();
    let retained: usize = outputs.iter().map(|o| o.retained).sum();
    let mut mean = vec![0.0; dim];
    for o in outputs {
        for (m, s) in mean.iter_mut().zip(&o.sums) {
            *m += s;
        }
    }
    for m in &mut mean {
        *m /= retained as f64;
    }
    let stored: usize = outputs.iter().map(|o| o.store.len()).sum();
    let mut lower = vec![0.0; dim];
    let mut upper = vec![0.0; dim];
    let mut buf = Vec::with_capacity(stored);
    for e in 0..dim {
        buf.clear();
        for o in outputs {
            buf.extend_from_slice(o.store.element(e));
        }
        lower[e] = quantile(&mut buf, 0.025);
        upper[e] = quantile(&mut buf, 0.975);
    }
    let mut residuals = first.residuals.clone();
    for o in &outputs[1..] {
        residuals.append(&o.residuals)?;
    }
    let traces: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.traces.clone()).collect();
    let psrf = if outputs.len() >= 2 && first.retained >= PSRF_MIN_DRAWS {
        let scalars = first.traces.len();
        let mut out = Vec::with_capacity(scalars);
        for k in 0..scalars {
            let chains: Vec<Vec<f64>> = outputs.iter().map(|o| o.traces[k].clone()).collect();
            out.push(chain_summary(&chains)?);
        }
        Some(out)
    } else {
        None
    };
    Ok(Pooled { mean, lower, upper, retained, stored, residuals, traces, psrf })
}

/// Indices at the 25/50/75% positions of a grid of length `p`, used for
/// the monitored mean and variance scalars.
pub fn monitor_indices(p: usize) -> [usize; 3] {
    let at = |q: f64| ((p - 1) as f64 * q).round() as usize;
    [at(0.25), at(0.5), at(0.75)]
}

pub fn monitor_names() -> Vec<String> {
    let mut names = vec!["sigma_eps2".to_string(), "sigma_s2".to_string()];
    for q in ["q25", "q50", "q75"] {
        names.push(format!("mu_{q}"));
    }
    for q in ["q25", "q50", "q75"] {
        names.push(format!("Sigma_diag_{q}"));
    }
    names
}

/// Packs the upper triangle (column-major, `i <= j`) of a symmetric matrix.
pub fn pack_upper(m: &nalgebra::DMatrix<f64>, out: &mut [f64]) {
    let p = m.nrows();
    let mut k = 0;
    for j in 0..p {
        for i in 0..=j {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
}

pub fn unpack_upper(p: usize, packed: &[f64]) -> nalgebra::DMatrix<f64> {
    let mut m = nalgebra::DMatrix::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in 0..=j {
            m[(i, j)] = packed[k];
            m[(j, i)] = packed[k];
            k += 1;
        }
    }
    m
}

pub fn packed_len(p: usize) -> usize {
    p * (p + 1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;

    /// AR(1) chain with unit noise.
    struct Ar {
        x: f64,
        phi: f64,
    }

    impl GibbsChain for Ar {
        fn iterate(&mut self, rng: &mut RngStream) -> Result<()> {
            self.x = self.phi * self.x + rng.standard_normal();
            if !self.x.is_finite() {
                return Err(Error::Conditioning("diverged".into()));
            }
            Ok(())
        }
        fn record_len(&self) -> usize {
            2
        }
        fn record(&self, out: &mut [f64]) {
            out[0] = self.x;
            out[1] = 1.0;
        }
        fn monitored(&self) -> Vec<f64> {
            vec![self.x]
        }
        fn residuals(&self, out: &mut [f64]) -> f64 {
            out[0] = self.x;
            1.0
        }
    }

    fn settings(m: usize, b: usize, chains: usize) -> McmcSettings {
        McmcSettings { iterations: m, burnin: b, chains, seed: 7, resid_thin: 10, draw_thin: 1 }
    }

    #[test]
    fn bookkeeping_counts() {
        let s = settings(1037, 200, 2);
        let out = run_chains(&s, &[1], |_| Ok(Ar { x: 0.0, phi: 0.5 }), None).unwrap();
        for o in &out {
            assert_eq!(o.retained, 837);
            assert_eq!(o.store.len(), 837);
            assert_eq!(o.traces[0].len(), 837);
            assert_eq!(o.residuals.draws(), 83);
        }
        let p = pool(&out).unwrap();
        assert_eq!(p.retained, 1674);
        assert_eq!(p.residuals.draws(), 166);
        assert_eq!(p.mean[1], 1.0);
        assert!(p.psrf.as_ref().unwrap()[0].psrf < 1.1);
        let thin = McmcSettings { draw_thin: 4, ..s };
        let out = run_chains(&thin, &[1], |_| Ok(Ar { x: 0.0, phi: 0.5 }), None).unwrap();
        assert_eq!(out[0].store.len(), 210);
    }

    #[test]
    fn single_retained_draw() {
        let s = settings(11, 10, 1);
        let out = run_chains(&s, &[1], |_| Ok(Ar { x: 0.0, phi: 0.5 }), None).unwrap();
        let p = pool(&out).unwrap();
        assert_eq!(p.mean[0], p.lower[0]);
        assert_eq!(p.mean[0], p.upper[0]);
        assert_eq!(p.residuals.draws(), 0);
        assert!(p.psrf.is_none());
    }

    #[test]
    fn chains_are_deterministic_and_distinct() {
        let s = settings(300, 100, 3);
        let a = run_chains(&s, &[1], |_| Ok(Ar { x: 0.0, phi: 0.5 }), None).unwrap();
        let b = run_chains(&s, &[1], |_| Ok(Ar { x: 0.0, phi: 0.5 }), None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.traces, y.traces);
        }
        assert_ne!(a[0].traces, a[1].traces);
    }

    #[test]
    fn abort_reports_chain_and_iteration() {
        let s = settings(100, 10, 1);
        let err = run_chains(&s, &[1], |_| Ok(Ar { x: 1.0, phi: 1e300 }), None).unwrap_err();
        match err {
            Error::ChainAbort { chain, iteration, .. } => {
                assert_eq!(chain, 0);
                assert_eq!(iteration, 2);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invalid_settings() {
        assert!(settings(10, 10, 1).validate().is_err());
        assert!(settings(10, 1, 0).validate().is_err());
        assert!(McmcSettings { resid_thin: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn quantile_type7() {
        let mut v: Vec<f64> = (1..=5).map(|x| x as f64).collect();
        assert_eq!(quantile(&mut v, 0.5), 3.0);
        assert_eq!(quantile(&mut v, 0.0), 1.0);
        assert_eq!(quantile(&mut v, 1.0), 5.0);
        assert!((quantile(&mut v, 0.1) - 1.4).abs() < 1e-12);
        assert_eq!(quantile(&mut [2.0], 0.975), 2.0);
    }

    #[test]
    fn packing_round_trip() {
        let m = nalgebra::DMatrix::from_fn(4, 4, |i, j| (i + j) as f64 + (i * j) as f64);
        let mut packed = vec![0.0; packed_len(4)];
        pack_upper(&m, &mut packed);
        assert_eq!(unpack_upper(4, &packed), m);
        assert_eq!(monitor_indices(40), [10, 20, 29]);
        assert_eq!(monitor_names().len(), 8);
    }
}
