//! Monte Carlo forward surfaces and the rolling first-nearby hedge.
//!
//! Paths are simulated with an Euler scheme on a uniform grid of
//! `steps_per_year` points per year. Each path draws from its own ChaCha
//! stream keyed by `(seed, path index)`, so results do not depend on thread
//! count or evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, expm_and_integral, Matrix, Vector};
use crate::model::{
    basis_into, drift_coefficients, generator_matrix, sigma_h, spot_coordinates, MarketPriceOfRisk, Measure,
    ModelParams, Specification, ThreeFactorParams, TwoFactorParams,
};
use crate::qkf::discretize;

/// Bounds applied to the correlation factor before evaluating `√(1−R²)`.
pub const CORRELATION_CLAMP: f64 = 1.0 - 1e-10;

/// Instrument variance below which the hedge ratio is undefined.
pub const MIN_HEDGE_VARIANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMeasure {
    /// Real-world dynamics with the market price of risk.
    #[default]
    P,
    Q,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rebalance {
    #[default]
    Monthly,
    EveryStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Simulated horizon in whole years.
    pub horizon: u32,
    pub steps_per_year: u32,
    pub n_paths: usize,
    pub seed: u64,
    pub measure: SimMeasure,
    /// Number of nearby contracts in the surface.
    pub nearby: u32,
    pub rebalance: Rebalance,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            steps_per_year: 120,
            n_paths: 5000,
            seed: 0,
            measure: SimMeasure::P,
            nearby: 10,
            rebalance: Rebalance::Monthly,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least one year".into()));
        }
        if self.steps_per_year < 12 {
            return Err(Error::Config("steps_per_year must be at least 12".into()));
        }
        if self.n_paths < 1 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if self.rebalance == Rebalance::Monthly && self.steps_per_year % 12 != 0 {
            return Err(Error::Config("monthly rebalancing needs steps_per_year divisible by 12".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps_per_year as f64
    }

    pub fn total_steps(&self) -> usize {
        (self.horizon * self.steps_per_year) as usize
    }
}

/// One simulated state path on the uniform grid, row-major `(steps+1) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub dim: usize,
    pub steps_per_year: u32,
    pub values: Vec<f64>,
    /// Times the correlation factor had to be pulled back inside `(−1, 1)`.
    pub clamp_events: u64,
}

impl StatePath {
    pub fn steps(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn state(&self, step: usize) -> &[f64] {
        &self.values[step * self.dim..(step + 1) * self.dim]
    }
}

/// The random stream of one path.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Euler stepper for one specification and measure.
#[derive(Debug, Clone)]
pub enum Stepper {
    TwoFactor {
        b: [f64; 2],
        d: [[f64; 2]; 2],
        k: [[f64; 2]; 2],
        x0: [f64; 2],
    },
    ThreeFactor {
        p: ThreeFactorParams,
        b: Vector,
        kappa: Matrix,
        dt: f64,
    },
}

impl Stepper {
    pub fn new(params: &ModelParams, mpr: Option<&MarketPriceOfRisk>, dt: f64) -> Result<Self> {
        match params {
            ModelParams::TwoFactor(p) => {
                let m = mpr.copied().unwrap_or_default();
                let disc = discretize(p, &m, dt)?;
                Ok(Stepper::TwoFactor {
                    b: [disc.b[0], disc.b[1]],
                    d: [[disc.d[(0, 0)], disc.d[(0, 1)]], [disc.d[(1, 0)], disc.d[(1, 1)]]],
                    k: [[disc.k[(0, 0)], disc.k[(0, 1)]], [disc.k[(1, 0)], disc.k[(1, 1)]]],
                    x0: p.initial_state(),
                })
            }
            ModelParams::ThreeFactor(p) => {
                if mpr.is_some_and(|m| !m.is_zero()) {
                    return Err(Error::UnsupportedMeasure);
                }
                if !(dt > 0.0) {
                    return Err(Error::InvalidInput("time step must be positive".into()));
                }
                let (b, kappa) = drift_coefficients(params, &Measure::Q)?;
                Ok(Stepper::ThreeFactor { p: *p, b, kappa, dt })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Stepper::TwoFactor { .. } => 2,
            Stepper::ThreeFactor { .. } => 3,
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            Stepper::TwoFactor { x0, .. } => x0.to_vec(),
            Stepper::ThreeFactor { p, .. } => p.initial_state().to_vec(),
        }
    }

    /// Advances `x` by one step in place; returns `true` if the correlation
    /// factor had to be clamped.
    #[inline]
    pub fn step(&self, x: &mut [f64], rng: &mut ChaCha8Rng) -> bool {
        match self {
            Stepper::TwoFactor { b, d, k, .. } => {
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let (z, y) = (x[0], x[1]);
                x[0] = b[0] + d[0][0] * z + d[0][1] * y + k[0][0] * e1;
                x[1] = b[1] + d[1][0] * z + d[1][1] * y + k[1][0] * e1 + k[1][1] * e2;
                false
            }
            Stepper::ThreeFactor { p, b, kappa, dt } => {
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let e3: f64 = rng.sample(StandardNormal);
                let mut r = x[2];
                let clamped = !(r.abs() <= CORRELATION_CLAMP);
                if clamped {
                    r = r.clamp(-CORRELATION_CLAMP, CORRELATION_CLAMP);
                }
                let q = (1.0 - r * r).sqrt();
                let sq = dt.sqrt();
                let mut drift = [0.0; 3];
                for (i, dr) in drift.iter_mut().enumerate() {
                    *dr = b[i] - (0..3).map(|j| kappa[(i, j)] * if j == 2 { r } else { x[j] }).sum::<f64>();
                }
                x[0] += drift[0] * dt + p.sigma_z * sq * e1;
                x[1] += drift[1] * dt + p.sigma_y * sq * (r * e1 + q * e2);
                x[2] = r + drift[2] * dt + p.sigma_r * q * sq * e3;
                clamped
            }
        }
    }
}

/// Simulates path `index` over `steps` Euler steps.
pub fn simulate_path(stepper: &Stepper, steps: usize, steps_per_year: u32, seed: u64, index: u64) -> StatePath {
    let dim = stepper.dim();
    let mut rng = path_rng(seed, index);
    let mut values = Vec::with_capacity((steps + 1) * dim);
    let mut x = stepper.initial_state();
    values.extend_from_slice(&x);
    let mut clamp_events = 0;
    for _ in 0..steps {
        if stepper.step(&mut x, &mut rng) {
            clamp_events += 1;
        }
        values.extend_from_slice(&x);
    }
    StatePath {
        dim,
        steps_per_year,
        values,
        clamp_events,
    }
}

fn stepper_for(params: &ModelParams, mpr: Option<&MarketPriceOfRisk>, config: &SimConfig) -> Result<Stepper> {
    config.validate()?;
    let m = match config.measure {
        SimMeasure::Q => None,
        SimMeasure::P => {
            if params.spec() == Specification::ThreeFactor {
                return Err(Error::UnsupportedMeasure);
            }
            Some(mpr.ok_or_else(|| Error::Config("simulation under P needs a market price of risk".into()))?)
        }
    };
    Stepper::new(params, m, config.dt())
}

/// All paths of a configuration, in path order.
pub fn simulate_paths(
    params: &ModelParams,
    mpr: Option<&MarketPriceOfRisk>,
    config: &SimConfig,
) -> Result<Vec<StatePath>> {
    let stepper = stepper_for(params, mpr, config)?;
    let steps = config.total_steps();
    Ok((0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_path(&stepper, steps, config.steps_per_year, config.seed, i))
        .collect())
}

/// Clamp statistics over many paths without keeping them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampReport {
    pub paths: usize,
    pub steps: u64,
    pub clamp_events: u64,
}

impl ClampReport {
    pub fn rate(&self) -> f64 {
        self.clamp_events as f64 / self.steps as f64
    }
}

pub fn clamp_report(params: &ModelParams, config: &SimConfig) -> Result<ClampReport> {
    let stepper = stepper_for(params, None, &SimConfig { measure: SimMeasure::Q, ..*config })?;
    let steps = config.total_steps();
    let events: u64 = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(config.seed, i);
            let mut x = stepper.initial_state();
            (0..steps).filter(|_| stepper.step(&mut x, &mut rng)).count() as u64
        })
        .sum();
    Ok(ClampReport {
        paths: config.n_paths,
        steps: (steps * config.n_paths) as u64,
        clamp_events: events,
    })
}

/// `e^{mΔt G} w_{0,1}` under the pricing generator for `m = 0..=max_steps`.
#[derive(Debug, Clone)]
pub struct ExpCache {
    spec: Specification,
    basis_dim: usize,
    steps_per_year: u32,
    data: Vec<f64>,
}

impl ExpCache {
    pub fn new(params: &ModelParams, steps_per_year: u32, max_steps: usize) -> Result<Self> {
        let g = generator_matrix(params, &Measure::Q)?;
        let n = g.nrows();
        let w01 = expm_and_integral(&g, 1.0)?.integral * spot_coordinates(params);
        let dt = 1.0 / steps_per_year as f64;
        let mut data = Vec::with_capacity((max_steps + 1) * n);
        for m in 0..=max_steps {
            let v = if m == 0 { w01.clone() } else { expm(&g, m as f64 * dt)? * &w01 };
            data.extend(v.iter());
        }
        Ok(Self {
            spec: params.spec(),
            basis_dim: n,
            steps_per_year,
            data,
        })
    }

    pub fn max_steps(&self) -> usize {
        self.data.len() / self.basis_dim - 1
    }

    pub fn steps_per_year(&self) -> u32 {
        self.steps_per_year
    }

    #[inline]
    pub fn vector(&self, m: usize) -> &[f64] {
        &self.data[m * self.basis_dim..(m + 1) * self.basis_dim]
    }

    /// Price of the calendar-year contract starting `m` grid steps after the state's date.
    #[inline]
    pub fn price(&self, basis: &[f64], m: usize) -> f64 {
        self.vector(m).iter().zip(basis).map(|(a, b)| a * b).sum()
    }

    pub fn basis(&self, x: &[f64], out: &mut [f64]) {
        basis_into(self.spec, x, out);
    }
}

/// Nearby prices along one path: row `j` holds contracts `l = 1..=nearby`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSurface {
    pub steps_per_year: u32,
    pub nearby: u32,
    pub prices: Vec<f64>,
}

impl PathSurface {
    pub fn time(&self, step: usize) -> f64 {
        step as f64 / self.steps_per_year as f64
    }

    pub fn row(&self, step: usize) -> &[f64] {
        let l = self.nearby as usize;
        &self.prices[step * l..(step + 1) * l]
    }
}

/// Rolling nearby prices; the `l`-th nearby at step `j` starts delivery
/// `l − (jΔt mod 1)` years later.
pub fn forward_surface(path: &StatePath, cache: &ExpCache, nearby: u32) -> Result<PathSurface> {
    let n = cache.steps_per_year as usize;
    if path.steps_per_year != cache.steps_per_year {
        return Err(Error::InvalidInput("path and cache grids differ".into()));
    }
    if nearby as usize * n > cache.max_steps() {
        return Err(Error::InvalidInput("cache too short for the requested nearby count".into()));
    }
    let mut basis = vec![0.0; cache.basis_dim];
    let mut prices = Vec::with_capacity((path.steps() + 1) * nearby as usize);
    for j in 0..=path.steps() {
        cache.basis(path.state(j), &mut basis);
        for l in 1..=nearby as usize {
            prices.push(cache.price(&basis, l * n - j % n));
        }
    }
    Ok(PathSurface {
        steps_per_year: cache.steps_per_year,
        nearby,
        prices,
    })
}

/// Covariance ratio of the claim on `u` against the instrument on `v`.
fn ratio(params: &ModelParams, x: &[f64], u: &[f64], v: &[f64]) -> Result<(f64, f64, f64)> {
    let s = sigma_h(params, x)?;
    let (mut num, mut den, mut claim) = (0.0, 0.0, 0.0);
    for i in 0..v.len() {
        let (mut sv, mut su) = (0.0, 0.0);
        for j in 0..v.len() {
            sv += s[(i, j)] * v[j];
            su += s[(i, j)] * u[j];
        }
        num += u[i] * sv;
        den += v[i] * sv;
        claim += u[i] * su;
    }
    Ok((num, den, claim))
}

/// Locally risk-minimizing position at time `t ∈ [k−1, k)` in the contract
/// delivering over `[k, k+1)`, for a claim delivering over `[T̃, T̃+1)`.
pub fn hedge_ratio(params: &ModelParams, t: f64, x: &[f64], k: u32, horizon: u32) -> Result<f64> {
    if k < 1 || k > horizon {
        return Err(Error::InvalidInput(format!("contract {k} outside 1..={horizon}")));
    }
    let kf = k as f64;
    if !(t >= kf - 1.0 && t < kf) {
        return Err(Error::TimeOrder(format!("time {t} outside [{}, {kf})", kf - 1.0)));
    }
    let g = generator_matrix(params, &Measure::Q)?;
    let w01 = expm_and_integral(&g, 1.0)?.integral * spot_coordinates(params);
    let v = expm(&g, kf - t)? * &w01;
    let u = if k == horizon { v.clone() } else { expm(&g, horizon as f64 - t)? * &w01 };
    let (num, den, _) = ratio(params, x, u.as_slice(), v.as_slice())?;
    if !(den >= MIN_HEDGE_VARIANCE) {
        return Err(Error::DegenerateVariance { variance: den });
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebalanceEntry {
    pub step: usize,
    pub contract: u32,
    pub ratio: f64,
    pub price: f64,
    /// Gain until the next rebalancing date.
    pub gain: f64,
    /// Claim value minus cumulative gain before this period's gain.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeRecord {
    pub horizon: u32,
    pub entries: Vec<RebalanceEntry>,
    pub initial_claim: f64,
    pub terminal_claim: f64,
    pub cumulative_gain: f64,
    pub hedged_exposure: f64,
    pub unhedged_exposure: f64,
}

/// Hedges the calendar-year claim starting at `horizon` by holding the first
/// nearby and rolling it each January 1. Gains are left-point: the position
/// chosen at a rebalancing date earns the price change until the next one.
pub fn run_rolling_hedge(
    path: &StatePath,
    params: &ModelParams,
    cache: &ExpCache,
    horizon: u32,
    rebalance: Rebalance,
) -> Result<HedgeRecord> {
    let n = cache.steps_per_year as usize;
    let h = horizon as usize;
    if horizon < 1 || path.steps() < h * n || cache.max_steps() < h * n {
        return Err(Error::InvalidInput("path or cache shorter than the hedge horizon".into()));
    }
    let every = match rebalance {
        Rebalance::Monthly => {
            if n % 12 != 0 {
                return Err(Error::Config("monthly rebalancing needs steps_per_year divisible by 12".into()));
            }
            n / 12
        }
        Rebalance::EveryStep => 1,
    };
    let d = cache.basis_dim;
    let mut basis = vec![0.0; d];
    let mut next_basis = vec![0.0; d];
    cache.basis(path.state(0), &mut basis);
    let initial_claim = cache.price(&basis, h * n);

    let mut entries = Vec::with_capacity(h * n / every);
    let mut gain = 0.0;
    for k in 1..=h {
        let mut j = (k - 1) * n;
        while j < k * n {
            let jn = (j + every).min(k * n);
            cache.basis(path.state(j), &mut basis);
            cache.basis(path.state(jn), &mut next_basis);
            let v = cache.vector(k * n - j);
            let xi = if k == h {
                1.0
            } else {
                let u = cache.vector(h * n - j);
                let (num, den, claim) = ratio(params, path.state(j), u, v)?;
                if den >= MIN_HEDGE_VARIANCE {
                    num / den
                } else if claim < MIN_HEDGE_VARIANCE {
                    // neither leg carries risk: nothing to hedge
                    0.0
                } else {
                    return Err(Error::DegenerateVariance { variance: den });
                }
            };
            let price = cache.price(&basis, k * n - j);
            let next = cache.price(&next_basis, k * n - jn);
            let claim_now = cache.price(&basis, h * n - j);
            let g = xi * (next - price);
            entries.push(RebalanceEntry {
                step: j,
                contract: k as u32,
                ratio: xi,
                price,
                gain: g,
                cost: claim_now - gain,
            });
            gain += g;
            j = jn;
        }
    }
    cache.basis(path.state(h * n), &mut basis);
    let terminal_claim = cache.price(&basis, 0);
    Ok(HedgeRecord {
        horizon,
        entries,
        initial_claim,
        terminal_claim,
        cumulative_gain: gain,
        hedged_exposure: (terminal_claim - initial_claim - gain) / initial_claim,
        unhedged_exposure: (terminal_claim - initial_claim) / initial_claim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub skew: f64,
    /// Set when all observations coincide; skewness is then reported as 0.
    pub degenerate: bool,
}

pub fn sample_stats(xs: &[f64]) -> SampleStats {
    let n = xs.len();
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
    let degenerate = xs.iter().all(|&x| x == xs[0]);
    let std = if n > 1 { (m2 * nf / (nf - 1.0)).sqrt() } else { 0.0 };
    let skew = if degenerate || m2 == 0.0 { 0.0 } else { m3 / m2.powf(1.5) };
    SampleStats {
        n,
        mean,
        std,
        skew,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
}

pub const HISTOGRAM_BINS: usize = 100;

pub fn histogram(xs: &[f64], bins: usize) -> Histogram {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0; bins];
    for &x in xs {
        let i = if width > 0.0 { (((x - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[i] += 1;
    }
    let total = xs.len() as f64;
    let density = counts
        .iter()
        .map(|&c| if width > 0.0 { c as f64 / (total * width) } else { 0.0 })
        .collect();
    Histogram { edges, counts, density }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureStats {
    pub horizon: u32,
    pub hedged: SampleStats,
    pub unhedged: SampleStats,
    pub hedged_histogram: Histogram,
    pub unhedged_histogram: Histogram,
}

pub fn exposure_stats(records: &[HedgeRecord]) -> Result<ExposureStats> {
    if records.len() < 2 {
        return Err(Error::InvalidInput("exposure statistics need at least two paths".into()));
    }
    let hedged: Vec<f64> = records.iter().map(|r| r.hedged_exposure).collect();
    let unhedged: Vec<f64> = records.iter().map(|r| r.unhedged_exposure).collect();
    Ok(exposure_stats_from(records[0].horizon, &hedged, &unhedged))
}

fn exposure_stats_from(horizon: u32, hedged: &[f64], unhedged: &[f64]) -> ExposureStats {
    ExposureStats {
        horizon,
        hedged: sample_stats(hedged),
        unhedged: sample_stats(unhedged),
        hedged_histogram: histogram(hedged, HISTOGRAM_BINS),
        unhedged_histogram: histogram(unhedged, HISTOGRAM_BINS),
    }
}

/// Hedging experiment over several horizons. Each path is simulated once to the
/// longest horizon and hedged for every horizon in turn.
pub fn hedge_experiment(
    params: &TwoFactorParams,
    mpr: &MarketPriceOfRisk,
    horizons: &[u32],
    config: &SimConfig,
) -> Result<Vec<ExposureStats>> {
    let max_h = *horizons
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no hedge horizons given".into()))?;
    if horizons.contains(&0) {
        return Err(Error::Config("hedge horizons must be at least one year".into()));
    }
    if config.n_paths < 2 {
        return Err(Error::Config("hedging needs at least two paths".into()));
    }
    let cfg = SimConfig { horizon: max_h, ..*config };
    let mp = ModelParams::from(*params);
    let stepper = stepper_for(&mp, Some(mpr), &cfg)?;
    let cache = ExpCache::new(&mp, cfg.steps_per_year, cfg.total_steps())?;
    let steps = cfg.total_steps();
    let per_path: Vec<Vec<(f64, f64)>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = simulate_path(&stepper, steps, cfg.steps_per_year, cfg.seed, i);
            horizons
                .iter()
                .map(|&h| {
                    run_rolling_hedge(&path, &mp, &cache, h, cfg.rebalance)
                        .map(|r| (r.hedged_exposure, r.unhedged_exposure))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(horizons
        .iter()
        .enumerate()
        .map(|(hi, &h)| {
            let hedged: Vec<f64> = per_path.iter().map(|p| p[hi].0).collect();
            let unhedged: Vec<f64> = per_path.iter().map(|p| p[hi].1).collect();
            exposure_stats_from(h, &hedged, &unhedged)
        })
        .collect())
}

/// Per-contract mean of simulated prices at a fixed step, against time-0 prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSummary {
    pub step: usize,
    pub time: f64,
    /// Delivery start year of each tracked contract.
    pub contracts: Vec<u32>,
    pub initial: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Tracks the contracts delivering over `[l, l+1)` for `l = 1..=nearby` from
/// time 0 to `step`, streaming over paths.
pub fn surface_summary(
    params: &ModelParams,
    mpr: Option<&MarketPriceOfRisk>,
    config: &SimConfig,
    step: usize,
) -> Result<SurfaceSummary> {
    let stepper = stepper_for(params, mpr, config)?;
    let n = config.steps_per_year as usize;
    if step > config.total_steps() {
        return Err(Error::InvalidInput("summary step beyond the horizon".into()));
    }
    let nearby = config.nearby as usize;
    let year_at = step.div_ceil(n);
    if nearby < year_at.max(1) {
        return Err(Error::InvalidInput("no tracked contract is still alive at the summary step".into()));
    }
    let cache = ExpCache::new(params, config.steps_per_year, nearby * n)?;
    let d = params.spec().basis_dim();
    let mut basis = vec![0.0; d];
    cache.basis(&stepper.initial_state(), &mut basis);
    let contracts: Vec<u32> = (1..=nearby as u32).filter(|&l| l as usize * n >= step).collect();
    let initial: Vec<f64> = contracts.iter().map(|&l| cache.price(&basis, l as usize * n)).collect();
    let sums = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(config.seed, i);
            let mut x = stepper.initial_state();
            for _ in 0..step {
                stepper.step(&mut x, &mut rng);
            }
            let mut b = vec![0.0; d];
            cache.basis(&x, &mut b);
            contracts
                .iter()
                .map(|&l| cache.price(&b, l as usize * n - step))
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    let m = sums.len() as f64;
    let mut mean = vec![0.0; contracts.len()];
    let mut sq = vec![0.0; contracts.len()];
    for row in &sums {
        for (c, &v) in row.iter().enumerate() {
            mean[c] += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for row in &sums {
        for (c, &v) in row.iter().enumerate() {
            sq[c] += (v - mean[c]).powi(2);
        }
    }
    let std_error = sq.iter().map(|s| (s / (m - 1.0).max(1.0)).sqrt() / m.sqrt()).collect();
    Ok(SurfaceSummary {
        step,
        time: step as f64 / n as f64,
        contracts,
        initial,
        mean,
        std_error,
    })
}
