//! Quadratic Kalman filter for calendar-year forward quotes.
//!
//! The filter runs on the augmented state `(Z, Y, Z², YZ, Y²)`, whose first two
//! conditional moments propagate linearly under the Euler-discretized
//! real-world dynamics. Quotes are affine in the augmented state.

use std::collections::BTreeMap;

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, expm_and_integral, kron, min_eigenvalue, repair_psd, structural_matrices, Matrix, Vector};
use crate::model::{generator_matrix, spot_coordinates, MarketPriceOfRisk, Measure, ModelParams, TwoFactorParams};

/// Default number of nearby calendar-year contracts.
pub const DEFAULT_MAX_NEARBY: u32 = 10;

/// Default spacing used to build the anchor covariance, in years.
pub const DEFAULT_ANCHOR_DT: f64 = 1.0 / 12.0;

const AUG_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub price: f64,
    pub spread: Option<f64>,
}

/// Quotes observed on one date. `time` is the year fraction since the series
/// origin; `year_frac` is the position of the date inside its calendar year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteDate {
    pub time: f64,
    pub year_frac: f64,
    pub quotes: BTreeMap<u32, Quote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteSeries {
    dates: Vec<QuoteDate>,
}

impl QuoteSeries {
    pub fn new(dates: Vec<QuoteDate>) -> Result<Self> {
        let mut prev = f64::NEG_INFINITY;
        for (k, d) in dates.iter().enumerate() {
            if !d.time.is_finite() || d.time <= prev {
                return Err(Error::Data(format!("quote date {k}: times must be strictly increasing")));
            }
            prev = d.time;
            if !(0.0..1.0).contains(&d.year_frac) {
                return Err(Error::Data(format!(
                    "quote date {k}: position in year {} outside [0, 1)",
                    d.year_frac
                )));
            }
            for (&j, q) in &d.quotes {
                if j == 0 {
                    return Err(Error::Data(format!("quote date {k}: nearby index must be >= 1")));
                }
                if !(q.price.is_finite() && q.price > 0.0) {
                    return Err(Error::Data(format!("quote date {k}, nearby {j}: price must be positive")));
                }
                if let Some(s) = q.spread {
                    if !(s.is_finite() && s >= 0.0) {
                        return Err(Error::Data(format!(
                            "quote date {k}, nearby {j}: spread must be nonnegative"
                        )));
                    }
                }
            }
        }
        Ok(Self { dates })
    }

    pub fn dates(&self) -> &[QuoteDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn max_nearby(&self) -> u32 {
        self.dates
            .iter()
            .filter_map(|d| d.quotes.keys().next_back().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn quote_count(&self) -> usize {
        self.dates.iter().map(|d| d.quotes.len()).sum()
    }
}

/// Measurement noise standard deviations `N^j_k` for every present quote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub levels: Vec<BTreeMap<u32, f64>>,
}

impl NoiseModel {
    pub fn level(&self, k: usize, j: u32) -> Option<f64> {
        self.levels.get(k).and_then(|m| m.get(&j)).copied()
    }
}

/// Noise levels from bid-ask spreads: the squared level averages the quote's
/// own spread, the contract's average spread and the overall average spread.
pub fn noise_levels(quotes: &QuoteSeries) -> Result<NoiseModel> {
    let mut per_contract: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let (mut total, mut count) = (0.0, 0usize);
    for d in quotes.dates() {
        for (&j, q) in &d.quotes {
            if let Some(s) = q.spread {
                let e = per_contract.entry(j).or_insert((0.0, 0));
                e.0 += s;
                e.1 += 1;
                total += s;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Config(
            "no spreads present; cannot derive measurement noise".into(),
        ));
    }
    let overall = total / count as f64;
    let contract_mean = |j: u32| {
        per_contract
            .get(&j)
            .map(|&(s, n)| s / n as f64)
            .unwrap_or(overall)
    };
    let mut levels = Vec::with_capacity(quotes.len());
    for d in quotes.dates() {
        let mut row = BTreeMap::new();
        for (&j, q) in &d.quotes {
            let mean_j = contract_mean(j);
            let own = q.spread.unwrap_or(mean_j);
            let var = (own + mean_j + overall) / 3.0;
            if !(var > 0.0) {
                return Err(Error::Config(format!(
                    "nonpositive noise level for nearby {j}; all spreads are zero"
                )));
            }
            row.insert(j, var.sqrt());
        }
        levels.push(row);
    }
    Ok(NoiseModel { levels })
}

/// Euler discretization `X_k = b + D X_{k-1} + K ε_k` of the real-world dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub b: Vector,
    pub d: Matrix,
    pub k: Matrix,
    /// Set when a diagonal entry of `D` is negative (step too coarse for the mean reversion).
    pub negative_diagonal: bool,
}

pub fn discretize(params: &TwoFactorParams, mpr: &MarketPriceOfRisk, dt: f64) -> Result<Discretization> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("time step {dt} must be positive")));
    }
    let b = Vector::from_vec(vec![mpr.gamma_z * dt, mpr.gamma_y * dt]);
    let d = Matrix::from_row_slice(
        2,
        2,
        &[
            1.0 - (params.kappa_z - mpr.lambda_z) * dt,
            0.0,
            params.kappa_y * dt,
            1.0 - (params.kappa_y - mpr.lambda_y) * dt,
        ],
    );
    let sq = dt.sqrt();
    let k = Matrix::from_row_slice(
        2,
        2,
        &[
            params.sigma_z * sq,
            0.0,
            params.rho * params.sigma_y * sq,
            params.sigma_y * ((1.0 - params.rho * params.rho) * dt).sqrt(),
        ],
    );
    let negative_diagonal = d[(0, 0)] < 0.0 || d[(1, 1)] < 0.0;
    Ok(Discretization { b, d, k, negative_diagonal })
}

/// Linear dynamics of the augmented state for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDynamics {
    pub b: Vector,
    pub d: Matrix,
    pub sigma: Matrix,
}

struct Structural {
    selection: Matrix,
    duplication: Matrix,
    commutation: Matrix,
}

fn structural2() -> Structural {
    let s = structural_matrices(2).expect("dimension 2 is valid");
    Structural {
        selection: s.selection,
        duplication: s.duplication,
        commutation: s.commutation,
    }
}

fn stack(tl: &Matrix, tr: &Matrix, bl: &Matrix, br: &Matrix) -> Matrix {
    let (r1, c1) = tl.shape();
    let (r2, c2) = br.shape();
    let mut m = Matrix::zeros(r1 + r2, c1 + c2);
    m.view_mut((0, 0), (r1, c1)).copy_from(tl);
    m.view_mut((0, c1), (r1, c2)).copy_from(tr);
    m.view_mut((r1, 0), (r2, c1)).copy_from(bl);
    m.view_mut((r1, c1), (r2, c2)).copy_from(br);
    m
}

fn augment_with(s: &Structural, disc: &Discretization, x_prev: &[f64]) -> AugmentedDynamics {
    let (b, d, k) = (&disc.b, &disc.d, &disc.k);
    let h = &s.selection;
    let sigma = k * k.transpose();

    let bb = b * b.transpose() + &sigma;
    let vec_bb = Vector::from_column_slice(bb.as_slice());
    let mut b_aug = Vector::zeros(AUG_DIM);
    b_aug.rows_mut(0, 2).copy_from(b);
    b_aug.rows_mut(2, 3).copy_from(&(h * vec_bb));

    let bm = Matrix::from_column_slice(2, 1, b.as_slice());
    let lower_left = h * (kron(&bm, d) + kron(d, &bm));
    let lower_right = h * kron(d, d) * &s.duplication;
    let d_aug = stack(d, &Matrix::zeros(2, 3), &lower_left, &lower_right);

    let m = b + d * Vector::from_column_slice(x_prev);
    let mm = Matrix::from_column_slice(2, 1, m.as_slice());
    let i2 = Matrix::identity(2, 2);
    let gamma = kron(&i2, &mm) + kron(&mm, &i2);
    let hg = h * &gamma;
    let cross = &hg * &sigma;
    let fourth = h * (Matrix::identity(4, 4) + &s.commutation) * kron(&sigma, &sigma) * h.transpose();
    let quad = &cross * gamma.transpose() * h.transpose() + fourth;
    let mut sigma_aug = stack(&sigma, &cross.transpose(), &cross, &quad);
    sigma_aug = (&sigma_aug + sigma_aug.transpose()) * 0.5;

    AugmentedDynamics { b: b_aug, d: d_aug, sigma: sigma_aug }
}

/// Augmented-state intercept, transition and conditional covariance given the
/// previous non-augmented state.
pub fn augment_dynamics(disc: &Discretization, x_prev: &[f64]) -> Result<AugmentedDynamics> {
    if x_prev.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x_prev.len() });
    }
    Ok(augment_with(&structural2(), disc, x_prev))
}

/// `(z, y, z², yz, y²)`.
pub fn augmented_state(x: &[f64]) -> Vector {
    Vector::from_vec(vec![x[0], x[1], x[0] * x[0], x[1] * x[0], x[1] * x[1]])
}

/// Pricing-measure maps from the augmented state to nearby calendar-year prices.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    generator: Matrix,
    /// `e^{(j−1)G} w_{0,1}` for `j = 1..=max_nearby`.
    shifted: Vec<Vector>,
}

impl MeasurementModel {
    pub fn new(params: &TwoFactorParams, max_nearby: u32) -> Result<Self> {
        let p = ModelParams::from(*params);
        let generator = generator_matrix(&p, &Measure::Q)?;
        let w01 = expm_and_integral(&generator, 1.0)?.integral * spot_coordinates(&p);
        let one_year = expm(&generator, 1.0)?;
        let mut shifted = Vec::with_capacity(max_nearby as usize);
        let mut cur = w01;
        for _ in 0..max_nearby {
            let next = &one_year * &cur;
            shifted.push(cur);
            cur = next;
        }
        Ok(Self { generator, shifted })
    }

    pub fn max_nearby(&self) -> u32 {
        self.shifted.len() as u32
    }

    /// Intercepts `a` and loadings `B̃` (one row per requested nearby).
    pub fn map(&self, year_frac: f64, nearby: &[u32]) -> Result<(Vector, Matrix)> {
        self.map_with(&self.lead(year_frac)?, nearby)
    }

    /// Propagator from the quotation date to the end of its calendar year.
    pub fn lead(&self, year_frac: f64) -> Result<Matrix> {
        expm(&self.generator, 1.0 - year_frac)
    }

    /// Same as [`MeasurementModel::map`] with a precomputed [`MeasurementModel::lead`].
    pub fn map_with(&self, lead: &Matrix, nearby: &[u32]) -> Result<(Vector, Matrix)> {
        if nearby.is_empty() {
            return Err(Error::InvalidInput("measurement map needs at least one contract".into()));
        }
        let mut a = Vector::zeros(nearby.len());
        let mut b = Matrix::zeros(nearby.len(), AUG_DIM);
        for (row, &j) in nearby.iter().enumerate() {
            if j == 0 || j > self.max_nearby() {
                return Err(Error::InvalidInput(format!(
                    "nearby index {j} outside 1..={}",
                    self.max_nearby()
                )));
            }
            let v = lead * &self.shifted[j as usize - 1];
            a[row] = v[0];
            for c in 0..AUG_DIM {
                b[(row, c)] = v[c + 1];
            }
        }
        Ok((a, b))
    }
}

pub fn measurement_map(params: &TwoFactorParams, year_frac: f64, nearby: &[u32]) -> Result<(Vector, Matrix)> {
    let max = nearby.iter().copied().max().unwrap_or(1).max(1);
    MeasurementModel::new(params, max)?.map(year_frac, nearby)
}

/// Innovation weighting in the least-squares objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsWeighting {
    #[default]
    Unweighted,
    /// Each squared innovation divided by its noise variance.
    Spread,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub anchor_dt: f64,
    pub ls_weighting: LsWeighting,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            anchor_dt: DEFAULT_ANCHOR_DT,
            ls_weighting: LsWeighting::Unweighted,
        }
    }
}

/// Everything produced at one quotation date.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub date_index: usize,
    pub x_pred: Vector,
    pub v_pred: Matrix,
    pub x_filt: Vector,
    pub v_filt: Matrix,
    pub nearby: Vec<u32>,
    pub observed: Vec<f64>,
    pub predicted_prices: Vector,
    pub filtered_prices: Vector,
    pub noise: Vector,
    pub innovation: Vector,
    pub innovation_cov: Matrix,
    pub gain: Matrix,
    /// Smallest eigenvalue of the filtered covariance before any repair.
    pub min_eigenvalue: f64,
    /// Diagonal jitter added to keep the filtered covariance PSD.
    pub jitter: f64,
    pub log_likelihood: f64,
}

impl FilterState {
    /// Non-augmented filtered state `(z, y)`.
    pub fn state(&self) -> [f64; 2] {
        [self.x_filt[0], self.x_filt[1]]
    }
}

struct Update {
    x: Vector,
    v: Matrix,
    f_pred: Vector,
    f_filt: Vector,
    innovation: Vector,
    m: Matrix,
    gain: Matrix,
    min_eig: f64,
    jitter: f64,
    loglik: f64,
}

fn measurement_update(
    x_pred: &Vector,
    v_pred: &Matrix,
    a: &Vector,
    b: &Matrix,
    noise: &Vector,
    observed: &Vector,
    date_index: usize,
) -> Result<Update> {
    let f_pred = a + b * x_pred;
    let innovation = observed - &f_pred;
    let mut m = b * v_pred * b.transpose();
    for i in 0..noise.len() {
        m[(i, i)] += noise[i] * noise[i];
    }
    m = (&m + m.transpose()) * 0.5;
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularInnovation { date_index });
    }
    let chol = Cholesky::new(m.clone()).ok_or(Error::SingularInnovation { date_index })?;
    let l = chol.l();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return Err(Error::SingularInnovation { date_index });
    }
    let solved = chol.solve(&innovation);
    let n = observed.len() as f64;
    let loglik = -0.5 * (log_det + innovation.dot(&solved) + n * (2.0 * std::f64::consts::PI).ln());

    // K = V Bᵀ M⁻¹ = (M⁻¹ B V)ᵀ since M and V are symmetric
    let gain = chol.solve(&(b * v_pred)).transpose();
    let x = x_pred + &gain * &innovation;
    let mut v = v_pred - &gain * &m * gain.transpose();
    v = (&v + v.transpose()) * 0.5;
    let min_eig = min_eigenvalue(&v);
    let mut jitter = 0.0;
    if min_eig < 0.0 {
        let (fixed, j) = repair_psd(&v);
        v = fixed;
        jitter = j;
    }
    let f_filt = a + b * &x;
    Ok(Update {
        x,
        v,
        f_pred,
        f_filt,
        innovation,
        m,
        gain,
        min_eig,
        jitter,
        loglik,
    })
}

/// One prediction and (when quotes are present) update step.
///
/// `disc` is the discretization over the gap since the previous date.
pub fn qkf_step(
    prev: &FilterState,
    disc: &Discretization,
    maps: &MeasurementModel,
    date: &QuoteDate,
    noise: &BTreeMap<u32, f64>,
    date_index: usize,
) -> Result<FilterState> {
    let s = structural2();
    step_with(&s, prev, disc, |y, n| maps.map(y, n), date, noise, date_index)
}

fn step_with(
    s: &Structural,
    prev: &FilterState,
    disc: &Discretization,
    maps: impl FnOnce(f64, &[u32]) -> Result<(Vector, Matrix)>,
    date: &QuoteDate,
    noise: &BTreeMap<u32, f64>,
    date_index: usize,
) -> Result<FilterState> {
    let x_prev = [prev.x_filt[0], prev.x_filt[1]];
    let aug = augment_with(s, disc, &x_prev);
    let x_pred = &aug.b + &aug.d * &prev.x_filt;
    let mut v_pred = &aug.d * &prev.v_filt * aug.d.transpose() + &aug.sigma;
    v_pred = (&v_pred + v_pred.transpose()) * 0.5;
    finish_date(maps, date, noise, date_index, x_pred, v_pred)
}

fn finish_date(
    maps: impl FnOnce(f64, &[u32]) -> Result<(Vector, Matrix)>,
    date: &QuoteDate,
    noise: &BTreeMap<u32, f64>,
    date_index: usize,
    x_pred: Vector,
    v_pred: Matrix,
) -> Result<FilterState> {
    let nearby: Vec<u32> = date.quotes.keys().copied().collect();
    if nearby.is_empty() {
        return Ok(FilterState {
            date_index,
            x_filt: x_pred.clone(),
            v_filt: v_pred.clone(),
            min_eigenvalue: min_eigenvalue(&v_pred),
            x_pred,
            v_pred,
            nearby,
            observed: Vec::new(),
            predicted_prices: Vector::zeros(0),
            filtered_prices: Vector::zeros(0),
            noise: Vector::zeros(0),
            innovation: Vector::zeros(0),
            innovation_cov: Matrix::zeros(0, 0),
            gain: Matrix::zeros(AUG_DIM, 0),
            jitter: 0.0,
            log_likelihood: 0.0,
        });
    }
    let observed: Vec<f64> = date.quotes.values().map(|q| q.price).collect();
    let noise_vec = nearby
        .iter()
        .map(|j| {
            noise
                .get(j)
                .copied()
                .ok_or_else(|| Error::Data(format!("no noise level for nearby {j} at date {date_index}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let noise_vec = Vector::from_vec(noise_vec);
    let (a, b) = maps(date.year_frac, &nearby)?;
    let obs = Vector::from_column_slice(&observed);
    let u = measurement_update(&x_pred, &v_pred, &a, &b, &noise_vec, &obs, date_index)?;
    Ok(FilterState {
        date_index,
        x_pred,
        v_pred,
        x_filt: u.x,
        v_filt: u.v,
        nearby,
        observed,
        predicted_prices: u.f_pred,
        filtered_prices: u.f_filt,
        noise: noise_vec,
        innovation: u.innovation,
        innovation_cov: u.m,
        gain: u.gain,
        min_eigenvalue: u.min_eig,
        jitter: u.jitter,
        log_likelihood: u.loglik,
    })
}

/// Result of a filtering pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub states: Vec<FilterState>,
    pub log_likelihood: f64,
    pub ls_error: f64,
    /// `|F_{k|k} − F_obs| / F_obs` aligned with each state's `nearby` list.
    pub relative_errors: Vec<Vec<f64>>,
    /// Same with one-step-ahead predicted prices.
    pub relative_errors_pred: Vec<Vec<f64>>,
    /// Dates whose Euler transition had a negative diagonal.
    pub coarse_steps: usize,
}

impl FilterOutput {
    pub fn mean_relative_error(&self) -> f64 {
        let (s, n) = self
            .relative_errors
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

/// Log-likelihood and least-squares error only, without retaining states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterObjectives {
    pub log_likelihood: f64,
    pub ls_error: f64,
}

fn anchor(params: &TwoFactorParams, mpr: &MarketPriceOfRisk, config: &FilterConfig, s: &Structural) -> Result<(Vector, Matrix)> {
    let x0 = params.initial_state();
    let disc = discretize(params, mpr, config.anchor_dt)?;
    let aug = augment_with(s, &disc, &x0);
    Ok((augmented_state(&x0), aug.sigma))
}

fn filter_pass<F>(
    params: &TwoFactorParams,
    mpr: &MarketPriceOfRisk,
    quotes: &QuoteSeries,
    noise: &NoiseModel,
    config: &FilterConfig,
    mut visit: F,
) -> Result<FilterObjectives>
where
    F: FnMut(FilterState),
{
    if quotes.is_empty() {
        return Err(Error::Data("empty quote series".into()));
    }
    if noise.levels.len() != quotes.len() {
        return Err(Error::DimensionMismatch {
            expected: quotes.len(),
            got: noise.levels.len(),
        });
    }
    if !(config.anchor_dt > 0.0) {
        return Err(Error::Config("anchor_dt must be positive".into()));
    }
    let s = structural2();
    let maps = MeasurementModel::new(params, quotes.max_nearby().max(1))?;
    let (x0, v0) = anchor(params, mpr, config, &s)?;
    let dates = quotes.dates();
    let mut ll = 0.0;
    let mut ls = 0.0;
    let mut accumulate = |st: &FilterState| {
        ll += st.log_likelihood;
        for i in 0..st.innovation.len() {
            let c = st.innovation[i];
            ls += match config.ls_weighting {
                LsWeighting::Unweighted => c * c,
                LsWeighting::Spread => c * c / (st.noise[i] * st.noise[i]),
            };
        }
    };
    // Quotation dates recur at the same positions in the calendar year, so the
    // lead propagators are shared between them.
    let mut leads: Vec<(u64, Matrix)> = Vec::new();
    let mut map = |year_frac: f64, nearby: &[u32]| -> Result<(Vector, Matrix)> {
        let key = year_frac.to_bits();
        let i = match leads.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                leads.push((key, maps.lead(year_frac)?));
                leads.len() - 1
            }
        };
        maps.map_with(&leads[i].1, nearby)
    };
    let mut state = finish_date(&mut map, &dates[0], &noise.levels[0], 0, x0, v0)?;
    accumulate(&state);
    for k in 1..dates.len() {
        let dt = dates[k].time - dates[k - 1].time;
        let disc = discretize(params, mpr, dt)?;
        let next = step_with(&s, &state, &disc, &mut map, &dates[k], &noise.levels[k], k)?;
        accumulate(&next);
        visit(std::mem::replace(&mut state, next));
    }
    visit(state);
    if !ll.is_finite() || !ls.is_finite() {
        return Err(Error::SingularInnovation { date_index: dates.len() - 1 });
    }
    Ok(FilterObjectives { log_likelihood: ll, ls_error: ls })
}

/// Runs the filter over the whole series, anchored at the initial state.
pub fn run_filter(
    params: &TwoFactorParams,
    mpr: &MarketPriceOfRisk,
    quotes: &QuoteSeries,
    noise: &NoiseModel,
    config: &FilterConfig,
) -> Result<FilterOutput> {
    let mut states = Vec::with_capacity(quotes.len());
    let obj = filter_pass(params, mpr, quotes, noise, config, |s| states.push(s))?;
    let rel = |prices: &Vector, obs: &[f64]| -> Vec<f64> {
        obs.iter()
            .enumerate()
            .map(|(i, &o)| (prices[i] - o).abs() / o)
            .collect()
    };
    let relative_errors = states.iter().map(|s| rel(&s.filtered_prices, &s.observed)).collect();
    let relative_errors_pred = states.iter().map(|s| rel(&s.predicted_prices, &s.observed)).collect();
    let mut coarse_steps = 0;
    for k in 1..quotes.len() {
        let dt = quotes.dates()[k].time - quotes.dates()[k - 1].time;
        if discretize(params, mpr, dt)?.negative_diagonal {
            coarse_steps += 1;
        }
    }
    Ok(FilterOutput {
        states,
        log_likelihood: obj.log_likelihood,
        ls_error: obj.ls_error,
        relative_errors,
        relative_errors_pred,
        coarse_steps,
    })
}

/// Objectives only; used inside the calibrator.
pub fn filter_objectives(
    params: &TwoFactorParams,
    mpr: &MarketPriceOfRisk,
    quotes: &QuoteSeries,
    noise: &NoiseModel,
    config: &FilterConfig,
) -> Result<FilterObjectives> {
    filter_pass(params, mpr, quotes, noise, config, |_| {})
}

/// Quote dates on a grid with their positions inside the calendar year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub time: f64,
    pub year_frac: f64,
}

/// Regular monthly grid starting at a calendar-year boundary.
pub fn monthly_grid(n: usize) -> Vec<GridPoint> {
    (0..n)
        .map(|k| GridPoint {
            time: k as f64 / 12.0,
            year_frac: (k % 12) as f64 / 12.0,
        })
        .collect()
}

/// Synthetic quotes from the filter's own transition and measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuotes {
    pub quotes: QuoteSeries,
    pub states: Vec<[f64; 2]>,
    pub true_prices: Vec<Vec<f64>>,
}

/// Simulates states with the Euler transition between grid points (the first
/// grid point holds the initial state), prices contracts `1..=nearby` exactly,
/// and adds Gaussian noise whose variance equals the quoted spread. A zero
/// `noise_scale` yields noiseless prices; spreads are still reported.
pub fn synthetic_quotes(
    params: &TwoFactorParams,
    mpr: &MarketPriceOfRisk,
    grid: &[GridPoint],
    spreads: &[f64],
    noise_scale: f64,
    seed: u64,
) -> Result<SyntheticQuotes> {
    if grid.is_empty() || spreads.is_empty() {
        return Err(Error::InvalidInput("grid and spreads must be nonempty".into()));
    }
    let nearby: Vec<u32> = (1..=spreads.len() as u32).collect();
    let maps = MeasurementModel::new(params, spreads.len() as u32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = params.initial_state();
    let mut dates = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut true_prices = Vec::with_capacity(grid.len());
    for (k, g) in grid.iter().enumerate() {
        if k > 0 {
            let disc = discretize(params, mpr, g.time - grid[k - 1].time)?;
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            let mean = &disc.b + &disc.d * Vector::from_column_slice(&x);
            x = [
                mean[0] + disc.k[(0, 0)] * e1,
                mean[1] + disc.k[(1, 0)] * e1 + disc.k[(1, 1)] * e2,
            ];
        }
        let (a, b) = maps.map(g.year_frac, &nearby)?;
        let prices = a + b * augmented_state(&x);
        let mut row = BTreeMap::new();
        for (i, &j) in nearby.iter().enumerate() {
            let sd = noise_scale * spreads[i].sqrt();
            let mut p = prices[i];
            if sd > 0.0 {
                loop {
                    let e: f64 = rng.sample(StandardNormal);
                    p = prices[i] + sd * e;
                    if p > 0.0 {
                        break;
                    }
                }
            }
            row.insert(j, Quote { price: p, spread: Some(spreads[i]) });
        }
        dates.push(QuoteDate {
            time: g.time,
            year_frac: g.year_frac,
            quotes: row,
        });
        states.push(x);
        true_prices.push(prices.iter().copied().collect());
    }
    Ok(SyntheticQuotes {
        quotes: QuoteSeries::new(dates)?,
        states,
        true_prices,
    })
}

/// Serializable summary of a filter run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub log_likelihood: f64,
    pub ls_error: f64,
    pub mean_relative_error: f64,
    pub coarse_steps: usize,
    pub dates: Vec<FilterDateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDateReport {
    pub index: usize,
    pub filtered_state: Vec<f64>,
    pub filtered_cov: Vec<Vec<f64>>,
    pub predicted_state: Vec<f64>,
    pub nearby: Vec<u32>,
    pub observed: Vec<f64>,
    pub predicted_prices: Vec<f64>,
    pub filtered_prices: Vec<f64>,
    pub innovation: Vec<f64>,
    pub innovation_cov: Vec<Vec<f64>>,
    pub relative_errors: Vec<f64>,
    pub jitter: f64,
    pub log_likelihood: f64,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl From<&FilterOutput> for FilterReport {
    fn from(out: &FilterOutput) -> Self {
        let dates = out
            .states
            .iter()
            .zip(&out.relative_errors)
            .map(|(s, rel)| FilterDateReport {
                index: s.date_index,
                filtered_state: s.x_filt.iter().copied().collect(),
                filtered_cov: rows(&s.v_filt),
                predicted_state: s.x_pred.iter().copied().collect(),
                nearby: s.nearby.clone(),
                observed: s.observed.clone(),
                predicted_prices: s.predicted_prices.iter().copied().collect(),
                filtered_prices: s.filtered_prices.iter().copied().collect(),
                innovation: s.innovation.iter().copied().collect(),
                innovation_cov: rows(&s.innovation_cov),
                relative_errors: rel.clone(),
                jitter: s.jitter,
                log_likelihood: s.log_likelihood,
            })
            .collect();
        FilterReport {
            log_likelihood: out.log_likelihood,
            ls_error: out.ls_error,
            mean_relative_error: out.mean_relative_error(),
            coarse_steps: out.coarse_steps,
            dates,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn date(time: f64, frac: f64, quotes: &[(u32, f64, Option<f64>)]) -> QuoteDate {
        QuoteDate {
            time,
            year_frac: frac,
            quotes: quotes
                .iter()
                .map(|&(j, price, spread)| (j, Quote { price, spread }))
                .collect(),
        }
    }

    #[test]
    fn equal_spreads_give_equal_noise() {
        let q = QuoteSeries::new(vec![
            date(0.0, 0.0, &[(1, 40.0, Some(0.5)), (2, 41.0, Some(0.5))]),
            date(0.1, 0.1, &[(1, 40.0, Some(0.5))]),
        ])
        .unwrap();
        let n = noise_levels(&q).unwrap();
        for row in &n.levels {
            for &v in row.values() {
                assert_relative_eq!(v * v, 0.5, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn hand_computed_noise() {
        let q = QuoteSeries::new(vec![date(
            0.0,
            0.0,
            &[(1, 40.0, Some(1.0)), (2, 40.0, Some(2.0)), (3, 40.0, Some(3.0))],
        )])
        .unwrap();
        let n = noise_levels(&q).unwrap();
        assert_relative_eq!(n.level(0, 1).unwrap().powi(2), 4.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn missing_spread_uses_contract_average() {
        let q = QuoteSeries::new(vec![
            date(0.0, 0.0, &[(1, 40.0, Some(1.0)), (2, 40.0, Some(3.0))]),
            date(0.1, 0.1, &[(1, 40.0, None)]),
        ])
        .unwrap();
        let n = noise_levels(&q).unwrap();
        // own := 1 (contract mean), contract mean 1, overall 2
        assert_relative_eq!(n.level(1, 1).unwrap().powi(2), 4.0 / 3.0, max_relative = 1e-15);
        assert!(n.level(1, 2).is_none());
    }

    #[test]
    fn no_spreads_is_config_error() {
        let q = QuoteSeries::new(vec![date(0.0, 0.0, &[(1, 40.0, None)])]).unwrap();
        assert!(matches!(noise_levels(&q), Err(Error::Config(_))));
    }

    #[test]
    fn series_validation() {
        assert!(QuoteSeries::new(vec![date(0.0, 0.0, &[]), date(0.0, 0.1, &[])]).is_err());
        assert!(QuoteSeries::new(vec![date(0.0, 1.0, &[])]).is_err());
        assert!(QuoteSeries::new(vec![date(0.0, 0.0, &[(1, -1.0, None)])]).is_err());
        assert!(QuoteSeries::new(vec![date(0.0, 0.0, &[(1, 1.0, Some(-0.1))])]).is_err());
    }

    #[test]
    fn discretization_table1() {
        let p = TwoFactorParams::table1();
        let d = discretize(&p, &MarketPriceOfRisk::default(), 1.0 / 12.0).unwrap();
        assert_eq!(d.d[(0, 0)], 1.0 - 0.010022 / 12.0);
        assert!(!d.negative_diagonal);
        let kk = &d.k * d.k.transpose();
        let a = crate::model::diffusion_matrix(&p.into(), &[0.0, 0.0]).unwrap();
        assert!((kk - a / 12.0).amax() < 1e-15);

        let tiny = discretize(&p, &MarketPriceOfRisk::table1(), 1e-12).unwrap();
        assert!((tiny.d - Matrix::identity(2, 2)).amax() < 1e-11);
        assert!(tiny.b.amax() < 1e-12 && tiny.k.amax() < 1e-5);

        assert!(discretize(&p, &MarketPriceOfRisk::default(), 5.0).unwrap().negative_diagonal);
        assert!(discretize(&p, &MarketPriceOfRisk::default(), 0.0).is_err());
    }

    #[test]
    fn identity_dynamics_augment_to_identity() {
        let disc = Discretization {
            b: Vector::zeros(2),
            d: Matrix::identity(2, 2),
            k: Matrix::zeros(2, 2),
            negative_diagonal: false,
        };
        let aug = augment_dynamics(&disc, &[0.3, -0.2]).unwrap();
        assert!((aug.d - Matrix::identity(5, 5)).amax() < 1e-15);
        assert!(aug.sigma.amax() == 0.0);
    }

    #[test]
    fn noiseless_augmentation_propagates_monomials() {
        let disc = Discretization {
            b: Vector::from_vec(vec![0.1, -0.05]),
            d: Matrix::from_row_slice(2, 2, &[0.9, 0.0, 0.2, 0.7]),
            k: Matrix::zeros(2, 2),
            negative_diagonal: false,
        };
        let x = [1.3, -0.4];
        let aug = augment_dynamics(&disc, &x).unwrap();
        assert_eq!(aug.sigma.amax(), 0.0);
        let next = &aug.b + &aug.d * augmented_state(&x);
        let m = &disc.b + &disc.d * Vector::from_column_slice(&x);
        let want = augmented_state(&[m[0], m[1]]);
        assert!((next - want).amax() < 1e-14);
    }

    #[test]
    fn flat_generator_measurement_map() {
        let mut p = TwoFactorParams::table1();
        p.kappa_z = 0.0;
        p.kappa_y = 0.0;
        p.sigma_z = 0.0;
        p.sigma_y = 0.0;
        let (a, b) = measurement_map(&p, 0.3, &[1, 2, 5]).unwrap();
        for r in 0..3 {
            assert_relative_eq!(a[r], p.c, max_relative = 1e-14);
            let want = [0.0, 0.0, p.beta, 0.0, p.alpha];
            for c in 0..5 {
                assert!((b[(r, c)] - want[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn measurement_matches_period_pricing() {
        let p = TwoFactorParams::table1();
        let mp: ModelParams = p.into();
        let x = [1.7, 2.4];
        let (a, b) = measurement_map(&p, 0.5, &[3]).unwrap();
        let price = a[0] + (b * augmented_state(&x))[0];
        let want = crate::pricing::forward_period(&mp, &Measure::Q, 0.0, 2.5, 3.5, &x).unwrap();
        assert!((price - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn huge_noise_means_no_update() {
        let p = TwoFactorParams::table1();
        let maps = MeasurementModel::new(&p, 3).unwrap();
        let x_pred = augmented_state(&[2.0, 2.0]);
        let v_pred = Matrix::identity(5, 5) * 0.1;
        let (a, b) = maps.map(0.0, &[1, 2]).unwrap();
        let noise = Vector::from_vec(vec![1e12, 1e12]);
        let obs = Vector::from_vec(vec![30.0, 50.0]);
        let u = measurement_update(&x_pred, &v_pred, &a, &b, &noise, &obs, 0).unwrap();
        assert!((u.x - x_pred).amax() < 1e-12);
        assert!(u.gain.amax() < 1e-18);
    }

    #[test]
    fn noiseless_full_rank_observation_is_matched() {
        let x_pred = Vector::from_vec(vec![1.0, 2.0, 1.5, 2.5, 4.5]);
        let v_pred = Matrix::identity(5, 5);
        let a = Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let b = Matrix::from_fn(5, 5, |i, j| if i == j { 2.0 } else { 0.1 * (i + 2 * j) as f64 });
        let obs = Vector::from_vec(vec![10.0, 11.0, 9.0, 8.0, 12.0]);
        let noise = Vector::from_element(5, 1e-7);
        let u = measurement_update(&x_pred, &v_pred, &a, &b, &noise, &obs, 0).unwrap();
        assert!((&a + &b * &u.x - obs).amax() < 1e-9);
    }

    #[test]
    fn update_forms_agree() {
        let p = TwoFactorParams::table1();
        let maps = MeasurementModel::new(&p, 4).unwrap();
        let disc = discretize(&p, &MarketPriceOfRisk::table1(), 1.0 / 12.0).unwrap();
        let aug = augment_dynamics(&disc, &[2.3, 2.0]).unwrap();
        let v_pred = &aug.sigma + Matrix::identity(5, 5) * 0.05;
        let (a, b) = maps.map(0.25, &[1, 2, 4]).unwrap();
        let noise = Vector::from_vec(vec![0.7, 0.8, 0.9]);
        let x_pred = augmented_state(&[2.3, 2.0]);
        let obs = &a + &b * &x_pred + Vector::from_vec(vec![0.5, -0.3, 0.2]);
        let u = measurement_update(&x_pred, &v_pred, &a, &b, &noise, &obs, 0).unwrap();
        let alt = (Matrix::identity(5, 5) - &u.gain * &b) * &v_pred;
        assert!((alt - &u.v).amax() <= 1e-9 * u.v.amax().max(1.0));
    }

    #[test]
    fn empty_series_is_an_error() {
        let q = QuoteSeries::new(vec![]).unwrap();
        let n = NoiseModel { levels: vec![] };
        let r = run_filter(&TwoFactorParams::table1(), &MarketPriceOfRisk::table1(), &q, &n, &FilterConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn single_date_is_anchor_plus_update() {
        let p = TwoFactorParams::table1();
        let q = QuoteSeries::new(vec![date(0.0, 0.0, &[(1, 40.0, Some(1.0)), (2, 39.0, Some(1.0))])]).unwrap();
        let n = noise_levels(&q).unwrap();
        let out = run_filter(&p, &MarketPriceOfRisk::table1(), &q, &n, &FilterConfig::default()).unwrap();
        assert_eq!(out.states.len(), 1);
        let x0 = p.initial_state();
        assert_eq!(out.states[0].x_pred, augmented_state(&x0));
        assert_eq!(out.relative_errors[0].len(), 2);
    }
}
