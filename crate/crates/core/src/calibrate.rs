//! Differential-evolution calibration of the two-factor model to quote series.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_mpr, validate_params, MarketPriceOfRisk, ModelParams, TwoFactorParams, ValidationLevel};
use crate::qkf::{filter_objectives, noise_levels, run_filter, FilterConfig, FilterOutput, QuoteSeries};

/// Calibrated parameters in vector order.
pub const PARAM_NAMES: [&str; 14] = [
    "c", "alpha", "beta", "kappa_Z", "kappa_Y", "sigma_Z", "sigma_Y", "rho", "lambda_Z", "lambda_Y",
    "gamma_Z", "gamma_Y", "z0", "y0",
];

pub const PENALTY_SCALE: f64 = 1e6;

pub fn default_bounds() -> [(f64, f64); 14] {
    [
        (0.0, 2.0),
        (0.0, 30.0),
        (0.0, 2.0),
        (0.0, 1.0),
        (0.0, 1.0),
        (1e-4, 5.0),
        (1e-4, 5.0),
        (-0.99, 0.99),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-5.0, 5.0),
        (-5.0, 5.0),
    ]
}

pub fn to_vector(p: &TwoFactorParams, m: &MarketPriceOfRisk) -> [f64; 14] {
    [
        p.c, p.alpha, p.beta, p.kappa_z, p.kappa_y, p.sigma_z, p.sigma_y, p.rho, m.lambda_z, m.lambda_y,
        m.gamma_z, m.gamma_y, p.z0, p.y0,
    ]
}

pub fn from_vector(v: &[f64]) -> (TwoFactorParams, MarketPriceOfRisk) {
    (
        TwoFactorParams {
            c: v[0],
            alpha: v[1],
            beta: v[2],
            kappa_z: v[3],
            kappa_y: v[4],
            sigma_z: v[5],
            sigma_y: v[6],
            rho: v[7],
            z0: v[12],
            y0: v[13],
        },
        MarketPriceOfRisk {
            lambda_z: v[8],
            lambda_y: v[9],
            gamma_z: v[10],
            gamma_y: v[11],
        },
    )
}

/// Total size of constraint violations, zero when feasible.
pub fn constraint_violation(params: &TwoFactorParams, mpr: &MarketPriceOfRisk) -> f64 {
    let p = ModelParams::from(*params);
    validate_params(&p, ValidationLevel::Calibration)
        .iter()
        .chain(validate_mpr(mpr).iter())
        .map(|v| v.magnitude)
        .sum()
}

/// `0` for admissible, correctly ordered parameters; `1e6·(1 + violation)` otherwise.
pub fn constraint_penalty(params: &TwoFactorParams, mpr: &MarketPriceOfRisk) -> f64 {
    let v = constraint_violation(params, mpr);
    let p = ModelParams::from(*params);
    let any = !validate_params(&p, ValidationLevel::Calibration).is_empty() || !validate_mpr(mpr).is_empty();
    if any {
        PENALTY_SCALE * (1.0 + v)
    } else {
        0.0
    }
}

/// Objective value of a candidate. Feasible finite values beat any infeasible
/// candidate; infeasible candidates compare by violation; non-finite last.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fitness {
    /// Penalized objective.
    pub value: f64,
    pub violation: f64,
}

impl Fitness {
    pub fn feasible(value: f64) -> Self {
        Self { value, violation: 0.0 }
    }

    fn class(&self) -> u8 {
        if !self.value.is_finite() || !self.violation.is_finite() {
            2
        } else if self.violation > 0.0 {
            1
        } else {
            0
        }
    }

    /// `true` when `self` is at least as good as `other`.
    pub fn no_worse_than(&self, other: &Fitness) -> bool {
        let (a, b) = (self.class(), other.class());
        match a.cmp(&b) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => match a {
                0 => self.value <= other.value,
                1 => self.violation <= other.violation,
                _ => true,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub population: usize,
    pub generations: usize,
    pub weight: f64,
    pub crossover: f64,
    pub seed: u64,
    /// Stop once the population's objective spread falls below `tolerance·(1+|best|)`.
    pub tolerance: f64,
}

impl DeConfig {
    pub fn for_dimension(dim: usize, generations: usize, seed: u64) -> Self {
        Self {
            population: (10 * dim).max(10),
            generations,
            weight: 0.8,
            crossover: 0.9,
            seed,
            tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Best objective after initialization and after each generation.
    pub trajectory: Vec<f64>,
    pub generations: usize,
    pub evaluations: usize,
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Config("empty search box".into()));
    }
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("bound {i}: need finite lower < upper, got [{lo}, {hi}]")));
        }
    }
    Ok(())
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let mut x = v;
    if x < lo {
        x = lo + (lo - x);
    }
    if x > hi {
        x = hi - (x - hi);
    }
    x.clamp(lo, hi)
}

fn uniform_population(bounds: &[(f64, f64)], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
        .collect()
}

/// Population around `center` with Gaussian jitter of `fraction` of each box
/// width; the first member is `center` itself.
pub fn jittered_population(
    center: &[f64],
    bounds: &[(f64, f64)],
    n: usize,
    fraction: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop = Vec::with_capacity(n);
    pop.push(
        center
            .iter()
            .zip(bounds)
            .map(|(&c, &(lo, hi))| c.clamp(lo, hi))
            .collect(),
    );
    while pop.len() < n {
        pop.push(
            center
                .iter()
                .zip(bounds)
                .map(|(&c, &(lo, hi))| {
                    let e: f64 = rng.sample(StandardNormal);
                    reflect(c + fraction * (hi - lo) * e, lo, hi)
                })
                .collect(),
        );
    }
    pop
}

/// DE/rand/1/bin over a box with a constrained objective. Trial vectors are
/// generated sequentially from the seeded stream; evaluations run in parallel
/// and do not affect the random stream, so results are thread-count independent.
pub fn differential_evolution_constrained<F>(
    objective: F,
    bounds: &[(f64, f64)],
    config: &DeConfig,
    initial: Option<Vec<Vec<f64>>>,
) -> Result<DeResult>
where
    F: Fn(&[f64]) -> Fitness + Sync,
{
    check_bounds(bounds)?;
    let dim = bounds.len();
    if config.population < 4 {
        return Err(Error::Config("population must be at least 4".into()));
    }
    if !(config.crossover >= 0.0 && config.crossover <= 1.0) || !(config.weight > 0.0 && config.weight <= 2.0) {
        return Err(Error::Config("crossover must lie in [0,1] and weight in (0,2]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pop = match initial {
        Some(p) => {
            if p.len() != config.population || p.iter().any(|m| m.len() != dim) {
                return Err(Error::Config("initial population has the wrong shape".into()));
            }
            p
        }
        None => uniform_population(bounds, config.population, &mut rng),
    };
    let eval_all = |members: &[Vec<f64>]| -> Vec<Fitness> { members.par_iter().map(|m| objective(m)).collect() };
    let mut fit = eval_all(&pop);
    let mut evaluations = pop.len();
    if fit.iter().all(|f| f.class() == 2) {
        return Err(Error::InfeasibleStart);
    }
    let best_index = |fit: &[Fitness]| {
        let mut b = 0;
        for i in 1..fit.len() {
            if !fit[b].no_worse_than(&fit[i]) {
                b = i;
            }
        }
        b
    };
    let mut trajectory = vec![fit[best_index(&fit)].value];
    let n = pop.len();
    let mut generations = 0;
    for _ in 0..config.generations {
        let trials: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut pick = |excl: &[usize]| loop {
                    let r = rng.random_range(0..n);
                    if !excl.contains(&r) {
                        break r;
                    }
                };
                let a = pick(&[i]);
                let b = pick(&[i, a]);
                let c = pick(&[i, a, b]);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|d| {
                        let cross = rng.random::<f64>() < config.crossover || d == forced;
                        if cross {
                            let v = pop[a][d] + config.weight * (pop[b][d] - pop[c][d]);
                            reflect(v, bounds[d].0, bounds[d].1)
                        } else {
                            pop[i][d]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit = eval_all(&trials);
        evaluations += n;
        for (i, (t, f)) in trials.into_iter().zip(trial_fit).enumerate() {
            if f.no_worse_than(&fit[i]) {
                pop[i] = t;
                fit[i] = f;
            }
        }
        generations += 1;
        let b = best_index(&fit);
        trajectory.push(fit[b].value);
        if config.tolerance > 0.0 && fit.iter().all(|f| f.class() == 0) {
            let worst = fit.iter().map(|f| f.value).fold(f64::NEG_INFINITY, f64::max);
            if worst - fit[b].value <= config.tolerance * (1.0 + fit[b].value.abs()) {
                break;
            }
        }
    }
    let b = best_index(&fit);
    Ok(DeResult {
        best: pop[b].clone(),
        best_value: fit[b].value,
        trajectory,
        generations,
        evaluations,
    })
}

/// Unconstrained DE on a scalar objective; non-finite values are never selected
/// over finite ones.
pub fn differential_evolution<F>(objective: F, bounds: &[(f64, f64)], config: &DeConfig) -> Result<DeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    differential_evolution_constrained(|x| Fitness::feasible(objective(x)), bounds, config, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Overrides of the default box, keyed by parameter name.
    pub bounds: BTreeMap<String, [f64; 2]>,
    /// Defaults to ten times the number of parameters.
    pub population: Option<usize>,
    pub ls_generations: usize,
    pub ml_generations: usize,
    pub crossover: f64,
    pub weight: f64,
    pub seed: u64,
    pub tolerance: f64,
    /// Standard deviation of the second-stage restart, as a fraction of box width.
    pub jitter: f64,
    pub filter: FilterConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            bounds: BTreeMap::new(),
            population: None,
            ls_generations: 200,
            ml_generations: 100,
            crossover: 0.9,
            weight: 0.8,
            seed: 0,
            tolerance: 1e-10,
            jitter: 0.1,
            filter: FilterConfig::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn resolved_bounds(&self) -> Result<[(f64, f64); 14]> {
        let mut b = default_bounds();
        for (name, &[lo, hi]) in &self.bounds {
            let i = PARAM_NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown parameter in bounds: {name}")))?;
            b[i] = (lo, hi);
        }
        check_bounds(&b)?;
        Ok(b)
    }

    fn de(&self, generations: usize, seed: u64) -> Result<DeConfig> {
        let mut de = DeConfig::for_dimension(14, generations, seed);
        if let Some(p) = self.population {
            if p < 10 {
                return Err(Error::Config("population must be at least 10".into()));
            }
            de.population = p;
        }
        de.crossover = self.crossover;
        de.weight = self.weight;
        de.tolerance = self.tolerance;
        Ok(de)
    }
}

/// Error distribution of one contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractErrors {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorReport {
    pub overall: f64,
    pub per_date: Vec<f64>,
    pub per_contract: BTreeMap<u32, ContractErrors>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Aggregates `|model − observed| / observed` by date, by contract and overall.
pub fn relative_errors(output: &FilterOutput) -> RelativeErrorReport {
    let mut by_contract: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut per_date = Vec::with_capacity(output.states.len());
    let (mut total, mut count) = (0.0, 0usize);
    for (state, errs) in output.states.iter().zip(&output.relative_errors) {
        let s: f64 = errs.iter().sum();
        per_date.push(if errs.is_empty() { 0.0 } else { s / errs.len() as f64 });
        total += s;
        count += errs.len();
        for (&j, &e) in state.nearby.iter().zip(errs) {
            by_contract.entry(j).or_default().push(e);
        }
    }
    let per_contract = by_contract
        .into_iter()
        .map(|(j, mut v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            v.sort_by(f64::total_cmp);
            (
                j,
                ContractErrors {
                    count: n,
                    mean,
                    std,
                    min: v[0],
                    q1: quantile(&v, 0.25),
                    median: quantile(&v, 0.5),
                    q3: quantile(&v, 0.75),
                    max: v[n - 1],
                },
            )
        })
        .collect();
    RelativeErrorReport {
        overall: if count == 0 { 0.0 } else { total / count as f64 },
        per_date,
        per_contract,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: TwoFactorParams,
    pub mpr: MarketPriceOfRisk,
    pub ls_trajectory: Vec<f64>,
    pub ml_trajectory: Vec<f64>,
    pub ls_error: f64,
    pub log_likelihood: f64,
    pub errors: RelativeErrorReport,
    pub ls_generations: usize,
    pub ml_generations: usize,
    pub evaluations: usize,
    pub seed: u64,
}

/// Least squares first, then maximum likelihood restarted around the
/// least-squares optimum. Candidates on which the filter fails score `+∞`.
pub fn calibrate(quotes: &QuoteSeries, config: &CalibrationConfig) -> Result<CalibrationResult> {
    if quotes.is_empty() {
        return Err(Error::Data("empty quote series".into()));
    }
    let bounds = config.resolved_bounds()?;
    let noise = noise_levels(quotes)?;
    let filter = config.filter;

    let score = |x: &[f64], ml: bool| -> Fitness {
        let (p, m) = from_vector(x);
        let violation = constraint_violation(&p, &m);
        let penalty = constraint_penalty(&p, &m);
        if penalty > 0.0 {
            return Fitness { value: penalty, violation };
        }
        match filter_objectives(&p, &m, quotes, &noise, &filter) {
            Ok(o) => {
                let v = if ml { -o.log_likelihood } else { o.ls_error };
                Fitness::feasible(if v.is_finite() { v } else { f64::INFINITY })
            }
            Err(_) => Fitness::feasible(f64::INFINITY),
        }
    };

    let ls_cfg = config.de(config.ls_generations, config.seed)?;
    let ls = differential_evolution_constrained(|x| score(x, false), &bounds, &ls_cfg, None)?;
    let mut best = ls.best.clone();
    let mut evaluations = ls.evaluations;
    let mut ml_trajectory = Vec::new();
    let mut ml_generations = 0;
    if config.ml_generations > 0 {
        let ml_seed = config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let ml_cfg = config.de(config.ml_generations, ml_seed)?;
        let start = jittered_population(&best, &bounds, ml_cfg.population, config.jitter, ml_seed);
        let ml = differential_evolution_constrained(|x| score(x, true), &bounds, &ml_cfg, Some(start))?;
        best = ml.best;
        evaluations += ml.evaluations;
        ml_trajectory = ml.trajectory;
        ml_generations = ml.generations;
    }
    let (params, mpr) = from_vector(&best);
    let out = run_filter(&params, &mpr, quotes, &noise, &filter)?;
    Ok(CalibrationResult {
        params,
        mpr,
        ls_trajectory: ls.trajectory,
        ml_trajectory,
        ls_error: out.ls_error,
        log_likelihood: out.log_likelihood,
        errors: relative_errors(&out),
        ls_generations: ls.generations,
        ml_generations,
        evaluations,
        seed: config.seed,
    })
}
