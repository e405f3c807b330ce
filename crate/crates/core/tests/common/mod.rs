//! Monte Carlo oracles shared by the integration tests and the acceptance run.
//! They use their own Euler loops and price only through the public pricing API.

#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use polyfwd::model::{basis_eval, MarketPriceOfRisk, Measure, ModelParams, TwoFactorParams};
use polyfwd::pricing::{ForwardModel, Leg};

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn random_two_factor(rng: &mut ChaCha8Rng) -> TwoFactorParams {
    TwoFactorParams {
        c: rng.random_range(0.0..1.0),
        alpha: rng.random_range(0.5..15.0),
        beta: rng.random_range(0.0..1.0),
        kappa_z: rng.random_range(0.005..1.0),
        kappa_y: rng.random_range(0.05..1.5),
        sigma_z: rng.random_range(0.05..1.0),
        sigma_y: rng.random_range(0.05..1.0),
        rho: rng.random_range(-0.9..0.9),
        z0: rng.random_range(-3.0..3.0),
        y0: rng.random_range(-3.0..3.0),
    }
}

/// Running first and second moments of one estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub n: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(self, o: Moments) -> Moments {
        Moments { n: self.n + o.n, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n
    }

    pub fn std_error(&self) -> f64 {
        let m = self.mean();
        ((self.sum_sq / self.n - m * m) * self.n / (self.n - 1.0)).sqrt() / self.n.sqrt()
    }
}

/// Pricing-measure Euler estimates of the instantaneous forward at `tau` and
/// of the forward delivering over `[tau, tau + len)`, for each `tau`, from the
/// initial state. The delivery average uses the trapezoid rule on the grid.
pub fn euler_forwards(
    p: &TwoFactorParams,
    taus: &[f64],
    len: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Vec<(Moments, Moments)> {
    let grid = |t: f64| (t / dt).round() as usize;
    let marks: Vec<(usize, usize)> = taus.iter().map(|&t| (grid(t), grid(t + len))).collect();
    let end = marks.iter().map(|m| m.1).max().unwrap_or(0);
    let sq = dt.sqrt();
    let rho_c = (1.0 - p.rho * p.rho).sqrt();
    let spot = |z: f64, y: f64| p.c + p.alpha * y * y + p.beta * z * z;
    const CHUNK: usize = 10_000;
    let chunks = n_paths.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(seed, c as u64);
            let mut acc = vec![(Moments::default(), Moments::default()); taus.len()];
            let count = CHUNK.min(n_paths - c * CHUNK);
            let mut integral = vec![0.0; taus.len()];
            for _ in 0..count {
                let (mut z, mut y) = (p.z0, p.y0);
                integral.iter_mut().for_each(|v| *v = 0.0);
                let mut prev_s = spot(z, y);
                for step in 1..=end {
                    let e1: f64 = r.sample(StandardNormal);
                    let e2: f64 = r.sample(StandardNormal);
                    let dz = -p.kappa_z * z * dt + p.sigma_z * sq * e1;
                    let dy = p.kappa_y * (z - y) * dt + p.sigma_y * sq * (p.rho * e1 + rho_c * e2);
                    z += dz;
                    y += dy;
                    if marks.iter().any(|&(first, last)| step >= first && step <= last) {
                        let s = spot(z, y);
                        for (i, &(first, last)) in marks.iter().enumerate() {
                            if step == first {
                                acc[i].0.push(s);
                            }
                            if step > first && step <= last {
                                integral[i] += 0.5 * (prev_s + s) * dt;
                            }
                        }
                        prev_s = s;
                    }
                }
                for i in 0..taus.len() {
                    acc[i].1.push(integral[i] / len);
                }
            }
            acc
        })
        .reduce(
            || vec![(Moments::default(), Moments::default()); taus.len()],
            |a, b| a.into_iter().zip(b).map(|(x, y)| (x.0.merge(y.0), x.1.merge(y.1))).collect(),
        )
}

/// Least-squares slope of `ys` on `xs` and its standard error.
pub fn regression_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}

/// Increments of the claim (delivery `[horizon, horizon+1)`) and of the
/// contract delivering `[k, k+1)` over one real-world Euler step from `x`.
pub fn one_step_increments(
    p: &TwoFactorParams,
    mpr: &MarketPriceOfRisk,
    t: f64,
    x: [f64; 2],
    k: u32,
    horizon: u32,
    n: usize,
    dt: f64,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let params = ModelParams::from(*p);
    let fm = ForwardModel::new(&params, &Measure::Q).unwrap();
    let instr = Leg::Period { start: k as f64, end: k as f64 + 1.0 };
    let claim = Leg::Period { start: horizon as f64, end: horizon as f64 + 1.0 };
    let (vi0, vi1) = (fm.price_coordinates(t, instr).unwrap(), fm.price_coordinates(t + dt, instr).unwrap());
    let (vc0, vc1) = (fm.price_coordinates(t, claim).unwrap(), fm.price_coordinates(t + dt, claim).unwrap());
    let h0 = basis_eval(params.spec(), &x).unwrap();
    let (i0, c0) = (h0.dot(&vi0), h0.dot(&vc0));
    let sq = dt.sqrt();
    let rho_c = (1.0 - p.rho * p.rho).sqrt();
    let mut r = rng(seed, 0);
    let mut di = Vec::with_capacity(n);
    let mut dc = Vec::with_capacity(n);
    for _ in 0..n {
        let e1: f64 = r.sample(StandardNormal);
        let e2: f64 = r.sample(StandardNormal);
        let z = x[0] + (mpr.gamma_z - (p.kappa_z - mpr.lambda_z) * x[0]) * dt + p.sigma_z * sq * e1;
        let y = x[1]
            + (mpr.gamma_y + p.kappa_y * x[0] - (p.kappa_y - mpr.lambda_y) * x[1]) * dt
            + p.sigma_y * sq * (p.rho * e1 + rho_c * e2);
        let h = basis_eval(params.spec(), &[z, y]).unwrap();
        di.push(h.dot(&vi1) - i0);
        dc.push(h.dot(&vc1) - c0);
    }
    (di, dc)
}

/// Small configuration that keeps every subcommand quick.
pub const SMALL_CONFIG: &str = "\
[simulation]
horizon = 3
steps_per_year = 24
n_paths = 200
seed = 4
measure = \"p\"

[calibration]
population = 20
ls_generations = 3
ml_generations = 2
seed = 6
";

pub fn polyfwd(args: &[&str], threads: usize) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_polyfwd"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

/// Runs every subcommand into `root` and returns each output file's bytes,
/// keyed by `subcommand/file`, plus the printed price.
pub fn run_every_subcommand(root: &std::path::Path, threads: usize) -> std::collections::BTreeMap<String, Vec<u8>> {
    std::fs::create_dir_all(root).unwrap();
    let config = root.join("run.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let cfg = config.to_str().unwrap();
    let dir = |name: &str| root.join(name).to_str().unwrap().to_string();
    let quotes = root.join("gen").join("quotes.csv");
    let quotes = quotes.to_str().unwrap();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("gen", vec!["generate-quotes".into(), "--months".into(), "30".into(), "--nearby".into(), "6".into()]),
        ("curve", vec!["curve".into()]),
        ("corr", vec!["corr".into(), "--legs".into(), "1:2,2:3,5,7:7.5".into()]),
        ("premium", vec!["premium".into()]),
        ("filter", vec!["filter".into(), "--quotes".into(), quotes.into()]),
        ("calibrate", vec!["calibrate".into(), "--quotes".into(), quotes.into()]),
        ("simulate", vec!["simulate".into(), "--dump".into(), "3".into()]),
        ("hedge", vec!["hedge".into(), "--horizons".into(), "2..3".into()]),
    ];
    let mut files = std::collections::BTreeMap::new();
    for (name, args) in runs {
        let out_dir = dir(name);
        let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
        full.extend(["--config", cfg, "--out", &out_dir]);
        let out = polyfwd(&full, threads);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        for entry in std::fs::read_dir(&out_dir).unwrap() {
            let path = entry.unwrap().path();
            let file = path.file_name().unwrap().to_str().unwrap().to_string();
            files.insert(format!("{name}/{file}"), std::fs::read(&path).unwrap());
        }
    }
    let price = polyfwd(&["price", "--start", "2", "--end", "3", "--measure", "p", "--config", cfg], threads);
    assert!(price.status.success());
    files.insert("price/stdout".into(), price.stdout);
    files
}
