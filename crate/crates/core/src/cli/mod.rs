//! Command-line front end.

pub mod config;
pub mod output;
pub mod quotes;

use std::ffi::OsString;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibrate::{calibrate, relative_errors, RelativeErrorReport};
use crate::error::{Error, ErrorKind, Result};
use crate::model::Measure;
use crate::pricing::{risk_premium, ForwardModel, Leg};
use crate::qkf::{noise_levels, run_filter, synthetic_quotes, FilterReport};
use crate::simhedge::{clamp_report, hedge_experiment, simulate_paths, surface_summary, ExpCache, SimMeasure};

use config::{params_to_toml, RunConfig};
use output::{num, sha256_hex, timestamp, Csv, Manifest, OutputDir};
use quotes::{grid, ingest_quotes, monthly_dates, quotes_csv, DatedQuotes};

#[derive(Debug, Parser)]
#[command(name = "polyfwd", version, about = "Polynomial diffusion models for long-term electricity forwards")]
pub struct Cli {
    /// TOML run configuration; reference parameters when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Q,
    P,
}

#[derive(Debug, Args)]
pub struct StateArgs {
    /// Valuation time in years.
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    /// Comma-separated factor values; the configured initial state when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub state: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price one forward; instantaneous when --end is omitted.
    Price {
        #[command(flatten)]
        at: StateArgs,
        #[arg(long)]
        start: f64,
        #[arg(long)]
        end: Option<f64>,
        #[arg(long, value_enum, default_value = "q")]
        measure: MeasureArg,
    },
    /// Strip of delivery periods starting every year.
    Curve {
        #[command(flatten)]
        at: StateArgs,
        #[arg(long, default_value_t = 1.0)]
        first: f64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        length: f64,
        #[arg(long, value_enum, default_value = "q")]
        measure: MeasureArg,
    },
    /// Instantaneous correlation matrix of forwards given as START:END or MATURITY.
    Corr {
        #[command(flatten)]
        at: StateArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        legs: Vec<String>,
    },
    /// Risk premium on a strip of delivery periods; instantaneous when --length is 0.
    Premium {
        #[command(flatten)]
        at: StateArgs,
        #[arg(long, default_value_t = 1.0)]
        first: f64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        length: f64,
    },
    /// Runs the quadratic Kalman filter on a quote file.
    Filter {
        #[arg(long)]
        quotes: PathBuf,
    },
    /// Calibrates the two-factor model to a quote file.
    Calibrate {
        #[arg(long)]
        quotes: PathBuf,
    },
    /// Simulates forward surfaces and summarizes tracked contracts.
    Simulate {
        /// Summary time in years (rounded to the grid).
        #[arg(long, default_value_t = 1.0)]
        at_year: f64,
        /// Number of leading paths whose full surface is written.
        #[arg(long, default_value_t = 0)]
        dump: usize,
    },
    /// Rolling-hedge experiment over several horizons.
    Hedge {
        /// Horizons in years, e.g. `2,3,5` or `2..10`.
        #[arg(long, default_value = "2..10")]
        horizons: String,
    },
    /// Writes a synthetic monthly quote file from the configured model.
    GenerateQuotes {
        #[arg(long, default_value = "2000-01-01")]
        start: NaiveDate,
        #[arg(long, default_value_t = 100)]
        months: usize,
        #[arg(long, default_value_t = 10)]
        nearby: u32,
        /// Spread of every quote; the noise variance equals the spread.
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        /// Multiplies the noise standard deviation; 0 gives exact model prices.
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Price { .. } => "price",
            Command::Curve { .. } => "curve",
            Command::Corr { .. } => "corr",
            Command::Premium { .. } => "premium",
            Command::Filter { .. } => "filter",
            Command::Calibrate { .. } => "calibrate",
            Command::Simulate { .. } => "simulate",
            Command::Hedge { .. } => "hedge",
            Command::GenerateQuotes { .. } => "generate-quotes",
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let shown: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, shown) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}

fn load_config(cli: &Cli) -> Result<(RunConfig, String)> {
    let (mut cfg, hash) = match &cli.config {
        None => (RunConfig::default(), sha256_hex(b"")),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            (RunConfig::from_toml_str(&text)?, sha256_hex(text.as_bytes()))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.simulation.seed = seed;
        cfg.calibration.seed = seed;
    }
    Ok((cfg, hash))
}

fn measure(cfg: &RunConfig, m: MeasureArg) -> Measure {
    match m {
        MeasureArg::Q => Measure::Q,
        MeasureArg::P => Measure::P(cfg.mpr),
    }
}

fn state(cfg: &RunConfig, at: &StateArgs) -> Result<Vec<f64>> {
    let x = at.state.clone().unwrap_or_else(|| cfg.params.initial_state());
    if x.len() != cfg.params.spec().state_dim() {
        return Err(Error::Config(format!(
            "--state needs {} values, got {}",
            cfg.params.spec().state_dim(),
            x.len()
        )));
    }
    Ok(x)
}

fn strip(first: f64, count: usize, length: f64) -> Vec<(f64, f64)> {
    (0..count).map(|i| (first + i as f64, first + i as f64 + length)).collect()
}

fn parse_leg(text: &str) -> Result<Leg> {
    let bad = |e: std::num::ParseFloatError| Error::Config(format!("bad leg {text:?}: {e}"));
    match text.split_once(':') {
        Some((a, b)) => Ok(Leg::Period {
            start: a.trim().parse().map_err(bad)?,
            end: b.trim().parse().map_err(bad)?,
        }),
        None => Ok(Leg::Instant {
            maturity: text.trim().parse().map_err(bad)?,
        }),
    }
}

fn parse_horizons(text: &str) -> Result<Vec<u32>> {
    let bad = |_| Error::Config(format!("bad horizons {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u32, u32) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a < 1 || b < a {
            return Err(Error::Config(format!("bad horizon range {text:?}")));
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(bad)).collect()
}

fn write_errors(out: &mut OutputDir, quotes: &DatedQuotes, report: &RelativeErrorReport) -> Result<()> {
    let mut by_date = Csv::new(&["quote_date", "mean_relative_error"]);
    for (d, e) in quotes.dates.iter().zip(&report.per_date) {
        by_date.row(&[d.to_string(), num(*e)]);
    }
    out.write("relative_errors_by_date.csv", &by_date.into_bytes())?;
    let mut by_contract = Csv::new(&["nearby", "count", "mean", "std", "min", "q1", "median", "q3", "max"]);
    for (j, c) in &report.per_contract {
        by_contract.row(&[
            j.to_string(),
            c.count.to_string(),
            num(c.mean),
            num(c.std),
            num(c.min),
            num(c.q1),
            num(c.median),
            num(c.q3),
            num(c.max),
        ]);
    }
    out.write("relative_errors_by_contract.csv", &by_contract.into_bytes())?;
    Ok(())
}

fn run(cli: &Cli, args: Vec<String>) -> Result<()> {
    let (cfg, config_hash) = load_config(cli)?;
    let mut out = OutputDir::create(&cli.out)?;
    let mut seed = None;
    match &cli.command {
        Command::Price { at, start, end, measure: m } => {
            let fm = ForwardModel::new(&cfg.params, &measure(&cfg, *m))?;
            let x = state(&cfg, at)?;
            let price = match end {
                Some(end) => fm.forward_period(at.t, *start, *end, &x)?,
                None => fm.forward_instant(at.t, *start, &x)?,
            };
            println!("{}", num(price));
        }
        Command::Curve { at, first, count, length, measure: m } => {
            let fm = ForwardModel::new(&cfg.params, &measure(&cfg, *m))?;
            let x = state(&cfg, at)?;
            let periods = strip(*first, *count, *length);
            let prices = fm.forward_curve(at.t, &x, &periods)?;
            let mut csv = Csv::new(&["start", "end", "price"]);
            for ((a, b), p) in periods.iter().zip(prices) {
                csv.row(&[num(*a), num(*b), num(p)]);
            }
            out.write("curve.csv", &csv.into_bytes())?;
        }
        Command::Corr { at, legs } => {
            let fm = ForwardModel::new(&cfg.params, &Measure::Q)?;
            let x = state(&cfg, at)?;
            let parsed = legs.iter().map(|l| parse_leg(l)).collect::<Result<Vec<_>>>()?;
            let m = fm.correlation_matrix(at.t, &parsed, &x)?;
            let mut header = vec!["leg"];
            header.extend(legs.iter().map(String::as_str));
            let mut csv = Csv::new(&header);
            for (i, name) in legs.iter().enumerate() {
                let mut row = vec![name.clone()];
                row.extend((0..legs.len()).map(|j| num(m[(i, j)])));
                csv.row(&row);
            }
            out.write("corr.csv", &csv.into_bytes())?;
        }
        Command::Premium { at, first, count, length } => {
            let x = state(&cfg, at)?;
            let mut csv = Csv::new(&["start", "end", "premium"]);
            for (a, b) in strip(*first, *count, *length) {
                let leg = if *length == 0.0 {
                    Leg::Instant { maturity: a }
                } else {
                    Leg::Period { start: a, end: b }
                };
                let r = risk_premium(&cfg.params, &cfg.mpr, at.t, leg, &x)?;
                csv.row(&[num(a), num(b), num(r)]);
            }
            out.write("premium.csv", &csv.into_bytes())?;
        }
        Command::Filter { quotes } => {
            let params = cfg.two_factor()?;
            let q = ingest_quotes(quotes)?;
            let noise = noise_levels(&q.series)?;
            let res = run_filter(&params, &cfg.mpr, &q.series, &noise, &cfg.filter)?;
            out.write_json("filter.json", &FilterReport::from(&res))?;
            let mut prices = Csv::new(&["quote_date", "nearby", "observed", "predicted", "filtered", "relative_error"]);
            for (k, s) in res.states.iter().enumerate() {
                for (i, j) in s.nearby.iter().enumerate() {
                    prices.row(&[
                        q.dates[k].to_string(),
                        j.to_string(),
                        num(s.observed[i]),
                        num(s.predicted_prices[i]),
                        num(s.filtered_prices[i]),
                        num(res.relative_errors[k][i]),
                    ]);
                }
            }
            out.write("model_prices.csv", &prices.into_bytes())?;
            write_errors(&mut out, &q, &relative_errors(&res))?;
        }
        Command::Calibrate { quotes } => {
            cfg.two_factor()?;
            let q = ingest_quotes(quotes)?;
            seed = Some(cfg.calibration.seed);
            let res = calibrate(&q.series, &cfg.calibration)?;
            out.write_json("calibration.json", &res)?;
            out.write("calibrated_params.toml", params_to_toml(&res.params, &res.mpr).as_bytes())?;
            write_errors(&mut out, &q, &res.errors)?;
        }
        Command::Simulate { at_year, dump } => {
            let sim = cfg.simulation;
            seed = Some(sim.seed);
            let mpr = (sim.measure == SimMeasure::P).then_some(&cfg.mpr);
            let step = (at_year * sim.steps_per_year as f64).round() as usize;
            let summary = surface_summary(&cfg.params, mpr, &sim, step)?;
            let mut csv = Csv::new(&["delivery_start", "initial_price", "mean_price", "std_error"]);
            for i in 0..summary.contracts.len() {
                csv.row(&[
                    summary.contracts[i].to_string(),
                    num(summary.initial[i]),
                    num(summary.mean[i]),
                    num(summary.std_error[i]),
                ]);
            }
            out.write("surface_summary.csv", &csv.into_bytes())?;
            if sim.measure == SimMeasure::Q {
                out.write_json("clamp_report.json", &clamp_report(&cfg.params, &sim)?)?;
            }
            if *dump > 0 {
                let small = crate::simhedge::SimConfig { n_paths: (*dump).min(sim.n_paths), ..sim };
                let paths = simulate_paths(&cfg.params, mpr, &small)?;
                let horizon_steps = sim.total_steps();
                let cache = ExpCache::new(&cfg.params, sim.steps_per_year, (sim.nearby as usize) * sim.steps_per_year as usize)?;
                let mut csv = Csv::new(&["path", "step", "time", "nearby", "price"]);
                for (pi, p) in paths.iter().enumerate() {
                    let s = crate::simhedge::forward_surface(p, &cache, sim.nearby)?;
                    for j in 0..=horizon_steps {
                        for (l, price) in s.row(j).iter().enumerate() {
                            csv.row(&[pi.to_string(), j.to_string(), num(s.time(j)), (l + 1).to_string(), num(*price)]);
                        }
                    }
                }
                out.write("surface.csv", &csv.into_bytes())?;
            }
        }
        Command::Hedge { horizons } => {
            let params = cfg.two_factor()?;
            let hs = parse_horizons(horizons)?;
            seed = Some(cfg.simulation.seed);
            let stats = hedge_experiment(&params, &cfg.mpr, &hs, &cfg.simulation)?;
            let mut csv = Csv::new(&["horizon", "hedged_std", "hedged_skew", "unhedged_std", "unhedged_skew"]);
            let mut hist = Csv::new(&["horizon", "exposure", "bin_lower", "bin_upper", "count", "density"]);
            for s in &stats {
                csv.row(&[
                    s.horizon.to_string(),
                    num(s.hedged.std),
                    num(s.hedged.skew),
                    num(s.unhedged.std),
                    num(s.unhedged.skew),
                ]);
                for (kind, h) in [("hedged", &s.hedged_histogram), ("unhedged", &s.unhedged_histogram)] {
                    for b in 0..h.counts.len() {
                        hist.row(&[
                            s.horizon.to_string(),
                            kind.to_string(),
                            num(h.edges[b]),
                            num(h.edges[b + 1]),
                            h.counts[b].to_string(),
                            num(h.density[b]),
                        ]);
                    }
                }
            }
            out.write("exposure_stats.csv", &csv.into_bytes())?;
            out.write("exposure_histograms.csv", &hist.into_bytes())?;
        }
        Command::GenerateQuotes { start, months, nearby, spread, noise_scale } => {
            let params = cfg.two_factor()?;
            if *nearby < 1 || *nearby > crate::qkf::DEFAULT_MAX_NEARBY {
                return Err(Error::Config(format!("--nearby must lie in 1..={}", crate::qkf::DEFAULT_MAX_NEARBY)));
            }
            if !(*spread > 0.0) || !(*noise_scale >= 0.0) {
                return Err(Error::Config("--spread must be positive and --noise-scale nonnegative".into()));
            }
            seed = Some(cfg.simulation.seed);
            let dates = monthly_dates(*start, *months);
            let spreads = vec![*spread; *nearby as usize];
            let syn = synthetic_quotes(&params, &cfg.mpr, &grid(&dates), &spreads, *noise_scale, cfg.simulation.seed)?;
            let dq = DatedQuotes { dates, series: syn.quotes };
            out.write("quotes.csv", quotes_csv(&dq).as_bytes())?;
        }
    }
    let manifest = Manifest {
        subcommand: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        config_sha256: config_hash,
        args,
        outputs: out.written().to_vec(),
        timestamp_unix: timestamp(),
    };
    out.write_json("manifest.json", &manifest)?;
    Ok(())
}
