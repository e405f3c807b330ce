use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polyfwd::calibrate::{calibrate, CalibrationConfig, PARAM_NAMES, to_vector};
use polyfwd::cli::quotes::read_quotes;
use polyfwd::model::{MarketPriceOfRisk, TwoFactorParams};
use polyfwd::qkf::{
    monthly_grid, noise_levels, run_filter, synthetic_quotes, FilterConfig, NoiseModel, QuoteDate, QuoteSeries,
};

fn synthetic(months: usize, nearby: usize, seed: u64) -> QuoteSeries {
    let spreads: Vec<f64> = (0..nearby).map(|j| 0.2 + 0.05 * j as f64).collect();
    synthetic_quotes(
        &TwoFactorParams::table1(),
        &MarketPriceOfRisk::table1(),
        &monthly_grid(months),
        &spreads,
        1.0,
        seed,
    )
    .unwrap()
    .quotes
}

#[test]
fn noise_levels_match_brute_force_averages() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = synthetic(30, 6, 1);
    let dates: Vec<QuoteDate> = base
        .dates()
        .iter()
        .map(|d| {
            let mut d = d.clone();
            for q in d.quotes.values_mut() {
                q.spread = if rng.random_bool(0.2) { None } else { Some(rng.random_range(0.0..2.0)) };
            }
            d
        })
        .collect();
    let series = QuoteSeries::new(dates).unwrap();
    let noise = noise_levels(&series).unwrap();

    let all: Vec<(u32, f64)> = series
        .dates()
        .iter()
        .flat_map(|d| d.quotes.iter().filter_map(|(&j, q)| q.spread.map(|s| (j, s))))
        .collect();
    let overall = all.iter().map(|p| p.1).sum::<f64>() / all.len() as f64;
    for (k, d) in series.dates().iter().enumerate() {
        for (&j, q) in &d.quotes {
            let own_contract: Vec<f64> = all.iter().filter(|p| p.0 == j).map(|p| p.1).collect();
            let mean_j = own_contract.iter().sum::<f64>() / own_contract.len() as f64;
            let own = q.spread.unwrap_or(mean_j);
            let expected = ((own + mean_j + overall) / 3.0).sqrt();
            let got = noise.level(k, j).unwrap();
            assert!((got - expected).abs() < 1e-14, "date {k} nearby {j}: {got} vs {expected}");
        }
    }
}

#[test]
fn missing_quote_equals_uninformative_quote() {
    let full = synthetic(24, 5, 8);
    let (k_miss, j_miss) = (7, 3);
    let mut dates = full.dates().to_vec();
    dates[k_miss].quotes.remove(&j_miss);
    let thinned = QuoteSeries::new(dates).unwrap();

    let thin_noise = noise_levels(&thinned).unwrap();
    let mut levels = thin_noise.levels.clone();
    levels[k_miss].insert(j_miss, 1e7);
    let full_noise = NoiseModel { levels };

    let p = TwoFactorParams::table1();
    let m = MarketPriceOfRisk::table1();
    let cfg = FilterConfig::default();
    let a = run_filter(&p, &m, &thinned, &thin_noise, &cfg).unwrap();
    let b = run_filter(&p, &m, &full, &full_noise, &cfg).unwrap();
    for (sa, sb) in a.states.iter().zip(&b.states) {
        for i in 0..sa.x_filt.len() {
            let (x, y) = (sa.x_filt[i], sb.x_filt[i]);
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "date {}: {x} vs {y}", sa.date_index);
        }
    }
    assert_eq!(a.states[k_miss].nearby, vec![1, 2, 4, 5]);
}

#[test]
fn row_order_does_not_matter() {
    let series = synthetic(18, 4, 3);
    let mut rows = Vec::new();
    for (k, d) in series.dates().iter().enumerate() {
        let date = chrono::NaiveDate::from_ymd_opt(2012, 1, 1).unwrap() + chrono::Months::new(k as u32);
        for (j, q) in &d.quotes {
            rows.push(format!("{date},{j},{:.16e},{:.16e}", q.price, q.spread.unwrap()));
        }
    }
    let header = "quote_date,nearby,price,spread";
    let ordered = format!("{header}\n{}\n", rows.join("\n"));
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(12));
    let shuffled = format!("{header}\n{}\n", rows.join("\n"));
    let a = read_quotes(ordered.as_bytes()).unwrap();
    let b = read_quotes(shuffled.as_bytes()).unwrap();
    assert_eq!(a, b);

    let p = TwoFactorParams::table1();
    let m = MarketPriceOfRisk::table1();
    let na = noise_levels(&a.series).unwrap();
    let fa = run_filter(&p, &m, &a.series, &na, &FilterConfig::default()).unwrap();
    let fb = run_filter(&p, &m, &b.series, &noise_levels(&b.series).unwrap(), &FilterConfig::default()).unwrap();
    assert_eq!(fa.log_likelihood.to_bits(), fb.log_likelihood.to_bits());
}

#[test]
fn calibrated_objectives_match_a_fresh_filter_run() {
    let series = synthetic(24, 5, 21);
    let truth = to_vector(&TwoFactorParams::table1(), &MarketPriceOfRisk::table1());
    let bounds: BTreeMap<String, [f64; 2]> = PARAM_NAMES
        .iter()
        .zip(truth)
        .map(|(n, v)| (n.to_string(), [v - 0.05 * v.abs(), v + 0.05 * v.abs()]))
        .collect();
    let cfg = CalibrationConfig {
        bounds,
        population: Some(20),
        ls_generations: 5,
        ml_generations: 5,
        seed: 3,
        ..CalibrationConfig::default()
    };
    let res = calibrate(&series, &cfg).unwrap();
    let noise = noise_levels(&series).unwrap();
    let out = run_filter(&res.params, &res.mpr, &series, &noise, &cfg.filter).unwrap();
    assert!((out.log_likelihood - res.log_likelihood).abs() <= 1e-12 * res.log_likelihood.abs());
    assert!((out.ls_error - res.ls_error).abs() <= 1e-12 * res.ls_error.abs());
    let best_ml = *res.ml_trajectory.last().unwrap();
    assert!((best_ml + res.log_likelihood).abs() <= 1e-12 * best_ml.abs());
    assert!((res.errors.overall - out.mean_relative_error()).abs() < 1e-15);

    let again = calibrate(&series, &cfg).unwrap();
    assert_eq!(again, res);
}

#[test]
fn true_parameters_fit_synthetic_prices() {
    let series = synthetic(60, 10, 2);
    let noise = noise_levels(&series).unwrap();
    let out = run_filter(
        &TwoFactorParams::table1(),
        &MarketPriceOfRisk::table1(),
        &series,
        &noise,
        &FilterConfig::default(),
    )
    .unwrap();
    assert!(out.mean_relative_error() < 0.01, "{}", out.mean_relative_error());
    assert!(out.states.iter().all(|s| s.min_eigenvalue >= -1e-10));
}
