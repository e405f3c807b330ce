//! TOML run configuration.
//!
//! Model parameters sit at the top level under their conventional names
//! (`c`, `alpha`, `kappa_Z`, `lambda_Y`, ...). Two-factor parameters default to
//! the reference estimates and may be overridden individually; the
//! three-factor specification (`spec = "three_factor"`) requires every
//! parameter. Tables `[simulation]`, `[calibration]` and `[filter]` configure
//! the respective stages.

use serde::Serialize;
use toml::{Table, Value};

use crate::calibrate::CalibrationConfig;
use crate::error::{Error, Result};
use crate::model::{
    validate_mpr, validate_params, MarketPriceOfRisk, ModelParams, ThreeFactorParams, TwoFactorParams,
    ValidationLevel,
};
use crate::qkf::FilterConfig;
use crate::simhedge::SimConfig;

const TWO_FACTOR_KEYS: [&str; 10] = [
    "c", "alpha", "beta", "kappa_Z", "kappa_Y", "sigma_Z", "sigma_Y", "rho", "z0", "y0",
];
const MPR_KEYS: [&str; 4] = ["lambda_Z", "lambda_Y", "gamma_Z", "gamma_Y"];
const THREE_FACTOR_KEYS: [&str; 13] = [
    "c", "alpha", "beta", "kappa_Z", "kappa_Y", "sigma_Z", "sigma_Y", "kappa_R", "theta_R", "sigma_R", "z0",
    "y0", "r0",
];
const TABLES: [&str; 3] = ["simulation", "calibration", "filter"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub mpr: MarketPriceOfRisk,
    pub simulation: SimConfig,
    pub calibration: CalibrationConfig,
    pub filter: FilterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: TwoFactorParams::table1().into(),
            mpr: MarketPriceOfRisk::table1(),
            simulation: SimConfig::default(),
            calibration: CalibrationConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

fn number(table: &Table, key: &str) -> Result<Option<f64>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::Float(f)) => Ok(Some(*f)),
        Some(Value::Integer(i)) => Ok(Some(*i as f64)),
        Some(other) => Err(Error::Config(format!("{key} must be a number, got {}", other.type_str()))),
    }
}

fn required(table: &Table, key: &str) -> Result<f64> {
    number(table, key)?.ok_or_else(|| Error::Config(format!("missing parameter {key}")))
}

fn section<T: serde::de::DeserializeOwned + Default>(table: &Table, key: &str) -> Result<T> {
    match table.get(key) {
        None => Ok(T::default()),
        Some(Value::Table(t)) => t
            .clone()
            .try_into()
            .map_err(|e| Error::Config(format!("[{key}]: {}", e.message()))),
        Some(_) => Err(Error::Config(format!("{key} must be a table"))),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let spec = match table.get("spec") {
            None => "two_factor",
            Some(Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Config("spec must be a string".into())),
        };
        let param_keys: &[&str] = match spec {
            "two_factor" => &TWO_FACTOR_KEYS,
            "three_factor" => &THREE_FACTOR_KEYS,
            other => return Err(Error::Config(format!("unknown spec {other:?}"))),
        };
        for key in table.keys() {
            let known = key == "spec"
                || param_keys.contains(&key.as_str())
                || MPR_KEYS.contains(&key.as_str())
                || TABLES.contains(&key.as_str());
            if !known {
                return Err(Error::Config(format!("unknown key {key:?} for spec {spec}")));
            }
        }

        let mut mpr = MarketPriceOfRisk::table1();
        let params: ModelParams = if spec == "two_factor" {
            let mut p = TwoFactorParams::table1();
            let fields: [(&str, &mut f64); 10] = [
                ("c", &mut p.c),
                ("alpha", &mut p.alpha),
                ("beta", &mut p.beta),
                ("kappa_Z", &mut p.kappa_z),
                ("kappa_Y", &mut p.kappa_y),
                ("sigma_Z", &mut p.sigma_z),
                ("sigma_Y", &mut p.sigma_y),
                ("rho", &mut p.rho),
                ("z0", &mut p.z0),
                ("y0", &mut p.y0),
            ];
            for (k, slot) in fields {
                if let Some(v) = number(&table, k)? {
                    *slot = v;
                }
            }
            p.into()
        } else {
            if MPR_KEYS.iter().any(|k| table.contains_key(*k)) {
                return Err(Error::Config(
                    "market price of risk is not defined for the three-factor specification".into(),
                ));
            }
            mpr = MarketPriceOfRisk::default();
            ThreeFactorParams {
                c: required(&table, "c")?,
                alpha: required(&table, "alpha")?,
                beta: required(&table, "beta")?,
                kappa_z: required(&table, "kappa_Z")?,
                kappa_y: required(&table, "kappa_Y")?,
                sigma_z: required(&table, "sigma_Z")?,
                sigma_y: required(&table, "sigma_Y")?,
                kappa_r: required(&table, "kappa_R")?,
                theta_r: required(&table, "theta_R")?,
                sigma_r: required(&table, "sigma_R")?,
                z0: required(&table, "z0")?,
                y0: required(&table, "y0")?,
                r0: required(&table, "r0")?,
            }
            .into()
        };
        if spec == "two_factor" {
            let fields: [(&str, &mut f64); 4] = [
                ("lambda_Z", &mut mpr.lambda_z),
                ("lambda_Y", &mut mpr.lambda_y),
                ("gamma_Z", &mut mpr.gamma_z),
                ("gamma_Y", &mut mpr.gamma_y),
            ];
            for (k, slot) in fields {
                if let Some(v) = number(&table, k)? {
                    *slot = v;
                }
            }
        }

        let cfg = RunConfig {
            params,
            mpr,
            simulation: section(&table, "simulation")?,
            calibration: section(&table, "calibration")?,
            filter: section(&table, "filter")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let violations = validate_params(&self.params, ValidationLevel::Model);
        if let Some(v) = violations.first() {
            return Err(Error::Config(v.message.clone()));
        }
        if let Some(v) = validate_mpr(&self.mpr).first() {
            return Err(Error::Config(v.message.clone()));
        }
        self.simulation.validate()?;
        self.calibration.resolved_bounds()?;
        if !(self.filter.anchor_dt > 0.0) {
            return Err(Error::Config("filter.anchor_dt must be positive".into()));
        }
        Ok(())
    }

    pub fn two_factor(&self) -> Result<TwoFactorParams> {
        self.params
            .as_two_factor()
            .copied()
            .ok_or_else(|| Error::Config("this command needs the two-factor specification".into()))
    }
}

/// Renders two-factor parameters and market price of risk as a config file.
pub fn params_to_toml(params: &TwoFactorParams, mpr: &MarketPriceOfRisk) -> String {
    let rows = [
        ("c", params.c),
        ("alpha", params.alpha),
        ("beta", params.beta),
        ("kappa_Z", params.kappa_z),
        ("kappa_Y", params.kappa_y),
        ("sigma_Z", params.sigma_z),
        ("sigma_Y", params.sigma_y),
        ("rho", params.rho),
        ("lambda_Z", mpr.lambda_z),
        ("lambda_Y", mpr.lambda_y),
        ("gamma_Z", mpr.gamma_z),
        ("gamma_Y", mpr.gamma_y),
        ("z0", params.z0),
        ("y0", params.y0),
    ];
    let mut out = String::from("spec = \"two_factor\"\n");
    for (k, v) in rows {
        out.push_str(&format!("{k} = {v:?}\n"));
    }
    out
}
