//! Model specifications: parameters, monomial basis, generator matrices under
//! the pricing and real-world measures, spot map and quadratic-variation matrices.
//!
//! The two-factor state is `(z, y)` with basis `(1, z, y, z², yz, y²)`. The
//! three-factor state adds a Jacobi correlation factor `r` with basis
//! `(1, z, y, r, z², yz, y²)`. The ordering is fixed here and used by every
//! other module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const TWO_FACTOR_BASIS: [&str; 6] = ["1", "z", "y", "z^2", "yz", "y^2"];
pub const THREE_FACTOR_BASIS: [&str; 7] = ["1", "z", "y", "r", "z^2", "yz", "y^2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Specification {
    TwoFactor,
    ThreeFactor,
}

impl Specification {
    pub fn state_dim(self) -> usize {
        match self {
            Specification::TwoFactor => 2,
            Specification::ThreeFactor => 3,
        }
    }

    pub fn basis_dim(self) -> usize {
        self.basis_labels().len()
    }

    pub fn basis_labels(self) -> &'static [&'static str] {
        match self {
            Specification::TwoFactor => &TWO_FACTOR_BASIS,
            Specification::ThreeFactor => &THREE_FACTOR_BASIS,
        }
    }
}

/// Two-factor specification: `Z` drives the long end, `Y` mean-reverts to `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoFactorParams {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "kappa_Z")]
    pub kappa_z: f64,
    #[serde(rename = "kappa_Y")]
    pub kappa_y: f64,
    #[serde(rename = "sigma_Z")]
    pub sigma_z: f64,
    #[serde(rename = "sigma_Y")]
    pub sigma_y: f64,
    pub rho: f64,
    pub z0: f64,
    pub y0: f64,
}

impl TwoFactorParams {
    /// Estimates from German calendar-year baseload forwards, 2010–2018.
    pub fn table1() -> Self {
        Self {
            c: 0.239614,
            alpha: 10.250035,
            beta: 0.176807,
            kappa_z: 0.010022,
            kappa_y: 0.400207,
            sigma_z: 0.406479,
            sigma_y: 0.889130,
            rho: 0.112439,
            z0: 2.358048,
            y0: 2.007557,
        }
    }

    pub fn initial_state(&self) -> [f64; 2] {
        [self.z0, self.y0]
    }
}

/// Three-factor specification with stochastic correlation `R ∈ (−1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeFactorParams {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "kappa_Z")]
    pub kappa_z: f64,
    #[serde(rename = "kappa_Y")]
    pub kappa_y: f64,
    #[serde(rename = "sigma_Z")]
    pub sigma_z: f64,
    #[serde(rename = "sigma_Y")]
    pub sigma_y: f64,
    #[serde(rename = "kappa_R")]
    pub kappa_r: f64,
    #[serde(rename = "theta_R")]
    pub theta_r: f64,
    #[serde(rename = "sigma_R")]
    pub sigma_r: f64,
    pub z0: f64,
    pub y0: f64,
    pub r0: f64,
}

impl ThreeFactorParams {
    pub fn initial_state(&self) -> [f64; 3] {
        [self.z0, self.y0, self.r0]
    }
}

/// Market price of risk `λ(x) = σ(x)⁻¹(γ + Λx)` with `Λ = diag(λ_Z, λ_Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketPriceOfRisk {
    #[serde(rename = "lambda_Z")]
    pub lambda_z: f64,
    #[serde(rename = "lambda_Y")]
    pub lambda_y: f64,
    #[serde(rename = "gamma_Z")]
    pub gamma_z: f64,
    #[serde(rename = "gamma_Y")]
    pub gamma_y: f64,
}

impl MarketPriceOfRisk {
    pub fn table1() -> Self {
        Self {
            lambda_z: 0.089990,
            lambda_y: 0.111842,
            gamma_z: 0.086791,
            gamma_y: 0.127365,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_z == 0.0 && self.lambda_y == 0.0 && self.gamma_z == 0.0 && self.gamma_y == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "spec", rename_all = "snake_case")]
pub enum ModelParams {
    TwoFactor(TwoFactorParams),
    ThreeFactor(ThreeFactorParams),
}

impl From<TwoFactorParams> for ModelParams {
    fn from(p: TwoFactorParams) -> Self {
        ModelParams::TwoFactor(p)
    }
}

impl From<ThreeFactorParams> for ModelParams {
    fn from(p: ThreeFactorParams) -> Self {
        ModelParams::ThreeFactor(p)
    }
}

impl ModelParams {
    pub fn spec(&self) -> Specification {
        match self {
            ModelParams::TwoFactor(_) => Specification::TwoFactor,
            ModelParams::ThreeFactor(_) => Specification::ThreeFactor,
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            ModelParams::TwoFactor(p) => p.initial_state().to_vec(),
            ModelParams::ThreeFactor(p) => p.initial_state().to_vec(),
        }
    }

    /// Spot-map floor `c`.
    pub fn floor(&self) -> f64 {
        match self {
            ModelParams::TwoFactor(p) => p.c,
            ModelParams::ThreeFactor(p) => p.c,
        }
    }

    pub fn as_two_factor(&self) -> Option<&TwoFactorParams> {
        match self {
            ModelParams::TwoFactor(p) => Some(p),
            ModelParams::ThreeFactor(_) => None,
        }
    }
}

/// Pricing measure `Q`, or real-world measure `P` induced by a market price of risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Q,
    P(MarketPriceOfRisk),
}

fn check_dim(spec: Specification, x: &[f64]) -> Result<()> {
    if x.len() != spec.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.state_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Writes the basis monomials at `x` into `out` (no dimension checks).
#[inline]
pub fn basis_into(spec: Specification, x: &[f64], out: &mut [f64]) {
    match spec {
        Specification::TwoFactor => {
            let (z, y) = (x[0], x[1]);
            out[0] = 1.0;
            out[1] = z;
            out[2] = y;
            out[3] = z * z;
            out[4] = y * z;
            out[5] = y * y;
        }
        Specification::ThreeFactor => {
            let (z, y, r) = (x[0], x[1], x[2]);
            out[0] = 1.0;
            out[1] = z;
            out[2] = y;
            out[3] = r;
            out[4] = z * z;
            out[5] = y * z;
            out[6] = y * y;
        }
    }
}

pub fn basis_eval(spec: Specification, x: &[f64]) -> Result<Vector> {
    check_dim(spec, x)?;
    let mut out = vec![0.0; spec.basis_dim()];
    basis_into(spec, x, &mut out);
    Ok(Vector::from_vec(out))
}

/// Matrix representation of the generator on the monomial basis: column `j`
/// holds the coordinates of `𝒢` applied to basis element `j`.
pub fn generator_matrix(params: &ModelParams, measure: &Measure) -> Result<Matrix> {
    match (params, measure) {
        (ModelParams::TwoFactor(p), Measure::Q) => Ok(two_factor_generator(p, &MarketPriceOfRisk::default())),
        (ModelParams::TwoFactor(p), Measure::P(mpr)) => Ok(two_factor_generator(p, mpr)),
        (ModelParams::ThreeFactor(p), Measure::Q) => Ok(three_factor_generator(p)),
        (ModelParams::ThreeFactor(_), Measure::P(_)) => Err(Error::UnsupportedMeasure),
    }
}

fn two_factor_generator(p: &TwoFactorParams, m: &MarketPriceOfRisk) -> Matrix {
    let (kz, ky) = (p.kappa_z, p.kappa_y);
    let (lz, ly, gz, gy) = (m.lambda_z, m.lambda_y, m.gamma_z, m.gamma_y);
    let szz = p.sigma_z * p.sigma_z;
    let syy = p.sigma_y * p.sigma_y;
    let szy = p.rho * p.sigma_y * p.sigma_z;
    #[rustfmt::skip]
    let g = Matrix::from_row_slice(6, 6, &[
        0.0, gz,       gy,       szz,             szy,                         syy,
        0.0, lz - kz,  ky,       2.0 * gz,        gy,                          0.0,
        0.0, 0.0,      ly - ky,  0.0,             gz,                          2.0 * gy,
        0.0, 0.0,      0.0,      2.0 * (lz - kz), ky,                          0.0,
        0.0, 0.0,      0.0,      0.0,             (lz + ly) - (kz + ky),       2.0 * ky,
        0.0, 0.0,      0.0,      0.0,             0.0,                         2.0 * (ly - ky),
    ]);
    g
}

fn three_factor_generator(p: &ThreeFactorParams) -> Matrix {
    let (kz, ky, kr) = (p.kappa_z, p.kappa_y, p.kappa_r);
    let szz = p.sigma_z * p.sigma_z;
    let syy = p.sigma_y * p.sigma_y;
    let szy = p.sigma_y * p.sigma_z;
    #[rustfmt::skip]
    let g = Matrix::from_row_slice(7, 7, &[
        0.0, 0.0, 0.0, kr * p.theta_r, szz,       0.0,        syy,
        0.0, -kz, ky,  0.0,            0.0,       0.0,        0.0,
        0.0, 0.0, -ky, 0.0,            0.0,       0.0,        0.0,
        0.0, 0.0, 0.0, -kr,            0.0,       szy,        0.0,
        0.0, 0.0, 0.0, 0.0,            -2.0 * kz, ky,         0.0,
        0.0, 0.0, 0.0, 0.0,            0.0,       -kz - ky,   2.0 * ky,
        0.0, 0.0, 0.0, 0.0,            0.0,       0.0,        -2.0 * ky,
    ]);
    g
}

/// Coordinates of the spot map `c + αy² + βz²` on the basis.
pub fn spot_coordinates(params: &ModelParams) -> Vector {
    match params {
        ModelParams::TwoFactor(p) => Vector::from_vec(vec![p.c, 0.0, 0.0, p.beta, 0.0, p.alpha]),
        ModelParams::ThreeFactor(p) => {
            Vector::from_vec(vec![p.c, 0.0, 0.0, 0.0, p.beta, 0.0, p.alpha])
        }
    }
}

pub fn spot_price(params: &ModelParams, x: &[f64]) -> Result<f64> {
    let h = basis_eval(params.spec(), x)?;
    Ok(h.dot(&spot_coordinates(params)))
}

/// `a(x) = σ(x)σ(x)ᵀ`.
pub fn diffusion_matrix(params: &ModelParams, x: &[f64]) -> Result<Matrix> {
    check_dim(params.spec(), x)?;
    match params {
        ModelParams::TwoFactor(p) => {
            let c = p.rho * p.sigma_y * p.sigma_z;
            Ok(Matrix::from_row_slice(
                2,
                2,
                &[p.sigma_z * p.sigma_z, c, c, p.sigma_y * p.sigma_y],
            ))
        }
        ModelParams::ThreeFactor(p) => {
            let r = x[2];
            let c = r * p.sigma_y * p.sigma_z;
            #[rustfmt::skip]
            let a = Matrix::from_row_slice(3, 3, &[
                p.sigma_z * p.sigma_z, c,                     0.0,
                c,                     p.sigma_y * p.sigma_y, 0.0,
                0.0,                   0.0,                   p.sigma_r * p.sigma_r * (1.0 - r * r),
            ]);
            Ok(a)
        }
    }
}

/// Instantaneous quadratic covariation `Σ(x)` of the basis vector, `Σ(x)dt = d⟨H(X), H(X)⟩`.
pub fn sigma_h(params: &ModelParams, x: &[f64]) -> Result<Matrix> {
    check_dim(params.spec(), x)?;
    Ok(match params {
        ModelParams::TwoFactor(p) => two_factor_sigma(p, x[0], x[1]),
        ModelParams::ThreeFactor(p) => three_factor_sigma(p, x[0], x[1], x[2]),
    })
}

fn two_factor_sigma(p: &TwoFactorParams, z: f64, y: f64) -> Matrix {
    let szz = p.sigma_z * p.sigma_z;
    let syy = p.sigma_y * p.sigma_y;
    let c = p.rho * p.sigma_y * p.sigma_z;
    let e14 = 2.0 * szz * z;
    let e15 = szz * y + c * z;
    let e16 = 2.0 * c * y;
    let e24 = 2.0 * c * z;
    let e25 = syy * z + c * y;
    let e26 = 2.0 * syy * y;
    let e33 = 4.0 * szz * z * z;
    let e34 = 2.0 * szz * y * z + 2.0 * c * z * z;
    let e35 = 4.0 * c * y * z;
    let e44 = szz * y * y + syy * z * z + 2.0 * c * y * z;
    let e45 = 2.0 * c * y * y + 2.0 * syy * y * z;
    let e55 = 4.0 * syy * y * y;
    #[rustfmt::skip]
    let s = Matrix::from_row_slice(6, 6, &[
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, szz, c,   e14, e15, e16,
        0.0, c,   syy, e24, e25, e26,
        0.0, e14, e24, e33, e34, e35,
        0.0, e15, e25, e34, e44, e45,
        0.0, e16, e26, e35, e45, e55,
    ]);
    s
}

fn three_factor_sigma(p: &ThreeFactorParams, z: f64, y: f64, r: f64) -> Matrix {
    let szz = p.sigma_z * p.sigma_z;
    let syy = p.sigma_y * p.sigma_y;
    let c = p.sigma_y * p.sigma_z * r;
    let rr = p.sigma_r * p.sigma_r * (1.0 - r * r);
    let e15 = 2.0 * szz * z;
    let e16 = szz * y + c * z;
    let e17 = 2.0 * c * y;
    let e25 = 2.0 * c * z;
    let e26 = syy * z + c * y;
    let e27 = 2.0 * syy * y;
    let e55 = 4.0 * szz * z * z;
    let e56 = 2.0 * szz * y * z + 2.0 * c * z * z;
    let e57 = 4.0 * c * y * z;
    let e66 = szz * y * y + syy * z * z + 2.0 * c * y * z;
    let e67 = 2.0 * c * y * y + 2.0 * syy * y * z;
    let e77 = 4.0 * syy * y * y;
    #[rustfmt::skip]
    let s = Matrix::from_row_slice(7, 7, &[
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, szz, c,   0.0, e15, e16, e17,
        0.0, c,   syy, 0.0, e25, e26, e27,
        0.0, 0.0, 0.0, rr,  0.0, 0.0, 0.0,
        0.0, e15, e25, 0.0, e55, e56, e57,
        0.0, e16, e26, 0.0, e56, e66, e67,
        0.0, e17, e27, 0.0, e57, e67, e77,
    ]);
    s
}

/// Drift `b − κx` of the state under the given measure, returned as `(b, κ)`.
pub fn drift_coefficients(params: &ModelParams, measure: &Measure) -> Result<(Vector, Matrix)> {
    match (params, measure) {
        (ModelParams::TwoFactor(p), m) => {
            let mpr = match m {
                Measure::Q => MarketPriceOfRisk::default(),
                Measure::P(mpr) => *mpr,
            };
            let b = Vector::from_vec(vec![mpr.gamma_z, mpr.gamma_y]);
            let kappa = Matrix::from_row_slice(
                2,
                2,
                &[
                    p.kappa_z - mpr.lambda_z,
                    0.0,
                    -p.kappa_y,
                    p.kappa_y - mpr.lambda_y,
                ],
            );
            Ok((b, kappa))
        }
        (ModelParams::ThreeFactor(p), Measure::Q) => {
            let b = Vector::from_vec(vec![0.0, 0.0, p.kappa_r * p.theta_r]);
            #[rustfmt::skip]
            let kappa = Matrix::from_row_slice(3, 3, &[
                p.kappa_z,  0.0,       0.0,
                -p.kappa_y, p.kappa_y, 0.0,
                0.0,        0.0,       p.kappa_r,
            ]);
            Ok((b, kappa))
        }
        (ModelParams::ThreeFactor(_), Measure::P(_)) => Err(Error::UnsupportedMeasure),
    }
}

/// Coefficients of `tr(π a(x)) = a₀ + a₁ᵀx + xᵀa₂x` for symmetric `π`.
pub fn trace_coefficients(params: &ModelParams, pi: &Matrix) -> (f64, Vector, Matrix) {
    match params {
        ModelParams::TwoFactor(p) => {
            let a = Matrix::from_row_slice(
                2,
                2,
                &[
                    p.sigma_z * p.sigma_z,
                    p.rho * p.sigma_y * p.sigma_z,
                    p.rho * p.sigma_y * p.sigma_z,
                    p.sigma_y * p.sigma_y,
                ],
            );
            ((pi * a).trace(), Vector::zeros(2), Matrix::zeros(2, 2))
        }
        ModelParams::ThreeFactor(p) => {
            let srr = p.sigma_r * p.sigma_r;
            let a0 = pi[(0, 0)] * p.sigma_z * p.sigma_z + pi[(1, 1)] * p.sigma_y * p.sigma_y + pi[(2, 2)] * srr;
            let mut a1 = Vector::zeros(3);
            a1[2] = 2.0 * pi[(0, 1)] * p.sigma_y * p.sigma_z;
            let mut a2 = Matrix::zeros(3, 3);
            a2[(2, 2)] = -pi[(2, 2)] * srr;
            (a0, a1, a2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationLevel {
    /// Existence and admissibility conditions of the model.
    Model,
    /// Model conditions plus the calibration ordering `1 ≥ κ_Y ≥ κ_Z ≥ 0`.
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: &'static str,
    pub message: String,
    /// Non-negative size of the violation in parameter units.
    pub magnitude: f64,
}

struct Checker(Vec<Violation>);

impl Checker {
    fn finite(&mut self, name: &'static str, v: f64) {
        if !v.is_finite() {
            self.0.push(Violation {
                constraint: name,
                message: format!("{name} must be finite, got {v}"),
                magnitude: 1.0,
            });
        }
    }

    fn ge(&mut self, constraint: &'static str, lhs: f64, rhs: f64) {
        if lhs.is_finite() && rhs.is_finite() && lhs < rhs {
            self.0.push(Violation {
                constraint,
                message: format!("{constraint} violated: {lhs} < {rhs}"),
                magnitude: rhs - lhs,
            });
        }
    }

    fn gt(&mut self, constraint: &'static str, lhs: f64, rhs: f64) {
        if lhs.is_finite() && rhs.is_finite() && lhs <= rhs {
            self.0.push(Violation {
                constraint,
                message: format!("{constraint} violated: {lhs} <= {rhs}"),
                magnitude: rhs - lhs,
            });
        }
    }

    fn open_unit(&mut self, constraint: &'static str, v: f64) {
        if v.is_finite() && v.abs() >= 1.0 {
            self.0.push(Violation {
                constraint,
                message: format!("{constraint} violated: {v} not in (-1, 1)"),
                magnitude: v.abs() - 1.0,
            });
        }
    }
}

/// Lists every violated constraint; an empty list means the parameters are admissible.
pub fn validate_params(params: &ModelParams, level: ValidationLevel) -> Vec<Violation> {
    let mut ck = Checker(Vec::new());
    match params {
        ModelParams::TwoFactor(p) => {
            for (n, v) in [
                ("c", p.c),
                ("alpha", p.alpha),
                ("beta", p.beta),
                ("kappa_Z", p.kappa_z),
                ("kappa_Y", p.kappa_y),
                ("sigma_Z", p.sigma_z),
                ("sigma_Y", p.sigma_y),
                ("rho", p.rho),
                ("z0", p.z0),
                ("y0", p.y0),
            ] {
                ck.finite(n, v);
            }
            ck.ge("c >= 0", p.c, 0.0);
            ck.ge("alpha >= 0", p.alpha, 0.0);
            ck.ge("beta >= 0", p.beta, 0.0);
            ck.gt("sigma_Z > 0", p.sigma_z, 0.0);
            ck.gt("sigma_Y > 0", p.sigma_y, 0.0);
            ck.open_unit("rho in (-1, 1)", p.rho);
            if level == ValidationLevel::Calibration {
                ck.ge("kappa_Z >= 0", p.kappa_z, 0.0);
                ck.ge("kappa_Y >= kappa_Z", p.kappa_y, p.kappa_z);
                ck.ge("1 >= kappa_Y", 1.0, p.kappa_y);
            }
        }
        ModelParams::ThreeFactor(p) => {
            for (n, v) in [
                ("c", p.c),
                ("alpha", p.alpha),
                ("beta", p.beta),
                ("kappa_Z", p.kappa_z),
                ("kappa_Y", p.kappa_y),
                ("sigma_Z", p.sigma_z),
                ("sigma_Y", p.sigma_y),
                ("kappa_R", p.kappa_r),
                ("theta_R", p.theta_r),
                ("sigma_R", p.sigma_r),
                ("z0", p.z0),
                ("y0", p.y0),
                ("r0", p.r0),
            ] {
                ck.finite(n, v);
            }
            ck.ge("c >= 0", p.c, 0.0);
            ck.ge("alpha >= 0", p.alpha, 0.0);
            ck.ge("beta >= 0", p.beta, 0.0);
            ck.gt("sigma_Z > 0", p.sigma_z, 0.0);
            ck.gt("sigma_Y > 0", p.sigma_y, 0.0);
            ck.gt("kappa_R > 0", p.kappa_r, 0.0);
            ck.gt("sigma_R > 0", p.sigma_r, 0.0);
            ck.open_unit("theta_R in (-1, 1)", p.theta_r);
            ck.open_unit("r0 in (-1, 1)", p.r0);
            let s2 = p.sigma_r * p.sigma_r;
            ck.ge("kappa_R(1+theta_R) >= sigma_R^2", p.kappa_r * (1.0 + p.theta_r), s2);
            ck.ge("kappa_R(1-theta_R) >= sigma_R^2", p.kappa_r * (1.0 - p.theta_r), s2);
            if level == ValidationLevel::Calibration {
                ck.ge("kappa_Z >= 0", p.kappa_z, 0.0);
                ck.ge("kappa_Y >= kappa_Z", p.kappa_y, p.kappa_z);
                ck.ge("1 >= kappa_Y", 1.0, p.kappa_y);
            }
        }
    }
    ck.0
}

pub fn validate_mpr(mpr: &MarketPriceOfRisk) -> Vec<Violation> {
    let mut ck = Checker(Vec::new());
    ck.finite("lambda_Z", mpr.lambda_z);
    ck.finite("lambda_Y", mpr.lambda_y);
    ck.finite("gamma_Z", mpr.gamma_z);
    ck.finite("gamma_Y", mpr.gamma_y);
    ck.0
}
