//! Conditional moments, forward prices, instantaneous covariances and risk premia.
//!
//! Every price is linear in the basis vector: `F = H(x)ᵀ v` for a coordinate
//! vector `v` obtained from matrix exponentials of the generator. Times are
//! year fractions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, expm_and_integral, Matrix, Vector};
use crate::model::{
    basis_eval, drift_coefficients, generator_matrix, sigma_h, spot_coordinates,
    trace_coefficients, Measure, MarketPriceOfRisk, ModelParams, Specification,
};

/// `q(x) = q0 + q_linᵀx + xᵀ Q x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPolynomial {
    pub q0: f64,
    pub q_lin: Vector,
    pub q_mat: Matrix,
}

impl QuadraticPolynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let xv = Vector::from_column_slice(x);
        self.q0 + self.q_lin.dot(&xv) + xv.dot(&(&self.q_mat * &xv))
    }

    /// Coordinates on the specification's basis. Fails when `q` has monomials
    /// outside the basis (the three-factor basis has no `r²`, `zr`, `yr`).
    pub fn coordinates(&self, spec: Specification) -> Result<Vector> {
        let d = spec.state_dim();
        if self.q_lin.len() != d || self.q_mat.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.q_lin.len(),
            });
        }
        let q = &self.q_mat;
        let sym = |i: usize, j: usize| q[(i, j)] + q[(j, i)];
        match spec {
            Specification::TwoFactor => Ok(Vector::from_vec(vec![
                self.q0,
                self.q_lin[0],
                self.q_lin[1],
                q[(0, 0)],
                sym(0, 1),
                q[(1, 1)],
            ])),
            Specification::ThreeFactor => {
                if q[(2, 2)] != 0.0 || sym(0, 2) != 0.0 || sym(1, 2) != 0.0 {
                    return Err(Error::InvalidInput(
                        "quadratic terms involving r are outside the three-factor basis".into(),
                    ));
                }
                Ok(Vector::from_vec(vec![
                    self.q0,
                    self.q_lin[0],
                    self.q_lin[1],
                    self.q_lin[2],
                    q[(0, 0)],
                    sym(0, 1),
                    q[(1, 1)],
                ]))
            }
        }
    }
}

/// One leg of a covariance: instantaneous delivery at `T` or delivery over `[T1, T2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Leg {
    Instant { maturity: f64 },
    Period { start: f64, end: f64 },
}

fn check_horizon(t: f64, maturity: f64) -> Result<()> {
    if !t.is_finite() || !maturity.is_finite() {
        return Err(Error::InvalidInput("times must be finite".into()));
    }
    if t > maturity {
        return Err(Error::TimeOrder(format!("valuation time {t} after maturity {maturity}")));
    }
    Ok(())
}

fn check_period(t: f64, start: f64, end: f64) -> Result<()> {
    check_horizon(t, start)?;
    if !end.is_finite() || start >= end {
        return Err(Error::TimeOrder(format!(
            "delivery period [{start}, {end}) must satisfy start < end"
        )));
    }
    Ok(())
}

/// Generator, spot coordinates and the measure they belong to.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    params: ModelParams,
    generator: Matrix,
    spot: Vector,
}

impl ForwardModel {
    pub fn new(params: &ModelParams, measure: &Measure) -> Result<Self> {
        Ok(Self {
            params: *params,
            generator: generator_matrix(params, measure)?,
            spot: spot_coordinates(params),
        })
    }

    /// Builds a model from an explicit generator matrix (used for degenerate checks).
    pub fn with_generator(params: &ModelParams, generator: Matrix) -> Result<Self> {
        let n = params.spec().basis_dim();
        if generator.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: generator.nrows(),
            });
        }
        Ok(Self {
            params: *params,
            generator,
            spot: spot_coordinates(params),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    pub fn spot_coordinates(&self) -> &Vector {
        &self.spot
    }

    pub fn spec(&self) -> Specification {
        self.params.spec()
    }

    /// `e^{τG}`.
    pub fn propagator(&self, tau: f64) -> Result<Matrix> {
        expm(&self.generator, tau)
    }

    /// `∫₀^{len} e^{uG} du · p_S`, the undiscounted delivery weight of a contract
    /// delivering over `len` years starting now.
    pub fn delivery_weights(&self, len: f64) -> Result<Vector> {
        if !(len >= 0.0) {
            return Err(Error::TimeOrder(format!("delivery length {len} must be >= 0")));
        }
        let r = expm_and_integral(&self.generator, len)?;
        Ok(r.integral * &self.spot)
    }

    /// `w_ij = ∫_{Ti}^{Tj} e^{uG} du · p_S = e^{Ti G} ∫₀^{Tj−Ti} e^{uG} du · p_S`.
    pub fn weight_vector(&self, ti: f64, tj: f64) -> Result<Vector> {
        if !ti.is_finite() || !tj.is_finite() || ti > tj {
            return Err(Error::TimeOrder(format!("weight interval [{ti}, {tj}] reversed")));
        }
        let base = self.delivery_weights(tj - ti)?;
        Ok(self.propagator(ti)? * base)
    }

    pub fn moment(&self, p: &Vector, t: f64, maturity: f64, x: &[f64]) -> Result<f64> {
        check_horizon(t, maturity)?;
        if p.len() != self.spot.len() {
            return Err(Error::DimensionMismatch {
                expected: self.spot.len(),
                got: p.len(),
            });
        }
        let h = basis_eval(self.spec(), x)?;
        Ok(h.dot(&(self.propagator(maturity - t)? * p)))
    }

    /// Coordinate vector `v` with `price = H(x)ᵀ v` for the given leg at time `t`.
    pub fn price_coordinates(&self, t: f64, leg: Leg) -> Result<Vector> {
        match leg {
            Leg::Instant { maturity } => {
                check_horizon(t, maturity)?;
                Ok(self.propagator(maturity - t)? * &self.spot)
            }
            Leg::Period { start, end } => {
                check_period(t, start, end)?;
                let w = self.delivery_weights(end - start)?;
                Ok(self.propagator(start - t)? * w / (end - start))
            }
        }
    }

    pub fn forward_instant(&self, t: f64, maturity: f64, x: &[f64]) -> Result<f64> {
        let v = self.price_coordinates(t, Leg::Instant { maturity })?;
        Ok(basis_eval(self.spec(), x)?.dot(&v))
    }

    pub fn forward_period(&self, t: f64, start: f64, end: f64, x: &[f64]) -> Result<f64> {
        let v = self.price_coordinates(t, Leg::Period { start, end })?;
        Ok(basis_eval(self.spec(), x)?.dot(&v))
    }

    /// Prices a strip of delivery periods, sharing one integral per distinct
    /// delivery length.
    pub fn forward_curve(&self, t: f64, x: &[f64], periods: &[(f64, f64)]) -> Result<Vec<f64>> {
        let h = basis_eval(self.spec(), x)?;
        let mut weights: Vec<(u64, Vector)> = Vec::new();
        let mut out = Vec::with_capacity(periods.len());
        for &(start, end) in periods {
            check_period(t, start, end)?;
            let len = end - start;
            let key = len.to_bits();
            let w = match weights.iter().find(|(k, _)| *k == key) {
                Some((_, w)) => w.clone(),
                None => {
                    let w = self.delivery_weights(len)?;
                    weights.push((key, w.clone()));
                    w
                }
            };
            let v = self.propagator(start - t)? * w / len;
            out.push(h.dot(&v));
        }
        Ok(out)
    }

    /// Instantaneous covariation rate `d⟨F₁, F₂⟩/dt` at state `x`.
    pub fn inst_covariance(&self, t: f64, leg1: Leg, leg2: Leg, x: &[f64]) -> Result<f64> {
        let v1 = self.price_coordinates(t, leg1)?;
        let v2 = self.price_coordinates(t, leg2)?;
        let sigma = sigma_h(&self.params, x)?;
        Ok(v2.dot(&(&sigma * &v1)))
    }

    pub fn inst_correlation(&self, t: f64, leg1: Leg, leg2: Leg, x: &[f64]) -> Result<f64> {
        let v1 = self.price_coordinates(t, leg1)?;
        let v2 = self.price_coordinates(t, leg2)?;
        let sigma = sigma_h(&self.params, x)?;
        correlation_from(&sigma, &v1, &v2)
    }

    /// Correlation matrix across several legs at a common time and state.
    pub fn correlation_matrix(&self, t: f64, legs: &[Leg], x: &[f64]) -> Result<Matrix> {
        let sigma = sigma_h(&self.params, x)?;
        let coords = legs
            .iter()
            .map(|&leg| self.price_coordinates(t, leg))
            .collect::<Result<Vec<_>>>()?;
        let n = legs.len();
        let mut out = Matrix::identity(n, n);
        for i in 0..n {
            for j in 0..i {
                let c = correlation_from(&sigma, &coords[i], &coords[j])?;
                out[(i, j)] = c;
                out[(j, i)] = c;
            }
            // validates the diagonal leg variance as well
            correlation_from(&sigma, &coords[i], &coords[i])?;
        }
        Ok(out)
    }
}

fn correlation_from(sigma: &Matrix, v1: &Vector, v2: &Vector) -> Result<f64> {
    let var1 = v1.dot(&(sigma * v1));
    let var2 = v2.dot(&(sigma * v2));
    if !(var1 > 0.0) {
        return Err(Error::UndefinedCorrelation { leg: 1 });
    }
    if !(var2 > 0.0) {
        return Err(Error::UndefinedCorrelation { leg: 2 });
    }
    let cov = v2.dot(&(sigma * v1));
    Ok(cov / (var1 * var2).sqrt())
}

pub fn moment(
    params: &ModelParams,
    measure: &Measure,
    p: &Vector,
    t: f64,
    maturity: f64,
    x: &[f64],
) -> Result<f64> {
    ForwardModel::new(params, measure)?.moment(p, t, maturity, x)
}

/// Largest RK4 step used by [`moment_ode`], in years.
pub const ODE_MAX_STEP: f64 = 1e-3;

/// Conditional expectation of a quadratic polynomial by integrating the
/// Riccati-free linear ODE system for `(φ, ψ, π)` with fixed-step RK4.
pub fn moment_ode(
    params: &ModelParams,
    measure: &Measure,
    q: &QuadraticPolynomial,
    t: f64,
    maturity: f64,
    x: &[f64],
) -> Result<f64> {
    check_horizon(t, maturity)?;
    let d = params.spec().state_dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    // validates support on the basis
    q.coordinates(params.spec())?;
    let (b, kappa) = drift_coefficients(params, measure)?;
    let kappa_t = kappa.transpose();

    let deriv = |psi: &Vector, pi: &Matrix| -> (f64, Vector, Matrix) {
        let (a0, a1, a2) = trace_coefficients(params, pi);
        let dphi = psi.dot(&b) + a0;
        let dpsi = -(&kappa_t * psi) + (pi * &b) * 2.0 + a1;
        let dpi = -(pi * &kappa) - &kappa_t * pi + a2;
        (dphi, dpsi, dpi)
    };

    let tau = maturity - t;
    let mut phi = q.q0;
    let mut psi = q.q_lin.clone();
    let mut pi = (&q.q_mat + q.q_mat.transpose()) * 0.5;
    let steps = (tau / ODE_MAX_STEP).ceil() as usize;
    if steps > 0 {
        let h = tau / steps as f64;
        for _ in 0..steps {
            let (k1f, k1s, k1p) = deriv(&psi, &pi);
            let (k2f, k2s, k2p) = deriv(&(&psi + &k1s * (h / 2.0)), &(&pi + &k1p * (h / 2.0)));
            let (k3f, k3s, k3p) = deriv(&(&psi + &k2s * (h / 2.0)), &(&pi + &k2p * (h / 2.0)));
            let (k4f, k4s, k4p) = deriv(&(&psi + &k3s * h), &(&pi + &k3p * h));
            phi += h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
            psi += (k1s + k2s * 2.0 + k3s * 2.0 + k4s) * (h / 6.0);
            pi += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
        }
    }
    let xv = Vector::from_column_slice(x);
    Ok(phi + psi.dot(&xv) + xv.dot(&(&pi * &xv)))
}

pub fn weight_vector(params: &ModelParams, measure: &Measure, ti: f64, tj: f64) -> Result<Vector> {
    ForwardModel::new(params, measure)?.weight_vector(ti, tj)
}

pub fn forward_instant(
    params: &ModelParams,
    measure: &Measure,
    t: f64,
    maturity: f64,
    x: &[f64],
) -> Result<f64> {
    ForwardModel::new(params, measure)?.forward_instant(t, maturity, x)
}

pub fn forward_period(
    params: &ModelParams,
    measure: &Measure,
    t: f64,
    start: f64,
    end: f64,
    x: &[f64],
) -> Result<f64> {
    ForwardModel::new(params, measure)?.forward_period(t, start, end, x)
}

pub fn forward_curve(
    params: &ModelParams,
    measure: &Measure,
    t: f64,
    x: &[f64],
    periods: &[(f64, f64)],
) -> Result<Vec<f64>> {
    ForwardModel::new(params, measure)?.forward_curve(t, x, periods)
}

/// Covariation rate of two forwards under the pricing measure.
pub fn inst_covariance(params: &ModelParams, t: f64, leg1: Leg, leg2: Leg, x: &[f64]) -> Result<f64> {
    ForwardModel::new(params, &Measure::Q)?.inst_covariance(t, leg1, leg2, x)
}

pub fn inst_correlation(params: &ModelParams, t: f64, leg1: Leg, leg2: Leg, x: &[f64]) -> Result<f64> {
    ForwardModel::new(params, &Measure::Q)?.inst_correlation(t, leg1, leg2, x)
}

/// Forward risk premium: pricing-measure expectation of delivered spot minus
/// its real-world expectation.
pub fn risk_premium(
    params: &ModelParams,
    mpr: &MarketPriceOfRisk,
    t: f64,
    leg: Leg,
    x: &[f64],
) -> Result<f64> {
    if params.as_two_factor().is_none() {
        return Err(Error::UnsupportedMeasure);
    }
    let q = ForwardModel::new(params, &Measure::Q)?;
    let p = ForwardModel::new(params, &Measure::P(*mpr))?;
    let diff = q.price_coordinates(t, leg)? - p.price_coordinates(t, leg)?;
    Ok(basis_eval(params.spec(), x)?.dot(&diff))
}
