//! Deterministic oracles for the closed-form machinery. Each check returns
//! the worst error over its random cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polyfwd::linalg::{expm, expm_and_integral, ExpMethod, Matrix, Vector, CLOSED_FORM_MIN_DIAG};
use polyfwd::model::{
    diffusion_matrix, sigma_h, MarketPriceOfRisk, Measure, ModelParams, ThreeFactorParams, TwoFactorParams,
};
use polyfwd::pricing::{forward_instant, forward_period, moment, moment_ode, QuadraticPolynomial};

use super::random_two_factor;

pub fn random_mpr(rng: &mut ChaCha8Rng) -> MarketPriceOfRisk {
    MarketPriceOfRisk {
        lambda_z: rng.random_range(-0.2..0.2),
        lambda_y: rng.random_range(-0.2..0.2),
        gamma_z: rng.random_range(-0.3..0.3),
        gamma_y: rng.random_range(-0.3..0.3),
    }
}

pub fn random_three_factor(rng: &mut ChaCha8Rng) -> ThreeFactorParams {
    ThreeFactorParams {
        c: rng.random_range(0.0..1.0),
        alpha: rng.random_range(0.5..15.0),
        beta: rng.random_range(0.0..1.0),
        kappa_z: rng.random_range(0.005..1.0),
        kappa_y: rng.random_range(0.05..1.5),
        sigma_z: rng.random_range(0.05..1.0),
        sigma_y: rng.random_range(0.05..1.0),
        kappa_r: rng.random_range(0.5..3.0),
        theta_r: rng.random_range(-0.5..0.5),
        sigma_r: rng.random_range(0.05..0.5),
        z0: rng.random_range(-3.0..3.0),
        y0: rng.random_range(-3.0..3.0),
        r0: rng.random_range(-0.9..0.9),
    }
}

/// A random quadratic supported on the basis of `params`.
fn random_quadratic(rng: &mut ChaCha8Rng, params: &ModelParams) -> QuadraticPolynomial {
    let d = params.spec().state_dim();
    let q_lin = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let mut q_mat = Matrix::zeros(d, d);
    for i in 0..2 {
        for j in 0..2 {
            q_mat[(i, j)] = rng.random_range(0.0..1.0);
        }
    }
    QuadraticPolynomial { q0: rng.random_range(5.0..20.0), q_lin, q_mat }
}

/// Matrix-exponential moments against RK4 integration of the moment ODE.
pub fn moments_vs_ode(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (params, measure): (ModelParams, Measure) = match case % 3 {
            0 => (random_two_factor(&mut rng).into(), Measure::Q),
            1 => (random_two_factor(&mut rng).into(), Measure::P(random_mpr(&mut rng))),
            _ => (random_three_factor(&mut rng).into(), Measure::Q),
        };
        let q = random_quadratic(&mut rng, &params);
        let tau = rng.random_range(0.0..10.0);
        let t = rng.random_range(0.0..2.0);
        let x = params.initial_state();
        let coords = q.coordinates(params.spec()).unwrap();
        let closed = moment(&params, &measure, &coords, t, t + tau, &x).unwrap();
        let ode = moment_ode(&params, &measure, &q, t, t + tau, &x).unwrap();
        worst = worst.max((closed - ode).abs() / ode.abs());
    }
    worst
}

fn random_block_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for j in 1..n {
        a[(0, j)] = rng.random_range(-1.0..1.0);
        for i in 1..j {
            a[(i, j)] = rng.random_range(-1.0..1.0);
        }
        let mag = rng.random_range(10.0 * CLOSED_FORM_MIN_DIAG.max(1e-3)..2.0);
        a[(j, j)] = if rng.random_bool(0.8) { -mag } else { mag };
    }
    a
}

/// Closed-form exponential and integral against the exponential of the
/// augmented block matrix `[[A, I], [0, 0]]`, scaled by `max(1, |entry|)`.
pub fn closed_form_vs_augmented(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(2..8);
        let a = random_block_matrix(&mut rng, n);
        let t = rng.random_range(0.01..5.0);
        let got = expm_and_integral(&a, t).unwrap();
        assert_eq!(got.method, ExpMethod::ClosedForm);

        let mut big = Matrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&a);
        big.view_mut((0, n), (n, n)).fill_with_identity();
        let e = expm(&big, t).unwrap();
        for i in 0..n {
            for j in 0..n {
                let y = e[(i, j)];
                worst = worst.max((got.exp[(i, j)] - y).abs() / y.abs().max(1.0));
                let y = e[(i, n + j)];
                worst = worst.max((got.integral[(i, j)] - y).abs() / y.abs().max(1.0));
            }
        }
    }
    worst
}

/// Composite Simpson rule over `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Delivery-period forwards against Simpson quadrature of instantaneous forwards.
pub fn period_vs_quadrature(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table1: ModelParams = TwoFactorParams::table1().into();
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (params, measure) = match case % 4 {
            0 => (table1, Measure::Q),
            1 => (table1, Measure::P(MarketPriceOfRisk::table1())),
            2 => (ModelParams::from(random_two_factor(&mut rng)), Measure::Q),
            _ => (ModelParams::from(random_three_factor(&mut rng)), Measure::Q),
        };
        let t = rng.random_range(0.0..1.0);
        let t1 = t + rng.random_range(0.0..8.0);
        let t2 = t1 + rng.random_range(0.05..2.0);
        let x = params.initial_state();
        let avg = simpson(
            |u| forward_instant(&params, &measure, t, u, &x).unwrap(),
            t1,
            t2,
            400,
        ) / (t2 - t1);
        let closed = forward_period(&params, &measure, t, t1, t2, &x).unwrap();
        worst = worst.max((closed - avg).abs() / avg.abs());
    }
    worst
}

/// Jacobian of the basis map at `x`, one row per basis element.
fn basis_jacobian(params: &ModelParams, x: &[f64]) -> Matrix {
    match params {
        ModelParams::TwoFactor(_) => {
            let (z, y) = (x[0], x[1]);
            #[rustfmt::skip]
            let j = Matrix::from_row_slice(6, 2, &[
                0.0, 0.0,
                1.0, 0.0,
                0.0, 1.0,
                2.0 * z, 0.0,
                y, z,
                0.0, 2.0 * y,
            ]);
            j
        }
        ModelParams::ThreeFactor(_) => {
            let (z, y) = (x[0], x[1]);
            #[rustfmt::skip]
            let j = Matrix::from_row_slice(7, 3, &[
                0.0, 0.0, 0.0,
                1.0, 0.0, 0.0,
                0.0, 1.0, 0.0,
                0.0, 0.0, 1.0,
                2.0 * z, 0.0, 0.0,
                y, z, 0.0,
                0.0, 2.0 * y, 0.0,
            ]);
            j
        }
    }
}

/// Basis covariation `Σ(x)` against `J(x) a(x) J(x)ᵀ`, alternating
/// specifications, scaled by the largest entry.
pub fn sigma_vs_jacobian(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let params: ModelParams = if case % 2 == 0 {
            random_two_factor(&mut rng).into()
        } else {
            random_three_factor(&mut rng).into()
        };
        let mut x: Vec<f64> = (0..params.spec().state_dim()).map(|_| rng.random_range(-4.0..4.0)).collect();
        if let ModelParams::ThreeFactor(_) = params {
            x[2] = rng.random_range(-0.99..0.99);
        }
        let j = basis_jacobian(&params, &x);
        let expected = &j * diffusion_matrix(&params, &x).unwrap() * j.transpose();
        let got = sigma_h(&params, &x).unwrap();
        worst = worst.max((&got - &expected).amax() / expected.amax().max(1.0));
    }
    worst
}
