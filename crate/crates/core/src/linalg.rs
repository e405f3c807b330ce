//! Dense linear-algebra kernel for generator matrices and the augmented filter.
//!
//! Generator matrices on a monomial basis that contains the constant are
//! upper-triangular with a zero first column, so they are singular. Their
//! exponentials and time-integrals are computed either through a closed form
//! for that block shape or through the augmented-matrix identity
//!
//! ```text
//! exp([[A, I], [0, 0]] t) = [[e^{At}, ∫₀ᵗ e^{As} ds], [0, I]]
//! ```
//!
//! `vec` stacks columns; every Kronecker identity used by the filter assumes
//! this convention.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Diagonal magnitude of the trailing block below which the closed form is never used.
pub const DIAG_TOL: f64 = 1e-10;

/// Below this diagonal magnitude the closed form loses accuracy through `C⁻¹`,
/// so the augmented path is used instead.
pub const CLOSED_FORM_MIN_DIAG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpMethod {
    ClosedForm,
    AugmentedGeneric,
}

/// `e^{At}` together with `∫₀ᵗ e^{As} ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredExp {
    pub exp: Matrix,
    pub integral: Matrix,
    pub method: ExpMethod,
}

fn check_square_finite(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::InvalidInput("matrix must have dimension >= 1".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// `e^{At}` by Padé scaling and squaring.
pub fn expm(a: &Matrix, t: f64) -> Result<Matrix> {
    check_square_finite(a)?;
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!("time must be finite, got {t}")));
    }
    if t == 0.0 {
        return Ok(Matrix::identity(a.nrows(), a.nrows()));
    }
    Ok((a * t).exp())
}

/// True when `a` has the block shape `[[0, bᵀ], [0, C]]` with `C` upper-triangular.
fn has_constant_block_shape(a: &Matrix) -> bool {
    let n = a.nrows();
    if n < 2 || a[(0, 0)] != 0.0 {
        return false;
    }
    for i in 1..n {
        if a[(i, 0)] != 0.0 {
            return false;
        }
        for j in 1..i {
            if a[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Exponential and its time-integral, using the closed form when the matrix
/// has the constant-block shape with a well-conditioned trailing block.
pub fn expm_and_integral(a: &Matrix, t: f64) -> Result<StructuredExp> {
    check_square_finite(a)?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidInput(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    let n = a.nrows();
    if t == 0.0 {
        let method = if closed_form_applies(a) {
            ExpMethod::ClosedForm
        } else {
            ExpMethod::AugmentedGeneric
        };
        return Ok(StructuredExp {
            exp: Matrix::identity(n, n),
            integral: Matrix::zeros(n, n),
            method,
        });
    }
    if closed_form_applies(a) {
        Ok(closed_form(a, t))
    } else {
        augmented(a, t)
    }
}

fn closed_form_applies(a: &Matrix) -> bool {
    has_constant_block_shape(a)
        && (1..a.nrows()).all(|i| {
            let d = a[(i, i)].abs();
            d > DIAG_TOL && d >= CLOSED_FORM_MIN_DIAG
        })
}

fn closed_form(a: &Matrix, t: f64) -> StructuredExp {
    let n = a.nrows();
    let m = n - 1;
    let b = a.view((0, 1), (1, m)).into_owned();
    let c = a.view((1, 1), (m, m)).into_owned();

    let exp_c = (&c * t).exp();
    let exp_c_minus_i = &exp_c - Matrix::identity(m, m);
    // C is upper-triangular and invertible here.
    let c_inv_e = c
        .solve_upper_triangular(&exp_c_minus_i)
        .expect("closed form requires nonzero diagonal");
    let c_inv_sq_e = c
        .solve_upper_triangular(&c_inv_e)
        .expect("closed form requires nonzero diagonal");
    let c_inv = c
        .solve_upper_triangular(&Matrix::identity(m, m))
        .expect("closed form requires nonzero diagonal");

    let mut exp = Matrix::zeros(n, n);
    exp[(0, 0)] = 1.0;
    exp.view_mut((0, 1), (1, m)).copy_from(&(&b * &c_inv_e));
    exp.view_mut((1, 1), (m, m)).copy_from(&exp_c);

    let mut integral = Matrix::zeros(n, n);
    integral[(0, 0)] = t;
    let top = &b * &c_inv_sq_e - (&b * &c_inv) * t;
    integral.view_mut((0, 1), (1, m)).copy_from(&top);
    integral.view_mut((1, 1), (m, m)).copy_from(&c_inv_e);

    StructuredExp {
        exp,
        integral,
        method: ExpMethod::ClosedForm,
    }
}

fn augmented(a: &Matrix, t: f64) -> Result<StructuredExp> {
    let n = a.nrows();
    let mut big = Matrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).fill_with_identity();
    let e = expm(&big, t)?;
    Ok(StructuredExp {
        exp: e.view((0, 0), (n, n)).into_owned(),
        integral: e.view((0, n), (n, n)).into_owned(),
        method: ExpMethod::AugmentedGeneric,
    })
}

/// Column-stacking vectorization.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for a matrix with `rows` rows.
pub fn unvec(v: &Vector, rows: usize) -> Result<Matrix> {
    if rows == 0 || v.len() % rows != 0 {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: v.len(),
        });
    }
    Ok(Matrix::from_column_slice(rows, v.len() / rows, v.as_slice()))
}

/// Half-vectorization: lower triangle in column order.
pub fn vech(s: &Matrix) -> Result<Vector> {
    if s.nrows() != s.ncols() {
        return Err(Error::InvalidInput("vech requires a square matrix".into()));
    }
    let d = s.nrows();
    let scale = s.amax().max(1.0);
    for j in 0..d {
        for i in (j + 1)..d {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidInput(format!(
                    "vech requires a symmetric matrix; entries ({i},{j}) and ({j},{i}) differ"
                )));
            }
        }
    }
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            out.push(s[(i, j)]);
        }
    }
    Ok(Vector::from_vec(out))
}

/// Duplication `G_d`, selection `H_d` and commutation `Λ_d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrices {
    pub duplication: Matrix,
    pub selection: Matrix,
    pub commutation: Matrix,
}

/// Position of `(i, j)`, `i >= j`, inside `vech` output.
fn vech_index(d: usize, i: usize, j: usize) -> usize {
    j * d - j * (j + 1) / 2 + i
}

pub fn structural_matrices(d: usize) -> Result<StructuralMatrices> {
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be >= 1".into()));
    }
    let n2 = d * d;
    let nh = d * (d + 1) / 2;
    let mut duplication = Matrix::zeros(n2, nh);
    let mut selection = Matrix::zeros(nh, n2);
    let mut commutation = Matrix::zeros(n2, n2);
    for j in 0..d {
        for i in 0..d {
            let col_major = j * d + i;
            let (lo, hi) = if i >= j { (i, j) } else { (j, i) };
            duplication[(col_major, vech_index(d, lo, hi))] = 1.0;
            if i >= j {
                selection[(vech_index(d, i, j), col_major)] = 1.0;
            }
            // vec(Mᵀ)[j*d+i] = Mᵀ[i,j] = M[j,i] = vec(M)[i*d+j]
            commutation[(col_major, i * d + j)] = 1.0;
        }
    }
    Ok(StructuralMatrices {
        duplication,
        selection,
        commutation,
    })
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &Matrix) -> f64 {
    let sym = (s + s.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Cholesky factor of a (numerically) positive semidefinite matrix.
///
/// Indefiniteness within `1e-8·‖S‖` is repaired by adding `ε·I` with `ε` the
/// smallest power of ten that makes every pivot positive.
pub fn cholesky_psd(s: &Matrix) -> Result<Matrix> {
    check_square_finite(s)?;
    let n = s.nrows();
    let norm = s.amax();
    if (s - s.transpose()).amax() > 1e-12 * norm.max(1.0) {
        return Err(Error::InvalidInput("cholesky_psd requires a symmetric matrix".into()));
    }
    if norm == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let sym = (s + s.transpose()) * 0.5;
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return Ok(ch.l());
    }
    let lambda_min = min_eigenvalue(&sym);
    if lambda_min < -1e-8 * norm {
        return Err(Error::NotPsd {
            eigenvalue: lambda_min,
        });
    }
    let mut exponent = (norm * f64::EPSILON).log10().floor() as i32;
    loop {
        let eps = 10f64.powi(exponent);
        let jittered = &sym + Matrix::identity(n, n) * eps;
        if let Some(ch) = Cholesky::new(jittered) {
            return Ok(ch.l());
        }
        exponent += 1;
        if eps > norm {
            return Err(Error::NotPsd {
                eigenvalue: lambda_min,
            });
        }
    }
}

/// Symmetrize and, if needed, shift by the smallest power-of-ten multiple of
/// the identity that restores positive definiteness. Returns the repaired
/// matrix and the jitter applied (zero when none was needed).
pub fn repair_psd(s: &Matrix) -> (Matrix, f64) {
    let n = s.nrows();
    let sym = (s + s.transpose()) * 0.5;
    if Cholesky::new(sym.clone()).is_some() {
        return (sym, 0.0);
    }
    let norm = sym.amax();
    if norm == 0.0 {
        return (sym, 0.0);
    }
    let mut exponent = (norm * f64::EPSILON).log10().floor() as i32;
    loop {
        let eps = 10f64.powi(exponent);
        let jittered = &sym + Matrix::identity(n, n) * eps;
        if Cholesky::new(jittered.clone()).is_some() || eps > norm {
            return (jittered, eps);
        }
        exponent += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_expm(a: &Matrix, t: f64) -> Matrix {
        // Scale so that ‖A t / 2^s‖ is small, sum 128 terms, then square back.
        let n = a.nrows();
        let norm = (a * t).amax() * n as f64;
        let s = if norm > 0.1 { (norm / 0.1).log2().ceil() as i32 } else { 0 };
        let scaled = a * (t / 2f64.powi(s));
        let mut term = Matrix::identity(n, n);
        let mut sum = Matrix::identity(n, n);
        for k in 1..=128 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = expm(&Matrix::zeros(3, 3), 5.0).unwrap();
        assert_eq!(e, Matrix::identity(3, 3));
    }

    #[test]
    fn exp_of_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let e = expm(&a, 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], 1f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], 2f64.exp(), max_relative = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_matches_taylor_oracle() {
        let a = Matrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.45);
        let e = expm(&a, 0.7).unwrap();
        let oracle = taylor_expm(&a, 0.7);
        let scale = oracle.amax();
        assert!((e - oracle).amax() <= 1e-13 * scale.max(1.0));
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(expm(&a, 1.0), Err(Error::InvalidInput(_))));
        assert!(matches!(expm(&Matrix::zeros(2, 2), f64::INFINITY), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn decoupled_identity_block() {
        let mut a = Matrix::zeros(3, 3);
        a[(1, 1)] = 1.0;
        a[(2, 2)] = 1.0;
        let r = expm_and_integral(&a, 1.0).unwrap();
        assert_eq!(r.method, ExpMethod::ClosedForm);
        let e = 1f64.exp();
        let want_exp = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, e, e]));
        let want_int = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, e - 1.0, e - 1.0]));
        assert!((r.exp - want_exp).amax() < 1e-14);
        assert!((r.integral - want_int).amax() < 1e-14);
    }

    #[test]
    fn zero_time_gives_identity_and_zero() {
        let a = Matrix::from_fn(4, 4, |i, j| if j >= i && i > 0 { -0.3 - i as f64 } else { 0.0 });
        let r = expm_and_integral(&a, 0.0).unwrap();
        assert_eq!(r.exp, Matrix::identity(4, 4));
        assert_eq!(r.integral, Matrix::zeros(4, 4));
    }

    #[test]
    fn small_diagonal_routes_to_augmented() {
        let mut a = Matrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        a[(1, 1)] = -1e-8;
        a[(2, 2)] = -1.0;
        let r = expm_and_integral(&a, 2.0).unwrap();
        assert_eq!(r.method, ExpMethod::AugmentedGeneric);
        // ∫₀² e^{-1e-8 s} ds ≈ 2
        assert_relative_eq!(r.integral[(1, 1)], 2.0, max_relative = 1e-7);
        // top-left block of the integral is t
        assert_relative_eq!(r.integral[(0, 0)], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn general_matrix_uses_augmented_path() {
        let a = Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        let r = expm_and_integral(&a, 1.5).unwrap();
        assert_eq!(r.method, ExpMethod::AugmentedGeneric);
        assert!((r.exp - expm(&a, 1.5).unwrap()).amax() < 1e-13);
    }

    #[test]
    fn vec_and_vech_definitions() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(unvec(&vec(&m), 2).unwrap(), m);
        let s = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]);
        assert_eq!(vech(&s).unwrap().as_slice(), &[1.0, 2.0, 5.0]);
        assert!(matches!(vech(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn structural_matrices_for_d2() {
        let sm = structural_matrices(2).unwrap();
        assert_eq!(sm.duplication.shape(), (4, 3));
        assert_eq!(sm.selection.shape(), (3, 4));
        assert_eq!(sm.commutation.shape(), (4, 4));
        assert_eq!(&sm.selection * &sm.duplication, Matrix::identity(3, 3));
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((&sm.commutation * vec(&m)).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn structural_identities_hold_for_several_dims() {
        for d in 1..=5 {
            let sm = structural_matrices(d).unwrap();
            let m = Matrix::from_fn(d, d, |i, j| (3 * i + 5 * j) as f64 + 1.0);
            let s = &m + m.transpose();
            assert_eq!(&sm.duplication * vech(&s).unwrap(), vec(&s));
            assert_eq!(&sm.selection * vec(&m), {
                let mut v = Vec::new();
                for j in 0..d {
                    for i in j..d {
                        v.push(m[(i, j)]);
                    }
                }
                Vector::from_vec(v)
            });
            assert_eq!(&sm.commutation * vec(&m), vec(&m.transpose()));
        }
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky_psd(&Matrix::identity(3, 3)).unwrap(), Matrix::identity(3, 3));
        let s = Matrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]);
        let l = cholesky_psd(&s).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert!((l - want).amax() < 1e-15);
    }

    #[test]
    fn cholesky_repairs_semidefinite() {
        // rank one
        let v = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let s = &v * v.transpose();
        let l = cholesky_psd(&s).unwrap();
        assert!((&l * l.transpose() - &s).amax() <= 1e-8 * s.amax());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let s = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match cholesky_psd(&s) {
            Err(Error::NotPsd { eigenvalue }) => assert_relative_eq!(eigenvalue, -1.0),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }
}
