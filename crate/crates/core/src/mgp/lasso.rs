//! L1-penalized generalized least squares for the trend coefficients.
//!
//! With `R = LLᵀ`, whitening by `L⁻¹` turns
//! `½ (y - Fβ)ᵀ R⁻¹ (y - Fβ) + λ‖β‖₁` into an ordinary lasso on
//! `(L⁻¹F, L⁻¹y)`, solved by cyclic coordinate descent with
//! soft-thresholding.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100_000;
const TOL: f64 = 1e-12;

/// `S(z, γ) = sign(z) · max(|z| - γ, 0)`
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn whiten(
    r_chol: &Cholesky<f64, Dyn>,
    f: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let l = r_chol.l();
    if l.nrows() != f.nrows() || l.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "factor of size {}, trend matrix with {} rows, {} observations",
            l.nrows(),
            f.nrows(),
            y.len()
        )));
    }
    let fw = l
        .solve_lower_triangular(f)
        .ok_or_else(|| Error::NotPositiveDefinite("singular covariance factor".into()))?;
    let yw = l
        .solve_lower_triangular(y)
        .ok_or_else(|| Error::NotPositiveDefinite("singular covariance factor".into()))?;
    Ok((fw, yw))
}

/// Smallest λ at which every coefficient is zero: `max_j |F̃_jᵀ ỹ|`.
pub fn lambda_max(r_chol: &Cholesky<f64, Dyn>, f: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let (fw, yw) = whiten(r_chol, f, y)?;
    // same per-column products as the descent's first sweep, so β = 0 exactly at λ_max
    Ok(fw.column_iter().map(|c| c.dot(&yw).abs()).fold(0.0, f64::max))
}

/// Minimizes `½ (y - Fβ)ᵀ R⁻¹ (y - Fβ) + λ‖β‖₁`.
///
/// At `λ = 0` this is the closed-form GLS estimate `(FᵀR⁻¹F)⁻¹FᵀR⁻¹y`.
pub fn gls_beta_l1(
    r_chol: &Cholesky<f64, Dyn>,
    f: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    let (fw, yw) = whiten(r_chol, f, y)?;
    if lambda == 0.0 {
        return gls_closed_form(&fw, &yw);
    }
    Ok(coordinate_descent(&fw, &yw, lambda))
}

fn gls_closed_form(fw: &DMatrix<f64>, yw: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = fw.transpose() * fw;
    let q = gram.nrows();
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(format!("FᵀR⁻¹F ({q}×{q}) is singular")))?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v * v));
    if min_pivot < 1e-13 * scale {
        return Err(Error::RankDeficient(format!("FᵀR⁻¹F ({q}×{q}) is numerically singular")));
    }
    Ok(chol.solve(&(fw.transpose() * yw)))
}

fn coordinate_descent(fw: &DMatrix<f64>, yw: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let q = fw.ncols();
    let col_sq: Vec<f64> = (0..q).map(|j| fw.column(j).norm_squared()).collect();
    let mut beta = DVector::zeros(q);
    let mut resid = yw.clone();
    let y_scale = 1.0 + yw.norm();
    for _ in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..q {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = fw.column(j);
            let old = beta[j];
            let rho = col.dot(&resid) + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs() * col_sq[j].sqrt());
            }
        }
        if max_change <= TOL * y_scale {
            break;
        }
    }
    beta
}
