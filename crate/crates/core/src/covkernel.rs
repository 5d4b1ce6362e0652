//! Nonseparable cross-covariance between outputs.
//!
//! Output `i` at `x` and output `j` at `x'` covary as
//!
//! ```text
//! C_ij(x, x') = σ_i σ_j T_ij · exp{-dᵀ (Φ_i⁻¹/2 + Φ_j⁻¹/2)⁻¹ d}
//!               / |(Φ_i/2 + Φ_j/2)(Φ_i⁻¹/2 + Φ_j⁻¹/2)|^{1/4},   d = x - x'
//! ```
//!
//! with diagonal `Φ_i`. The exponent matrix reduces to `Φ_i` when `i == j`,
//! so the entries of `Φ` act as precisions: larger values mean faster decay
//! (`C_ii(x, x') = σ_i² exp(-Σ_k φ_ik d_k²)`).
//!
//! The cross-correlation matrix `T` is parameterized through hypersphere
//! angles: the rows of its Cholesky factor are unit vectors written in
//! spherical coordinates, so any angle vector in `(0, π)` yields a valid
//! correlation matrix and the map is one to one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angles are kept this far away from 0 and π.
pub const ANGLE_MARGIN: f64 = 1e-6;

/// Hypersphere angles ω_rs, row-major over the strict lower triangle
/// (r = 2..K, s = 1..r-1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrAngles {
    k: usize,
    angles: Vec<f64>,
}

/// Number of angles needed for `k` outputs.
pub fn angle_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Position of ω_rs (zero-based, r > s) in the flat angle vector.
pub fn angle_index(r: usize, s: usize) -> usize {
    debug_assert!(s < r);
    r * (r - 1) / 2 + s
}

impl CrossCorrAngles {
    pub fn new(k: usize, angles: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("need at least one output".into()));
        }
        if angles.len() != angle_count(k) {
            return Err(Error::DimensionMismatch(format!(
                "{} outputs need {} angles, got {}",
                k,
                angle_count(k),
                angles.len()
            )));
        }
        if let Some(a) = angles.iter().find(|a| !(a.is_finite() && **a > 0.0 && **a < std::f64::consts::PI)) {
            return Err(Error::InvalidArgument(format!("angle {a} outside (0, π)")));
        }
        Ok(CrossCorrAngles { k, angles })
    }

    /// All angles at π/2, i.e. `T = I`.
    pub fn independent(k: usize) -> Self {
        CrossCorrAngles { k, angles: vec![std::f64::consts::FRAC_PI_2; angle_count(k)] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.angles
    }

    pub fn get(&self, r: usize, s: usize) -> f64 {
        self.angles[angle_index(r, s)]
    }
}

/// A positive-definite matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossCorrMatrix {
    t: DMatrix<f64>,
}

impl CrossCorrMatrix {
    /// Validates symmetry, unit diagonal, bounds and positive definiteness.
    pub fn new(t: DMatrix<f64>) -> Result<Self> {
        let k = t.nrows();
        if k == 0 || t.ncols() != k {
            return Err(Error::DimensionMismatch("correlation matrix must be square".into()));
        }
        for i in 0..k {
            if (t[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "diagonal entry {i} is {} (expected 1)",
                    t[(i, i)]
                )));
            }
            for j in 0..i {
                if (t[(i, j)] - t[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("correlation matrix not symmetric".into()));
                }
                if t[(i, j)].abs() > 1.0 {
                    return Err(Error::InvalidArgument(format!("correlation {} outside [-1, 1]", t[(i, j)])));
                }
            }
        }
        if t.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("cross-correlation matrix".into()));
        }
        Ok(CrossCorrMatrix { t })
    }

    pub fn identity(k: usize) -> Self {
        CrossCorrMatrix { t: DMatrix::identity(k, k) }
    }

    pub fn k(&self) -> usize {
        self.t.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.t[(i, j)]
    }
}

/// Roughness (precision) parameters: row `i` is the diagonal of `Φ_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoughnessParams {
    phi: DMatrix<f64>,
}

impl RoughnessParams {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("roughness parameters must be finite and > 0".into()));
        }
        Ok(RoughnessParams { phi })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::DimensionMismatch("ragged roughness rows".into()));
        }
        Self::new(DMatrix::from_fn(k, l, |i, j| rows[i][j]))
    }

    pub fn k(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.phi.row(i).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }
}

/// Marginal standard deviations σ_i.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalSds {
    sigma: Vec<f64>,
}

impl MarginalSds {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() || sigma.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("marginal standard deviations must be finite and > 0".into()));
        }
        Ok(MarginalSds { sigma })
    }

    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sigma
    }
}

/// Lower-triangular hypersphere factor `E` with unit-norm rows.
pub fn angles_to_factor(omega: &CrossCorrAngles) -> DMatrix<f64> {
    let k = omega.k();
    let mut e = DMatrix::zeros(k, k);
    e[(0, 0)] = 1.0;
    for r in 1..k {
        let mut sin_prod = 1.0;
        for s in 0..r {
            let w = omega.get(r, s);
            e[(r, s)] = w.cos() * sin_prod;
            sin_prod *= w.sin();
        }
        e[(r, r)] = sin_prod;
    }
    e
}

/// `T = E Eᵀ` for the hypersphere factor built from `omega`.
pub fn angles_to_corr(omega: &CrossCorrAngles) -> CrossCorrMatrix {
    let e = angles_to_factor(omega);
    let mut t = &e * e.transpose();
    // exact unit diagonal and symmetry
    let k = t.nrows();
    for i in 0..k {
        t[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (t[(i, j)] + t[(j, i)]);
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
    CrossCorrMatrix { t }
}

/// Inverse of [`angles_to_corr`].
pub fn corr_to_angles(t: &CrossCorrMatrix) -> Result<CrossCorrAngles> {
    let k = t.k();
    let chol = t
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("cross-correlation matrix".into()))?;
    let l = chol.l();
    let mut angles = Vec::with_capacity(angle_count(k));
    for r in 1..k {
        // ω_rs = atan2(‖e_{s+1..r}‖, e_s); the tail norm equals ∏_{q<=s} sin ω_rq
        for s in 0..r {
            let tail = l.view((r, s + 1), (1, r - s)).norm();
            angles.push(tail.atan2(l[(r, s)]));
        }
    }
    let angles =
        angles.into_iter().map(|w| w.clamp(ANGLE_MARGIN, std::f64::consts::PI - ANGLE_MARGIN)).collect();
    CrossCorrAngles::new(k, angles)
}

/// Derivative of `T` with respect to each angle, in storage order.
pub fn corr_angle_jacobian(omega: &CrossCorrAngles) -> Vec<DMatrix<f64>> {
    let k = omega.k();
    let e = angles_to_factor(omega);
    let mut out = Vec::with_capacity(angle_count(k));
    for r in 1..k {
        let w: Vec<f64> = (0..r).map(|s| omega.get(r, s)).collect();
        for t_idx in 0..r {
            // d(row r of E)/d ω_{r,t}
            let mut de = vec![0.0; k];
            for (s, de_s) in de.iter_mut().enumerate().take(r + 1) {
                if s < t_idx {
                    continue;
                }
                let mut prod = 1.0;
                for (q, wq) in w.iter().enumerate().take(s) {
                    prod *= if q == t_idx { wq.cos() } else { wq.sin() };
                }
                *de_s = if s == r {
                    prod
                } else if s == t_idx {
                    -w[s].sin() * prod
                } else {
                    w[s].cos() * prod
                };
            }
            // dT = dE Eᵀ + E dEᵀ, only row/column r change
            let mut dt = DMatrix::zeros(k, k);
            for j in 0..k {
                let v: f64 = (0..k).map(|c| de[c] * e[(j, c)]).sum();
                dt[(r, j)] += v;
                dt[(j, r)] += v;
            }
            out.push(dt);
        }
    }
    out
}

/// Normalizer `|(Φ_i/2 + Φ_j/2)(Φ_i⁻¹/2 + Φ_j⁻¹/2)|^{-1/4}` for diagonal Φ.
pub fn normalizer(phi_i: &[f64], phi_j: &[f64]) -> f64 {
    phi_i
        .iter()
        .zip(phi_j)
        .map(|(a, b)| {
            let am = 0.5 * (a + b);
            let am_inv = 0.5 * (1.0 / a + 1.0 / b);
            (am * am_inv).powf(-0.25)
        })
        .product()
}

/// Per-coordinate exponent weights `2 φ_ik φ_jk / (φ_ik + φ_jk)`.
pub(crate) fn exponent_weights(phi_i: &[f64], phi_j: &[f64]) -> Vec<f64> {
    phi_i.iter().zip(phi_j).map(|(a, b)| 2.0 * a * b / (a + b)).collect()
}

fn check_kernel_args(
    i: usize,
    j: usize,
    dim: usize,
    sigma: &MarginalSds,
    phi: &RoughnessParams,
    t: &CrossCorrMatrix,
) -> Result<()> {
    let k = sigma.k();
    if phi.k() != k || t.k() != k {
        return Err(Error::DimensionMismatch(format!(
            "σ has {} outputs, Φ has {}, T has {}",
            k,
            phi.k(),
            t.k()
        )));
    }
    if i >= k || j >= k {
        return Err(Error::InvalidArgument(format!("output index ({i}, {j}) out of range for {k} outputs")));
    }
    if phi.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "points have {} coordinates but Φ has {}",
            dim,
            phi.dim()
        )));
    }
    Ok(())
}

/// Covariance between output `i` at `xi` and output `j` at `xj`.
pub fn cross_cov(
    xi: &[f64],
    xj: &[f64],
    i: usize,
    j: usize,
    sigma: &MarginalSds,
    phi: &RoughnessParams,
    t: &CrossCorrMatrix,
) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::DimensionMismatch(format!("points of length {} and {}", xi.len(), xj.len())));
    }
    check_kernel_args(i, j, xi.len(), sigma, phi, t)?;
    let pi = phi.row(i);
    let pj = phi.row(j);
    let w = exponent_weights(&pi, &pj);
    let quad: f64 = xi.iter().zip(xj).zip(&w).map(|((a, b), h)| h * (a - b) * (a - b)).sum();
    let s = sigma.as_slice();
    Ok(s[i] * s[j] * t.get(i, j) * normalizer(&pi, &pj) * (-quad).exp())
}

/// Unit-variance spatial kernel between two point sets for output pair
/// `(i, j)`: everything in `C_ij` except `σ_i σ_j T_ij`.
pub(crate) fn spatial_block(
    xa: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    phi_i: &[f64],
    phi_j: &[f64],
) -> DMatrix<f64> {
    let w = exponent_weights(phi_i, phi_j);
    let norm = normalizer(phi_i, phi_j);
    DMatrix::from_fn(xa.nrows(), xb.nrows(), |a, b| {
        let quad: f64 = (0..w.len())
            .map(|c| {
                let d = xa[(a, c)] - xb[(b, c)];
                w[c] * d * d
            })
            .sum();
        norm * (-quad).exp()
    })
}

/// Full covariance over all outputs' points, stacked in output-block order,
/// with `nugget` added to the diagonal.
pub fn cov_matrix(
    xs: &[DMatrix<f64>],
    sigma: &MarginalSds,
    phi: &RoughnessParams,
    t: &CrossCorrMatrix,
    nugget: f64,
) -> Result<DMatrix<f64>> {
    if !(nugget >= 0.0 && nugget.is_finite()) {
        return Err(Error::InvalidArgument(format!("nugget {nugget} must be >= 0")));
    }
    let total: usize = xs.iter().map(DMatrix::nrows).sum();
    let diag = vec![nugget; total];
    cov_matrix_with_diag(xs, sigma, phi, t, &diag)
}

/// Like [`cov_matrix`] with an arbitrary nonnegative diagonal term.
pub(crate) fn cov_matrix_with_diag(
    xs: &[DMatrix<f64>],
    sigma: &MarginalSds,
    phi: &RoughnessParams,
    t: &CrossCorrMatrix,
    diag: &[f64],
) -> Result<DMatrix<f64>> {
    let k = xs.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no outputs".into()));
    }
    let dim = xs[0].ncols();
    if xs.iter().any(|x| x.ncols() != dim) {
        return Err(Error::DimensionMismatch("outputs have different input dimensions".into()));
    }
    check_kernel_args(k - 1, k - 1, dim, sigma, phi, t)?;
    let offsets = block_offsets(xs);
    let total = offsets[k];
    if diag.len() != total {
        return Err(Error::DimensionMismatch("diagonal length".into()));
    }
    let s = sigma.as_slice();
    let mut r = DMatrix::zeros(total, total);
    for i in 0..k {
        for j in 0..=i {
            let tij = t.get(i, j);
            if tij == 0.0 && i != j {
                continue;
            }
            let block = spatial_block(&xs[i], &xs[j], &phi.row(i), &phi.row(j)) * (s[i] * s[j] * tij);
            r.view_mut((offsets[i], offsets[j]), block.shape()).copy_from(&block);
            if i != j {
                r.view_mut((offsets[j], offsets[i]), (block.ncols(), block.nrows()))
                    .copy_from(&block.transpose());
            }
        }
    }
    for (a, d) in diag.iter().enumerate() {
        r[(a, a)] += d;
    }
    Ok(r)
}

pub(crate) fn block_offsets(xs: &[DMatrix<f64>]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(xs.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for x in xs {
        acc += x.nrows();
        offsets.push(acc);
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn table_t() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.0, 0.7592, 0.0575, 0.7592, 1.0, 0.0453, 0.0575, 0.0453, 1.0])
    }

    #[test]
    fn right_angle_gives_identity() {
        let t = angles_to_corr(&CrossCorrAngles::new(2, vec![FRAC_PI_2]).unwrap());
        assert_relative_eq!(t.get(0, 1), 0.0, epsilon = 1e-15);
        assert_eq!(t.get(0, 0), 1.0);
    }

    #[test]
    fn two_outputs_reproduce_table_correlation() {
        let w = 0.7592f64.acos();
        assert_relative_eq!(w, 0.70871, epsilon = 1e-5);
        let t = angles_to_corr(&CrossCorrAngles::new(2, vec![w]).unwrap());
        assert_relative_eq!(t.get(0, 1), 0.7592, epsilon = 1e-14);
    }

    #[test]
    fn three_outputs_solved_by_hand() {
        // ω_21 and ω_31 from the first column; ω_32 from
        // 0.0453 = cos ω_31 cos ω_21 + cos ω_32 sin ω_31 sin ω_21
        let w21 = 0.7592f64.acos();
        let w31 = 0.0575f64.acos();
        let c32 = (0.0453 - w31.cos() * w21.cos()) / (w31.sin() * w21.sin());
        let t = angles_to_corr(&CrossCorrAngles::new(3, vec![w21, w31, c32.acos()]).unwrap());
        assert!((t.matrix() - table_t()).abs().max() < 1e-4);
    }

    #[test]
    fn identity_has_right_angles() {
        let a = corr_to_angles(&CrossCorrMatrix::identity(3)).unwrap();
        for w in a.as_slice() {
            assert_relative_eq!(*w, FRAC_PI_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn table_round_trip() {
        let t = CrossCorrMatrix::new(table_t()).unwrap();
        let back = angles_to_corr(&corr_to_angles(&t).unwrap());
        assert!((back.matrix() - t.matrix()).abs().max() < 1e-10);
    }

    #[test]
    fn near_one_correlation_angle() {
        let t = CrossCorrMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.999, 0.999, 1.0])).unwrap();
        let a = corr_to_angles(&t).unwrap();
        assert_relative_eq!(a.as_slice()[0], 0.999f64.acos(), epsilon = 1e-12);
        assert_relative_eq!(a.as_slice()[0], 0.04473, epsilon = 1e-5);
    }

    #[test]
    fn rejects_bad_angles_and_matrices() {
        assert!(CrossCorrAngles::new(2, vec![0.0]).is_err());
        assert!(CrossCorrAngles::new(2, vec![PI]).is_err());
        assert!(CrossCorrAngles::new(3, vec![1.0]).is_err());
        let not_pd = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(CrossCorrMatrix::new(not_pd).is_err());
    }

    fn params(
        phi: &[Vec<f64>],
        sigma: Vec<f64>,
        t12: f64,
    ) -> (MarginalSds, RoughnessParams, CrossCorrMatrix) {
        let t = CrossCorrMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, t12, t12, 1.0])).unwrap();
        (MarginalSds::new(sigma).unwrap(), RoughnessParams::from_rows(phi).unwrap(), t)
    }

    #[test]
    fn diagonal_case_is_variance() {
        let (s, p, t) = params(&[vec![2.0, 3.0], vec![1.0, 0.5]], vec![1.7, 0.4], 0.3);
        let x = [0.2, 0.9];
        assert_eq!(cross_cov(&x, &x, 0, 0, &s, &p, &t).unwrap(), 1.7 * 1.7);
    }

    #[test]
    fn equal_roughness_collapses_normalizer() {
        let (s, p, t) = params(&[vec![2.0, 3.0], vec![2.0, 3.0]], vec![1.5, 2.0], 0.3);
        let x = [0.2, 0.9];
        assert_relative_eq!(cross_cov(&x, &x, 0, 1, &s, &p, &t).unwrap(), 1.5 * 2.0 * 0.3, epsilon = 1e-15);
    }

    #[test]
    fn hand_evaluated_cross_term() {
        // 0.5 · (2.5 · 0.625)^(-1/4)
        let (s, p, t) = params(&[vec![1.0], vec![4.0]], vec![1.0, 1.0], 0.5);
        let v = cross_cov(&[0.3], &[0.3], 0, 1, &s, &p, &t).unwrap();
        assert_relative_eq!(v, 0.5 * 1.5625f64.powf(-0.25), epsilon = 1e-15);
        assert_relative_eq!(v, 0.44721, epsilon = 1e-5);
    }

    #[test]
    fn cross_cov_rejects_mismatch() {
        let (s, p, t) = params(&[vec![1.0], vec![4.0]], vec![1.0, 1.0], 0.5);
        assert!(cross_cov(&[0.3, 0.1], &[0.3], 0, 1, &s, &p, &t).is_err());
        assert!(cross_cov(&[0.3, 0.1], &[0.3, 0.2], 0, 1, &s, &p, &t).is_err());
        assert!(cross_cov(&[0.3], &[0.3], 0, 2, &s, &p, &t).is_err());
        assert!(RoughnessParams::from_rows(&[vec![0.0]]).is_err());
    }

    #[test]
    fn single_output_duplicate_points() {
        let s = MarginalSds::new(vec![1.3]).unwrap();
        let p = RoughnessParams::from_rows(&[vec![5.0]]).unwrap();
        let x = DMatrix::from_row_slice(2, 1, &[0.4, 0.4]);
        let r = cov_matrix(&[x], &s, &p, &CrossCorrMatrix::identity(1), 0.0).unwrap();
        assert!(r.iter().all(|v| (*v - 1.69).abs() < 1e-14));
    }

    #[test]
    fn identity_correlation_gives_block_diagonal() {
        let (s, p, _) = params(&[vec![1.0], vec![4.0]], vec![1.0, 2.0], 0.5);
        let x = DMatrix::from_row_slice(3, 1, &[0.1, 0.5, 0.8]);
        let r = cov_matrix(&[x.clone(), x], &s, &p, &CrossCorrMatrix::identity(2), 0.1).unwrap();
        assert!(r.view((0, 3), (3, 3)).iter().all(|v| *v == 0.0));
        assert!(r.view((3, 0), (3, 3)).iter().all(|v| *v == 0.0));
        assert_relative_eq!(r[(0, 0)], 1.1, epsilon = 1e-15);
    }

    #[test]
    fn angle_jacobian_matches_differences() {
        let omega = CrossCorrAngles::new(4, vec![0.7, 1.2, 2.1, 0.4, 1.9, 2.8]).unwrap();
        let jac = corr_angle_jacobian(&omega);
        let h = 1e-6;
        for (idx, d) in jac.iter().enumerate() {
            let mut up = omega.as_slice().to_vec();
            let mut dn = up.clone();
            up[idx] += h;
            dn[idx] -= h;
            let tu = angles_to_corr(&CrossCorrAngles::new(4, up).unwrap());
            let td = angles_to_corr(&CrossCorrAngles::new(4, dn).unwrap());
            let fd = (tu.matrix() - td.matrix()) / (2.0 * h);
            assert!((fd - d).abs().max() < 1e-8, "angle {idx}");
        }
    }
}
