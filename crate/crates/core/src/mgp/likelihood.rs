//! Penalized log-likelihood of the stacked model and its gradient.
//!
//! Replicated observations are handled exactly through their group means:
//! for a design point observed `m` times with iid noise `τ²`, rotating the
//! replicates onto their mean and the orthogonal contrasts splits the
//! Gaussian density into
//!
//! ```text
//! log N(ȳ; F̄β, K + τ² diag(1/m)) - ½ Σ log m
//!     - (N - G)/2 · log(2π τ²) - SS_within / (2τ²)
//! ```
//!
//! which equals the density of the full stacked vector with covariance
//! `K ⊗ J + τ² I` but needs only a `G × G` factorization (`G` distinct
//! points, `N` observations).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::basis::{block_diag_f, RegressionBasis};
use super::dataset::{group_rows, Dataset};
use crate::covkernel::{
    angle_count, angles_to_corr, corr_angle_jacobian, exponent_weights, normalizer, CrossCorrAngles,
    CrossCorrMatrix, MarginalSds, RoughnessParams, ANGLE_MARGIN,
};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Every estimable quantity of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct MgpParams {
    /// Trend coefficients per output.
    pub beta: Vec<DVector<f64>>,
    pub sigma: MarginalSds,
    pub phi: RoughnessParams,
    pub omega: CrossCorrAngles,
    /// Observation-noise variance σ_ε², shared by all outputs.
    pub nugget: f64,
    /// L1 penalty weight λ.
    pub lambda: f64,
}

impl MgpParams {
    pub fn k(&self) -> usize {
        self.sigma.k()
    }

    pub fn t(&self) -> CrossCorrMatrix {
        angles_to_corr(&self.omega)
    }

    pub fn beta_flat(&self) -> DVector<f64> {
        let all: Vec<f64> = self.beta.iter().flat_map(|b| b.iter().copied()).collect();
        DVector::from_vec(all)
    }

    pub fn beta_l1(&self) -> f64 {
        self.beta.iter().flat_map(|b| b.iter()).map(|v| v.abs()).sum()
    }

    pub(crate) fn check(&self, k: usize, l: usize, widths: &[usize]) -> Result<()> {
        if self.sigma.k() != k || self.phi.k() != k || self.omega.k() != k || self.beta.len() != k {
            return Err(Error::DimensionMismatch(format!("parameters do not describe {k} outputs")));
        }
        if self.phi.dim() != l {
            return Err(Error::DimensionMismatch(format!(
                "Φ has {} columns, data has {l} inputs",
                self.phi.dim()
            )));
        }
        for (b, w) in self.beta.iter().zip(widths) {
            if b.len() != *w {
                return Err(Error::DimensionMismatch(format!(
                    "β block of length {} for a basis of width {w}",
                    b.len()
                )));
            }
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::InvalidArgument("nugget must be >= 0".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        Ok(())
    }

    pub(crate) fn cov_parts(&self) -> CovParts {
        CovParts {
            sigma: self.sigma.clone(),
            phi: self.phi.clone(),
            omega: self.omega.clone(),
            nugget: self.nugget,
        }
    }

    pub(crate) fn split_beta(flat: &DVector<f64>, widths: &[usize]) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(widths.len());
        let mut at = 0;
        for w in widths {
            out.push(flat.rows(at, *w).into_owned());
            at += w;
        }
        out
    }
}

/// Replicate-collapsed view of a dataset.
#[derive(Clone, Debug)]
pub(crate) struct Collapsed {
    /// Distinct points per output.
    pub xs: Vec<DMatrix<f64>>,
    /// Group means, stacked in output-block order.
    pub ybar: DVector<f64>,
    /// Group sizes, stacked like `ybar`.
    pub counts: Vec<f64>,
    /// Output index of each stacked row.
    pub block: Vec<usize>,
    /// Collapsed trend matrix.
    pub f: DMatrix<f64>,
    pub widths: Vec<usize>,
    /// Within-group sum of squares over all outputs.
    pub ss_within: f64,
    pub n_obs: usize,
}

impl Collapsed {
    pub fn new(data: &Dataset, basis: &RegressionBasis) -> Result<Self> {
        let mut xs = Vec::with_capacity(data.k());
        let mut ybar = Vec::new();
        let mut counts = Vec::new();
        let mut block = Vec::new();
        let mut ss_within = 0.0;
        for k in 0..data.k() {
            let groups = group_rows(&data.x[k]);
            let firsts: Vec<usize> = groups.iter().map(|g| g[0]).collect();
            xs.push(data.x[k].select_rows(&firsts));
            for g in &groups {
                let m = g.len() as f64;
                let mean = g.iter().map(|&r| data.y[k][r]).sum::<f64>() / m;
                ss_within += g.iter().map(|&r| (data.y[k][r] - mean).powi(2)).sum::<f64>();
                ybar.push(mean);
                counts.push(m);
                block.push(k);
            }
        }
        let f = block_diag_f(&xs, basis)?;
        Ok(Collapsed {
            widths: basis.widths(data.dim()),
            xs,
            ybar: DVector::from_vec(ybar),
            counts,
            block,
            f,
            ss_within,
            n_obs: data.n_total(),
        })
    }

    pub fn groups(&self) -> usize {
        self.counts.len()
    }

    pub fn replicated(&self) -> bool {
        self.n_obs > self.groups()
    }

    pub fn k(&self) -> usize {
        self.xs.len()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].ncols()
    }

    /// Unit-variance spatial kernel between all distinct points.
    fn spatial(&self, phi: &RoughnessParams) -> DMatrix<f64> {
        let g = self.groups();
        let k = self.k();
        let rows: Vec<(usize, usize)> =
            self.xs.iter().enumerate().flat_map(|(b, x)| (0..x.nrows()).map(move |r| (b, r))).collect();
        let mut weights = vec![Vec::new(); k * k];
        let mut norms = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                weights[i * k + j] = exponent_weights(&phi.row(i), &phi.row(j));
                norms[i * k + j] = normalizer(&phi.row(i), &phi.row(j));
            }
        }
        let mut s = DMatrix::zeros(g, g);
        for a in 0..g {
            let (ia, ra) = rows[a];
            for b in 0..=a {
                let (ib, rb) = rows[b];
                let w = &weights[ia * k + ib];
                let mut quad = 0.0;
                for (c, wc) in w.iter().enumerate() {
                    let d = self.xs[ia][(ra, c)] - self.xs[ib][(rb, c)];
                    quad += wc * d * d;
                }
                let v = norms[ia * k + ib] * (-quad).exp();
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
        }
        s
    }

    /// Collapsed covariance `K + τ² diag(1/m)` and the spatial kernel.
    pub fn covariance(
        &self,
        sigma: &MarginalSds,
        phi: &RoughnessParams,
        t: &CrossCorrMatrix,
        nugget: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = self.spatial(phi);
        let sd = sigma.as_slice();
        let g = self.groups();
        let mut r = DMatrix::zeros(g, g);
        for a in 0..g {
            let i = self.block[a];
            for b in 0..g {
                let j = self.block[b];
                r[(a, b)] = sd[i] * sd[j] * t.get(i, j) * s[(a, b)];
            }
            r[(a, a)] += nugget / self.counts[a];
        }
        (r, s)
    }
}

/// Cholesky with escalating diagonal jitter: 1e-10 up to 1e-6 times the
/// mean diagonal. Returns the factor and the jitter used.
pub(crate) fn factorize(r: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = r.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let n = r.nrows();
    let mean_diag = r.diagonal().sum() / n.max(1) as f64;
    let mut rel = 1e-10;
    while rel <= 1e-6 * 1.000_001 {
        let jitter = rel * mean_diag;
        let mut rj = r.clone();
        for i in 0..n {
            rj[(i, i)] += jitter;
        }
        if let Some(c) = rj.cholesky() {
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!("covariance of size {n} failed to factorize even with jitter")))
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Layout of the unconstrained optimization vector:
/// `[ln σ (K), ln φ (K·l, row-major), angle logits (K(K-1)/2), ln τ²]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub k: usize,
    pub l: usize,
}

pub(crate) const LN_SIGMA_BOUNDS: (f64, f64) = (-9.210_340_371_976_182, 6.907_755_278_982_137); // 1e-4 .. 1e3
pub(crate) const LN_PHI_BOUNDS: (f64, f64) = (-6.907_755_278_982_137, 6.907_755_278_982_137); // 1e-3 .. 1e3
pub(crate) const LOGIT_BOUNDS: (f64, f64) = (-25.0, 25.0);
pub(crate) const LN_NUGGET_BOUNDS: (f64, f64) = (-23.025_850_929_940_457, std::f64::consts::LN_10); // 1e-10 .. 10

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

pub(crate) fn angle_from_logit(u: f64) -> f64 {
    ANGLE_MARGIN + (std::f64::consts::PI - 2.0 * ANGLE_MARGIN) * sigmoid(u)
}

pub(crate) fn logit_from_angle(w: f64) -> f64 {
    let p = ((w - ANGLE_MARGIN) / (std::f64::consts::PI - 2.0 * ANGLE_MARGIN)).clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Covariance parameters decoded from the optimization vector.
#[derive(Clone, Debug)]
pub(crate) struct CovParts {
    pub sigma: MarginalSds,
    pub phi: RoughnessParams,
    pub omega: CrossCorrAngles,
    pub nugget: f64,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.k + self.k * self.l + angle_count(self.k) + 1
    }

    pub fn angle_len(&self) -> usize {
        angle_count(self.k)
    }

    fn phi_at(&self) -> usize {
        self.k
    }

    fn angle_at(&self) -> usize {
        self.k + self.k * self.l
    }

    fn nugget_at(&self) -> usize {
        self.len() - 1
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.len());
        let mut hi = Vec::with_capacity(self.len());
        let mut push = |(a, b): (f64, f64), n: usize| {
            lo.extend(std::iter::repeat_n(a, n));
            hi.extend(std::iter::repeat_n(b, n));
        };
        push(LN_SIGMA_BOUNDS, self.k);
        push(LN_PHI_BOUNDS, self.k * self.l);
        push(LOGIT_BOUNDS, angle_count(self.k));
        push(LN_NUGGET_BOUNDS, 1);
        (lo, hi)
    }

    pub fn encode(&self, sigma: &[f64], phi: &DMatrix<f64>, omega: &[f64], nugget: f64) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.len());
        theta.extend(sigma.iter().map(|s| s.ln()));
        for i in 0..self.k {
            for c in 0..self.l {
                theta.push(phi[(i, c)].ln());
            }
        }
        theta.extend(omega.iter().map(|w| logit_from_angle(*w)));
        theta.push(nugget.max(1e-300).ln());
        let (lo, hi) = self.bounds();
        theta.iter().zip(lo.iter().zip(&hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect()
    }

    pub fn decode(&self, theta: &[f64]) -> Result<CovParts> {
        let sigma = MarginalSds::new(theta[..self.k].iter().map(|v| v.exp()).collect())?;
        let phi = RoughnessParams::new(DMatrix::from_fn(self.k, self.l, |i, c| {
            theta[self.phi_at() + i * self.l + c].exp()
        }))?;
        let omega = CrossCorrAngles::new(
            self.k,
            theta[self.angle_at()..self.nugget_at()].iter().map(|u| angle_from_logit(*u)).collect(),
        )?;
        Ok(CovParts { sigma, phi, omega, nugget: theta[self.nugget_at()].exp() })
    }
}

/// Result of one likelihood evaluation at fixed β.
pub(crate) struct Evaluation {
    /// Unpenalized log-likelihood.
    pub loglik: f64,
    /// Gradient with respect to the [`Layout`] vector.
    pub grad: Option<Vec<f64>>,
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Log-likelihood at fixed β for covariance parameters `cov`.
pub(crate) fn evaluate(
    coll: &Collapsed,
    cov: &CovParts,
    beta: &DVector<f64>,
    want_grad: bool,
) -> Result<Evaluation> {
    let g = coll.groups();
    let tau2 = cov.nugget;
    let extra_obs = (coll.n_obs - g) as f64;
    if coll.replicated() && tau2 <= 0.0 {
        return Err(Error::NotPositiveDefinite("replicated observations need a positive nugget".into()));
    }
    let t = angles_to_corr(&cov.omega);
    let (r, s) = coll.covariance(&cov.sigma, &cov.phi, &t, tau2);
    let (chol, jitter) = factorize(&r)?;
    let resid = &coll.ybar - &coll.f * beta;
    let alpha = chol.solve(&resid);

    let mut ll = -0.5 * (log_det(&chol) + resid.dot(&alpha)) - 0.5 * g as f64 * LN_2PI;
    ll -= 0.5 * coll.counts.iter().map(|m| m.ln()).sum::<f64>();
    if extra_obs > 0.0 {
        ll -= 0.5 * extra_obs * (LN_2PI + tau2.ln()) + 0.5 * coll.ss_within / tau2;
    }
    if !ll.is_finite() {
        return Err(Error::NonFinite("log-likelihood".into()));
    }

    let grad = if want_grad { Some(gradient(coll, cov, &t, &s, &chol, &alpha, extra_obs)) } else { None };
    Ok(Evaluation { loglik: ll, grad, chol, jitter })
}

/// `½ tr((ααᵀ - R⁻¹) ∂R/∂θ)` for every coordinate of the layout.
fn gradient(
    coll: &Collapsed,
    cov: &CovParts,
    t: &CrossCorrMatrix,
    s: &DMatrix<f64>,
    chol: &Cholesky<f64, Dyn>,
    alpha: &DVector<f64>,
    extra_obs: f64,
) -> Vec<f64> {
    let k = coll.k();
    let l = coll.dim();
    let layout = Layout { k, l };
    let g = coll.groups();
    let rinv = chol.inverse();
    let sd = cov.sigma.as_slice();
    let phi = cov.phi.matrix();
    let tau2 = cov.nugget;

    let rows: Vec<(usize, usize)> =
        coll.xs.iter().enumerate().flat_map(|(b, x)| (0..x.nrows()).map(move |r| (b, r))).collect();

    let mut g_sigma = vec![0.0; k];
    let mut g_phi = DMatrix::<f64>::zeros(k, l);
    let mut q = DMatrix::<f64>::zeros(k, k);
    for a in 0..g {
        let (i, ra) = rows[a];
        for b in 0..g {
            let (j, rb) = rows[b];
            let w = alpha[a] * alpha[b] - rinv[(a, b)];
            let ws = 0.5 * w * sd[i] * sd[j] * s[(a, b)];
            q[(i, j)] += ws;
            let wc = ws * t.get(i, j);
            if wc == 0.0 {
                continue;
            }
            g_sigma[i] += wc;
            g_sigma[j] += wc;
            for c in 0..l {
                let (p, pp) = (phi[(i, c)], phi[(j, c)]);
                let sum = p + pp;
                let d = coll.xs[i][(ra, c)] - coll.xs[j][(rb, c)];
                let d2 = d * d;
                let inv_sq = 1.0 / (sum * sum);
                g_phi[(i, c)] += wc * (0.25 - 0.5 * p / sum - d2 * 2.0 * p * pp * pp * inv_sq);
                g_phi[(j, c)] += wc * (0.25 - 0.5 * pp / sum - d2 * 2.0 * pp * p * p * inv_sq);
            }
        }
    }

    let mut grad = Vec::with_capacity(layout.len());
    grad.extend_from_slice(&g_sigma);
    for i in 0..k {
        for c in 0..l {
            grad.push(g_phi[(i, c)]);
        }
    }
    let jac = corr_angle_jacobian(&cov.omega);
    let span = std::f64::consts::PI - 2.0 * ANGLE_MARGIN;
    for (m, dt) in jac.iter().enumerate() {
        let w = cov.omega.as_slice()[m];
        let sgm = (w - ANGLE_MARGIN) / span;
        let dw_du = span * sgm * (1.0 - sgm);
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                acc += q[(i, j)] * dt[(i, j)];
            }
        }
        grad.push(acc * dw_du);
    }
    let mut g_tau = 0.0;
    for a in 0..g {
        let w = alpha[a] * alpha[a] - rinv[(a, a)];
        g_tau += 0.5 * w * tau2 / coll.counts[a];
    }
    if extra_obs > 0.0 {
        g_tau += -0.5 * extra_obs + 0.5 * coll.ss_within / tau2;
    }
    grad.push(g_tau);
    grad
}

/// Penalized log-likelihood
/// `-½(log|R| + (y - Fβ)ᵀR⁻¹(y - Fβ)) - (N/2) log 2π - λ‖β‖₁`
/// of `data` (in its own units) under `params`.
pub fn penalized_loglik(params: &MgpParams, data: &Dataset, basis: &RegressionBasis) -> Result<f64> {
    params.check(data.k(), data.dim(), &basis.widths(data.dim()))?;
    let coll = Collapsed::new(data, basis)?;
    let ev = evaluate(&coll, &params.cov_parts(), &params.beta_flat(), false)?;
    Ok(ev.loglik - params.lambda * params.beta_l1())
}
