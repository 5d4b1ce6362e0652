use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::basis::RegressionBasis;
use super::dataset::{group_rows, Dataset};
use super::likelihood::{evaluate, Collapsed, MgpParams};
use crate::covkernel::{angles_to_corr, exponent_weights, normalizer, CrossCorrMatrix};
use crate::error::{Error, Result};

const REFINE_STEPS: usize = 3;

/// Per-output affine output transform: `y_std = (y - center) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(k: usize) -> Self {
        Standardizer { center: vec![0.0; k], scale: vec![1.0; k] }
    }

    /// Centers every output at its mean and scales it by its sample
    /// standard deviation. A constant output keeps scale 1.
    ///
    /// When every output carries replicates, the scales are then tilted so
    /// that the pooled replicate variance is the same for all outputs on the
    /// standardized scale, which is what a single shared nugget assumes. The
    /// geometric mean of the noise-to-spread ratios is kept.
    pub fn from_data(data: &Dataset) -> Self {
        let mut center = Vec::with_capacity(data.k());
        let mut scale = Vec::with_capacity(data.k());
        for y in &data.y {
            let n = y.len() as f64;
            let mean = y.mean();
            let sd = if y.len() > 1 {
                (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            center.push(mean);
            scale.push(if sd > 0.0 && sd.is_finite() { sd } else { 1.0 });
        }
        let noise: Option<Vec<f64>> = data.x.iter().zip(&data.y).map(|(x, y)| replicate_sd(x, y)).collect();
        if let Some(noise) = noise {
            let ratios: Vec<f64> = noise.iter().zip(&scale).map(|(e, s)| e / s).collect();
            let log_mean = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
            let tilted: Vec<f64> = noise.iter().map(|e| e / log_mean.exp()).collect();
            if tilted.iter().all(|s| *s > 0.0 && s.is_finite()) {
                scale = tilted;
            }
        }
        Standardizer { center, scale }
    }

    pub fn k(&self) -> usize {
        self.center.len()
    }

    /// `Σ_k N_k ln scale_k`: subtract from a standardized-scale
    /// log-density to get the original-unit one.
    pub fn log_jacobian(&self, data: &Dataset) -> f64 {
        data.y.iter().zip(&self.scale).map(|(y, s)| y.len() as f64 * s.ln()).sum()
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data.k())?;
        let mut out = data.clone();
        for (k, y) in out.y.iter_mut().enumerate() {
            y.apply(|v| *v = (*v - self.center[k]) / self.scale[k]);
        }
        Ok(out)
    }

    fn check(&self, k: usize) -> Result<()> {
        if self.center.len() != k || self.scale.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "standardizer covers {} outputs, expected {k}",
                self.center.len()
            )));
        }
        if self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite()))
            || self.center.iter().any(|c| !c.is_finite())
        {
            return Err(Error::InvalidArgument("standardizer scale must be positive".into()));
        }
        Ok(())
    }
}

/// Pooled within-replicate standard deviation, if there are replicates and
/// they are not all identical.
fn replicate_sd(x: &nalgebra::DMatrix<f64>, y: &DVector<f64>) -> Option<f64> {
    let mut ss = 0.0;
    let mut df = 0usize;
    for g in group_rows(x) {
        if g.len() < 2 {
            continue;
        }
        let mean = g.iter().map(|&r| y[r]).sum::<f64>() / g.len() as f64;
        ss += g.iter().map(|&r| (y[r] - mean).powi(2)).sum::<f64>();
        df += g.len() - 1;
    }
    let sd = (ss / df as f64).sqrt();
    (df > 0 && sd > 0.0 && sd.is_finite()).then_some(sd)
}

/// Holdout score of one candidate penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    /// Pooled RMSE on the standardized scale.
    pub holdout_rmse: f64,
    /// Standard error of the holdout MSE across held-out points.
    pub holdout_mse_se: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Penalized log-likelihood at the optimum (standardized outputs).
    pub objective: f64,
    /// Unpenalized log-likelihood at the optimum, as a density of the
    /// original-unit observations.
    pub loglik: f64,
    pub outer_iterations: usize,
    pub evaluations: usize,
    /// Final objective of every start; `None` where the start failed.
    pub restart_scores: Vec<Option<f64>>,
    pub best_start: usize,
    pub lambda_scores: Vec<LambdaScore>,
    pub jitter: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Predictive standard deviation including the nugget.
    pub sd: Vec<f64>,
    /// The query point lies outside the unit hypercube.
    pub out_of_range: bool,
}

/// A model with cached factorization, ready for prediction.
///
/// `params` live on the standardized output scale given by `standardizer`;
/// `data` is kept in original units.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub params: MgpParams,
    pub basis: RegressionBasis,
    pub standardizer: Standardizer,
    pub data: Dataset,
    pub diagnostics: FitDiagnostics,
    coll: Collapsed,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    t: CrossCorrMatrix,
    offsets: Vec<usize>,
}

impl FittedModel {
    pub fn new(
        data: Dataset,
        basis: RegressionBasis,
        params: MgpParams,
        standardizer: Standardizer,
    ) -> Result<Self> {
        params.check(data.k(), data.dim(), &basis.widths(data.dim()))?;
        let sdata = standardizer.apply(&data)?;
        let coll = Collapsed::new(&sdata, &basis)?;
        let cov = params.cov_parts();
        let beta = params.beta_flat();
        let ev = evaluate(&coll, &cov, &beta, false)?;
        let resid = &coll.ybar - &coll.f * &beta;
        let (r, _) = coll.covariance(&cov.sigma, &cov.phi, &angles_to_corr(&cov.omega), cov.nugget);
        let alpha = refine(&ev.chol, &r, &resid);
        let mut offsets = Vec::with_capacity(coll.k() + 1);
        offsets.push(0);
        for x in &coll.xs {
            offsets.push(offsets.last().unwrap() + x.nrows());
        }
        let diagnostics = FitDiagnostics {
            objective: ev.loglik - params.lambda * params.beta_l1(),
            loglik: ev.loglik - standardizer.log_jacobian(&data),
            jitter: ev.jitter,
            converged: true,
            ..FitDiagnostics::default()
        };
        Ok(FittedModel {
            t: params.t(),
            params,
            basis,
            standardizer,
            data,
            diagnostics,
            coll,
            chol: ev.chol,
            alpha,
            offsets,
        })
    }

    pub fn k(&self) -> usize {
        self.data.k()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn t(&self) -> &CrossCorrMatrix {
        &self.t
    }

    /// Lower Cholesky factor of the replicate-collapsed covariance.
    pub fn factor(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Trend coefficients in original output units.
    pub fn beta_original(&self) -> Vec<DVector<f64>> {
        self.params
            .beta
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let mut b = b * self.standardizer.scale[k];
                // every basis starts with the intercept
                b[0] += self.standardizer.center[k];
                b
            })
            .collect()
    }

    /// Marginal standard deviations in original output units.
    pub fn sigma_original(&self) -> Vec<f64> {
        self.params.sigma.as_slice().iter().zip(&self.standardizer.scale).map(|(s, c)| s * c).collect()
    }

    /// Noise variance of every output in original units.
    pub fn nugget_original(&self) -> Vec<f64> {
        self.standardizer.scale.iter().map(|c| self.params.nugget * c * c).collect()
    }

    pub fn predict(&self, x0: &[f64]) -> Result<Prediction> {
        let l = self.dim();
        if x0.len() != l {
            return Err(Error::DimensionMismatch(format!(
                "query point has {} coordinates, model has {l} inputs",
                x0.len()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query point".into()));
        }
        let k = self.k();
        let sd = self.params.sigma.as_slice();
        let tau2 = self.params.nugget;
        let g = self.coll.groups();
        let mut mean = Vec::with_capacity(k);
        let mut sds = Vec::with_capacity(k);
        let mut r = DVector::zeros(g);
        for i in 0..k {
            let pi = self.params.phi.row(i);
            for j in 0..k {
                let pj = self.params.phi.row(j);
                let w = exponent_weights(&pi, &pj);
                let scale = sd[i] * sd[j] * self.t.get(i, j);
                let norm = normalizer(&pi, &pj);
                let xj = &self.coll.xs[j];
                for row in 0..xj.nrows() {
                    let mut quad = 0.0;
                    for c in 0..l {
                        let d = x0[c] - xj[(row, c)];
                        quad += w[c] * d * d;
                    }
                    // same operation order as the training covariance
                    r[self.offsets[j] + row] = scale * (norm * (-quad).exp());
                }
            }
            let trend: f64 =
                self.basis.eval(i, x0).iter().zip(self.params.beta[i].iter()).map(|(f, b)| f * b).sum();
            let m = trend + r.dot(&self.alpha);
            let v = self
                .chol
                .l_dirty()
                .solve_lower_triangular(&r)
                .ok_or_else(|| Error::NotPositiveDefinite("cached factor is singular".into()))?;
            let var = (sd[i] * sd[i] + tau2 - v.norm_squared()).max(0.0);
            mean.push(self.standardizer.center[i] + self.standardizer.scale[i] * m);
            sds.push(self.standardizer.scale[i] * var.sqrt());
        }
        Ok(Prediction { mean, sd: sds, out_of_range: x0.iter().any(|v| !(0.0..=1.0).contains(v)) })
    }
}

/// Solves `r α = b` with the factor of `r` (possibly jittered), then applies
/// iterative refinement steps while they reduce the residual.
fn refine(chol: &Cholesky<f64, Dyn>, r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut alpha = chol.solve(b);
    let mut res = b - r * &alpha;
    for _ in 0..REFINE_STEPS {
        let next = &alpha + chol.solve(&res);
        let next_res = b - r * &next;
        if next_res.norm() >= res.norm() {
            break;
        }
        alpha = next;
        res = next_res;
    }
    alpha
}

/// Anything that maps a unit-hypercube point to per-output predictions.
pub trait Surrogate {
    fn outputs(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn predict_point(&self, x0: &[f64]) -> Result<Prediction>;
}

impl Surrogate for FittedModel {
    fn outputs(&self) -> usize {
        self.k()
    }

    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn predict_point(&self, x0: &[f64]) -> Result<Prediction> {
        self.predict(x0)
    }
}

/// Independent models, outputs concatenated in order.
impl Surrogate for [FittedModel] {
    fn outputs(&self) -> usize {
        self.iter().map(FittedModel::k).sum()
    }

    fn input_dim(&self) -> usize {
        self.first().map_or(0, FittedModel::dim)
    }

    fn predict_point(&self, x0: &[f64]) -> Result<Prediction> {
        let mut out = Prediction { mean: Vec::new(), sd: Vec::new(), out_of_range: false };
        for m in self {
            let p = m.predict(x0)?;
            out.mean.extend(p.mean);
            out.sd.extend(p.sd);
            out.out_of_range |= p.out_of_range;
        }
        Ok(out)
    }
}

/// Per-output root-mean-square prediction error over every row of `test`.
pub fn rmse<S: Surrogate + ?Sized>(model: &S, test: &Dataset) -> Result<Vec<f64>> {
    if test.k() != model.outputs() || test.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "test set has {} outputs and {} inputs, model has {} and {}",
            test.k(),
            test.dim(),
            model.outputs(),
            model.input_dim()
        )));
    }
    if test.y.iter().any(|y| y.is_empty()) {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let k = test.k();
    let mut sse = vec![0.0; k];
    let point = |x: &nalgebra::DMatrix<f64>, r: usize| -> Vec<f64> { x.row(r).iter().copied().collect() };
    if test.is_isotopic() {
        for rows in group_rows(&test.x[0]) {
            let p = model.predict_point(&point(&test.x[0], rows[0]))?;
            for (i, acc) in sse.iter_mut().enumerate() {
                *acc += rows.iter().map(|&r| (p.mean[i] - test.y[i][r]).powi(2)).sum::<f64>();
            }
        }
    } else {
        for (i, acc) in sse.iter_mut().enumerate() {
            for rows in group_rows(&test.x[i]) {
                let p = model.predict_point(&point(&test.x[i], rows[0]))?;
                *acc += rows.iter().map(|&r| (p.mean[i] - test.y[i][r]).powi(2)).sum::<f64>();
            }
        }
    }
    Ok(sse.iter().zip(&test.y).map(|(s, y)| (s / y.len() as f64).sqrt()).collect())
}
