use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::basis::{block_diag_f, RegressionBasis};
use super::dataset::Dataset;
use super::likelihood::{factorize, MgpParams};
use crate::covkernel::cov_matrix;
use crate::design::unit_specs;
use crate::error::{Error, Result};

/// Draws one realization of the model `params` (nugget included) at the
/// per-output designs `xs`.
pub fn draw_dataset(
    xs: Vec<DMatrix<f64>>,
    params: &MgpParams,
    basis: &RegressionBasis,
    seed: u64,
) -> Result<Dataset> {
    let k = xs.len();
    let l = xs.first().map_or(0, DMatrix::ncols);
    params.check(k, l, &basis.widths(l))?;
    if xs.iter().any(|x| x.ncols() != l) {
        return Err(Error::DimensionMismatch("designs differ in width".into()));
    }
    let r = cov_matrix(&xs, &params.sigma, &params.phi, &params.t(), params.nugget)?;
    let (chol, _) = factorize(&r)?;
    let f = block_diag_f(&xs, basis)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(r.nrows(), |_, _| StandardNormal.sample(&mut rng));
    let y = f * params.beta_flat() + chol.l() * z;
    let mut ys = Vec::with_capacity(k);
    let mut at = 0;
    for x in &xs {
        ys.push(y.rows(at, x.nrows()).into_owned());
        at += x.nrows();
    }
    let names = (1..=k).map(|i| format!("y{i}")).collect();
    Dataset::new(unit_specs(l), xs, ys, 1, names)
}
