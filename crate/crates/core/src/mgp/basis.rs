use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Trend form for one output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// `[1]`
    Constant,
    /// `[1, x_1, ..., x_l]`
    Linear,
    /// `[1, x_1, ..., x_l, x_1², ..., x_l²]` (no cross terms)
    Quadratic,
}

impl BasisKind {
    pub fn width(self, l: usize) -> usize {
        match self {
            BasisKind::Constant => 1,
            BasisKind::Linear => 1 + l,
            BasisKind::Quadratic => 1 + 2 * l,
        }
    }

    pub fn eval(self, x: &[f64]) -> Vec<f64> {
        self.eval_shifted(x, 0.0)
    }

    /// Terms in `x - shift` instead of `x`.
    pub fn eval_shifted(self, x: &[f64], shift: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width(x.len()));
        out.push(1.0);
        if self != BasisKind::Constant {
            out.extend(x.iter().map(|v| v - shift));
        }
        if self == BasisKind::Quadratic {
            out.extend(x.iter().map(|v| (v - shift) * (v - shift)));
        }
        out
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisKind::Constant => "const",
            BasisKind::Linear => "linear",
            BasisKind::Quadratic => "quad",
        })
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "const" | "constant" => Ok(BasisKind::Constant),
            "linear" => Ok(BasisKind::Linear),
            "quad" | "quadratic" => Ok(BasisKind::Quadratic),
            other => Err(Error::InvalidArgument(format!("unknown basis `{other}`"))),
        }
    }
}

/// Per-output regression functions `f_i(x)`.
///
/// A centered basis uses `x - ½` in its non-constant terms, so the
/// intercept is the trend at the middle of the unit cube. Both forms span
/// the same functions; centering only changes which coefficient the L1
/// penalty sees as the intercept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub kinds: Vec<BasisKind>,
    #[serde(default)]
    pub centered: bool,
}

impl RegressionBasis {
    pub fn uniform(kind: BasisKind, k: usize) -> Self {
        RegressionBasis { kinds: vec![kind; k], centered: false }
    }

    pub fn centered(kind: BasisKind, k: usize) -> Self {
        RegressionBasis { kinds: vec![kind; k], centered: true }
    }

    fn shift(&self) -> f64 {
        if self.centered {
            0.5
        } else {
            0.0
        }
    }

    /// `f_k(x)`
    pub fn eval(&self, k: usize, x: &[f64]) -> Vec<f64> {
        self.kinds[k].eval_shifted(x, self.shift())
    }

    pub fn k(&self) -> usize {
        self.kinds.len()
    }

    pub fn widths(&self, l: usize) -> Vec<usize> {
        self.kinds.iter().map(|b| b.width(l)).collect()
    }

    pub fn total_width(&self, l: usize) -> usize {
        self.widths(l).iter().sum()
    }

    /// Rows `f_k(x)ᵀ` for every row of `x`.
    pub fn block(&self, k: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        let kind = self.kinds[k];
        let q = kind.width(x.ncols());
        let mut out = DMatrix::zeros(x.nrows(), q);
        for r in 0..x.nrows() {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            for (c, v) in kind.eval_shifted(&row, self.shift()).into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }

    pub fn subset(&self, k: usize) -> RegressionBasis {
        RegressionBasis { kinds: vec![self.kinds[k]], centered: self.centered }
    }
}

/// Block-diagonal trend matrix over per-output designs.
pub(crate) fn block_diag_f(xs: &[DMatrix<f64>], basis: &RegressionBasis) -> Result<DMatrix<f64>> {
    if basis.k() != xs.len() {
        return Err(Error::DimensionMismatch(format!(
            "basis covers {} outputs, data has {}",
            basis.k(),
            xs.len()
        )));
    }
    let l = xs.first().map_or(0, DMatrix::ncols);
    let rows: usize = xs.iter().map(DMatrix::nrows).sum();
    let mut f = DMatrix::zeros(rows, basis.total_width(l));
    let (mut r0, mut c0) = (0, 0);
    for (k, x) in xs.iter().enumerate() {
        let b = basis.block(k, x);
        f.view_mut((r0, c0), b.shape()).copy_from(&b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    Ok(f)
}

/// `F = blkdiag(f_1, ..., f_K)` for the stacked observations of `data`.
pub fn build_f_matrix(data: &Dataset, basis: &RegressionBasis) -> Result<DMatrix<f64>> {
    block_diag_f(&data.x, basis)
}
