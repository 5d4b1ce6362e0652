//! JSON model documents.
//!
//! A document carries everything [`FittedModel::new`] needs: input specs,
//! basis, parameters (angles and the implied cross-correlation matrix), the
//! output transform and the training data, plus a fingerprint of that data
//! which is checked on load.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::RegressionBasis;
use super::dataset::Dataset;
use super::likelihood::MgpParams;
use super::model::{FitDiagnostics, FittedModel, Standardizer};
use crate::covkernel::{CrossCorrAngles, MarginalSds, RoughnessParams};
use crate::design::InputSpec;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "mgpkit-model-v1";

/// Largest tolerated gap between the stored and the recomputed
/// cross-correlation matrix.
const T_TOLERANCE: f64 = 1e-9;

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    beta: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    phi: Vec<Vec<f64>>,
    omega: Vec<f64>,
    t: Vec<Vec<f64>>,
    nugget: f64,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct TrainingDoc {
    rows: usize,
    fingerprint: String,
    reps: usize,
    x: Vec<Vec<Vec<f64>>>,
    y: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    specs: Vec<InputSpec>,
    output_names: Vec<String>,
    basis: RegressionBasis,
    params: ParamsDoc,
    standardizer: Standardizer,
    training: TrainingDoc,
    diagnostics: FitDiagnostics,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{what}: every row needs {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn document(model: &FittedModel) -> ModelDoc {
    let p = &model.params;
    let d = &model.data;
    ModelDoc {
        format: MODEL_FORMAT.to_string(),
        specs: d.specs.clone(),
        output_names: d.output_names.clone(),
        basis: model.basis.clone(),
        params: ParamsDoc {
            beta: p.beta.iter().map(|b| b.iter().copied().collect()).collect(),
            sigma: p.sigma.as_slice().to_vec(),
            phi: rows(p.phi.matrix()),
            omega: p.omega.as_slice().to_vec(),
            t: rows(model.t().matrix()),
            nugget: p.nugget,
            lambda: p.lambda,
        },
        standardizer: model.standardizer.clone(),
        training: TrainingDoc {
            rows: d.n_total(),
            fingerprint: d.fingerprint(),
            reps: d.reps,
            x: d.x.iter().map(rows).collect(),
            y: d.y.iter().map(|y| y.iter().copied().collect()).collect(),
        },
        diagnostics: model.diagnostics.clone(),
    }
}

/// Serializes `model` as a pretty-printed JSON document.
pub fn model_to_json(model: &FittedModel) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&document(model))?;
    s.push('\n');
    Ok(s)
}

/// Parses and validates a model document, rebuilding the cached
/// factorization.
pub fn model_from_json(text: &str) -> Result<FittedModel> {
    let doc: ModelDoc = serde_json::from_str(text)?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "unsupported model format '{}', expected '{MODEL_FORMAT}'",
            doc.format
        )));
    }
    let l = doc.specs.len();
    let tr = &doc.training;
    let xs = tr.x.iter().map(|x| matrix(x, l, "training design")).collect::<Result<Vec<_>>>()?;
    let ys = tr.y.iter().map(|y| DVector::from_vec(y.clone())).collect();
    let data = Dataset::new(doc.specs, xs, ys, tr.reps, doc.output_names)?;
    if data.n_total() != tr.rows {
        return Err(Error::Format(format!(
            "training data has {} rows, document declares {}",
            data.n_total(),
            tr.rows
        )));
    }
    if data.fingerprint() != tr.fingerprint {
        return Err(Error::Format("training data does not match its fingerprint".into()));
    }

    let k = data.k();
    let pd = &doc.params;
    let params = MgpParams {
        beta: pd.beta.iter().map(|b| DVector::from_vec(b.clone())).collect(),
        sigma: MarginalSds::new(pd.sigma.clone())?,
        phi: RoughnessParams::new(matrix(&pd.phi, l, "phi")?)?,
        omega: CrossCorrAngles::new(k, pd.omega.clone())?,
        nugget: pd.nugget,
        lambda: pd.lambda,
    };
    let stored_t = matrix(&pd.t, k, "t")?;
    if stored_t.nrows() != k || (&stored_t - params.t().matrix()).amax() > T_TOLERANCE {
        return Err(Error::Format("stored T disagrees with the stored angles".into()));
    }
    let mut model = FittedModel::new(data, doc.basis, params, doc.standardizer)?;
    model.diagnostics = doc.diagnostics;
    Ok(model)
}

pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    model_from_json(&fs::read_to_string(path)?)
}
