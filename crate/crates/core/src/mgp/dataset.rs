use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::design::InputSpec;
use crate::error::{Error, Result};

/// Replicated multi-output observations on the unit hypercube.
///
/// Output `k` has its own design `x[k]` (one row per observation, replicates
/// repeated) and observation vector `y[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub specs: Vec<InputSpec>,
    pub x: Vec<DMatrix<f64>>,
    pub y: Vec<DVector<f64>>,
    pub reps: usize,
    pub output_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        specs: Vec<InputSpec>,
        x: Vec<DMatrix<f64>>,
        y: Vec<DVector<f64>>,
        reps: usize,
        output_names: Vec<String>,
    ) -> Result<Self> {
        let k = x.len();
        if k == 0 {
            return Err(Error::InvalidArgument("dataset has no outputs".into()));
        }
        if y.len() != k || output_names.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} designs, {} observation vectors, {} output names",
                k,
                y.len(),
                output_names.len()
            )));
        }
        for (i, (xi, yi)) in x.iter().zip(&y).enumerate() {
            if xi.ncols() != specs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "output {i} design has {} columns, {} inputs declared",
                    xi.ncols(),
                    specs.len()
                )));
            }
            if xi.nrows() != yi.len() {
                return Err(Error::DimensionMismatch(format!(
                    "output {i}: {} design rows but {} observations",
                    xi.nrows(),
                    yi.len()
                )));
            }
            if xi.iter().chain(yi.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("observations of output {i}")));
            }
        }
        Ok(Dataset { specs, x, y, reps: reps.max(1), output_names })
    }

    /// All outputs observed on the same rows.
    pub fn isotopic(
        specs: Vec<InputSpec>,
        x: DMatrix<f64>,
        y: Vec<DVector<f64>>,
        reps: usize,
        output_names: Vec<String>,
    ) -> Result<Self> {
        let xs = vec![x; y.len()];
        Self::new(specs, xs, y, reps, output_names)
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    pub fn dim(&self) -> usize {
        self.specs.len()
    }

    /// Stacked observation count over all outputs.
    pub fn n_total(&self) -> usize {
        self.y.iter().map(DVector::len).sum()
    }

    pub fn is_isotopic(&self) -> bool {
        self.x.iter().all(|x| x == &self.x[0])
    }

    /// Single-output view of output `k`.
    pub fn output(&self, k: usize) -> Dataset {
        Dataset {
            specs: self.specs.clone(),
            x: vec![self.x[k].clone()],
            y: vec![self.y[k].clone()],
            reps: self.reps,
            output_names: vec![self.output_names[k].clone()],
        }
    }

    /// Splits by distinct design point (replicates stay together) with
    /// roughly `fraction` of the points in the second part.
    pub fn split_points(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let mut train_x = Vec::with_capacity(self.k());
        let mut train_y = Vec::with_capacity(self.k());
        let mut hold_x = Vec::with_capacity(self.k());
        let mut hold_y = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let groups = group_rows(&self.x[k]);
            let mut ids: Vec<usize> = (0..groups.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ids.shuffle(&mut rng);
            if groups.len() < 3 {
                return Err(Error::InvalidArgument(
                    "need at least three distinct points to hold some out".into(),
                ));
            }
            let n_hold = ((groups.len() as f64 * fraction).round() as usize).clamp(1, groups.len() - 2);
            let mut held = vec![false; groups.len()];
            for &g in &ids[..n_hold] {
                held[g] = true;
            }
            let mut tr = Vec::new();
            let mut ho = Vec::new();
            for (g, rows) in groups.iter().enumerate() {
                if held[g] {
                    ho.extend_from_slice(rows);
                } else {
                    tr.extend_from_slice(rows);
                }
            }
            tr.sort_unstable();
            ho.sort_unstable();
            train_x.push(self.x[k].select_rows(&tr));
            train_y.push(self.y[k].select_rows(&tr));
            hold_x.push(self.x[k].select_rows(&ho));
            hold_y.push(self.y[k].select_rows(&ho));
        }
        Ok((
            Dataset::new(self.specs.clone(), train_x, train_y, self.reps, self.output_names.clone())?,
            Dataset::new(self.specs.clone(), hold_x, hold_y, self.reps, self.output_names.clone())?,
        ))
    }

    /// SHA-256 over the shapes and values of all designs and observations.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (x, y) in self.x.iter().zip(&self.y) {
            h.update((x.nrows() as u64).to_le_bytes());
            h.update((x.ncols() as u64).to_le_bytes());
            // row-major so the digest does not depend on storage order
            for r in 0..x.nrows() {
                for c in 0..x.ncols() {
                    h.update(x[(r, c)].to_le_bytes());
                }
            }
            for v in y.iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Groups identical design rows; groups are ordered by first appearance.
pub(crate) fn group_rows(x: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for r in 0..x.nrows() {
        let key: Vec<u64> = x.row(r).iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&g) => groups[g].push(r),
            None => {
                index.insert(key, groups.len());
                groups.push(vec![r]);
            }
        }
    }
    groups
}
