//! Space-filling designs on the unit hypercube.
//!
//! Latin hypercube designs (plain and maximin-selected) for training and test
//! sets, and Morris one-at-a-time trajectories for elementary-effects
//! screening. Everything is deterministic given the seed.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named physical input with its admissible range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl InputSpec {
    /// Builds a spec, accepting the bounds in either order.
    pub fn new(name: impl Into<String>, a: f64, b: f64) -> Result<Self> {
        let name = name.into();
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite(format!("bounds of input `{name}`")));
        }
        if a == b {
            return Err(Error::InvalidArgument(format!("input `{name}` has an empty range")));
        }
        Ok(InputSpec { name, lower: a.min(b), upper: a.max(b) })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn to_physical(&self, unit: f64) -> f64 {
        self.lower + unit * self.width()
    }

    pub fn to_unit(&self, physical: f64) -> f64 {
        (physical - self.lower) / self.width()
    }
}

/// Generic `x1..xl` specs spanning the unit interval.
pub fn unit_specs(l: usize) -> Vec<InputSpec> {
    (1..=l).map(|i| InputSpec { name: format!("x{i}"), lower: 0.0, upper: 1.0 }).collect()
}

/// An `n × l` design on the unit hypercube.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    points: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument("design entries must lie in [0, 1]".into()));
        }
        Ok(DesignMatrix { points })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.points
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    /// Smallest Euclidean distance between any two rows.
    pub fn min_distance(&self) -> f64 {
        min_pairwise_distance(&self.points)
    }
}

/// Where a point sits inside its stratum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Placement {
    #[default]
    Random,
    Midpoint,
}

/// Mixes a master seed with a stream index (splitmix64 finalizer).
pub(crate) fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z =
        master.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_lhs_args(n: usize, l: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("latin hypercube needs n >= 2, got {n}")));
    }
    if l < 1 {
        return Err(Error::InvalidArgument("latin hypercube needs at least one dimension".into()));
    }
    Ok(())
}

/// Random Latin hypercube with uniform placement inside each stratum.
pub fn lhs(n: usize, l: usize, seed: u64) -> Result<DesignMatrix> {
    lhs_with(n, l, seed, Placement::Random)
}

pub fn lhs_with(n: usize, l: usize, seed: u64, placement: Placement) -> Result<DesignMatrix> {
    check_lhs_args(n, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = DMatrix::zeros(n, l);
    let width = 1.0 / n as f64;
    let mut strata: Vec<usize> = (0..n).collect();
    for col in 0..l {
        strata.shuffle(&mut rng);
        for (row, &k) in strata.iter().enumerate() {
            let offset = match placement {
                Placement::Random => rng.random::<f64>(),
                Placement::Midpoint => 0.5,
            };
            let lo = k as f64 * width;
            let mut v = lo + offset * width;
            // keep rounding from pushing a point into the next stratum
            let hi = (k + 1) as f64 * width;
            if v >= hi {
                v = lo;
            }
            points[(row, col)] = v;
        }
    }
    Ok(DesignMatrix { points })
}

/// Options for [`maximin_lhs_with`].
#[derive(Clone, Debug)]
pub struct MaximinOptions {
    pub restarts: usize,
    /// Within-column swap attempts applied to each candidate.
    pub exchange_iters: usize,
    pub placement: Placement,
}

impl Default for MaximinOptions {
    fn default() -> Self {
        MaximinOptions { restarts: 20, exchange_iters: 0, placement: Placement::Random }
    }
}

/// Best of `restarts` Latin hypercubes under the maximin distance criterion.
///
/// Candidate 0 is drawn from `seed` itself, so a single restart reproduces
/// [`lhs`] exactly.
pub fn maximin_lhs(n: usize, l: usize, seed: u64, restarts: usize) -> Result<DesignMatrix> {
    maximin_lhs_with(n, l, seed, &MaximinOptions { restarts, ..MaximinOptions::default() })
}

pub fn maximin_lhs_with(n: usize, l: usize, seed: u64, opts: &MaximinOptions) -> Result<DesignMatrix> {
    check_lhs_args(n, l)?;
    if opts.restarts < 1 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    let mut best: Option<(f64, DesignMatrix)> = None;
    for r in 0..opts.restarts {
        let s = if r == 0 { seed } else { derive_seed(seed, r as u64) };
        let mut cand = lhs_with(n, l, s, opts.placement)?;
        if opts.exchange_iters > 0 {
            exchange_improve(&mut cand.points, opts.exchange_iters, derive_seed(s, u64::MAX));
        }
        let score = cand.min_distance();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, cand));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Greedy exchange: swap two entries of one column, keep the swap if the
/// minimum inter-point distance does not decrease.
fn exchange_improve(points: &mut DMatrix<f64>, iters: usize, seed: u64) {
    let n = points.nrows();
    let l = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = min_pairwise_distance(points);
    for _ in 0..iters {
        let col = rng.random_range(0..l);
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        points.swap((a, col), (b, col));
        let score = min_pairwise_distance(points);
        if score >= current {
            current = score;
        } else {
            points.swap((a, col), (b, col));
        }
    }
}

pub(crate) fn min_pairwise_distance(points: &DMatrix<f64>) -> f64 {
    let n = points.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 =
                points.row(i).iter().zip(points.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

/// Maps a unit design onto physical ranges column by column.
pub fn scale_design(d: &DesignMatrix, specs: &[InputSpec]) -> Result<DMatrix<f64>> {
    if specs.len() != d.dim() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but {} input specs were given",
            d.dim(),
            specs.len()
        )));
    }
    let mut out = d.points.clone();
    for (col, spec) in specs.iter().enumerate() {
        out.column_mut(col).apply(|v| *v = spec.to_physical(*v));
    }
    Ok(out)
}

/// Inverse of [`scale_design`]; values outside the ranges are kept as-is
/// (they map outside the unit cube).
pub fn unscale_points(phys: &DMatrix<f64>, specs: &[InputSpec]) -> Result<DMatrix<f64>> {
    if specs.len() != phys.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "points have {} columns but {} input specs were given",
            phys.ncols(),
            specs.len()
        )));
    }
    let mut out = phys.clone();
    for (col, spec) in specs.iter().enumerate() {
        out.column_mut(col).apply(|v| *v = spec.to_unit(*v));
    }
    Ok(out)
}

/// One Morris trajectory: `l + 1` points, each step moving one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct MorrisTrajectory {
    pub points: DMatrix<f64>,
    /// `varied_index[k]` is the coordinate changed between rows `k` and `k + 1`.
    pub varied_index: Vec<usize>,
    pub delta: f64,
}

impl MorrisTrajectory {
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Signed step taken at `step`.
    pub fn step(&self, step: usize) -> f64 {
        let v = self.varied_index[step];
        self.points[(step + 1, v)] - self.points[(step, v)]
    }
}

/// Grid levels used for Morris base points.
pub const MORRIS_LEVELS: usize = 4;

/// Random Morris trajectories.
///
/// Base points come from a `MORRIS_LEVELS`-level grid on `[0, 1 - delta]`;
/// every coordinate then moves once by `+delta` or `-delta` in a random
/// order, starting from whichever end keeps the trajectory inside the cube.
pub fn morris_trajectories(r: usize, l: usize, delta: f64, seed: u64) -> Result<Vec<MorrisTrajectory>> {
    if r < 1 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    if l < 1 {
        return Err(Error::InvalidArgument("need at least one input".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 1.0 - delta;
    let mut out = Vec::with_capacity(r);
    for _ in 0..r {
        let base: Vec<f64> = (0..l)
            .map(|_| {
                let k = rng.random_range(0..MORRIS_LEVELS);
                span * k as f64 / (MORRIS_LEVELS - 1) as f64
            })
            .collect();
        let up: Vec<bool> = (0..l).map(|_| rng.random::<bool>()).collect();
        let mut order: Vec<usize> = (0..l).collect();
        order.shuffle(&mut rng);

        let mut points = DMatrix::zeros(l + 1, l);
        let mut x: Vec<f64> = base.iter().zip(&up).map(|(b, &u)| if u { *b } else { b + delta }).collect();
        for (c, v) in x.iter().enumerate() {
            points[(0, c)] = *v;
        }
        for (k, &v) in order.iter().enumerate() {
            x[v] = if up[v] { base[v] + delta } else { base[v] };
            for (c, val) in x.iter().enumerate() {
                points[(k + 1, c)] = *val;
            }
        }
        out.push(MorrisTrajectory { points, varied_index: order, delta });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strata_ok(d: &DesignMatrix) -> bool {
        let n = d.n();
        (0..d.dim()).all(|c| {
            let mut seen = vec![false; n];
            for r in 0..n {
                let k = ((d.points[(r, c)] * n as f64).floor() as usize).min(n - 1);
                if seen[k] {
                    return false;
                }
                seen[k] = true;
            }
            true
        })
    }

    #[test]
    fn two_point_design_splits_halves() {
        for seed in 0..20 {
            let d = lhs(2, 1, seed).unwrap();
            let mut v = [d.points[(0, 0)], d.points[(1, 0)]];
            v.sort_by(f64::total_cmp);
            assert!(v[0] < 0.5 && v[1] >= 0.5);
        }
    }

    #[test]
    fn fifty_by_six_is_stratified() {
        let d = lhs(50, 6, 1).unwrap();
        assert_eq!((d.n(), d.dim()), (50, 6));
        assert!(strata_ok(&d));
    }

    #[test]
    fn lhs_is_deterministic() {
        assert_eq!(lhs(4, 2, 7).unwrap(), lhs(4, 2, 7).unwrap());
        assert_ne!(lhs(4, 2, 7).unwrap(), lhs(4, 2, 8).unwrap());
    }

    #[test]
    fn midpoint_placement_hits_centres() {
        let d = lhs_with(5, 2, 3, Placement::Midpoint).unwrap();
        for v in d.points.iter() {
            let scaled = v * 5.0 - 0.5;
            assert!((scaled - scaled.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(lhs(1, 3, 0).is_err());
        assert!(lhs(5, 0, 0).is_err());
        assert!(maximin_lhs(5, 2, 0, 0).is_err());
    }

    #[test]
    fn single_restart_equals_plain_lhs() {
        assert_eq!(maximin_lhs(12, 3, 5, 1).unwrap(), lhs(12, 3, 5).unwrap());
    }

    #[test]
    fn maximin_two_points_are_far_apart() {
        let opts = MaximinOptions { restarts: 1, exchange_iters: 0, placement: Placement::Midpoint };
        assert_eq!(maximin_lhs_with(2, 1, 0, &opts).unwrap().min_distance(), 0.5);
        for seed in 0..10 {
            assert!(maximin_lhs(2, 1, seed, 50).unwrap().min_distance() >= 0.5);
        }
    }

    #[test]
    fn maximin_beats_plain_in_median() {
        let mut gains: Vec<f64> = (0..20)
            .map(|s| {
                maximin_lhs(10, 2, s, 50).unwrap().min_distance() - lhs(10, 2, s).unwrap().min_distance()
            })
            .collect();
        gains.sort_by(f64::total_cmp);
        assert!(gains[10] >= 0.0);
        assert!(gains.iter().all(|g| *g >= 0.0));
    }

    #[test]
    fn exchange_keeps_stratification() {
        let opts = MaximinOptions { restarts: 3, exchange_iters: 500, placement: Placement::Random };
        let d = maximin_lhs_with(15, 4, 11, &opts).unwrap();
        assert!(strata_ok(&d));
        let plain = maximin_lhs(15, 4, 11, 3).unwrap();
        assert!(d.min_distance() >= plain.min_distance());
    }

    #[test]
    fn scaling_uses_table_ranges() {
        let specs = vec![
            InputSpec::new("pressure", 35.0, 10.0).unwrap(),
            InputSpec::new("freq", 60.0, 50.0).unwrap(),
            InputSpec::new("boiler", 650.0, 550.0).unwrap(),
        ];
        let d = DesignMatrix::new(DMatrix::from_row_slice(1, 3, &[0.0, 0.5, 1.0])).unwrap();
        let p = scale_design(&d, &specs).unwrap();
        assert_eq!(p[(0, 0)], 10.0);
        assert_eq!(p[(0, 1)], 55.0);
        assert_eq!(p[(0, 2)], 650.0);
        assert!(scale_design(&d, &specs[..2]).is_err());
    }

    #[test]
    fn morris_counts_and_feasibility() {
        let t = morris_trajectories(1, 3, 0.3, 0).unwrap();
        assert_eq!(t[0].points.nrows(), 4);
        let mut idx = t[0].varied_index.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);

        let ts = morris_trajectories(10, 6, 0.3, 4).unwrap();
        let total: usize = ts.iter().map(|t| t.points.nrows()).sum();
        assert_eq!(total, 70);
        for t in &ts {
            assert!(t.points.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn morris_rejects_bad_delta() {
        assert!(morris_trajectories(2, 3, 0.0, 0).is_err());
        assert!(morris_trajectories(2, 3, 1.0, 0).is_err());
        assert!(morris_trajectories(0, 3, 0.3, 0).is_err());
    }
}
