//! Closed-form virtual steam plant with three turbines in series.
//!
//! The six inputs and their ranges:
//!
//! | # | input                  | range          |
//! |---|------------------------|----------------|
//! | 1 | inlet pressure `P`     | 10 – 35 MPa    |
//! | 2 | steam temperature `T`  | 500 – 2000 K   |
//! | 3 | mass flow `ṁ`          | 2.2 – 3.0 kg/s |
//! | 4 | grid frequency `f`     | 50 – 60 Hz     |
//! | 5 | number of blades `B`   | 5 – 20         |
//! | 6 | boiler temperature `Tb`| 550 – 650 K    |
//!
//! Steady-state power (arbitrary consistent units):
//!
//! ```text
//! g(B)   = 1 - exp(-B / 6)                       blade efficiency
//! q(f)   = 1 - 0.5 ((f - 55) / 10)²              off-nominal frequency loss
//! HPT    = 12 (P/10)^0.9 · ṁ · (T/1000)^0.25 · g(B) · q(f)
//! P_ex   = 0.25 P (1 + 0.08 (T/1000 - 1.25))     HPT exhaust pressure
//! P_ipt  = c · P_ex + (1 - c) · P_ref,            P_ref = 0.25 · 22.5
//! IPT    = 20 (P_ipt/5)^0.8 · ṁ · g(B) · (Tb/600)^4 · q(f)
//! LPT    = 8 ṁ (1 + 0.1 (P_ipt/P_ref - 1)) (1 + 0.35 sin(π (f - 50)/10))
//!            · (1 + 2 ((Tb - 600)/50)²)
//! ```
//!
//! `c` is the coupling: at 1 the intermediate stage runs on the high-pressure
//! exhaust, at 0 on a fixed reference pressure.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::design::{scale_design, DesignMatrix, InputSpec};
use crate::error::{Error, Result};
use crate::mgp::Dataset;

pub const OUTPUT_NAMES: [&str; 3] = ["hpt", "ipt", "lpt"];

/// Default observation noise as a fraction of the midpoint response.
pub const DEFAULT_RELATIVE_NOISE: f64 = 0.02;

const REF_EXHAUST: f64 = 0.25 * 22.5;

/// The six plant inputs with their physical ranges.
pub fn plant_input_specs() -> Vec<InputSpec> {
    vec![
        InputSpec { name: "pressure_mpa".into(), lower: 10.0, upper: 35.0 },
        InputSpec { name: "temperature_k".into(), lower: 500.0, upper: 2000.0 },
        InputSpec { name: "mass_flow_kg_s".into(), lower: 2.2, upper: 3.0 },
        InputSpec { name: "grid_frequency_hz".into(), lower: 50.0, upper: 60.0 },
        InputSpec { name: "blade_count".into(), lower: 5.0, upper: 20.0 },
        InputSpec { name: "boiler_temperature_k".into(), lower: 550.0, upper: 650.0 },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantConfig {
    pub specs: Vec<InputSpec>,
    pub noise_sd: [f64; 3],
    pub coupling: f64,
    pub seed: u64,
}

impl PlantConfig {
    /// Config whose noise is `relative_noise` times each output's midpoint response.
    pub fn new(coupling: f64, relative_noise: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&coupling) {
            return Err(Error::InvalidArgument(format!("coupling {coupling} outside [0, 1]")));
        }
        if !(relative_noise >= 0.0 && relative_noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise fraction {relative_noise} must be >= 0")));
        }
        let specs = plant_input_specs();
        let mid: Vec<f64> = specs.iter().map(|s| s.to_physical(0.5)).collect();
        let ref_out = response(&mid, coupling);
        Ok(PlantConfig { specs, noise_sd: ref_out.map(|v| relative_noise * v), coupling, seed })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::InvalidArgument("coupling outside [0, 1]".into()));
        }
        if self.noise_sd.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("noise_sd must be >= 0".into()));
        }
        if self.specs.len() != 6 {
            return Err(Error::DimensionMismatch("the plant has six inputs".into()));
        }
        Ok(())
    }
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig::new(1.0, DEFAULT_RELATIVE_NOISE, 0).expect("valid defaults")
    }
}

/// Noise-free plant output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantOutput {
    /// HPT, IPT, LPT power.
    pub power: [f64; 3],
    /// Set when some input lies outside its range.
    pub out_of_range: bool,
}

fn blade_efficiency(b: f64) -> f64 {
    1.0 - (-b / 6.0).exp()
}

fn frequency_factor(f: f64) -> f64 {
    let d = (f - 55.0) / 10.0;
    1.0 - 0.5 * d * d
}

fn response(x: &[f64], coupling: f64) -> [f64; 3] {
    let (p, t, m, f, b, tb) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let g = blade_efficiency(b);
    let q = frequency_factor(f);
    let hpt = 12.0 * (p / 10.0).powf(0.9) * m * (t / 1000.0).powf(0.25) * g * q;
    let exhaust = 0.25 * p * (1.0 + 0.08 * (t / 1000.0 - 1.25));
    let p_ipt = coupling * exhaust + (1.0 - coupling) * REF_EXHAUST;
    let ipt = 20.0 * (p_ipt / 5.0).powf(0.8) * m * g * (tb / 600.0).powi(4) * q;
    let swing = (tb - 600.0) / 50.0;
    let lpt = 8.0
        * m
        * (1.0 + 0.1 * (p_ipt / REF_EXHAUST - 1.0))
        * (1.0 + 0.35 * (std::f64::consts::PI * (f - 50.0) / 10.0).sin())
        * (1.0 + 2.0 * swing * swing);
    [hpt, ipt, lpt]
}

/// Evaluates the plant at six physical inputs.
pub fn plant_response(x: &[f64], config: &PlantConfig) -> Result<PlantOutput> {
    if x.len() != 6 {
        return Err(Error::DimensionMismatch(format!("plant takes 6 inputs, got {}", x.len())));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("plant input {v}")));
    }
    let out_of_range = x.iter().zip(&config.specs).any(|(v, s)| *v < s.lower || *v > s.upper);
    // pressure and flow below zero have no physical meaning
    let x: Vec<f64> =
        x.iter().enumerate().map(|(i, v)| if matches!(i, 0 | 2 | 4) { v.max(0.0) } else { *v }).collect();
    Ok(PlantOutput { power: response(&x, config.coupling), out_of_range })
}

/// Simulates `reps` noisy replicates at every design point.
///
/// Rows are point-major (all replicates of point 0, then point 1, ...).
/// Point `i` draws its noise from its own stream, so the result does not
/// depend on evaluation order.
pub fn generate_dataset(design: &DesignMatrix, config: &PlantConfig, reps: usize) -> Result<Dataset> {
    config.validate()?;
    if reps < 1 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let phys = scale_design(design, &config.specs)?;
    let n = design.n();
    let l = design.dim();
    let rows = n * reps;
    let mut x = DMatrix::zeros(rows, l);
    let mut y = vec![DVector::zeros(rows); 3];
    for i in 0..n {
        let p: Vec<f64> = phys.row(i).iter().copied().collect();
        let clean = plant_response(&p, config)?.power;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        for rep in 0..reps {
            let row = i * reps + rep;
            for c in 0..l {
                x[(row, c)] = design.points()[(i, c)];
            }
            for k in 0..3 {
                let z: f64 = StandardNormal.sample(&mut rng);
                y[k][row] = clean[k] + config.noise_sd[k] * z;
            }
        }
    }
    Dataset::isotopic(config.specs.clone(), x, y, reps, OUTPUT_NAMES.iter().map(|s| s.to_string()).collect())
}
