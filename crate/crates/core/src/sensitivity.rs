//! Morris elementary-effects screening.
//!
//! For each trajectory step that moves input `v` by a signed `Δ`, the
//! effect is `(f(x_after) - f(x_before)) / Δ`. Over `r` trajectories this
//! gives `r` effects per (output, input), summarized by their mean `μ`,
//! mean absolute value `μ*` and sample standard deviation `σ`.

use csv::{ReaderBuilder, WriterBuilder};

use crate::design::{InputSpec, MorrisTrajectory};
use crate::error::{Error, Result};

/// Units of the reported effects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EffectUnits {
    /// Per unit of the normalized input (comparable across inputs).
    #[default]
    Unit,
    /// Per physical unit of each input.
    Physical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectStats {
    pub mu: f64,
    pub mu_star: f64,
    pub sigma_ee: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EEResult {
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// `stats[k][v]` for output `k`, input `v`.
    pub stats: Vec<Vec<EffectStats>>,
    pub r: usize,
    pub delta: f64,
    pub units: EffectUnits,
}

/// One line of the CSV report.
#[derive(Clone, Debug, PartialEq)]
pub struct EERow {
    pub output: String,
    pub input: String,
    pub stats: EffectStats,
}

impl EEResult {
    pub fn rows(&self) -> Vec<EERow> {
        let mut out = Vec::new();
        for (k, per_input) in self.stats.iter().enumerate() {
            for (v, s) in per_input.iter().enumerate() {
                out.push(EERow {
                    output: self.output_names[k].clone(),
                    input: self.input_names[v].clone(),
                    stats: *s,
                });
            }
        }
        out
    }
}

fn summarize(effects: &[f64]) -> EffectStats {
    let n = effects.len() as f64;
    let mu = effects.iter().sum::<f64>() / n;
    let mu_star = effects.iter().map(|e| e.abs()).sum::<f64>() / n;
    let sigma_ee = if effects.len() > 1 {
        (effects.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    EffectStats { mu, mu_star, sigma_ee }
}

/// Computes elementary effects of `f` along `trajectories`.
///
/// `f` receives unit-hypercube points and returns one value per output.
pub fn elementary_effects<F>(
    mut f: F,
    trajectories: &[MorrisTrajectory],
    specs: &[InputSpec],
    output_names: &[String],
    units: EffectUnits,
) -> Result<EEResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let l = specs.len();
    let k = output_names.len();
    let first = trajectories.first().ok_or_else(|| Error::InvalidArgument("no trajectories".into()))?;
    if let Some(t) = trajectories.iter().find(|t| t.dim() != l) {
        return Err(Error::DimensionMismatch(format!("trajectory of dimension {}, {l} inputs", t.dim())));
    }
    let mut effects = vec![vec![Vec::with_capacity(trajectories.len()); l]; k];
    for (ti, traj) in trajectories.iter().enumerate() {
        let eval = |f: &mut F, row: usize| -> Result<Vec<f64>> {
            let x: Vec<f64> = traj.points.row(row).iter().copied().collect();
            let y =
                f(&x).map_err(|e| Error::Evaluation { trajectory: ti, step: row, source: Box::new(e) })?;
            if y.len() != k {
                return Err(Error::Evaluation {
                    trajectory: ti,
                    step: row,
                    source: Box::new(Error::DimensionMismatch(format!(
                        "model returned {} outputs, expected {k}",
                        y.len()
                    ))),
                });
            }
            Ok(y)
        };
        let mut before = eval(&mut f, 0)?;
        for (step, &v) in traj.varied_index.iter().enumerate() {
            let after = eval(&mut f, step + 1)?;
            let mut d = traj.step(step);
            if units == EffectUnits::Physical {
                d *= specs[v].width();
            }
            for o in 0..k {
                effects[o][v].push((after[o] - before[o]) / d);
            }
            before = after;
        }
    }
    let stats = effects.iter().map(|per_input| per_input.iter().map(|e| summarize(e)).collect()).collect();
    Ok(EEResult {
        input_names: specs.iter().map(|s| s.name.clone()).collect(),
        output_names: output_names.to_vec(),
        stats,
        r: trajectories.len(),
        delta: first.delta,
        units,
    })
}

/// Input indices for `output`, most influential first: descending `μ*`,
/// then descending `σ`, then ascending index.
pub fn rank_inputs(result: &EEResult, output: usize) -> Vec<usize> {
    let s = &result.stats[output];
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| {
        s[b].mu_star.total_cmp(&s[a].mu_star).then(s[b].sigma_ee.total_cmp(&s[a].sigma_ee)).then(a.cmp(&b))
    });
    idx
}

const REPORT_HEADER: [&str; 5] = ["output", "input", "mu", "mu_star", "sigma"];

/// CSV with one row per (output, input).
pub fn ee_report(result: &EEResult) -> String {
    let mut w = WriterBuilder::new().from_writer(Vec::new());
    w.write_record(REPORT_HEADER).expect("in-memory write");
    for row in result.rows() {
        w.write_record([
            row.output,
            row.input,
            row.stats.mu.to_string(),
            row.stats.mu_star.to_string(),
            row.stats.sigma_ee.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn parse_ee_report(text: &str) -> Result<Vec<EERow>> {
    let mut r = ReaderBuilder::new().from_reader(text.as_bytes());
    let header =
        r.headers().map_err(|e| Error::Parse { line: 1, column: "-".into(), message: e.to_string() })?;
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::Parse {
            line: 1,
            column: "-".into(),
            message: format!("header must be {}", REPORT_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            column: "-".into(),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Parse {
                line,
                column: REPORT_HEADER[i].into(),
                message: format!("'{}' is not a number", &rec[i]),
            })
        };
        out.push(EERow {
            output: rec[0].to_string(),
            input: rec[1].to_string(),
            stats: EffectStats { mu: num(2)?, mu_star: num(3)?, sigma_ee: num(4)? },
        });
    }
    Ok(out)
}

/// Ranked summary: `output,rank,input,mu_star,sigma`.
pub fn ranking_report(result: &EEResult) -> String {
    let mut out = String::from("output,rank,input,mu_star,sigma\n");
    for k in 0..result.output_names.len() {
        for (rank, v) in rank_inputs(result, k).into_iter().enumerate() {
            let s = result.stats[k][v];
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                result.output_names[k],
                rank + 1,
                result.input_names[v],
                s.mu_star,
                s.sigma_ee
            ));
        }
    }
    out
}

/// Whitespace-separated plot data, one block per output separated by blank
/// lines. Columns: input index (1-based), μ, μ*, σ, input name.
pub fn plot_data(result: &EEResult) -> String {
    let mut out = String::from("# columns: input mu mu_star sigma name\n");
    for (k, name) in result.output_names.iter().enumerate() {
        out.push_str(&format!("# output {name}\n"));
        for (v, s) in result.stats[k].iter().enumerate() {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                v + 1,
                s.mu,
                s.mu_star,
                s.sigma_ee,
                result.input_names[v]
            ));
        }
        out.push_str("\n\n");
    }
    out
}
