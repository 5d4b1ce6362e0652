//! Command-line front end.
//!
//! Every option can also come from a TOML config file (`--config`), either
//! at top level or in a table named after the subcommand; flags win over the
//! subcommand table, which wins over top-level keys. Keys are the long flag
//! names, with `-` or `_` accepted interchangeably.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::csvio::{
    parse_dataset_csv, parse_matrix_csv, parse_specs_csv, parse_unit_design_csv, points_to_unit,
    write_dataset_csv, write_matrix_csv,
};
use crate::design::{maximin_lhs, morris_trajectories, scale_design, unit_specs, DesignMatrix, InputSpec};
use crate::error::Error;
use crate::mgp::{
    fit, fit_independent, load_model, model_to_json, rmse, BasisKind, FitConfig, FittedModel, LambdaChoice,
    RegressionBasis,
};
use crate::plantsim::{
    generate_dataset, plant_input_specs, plant_response, PlantConfig, DEFAULT_RELATIVE_NOISE, OUTPUT_NAMES,
};
use crate::sensitivity::{ee_report, elementary_effects, plot_data, ranking_report, EffectUnits};

/// Printed by `--version`.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (model format mgpkit-model-v1)");

#[derive(Parser, Debug)]
#[command(name = "mgpkit", version = VERSION, about = "Multi-output Gaussian-process surrogate toolkit")]
pub struct Cli {
    /// TOML file supplying defaults for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Maximin Latin hypercube design.
    Design(DesignArgs),
    /// Run the virtual plant on a design.
    Simulate(SimulateArgs),
    /// Fit a joint or independent model.
    Fit(FitArgs),
    /// Predict with a fitted model.
    Predict(PredictArgs),
    /// Test RMSE of joint vs independent fits.
    Compare(CompareArgs),
    /// Morris elementary-effects screening.
    Sensitivity(SensitivityArgs),
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random LHS draws; the best minimum distance wins.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// CSV `name,lower,upper`; defaults to unit ranges.
    #[arg(long)]
    pub specs_file: Option<PathBuf>,
    /// Use the virtual plant's six inputs as specs.
    #[arg(long, conflicts_with = "specs_file")]
    pub plant: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Unit-hypercube design CSV.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Noise sd as a fraction of each output's midpoint response.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional second design, simulated with seed + 1.
    #[arg(long)]
    pub test_design: Option<PathBuf>,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// const, linear or quad.
    #[arg(long)]
    pub basis: Option<String>,
    /// Use raw `x` instead of `x - 1/2` in the trend terms.
    #[arg(long)]
    pub raw_basis: bool,
    /// `auto` or a nonnegative number.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// mgp or independent.
    #[arg(long)]
    pub mode: Option<String>,
    /// Model JSON path; independent mode writes one file per output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit report path (default: model path with `.report.txt`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV of physical input values with the model's input names as header.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    /// `plant` or a model JSON path.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// unit or physical.
    #[arg(long)]
    pub units: Option<String>,
    /// Plant coupling when the target is the plant.
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    /// 2 usage, 3 data or parse, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => lib_code(e),
        }
    }
}

fn lib_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Evaluation { source, .. } => lib_code(source),
        e if e.is_numerical() => 4,
        _ => 3,
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Option lookup with flag > `[command]` table > top level precedence.
struct Settings {
    table: toml::Table,
    command: &'static str,
}

impl Settings {
    fn load(path: Option<&Path>, command: &'static str) -> CliResult<Self> {
        let table = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
        };
        Ok(Settings { table, command })
    }

    fn raw(&self, key: &str) -> Option<toml::Value> {
        let keys = [key.to_string(), key.replace('-', "_"), key.replace('_', "-")];
        let find = |t: &toml::Table| keys.iter().find_map(|k| t.get(k)).filter(|v| !v.is_table()).cloned();
        let scoped = self.table.get(self.command).and_then(|v| v.as_table());
        scoped.and_then(find).or_else(|| find(&self.table))
    }

    fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let text = match &v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        text.parse::<T>().map(Some).map_err(|e| CliError::Usage(format!("config key `{key}` = {v}: {e}")))
    }

    fn or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.get(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required option --{}", key.replace('_', "-"))))
    }

    fn flag(&self, key: &str, flag: bool) -> CliResult<bool> {
        Ok(flag || self.get::<bool>(key, None)?.unwrap_or(false))
    }
}

fn log(command: &str, fields: &[(&str, String)]) {
    let mut line = format!("mgpkit cmd={command}");
    for (k, v) in fields {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Lib(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
    })
}

/// Parses the arguments and runs the command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(cli)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Design(a) => cmd_design(a, &Settings::load(cfg, "design")?),
        Command::Simulate(a) => cmd_simulate(a, &Settings::load(cfg, "simulate")?),
        Command::Fit(a) => cmd_fit(a, &Settings::load(cfg, "fit")?),
        Command::Predict(a) => cmd_predict(a, &Settings::load(cfg, "predict")?),
        Command::Compare(a) => cmd_compare(a, &Settings::load(cfg, "compare")?),
        Command::Sensitivity(a) => cmd_sensitivity(a, &Settings::load(cfg, "sensitivity")?),
    }
}

fn cmd_design(a: DesignArgs, s: &Settings) -> CliResult<()> {
    let start = Instant::now();
    let n = s.required("n", a.n)?;
    let seed = s.or("seed", a.seed, 0)?;
    let restarts = s.or("restarts", a.restarts, 20)?;
    let out_dir = s.or("out-dir", a.out_dir, PathBuf::from("."))?;
    let specs = match s.get("specs-file", a.specs_file)? {
        Some(p) => parse_specs_csv(&read_file(&p)?)?,
        None if s.flag("plant", a.plant)? => plant_input_specs(),
        None => unit_specs(s.required("dims", a.dims)?),
    };
    let dims = s.get("dims", a.dims)?.unwrap_or(specs.len());
    if dims != specs.len() {
        return Err(CliError::Usage(format!(
            "--dims {dims} but the specs file lists {} inputs",
            specs.len()
        )));
    }
    let d = maximin_lhs(n, dims, seed, restarts)?;
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    let phys = scale_design(&d, &specs)?;
    write_file(&out_dir.join("design_unit.csv"), &write_matrix_csv(&names, d.points()))?;
    write_file(&out_dir.join("design_physical.csv"), &write_matrix_csv(&names, &phys))?;
    log(
        "design",
        &[
            ("status", "ok".into()),
            ("n", n.to_string()),
            ("dims", dims.to_string()),
            ("seed", seed.to_string()),
            ("restarts", restarts.to_string()),
            ("min_distance", d.min_distance().to_string()),
            ("elapsed_ms", start.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

fn read_unit_design(path: &Path) -> CliResult<DesignMatrix> {
    let (_, m) = parse_unit_design_csv(&read_file(path)?)?;
    Ok(DesignMatrix::new(m)?)
}

fn cmd_simulate(a: SimulateArgs, s: &Settings) -> CliResult<()> {
    let start = Instant::now();
    let design = s.required("design", a.design)?;
    let out = s.required("out", a.out)?;
    let reps = s.or("reps", a.reps, 1)?;
    let noise = s.or("noise", a.noise, DEFAULT_RELATIVE_NOISE)?;
    let coupling = s.or("coupling", a.coupling, 1.0)?;
    let seed = s.or("seed", a.seed, 0)?;
    let test_design: Option<PathBuf> = s.get("test-design", a.test_design)?;
    let test_out: Option<PathBuf> = s.get("test-out", a.test_out)?;
    if test_design.is_some() != test_out.is_some() {
        return Err(CliError::Usage("--test-design and --test-out go together".into()));
    }
    let cfg = PlantConfig::new(coupling, noise, seed)?;
    let data = generate_dataset(&read_unit_design(&design)?, &cfg, reps)?;
    write_file(&out, &write_dataset_csv(&data))?;
    if let (Some(td), Some(to)) = (test_design, test_out) {
        let test_cfg = PlantConfig { seed: seed.wrapping_add(1), ..cfg.clone() };
        let test = generate_dataset(&read_unit_design(&td)?, &test_cfg, reps)?;
        write_file(&to, &write_dataset_csv(&test))?;
    }
    log(
        "simulate",
        &[
            ("status", "ok".into()),
            ("rows", data.y[0].len().to_string()),
            ("reps", reps.to_string()),
            ("noise", noise.to_string()),
            ("coupling", coupling.to_string()),
            ("seed", seed.to_string()),
            ("elapsed_ms", start.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

/// Basis and fit configuration shared by `fit` and `compare`.
fn model_setup(m: &ModelArgs, s: &Settings, k: usize) -> CliResult<(RegressionBasis, FitConfig)> {
    let kind: BasisKind = s
        .or("basis", m.basis.clone(), "linear".to_string())?
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let basis = if s.flag("raw-basis", m.raw_basis)? {
        RegressionBasis::uniform(kind, k)
    } else {
        RegressionBasis::centered(kind, k)
    };
    let lambda = match s.or("lambda", m.lambda.clone(), "auto".to_string())?.as_str() {
        "auto" => LambdaChoice::Auto,
        v => LambdaChoice::Fixed(v.parse::<f64>().ok().filter(|x| *x >= 0.0 && x.is_finite()).ok_or_else(
            || CliError::Usage(format!("--lambda must be `auto` or a number >= 0, got `{v}`")),
        )?),
    };
    let config = FitConfig {
        lambda,
        restarts: s.or("restarts", m.restarts, 5)?,
        seed: s.or("seed", m.seed, 0)?,
        ..FitConfig::default()
    };
    Ok((basis, config))
}

fn fmt_matrix(names: &[String], m: &DMatrix<f64>) -> String {
    let mut header = vec![String::from("output")];
    header.extend(names.iter().cloned());
    let mut out = header.join(",") + "\n";
    for (r, name) in names.iter().enumerate() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{name},{}\n", row.join(",")));
    }
    out
}

fn term_names(kind: BasisKind, specs: &[InputSpec]) -> Vec<String> {
    let mut t = vec![String::from("1")];
    if kind != BasisKind::Constant {
        t.extend(specs.iter().map(|s| s.name.clone()));
    }
    if kind == BasisKind::Quadratic {
        t.extend(specs.iter().map(|s| format!("{}^2", s.name)));
    }
    t
}

/// Text report of one or more fitted models (one per output in
/// independent mode).
fn fit_report(mode: &str, models: &[FittedModel]) -> String {
    let mut out = String::from("# mgpkit fit report\n");
    out.push_str(&format!("mode={mode}\n"));
    let first = &models[0];
    out.push_str(&format!("basis={}\n", first.basis.kinds[0]));
    out.push_str(&format!("centered={}\n", first.basis.centered));
    for m in models {
        let d = &m.diagnostics;
        let tag = m.data.output_names.join("+");
        out.push_str(&format!("[{tag}] lambda={}\n", m.params.lambda));
        out.push_str(&format!("[{tag}] loglik={}\n", d.loglik));
        out.push_str(&format!("[{tag}] objective={}\n", d.objective));
        out.push_str(&format!("[{tag}] converged={}\n", d.converged));
        out.push_str(&format!("[{tag}] nugget={}\n", m.params.nugget));
        let scores: Vec<String> =
            d.restart_scores.iter().map(|s| s.map_or("failed".to_string(), |v| v.to_string())).collect();
        out.push_str(&format!("[{tag}] restart_scores={}\n", scores.join(";")));
    }
    if models.len() == 1 {
        out.push_str("\n# estimated cross-correlation T\n");
        out.push_str(&fmt_matrix(&first.data.output_names, first.t().matrix()));
    }
    out.push_str("\n# trend coefficients: fitted (standardized) scale and original units\n");
    out.push_str("output,term,standardized,original,zero\n");
    for m in models {
        for (k, beta) in m.beta_original().iter().enumerate() {
            let terms = term_names(m.basis.kinds[k], &m.data.specs);
            for (j, b) in beta.iter().enumerate() {
                let raw = m.params.beta[k][j];
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.data.output_names[k],
                    terms[j],
                    raw,
                    b,
                    raw == 0.0
                ));
            }
        }
    }
    out
}

fn cmd_fit(a: FitArgs, s: &Settings) -> CliResult<()> {
    let start = Instant::now();
    let data_path: PathBuf = s.required("data", a.data)?;
    let out: PathBuf = s.required("out", a.out)?;
    let mode = s.or("mode", a.mode, "mgp".to_string())?;
    let data = parse_dataset_csv(&read_file(&data_path)?)?;
    let (basis, config) = model_setup(&a.model, s, data.k())?;
    let models = match mode.as_str() {
        "mgp" => vec![fit(&data, &basis, &config).inspect_err(|e| dump_failure("fit", e, &config))?],
        "independent" => {
            fit_independent(&data, &basis, &config).inspect_err(|e| dump_failure("fit", e, &config))?
        }
        other => return Err(CliError::Usage(format!("--mode must be mgp or independent, got `{other}`"))),
    };
    let paths: Vec<PathBuf> = if models.len() == 1 && mode == "mgp" {
        vec![out.clone()]
    } else {
        let stem = out.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
        models.iter().map(|m| out.with_file_name(format!("{stem}_{}.json", m.data.output_names[0]))).collect()
    };
    for (m, p) in models.iter().zip(&paths) {
        write_file(p, &model_to_json(m)?)?;
    }
    let report = s.get("report", a.report)?.unwrap_or_else(|| out.with_extension("report.txt"));
    write_file(&report, &fit_report(&mode, &models))?;
    let loglik: f64 = models.iter().map(|m| m.diagnostics.loglik).sum();
    log(
        "fit",
        &[
            ("status", "ok".into()),
            ("mode", mode),
            ("models", models.len().to_string()),
            ("loglik", loglik.to_string()),
            ("lambda", models[0].params.lambda.to_string()),
            ("seed", config.seed.to_string()),
            ("restarts", config.restarts.to_string()),
            ("elapsed_ms", start.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

fn dump_failure(cmd: &str, e: &Error, config: &FitConfig) {
    log(
        cmd,
        &[
            ("status", "failed".into()),
            ("seed", config.seed.to_string()),
            ("restarts", config.restarts.to_string()),
            ("lambda", format!("{:?}", config.lambda).replace(' ', "")),
            ("error", format!("{e:?}").replace(' ', "_")),
        ],
    );
}

fn cmd_predict(a: PredictArgs, s: &Settings) -> CliResult<()> {
    let start = Instant::now();
    let model_path: PathBuf = s.required("model", a.model)?;
    let points: PathBuf = s.required("points", a.points)?;
    let out: PathBuf = s.required("out", a.out)?;
    let model = load_model(&model_path)?;
    let (names, phys) = parse_matrix_csv(&read_file(&points)?)?;
    let unit = points_to_unit(&names, &phys, &model.data.specs)?;
    let mut header: Vec<String> = model.data.specs.iter().map(|s| s.name.clone()).collect();
    for o in &model.data.output_names {
        for suffix in ["mean", "sd", "lower", "upper"] {
            header.push(format!("{o}_{suffix}"));
        }
    }
    header.push("out_of_range".into());
    let mut text = header.join(",") + "\n";
    let mut flagged = 0;
    for r in 0..unit.nrows() {
        let x: Vec<f64> = unit.row(r).iter().copied().collect();
        let p = model.predict(&x)?;
        let mut row: Vec<String> =
            model.data.specs.iter().enumerate().map(|(c, s)| s.to_physical(x[c]).to_string()).collect();
        for k in 0..model.k() {
            row.push(p.mean[k].to_string());
            row.push(p.sd[k].to_string());
            row.push((p.mean[k] - 2.0 * p.sd[k]).to_string());
            row.push((p.mean[k] + 2.0 * p.sd[k]).to_string());
        }
        row.push(p.out_of_range.to_string());
        flagged += usize::from(p.out_of_range);
        text.push_str(&(row.join(",") + "\n"));
    }
    write_file(&out, &text)?;
    log(
        "predict",
        &[
            ("status", "ok".into()),
            ("points", unit.nrows().to_string()),
            ("out_of_range", flagged.to_string()),
            ("elapsed_ms", start.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

fn cmd_compare(a: CompareArgs, s: &Settings) -> CliResult<()> {
    let start = Instant::now();
    let train = parse_dataset_csv(&read_file(&s.required::<PathBuf>("train", a.train)?)?)?;
    let test = parse_dataset_csv(&read_file(&s.required::<PathBuf>("test", a.test)?)?)?;
    let out_dir = s.or("out-dir", a.out_dir, PathBuf::from("."))?;
    if test.output_names != train.output_names || test.specs != train.specs {
        return Err(CliError::Lib(Error::DimensionMismatch(
            "train and test datasets differ in inputs or outputs".into(),
        )));
    }
    let (basis, config) = model_setup(&a.model, s, train.k())?;
    let joint = fit(&train, &basis, &config).inspect_err(|e| dump_failure("compare", e, &config))?;
    let ind =
        fit_independent(&train, &basis, &config).inspect_err(|e| dump_failure("compare", e, &config))?;
    let rm = rmse(&joint, &test)?;
    let ri = rmse(ind.as_slice(), &test)?;
    let mut table = String::from("output,mgp_rmse,independent_rmse\n");
    for (k, name) in train.output_names.iter().enumerate() {
        table.push_str(&format!("{name},{},{}\n", rm[k], ri[k]));
    }
    write_file(&out_dir.join("rmse.csv"), &table)?;
    write_file(&out_dir.join("cross_correlation.csv"), &fmt_matrix(&train.output_names, joint.t().matrix()))?;
    let wins = rm.iter().zip(&ri).filter(|(a, b)| a <= b).count();
    log(
        "compare",
        &[
            ("status", "ok".into()),
            ("outputs", train.k().to_string()),
            ("mgp_wins", wins.to_string()),
            ("seed", config.seed.to_string()),
            ("elapsed_ms", start.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

fn cmd_sensitivity(a: SensitivityArgs, s: &Settings) -> CliResult<()> {
    let start = Instant::now();
    let target = s.or("target", a.target, "plant".to_string())?;
    let r = s.or("r", a.r, 10)?;
    let delta = s.or("delta", a.delta, 0.3)?;
    let seed = s.or("seed", a.seed, 0)?;
    let out_dir = s.or("out-dir", a.out_dir, PathBuf::from("."))?;
    let units = match s.or("units", a.units, "unit".to_string())?.as_str() {
        "unit" => EffectUnits::Unit,
        "physical" => EffectUnits::Physical,
        other => return Err(CliError::Usage(format!("--units must be unit or physical, got `{other}`"))),
    };
    let result = if target == "plant" {
        let cfg = PlantConfig::new(s.or("coupling", a.coupling, 1.0)?, 0.0, seed)?;
        let specs = cfg.specs.clone();
        let tr = morris_trajectories(r, specs.len(), delta, seed)?;
        let names: Vec<String> = OUTPUT_NAMES.iter().map(|n| n.to_string()).collect();
        let f = |u: &[f64]| {
            let x: Vec<f64> = u.iter().zip(&specs).map(|(v, sp)| sp.to_physical(*v)).collect();
            Ok(plant_response(&x, &cfg)?.power.to_vec())
        };
        elementary_effects(f, &tr, &cfg.specs, &names, units)?
    } else {
        let model = load_model(Path::new(&target))?;
        let tr = morris_trajectories(r, model.dim(), delta, seed)?;
        let f = |u: &[f64]| Ok(model.predict(u)?.mean);
        elementary_effects(f, &tr, &model.data.specs, &model.data.output_names, units)?
    };
    write_file(&out_dir.join("ee.csv"), &ee_report(&result))?;
    write_file(&out_dir.join("ee_ranking.csv"), &ranking_report(&result))?;
    write_file(&out_dir.join("ee_plot.dat"), &plot_data(&result))?;
    log(
        "sensitivity",
        &[
            ("status", "ok".into()),
            ("target", target.replace(' ', "_")),
            ("r", r.to_string()),
            ("delta", delta.to_string()),
            ("seed", seed.to_string()),
            ("elapsed_ms", start.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}
