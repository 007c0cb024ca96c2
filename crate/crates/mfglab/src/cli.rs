//! Experiment driver: configuration schema, subcommands and exit codes.
//!
//! Every run reads one JSON configuration file, writes its CSV/JSON artifacts
//! into the output directory and finishes with `manifest.json`. Failures
//! write `error.json` and map to exit code 2 (schema or invalid input),
//! 3 (solver failure) or 1 (I/O).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::learn::{eval_risk, gen_dataset, pac_bound, train_erm, Dataset, GenOptions, OutputBasisSpec, TrainOptions};
use crate::mfg_solver::{simulate_paths, solve_equilibrium, ConsistencyOptions};
use crate::model::{Family, MfgModel, RulePerturbation, ScalarExample};
use crate::operator_core::{unflatten, BasisEnumeration};
use crate::output::{fmt_float, OutputDir, Table};
use crate::rno::{sizing, sizing_with_rho, RnoArchitecture, RnoFile};
use crate::sampling::{
    ellipsoid_membership, read_samples_jsonl, sample_coords, w1_empirical, write_samples_jsonl,
    EllipsoidSpec, KlSpec, SampleFileMeta, ZLaw,
};
use crate::stability::{
    contraction_check, perturbation_constants, perturbation_sweep, reference_regularity, theory_bounds, SweepOptions,
    SWEEP_COLUMNS,
};

/// Environment variable that overrides the default output directory.
pub const OUT_ENV: &str = "MFGLAB_OUT";

pub const EXIT_IO: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mfglab", version, about = "Linear-quadratic mean-field game laboratory")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; overrides the configuration's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the equilibrium (Riccati, offset and mean field).
    Solve,
    /// Reference regularity, perturbation constants and contraction check.
    Constants,
    /// Perturbation sweep along one rule direction.
    Sweep,
    /// Draw Karhunen-Loeve rule samples.
    Sample,
    /// Empirical Wasserstein-1 distance between two samples.
    W1,
    /// Generate a rules-to-control dataset.
    GenData,
    /// Train the neural operator by empirical risk minimisation.
    Train,
    /// Evaluate trained weights on a dataset.
    Eval,
    /// Evaluate the generalisation bound.
    PacBound,
    /// Evaluate the approximation sizing formulas.
    Sizing,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Constants => "constants",
            Command::Sweep => "sweep",
            Command::Sample => "sample",
            Command::W1 => "w1",
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::PacBound => "pac-bound",
            Command::Sizing => "sizing",
        }
    }
}

/// Where the game comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    ScalarExample(ScalarExample<f64>),
    Path(PathBuf),
    Inline(Box<MfgModel<f64>>),
}

/// Rule direction: one family, coordinates in enumeration order (all ones when omitted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionSpec {
    pub family: Family,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

/// Sampler settings; the coordinate enumeration follows the model dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlConfig {
    pub rate: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub trunc_dim: Option<usize>,
    #[serde(default)]
    pub tempered_delta: Option<f64>,
    /// `(d_H, d_U, d_V)`; defaults to the model's dimensions.
    #[serde(default)]
    pub dims: Option<(usize, usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Monte Carlo paths for the mean-field check (0 skips simulation).
    pub n_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default)]
    pub direction: Option<DirectionSpec>,
    #[serde(default = "one")]
    pub scale: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self { direction: None, scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub direction: DirectionSpec,
    pub scales: Vec<f64>,
    #[serde(default = "default_sweep_paths")]
    pub n_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub kl: KlConfig,
    pub n: usize,
    #[serde(default)]
    pub ellipsoid: Option<EllipsoidSpec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct W1Config {
    /// Two sample files written by `sample`.
    #[serde(default)]
    pub files: Option<(PathBuf, PathBuf)>,
    /// Alternatively, two fresh samples of size `n` with seeds `seed` and `seed + 1`.
    #[serde(default)]
    pub kl: Option<KlConfig>,
    #[serde(default)]
    pub n: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub kl: KlConfig,
    pub n: usize,
    #[serde(default = "default_n_time")]
    pub n_time: usize,
    #[serde(default)]
    pub ellipsoid: Option<EllipsoidSpec<f64>>,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub n1: usize,
    pub n2: usize,
    pub depth: usize,
    pub width: usize,
    pub connectivity: usize,
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub arch: ArchConfig,
    #[serde(default)]
    pub options: TrainOptions,
    /// Share of records held out for the test risk.
    #[serde(default)]
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub weights: PathBuf,
    pub dataset: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacConfig {
    pub epsilon: f64,
    pub lipschitz: f64,
    pub n: f64,
    pub r: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizingConfig {
    pub lipschitz: f64,
    pub r: f64,
    pub alpha: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub rho: Option<f64>,
}

/// One run's configuration; each command reads its own section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<ModelSource>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub consistency: ConsistencyOptions,
    #[serde(default)]
    pub solve: Option<SolveConfig>,
    #[serde(default)]
    pub constants: Option<ConstantsConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub sample: Option<SampleConfig>,
    #[serde(default)]
    pub w1: Option<W1Config>,
    #[serde(default)]
    pub gen_data: Option<GenDataConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    #[serde(default)]
    pub pac_bound: Option<PacConfig>,
    #[serde(default)]
    pub sizing: Option<SizingConfig>,
}

fn one() -> f64 {
    1.0
}
fn default_steps() -> usize {
    200
}
fn default_sweep_paths() -> usize {
    1000
}
fn default_n_time() -> usize {
    8
}
fn default_failure_rate() -> f64 {
    0.2
}

/// Machine-readable failure record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    /// Field path of a schema violation.
    pub path: Option<String>,
}

impl CliError {
    pub fn schema(message: impl Into<String>) -> Self {
        Self { code: EXIT_SCHEMA, kind: "schema", message: message.into(), path: None }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Dimension(_) | Error::Domain(_) | Error::Invalid(_) | Error::Family { .. } | Error::Json(_) => {
                (EXIT_SCHEMA, "invalid_input")
            }
            Error::Singular { .. } | Error::NonFinite { .. } | Error::NotConverged { .. } | Error::ContractionViolated(_) => {
                (EXIT_SOLVER, "solver_failure")
            }
            Error::Io(_) | Error::Csv(_) => (EXIT_IO, "io"),
        };
        Self { code, kind, message: e.to_string(), path: None }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses the configuration with field-path diagnostics.
pub fn parse_config(bytes: &[u8]) -> CliResult<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| CliError {
        code: EXIT_SCHEMA,
        kind: "schema",
        path: Some(e.path().to_string()),
        message: e.inner().to_string(),
    })
}

/// Runs the driver on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_SCHEMA,
            };
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match execute(&cli, &out) {
        Ok(()) => 0,
        Err(e) => {
            if let Ok(s) = serde_json::to_string(&e) {
                eprintln!("{s}");
            }
            if std::fs::create_dir_all(&out).is_ok() {
                if let Ok(mut bytes) = serde_json::to_vec_pretty(&e) {
                    bytes.push(b'\n');
                    let _ = std::fs::write(out.join("error.json"), bytes);
                }
            }
            e.code
        }
    }
}

fn execute(cli: &Cli, out: &Path) -> CliResult<()> {
    let config_bytes = match &cli.config {
        Some(p) => std::fs::read(p).map_err(|e| CliError {
            code: EXIT_SCHEMA,
            kind: "schema",
            message: format!("cannot read config {}: {e}", p.display()),
            path: None,
        })?,
        None => b"{}".to_vec(),
    };
    let cfg = parse_config(&config_bytes)?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::schema("--threads must be positive"));
        }
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut dir = OutputDir::create(out).map_err(CliError::from)?;
    let _ = std::fs::remove_file(out.join("error.json"));
    match cli.command {
        Command::Solve => cmd_solve(&cfg, seed, &mut dir),
        Command::Constants => cmd_constants(&cfg, &mut dir),
        Command::Sweep => cmd_sweep(&cfg, seed, &mut dir),
        Command::Sample => cmd_sample(&cfg, seed, &mut dir),
        Command::W1 => cmd_w1(&cfg, seed, &mut dir),
        Command::GenData => cmd_gen_data(&cfg, seed, &mut dir),
        Command::Train => cmd_train(&cfg, seed, &mut dir),
        Command::Eval => cmd_eval(&cfg, &mut dir),
        Command::PacBound => cmd_pac(&cfg, &mut dir),
        Command::Sizing => cmd_sizing(&cfg, &mut dir),
    }?;
    let mut resolved = cfg.clone();
    resolved.seed = Some(seed);
    dir.write_manifest(cli.command.name(), seed, cli.threads, &config_bytes, &resolved)?;
    Ok(())
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    s.as_ref().ok_or_else(|| CliError { path: Some(name.to_string()), ..CliError::schema(format!("missing section `{name}`")) })
}

fn load_model(cfg: &ExperimentConfig) -> CliResult<MfgModel<f64>> {
    let src = section(&cfg.model, "model")?;
    let m = match src {
        ModelSource::ScalarExample(p) => MfgModel::scalar_example(p),
        ModelSource::Path(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::schema(format!("cannot read model {}: {e}", p.display())))?;
            let de = &mut serde_json::Deserializer::from_slice(&bytes);
            serde_path_to_error::deserialize(de).map_err(|e| CliError {
                path: Some(format!("model.path:{}", e.path())),
                ..CliError::schema(e.inner().to_string())
            })?
        }
        ModelSource::Inline(m) => (**m).clone(),
    };
    m.validate()?;
    Ok(m)
}

fn direction(model: &MfgModel<f64>, d: &DirectionSpec) -> CliResult<RulePerturbation<f64>> {
    let (h, u, v) = model.dims();
    let en = BasisEnumeration::new(h, u, v);
    let fi = match d.family {
        Family::A => 0,
        Family::B => 1,
        Family::F2 => 2,
    };
    let range = en.block_ranges()[fi].clone();
    let mut x = vec![0.0; en.len()];
    match &d.values {
        Some(vals) => {
            if vals.len() != range.len() {
                return Err(CliError {
                    path: Some("direction.values".into()),
                    ..CliError::schema(format!("family {} needs {} values, got {}", d.family, range.len(), vals.len()))
                });
            }
            x[range].copy_from_slice(vals);
        }
        None => x[range].iter_mut().for_each(|v| *v = 1.0),
    }
    Ok(unflatten(&x, &en)?)
}

fn kl_spec(model: Option<&MfgModel<f64>>, k: &KlConfig) -> CliResult<KlSpec<f64>> {
    let dims = match (k.dims, model) {
        (Some(d), _) => d,
        (None, Some(m)) => m.dims(),
        (None, None) => return Err(CliError::schema("KL sampler needs `dims` or a `model`")),
    };
    let enumeration = BasisEnumeration::new(dims.0, dims.1, dims.2);
    let spec = KlSpec {
        rate: k.rate,
        scale: k.scale,
        trunc_dim: k.trunc_dim.unwrap_or(enumeration.len()),
        enumeration,
        z_law: ZLaw::StandardNormal,
        tempered_delta: k.tempered_delta,
    };
    spec.validate()?;
    Ok(spec)
}

fn f(v: f64) -> String {
    fmt_float(v)
}

fn cmd_solve(cfg: &ExperimentConfig, seed: u64, dir: &mut OutputDir) -> CliResult<()> {
    let model = load_model(cfg)?;
    let sc = cfg.solve.clone().unwrap_or_default();
    let eq = solve_equilibrium(&model, cfg.steps, &cfg.consistency)?;
    let (h, u, _) = model.dims();
    let n = eq.grid.steps;
    let times = eq.grid.times();

    let mut ric = Table::new(std::iter::once("t".to_string()).chain(pair_names("pi", h, h)));
    for (j, p) in eq.riccati.pi.iter().enumerate() {
        ric.push(std::iter::once(f(times[j])).chain(p.as_slice().iter().map(|v| f(*v))).collect());
    }
    dir.write_csv("riccati.csv", &ric)?;

    let mut header = vec!["t".to_string()];
    header.extend((0..h).map(|k| format!("xbar_{k}")));
    header.extend((0..u).map(|k| format!("ubar_{k}")));
    header.extend((0..h).map(|k| format!("q_{k}")));
    let mut tab = Table::new(header);
    for i in 0..=n {
        let mut row = vec![f(times[i])];
        row.extend(eq.xbar[i].iter().map(|v| f(*v)));
        row.extend(eq.ubar[i].iter().map(|v| f(*v)));
        row.extend(eq.q[n - i].iter().map(|v| f(*v)));
        tab.push(row);
    }
    dir.write_csv("equilibrium.csv", &tab)?;

    let contraction = contraction_check(&model, Some(&eq.riccati))?;
    let mut summary = Table::new(["quantity", "value"]);
    summary.push(vec!["iterations".into(), eq.iterations.to_string()]);
    summary.push(vec!["fixed_point_residual".into(), f(eq.fixed_point_residual)]);
    summary.push(vec!["psd_clips".into(), eq.riccati.psd_clips.to_string()]);
    summary.push(vec!["pi_sup".into(), f(eq.riccati.sup_op_norm())]);
    summary.push(vec!["contraction_value".into(), f(contraction.value)]);
    summary.push(vec!["contraction_pass".into(), contraction.pass.to_string()]);
    dir.write_csv("summary.csv", &summary)?;

    if sc.n_paths > 0 {
        let paths = simulate_paths(&model, &eq, sc.n_paths, seed)?;
        let mean = paths.mean_states();
        let se = paths.mean_state_stderr();
        let mut header = vec!["t".to_string()];
        header.extend((0..h).map(|k| format!("mc_mean_{k}")));
        header.push("stderr".into());
        header.push("deviation".into());
        let mut mc = Table::new(header);
        for i in 0..=n {
            let dev = crate::scalar::norm2(&crate::scalar::sub_vec(&mean[i], &eq.xbar[i]));
            let mut row = vec![f(times[i])];
            row.extend(mean[i].iter().map(|v| f(*v)));
            row.push(f(se[i]));
            row.push(f(dev));
            mc.push(row);
        }
        dir.write_csv("mean_field_mc.csv", &mc)?;
    }
    Ok(())
}

fn pair_names(prefix: &str, r: usize, c: usize) -> Vec<String> {
    (0..r).flat_map(|i| (0..c).map(move |j| format!("{prefix}_{i}_{j}"))).collect()
}

fn cmd_constants(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<()> {
    let model = load_model(cfg)?;
    let cc = cfg.constants.clone().unwrap_or_default();
    let mut consts = Table::new(["group", "name", "value"]);
    let reg = reference_regularity(&model)?;
    for (k, v) in reg.to_map() {
        consts.push(vec!["reference".into(), k, f(v)]);
    }
    let contraction = contraction_check(&model, None)?;
    for (k, v) in [("C1", contraction.c1), ("C2", contraction.c2), ("C3", contraction.c3), ("C4", contraction.c4), ("value", contraction.value)] {
        consts.push(vec!["contraction".into(), k.into(), f(v)]);
    }
    let mut conds = Table::new(["name", "value", "pass"]);
    conds.push(vec!["hypothesis_ref".into(), f(reg.hypothesis), reg.hypothesis_holds().to_string()]);
    conds.push(vec!["contraction".into(), f(contraction.value), contraction.pass.to_string()]);
    if let Some(d) = &cc.direction {
        let dirn = direction(&model, d)?;
        let pert = model.with_perturbation(&dirn.scale(cc.scale))?;
        let led = perturbation_constants(&model, &pert, d.family)?;
        for (k, v) in &led.perturbation_constants {
            consts.push(vec![format!("family_{}", d.family), k.clone(), f(*v)]);
        }
        let fi = match d.family {
            Family::A => 0,
            Family::B => 1,
            Family::F2 => 2,
        };
        let size = cc.scale.abs() * dirn.op_norms()[fi];
        for (k, v) in theory_bounds(&led, size) {
            consts.push(vec!["theory_bound".into(), k, f(v)]);
        }
        for (k, (v, ok)) in &led.conditions {
            conds.push(vec![k.clone(), f(*v), ok.to_string()]);
        }
        dir.write_json("ledger.json", &led)?;
    }
    dir.write_csv("constants.csv", &consts)?;
    dir.write_csv("conditions.csv", &conds)?;
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, seed: u64, dir: &mut OutputDir) -> CliResult<()> {
    let model = load_model(cfg)?;
    let sc = section(&cfg.sweep, "sweep")?;
    let dirn = direction(&model, &sc.direction)?;
    let opts = SweepOptions { steps: cfg.steps, n_paths: sc.n_paths, seed, consistency: cfg.consistency };
    let res = perturbation_sweep(&model, &dirn, &sc.scales, &opts)?;
    let mut header = vec!["scale".to_string(), "status".to_string()];
    header.extend(SWEEP_COLUMNS.iter().map(|c| c.to_string()));
    header.extend(["dx_stderr".to_string(), "du_stderr".to_string()]);
    header.extend(SWEEP_COLUMNS.iter().map(|c| format!("ratio_{c}")));
    header.extend(SWEEP_COLUMNS.iter().map(|c| format!("theory_{c}")));
    let mut tab = Table::new(header);
    let cell = |m: &std::collections::BTreeMap<String, f64>, k: &str| m.get(k).map(|v| f(*v)).unwrap_or_default();
    for row in &res.rows {
        let mut r = vec![f(row.scale), if row.failure.is_some() { "failed".into() } else { "ok".into() }];
        r.extend(SWEEP_COLUMNS.iter().map(|c| cell(&row.deltas, c)));
        r.push(cell(&row.stderr, "dx"));
        r.push(cell(&row.stderr, "du"));
        r.extend(SWEEP_COLUMNS.iter().map(|c| cell(&row.ratios, c)));
        r.extend(SWEEP_COLUMNS.iter().map(|c| cell(&row.theory, c)));
        tab.push(r);
    }
    dir.write_csv("sweep.csv", &tab)?;
    dir.write_json("sweep_ledger.json", &res.ledger)?;
    for row in &res.rows {
        if let Some(msg) = &row.failure {
            log::warn!("sweep point {} failed: {msg}", row.scale);
        }
    }
    Ok(())
}

fn optional_model(cfg: &ExperimentConfig) -> CliResult<Option<MfgModel<f64>>> {
    match cfg.model {
        Some(_) => load_model(cfg).map(Some),
        None => Ok(None),
    }
}

fn cmd_sample(cfg: &ExperimentConfig, seed: u64, dir: &mut OutputDir) -> CliResult<()> {
    let sc = section(&cfg.sample, "sample")?;
    let model = optional_model(cfg)?;
    let spec = kl_spec(model.as_ref(), &sc.kl)?;
    let xs = sample_coords(&spec, sc.n, seed)?;
    let meta = SampleFileMeta { spec: spec.clone(), seed, n: sc.n, tail_mass: spec.tail_mass() };
    write_samples_jsonl(&dir.path("samples.jsonl"), &meta, &xs)?;
    dir.register("samples.jsonl")?;
    let dim = spec.enumeration.len();
    let mut header = vec!["index".to_string()];
    header.extend((0..dim).map(|k| format!("x_{k}")));
    let mut tab = Table::new(header);
    for (i, x) in xs.iter().enumerate() {
        tab.push(std::iter::once(i.to_string()).chain(x.iter().map(|v| f(*v))).collect());
    }
    dir.write_csv("samples.csv", &tab)?;
    let mut summary = Table::new(["quantity", "value"]);
    summary.push(vec!["n".into(), sc.n.to_string()]);
    summary.push(vec!["tail_mass".into(), f(spec.tail_mass())]);
    if let Some(ell) = &sc.ellipsoid {
        ell.validate()?;
        let inside = xs.iter().filter(|x| ellipsoid_membership(x, ell)).count();
        summary.push(vec!["inside_ellipsoid".into(), inside.to_string()]);
        summary.push(vec!["coverage".into(), f(if xs.is_empty() { 0.0 } else { inside as f64 / xs.len() as f64 })]);
    }
    dir.write_csv("sample_summary.csv", &summary)?;
    Ok(())
}

fn cmd_w1(cfg: &ExperimentConfig, seed: u64, dir: &mut OutputDir) -> CliResult<()> {
    let wc = section(&cfg.w1, "w1")?;
    let (xs, ys) = match (&wc.files, &wc.kl, wc.n) {
        (Some((a, b)), None, None) => (read_samples_jsonl::<f64>(a)?.1, read_samples_jsonl::<f64>(b)?.1),
        (None, Some(k), Some(n)) => {
            let model = optional_model(cfg)?;
            let spec = kl_spec(model.as_ref(), k)?;
            (sample_coords(&spec, n, seed)?, sample_coords(&spec, n, seed.wrapping_add(1))?)
        }
        _ => return Err(CliError::schema("w1 needs either `files` or both `kl` and `n`")),
    };
    let w = w1_empirical(&xs, &ys)?;
    let mut tab = Table::new(["n_a", "n_b", "w1"]);
    tab.push(vec![xs.len().to_string(), ys.len().to_string(), f(w)]);
    dir.write_csv("w1.csv", &tab)?;
    Ok(())
}

fn cmd_gen_data(cfg: &ExperimentConfig, seed: u64, dir: &mut OutputDir) -> CliResult<()> {
    let model = load_model(cfg)?;
    let gc = section(&cfg.gen_data, "gen_data")?;
    let spec = kl_spec(Some(&model), &gc.kl)?;
    let basis = OutputBasisSpec { n_time: gc.n_time, d_u: model.dim_u(), horizon: model.horizon };
    let opts = GenOptions {
        steps: cfg.steps,
        consistency: cfg.consistency,
        ellipsoid: gc.ellipsoid.clone(),
        max_failure_rate: gc.max_failure_rate,
    };
    let data = gen_dataset(&model, &spec, &basis, gc.n, seed, &opts)?;
    data.write(&dir.path("dataset.jsonl"))?;
    dir.register("dataset.jsonl")?;
    dir.register("dataset.bin")?;
    let mut tab = Table::new(["index", "input_norm", "target_norm", "target_residual_norm"]);
    for (i, r) in data.records.iter().enumerate() {
        let res = crate::scalar::sub_vec(&r.target, &data.meta.reference_target);
        tab.push(vec![
            i.to_string(),
            f(crate::scalar::norm2(&r.input)),
            f(crate::scalar::norm2(&r.target)),
            f(crate::scalar::norm2(&res)),
        ]);
    }
    dir.write_csv("dataset_summary.csv", &tab)?;
    Ok(())
}

fn read_dataset(p: &Path) -> CliResult<Dataset<f64>> {
    Dataset::read(p).map_err(|e| match e {
        Error::Io(io) => CliError::schema(format!("cannot read dataset {}: {io}", p.display())),
        other => other.into(),
    })
}

fn cmd_train(cfg: &ExperimentConfig, seed: u64, dir: &mut OutputDir) -> CliResult<()> {
    let tc = section(&cfg.train, "train")?;
    if !(0.0..1.0).contains(&tc.test_fraction) {
        return Err(CliError::schema("train.test_fraction must lie in [0, 1)"));
    }
    let data = read_dataset(&tc.dataset)?;
    if data.is_empty() {
        return Err(CliError::schema("dataset is empty"));
    }
    let (train, test) = if tc.test_fraction > 0.0 {
        data.split(1.0 - tc.test_fraction, seed)
    } else {
        (data.clone(), Dataset { records: Vec::new(), meta: data.meta.clone() })
    };
    let a = &tc.arch;
    let nt = data.records[0].target.len();
    if a.n2 > nt {
        return Err(CliError::schema(format!("arch.n2 = {} exceeds the target dimension {nt}", a.n2)));
    }
    let mut arch = RnoArchitecture::uniform(a.n1, a.n2, a.depth, a.width, a.connectivity, a.lipschitz);
    arch.y_base_coords = vec![0.0; nt];
    let opts = TrainOptions { seed, ..tc.options };
    let outcome = train_erm(&train, &arch, &opts)?;
    dir.write_json("weights.json", &RnoFile::new(&outcome.arch, &outcome.weights))?;
    let mut curve = Table::new(["epoch", "train_risk", "certificate", "nonzeros"]);
    for r in &outcome.curve {
        curve.push(vec![r.epoch.to_string(), f(r.train_risk), f(r.certificate), r.nonzeros.to_string()]);
    }
    dir.write_csv("learning_curve.csv", &curve)?;
    let mut risk = Table::new(["split", "n", "risk", "mean_target_residual"]);
    let (tr, _) = eval_risk(&outcome.arch, &outcome.weights, &train)?;
    risk.push(vec!["train".into(), train.len().to_string(), f(tr), f(train.mean_target_residual())]);
    if !test.is_empty() {
        let (te, _) = eval_risk(&outcome.arch, &outcome.weights, &test)?;
        risk.push(vec!["test".into(), test.len().to_string(), f(te), f(test.mean_target_residual())]);
    }
    dir.write_csv("risk.csv", &risk)?;
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<()> {
    let ec = section(&cfg.eval, "eval")?;
    let bytes = std::fs::read(&ec.weights)
        .map_err(|e| CliError::schema(format!("cannot read weights {}: {e}", ec.weights.display())))?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    let file: RnoFile<f64> = serde_path_to_error::deserialize(de).map_err(|e| CliError {
        path: Some(format!("weights:{}", e.path())),
        ..CliError::schema(e.inner().to_string())
    })?;
    file.arch.validate()?;
    let data = read_dataset(&ec.dataset)?;
    let (mean, per) = eval_risk(&file.arch, &file.weights(), &data)?;
    let mut tab = Table::new(["index", "risk"]);
    for (i, v) in per.iter().enumerate() {
        tab.push(vec![i.to_string(), f(*v)]);
    }
    dir.write_csv("eval.csv", &tab)?;
    let mut summary = Table::new(["n", "risk", "mean_target_residual"]);
    summary.push(vec![data.len().to_string(), f(mean), f(data.mean_target_residual())]);
    dir.write_csv("eval_summary.csv", &summary)?;
    Ok(())
}

fn cmd_pac(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<()> {
    let p = section(&cfg.pac_bound, "pac_bound")?;
    let b = pac_bound(p.epsilon, p.lipschitz, p.n, p.r, p.delta)?;
    let mut tab = Table::new(["epsilon", "lipschitz", "n", "r", "delta", "bound"]);
    tab.push(vec![f(p.epsilon), f(p.lipschitz), f(p.n), f(p.r), f(p.delta), f(b)]);
    dir.write_csv("pac_bound.csv", &tab)?;
    Ok(())
}

fn cmd_sizing(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<()> {
    let s = section(&cfg.sizing, "sizing")?;
    let rep = match s.rho {
        Some(rho) => sizing_with_rho(s.lipschitz, s.r, s.alpha, s.epsilon, rho)?,
        None => sizing(s.lipschitz, s.r, s.alpha, s.epsilon)?,
    };
    let mut tab = Table::new(["quantity", "value"]);
    tab.push(vec!["c_ceiling".into(), rep.c_ceiling.to_string()]);
    tab.push(vec!["c_exponent".into(), f(rep.c_exponent)]);
    tab.push(vec!["width_order".into(), f(rep.width_order)]);
    tab.push(vec!["connectivity_order".into(), f(rep.connectivity_order)]);
    tab.push(vec!["depth_order".into(), f(rep.depth_order)]);
    tab.push(vec!["latent_dim".into(), rep.latent_dim.to_string()]);
    tab.push(vec!["special_rate".into(), rep.special_rate.map(f).unwrap_or_default()]);
    tab.push(vec!["special_order".into(), rep.special_order.map(f).unwrap_or_default()]);
    dir.write_csv("sizing.csv", &tab)?;
    Ok(())
}
