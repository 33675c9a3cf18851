//! `sucpr`: estimation, cointegration tests, Wald tests and Monte Carlo
//! experiments for seemingly unrelated cointegrating polynomial regressions.

mod config;
mod dataset;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use sucpr::estimators::{estimate, fm_sols, fm_sur, gls_first_stage, ols, EstimationResult, Method};
use sucpr::inference::{kpss_from_estimate, selection_matrix, wald, KpssOptions, KpssVariant};
use sucpr::model::{CprSpec, PanelData};
use sucpr::montecarlo::{generate, preset, rng_for, DgpConfig, ExperimentPlan};

use config::{coefficient_names, parse_restriction, LrArg, MethodArg, Restriction, RunConfig};
use dataset::Dataset;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Validation(String),
    /// Numerical breakdown: exit code 3.
    Numerical(String),
}

impl CliError {
    fn io(e: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("i/o: {e}"))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<sucpr::Error> for CliError {
    fn from(e: sucpr::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "sucpr", version, about = "SUCPR estimation and cointegration testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration (`ekc`).
    #[arg(long)]
    preset: Option<String>,
    /// Wide CSV dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file for the JSON result (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    lr: Option<LrArg>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the system and report coefficients with 95% intervals.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Residual CSV for plotting.
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Subsampling KPSS tests of the cointegration null.
    Test {
        #[command(flatten)]
        common: Common,
        /// Significance level.
        #[arg(long)]
        alpha: Option<f64>,
        /// Test variants (sols, sur, biam); all by default.
        #[arg(long = "variant")]
        variants: Vec<String>,
        /// Fixed block size instead of the minimum volatility rule.
        #[arg(long)]
        block_size: Option<usize>,
    },
    /// Wald test of coefficient restrictions `UNIT:COEF=VALUE`.
    Wald {
        #[command(flatten)]
        common: Common,
        #[arg(long = "restrict")]
        restrictions: Vec<String>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run a Monte Carlo experiment.
    Simulate {
        /// Experiment plan (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// table1, table2, table3 or ct-tests.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (all cores if absent).
        #[arg(long)]
        threads: Option<usize>,
        /// Output prefix: writes `<out>.csv` and `<out>.json`. CSV to stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the JSON schemas of the command outputs.
    ExportSchema {
        /// One of estimate, test, wald, simulate; all if absent.
        #[arg(long)]
        kind: Option<String>,
        /// Directory for the schema files (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a dataset in canonical form, either re-read from `--data` or
    /// simulated from a design file.
    Export {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Simulation design (TOML, one design's fields).
        #[arg(long)]
        dgp: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Estimate { common, residuals } => cmd_estimate(&common, residuals),
        Command::Test {
            common,
            alpha,
            variants,
            block_size,
        } => cmd_test(&common, alpha, variants, block_size),
        Command::Wald {
            common,
            restrictions,
            alpha,
        } => cmd_wald(&common, restrictions, alpha),
        Command::Simulate {
            config,
            preset,
            reps,
            seed,
            threads,
            out,
        } => cmd_simulate(config, preset, reps, seed, threads, out),
        Command::ExportSchema { kind, out } => cmd_export_schema(kind, out),
        Command::Export { data, dgp, seed, out } => cmd_export(data, dgp, seed, out),
    }
}

/// Writes `text` to `path`, or to stdout.
fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Validation(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

struct Loaded {
    cfg: RunConfig,
    ds: Dataset,
    spec: CprSpec,
    data: PanelData,
}

fn load(common: &Common) -> CliResult<Loaded> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => return Err(CliError::Validation("use either --config or --preset".into())),
        (Some(path), None) => RunConfig::from_path(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if common.method.is_some() {
        cfg.method = common.method;
    }
    if common.lr.is_some() {
        cfg.lr = common.lr;
    }
    if common.data.is_some() {
        cfg.data = common.data.clone();
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    cfg.validate()?;
    let path = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Validation("no dataset given (--data or `data` in the config)".into()))?;
    let ds = Dataset::from_path(&path)?;
    let spec = cfg.spec(&ds.names)?;
    let data = ds.panel()?;
    data.check_len(&spec)?;
    Ok(Loaded { cfg, ds, spec, data })
}

fn method_of(m: MethodArg) -> Method {
    match m {
        MethodArg::Sols => Method::FmSols,
        MethodArg::Sur => Method::FmSur,
        MethodArg::Fgls => Method::FmGls,
    }
}

/// Runs `method` with the long-run covariance from `lr`.
fn estimate_with(l: &Loaded, method: Method, lr: LrArg) -> CliResult<EstimationResult> {
    let opts = l.cfg.estimation_options();
    match (method, lr) {
        (Method::FmGls, LrArg::Kernel) => Err(CliError::Validation(
            "FM-GLS uses the BIAM long-run covariance; pass --lr biam".into(),
        )),
        (_, LrArg::Kernel) | (Method::FmGls, _) => Ok(estimate(&l.spec, &l.data, method, &opts)?),
        (_, LrArg::Biam) => {
            let first = ols(&l.spec, &l.data)?;
            let (biam, lr, banding) = gls_first_stage(&l.data, &first.residuals, &opts)?;
            let mut res = match method {
                Method::FmSols => fm_sols(&l.spec, &l.data, &lr)?,
                _ => fm_sur(&l.spec, &l.data, &lr)?,
            };
            res.biam = Some(biam);
            res.banding = banding;
            Ok(res)
        }
    }
}

fn chosen(l: &Loaded) -> (Method, LrArg) {
    let method = l.cfg.method.unwrap_or(MethodArg::Fgls);
    let lr = l.cfg.lr.unwrap_or(if method == MethodArg::Fgls { LrArg::Biam } else { LrArg::Kernel });
    (method_of(method), lr)
}

fn cmd_estimate(common: &Common, residuals: Option<PathBuf>) -> CliResult<()> {
    let l = load(common)?;
    let (method, lr) = chosen(&l);
    let est = estimate_with(&l, method, lr)?;
    let report = output::EstimateReport::new(&l.ds, &est, lr)?;
    let json = output::to_json(&report)?;
    let resid_csv = output::residual_csv(&l.ds, &est)?;
    let resid_path = residuals.or(l.cfg.residuals.clone());
    emit(l.cfg.out.as_deref(), &json)?;
    if let Some(p) = resid_path {
        emit(Some(&p), &resid_csv)?;
    }
    if l.cfg.out.is_some() {
        print!("{}", report.table());
    }
    Ok(())
}

fn cmd_test(common: &Common, alpha: Option<f64>, variants: Vec<String>, block_size: Option<usize>) -> CliResult<()> {
    let mut l = load(common)?;
    if alpha.is_some() {
        l.cfg.alpha = alpha;
    }
    if block_size.is_some() {
        l.cfg.block_size = block_size;
    }
    if !variants.is_empty() {
        l.cfg.variants = Some(variants);
    }
    l.cfg.validate()?;
    let variants: Vec<KpssVariant> = match &l.cfg.variants {
        Some(vs) => vs.iter().map(|v| v.parse()).collect::<Result<_, _>>()?,
        None => KpssVariant::ALL.to_vec(),
    };
    let opts = KpssOptions {
        alpha: l.cfg.alpha.unwrap_or(0.05),
        block_size: l.cfg.block_size,
        candidates: None,
    };
    let lr = l.cfg.lr.unwrap_or(LrArg::Kernel);
    let mut rows = Vec::new();
    for v in variants {
        let method = v.method();
        let source = if method == Method::FmGls { LrArg::Biam } else { lr };
        let est = estimate_with(&l, method, source)?;
        rows.push(kpss_from_estimate(&est, v, &opts)?);
    }
    let report = output::TestReport::new(&l.ds, opts.alpha, rows);
    emit(l.cfg.out.as_deref(), &output::to_json(&report)?)?;
    if l.cfg.out.is_some() {
        print!("{}", report.table());
    }
    Ok(())
}

fn cmd_wald(common: &Common, restrictions: Vec<String>, alpha: Option<f64>) -> CliResult<()> {
    let mut l = load(common)?;
    if !restrictions.is_empty() {
        l.cfg.restrictions = restrictions.iter().map(|s| parse_restriction(s)).collect::<Result<_, _>>()?;
    }
    if alpha.is_some() {
        l.cfg.alpha = alpha;
    }
    l.cfg.validate()?;
    if l.cfg.restrictions.is_empty() {
        return Err(CliError::Validation("no restrictions given (--restrict UNIT:COEF=VALUE)".into()));
    }
    let mut idx = Vec::new();
    for r in &l.cfg.restrictions {
        let i = l.ds.unit_index(&r.unit)?;
        let names = coefficient_names(&l.spec.equations()[i]);
        let k = names.iter().position(|n| n == &r.coefficient).ok_or_else(|| {
            CliError::Validation(format!(
                "unit '{}' has no coefficient '{}' (available: {})",
                r.unit,
                r.coefficient,
                names.join(", ")
            ))
        })?;
        idx.push(l.spec.param_index(i, k));
    }
    let (method, lr) = chosen(&l);
    let est = estimate_with(&l, method, lr)?;
    let r_mat = selection_matrix(l.spec.n_params(), &idx)?;
    let r_vec = DVector::from_iterator(idx.len(), l.cfg.restrictions.iter().map(|r: &Restriction| r.value));
    let res = wald(&est, &r_mat, &r_vec)?;
    let alpha = l.cfg.alpha.unwrap_or(0.05);
    let report = output::WaldReport {
        method: est.method.name().to_string(),
        restrictions: l.cfg.restrictions.iter().map(output::RestrictionOut::from).collect(),
        statistic: res.statistic,
        dof: res.dof,
        p_value: res.p_value,
        alpha,
        reject: res.p_value < alpha,
    };
    emit(l.cfg.out.as_deref(), &output::to_json(&report)?)
}

fn cmd_simulate(
    config: Option<PathBuf>,
    preset_name: Option<String>,
    reps: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let mut plan = match (config, preset_name) {
        (Some(_), Some(_)) => return Err(CliError::Validation("use either --config or --preset".into())),
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<ExperimentPlan>(&text).map_err(|e| CliError::Validation(format!("config: {e}")))?
        }
        (None, Some(name)) => preset(&name).ok_or_else(|| {
            CliError::Validation(format!("unknown preset '{name}' (available: table1, table2, table3, ct-tests)"))
        })?,
        (None, None) => return Err(CliError::Validation("give --config or --preset".into())),
    };
    if let Some(r) = reps {
        plan = plan.with_reps(r);
    }
    if let Some(s) = seed {
        plan = plan.with_seed(s);
    }
    if threads == Some(0) {
        return Err(CliError::Validation("--threads must be positive".into()));
    }
    plan.validate()?;
    let report = plan.run(threads, |done, total| eprintln!("cell {done}/{total} done"))?;
    let csv_text = output::report_csv(&report)?;
    match out {
        Some(prefix) => {
            let json = output::to_json(&report)?;
            emit(Some(&prefix.with_extension("csv")), &csv_text)?;
            emit(Some(&prefix.with_extension("json")), &json)
        }
        None => emit(None, &csv_text),
    }
}

fn cmd_export_schema(kind: Option<String>, out: Option<PathBuf>) -> CliResult<()> {
    let selected: Vec<(&str, &str)> = match kind.as_deref() {
        None => output::SCHEMAS.to_vec(),
        Some(k) => vec![*output::SCHEMAS
            .iter()
            .find(|(name, _)| *name == k)
            .ok_or_else(|| CliError::Validation(format!("unknown schema '{k}'")))?],
    };
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(CliError::io)?;
            for (name, text) in selected {
                emit(Some(&dir.join(format!("{name}.schema.json"))), text)?;
            }
            Ok(())
        }
        None => {
            for (_, text) in selected {
                emit(None, text)?;
            }
            Ok(())
        }
    }
}

fn cmd_export(data: Option<PathBuf>, dgp: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let ds = match (data, dgp) {
        (Some(path), None) => Dataset::from_path(&path)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg: DgpConfig =
                toml::from_str(&text).map_err(|e| CliError::Validation(format!("design: {e}")))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let panel = generate(&cfg, &mut rng_for(cfg.seed, 0))?;
            Dataset {
                t: (1..=cfg.t as i64).collect(),
                names: (1..=cfg.n).map(|i| format!("u{i}")).collect(),
                y: panel.y().clone(),
                x: panel.x().clone(),
            }
        }
        _ => return Err(CliError::Validation("give exactly one of --data or --dgp".into())),
    };
    let mut buf = Vec::new();
    ds.write(&mut buf)?;
    emit(out.as_deref(), &String::from_utf8(buf).map_err(CliError::io)?)
}
