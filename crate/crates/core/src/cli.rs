//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;
use serde::Serialize;
use serde_json::{json, Value};

use crate::basic::fit_basic_from;
use crate::cov_latent::fit_cov_latent_from;
use crate::cov_manifest::fit_cov_manifest_from;
use crate::data::{long2wide, read_long_csv, read_wide_csv, write_wide_csv, CategorySpec, Dataset, LongSchema};
use crate::error::LmError;
use crate::fit::{FitConfig, LatentParam, StartRule, TransitionLayout};
use crate::fitted::{fit_variant, FittedModel};
use crate::inference::{select_states, SeReport, SimDesign};
use crate::mixed::fit_mixed_from;
use crate::model::Variant;
use crate::report::summary_text;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

const AFTER_HELP: &str = "\
Input formats:
  wide  One row per unit or configuration. Responses y{j}_t{t} and covariates
        x{m}_t{t} (1-based variable and occasion indices), optional `id` and
        `freq` columns (freq defaults to 1). Response codes are 0-based.
  long  One row per unit-occasion with columns `id`, `time` (1-based), the
        responses (default: columns named y1, y2, ...) and numeric covariates
        (default: every other column). Use --code-base 1 for codes 1..c.

Covariates at the first occasion form X1 (initial model), later occasions
X2 (transition model). --x1 / --x2 keep a subset of covariate indices.

Outputs (written to --output-dir, each path printed on stdout):
  params.json    canonical fitted model (tagged by `variant`)
  trace.csv      iteration,loglik
  summary.txt    convergence info and parameter blocks
  se.json/.csv   standard errors when requested
  Ul.csv/Ug.csv  decoded states (1-based), one row per configuration in the
                 order of configurations.csv
  selection.csv/.json, simulated.csv, states.csv, wide.csv
  manifest.json  command, configuration echo, seed, version, wall time

Exit codes: 0 success, 2 usage, 3 data, 4 numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "lmpanel", version, about = "Latent Markov models for categorical panel data", after_help = AFTER_HELP)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "LMPANEL_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate a model by EM.
    Fit(FitArgs),
    /// Local and global decoding of the latent states.
    Decode(DecodeArgs),
    /// Fit a range of state counts and tabulate AIC and BIC.
    Select(SelectArgs),
    /// Parametric bootstrap standard errors for a fitted model.
    Bootstrap(BootstrapArgs),
    /// Simulate panel data from a fitted model.
    Simulate(SimulateArgs),
    /// Convert a long CSV into the collapsed wide layout.
    Reshape(ReshapeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantArg {
    Basic,
    CovManifest,
    CovLatent,
    Mixed,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Basic => Variant::Basic,
            VariantArg::CovManifest => Variant::CovManifest,
            VariantArg::CovLatent => Variant::CovLatent,
            VariantArg::Mixed => Variant::Mixed,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatArg {
    Long,
    Wide,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartArg {
    Det,
    Random,
    Input,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamArg {
    Multilogit,
    Difflogit,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionsArg {
    Heterogeneous,
    Homogeneous,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeArg {
    None,
    Numerical,
    Bootstrap,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "wide")]
    #[serde(skip)]
    pub format: FormatArg,
    /// Unit identifier column (long format).
    #[arg(long, default_value = "id")]
    pub id_col: String,
    /// Occasion column (long format).
    #[arg(long, default_value = "time")]
    pub time_col: String,
    /// Response columns (long format; default y1, y2, ...).
    #[arg(long, value_delimiter = ',')]
    pub responses: Option<Vec<String>>,
    /// Covariate columns (long format; default every other column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Covariates that must be constant within a unit (long format).
    #[arg(long, value_delimiter = ',')]
    pub time_constant: Vec<String>,
    /// Categories of each response variable (default: inferred).
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<usize>>,
    /// Code of the lowest response category (long format).
    #[arg(long, default_value_t = 0)]
    pub code_base: i64,
    /// 1-based covariate indices kept in X1.
    #[arg(long, value_delimiter = ',')]
    pub x1: Option<Vec<usize>>,
    /// 1-based covariate indices kept in X2.
    #[arg(long, value_delimiter = ',')]
    pub x2: Option<Vec<usize>>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Number of latent states.
    #[arg(long)]
    pub k: Option<usize>,
    /// Latent classes (mixed model).
    #[arg(long)]
    pub k1: Option<usize>,
    /// Latent states per class (mixed model).
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub maxit: usize,
    #[arg(long, value_enum, default_value = "det")]
    pub start: StartArg,
    /// Random starts in addition to the deterministic one (default 2 + k).
    #[arg(long)]
    pub n_starts: Option<usize>,
    /// Transition parameterization (cov-latent only; default multilogit).
    #[arg(long, value_enum)]
    pub param: Option<ParamArg>,
    /// Transition layout (basic only; default heterogeneous).
    #[arg(long, value_enum)]
    pub transitions: Option<TransitionsArg>,
    /// Keep the response probabilities at their starting values.
    #[arg(long)]
    pub fix_psi: bool,
    /// Plain EM only: no extrapolation between EM steps.
    #[arg(long)]
    pub no_accelerate: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Starting values: a params.json written by `fit`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(value_enum)]
    pub variant: VariantArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "none")]
    pub out_se: SeArg,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    pub b: usize,
    #[arg(long, default_value = "lmpanel-out")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// params.json written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "lmpanel-out")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(value_enum)]
    pub variant: VariantArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Class range for the mixed model.
    #[arg(long)]
    pub k1_min: Option<usize>,
    #[arg(long)]
    pub k1_max: Option<usize>,
    #[arg(long, default_value = "lmpanel-out")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 200)]
    pub b: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub maxit: usize,
    #[arg(long, default_value = "lmpanel-out")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// Take units and covariates from this dataset instead of --n/--t.
    #[arg(long, conflicts_with_all = ["n", "t"])]
    pub design: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "wide")]
    pub design_format: FormatArg,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "lmpanel-out")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReshapeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "lmpanel-out")]
    pub output_dir: PathBuf,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        let code = match &e {
            LmError::InvalidArgument(_) => EXIT_USAGE,
            LmError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        LmError::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        LmError::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Collects artifact paths and writes the manifest last.
struct Run {
    dir: PathBuf,
    command: &'static str,
    started: Instant,
    artifacts: Vec<PathBuf>,
    out: Box<dyn Write>,
}

impl Run {
    fn new(dir: &Path, command: &'static str, started: Instant, out: Box<dyn Write>) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            started,
            artifacts: Vec::new(),
            out,
        })
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> crate::Result<()>) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        writeln!(self.out, "{}", path.display())?;
        self.artifacts.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn text(&mut self, name: &str, body: &str) -> CliResult<()> {
        self.write_with(name, |w| Ok(w.write_all(body.as_bytes())?))
    }

    fn finish(mut self, config: Value, seed: Option<u64>, diagnostics: Value) -> CliResult<()> {
        let manifest = json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config": config,
            "seed": seed,
            "versions": { "lmpanel": env!("CARGO_PKG_VERSION") },
            "threads": rayon::current_num_threads(),
            "wall_time_s": self.started.elapsed().as_secs_f64(),
            "diagnostics": diagnostics,
            "artifacts": self.artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        self.json("manifest.json", &manifest)
    }
}

fn time_constant_indices(names: &[String], covariates: &[String]) -> CliResult<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            covariates
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| usage(format!("--time-constant '{n}' is not a covariate column")))
        })
        .collect()
}

fn select_columns(idx: &Option<Vec<usize>>, p: usize, flag: &str) -> CliResult<Option<Vec<usize>>> {
    match idx {
        None => Ok(None),
        Some(v) => v
            .iter()
            .map(|&m| {
                if m >= 1 && m <= p {
                    Ok(m - 1)
                } else {
                    Err(usage(format!("{flag} index {m} outside 1..={p}")))
                }
            })
            .collect::<CliResult<Vec<_>>>()
            .map(Some),
    }
}

/// Read the dataset described by `args`.
pub fn load_data(args: &DataArgs) -> CliResult<Dataset> {
    let cats = args.categories.clone().map(CategorySpec::new).transpose()?;
    let ds = match args.format {
        FormatArg::Wide => {
            if args.code_base != 0 || args.responses.is_some() || args.covariates.is_some() || !args.time_constant.is_empty() {
                return Err(usage(
                    "--code-base, --responses, --covariates and --time-constant apply to --format long",
                ));
            }
            read_wide_csv(&args.data, cats.as_ref())?
        }
        FormatArg::Long => {
            let header: Vec<String> = csv::Reader::from_path(&args.data)
                .map_err(LmError::from)?
                .headers()
                .map_err(LmError::from)?
                .iter()
                .map(|h| h.trim().to_string())
                .collect();
            let mut schema = LongSchema::from_header(&header);
            schema.id = args.id_col.clone();
            schema.time = args.time_col.clone();
            if let Some(r) = &args.responses {
                schema.responses = r.clone();
            }
            schema.covariates = match &args.covariates {
                Some(c) => c.clone(),
                None => header
                    .iter()
                    .filter(|h| **h != schema.id && **h != schema.time && !schema.responses.contains(h))
                    .cloned()
                    .collect(),
            };
            schema.categories = args.categories.clone();
            schema.code_base = args.code_base;
            let tc = time_constant_indices(&args.time_constant, &schema.covariates)?;
            let records = read_long_csv(&args.data, &schema)?;
            let cats = match cats {
                Some(c) => c,
                None => CategorySpec::infer(&records)?,
            };
            long2wide(&records, &cats, &tc)?
        }
    };
    let k1 = select_columns(&args.x1, ds.p1(), "--x1")?;
    let k2 = select_columns(&args.x2, ds.p2(), "--x2")?;
    if k1.is_none() && k2.is_none() {
        return Ok(ds);
    }
    let x1 = k1.map_or_else(|| ds.x1.clone(), |c| ds.x1.select(Axis(1), &c));
    let x2 = k2.map_or_else(|| ds.x2.clone(), |c| ds.x2.select(Axis(2), &c));
    Ok(Dataset::from_arrays(ds.responses, ds.freq, Some(x1), Some(x2), ds.categories)?)
}

/// Covariates are not part of the basic and mixed models.
fn prepare(ds: Dataset, variant: Variant) -> Dataset {
    match variant {
        Variant::Basic | Variant::Mixed if ds.p1() + ds.p2() > 0 => ds.without_covariates(),
        _ => ds,
    }
}

fn fit_config(variant: Variant, m: &ModelArgs, with_k: bool) -> CliResult<FitConfig> {
    if m.param.is_some() && variant != Variant::CovLatent {
        return Err(usage("--param applies to cov-latent only"));
    }
    if m.transitions.is_some() && variant != Variant::Basic {
        return Err(usage("--transitions applies to basic only"));
    }
    if m.n_starts.is_some() && m.start != StartArg::Random {
        return Err(usage("--n-starts requires --start random"));
    }
    if (m.start == StartArg::Input) != m.input.is_some() {
        return Err(usage("--start input and --input must be given together"));
    }
    let (k, k1) = if variant == Variant::Mixed {
        if m.k.is_some() {
            return Err(usage("the mixed model takes --k1 and --k2, not --k"));
        }
        (m.k2, m.k1)
    } else {
        if m.k1.is_some() || m.k2.is_some() {
            return Err(usage("--k1 and --k2 apply to the mixed model only"));
        }
        (m.k, Some(1))
    };
    let need = with_k && m.start != StartArg::Input;
    let k = match k {
        Some(k) => k,
        None if need => {
            return Err(usage(if variant == Variant::Mixed {
                "--k2 is required"
            } else {
                "--k is required"
            }))
        }
        None => 1,
    };
    let k1 = match k1 {
        Some(v) => v,
        None if need => return Err(usage("--k1 is required")),
        None => 1,
    };
    Ok(FitConfig {
        k,
        k1,
        tol: m.tol,
        maxit: m.maxit,
        start: match m.start {
            StartArg::Det => StartRule::Deterministic,
            StartArg::Random => StartRule::Random,
            StartArg::Input => StartRule::Input,
        },
        n_starts: m.n_starts,
        seed: m.seed,
        transitions: match m.transitions {
            Some(TransitionsArg::Homogeneous) => TransitionLayout::Homogeneous,
            _ => TransitionLayout::Heterogeneous,
        },
        param: match m.param {
            Some(ParamArg::Difflogit) => LatentParam::Difflogit,
            _ => LatentParam::Multilogit,
        },
        fix_psi: m.fix_psi,
        accelerate: !m.no_accelerate,
    })
}

fn read_fit(path: &Path) -> CliResult<FittedModel> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: not a fitted model: {e}", path.display())))
}

fn fit_from_input(ds: &Dataset, variant: Variant, cfg: &FitConfig, m: &ModelArgs) -> CliResult<FittedModel> {
    let path = m.input.as_ref().expect("checked by fit_config");
    let start = read_fit(path)?;
    if start.variant() != variant {
        return Err(usage(format!(
            "--input holds a {} fit, not {}",
            start.variant().name(),
            variant.name()
        )));
    }
    let states_given = if variant == Variant::Mixed { m.k2 } else { m.k };
    if states_given.is_some_and(|k| k != start.n_states()) {
        return Err(usage("--k disagrees with the --input model"));
    }
    Ok(match start {
        FittedModel::Basic(f) => FittedModel::Basic(fit_basic_from(ds, cfg, &f.params)?),
        FittedModel::CovLatent(f) => FittedModel::CovLatent(fit_cov_latent_from(ds, cfg, &f.params)?),
        FittedModel::CovManifest(f) => FittedModel::CovManifest(fit_cov_manifest_from(ds, cfg, &f.params)?),
        FittedModel::Mixed(f) => FittedModel::Mixed(fit_mixed_from(ds, cfg, &f.params)?),
    })
}

fn trace_csv(fit: &FittedModel, w: &mut dyn Write) -> crate::Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["iteration", "loglik"])?;
    for (i, l) in fit.trace().iter().enumerate() {
        c.write_record([i.to_string(), format!("{l:?}")])?;
    }
    c.flush()?;
    Ok(())
}

fn call_string() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn se_artifacts(run: &mut Run, se: &SeReport) -> CliResult<()> {
    run.json("se.json", se)?;
    run.write_with("se.csv", |w| se.write_csv(w))
}

fn cmd_fit(a: &FitArgs, out: Box<dyn Write>) -> CliResult<()> {
    let started = Instant::now();
    let variant: Variant = a.variant.into();
    let cfg = fit_config(variant, &a.model, true)?;
    if a.out_se == SeArg::Bootstrap && !matches!(variant, Variant::Basic | Variant::CovLatent) {
        return Err(usage("bootstrap standard errors are available for basic and cov-latent"));
    }
    let ds = prepare(load_data(&a.data)?, variant);
    let fit = if cfg.start == StartRule::Input {
        fit_from_input(&ds, variant, &cfg, &a.model)?
    } else {
        fit_variant(&ds, variant, &cfg)?
    };
    let se = match a.out_se {
        SeArg::None => None,
        SeArg::Numerical => Some(fit.numerical_se(&ds)?),
        SeArg::Bootstrap => {
            let mut c = cfg.clone();
            c.start = StartRule::Input;
            Some(fit.bootstrap_se(&ds, &c, a.b, cfg.seed)?)
        }
    };
    let mut run = Run::new(&a.output_dir, "fit", started, out)?;
    run.json("params.json", &fit)?;
    run.write_with("trace.csv", |w| trace_csv(&fit, w))?;
    run.text("summary.txt", &summary_text(&fit, &call_string(), se.as_ref()))?;
    if let Some(se) = &se {
        se_artifacts(&mut run, se)?;
    }
    let config = json!({
        "variant": variant.name(),
        "fit": cfg,
        "data": a.data,
        "out_se": format!("{:?}", a.out_se).to_lowercase(),
        "b": a.b,
    });
    let diag = json!({
        "converged": fit.converged(),
        "iterations": fit.iterations(),
        "start_index": fit.start_index(),
        "loglik": fit.loglik(),
        "details": fit.diagnostics(),
    });
    run.finish(config, Some(cfg.seed), diag)
}

fn cmd_decode(a: &DecodeArgs, out: Box<dyn Write>) -> CliResult<()> {
    let started = Instant::now();
    let fit = read_fit(&a.fit)?;
    let ds = prepare(load_data(&a.data)?, fit.variant());
    fit.check_dataset(&ds)
        .map_err(|e| usage(format!("data do not match the fitted model: {e}")))?;
    let dec = fit.decode(&ds)?;
    let mut run = Run::new(&a.output_dir, "decode", started, out)?;
    for (name, m) in [("Ul.csv", &dec.ul), ("Ug.csv", &dec.ug)] {
        run.write_with(name, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record((1..=m.ncols()).map(|t| format!("t{t}")))?;
            for row in m.rows() {
                c.write_record(row.iter().map(|v| v.to_string()))?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    run.write_with("configurations.csv", |w| write_wide_csv(&ds, w))?;
    run.finish(
        json!({ "fit": a.fit, "data": a.data }),
        None,
        json!({ "configurations": ds.n_configs() }),
    )
}

fn cmd_select(a: &SelectArgs, out: Box<dyn Write>) -> CliResult<()> {
    let started = Instant::now();
    let variant: Variant = a.variant.into();
    if a.model.k.is_some() || a.model.k1.is_some() || a.model.k2.is_some() || a.model.input.is_some() {
        return Err(usage("select takes --k-min/--k-max (and --k1-min/--k1-max), not --k, --k1, --k2 or --input"));
    }
    if a.model.start == StartArg::Input {
        return Err(usage("select does not accept --start input"));
    }
    let cfg = fit_config(variant, &a.model, false)?;
    let (kmin, kmax) = (a.k_min.unwrap_or(1), a.k_max.ok_or_else(|| usage("--k-max is required"))?);
    if kmin == 0 || kmin > kmax {
        return Err(usage("need 1 <= --k-min <= --k-max"));
    }
    let classes: Vec<usize> = if variant == Variant::Mixed {
        let lo = a.k1_min.unwrap_or(1);
        let hi = a.k1_max.unwrap_or(lo);
        if lo == 0 || lo > hi {
            return Err(usage("need 1 <= --k1-min <= --k1-max"));
        }
        (lo..=hi).collect()
    } else {
        if a.k1_min.is_some() || a.k1_max.is_some() {
            return Err(usage("--k1-min/--k1-max apply to the mixed model only"));
        }
        vec![1]
    };
    let sizes: Vec<(usize, usize)> = classes
        .iter()
        .flat_map(|&c| (kmin..=kmax).map(move |k| (c, k)))
        .collect();
    let ds = prepare(load_data(&a.data)?, variant);
    let table = select_states(&ds, variant, &sizes, &cfg);
    let mut run = Run::new(&a.output_dir, "select", started, out)?;
    run.write_with("selection.csv", |w| table.write_csv(w))?;
    run.json("selection.json", &table)?;
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    run.finish(
        json!({ "variant": variant.name(), "fit": cfg, "sizes": sizes, "data": a.data }),
        Some(cfg.seed),
        json!({
            "failed_rows": failed,
            "best_bic": table.best_bic().map(|r| (r.k1, r.k)),
            "best_aic": table.best_aic().map(|r| (r.k1, r.k)),
        }),
    )
}

fn cmd_bootstrap(a: &BootstrapArgs, out: Box<dyn Write>) -> CliResult<()> {
    let started = Instant::now();
    let fit = read_fit(&a.fit)?;
    let ds = prepare(load_data(&a.data)?, fit.variant());
    fit.check_dataset(&ds)
        .map_err(|e| usage(format!("data do not match the fitted model: {e}")))?;
    let cfg = FitConfig {
        k: fit.n_states(),
        tol: a.tol,
        maxit: a.maxit,
        start: StartRule::Input,
        seed: a.seed,
        ..FitConfig::default()
    };
    let se = fit.bootstrap_se(&ds, &cfg, a.b, a.seed)?;
    let mut run = Run::new(&a.output_dir, "bootstrap", started, out)?;
    se_artifacts(&mut run, &se)?;
    run.finish(
        json!({ "fit": a.fit, "data": a.data, "b": a.b, "tol": a.tol, "maxit": a.maxit }),
        Some(a.seed),
        json!({ "dropped": se.dropped, "warnings": se.warnings }),
    )
}

fn cmd_simulate(a: &SimulateArgs, out: Box<dyn Write>) -> CliResult<()> {
    let started = Instant::now();
    let fit = read_fit(&a.fit)?;
    let design = match (&a.design, a.n, a.t) {
        (Some(path), _, _) => {
            let args = DataArgs {
                data: path.clone(),
                format: a.design_format,
                id_col: "id".into(),
                time_col: "time".into(),
                responses: None,
                covariates: None,
                time_constant: Vec::new(),
                categories: None,
                code_base: 0,
                x1: None,
                x2: None,
            };
            SimDesign::from_dataset(&load_data(&args)?)
        }
        (None, Some(n), Some(t)) => SimDesign::without_covariates(n, t),
        _ => return Err(usage("give either --design or both --n and --t")),
    };
    let sim = fit.simulate(&design, a.seed)?;
    let mut run = Run::new(&a.output_dir, "simulate", started, out)?;
    let (n, t_len, r) = sim.responses.dim();
    let p = if design.x1.ncols() == design.x2.dim().2 { design.x1.ncols() } else { 0 };
    run.write_with("simulated.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string()];
        for t in 1..=t_len {
            header.extend((1..=r).map(|j| format!("y{j}_t{t}")));
        }
        for t in 1..=t_len {
            header.extend((1..=p).map(|m| format!("x{m}_t{t}")));
        }
        c.write_record(&header)?;
        for i in 0..n {
            let mut rec = vec![(i + 1).to_string()];
            for t in 0..t_len {
                rec.extend((0..r).map(|j| sim.responses[[i, t, j]].to_string()));
            }
            for t in 0..t_len {
                for m in 0..p {
                    let v = if t == 0 { design.x1[[i, m]] } else { design.x2[[i, t - 1, m]] };
                    rec.push(format!("{v:?}"));
                }
            }
            c.write_record(&rec)?;
        }
        c.flush()?;
        Ok(())
    })?;
    run.write_with("states.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string()];
        header.extend((1..=t_len).map(|t| format!("t{t}")));
        c.write_record(&header)?;
        for i in 0..n {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(sim.states.row(i).iter().map(|s| s.to_string()));
            c.write_record(&rec)?;
        }
        c.flush()?;
        Ok(())
    })?;
    run.finish(
        json!({ "fit": a.fit, "design": a.design, "n": n, "t": t_len }),
        Some(a.seed),
        json!({ "configurations": sim.dataset.n_configs() }),
    )
}

fn cmd_reshape(a: &ReshapeArgs, out: Box<dyn Write>) -> CliResult<()> {
    let started = Instant::now();
    let ds = load_data(&a.data)?;
    if ds.p1() != ds.p2() && ds.n_occasions() > 1 {
        return Err(usage("wide output needs the same covariates in X1 and X2"));
    }
    let mut run = Run::new(&a.output_dir, "reshape", started, out)?;
    run.write_with("wide.csv", |w| write_wide_csv(&ds, w))?;
    run.finish(
        json!({ "data": a.data }),
        None,
        json!({ "configurations": ds.n_configs(), "units": ds.n_total() }),
    )
}

/// Execute parsed arguments, writing artifact paths to `out`.
pub fn execute(cli: &Cli, out: Box<dyn Write>) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        // Fails only if a pool already exists (repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Decode(a) => cmd_decode(a, out),
        Command::Select(a) => cmd_select(a, out),
        Command::Bootstrap(a) => cmd_bootstrap(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Reshape(a) => cmd_reshape(a, out),
    }
}

/// Parse `args`, run, report errors on stderr and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, Box::new(std::io::stdout())) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
