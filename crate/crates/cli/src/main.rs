use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use tensorinfo::oracle::{self, OracleParams};
use tensorinfo::potentials::mutual_info_from_f;
use tensorinfo::solvers::{self, SweepRow, ThresholdResult};
use tensorinfo::suites::{self, Suite, SuiteOptions};
use tensorinfo::{Error, ModelParams, Order, Prior, QuadratureConfig, ScalarChannel, SolverConfig};

#[derive(Parser)]
#[command(name = "tensorinfo", version, about = "Replica-symmetric formulas for rank-one matrix and order-3 tensor estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the scalar Gaussian channel at one snr.
    Scalar(ScalarArgs),
    /// Solve the order-2 (matrix) formula.
    Solve2(SolveArgs),
    /// Solve the order-3 (tensor) formula.
    Solve3(SolveArgs),
    /// Sweep the snr and write CSV or JSON rows.
    Sweep(SweepArgs),
    /// Brute-force finite-n free energy.
    Oracle(OracleArgs),
    /// Run a verification battery.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ScalarArgs {
    /// Prior: rademacher, gaussian:v, sparse_rademacher:s, file:<path> or inline JSON.
    #[arg(long)]
    prior: String,
    #[arg(long, allow_hyphen_values = true)]
    m: f64,
    #[arg(long)]
    hermite_nodes: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// JSON config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// One prior for every factor, or one per factor in order u, v, w.
    #[arg(long = "prior")]
    priors: Vec<String>,
    /// Aspect ratios, one for every factor or one per factor.
    #[arg(long = "alpha", allow_hyphen_values = true)]
    alphas: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    damping: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    hermite_nodes: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    order: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_end: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_step: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    order: Option<u32>,
    #[arg(long)]
    n: Option<usize>,
    /// Number of disorder samples.
    #[arg(long = "samples", visible_alias = "M")]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    /// Reduced budgets.
    #[arg(long)]
    fast: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Lemmas,
    Theorems,
    Oracle,
}

/// Flat JSON config; every field optional.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    order: Option<u32>,
    lambda: Option<f64>,
    alphas: Option<Vec<f64>>,
    priors: Option<PriorList>,
    solver: Option<SolverConfig>,
    quad: Option<QuadratureConfig>,
    lambda_start: Option<f64>,
    lambda_end: Option<f64>,
    lambda_step: Option<f64>,
    output: Option<PathBuf>,
    format: Option<Format>,
    n: Option<usize>,
    #[serde(alias = "M")]
    samples: Option<usize>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PriorList {
    Many(Vec<Value>),
    One(Value),
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    Output(PathBuf, io::Error),
    Verify(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Output(..) => 5,
            CliError::Lib(e) => match e {
                Error::InvalidPrior { .. } | Error::Config(_) | Error::Io { .. } | Error::Json { .. } => 2,
                Error::Domain(_) | Error::UnsupportedPrior(_) | Error::EnumerationTooLarge { .. } => 3,
                Error::Solver { .. } => 4,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Output(p, e) => format!("cannot write {}: {e}", p.display()),
            CliError::Verify(n) => format!("{n} check(s) failed"),
        }
    }
}

/// Agreement expected between the critical-set and inf-sup routes.
const CROSS_CHECK_TOL: f64 = 1e-6;

type CliResult<T> = std::result::Result<T, CliError>;

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Lib(Error::Config(msg.into()))
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| {
        CliError::Lib(Error::Json {
            context: path.display().to_string(),
            source,
        })
    })
}

fn prior_from_value(v: &Value) -> CliResult<Prior> {
    Ok(match v {
        Value::String(s) => Prior::parse(s)?,
        other => Prior::from_json(&other.to_string())?,
    })
}

/// Expand a one-element list to every factor.
fn per_factor<T: Clone>(items: Vec<T>, k: usize, what: &str) -> CliResult<Vec<T>> {
    match items.len() {
        1 => Ok(vec![items[0].clone(); k]),
        n if n == k => Ok(items),
        n => Err(config_error(format!("expected 1 or {k} {what}, got {n}"))),
    }
}

struct Resolved {
    params: ModelParams,
    solver: SolverConfig,
    priors: Vec<Prior>,
    alphas: Vec<f64>,
}

fn resolve_model(args: &ModelArgs, file: &FileConfig, order: Order, default_lambda: f64) -> CliResult<Resolved> {
    let k = order.factors();
    let lambda = args.lambda.or(file.lambda).unwrap_or(default_lambda);
    let priors = if !args.priors.is_empty() {
        args.priors.iter().map(|s| Prior::parse(s)).collect::<Result<Vec<_>, _>>()?
    } else {
        match &file.priors {
            Some(PriorList::Many(vs)) => vs.iter().map(prior_from_value).collect::<CliResult<Vec<_>>>()?,
            Some(PriorList::One(v)) => vec![prior_from_value(v)?],
            None => vec![Prior::rademacher()],
        }
    };
    let priors = per_factor(priors, k, "priors")?;
    let alphas = if !args.alphas.is_empty() {
        args.alphas.clone()
    } else {
        file.alphas.clone().unwrap_or_else(|| vec![1.0])
    };
    let alphas = per_factor(alphas, k, "alphas")?;

    let mut solver = file.solver.clone().unwrap_or_default();
    if let Some(d) = args.damping {
        solver.damping = d;
    }
    if let Some(t) = args.tol {
        solver.tol = t;
    }
    if let Some(m) = args.max_iter {
        solver.max_iter = m;
    }
    solver.validate()?;
    let mut quad = file.quad.unwrap_or_default();
    if let Some(h) = args.hermite_nodes {
        quad.hermite_nodes = h;
    }
    let params = ModelParams::new(order, lambda, &alphas, &priors, quad)?;
    Ok(Resolved {
        params,
        solver,
        priors,
        alphas,
    })
}

fn order_from(flag: Option<u32>, file: Option<u32>, default: u32) -> CliResult<Order> {
    Ok(Order::from_int(flag.or(file).unwrap_or(default))?)
}

/// `%.9g`-style formatting.
fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string(v).expect("JSON values serialize"));
}

fn cmd_scalar(a: &ScalarArgs) -> CliResult<()> {
    let prior = Prior::parse(&a.prior)?;
    let mut quad = QuadratureConfig::default();
    if let Some(h) = a.hermite_nodes {
        quad.hermite_nodes = h;
    }
    let ch = ScalarChannel::new(prior, quad)?;
    let e = ch.evaluate_checked(a.m)?;
    if let Some(w) = &e.accuracy_warning {
        eprintln!("warning: {w}");
    }
    print_json(&json!({
        "m": e.m,
        "f_tilde": e.f_tilde,
        "overlap": e.overlap,
        "mmse": e.mmse,
        "scalar_mi": e.scalar_mi,
    }));
    Ok(())
}

fn cmd_solve(a: &SolveArgs, order: Order) -> CliResult<()> {
    let file = load_config(a.model.config.as_deref())?;
    if let Some(o) = file.order {
        if o != u32::from(order) {
            return Err(config_error(format!("config order {o} does not match solve{order}")));
        }
    }
    let r = resolve_model(&a.model, &file, order, 1.0)?;
    let (p, cfg) = (&r.params, &r.solver);
    let gamma = solvers::enumerate_gamma_any(p, cfg)?;
    let rs = solvers::rs_free_energy(p, cfg)?;
    let other = match order {
        Order::Two => solvers::inf_sup2(p, cfg)?,
        Order::Three => solvers::inf_sup_aux3(p, cfg)?,
    };
    let mut out = json!({
        "lambda": rs.lambda,
        "f_rs": rs.free_energy,
        "mi_per_n": rs.mutual_info_per_n,
        "minimizer": rs.minimizer.coords(),
        "branch": rs.branch,
        "method": rs.method,
        "tie": rs.tie,
        "gamma_points": gamma.points,
        "unconverged_starts": gamma.unconverged,
        "inf_sup": {
            "method": other.method,
            "value": other.free_energy,
            "mi_per_n": mutual_info_from_f(p, other.free_energy),
            "minimizer": other.minimizer.coords(),
            "aux": other.aux,
        },
        "gap": (rs.free_energy - other.free_energy).abs(),
        "alphas": r.alphas,
        "priors": r.priors.iter().map(|q| q.descriptor()).collect::<Vec<_>>(),
    });
    let gap = (rs.free_energy - other.free_energy).abs();
    if gap > CROSS_CHECK_TOL {
        eprintln!(
            "warning: the two formulas differ by {gap:.3e}; {} start(s) did not converge (worst residual {:.3e})",
            gamma.unconverged, gamma.worst_residual
        );
    }
    if other.aux.is_none() {
        out["inf_sup"].as_object_mut().expect("object").remove("aux");
    }
    print_json(&out);
    Ok(())
}

fn lambda_grid(start: f64, end: f64, step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0) || !(start <= end) || !start.is_finite() || !end.is_finite() {
        return Err(config_error(format!(
            "sweep needs lambda_start <= lambda_end and lambda_step > 0 (got {start}, {end}, {step})"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

fn transition_json(t: &ThresholdResult) -> Value {
    let mut v = serde_json::to_value(t).expect("threshold result serializes");
    let obj = v.as_object_mut().expect("tagged enum is an object");
    obj.remove("status");
    let label = match t {
        ThresholdResult::Found { .. } => "found",
        ThresholdResult::NoTransition { .. } => "no transition in range",
    };
    let mut out = serde_json::Map::new();
    out.insert("transition".into(), json!(label));
    out.extend(std::mem::take(obj));
    Value::Object(out)
}

fn csv_rows(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda,f_rs,mi_per_n,m_u,m_v,m_w,branch,gamma_count\n");
    for r in rows {
        let m = &r.minimizer;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            fmt_g(r.lambda),
            fmt_g(r.f_rs),
            fmt_g(r.mi_per_n),
            fmt_g(m.m_u),
            fmt_g(m.m_v),
            m.m_w.map(fmt_g).unwrap_or_default(),
            r.branch,
            r.gamma_count
        );
    }
    s
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let file = load_config(a.model.config.as_deref())?;
    let order = order_from(a.order, file.order, 2)?;
    let start = a.lambda_start.or(file.lambda_start).unwrap_or(0.0);
    let end = a.lambda_end.or(file.lambda_end).unwrap_or(6.0);
    let step = a.lambda_step.or(file.lambda_step).unwrap_or(0.05);
    let grid = lambda_grid(start, end, step)?;
    let format = a.format.or(file.format).unwrap_or(Format::Csv);
    let output = a.output.clone().or(file.output.clone());

    let r = resolve_model(&a.model, &file, order, start)?;
    let rows = solvers::sweep(&r.params, &grid, &r.solver)?;
    let transition = transition_json(&solvers::locate_transition(&r.params, &rows, &r.solver)?);

    let text = match format {
        Format::Csv => {
            let mut s = csv_rows(&rows);
            s.push_str(&serde_json::to_string(&transition).expect("JSON values serialize"));
            s.push('\n');
            s
        }
        Format::Json => {
            let body = json!({ "order": u32::from(order), "rows": rows, "transition": transition });
            let mut s = serde_json::to_string_pretty(&body).expect("JSON values serialize");
            s.push('\n');
            s
        }
    };
    match output {
        Some(path) => fs::write(&path, text).map_err(|e| CliError::Output(path, e)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Output(PathBuf::from("<stdout>"), e)),
    }
}

fn cmd_oracle(a: &OracleArgs) -> CliResult<()> {
    let file = load_config(a.model.config.as_deref())?;
    let order = order_from(a.order, file.order, 2)?;
    let r = resolve_model(&a.model, &file, order, 1.0)?;
    if r.alphas.iter().any(|&x| x != 1.0) {
        return Err(CliError::Lib(Error::Domain("the oracle uses unit aspect ratios".into())));
    }
    let params = OracleParams::new(
        order,
        a.n.or(file.n).unwrap_or(4),
        r.params.lambda(),
        r.priors,
        a.samples.or(file.samples).unwrap_or(200),
        a.seed.or(file.seed).unwrap_or(1),
    )?;
    let est = oracle::exact_estimate(&params)?;
    print_json(&serde_json::to_value(&est).expect("estimate serializes"));
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let file = load_config(a.config.as_deref())?;
    let opts = SuiteOptions {
        fast: a.fast,
        seed: a.seed,
        solver: file.solver.unwrap_or_default(),
        quad: file.quad.unwrap_or_default(),
    };
    opts.solver.validate()?;
    let suite = match a.suite {
        SuiteArg::Lemmas => Suite::Lemmas,
        SuiteArg::Theorems => Suite::Theorems,
        SuiteArg::Oracle => Suite::Oracle,
    };
    let checks = suites::run(suite, &opts)?;
    let mut failed = 0;
    for c in &checks {
        print_json(&serde_json::to_value(c).expect("check serializes"));
        if !c.pass {
            failed += 1;
            eprintln!("FAIL {}: {}", c.name, c.details);
        }
    }
    eprintln!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(CliError::Verify(failed));
    }
    Ok(())
}

fn init_threads() {
    if let Some(n) = std::env::var("TENSORINFO_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_threads();
    let res = match &cli.command {
        Command::Scalar(a) => cmd_scalar(a),
        Command::Solve2(a) => cmd_solve(a, Order::Two),
        Command::Solve3(a) => cmd_solve(a, Order::Three),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
