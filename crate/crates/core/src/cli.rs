//! Command-line front end: `analyze`, `integrate`, `action`, `propagate`,
//! `reduce`, `check`.
//!
//! Exit codes: 0 ok/closed, 1 parse error, 2 unsupported Lagrangian class,
//! 3 inconsistent or non-involutive (or inconsistent initial data),
//! 4 numeric failure.

use crate::action::{
    action_differential, classical_action, path_integral_exponent, propagator_quadratic,
    quadratic_coefficients, reduced_space, ActionError, ActionForm, ReducedPhaseSpace,
};
use crate::expr::{normalize, parse, Expr, SymbolId, SymbolTable};
use crate::hj::{
    build_generators, eom_forms, integrability_closure, poisson_bracket, ClosureReport,
    ClosureStatus, GeneratorSet, TotalDifferentialSystem,
};
use crate::legendre::{self, LegendreError, LegendreOptions};
use crate::model::{phase_layout, validate_spec, SystemSpec};
use crate::numeric::{
    constraint_drift, el_residual, integrate, order_reduce, project_initial, write_csv, CurveSet,
    NumericError, ParamCurve,
};
use crate::report::{build_report, render_text, to_json, AnalysisReport, ReportFlags, ReportInputs};
use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_UNSUPPORTED: i32 = 2;
pub const EXIT_NOT_CLOSED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
    Latex,
}

#[derive(Debug, Parser)]
#[command(
    name = "hjcanon",
    version,
    about = "Canonical constraint analysis of singular higher-order Lagrangians"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output format for reports.
    #[arg(long, global = true, value_enum, default_value = "text")]
    pub format: Option<OutputFormat>,

    /// Seed for the rank-sampling RNG.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Random points used for the generic-rank detection.
    #[arg(long, global = true, default_value_t = 5)]
    pub rank_samples: usize,

    /// Iteration cap for the integrability closure (0 = 2nk + 1).
    #[arg(long, global = true, default_value_t = 0)]
    pub max_iter: usize,

    /// Numeric tolerance for initial-data projection and checks.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full constraint analysis of a `.hjl` system.
    Analyze {
        path: PathBuf,
        /// Emit equations of motion even for non-closed systems.
        #[arg(long)]
        force: bool,
    },
    /// Integrate the total differential equations along parameter curves.
    Integrate {
        path: PathBuf,
        /// Initial data, e.g. `q=1,p=0` or `q1'=0.5,p1_q1=2`.
        #[arg(long)]
        init: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Parameter curve `NAME=EXPR(tau)`, repeatable (e.g. `t02=0.5*tau^2`).
        #[arg(long)]
        curve: Vec<String>,
        /// CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Integrate even when the closure is not first-class.
        #[arg(long)]
        force: bool,
    },
    /// Print the action differential and path-integral exponent.
    Action { path: PathBuf },
    /// Time-sliced propagator for quadratic first-order systems.
    Propagate {
        path: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        #[arg(long, default_value_t = 1.0)]
        x1: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        t: f64,
        #[arg(long, default_value_t = 64)]
        slices: usize,
    },
    /// Rewrite a higher-order system as an equivalent first-order one.
    Reduce { path: PathBuf },
    /// Run the property suite against a system file.
    Check { path: PathBuf },
}

/// Everything the pipeline produces for one system.
pub struct Pipeline {
    pub spec: SystemSpec,
    pub analysis: legendre::LegendreAnalysis,
    pub set: GeneratorSet,
    pub closure: ClosureReport,
    pub eom: Option<TotalDifferentialSystem>,
    pub reduced: ReducedPhaseSpace,
    pub action: Option<ActionForm>,
}

pub struct PipelineOptions {
    pub seed: u64,
    pub rank_samples: usize,
    pub max_iter: usize,
    pub force: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("unsupported system: {0}")]
    Unsupported(String),
    #[error("{0}")]
    NotClosed(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Parse(_) => EXIT_PARSE,
            CliError::Unsupported(_) => EXIT_UNSUPPORTED,
            CliError::NotClosed(_) => EXIT_NOT_CLOSED,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<LegendreError> for CliError {
    fn from(e: LegendreError) -> Self {
        match e {
            LegendreError::RankDisagreement { .. } => CliError::Unsupported(e.to_string()),
            other => CliError::Unsupported(other.to_string()),
        }
    }
}

impl From<NumericError> for CliError {
    fn from(e: NumericError) -> Self {
        match e {
            NumericError::InconsistentInitialData { .. } => CliError::NotClosed(e.to_string()),
            NumericError::OrderTooLow(_) => CliError::Unsupported(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<ActionError> for CliError {
    fn from(e: ActionError) -> Self {
        match e {
            ActionError::Caustic => CliError::Numeric(e.to_string()),
            ActionError::NotClosed(_) => CliError::NotClosed(e.to_string()),
            other => CliError::Unsupported(other.to_string()),
        }
    }
}

pub fn load_spec(path: &std::path::Path) -> Result<SystemSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let spec = SystemSpec::parse_hjl(&text).map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(spec)
}

/// Run validation, the Legendre stage, generator construction and closure.
pub fn run_pipeline(spec: SystemSpec, opts: &PipelineOptions) -> Result<Pipeline, CliError> {
    let report = validate_spec(&spec);
    if !report.is_valid() {
        let lines: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Unsupported(lines.join("; ")));
    }
    let analysis = legendre::analyze(
        &spec,
        LegendreOptions {
            rank_samples: opts.rank_samples,
            seed: opts.seed,
        },
    )?;
    let set = build_generators(&spec, &analysis)
        .map_err(|e| CliError::Unsupported(e.to_string()))?;
    let max_iter = if opts.max_iter == 0 {
        2 * spec.n() * spec.k() + 1
    } else {
        opts.max_iter
    };
    let (set, closure) = match integrability_closure(set, max_iter) {
        Ok(pair) => pair,
        Err(crate::hj::HjError::MaxIterations { partial, .. }) => *partial,
        Err(e) => return Err(CliError::Unsupported(e.to_string())),
    };
    let eom = eom_forms(&set, closure.status, opts.force).ok();
    let reduced = reduced_space(&set);
    let action = action_differential(&set, closure.status, &reduced).ok();
    Ok(Pipeline {
        spec,
        analysis,
        set,
        closure,
        eom,
        reduced,
        action,
    })
}

fn flags_echo(cli: &Cli, force: bool) -> ReportFlags {
    ReportFlags {
        format: format!("{:?}", cli.format.unwrap_or(OutputFormat::Text)).to_lowercase(),
        seed: cli.seed,
        rank_samples: cli.rank_samples,
        max_iter: cli.max_iter,
        tol: cli.tol,
        force,
    }
}

fn make_report(p: &Pipeline, command: &str, flags: ReportFlags) -> AnalysisReport {
    let summary = p
        .action
        .as_ref()
        .map(|f| path_integral_exponent(f, &p.reduced));
    let action = p
        .action
        .as_ref()
        .zip(summary.as_ref())
        .map(|(f, s)| (f, &p.reduced, s));
    build_report(ReportInputs {
        spec: &p.spec,
        analysis: &p.analysis,
        set: &p.set,
        closure: &p.closure,
        eom: p.eom.as_ref(),
        action,
        command,
        flags,
    })
}

/// Entry point used by `main`; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    let format = cli.format.unwrap_or(OutputFormat::Text);
    match &cli.command {
        Command::Analyze { path, force } => {
            let spec = load_spec(path)?;
            let opts = PipelineOptions {
                seed: cli.seed,
                rank_samples: cli.rank_samples,
                max_iter: cli.max_iter,
                force: *force,
            };
            let p = run_pipeline(spec, &opts)?;
            let report = make_report(&p, "analyze", flags_echo(cli, *force));
            match format {
                OutputFormat::Json => print!("{}", to_json(&report)),
                OutputFormat::Text | OutputFormat::Latex => print!("{}", render_text(&report)),
            }
            Ok(if p.closure.status == ClosureStatus::ClosedFirstClass {
                EXIT_OK
            } else {
                EXIT_NOT_CLOSED
            })
        }
        Command::Integrate {
            path,
            init,
            t_end,
            dt,
            curve,
            out,
            force,
        } => {
            let spec = load_spec(path)?;
            let opts = PipelineOptions {
                seed: cli.seed,
                rank_samples: cli.rank_samples,
                max_iter: cli.max_iter,
                force: *force,
            };
            let p = run_pipeline(spec, &opts)?;
            if p.closure.status != ClosureStatus::ClosedFirstClass && !force {
                return Err(CliError::NotClosed(format!(
                    "closure status is {}; pass --force to integrate anyway",
                    p.closure.status
                )));
            }
            let system = p
                .eom
                .as_ref()
                .ok_or_else(|| CliError::NotClosed("equations of motion unavailable".into()))?;
            let guess = parse_init(init.as_deref().unwrap_or(""), p.spec.symbol_table())?;
            let start = project_initial(&p.set, &guess, cli.tol)?;
            let curves = parse_curves(curve, &p.spec, *dt, *t_end)?;
            let traj = integrate(system, p.action.as_ref(), &curves, &start, *dt, *t_end)?;

            let mut csv = Vec::new();
            write_csv(&traj, &p.set, p.spec.symbol_table(), &mut csv)
                .map_err(|e| CliError::Io(e.to_string()))?;
            match out {
                Some(path) => std::fs::write(path, csv)
                    .map_err(|e| CliError::Io(e.to_string()))?,
                None => print!("{}", String::from_utf8_lossy(&csv)),
            }

            let drift = constraint_drift(&p.set, &traj)?;
            let mut lines = vec![format!("samples: {}", traj.len())];
            lines.push(format!("max constraint drift: {drift:.3e}"));
            if p.analysis.partition.rank == p.spec.n() {
                match el_residual(&p.spec, &traj) {
                    Ok(report) => lines.push(format!(
                        "max variational residual: {:.3e}",
                        report.max_el_residual()
                    )),
                    Err(e) => lines.push(format!("variational oracle skipped: {e}")),
                }
            }
            if out.is_some() {
                for l in lines {
                    println!("{l}");
                }
            } else {
                for l in lines {
                    eprintln!("{l}");
                }
            }
            Ok(EXIT_OK)
        }
        Command::Action { path } => {
            let spec = load_spec(path)?;
            let opts = PipelineOptions {
                seed: cli.seed,
                rank_samples: cli.rank_samples,
                max_iter: cli.max_iter,
                force: false,
            };
            let p = run_pipeline(spec, &opts)?;
            let form = p.action.as_ref().ok_or_else(|| {
                CliError::NotClosed(format!(
                    "closure status is {}; the action form needs a closed system",
                    p.closure.status
                ))
            })?;
            let summary = path_integral_exponent(form, &p.reduced);
            let table = p.spec.symbol_table();
            match format {
                OutputFormat::Json => {
                    let report = make_report(&p, "action", flags_echo(cli, false));
                    print!("{}", to_json(&report));
                }
                OutputFormat::Latex => {
                    for (_, param, coeff) in &form.terms {
                        println!(
                            "dZ \\mathrel{{+}}= \\left[{}\\right]\\,\\mathrm{{d}}{}",
                            crate::expr::to_latex(coeff, Some(table)),
                            crate::expr::to_latex(&Expr::symbol(param.clone()), Some(table))
                        );
                    }
                    println!("{}", summary.render_latex(Some(table)));
                }
                OutputFormat::Text => {
                    for (label, param, coeff) in &form.terms {
                        println!(
                            "dZ += ({}) d{}    [{label}]",
                            coeff.render(Some(table)),
                            Expr::symbol(param.clone()).render(Some(table))
                        );
                    }
                    println!("{}", summary.render_text(Some(table)));
                }
            }
            Ok(EXIT_OK)
        }
        Command::Propagate {
            path,
            x0,
            x1,
            t,
            slices,
        } => {
            let spec = load_spec(path)?;
            let opts = PipelineOptions {
                seed: cli.seed,
                rank_samples: cli.rank_samples,
                max_iter: cli.max_iter,
                force: false,
            };
            let p = run_pipeline(spec, &opts)?;
            if p.analysis.partition.rank != p.spec.n() {
                return Err(CliError::Unsupported(
                    "propagator needs a regular (rank-n) system".into(),
                ));
            }
            let qh = quadratic_coefficients(&p.spec, &p.analysis.hamiltonian)?;
            let result = propagator_quadratic(&qh, *x0, *x1, *t, *slices)?;
            match format {
                OutputFormat::Json => {
                    println!(
                        "{{\n  \"modulus\": {:.12e},\n  \"phase\": {:.12e},\n  \"slices\": {},\n  \"convergence_estimate\": {:.3e}\n}}",
                        result.modulus, result.phase, result.slices, result.convergence_estimate
                    );
                }
                _ => {
                    println!("modulus: {:.12}", result.modulus);
                    println!("phase: {:.12}", result.phase);
                    println!("slices: {}", result.slices);
                    println!("convergence estimate: {:.3e}", result.convergence_estimate);
                }
            }
            Ok(EXIT_OK)
        }
        Command::Reduce { path } => {
            let spec = load_spec(path)?;
            let reduced = order_reduce(&spec)?;
            print!("{}", reduced.to_hjl());
            Ok(EXIT_OK)
        }
        Command::Check { path } => {
            let spec = load_spec(path)?;
            let opts = PipelineOptions {
                seed: cli.seed,
                rank_samples: cli.rank_samples,
                max_iter: cli.max_iter,
                force: false,
            };
            let all_ok = run_checks(spec, &opts, cli.tol, cli.seed)?;
            Ok(if all_ok { EXIT_OK } else { EXIT_NOT_CLOSED })
        }
    }
}

// ---------------------------------------------------------------------------
// flag parsing helpers

/// Parse `name=value,name=value` initial data. Names resolve through the
/// system's symbol table (`q`, `q1'`, `p0_q1`, `p`, `t`).
pub fn parse_init(
    text: &str,
    table: &SymbolTable,
) -> Result<BTreeMap<SymbolId, f64>, CliError> {
    let mut out = BTreeMap::new();
    for piece in text.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let (name, value) = piece
            .split_once('=')
            .ok_or_else(|| CliError::Parse(format!("bad init entry `{piece}`")))?;
        let sym = match parse(name.trim(), table) {
            Ok(Expr::Symbol(s)) => s,
            _ => return Err(CliError::Parse(format!("unknown init symbol `{name}`"))),
        };
        let v = parse_number(value.trim())?;
        out.insert(sym, v);
    }
    Ok(out)
}

fn parse_number(text: &str) -> Result<f64, CliError> {
    if let Ok(v) = text.parse::<f64>() {
        return Ok(v);
    }
    // allow exact fractions like 3/2
    let table = SymbolTable::new(Vec::new(), 1);
    let e = parse(text, &table).map_err(|e| CliError::Parse(format!("bad number `{text}`: {e}")))?;
    e.evaluate(&BTreeMap::new())
        .map_err(|e| CliError::Parse(format!("bad number `{text}`: {e}")))
}

/// Resolve a curve target name: `t`, a parameter name like `t0_q2`, or the
/// compact single-digit form `t02` (level then coordinate index).
pub fn resolve_param_name(name: &str, spec: &SystemSpec) -> Result<SymbolId, CliError> {
    if name == "t" {
        return Ok(SymbolId::Time);
    }
    if let Ok(Expr::Symbol(s @ SymbolId::Param { .. })) = parse(name, spec.symbol_table()) {
        return Ok(s);
    }
    let bytes = name.as_bytes();
    if bytes.len() == 3
        && bytes[0] == b't'
        && bytes[1].is_ascii_digit()
        && bytes[2].is_ascii_digit()
    {
        let level = (bytes[1] - b'0') as usize;
        let coord = (bytes[2] - b'0') as usize;
        if coord >= 1 && coord <= spec.n() && level < spec.k() {
            return Ok(SymbolId::Param { level, coord });
        }
    }
    Err(CliError::Parse(format!("unknown parameter `{name}`")))
}

/// Parse repeated `NAME=EXPR(tau)` curve flags. Polynomial expressions are
/// recognized exactly; anything else is sampled on the integration grid.
pub fn parse_curves(
    flags: &[String],
    spec: &SystemSpec,
    dtau: f64,
    tau_end: f64,
) -> Result<CurveSet, CliError> {
    let mut set = CurveSet::default();
    for flag in flags {
        let (name, body) = flag
            .split_once('=')
            .ok_or_else(|| CliError::Parse(format!("bad curve `{flag}` (expected NAME=EXPR)")))?;
        let param = resolve_param_name(name.trim(), spec)?;
        let table = SymbolTable::new(Vec::new(), 1).with_aux(&["tau"]);
        let expr = parse(body.trim(), &table)
            .map_err(|e| CliError::Parse(format!("curve `{name}`: {e}")))?;
        let curve = curve_from_expr(&expr, dtau, tau_end)
            .map_err(|e| CliError::Parse(format!("curve `{name}`: {e}")))?;
        set.curves.insert(param, curve);
    }
    Ok(set)
}

/// Convert an expression in `tau` to a curve: exact polynomial extraction
/// when possible, otherwise dense samples over the integration window.
pub fn curve_from_expr(
    expr: &Expr,
    dtau: f64,
    tau_end: f64,
) -> Result<ParamCurve, String> {
    let tau = SymbolId::aux("tau");
    for s in expr.free_symbols() {
        if s != tau {
            return Err(format!("curves may only reference tau, found `{s}`"));
        }
    }
    // Taylor coefficients at 0; exact for polynomials
    let mut coeffs = Vec::new();
    let mut current = expr.clone();
    let mut factorial = 1.0f64;
    let mut zero = BTreeMap::new();
    zero.insert(tau.clone(), Expr::zero());
    for i in 0..=8usize {
        if i > 0 {
            current = current.differentiate(&tau);
            factorial *= i as f64;
        }
        let at0 = current.substitute_unchecked(&zero);
        match normalize(&at0).ok().and_then(|nf| nf.as_constant()) {
            Some(c) => coeffs.push(crate::expr::rational_to_f64(&c) / factorial),
            None => break,
        }
        if normalize(&current.differentiate(&tau))
            .map(|nf| nf.is_zero())
            .unwrap_or(false)
        {
            // a polynomial: the next derivative vanishes identically
            let rebuilt = rebuild_poly(&coeffs, &tau);
            if normalize(&expr.clone().sub(rebuilt))
                .map(|nf| nf.is_zero())
                .unwrap_or(false)
            {
                return Ok(ParamCurve::Polynomial(coeffs));
            }
            break;
        }
    }
    // fall back to dense samples
    let steps = ((tau_end / dtau).abs().ceil() as usize).max(2);
    let h = tau_end / steps as f64;
    let mut values = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let mut point = BTreeMap::new();
        point.insert(tau.clone(), j as f64 * h);
        let v = expr
            .evaluate(&point)
            .map_err(|e| format!("curve evaluation failed: {e}"))?;
        values.push(v);
    }
    Ok(ParamCurve::Samples { values, dtau: h })
}

fn rebuild_poly(coeffs: &[f64], tau: &SymbolId) -> Expr {
    let mut terms = Vec::new();
    for (i, c) in coeffs.iter().enumerate() {
        // exact only for representable coefficients; used as a zero test
        let approx = Expr::Rational(
            num_rational::BigRational::from_float(*c)
                .unwrap_or_else(|| num_rational::BigRational::from_integer(0.into())),
        );
        terms.push(approx.mul(Expr::symbol(tau.clone()).pow(i as i64)));
    }
    Expr::sum(terms)
}

// ---------------------------------------------------------------------------
// check command

fn run_checks(
    spec: SystemSpec,
    opts: &PipelineOptions,
    tol: f64,
    seed: u64,
) -> Result<bool, CliError> {
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{}: {name}{}", if ok { "PASS" } else { "FAIL" }, detail);
        all_ok &= ok;
    };

    let validation = validate_spec(&spec);
    check("spec validation", validation.is_valid(), String::new());
    if !validation.is_valid() {
        return Ok(false);
    }

    let p = run_pipeline(spec, opts)?;
    let n = p.spec.n();
    let k = p.spec.k();

    // Hessian symmetry
    let mut sym_ok = true;
    for i in 0..n {
        for j in 0..n {
            let d = p
                .analysis
                .hessian
                .entry(i, j)
                .clone()
                .sub(p.analysis.hessian.entry(j, i).clone());
            sym_ok &= normalize(&d).map(|nf| nf.is_zero()).unwrap_or(false);
        }
    }
    check("hessian symmetry", sym_ok, String::new());

    // Legendre round trip and top-independence
    let mut legendre_ok = true;
    for (a, w) in &p.analysis.accelerations.solved {
        let d = p
            .analysis
            .hamiltonian
            .differentiate(&SymbolId::momentum(k - 1, *a))
            .sub(w.clone());
        legendre_ok &= normalize(&d).map(|nf| nf.is_zero()).unwrap_or(false);
    }
    for top in p.spec.top_jets() {
        legendre_ok &= normalize(&p.analysis.hamiltonian.differentiate(&top))
            .map(|nf| nf.is_zero())
            .unwrap_or(false);
    }
    check("canonical hamiltonian consistency", legendre_ok, String::new());

    // bracket algebra at random points: antisymmetry is symbolic, the
    // Jacobi identity is numeric
    let layout = phase_layout(&p.spec);
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let exprs: Vec<Expr> = p.set.generators().iter().map(|g| g.full_expr()).collect();
    let mut bracket_ok = true;
    for f in &exprs {
        for g in &exprs {
            let anti = poisson_bracket(f, g, &layout)
                .and_then(|fg| {
                    poisson_bracket(g, f, &layout).and_then(|gf| normalize(&fg.add(gf)))
                })
                .map(|nf| nf.is_zero())
                .unwrap_or(false);
            bracket_ok &= anti;
        }
    }
    let mut jacobi_worst = 0.0f64;
    if exprs.len() >= 2 {
        let f = &exprs[0];
        let g = &exprs[exprs.len() - 1];
        for h in &exprs {
            let j1 = poisson_bracket(&poisson_bracket(f, g, &layout).unwrap(), h, &layout);
            let j2 = poisson_bracket(&poisson_bracket(g, h, &layout).unwrap(), f, &layout);
            let j3 = poisson_bracket(&poisson_bracket(h, f, &layout).unwrap(), g, &layout);
            if let (Ok(j1), Ok(j2), Ok(j3)) = (j1, j2, j3) {
                let total = j1.add(j2).add(j3);
                for _ in 0..20 {
                    let mut point = BTreeMap::new();
                    for s in layout.symbols() {
                        point.insert(s, rng.random_range(-1.0..1.0));
                    }
                    point.insert(SymbolId::Time, rng.random_range(-1.0..1.0));
                    if let Ok(v) = total.evaluate(&point) {
                        jacobi_worst = jacobi_worst.max(v.abs());
                    }
                }
            }
        }
    }
    check(
        "bracket antisymmetry",
        bracket_ok,
        String::new(),
    );
    check(
        "jacobi identity (numeric)",
        jacobi_worst <= 1e-8,
        format!(" (residual {jacobi_worst:.3e})"),
    );

    check(
        "closure status",
        true,
        format!(" ({})", p.closure.status),
    );

    if p.closure.status == ClosureStatus::ClosedFirstClass {
        let zero_residuals = p.closure.final_brackets.iter().all(|(_, _, r)| r.is_zero());
        check("surface residuals vanish", zero_residuals, String::new());

        // constraint independence: jacobian of the constraints has full
        // row rank at random sample points
        let constraints: Vec<Expr> = p.set.constraints().map(|g| g.full_expr()).collect();
        if !constraints.is_empty() {
            let symbols = layout.symbols();
            let mut independent = true;
            for _ in 0..3 {
                let mut point = BTreeMap::new();
                for s in &symbols {
                    point.insert(s.clone(), rng.random_range(-1.0..1.0));
                }
                point.insert(SymbolId::Time, 0.0);
                let mut mat: Vec<Vec<f64>> = Vec::new();
                for c in &constraints {
                    let row: Vec<f64> = symbols
                        .iter()
                        .map(|s| {
                            c.differentiate(s)
                                .evaluate(&point)
                                .unwrap_or(f64::NAN)
                        })
                        .collect();
                    mat.push(row);
                }
                independent &= float_rank(mat, 1e-9) == constraints.len();
            }
            check("constraint independence", independent, String::new());
        }

        if let (Some(system), Some(form)) = (p.eom.as_ref(), p.action.as_ref()) {
            let guess: BTreeMap<SymbolId, f64> = layout
                .symbols()
                .into_iter()
                .enumerate()
                .map(|(i, s)| (s, 0.3 + 0.1 * i as f64))
                .collect();
            let start = project_initial(&p.set, &guess, tol.max(1e-6))?;
            let traj = integrate(system, Some(form), &CurveSet::default(), &start, 1e-3, 1.0)?;
            let drift = constraint_drift(&p.set, &traj)?;
            check(
                "constraint drift along flow",
                drift <= 1e-8,
                format!(" (drift {drift:.3e})"),
            );

            if p.analysis.partition.rank == n {
                let report = el_residual(&p.spec, &traj)?;
                let worst = report.max_el_residual();
                check(
                    "variational residual",
                    worst <= 1e-4,
                    format!(" (residual {worst:.3e})"),
                );

                // action consistency against the on-shell Lagrangian
                let z = classical_action(&traj, form).map_err(CliError::from)?;
                let l_int = on_shell_lagrangian_integral(&p, &traj)?;
                let ok = (z - l_int).abs() <= 1e-6 * (1.0 + l_int.abs());
                check(
                    "action consistency",
                    ok,
                    format!(" (Z {z:.6e} vs int L dt {l_int:.6e})"),
                );
            }
        }
    }

    Ok(all_ok)
}

fn float_rank(mut mat: Vec<Vec<f64>>, tol: f64) -> usize {
    let rows = mat.len();
    if rows == 0 {
        return 0;
    }
    let cols = mat[0].len();
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        if row >= rows {
            break;
        }
        let (best, best_val) = (row..rows)
            .map(|r| (r, mat[r][col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if best_val <= tol {
            continue;
        }
        mat.swap(row, best);
        let pivot = mat[row][col];
        for r in 0..rows {
            if r != row {
                let factor = mat[r][col] / pivot;
                for c in 0..cols {
                    mat[r][c] -= factor * mat[row][c];
                }
            }
        }
        rank += 1;
        row += 1;
    }
    rank
}

/// Trapezoidal integral of the Lagrangian along a trajectory, with top
/// derivatives reconstructed from the solved accelerations. Regular
/// systems only.
pub fn on_shell_lagrangian_integral(p: &Pipeline, traj: &crate::numeric::Trajectory) -> Result<f64, CliError> {
    let k = p.spec.k();
    let w_map = p.analysis.accelerations.substitution(k);
    let on_shell = p.spec.lagrangian().substitute_unchecked(&w_map);
    let mut values = Vec::with_capacity(traj.len());
    for idx in 0..traj.len() {
        let point = traj.point(idx);
        let v = on_shell
            .evaluate(&point)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        values.push(v);
    }
    let mut total = 0.0;
    for j in 0..traj.len() - 1 {
        let dt = traj.t[j + 1] - traj.t[j];
        total += 0.5 * (values[j] + values[j + 1]) * dt;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_parsing_resolves_names() {
        let table = SymbolTable::new(vec!["q".into()], 1);
        let init = parse_init("q=1,p=-0.5", &table).unwrap();
        assert_eq!(init[&SymbolId::jet(1, 0)], 1.0);
        assert_eq!(init[&SymbolId::momentum(0, 1)], -0.5);
    }

    #[test]
    fn init_parsing_accepts_fractions_and_primes() {
        let table = SymbolTable::new(vec!["q1".into(), "q2".into()], 2);
        let init = parse_init("q1'=3/2, p1_q1=2", &table).unwrap();
        assert_eq!(init[&SymbolId::jet(1, 1)], 1.5);
        assert_eq!(init[&SymbolId::momentum(1, 1)], 2.0);
    }

    #[test]
    fn curve_polynomial_extraction() {
        let table = SymbolTable::new(Vec::new(), 1).with_aux(&["tau"]);
        let e = parse("0.5*tau^2", &table).unwrap();
        match curve_from_expr(&e, 0.01, 1.0).unwrap() {
            ParamCurve::Polynomial(c) => {
                assert_eq!(c.len(), 3);
                assert!((c[2] - 0.5).abs() < 1e-15);
                assert_eq!(c[0], 0.0);
            }
            other => panic!("expected polynomial, got {other:?}"),
        }
    }

    #[test]
    fn curve_sampling_fallback() {
        let table = SymbolTable::new(Vec::new(), 1).with_aux(&["tau"]);
        let e = parse("sin(tau)", &table).unwrap();
        match curve_from_expr(&e, 0.1, 1.0).unwrap() {
            ParamCurve::Samples { values, .. } => {
                assert!(values.len() >= 11);
            }
            other => panic!("expected samples, got {other:?}"),
        }
    }

    #[test]
    fn compact_parameter_names() {
        let spec = SystemSpec::parse_hjl(
            "system { coordinates: q1, q2; order: 2; lagrangian: (q1''-q2')^2/2; }",
        )
        .unwrap();
        assert_eq!(
            resolve_param_name("t02", &spec).unwrap(),
            SymbolId::Param { level: 0, coord: 2 }
        );
        assert_eq!(
            resolve_param_name("t1_q2", &spec).unwrap(),
            SymbolId::Param { level: 1, coord: 2 }
        );
        assert_eq!(resolve_param_name("t", &spec).unwrap(), SymbolId::Time);
        assert!(resolve_param_name("t9", &spec).is_err());
    }
}
