//! Python extension module exposing the constraint-analysis pipeline.
//!
//! Build with `cargo build -p hjcanon-py`, then import the produced
//! cdylib as `_hjcanon` (see `python/smoke_test.py`).

use hjcanon::action::{path_integral_exponent, propagator_quadratic, quadratic_coefficients};
use hjcanon::cli::{curve_from_expr, on_shell_lagrangian_integral, resolve_param_name, run_pipeline, Pipeline, PipelineOptions};
use hjcanon::expr::{parse, Expr, SymbolId, SymbolTable};
use hjcanon::hj::{poisson_bracket, ClosureStatus};
use hjcanon::model::{phase_layout, SystemSpec};
use hjcanon::numeric::{
    constraint_drift, el_residual, integrate as integrate_rs, order_reduce, project_initial,
    CurveSet,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::collections::BTreeMap;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn pipeline_for(text: &str, seed: u64, rank_samples: usize, max_iter: usize, force: bool) -> PyResult<Pipeline> {
    let spec = SystemSpec::parse_hjl(text).map_err(value_err)?;
    run_pipeline(
        spec,
        &PipelineOptions {
            seed,
            rank_samples,
            max_iter,
            force,
        },
    )
    .map_err(value_err)
}

/// A parsed system description.
#[pyclass]
struct System {
    spec: SystemSpec,
}

#[pymethods]
impl System {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(System {
            spec: SystemSpec::parse_hjl(text).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(runtime_err)?;
        Self::new(&text)
    }

    #[getter]
    fn coordinates(&self) -> Vec<String> {
        self.spec.coordinates().to_vec()
    }

    #[getter]
    fn order(&self) -> usize {
        self.spec.k()
    }

    #[getter]
    fn lagrangian(&self) -> String {
        self.spec
            .lagrangian()
            .render(Some(self.spec.symbol_table()))
    }

    fn to_hjl(&self) -> String {
        self.spec.to_hjl()
    }

    fn __repr__(&self) -> String {
        format!(
            "System(coordinates={:?}, order={})",
            self.spec.coordinates(),
            self.spec.k()
        )
    }
}

/// Result of the full constraint analysis of one system.
#[pyclass]
struct Analysis {
    pipeline: Pipeline,
    flags: (u64, usize, usize),
}

#[pymethods]
impl Analysis {
    #[getter]
    fn status(&self) -> String {
        self.pipeline.closure.status.to_string()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.pipeline.closure.iterations
    }

    #[getter]
    fn generic_rank(&self) -> usize {
        self.pipeline.analysis.partition.rank
    }

    #[getter]
    fn degenerate(&self) -> Vec<String> {
        let coords = self.pipeline.spec.coordinates();
        self.pipeline
            .analysis
            .partition
            .degenerate
            .iter()
            .map(|&i| coords[i - 1].clone())
            .collect()
    }

    #[getter]
    fn hamiltonian(&self) -> String {
        self.pipeline
            .analysis
            .hamiltonian
            .render(Some(self.pipeline.spec.symbol_table()))
    }

    /// Generators as (label, parameter-or-None, expression) triples.
    #[getter]
    fn generators(&self) -> Vec<(String, Option<String>, String)> {
        let table = self.pipeline.spec.symbol_table();
        self.pipeline
            .set
            .generators()
            .iter()
            .map(|g| {
                (
                    g.label.to_string(),
                    g.parameter
                        .as_ref()
                        .map(|p| Expr::symbol(p.clone()).render(Some(table))),
                    if g.is_hamiltonian() {
                        format!("p_t + {}", g.h_part.render(Some(table)))
                    } else {
                        g.full_expr().render(Some(table))
                    },
                )
            })
            .collect()
    }

    /// Constraint expressions (every generator except the time one).
    #[getter]
    fn constraints(&self) -> Vec<String> {
        let table = self.pipeline.spec.symbol_table();
        self.pipeline
            .set
            .constraints()
            .map(|g| g.full_expr().render(Some(table)))
            .collect()
    }

    /// dZ coefficients keyed by parameter name (closed systems only).
    #[getter]
    fn action_terms(&self) -> Option<BTreeMap<String, String>> {
        let table = self.pipeline.spec.symbol_table();
        self.pipeline.action.as_ref().map(|form| {
            form.terms
                .iter()
                .map(|(_, p, c)| {
                    (
                        Expr::symbol(p.clone()).render(Some(table)),
                        c.render(Some(table)),
                    )
                })
                .collect()
        })
    }

    /// The symbolic path-integral exponent and measure as text.
    fn path_integral(&self) -> Option<String> {
        let table = self.pipeline.spec.symbol_table();
        self.pipeline
            .action
            .as_ref()
            .map(|f| path_integral_exponent(f, &self.pipeline.reduced).render_text(Some(table)))
    }

    /// Equations of motion: {phase symbol: {parameter: coefficient}}.
    fn equations_of_motion(&self) -> PyResult<BTreeMap<String, BTreeMap<String, String>>> {
        let table = self.pipeline.spec.symbol_table();
        let system = self
            .pipeline
            .eom
            .as_ref()
            .ok_or_else(|| runtime_err("equations unavailable for a non-closed system"))?;
        let mut out = BTreeMap::new();
        for (sym, coeffs) in &system.rows {
            let mut row = BTreeMap::new();
            for ((_, param), coeff) in system.parameters.iter().zip(coeffs) {
                if !coeff.is_zero() {
                    row.insert(
                        Expr::symbol(param.clone()).render(Some(table)),
                        coeff.render(Some(table)),
                    );
                }
            }
            out.insert(Expr::symbol(sym.clone()).render(Some(table)), row);
        }
        Ok(out)
    }

    /// Full analysis report as a JSON string.
    fn report_json(&self) -> String {
        let p = &self.pipeline;
        let summary = p
            .action
            .as_ref()
            .map(|f| path_integral_exponent(f, &p.reduced));
        let action = p
            .action
            .as_ref()
            .zip(summary.as_ref())
            .map(|(f, s)| (f, &p.reduced, s));
        let report = hjcanon::report::build_report(hjcanon::report::ReportInputs {
            spec: &p.spec,
            analysis: &p.analysis,
            set: &p.set,
            closure: &p.closure,
            eom: p.eom.as_ref(),
            action,
            command: "analyze",
            flags: hjcanon::report::ReportFlags {
                format: "json".into(),
                seed: self.flags.0,
                rank_samples: self.flags.1,
                max_iter: self.flags.2,
                tol: 1e-10,
                force: false,
            },
        });
        hjcanon::report::to_json(&report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Analysis(status={}, rank={}, generators={})",
            self.pipeline.closure.status,
            self.pipeline.analysis.partition.rank,
            self.pipeline.set.generators().len()
        )
    }
}

/// Run the full constraint analysis on `.hjl` text.
#[pyfunction]
#[pyo3(signature = (text, seed=42, rank_samples=5, max_iter=0))]
fn analyze(text: &str, seed: u64, rank_samples: usize, max_iter: usize) -> PyResult<Analysis> {
    let pipeline = pipeline_for(text, seed, rank_samples, max_iter, true)?;
    Ok(Analysis {
        pipeline,
        flags: (seed, rank_samples, max_iter),
    })
}

/// Integrate the equations of motion; returns a dict of columns plus
/// drift and (for regular systems) the variational residual.
#[pyfunction]
#[pyo3(signature = (text, init=None, t_end=1.0, dt=1e-3, curves=None, force=false, seed=42))]
#[allow(clippy::too_many_arguments)]
fn integrate<'py>(
    py: Python<'py>,
    text: &str,
    init: Option<BTreeMap<String, f64>>,
    t_end: f64,
    dt: f64,
    curves: Option<BTreeMap<String, String>>,
    force: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = pipeline_for(text, seed, 5, 0, force)?;
    if p.closure.status != ClosureStatus::ClosedFirstClass && !force {
        return Err(runtime_err(format!(
            "closure status is {}; pass force=True to integrate anyway",
            p.closure.status
        )));
    }
    let system = p
        .eom
        .as_ref()
        .ok_or_else(|| runtime_err("equations of motion unavailable"))?;
    let table = p.spec.symbol_table();

    let mut guess: BTreeMap<SymbolId, f64> = BTreeMap::new();
    for (name, value) in init.unwrap_or_default() {
        match parse(&name, table) {
            Ok(Expr::Symbol(s)) => {
                guess.insert(s, value);
            }
            _ => return Err(value_err(format!("unknown init symbol `{name}`"))),
        }
    }
    let start = project_initial(&p.set, &guess, 1e-10).map_err(value_err)?;

    let mut curve_set = CurveSet::default();
    for (name, body) in curves.unwrap_or_default() {
        let param = resolve_param_name(&name, &p.spec).map_err(value_err)?;
        let aux_table = SymbolTable::new(Vec::new(), 1).with_aux(&["tau"]);
        let expr = parse(&body, &aux_table).map_err(value_err)?;
        let curve = curve_from_expr(&expr, dt, t_end).map_err(value_err)?;
        curve_set.curves.insert(param, curve);
    }

    let traj = integrate_rs(system, p.action.as_ref(), &curve_set, &start, dt, t_end)
        .map_err(runtime_err)?;

    let out = PyDict::new(py);
    out.set_item("tau", traj.taus.clone())?;
    out.set_item("t", traj.t.clone())?;
    for sym in &traj.phase_symbols {
        let name = Expr::symbol(sym.clone()).render(Some(table));
        out.set_item(name, traj.column(sym).unwrap())?;
    }
    out.set_item("Z", traj.z.clone())?;
    out.set_item(
        "constraint_drift",
        constraint_drift(&p.set, &traj).map_err(runtime_err)?,
    )?;
    if p.analysis.partition.rank == p.spec.n() {
        if let Ok(report) = el_residual(&p.spec, &traj) {
            out.set_item("el_residual", report.max_el_residual())?;
        }
        out.set_item(
            "lagrangian_integral",
            on_shell_lagrangian_integral(&p, &traj).map_err(runtime_err)?,
        )?;
    }
    Ok(out)
}

/// Time-sliced propagator for a regular quadratic first-order system.
/// Returns (modulus, phase).
#[pyfunction]
#[pyo3(signature = (text, x0, x1, t, slices=64))]
fn propagate(text: &str, x0: f64, x1: f64, t: f64, slices: usize) -> PyResult<(f64, f64)> {
    let p = pipeline_for(text, 42, 5, 0, false)?;
    if p.analysis.partition.rank != p.spec.n() {
        return Err(value_err("propagator needs a regular system"));
    }
    let qh = quadratic_coefficients(&p.spec, &p.analysis.hamiltonian).map_err(value_err)?;
    let r = propagator_quadratic(&qh, x0, x1, t, slices).map_err(runtime_err)?;
    Ok((r.modulus, r.phase))
}

/// Rewrite a higher-order system as an equivalent first-order one,
/// returning new `.hjl` text.
#[pyfunction]
fn reduce_order(text: &str) -> PyResult<String> {
    let spec = SystemSpec::parse_hjl(text).map_err(value_err)?;
    let reduced = order_reduce(&spec).map_err(value_err)?;
    Ok(reduced.to_hjl())
}

/// Poisson bracket of two expressions over a system's phase space.
#[pyfunction]
fn bracket(system_text: &str, f: &str, g: &str) -> PyResult<String> {
    let spec = SystemSpec::parse_hjl(system_text).map_err(value_err)?;
    let table = spec.symbol_table();
    let fe = parse(f, table).map_err(value_err)?;
    let ge = parse(g, table).map_err(value_err)?;
    let layout = phase_layout(&spec);
    let result = poisson_bracket(&fe, &ge, &layout).map_err(runtime_err)?;
    Ok(result.render(Some(table)))
}

#[pymodule]
fn _hjcanon(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<System>()?;
    m.add_class::<Analysis>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(reduce_order, m)?)?;
    m.add_function(wrap_pyfunction!(bracket, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
