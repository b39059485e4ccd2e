//! Numeric layer: fixed-step integration of the total differential
//! equations along parameter curves, trajectory storage and CSV output,
//! the Euler-Lagrange finite-difference oracle, constraint drift, and the
//! first-order reduction of higher-order systems.

use crate::action::ActionForm;
use crate::expr::{Expr, SymbolId, SymbolTable, UnaryFunc};
use crate::hj::{GeneratorSet, TotalDifferentialSystem};
use crate::model::SystemSpec;
use std::collections::BTreeMap;
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum NumericError {
    #[error("inconsistent initial data: |{constraint}| = {value:e} exceeds {tol:e}")]
    InconsistentInitialData {
        constraint: String,
        value: f64,
        tol: f64,
    },
    #[error("state became non-finite at tau = {last_tau}")]
    Blowup { last_tau: f64 },
    #[error("trajectory too coarse: the difference stencil needs {needed} samples, found {found}")]
    GridTooCoarse { needed: usize, found: usize },
    #[error("order reduction needs k >= 2, found k = {0}")]
    OrderTooLow(usize),
    #[error("unbound symbol `{0}` during compilation")]
    Unbound(String),
    #[error("step size must be positive and finite")]
    BadStep,
}

// ---------------------------------------------------------------------------
// Compiled expressions: slot-indexed trees with f64 constants, so the
// integrator avoids bignum traffic in its inner loop.

#[derive(Debug, Clone)]
enum CExpr {
    Const(f64),
    Slot(usize),
    Sum(Vec<CExpr>),
    Prod(Vec<CExpr>),
    Pow(Box<CExpr>, i32),
    Func(UnaryFunc, Box<CExpr>),
}

#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: CExpr,
}

impl CompiledExpr {
    pub fn compile(
        e: &Expr,
        slots: &BTreeMap<SymbolId, usize>,
    ) -> Result<CompiledExpr, NumericError> {
        Ok(CompiledExpr {
            root: Self::build(e, slots)?,
        })
    }

    fn build(e: &Expr, slots: &BTreeMap<SymbolId, usize>) -> Result<CExpr, NumericError> {
        Ok(match e {
            Expr::Rational(r) => CExpr::Const(crate::expr::rational_to_f64(r)),
            Expr::Symbol(s) => CExpr::Slot(
                *slots
                    .get(s)
                    .ok_or_else(|| NumericError::Unbound(format!("{s}")))?,
            ),
            Expr::Sum(v) => CExpr::Sum(
                v.iter()
                    .map(|t| Self::build(t, slots))
                    .collect::<Result<_, _>>()?,
            ),
            Expr::Product(v) => CExpr::Prod(
                v.iter()
                    .map(|t| Self::build(t, slots))
                    .collect::<Result<_, _>>()?,
            ),
            Expr::Pow(b, n) => CExpr::Pow(Box::new(Self::build(b, slots)?), *n as i32),
            Expr::Func(f, a) => CExpr::Func(*f, Box::new(Self::build(a, slots)?)),
        })
    }

    pub fn eval(&self, slots: &[f64]) -> f64 {
        Self::eval_node(&self.root, slots)
    }

    fn eval_node(node: &CExpr, slots: &[f64]) -> f64 {
        match node {
            CExpr::Const(c) => *c,
            CExpr::Slot(i) => slots[*i],
            CExpr::Sum(v) => v.iter().map(|n| Self::eval_node(n, slots)).sum(),
            CExpr::Prod(v) => v.iter().map(|n| Self::eval_node(n, slots)).product(),
            CExpr::Pow(b, n) => Self::eval_node(b, slots).powi(*n),
            CExpr::Func(f, a) => {
                let v = Self::eval_node(a, slots);
                match f {
                    UnaryFunc::Sin => v.sin(),
                    UnaryFunc::Cos => v.cos(),
                    UnaryFunc::Exp => v.exp(),
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter curves

/// Prescribed evolution of one parameter as a function of tau. Only the
/// rate matters for the dynamics; values start from the initial data.
#[derive(Debug, Clone)]
pub enum ParamCurve {
    Constant(f64),
    /// Coefficients c0 + c1 tau + c2 tau^2 + ...
    Polynomial(Vec<f64>),
    /// Values on a uniform tau grid with the given spacing.
    Samples { values: Vec<f64>, dtau: f64 },
}

impl ParamCurve {
    pub fn rate(&self, tau: f64) -> f64 {
        match self {
            ParamCurve::Constant(_) => 0.0,
            ParamCurve::Polynomial(c) => {
                let mut acc = 0.0;
                let mut power = 1.0;
                for (i, ci) in c.iter().enumerate().skip(1) {
                    acc += (i as f64) * ci * power;
                    power *= tau;
                }
                acc
            }
            ParamCurve::Samples { values, dtau } => {
                if values.len() < 2 {
                    return 0.0;
                }
                let pos = (tau / dtau).clamp(0.0, (values.len() - 1) as f64);
                let j = (pos.floor() as usize).min(values.len() - 2);
                (values[j + 1] - values[j]) / dtau
            }
        }
    }
}

/// Curve assignment per parameter symbol. Defaults: time runs as tau,
/// promoted parameters stay frozen.
#[derive(Debug, Clone, Default)]
pub struct CurveSet {
    pub curves: BTreeMap<SymbolId, ParamCurve>,
}

impl CurveSet {
    pub fn with(mut self, param: SymbolId, curve: ParamCurve) -> Self {
        self.curves.insert(param, curve);
        self
    }

    fn rate(&self, param: &SymbolId, tau: f64) -> f64 {
        match self.curves.get(param) {
            Some(c) => c.rate(tau),
            None if *param == SymbolId::Time => 1.0,
            None => 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory

/// Uniform-grid samples of every phase symbol, time, and accumulated Z.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub taus: Vec<f64>,
    pub t: Vec<f64>,
    /// Phase symbols in layout order: coordinates then momenta.
    pub phase_symbols: Vec<SymbolId>,
    /// One row per tau sample, aligned with `phase_symbols`.
    pub samples: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn column(&self, sym: &SymbolId) -> Option<Vec<f64>> {
        let idx = self.phase_symbols.iter().position(|s| s == sym)?;
        Some(self.samples.iter().map(|row| row[idx]).collect())
    }

    /// Full binding of phase symbols plus time at one sample.
    pub fn point(&self, idx: usize) -> BTreeMap<SymbolId, f64> {
        let mut map: BTreeMap<SymbolId, f64> = self
            .phase_symbols
            .iter()
            .cloned()
            .zip(self.samples[idx].iter().copied())
            .collect();
        map.insert(SymbolId::Time, self.t[idx]);
        map
    }

    /// Values of a parameter along the trajectory: time itself, or the
    /// promoted jet a parameter symbol refers to.
    pub fn parameter_values(&self, param: &SymbolId) -> Option<Vec<f64>> {
        match param {
            SymbolId::Time => Some(self.t.clone()),
            SymbolId::Param { level, coord } => self.column(&SymbolId::jet(*coord, *level)),
            other => self.column(other),
        }
    }

    pub fn final_point(&self) -> BTreeMap<SymbolId, f64> {
        self.point(self.len() - 1)
    }
}

// ---------------------------------------------------------------------------
// Initial-data projection

/// Overwrite solved momenta with their constraint values at the guess and
/// check every non-parametric condition.
pub fn project_initial(
    set: &GeneratorSet,
    guess: &BTreeMap<SymbolId, f64>,
    tol: f64,
) -> Result<BTreeMap<SymbolId, f64>, NumericError> {
    let mut point: BTreeMap<SymbolId, f64> = BTreeMap::new();
    for sym in set.layout().symbols() {
        point.insert(sym.clone(), guess.get(&sym).copied().unwrap_or(0.0));
    }
    point.insert(
        SymbolId::Time,
        guess.get(&SymbolId::Time).copied().unwrap_or(0.0),
    );

    // solved-map values are free of every solved key, so one pass suffices
    for (key, value) in set.solved_map() {
        if !matches!(key, SymbolId::Momentum { .. }) {
            continue;
        }
        let v = value
            .evaluate(&point)
            .map_err(|e| NumericError::Unbound(e.to_string()))?;
        point.insert(key.clone(), v);
    }

    for g in set.constraints() {
        if g.parameter.is_some() {
            continue;
        }
        let v = g
            .h_part
            .evaluate(&point)
            .map_err(|e| NumericError::Unbound(e.to_string()))?;
        if v.abs() > tol {
            return Err(NumericError::InconsistentInitialData {
                constraint: format!("{}", g.label),
                value: v,
                tol,
            });
        }
    }
    Ok(point)
}

// ---------------------------------------------------------------------------
// Integration

/// Classic fixed-step 4th-order integration of
/// dx/dtau = sum_alpha coeff_(x,alpha) * dt_alpha/dtau,
/// accumulating Z from the action form when one is supplied.
pub fn integrate(
    system: &TotalDifferentialSystem,
    action: Option<&ActionForm>,
    curves: &CurveSet,
    init: &BTreeMap<SymbolId, f64>,
    dtau: f64,
    tau_end: f64,
) -> Result<Trajectory, NumericError> {
    if !(dtau.is_finite() && dtau > 0.0) || !tau_end.is_finite() {
        return Err(NumericError::BadStep);
    }

    let phase_symbols: Vec<SymbolId> = system.rows.iter().map(|(s, _)| s.clone()).collect();
    let mut slots: BTreeMap<SymbolId, usize> = BTreeMap::new();
    for (i, s) in phase_symbols.iter().enumerate() {
        slots.insert(s.clone(), i);
    }
    let t_slot = phase_symbols.len();
    slots.insert(SymbolId::Time, t_slot);

    // compile the coefficient table and the optional Z integrand
    let n_params = system.parameters.len();
    let mut compiled_rows: Vec<Vec<CompiledExpr>> = Vec::with_capacity(system.rows.len());
    for (_, coeffs) in &system.rows {
        compiled_rows.push(
            coeffs
                .iter()
                .map(|c| CompiledExpr::compile(c, &slots))
                .collect::<Result<_, _>>()?,
        );
    }
    let z_coeffs: Option<Vec<(usize, CompiledExpr)>> = match action {
        Some(form) => {
            let mut v = Vec::new();
            for (_, param, coeff) in &form.terms {
                let col = system
                    .parameters
                    .iter()
                    .position(|(_, p)| p == param)
                    .ok_or_else(|| NumericError::Unbound(format!("{param}")))?;
                v.push((col, CompiledExpr::compile(coeff, &slots)?));
            }
            Some(v)
        }
        None => None,
    };

    // state = [phase..., t, Z]
    let dim = phase_symbols.len() + 2;
    let z_slot = t_slot + 1;
    let mut state = vec![0.0; dim];
    for (i, s) in phase_symbols.iter().enumerate() {
        state[i] = init.get(s).copied().unwrap_or(0.0);
    }
    state[t_slot] = init.get(&SymbolId::Time).copied().unwrap_or(0.0);

    let rates_at = |tau: f64| -> Vec<f64> {
        system
            .parameters
            .iter()
            .map(|(_, p)| curves.rate(p, tau))
            .collect()
    };

    let deriv = |state: &[f64], tau: f64, out: &mut [f64]| {
        let rates = rates_at(tau);
        for (row, compiled) in compiled_rows.iter().enumerate() {
            let mut acc = 0.0;
            for alpha in 0..n_params {
                if rates[alpha] != 0.0 {
                    acc += compiled[alpha].eval(state) * rates[alpha];
                }
            }
            out[row] = acc;
        }
        out[t_slot] = curves.rate(&SymbolId::Time, tau);
        out[z_slot] = match &z_coeffs {
            Some(terms) => terms
                .iter()
                .map(|(col, c)| {
                    if rates[*col] != 0.0 {
                        c.eval(state) * rates[*col]
                    } else {
                        0.0
                    }
                })
                .sum(),
            None => 0.0,
        };
    };

    let mut taus = vec![0.0];
    let mut t_col = vec![state[t_slot]];
    let mut samples = vec![state[..phase_symbols.len()].to_vec()];
    let mut z_col = vec![0.0];

    let steps = ((tau_end / dtau) + 0.5).floor() as usize;
    let steps = steps.max(1);
    let h = tau_end / steps as f64;

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    let mut tau = 0.0;
    for step in 0..steps {
        deriv(&state, tau, &mut k1);
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, tau + 0.5 * h, &mut k2);
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, tau + 0.5 * h, &mut k3);
        for i in 0..dim {
            tmp[i] = state[i] + h * k3[i];
        }
        deriv(&tmp, tau + h, &mut k4);
        for i in 0..dim {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        tau = (step + 1) as f64 * h;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::Blowup {
                last_tau: step as f64 * h,
            });
        }
        taus.push(tau);
        t_col.push(state[t_slot]);
        samples.push(state[..phase_symbols.len()].to_vec());
        z_col.push(state[z_slot]);
    }

    Ok(Trajectory {
        taus,
        t: t_col,
        phase_symbols,
        samples,
        z: z_col,
    })
}

// ---------------------------------------------------------------------------
// Euler-Lagrange oracle

/// Per-coordinate residual norms of the variational equations, evaluated
/// on the trajectory interior with iterated central differences.
#[derive(Debug, Clone)]
pub struct OracleReport {
    /// (coordinate name, max |residual| over the interior).
    pub el_residuals: Vec<(String, f64)>,
    pub max_constraint_drift: Option<f64>,
    /// (label, norm) comparisons against reference trajectories.
    pub comparisons: Vec<(String, f64)>,
}

impl OracleReport {
    pub fn max_el_residual(&self) -> f64 {
        self.el_residuals
            .iter()
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }
}

/// The variational derivative sum_{s=0..k} (-1)^s d^s/dt^s (dL/dq_i^(s)),
/// evaluated along a trajectory. Jet levels above the stored ones come
/// from iterated second-order central differences of the level-(k-1)
/// columns, so the residual is independent of the solved dynamics.
pub fn el_residual(spec: &SystemSpec, traj: &Trajectory) -> Result<OracleReport, NumericError> {
    let k = spec.k();
    let n = spec.n();
    let margin = k + 1; // deepest difference order applied to level k-1
    let needed = 2 * margin + 1;
    if traj.len() < needed {
        return Err(NumericError::GridTooCoarse {
            needed,
            found: traj.len(),
        });
    }
    let h = traj.t[1] - traj.t[0];
    if !(h.is_finite() && h.abs() > 0.0) {
        return Err(NumericError::BadStep);
    }

    // symbolic variational expressions, one per coordinate
    let max_level = 2 * k;
    let mut exprs = Vec::with_capacity(n);
    for i in 1..=n {
        let mut total = Expr::zero();
        for s in 0..=k {
            let partial = spec.lagrangian().differentiate(&SymbolId::jet(i, s));
            let mut term = partial;
            for _ in 0..s {
                term = term
                    .total_time_derivative(max_level)
                    .expect("level bound covers k applications");
            }
            if s % 2 == 1 {
                term = term.neg();
            }
            total = total.add(term);
        }
        exprs.push(total);
    }

    // slot layout: all jets up to level 2k for every coordinate, plus time
    let mut slots: BTreeMap<SymbolId, usize> = BTreeMap::new();
    let mut idx = 0;
    for i in 1..=n {
        for s in 0..=max_level {
            slots.insert(SymbolId::jet(i, s), idx);
            idx += 1;
        }
    }
    let t_slot = idx;
    slots.insert(SymbolId::Time, t_slot);
    let compiled: Vec<CompiledExpr> = exprs
        .iter()
        .map(|e| CompiledExpr::compile(e, &slots))
        .collect::<Result<_, _>>()?;

    // jet columns: stored levels from the trajectory, higher levels by
    // iterated central differences of the top stored level
    let len = traj.len();
    let mut columns: Vec<Vec<f64>> = vec![vec![0.0; len]; n * (max_level + 1)];
    let col_index = |i: usize, s: usize| (i - 1) * (max_level + 1) + s;
    for i in 1..=n {
        for s in 0..k {
            let stored = traj
                .column(&SymbolId::jet(i, s))
                .expect("stored jet levels present");
            columns[col_index(i, s)] = stored;
        }
        let mut current = columns[col_index(i, k - 1)].clone();
        for s in k..=max_level {
            current = central_difference(&current, h);
            columns[col_index(i, s)] = current.clone();
        }
    }

    let interior = margin..(len - margin);
    let mut slots_buf = vec![0.0; idx + 1];
    let mut out = Vec::with_capacity(n);
    for (ci, name) in spec.coordinates().iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in interior.clone() {
            for i in 1..=n {
                for s in 0..=max_level {
                    slots_buf[col_index(i, s)] = columns[col_index(i, s)][j];
                }
            }
            slots_buf[t_slot] = traj.t[j];
            worst = worst.max(compiled[ci].eval(&slots_buf).abs());
        }
        out.push((name.clone(), worst));
    }
    Ok(OracleReport {
        el_residuals: out,
        max_constraint_drift: None,
        comparisons: Vec::new(),
    })
}

/// Second-order central difference; endpoints fall back to one-sided
/// differences so the output keeps the input length.
fn central_difference(values: &[f64], h: f64) -> Vec<f64> {
    let len = values.len();
    let mut out = vec![0.0; len];
    for j in 0..len {
        out[j] = if j == 0 {
            (values[1] - values[0]) / h
        } else if j + 1 == len {
            (values[len - 1] - values[len - 2]) / h
        } else {
            (values[j + 1] - values[j - 1]) / (2.0 * h)
        };
    }
    out
}

// ---------------------------------------------------------------------------
// Constraint drift

/// Max over samples and constraints of |H'| along the trajectory.
pub fn constraint_drift(set: &GeneratorSet, traj: &Trajectory) -> Result<f64, NumericError> {
    let mut slots: BTreeMap<SymbolId, usize> = BTreeMap::new();
    for (i, s) in traj.phase_symbols.iter().enumerate() {
        slots.insert(s.clone(), i);
    }
    let t_slot = traj.phase_symbols.len();
    slots.insert(SymbolId::Time, t_slot);

    let compiled: Vec<CompiledExpr> = set
        .constraints()
        .map(|g| CompiledExpr::compile(&g.full_expr(), &slots))
        .collect::<Result<_, _>>()?;
    if compiled.is_empty() {
        return Ok(0.0);
    }
    let mut buf = vec![0.0; t_slot + 1];
    let mut worst: f64 = 0.0;
    for j in 0..traj.len() {
        buf[..t_slot].copy_from_slice(&traj.samples[j]);
        buf[t_slot] = traj.t[j];
        for c in &compiled {
            worst = worst.max(c.eval(&buf).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Order reduction

/// Rewrite a k >= 2 system as an equivalent first-order one: jets become
/// coordinates y_s, multipliers enforce y_s' = y_{s+1}, and the original
/// Lagrangian is evaluated on (y, y_{k-1}').
///
/// Coordinate naming is deterministic: `y<s>_<name>` and `lam<s>_<name>`.
pub fn order_reduce(spec: &SystemSpec) -> Result<SystemSpec, NumericError> {
    let k = spec.k();
    let n = spec.n();
    if k < 2 {
        return Err(NumericError::OrderTooLow(k));
    }
    let mut coords = Vec::new();
    for s in 0..k {
        for name in spec.coordinates() {
            coords.push(format!("y{s}_{name}"));
        }
    }
    for s in 0..k - 1 {
        for name in spec.coordinates() {
            coords.push(format!("lam{s}_{name}"));
        }
    }
    let y_index = |s: usize, i: usize| s * n + i; // 1-based coordinate index
    let lam_index = |s: usize, i: usize| k * n + s * n + i;

    let mut map: BTreeMap<SymbolId, Expr> = BTreeMap::new();
    for i in 1..=n {
        for s in 0..k {
            map.insert(
                SymbolId::jet(i, s),
                Expr::symbol(SymbolId::jet(y_index(s, i), 0)),
            );
        }
        map.insert(
            SymbolId::jet(i, k),
            Expr::symbol(SymbolId::jet(y_index(k - 1, i), 1)),
        );
    }
    let mut lagrangian = spec.lagrangian().substitute_unchecked(&map);
    for s in 0..k - 1 {
        for i in 1..=n {
            let lam = Expr::symbol(SymbolId::jet(lam_index(s, i), 0));
            let link = Expr::symbol(SymbolId::jet(y_index(s, i), 1))
                .sub(Expr::symbol(SymbolId::jet(y_index(s + 1, i), 0)));
            lagrangian = lagrangian.add(lam.mul(link));
        }
    }
    Ok(SystemSpec::new(coords, 1, lagrangian))
}

// ---------------------------------------------------------------------------
// Trajectory CSV

/// Write the trajectory in the interchange format:
/// `tau,t,<params...>,<coords...>,<momenta...>,Z,<constraint residuals...>`
/// with floats at 17 significant digits.
pub fn write_csv(
    traj: &Trajectory,
    set: &GeneratorSet,
    table: &SymbolTable,
    out: &mut impl Write,
) -> std::io::Result<()> {
    let fmt = |v: f64| format!("{v:.16e}");
    let name = |s: &SymbolId| Expr::symbol(s.clone()).render(Some(table));

    let params: Vec<(String, Vec<f64>)> = set
        .promoted()
        .iter()
        .map(|(param, jet)| {
            let values = traj.column(jet).unwrap_or_else(|| vec![0.0; traj.len()]);
            (name(param), values)
        })
        .collect();
    let constraints: Vec<(String, CompiledExpr)> = {
        let mut slots: BTreeMap<SymbolId, usize> = BTreeMap::new();
        for (i, s) in traj.phase_symbols.iter().enumerate() {
            slots.insert(s.clone(), i);
        }
        slots.insert(SymbolId::Time, traj.phase_symbols.len());
        set.constraints()
            .map(|g| {
                (
                    format!("res_{}", g.label),
                    CompiledExpr::compile(&g.full_expr(), &slots).expect("layout covers symbols"),
                )
            })
            .collect()
    };

    let mut header = vec!["tau".to_string(), "t".to_string()];
    header.extend(params.iter().map(|(n, _)| n.clone()));
    header.extend(traj.phase_symbols.iter().map(name));
    header.push("Z".to_string());
    header.extend(constraints.iter().map(|(n, _)| n.clone()));
    writeln!(out, "{}", header.join(","))?;

    let mut buf = vec![0.0; traj.phase_symbols.len() + 1];
    for j in 0..traj.len() {
        let mut row = vec![fmt(traj.taus[j]), fmt(traj.t[j])];
        for (_, values) in &params {
            row.push(fmt(values[j]));
        }
        for v in &traj.samples[j] {
            row.push(fmt(*v));
        }
        row.push(fmt(traj.z[j]));
        buf[..traj.phase_symbols.len()].copy_from_slice(&traj.samples[j]);
        buf[traj.phase_symbols.len()] = traj.t[j];
        for (_, c) in &constraints {
            row.push(fmt(c.eval(&buf)));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
