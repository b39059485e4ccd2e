//! Action differential, reduced phase space, symbolic path-integral
//! exponent, and numeric propagators for the quadratic first-order
//! subclass.
//!
//! Units are hbar = m = 1 throughout.

use crate::expr::{normalize, Expr, NormalizeError, SymbolId, SymbolTable};
use crate::hj::{ClosureStatus, GenLabel, GeneratorSet};
use crate::model::SystemSpec;
use crate::numeric::Trajectory;
use std::f64::consts::PI;

/// Phase-space pairs that survive after promotion: the integration domain
/// of the path integral.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedPhaseSpace {
    pub pairs: Vec<(SymbolId, SymbolId)>,
}

impl ReducedPhaseSpace {
    pub fn momenta(&self) -> impl Iterator<Item = &SymbolId> {
        self.pairs.iter().map(|(_, p)| p)
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// dZ = sum_beta coeff_beta dt_beta with
/// coeff_beta = -H_beta + sum_(reduced p) p dH'_beta/dp,
/// reduced modulo the constraint surface.
#[derive(Debug, Clone)]
pub struct ActionForm {
    /// (generator label, parameter, coefficient) per parametric generator.
    pub terms: Vec<(GenLabel, SymbolId, Expr)>,
}

impl ActionForm {
    pub fn coefficient_for(&self, param: &SymbolId) -> Option<&Expr> {
        self.terms
            .iter()
            .find(|(_, p, _)| p == param)
            .map(|(_, _, c)| c)
    }
}

/// Symbolic path-integral data: exponent terms plus the reduced measure.
#[derive(Debug, Clone)]
pub struct ExponentSummary {
    pub terms: Vec<(SymbolId, Expr)>,
    pub measure: Vec<(SymbolId, SymbolId)>,
}

/// Modulus and phase of a time-sliced propagator.
#[derive(Debug, Clone, Copy)]
pub struct PropagatorResult {
    pub modulus: f64,
    /// Radians in (-pi, pi].
    pub phase: f64,
    pub slices: usize,
    /// |modulus(N) - modulus(N/2)|, a discretization-error estimate.
    pub convergence_estimate: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ActionError {
    #[error("expression error: {0}")]
    Normalize(#[from] NormalizeError),
    #[error("system closure status is {0}; the action form needs a closed system")]
    NotClosed(ClosureStatus),
    #[error("unsupported for the propagator: {0}")]
    Unsupported(String),
    #[error("caustic: the sliced propagator determinant degenerates at this interval")]
    Caustic,
    #[error("trajectory does not carry `{0}` required by the action form")]
    SymbolMismatch(String),
}

/// Below this value of 1/(2 pi modulus^2) the slice determinant counts as
/// degenerate and the propagator reports a caustic.
pub const CAUSTIC_THRESHOLD: f64 = 1e-3;

/// Remove promoted pairs from the layout.
pub fn reduced_space(set: &GeneratorSet) -> ReducedPhaseSpace {
    let promoted: Vec<&SymbolId> = set.promoted().iter().map(|(_, jet)| jet).collect();
    let pairs = set
        .layout()
        .pairs()
        .iter()
        .filter(|(q, _)| !promoted.contains(&q))
        .cloned()
        .collect();
    ReducedPhaseSpace { pairs }
}

/// The action differential coefficients, one per parametric generator.
pub fn action_differential(
    set: &GeneratorSet,
    status: ClosureStatus,
    reduced: &ReducedPhaseSpace,
) -> Result<ActionForm, ActionError> {
    if status != ClosureStatus::ClosedFirstClass {
        return Err(ActionError::NotClosed(status));
    }
    let mut terms = Vec::new();
    for g in set.generators() {
        let Some(param) = g.parameter.clone() else {
            continue;
        };
        let full = g.full_expr();
        let mut coeff = g.h_part.clone().neg();
        for p in reduced.momenta() {
            coeff = coeff.add(Expr::symbol(p.clone()).mul(full.differentiate(p)));
        }
        let coeff = set.reduce(&coeff)?;
        terms.push((g.label, param, coeff));
    }
    Ok(ActionForm { terms })
}

/// Assemble the symbolic exponent and measure of the path integral.
pub fn path_integral_exponent(form: &ActionForm, reduced: &ReducedPhaseSpace) -> ExponentSummary {
    ExponentSummary {
        terms: form
            .terms
            .iter()
            .map(|(_, p, c)| (p.clone(), c.clone()))
            .collect(),
        measure: reduced.pairs.clone(),
    }
}

impl ExponentSummary {
    pub fn render_text(&self, names: Option<&SymbolTable>) -> String {
        let sym = |s: &SymbolId| Expr::symbol(s.clone()).render(names);
        let integrand = self
            .terms
            .iter()
            .map(|(p, c)| format!("({}) d{}", c.render(names), sym(p)))
            .collect::<Vec<_>>()
            .join(" + ");
        let measure = if self.measure.is_empty() {
            "1".to_string()
        } else {
            self.measure
                .iter()
                .map(|(q, p)| format!("d{} d{}", sym(q), sym(p)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!("integral {measure} exp(i integral[{integrand}])")
    }

    pub fn render_latex(&self, names: Option<&SymbolTable>) -> String {
        let integrand = self
            .terms
            .iter()
            .map(|(p, c)| {
                format!(
                    "\\left[{}\\right] \\mathrm{{d}}{}",
                    crate::expr::to_latex(c, names),
                    crate::expr::to_latex(&Expr::symbol(p.clone()), names)
                )
            })
            .collect::<Vec<_>>()
            .join(" + ");
        let measure = if self.measure.is_empty() {
            "1".to_string()
        } else {
            self.measure
                .iter()
                .map(|(q, p)| {
                    format!(
                        "\\mathrm{{d}}{} \\, \\mathrm{{d}}{}",
                        crate::expr::to_latex(&Expr::symbol(q.clone()), names),
                        crate::expr::to_latex(&Expr::symbol(p.clone()), names)
                    )
                })
                .collect::<Vec<_>>()
                .join(" \\, ")
        };
        format!("\\int {measure} \\; \\exp i\\left\\{{ \\int {integrand} \\right\\}}")
    }
}

/// Constant coefficients of a quadratic Hamiltonian
/// H = A p^2 + B q^2 + C q p + D p + E q + F for an n = 1, k = 1 system.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticHamiltonian {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

/// Extract constant quadratic coefficients from H0, rejecting anything
/// outside the supported class.
pub fn quadratic_coefficients(
    spec: &SystemSpec,
    h0: &Expr,
) -> Result<QuadraticHamiltonian, ActionError> {
    if spec.n() != 1 || spec.k() != 1 {
        return Err(ActionError::Unsupported(
            "propagator needs a single-coordinate first-order system".into(),
        ));
    }
    let q = SymbolId::jet(1, 0);
    let p = SymbolId::momentum(0, 1);
    let mut origin = std::collections::BTreeMap::new();
    origin.insert(q.clone(), Expr::zero());
    origin.insert(p.clone(), Expr::zero());

    let hpp = h0.differentiate(&p).differentiate(&p);
    let hqq = h0.differentiate(&q).differentiate(&q);
    let hqp = h0.differentiate(&q).differentiate(&p);
    let hp0 = h0.differentiate(&p).substitute_unchecked(&origin);
    let hq0 = h0.differentiate(&q).substitute_unchecked(&origin);
    let h00 = h0.substitute_unchecked(&origin);

    let constant_of = |e: &Expr| -> Result<f64, ActionError> {
        let nf = normalize(e)?;
        match nf.as_constant() {
            Some(c) => Ok(crate::expr::rational_to_f64(&c)),
            None => Err(ActionError::Unsupported(
                "Hamiltonian coefficients must be constant".into(),
            )),
        }
    };
    let a = 0.5 * constant_of(&hpp)?;
    let b = 0.5 * constant_of(&hqq)?;
    let c = constant_of(&hqp)?;
    let d = constant_of(&hp0)?;
    let e = constant_of(&hq0)?;
    let f = constant_of(&h00)?;

    // the quadratic model must reproduce H0 exactly
    let qq = Expr::symbol(q);
    let pp = Expr::symbol(p);
    let rebuilt = hpp
        .mul(pp.clone().pow(2))
        .mul(Expr::rational(1, 2))
        .add(hqq.mul(qq.clone().pow(2)).mul(Expr::rational(1, 2)))
        .add(hqp.mul(qq.clone().mul(pp.clone())))
        .add(hp0.mul(pp))
        .add(hq0.mul(qq))
        .add(h00);
    if !normalize(&h0.clone().sub(rebuilt))?.is_zero() {
        return Err(ActionError::Unsupported(
            "Hamiltonian is not quadratic in (q, p)".into(),
        ));
    }
    if a <= 0.0 {
        return Err(ActionError::Unsupported(
            "momentum kinetic coefficient must be positive".into(),
        ));
    }
    Ok(QuadraticHamiltonian { a, b, c, d, e, f })
}

/// Midpoint time-sliced propagator for a quadratic first-order system.
///
/// Momentum integrals are Gaussian and done exactly per slice with
/// measure dp/(2 pi); the remaining configuration Gaussian is evaluated
/// through the pivots of its tridiagonal quadratic form.
pub fn propagator_quadratic(
    h: &QuadraticHamiltonian,
    x0: f64,
    x1: f64,
    t_total: f64,
    slices: usize,
) -> Result<PropagatorResult, ActionError> {
    if slices < 2 {
        return Err(ActionError::Unsupported("need at least 2 slices".into()));
    }
    if t_total <= 0.0 {
        return Err(ActionError::Unsupported("need T > 0".into()));
    }
    let (modulus, phase) = sliced_gaussian(h, x0, x1, t_total, slices)?;
    let coarse = sliced_gaussian(h, x0, x1, t_total, (slices / 2).max(2))
        .map(|(m, _)| m)
        .unwrap_or(f64::NAN);
    Ok(PropagatorResult {
        modulus,
        phase,
        slices,
        convergence_estimate: (modulus - coarse).abs(),
    })
}

/// One full slicing pass; returns (modulus, wrapped phase).
fn sliced_gaussian(
    h: &QuadraticHamiltonian,
    x0: f64,
    x1: f64,
    t_total: f64,
    n: usize,
) -> Result<(f64, f64), ActionError> {
    let eps = t_total / n as f64;
    let m = n - 1;

    // Per slice j (endpoints q_j, q_{j+1}):
    //   u_j = (q_{j+1} - q_j) - eps*(C*qbar_j + D),  qbar = (q_j + q_{j+1})/2
    //   phase += u_j^2/(4 eps A) - eps*(B qbar^2 + E qbar + F)
    // Accumulated as (1/2) q^T M q + J^T q + c over the interior points
    // q_1..q_m, with q_0 = x0 and q_n = x1 fixed.
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m.saturating_sub(1)];
    let mut lin = vec![0.0; m];
    let mut cst = 0.0;

    // w * (a_j q_j + a_j1 q_{j+1} + a_0)^2 for slice index `slice`
    let add_square = |slice: usize,
                          w: f64,
                          a_j: f64,
                          a_j1: f64,
                          a_0: f64,
                          diag: &mut [f64],
                          off: &mut [f64],
                          lin: &mut [f64],
                          cst: &mut f64| {
        let mut vars: Vec<(usize, f64)> = Vec::new();
        let mut constant = a_0;
        if slice == 0 {
            constant += a_j * x0;
        } else {
            vars.push((slice - 1, a_j));
        }
        if slice + 1 == n {
            constant += a_j1 * x1;
        } else {
            vars.push((slice, a_j1));
        }
        for &(i, ci) in &vars {
            diag[i] += 2.0 * w * ci * ci; // (1/2) q M q convention
            lin[i] += 2.0 * w * ci * constant;
        }
        if vars.len() == 2 {
            let lo = vars[0].0.min(vars[1].0);
            off[lo] += 2.0 * w * vars[0].1 * vars[1].1;
        }
        *cst += w * constant * constant;
    };

    for j in 0..n {
        // u_j^2 / (4 eps A)
        let w_u = 1.0 / (4.0 * eps * h.a);
        let cu_j = -1.0 - eps * h.c / 2.0;
        let cu_j1 = 1.0 - eps * h.c / 2.0;
        let cu_0 = -eps * h.d;
        add_square(j, w_u, cu_j, cu_j1, cu_0, &mut diag, &mut off, &mut lin, &mut cst);
        // -eps B qbar^2
        add_square(j, -eps * h.b, 0.5, 0.5, 0.0, &mut diag, &mut off, &mut lin, &mut cst);
        // -eps E qbar - eps F
        if j == 0 {
            cst += -eps * h.e * 0.5 * x0;
        } else {
            lin[j - 1] += -eps * h.e * 0.5;
        }
        if j + 1 == n {
            cst += -eps * h.e * 0.5 * x1;
        } else {
            lin[j] += -eps * h.e * 0.5;
        }
        cst += -eps * h.f;
    }

    // Fresnel integral over the interior points:
    //   int exp(i((1/2) q M q + J q + c)) d^m q
    //     = (2 pi)^{m/2} |det M|^{-1/2}
    //       * exp(i(pi/4 sig(M) + c - (1/2) J M^{-1} J))
    // with the tridiagonal pivots giving determinant and signature.
    let mut log_det = 0.0;
    let mut signature: i64 = 0;
    {
        let mut prev_pivot = 0.0;
        for i in 0..m {
            let mut pivot = diag[i];
            if i > 0 {
                pivot -= off[i - 1] * off[i - 1] / prev_pivot;
            }
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(ActionError::Caustic);
            }
            log_det += pivot.abs().ln();
            signature += if pivot > 0.0 { 1 } else { -1 };
            prev_pivot = pivot;
        }
    }

    // J^T M^{-1} J by a tridiagonal solve
    let jmj = if m > 0 {
        let y = solve_tridiagonal(&diag, &off, &lin).ok_or(ActionError::Caustic)?;
        lin.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
    } else {
        0.0
    };

    // prefactor: each of the n momentum integrals contributes
    // (4 pi eps A)^{-1/2} exp(-i pi/4)
    let log_modulus = -(n as f64) * 0.5 * (4.0 * PI * eps * h.a).ln()
        + (m as f64) * 0.5 * (2.0 * PI).ln()
        - 0.5 * log_det;
    let modulus = log_modulus.exp();
    if !modulus.is_finite() {
        return Err(ActionError::Caustic);
    }
    // caustic check on the effective one-dimensional determinant
    let effective = 1.0 / (2.0 * PI * modulus * modulus);
    if effective.abs() < CAUSTIC_THRESHOLD {
        return Err(ActionError::Caustic);
    }

    let raw_phase = -(n as f64) * PI / 4.0 + (signature as f64) * PI / 4.0 + cst - 0.5 * jmj;
    Ok((modulus, wrap_phase(raw_phase)))
}

fn wrap_phase(phi: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = phi.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    if w <= -PI {
        w += two_pi;
    }
    w
}

fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = diag.len();
    if m == 0 {
        return Some(Vec::new());
    }
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return None;
    }
    if m > 1 {
        c[0] = off[0] / denom;
    }
    d[0] = rhs[0] / denom;
    for i in 1..m {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if denom.abs() < 1e-300 {
            return None;
        }
        if i < m - 1 {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Some(x)
}

/// Accumulate the action along a trajectory by the trapezoidal rule:
/// Z = sum_beta int coeff_beta dt_beta.
pub fn classical_action(traj: &Trajectory, form: &ActionForm) -> Result<f64, ActionError> {
    let n = traj.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (_, param, coeff) in &form.terms {
        let param_values = traj
            .parameter_values(param)
            .ok_or_else(|| ActionError::SymbolMismatch(format!("{param}")))?;
        let mut values = Vec::with_capacity(n);
        for idx in 0..n {
            let point = traj.point(idx);
            let v = coeff
                .evaluate(&point)
                .map_err(|e| ActionError::SymbolMismatch(e.to_string()))?;
            values.push(v);
        }
        for j in 0..n - 1 {
            let dt = param_values[j + 1] - param_values[j];
            total += 0.5 * (values[j] + values[j + 1]) * dt;
        }
    }
    Ok(total)
}
