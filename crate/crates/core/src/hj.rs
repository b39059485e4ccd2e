//! Hamilton-Jacobi generator set, Poisson brackets, integrability closure
//! and total differential equations of motion.
//!
//! Each generator is a function H' = p_c + H_c whose vanishing is one
//! Hamilton-Jacobi equation; it drives evolution in its own parameter.
//! The time generator's momentum is implicit (time is not a phase pair),
//! so its bracket contributions carry an explicit d/dt term.
//!
//! The closure loop computes all pairwise brackets, reduces them modulo
//! the solved constraints, and either finishes first-class, flags an
//! inconsistency (a constant residual against the Hamiltonian), or flags
//! a non-involutive (second-class) pair.

use crate::expr::{canonical_expr, normalize, Expr, NormalizeError, SymbolId};
use crate::legendre::LegendreAnalysis;
use crate::model::{PhaseLayout, SystemSpec};
use std::collections::BTreeMap;
use std::fmt;

/// Identity of a generator within a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GenLabel {
    /// The time generator p_t + H0.
    Hamiltonian,
    /// Parametric constraint generator at (level, coordinate).
    Constraint { level: usize, coord: usize },
    /// Non-parametric condition (no conjugate parameter), numbered.
    Condition(usize),
}

impl fmt::Display for GenLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenLabel::Hamiltonian => write!(f, "H'0"),
            GenLabel::Constraint { level, coord } => write!(f, "H'({level}){coord}"),
            GenLabel::Condition(n) => write!(f, "C{n}"),
        }
    }
}

/// Where a generator came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenOrigin {
    Hamiltonian,
    Primary,
    Chain { from: (GenLabel, GenLabel) },
}

/// One Hamilton-Jacobi generator.
#[derive(Debug, Clone)]
pub struct Generator {
    pub label: GenLabel,
    /// Evolution parameter: time, or a promoted-coordinate parameter.
    /// `None` for non-parametric conditions.
    pub parameter: Option<SymbolId>,
    /// The momentum solved by this generator (`H' = p + h`), when any.
    /// The time generator's momentum is implicit and not representable.
    pub solved_momentum: Option<SymbolId>,
    /// The `H` part: full expression minus the solved momentum.
    pub h_part: Expr,
    pub origin: GenOrigin,
}

impl Generator {
    /// The full H' expression. For the time generator this is just H0;
    /// the implicit time momentum enters brackets via the explicit d/dt
    /// correction.
    pub fn full_expr(&self) -> Expr {
        match &self.solved_momentum {
            Some(p) => Expr::symbol(p.clone()).add(self.h_part.clone()),
            None => self.h_part.clone(),
        }
    }

    pub fn is_hamiltonian(&self) -> bool {
        matches!(self.label, GenLabel::Hamiltonian)
    }
}

/// The generator set plus the solved-symbol map that defines weak equality.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    layout: PhaseLayout,
    generators: Vec<Generator>,
    /// Triangular solved map: momenta p_c -> -H_c from parametric
    /// generators, coordinates from cleanly solvable non-parametric
    /// conditions. Values are free of every solved key.
    solved: BTreeMap<SymbolId, Expr>,
    /// (parameter symbol, promoted jet) pairs, in promotion order.
    promoted: Vec<(SymbolId, SymbolId)>,
    /// Degenerate coordinate indices from the rank partition (used by the
    /// chain tie-break).
    degenerate_coords: Vec<usize>,
    next_condition: usize,
}

/// Closure outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureStatus {
    ClosedFirstClass,
    Inconsistent,
    NonInvolutive,
}

impl fmt::Display for ClosureStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClosureStatus::ClosedFirstClass => "closed_first_class",
            ClosureStatus::Inconsistent => "inconsistent",
            ClosureStatus::NonInvolutive => "non_involutive",
        };
        write!(f, "{s}")
    }
}

/// What the closure loop did with one nonzero bracket residual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClosureAction {
    AddedParametric(GenLabel),
    AddedCondition(GenLabel),
    ReducesToKnownCondition,
    Inconsistent,
    NonInvolutive,
    Unresolvable,
}

impl fmt::Display for ClosureAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClosureAction::AddedParametric(l) => write!(f, "added parametric generator {l}"),
            ClosureAction::AddedCondition(l) => write!(f, "added condition {l}"),
            ClosureAction::ReducesToKnownCondition => write!(f, "reduces to a known condition"),
            ClosureAction::Inconsistent => write!(f, "inconsistent"),
            ClosureAction::NonInvolutive => write!(f, "non-involutive pair"),
            ClosureAction::Unresolvable => write!(f, "unresolvable residual"),
        }
    }
}

/// One nonzero-residual event in the closure loop.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub iteration: usize,
    pub bracket: (GenLabel, GenLabel),
    pub residual: Expr,
    pub action: ClosureAction,
}

/// Result of the integrability closure.
#[derive(Debug, Clone)]
pub struct ClosureReport {
    pub status: ClosureStatus,
    pub iterations: usize,
    /// Chain additions in discovery order (label, expression, source pair).
    pub additions: Vec<(GenLabel, Expr, (GenLabel, GenLabel))>,
    pub trace: Vec<TraceEntry>,
    /// Final pairwise residuals on the constraint surface.
    pub final_brackets: Vec<(GenLabel, GenLabel, Expr)>,
}

#[derive(Debug, thiserror::Error)]
pub enum HjError {
    #[error("expression error: {0}")]
    Normalize(#[from] NormalizeError),
    #[error("closure did not settle within {max_iter} iterations")]
    MaxIterations {
        max_iter: usize,
        partial: Box<(GeneratorSet, ClosureReport)>,
    },
    #[error("a primary constraint is not solvable for a unit-coefficient momentum")]
    MalformedPrimary,
}

#[derive(Debug, thiserror::Error)]
pub enum EomError {
    #[error("expression error: {0}")]
    Normalize(#[from] NormalizeError),
    #[error("system closure status is {0}; pass force to emit equations anyway")]
    NotClosed(ClosureStatus),
}

/// Equations of motion as coefficient tables: one column per parametric
/// generator, one row per phase symbol.
#[derive(Debug, Clone)]
pub struct TotalDifferentialSystem {
    /// (generator label, parameter symbol) in generator order.
    pub parameters: Vec<(GenLabel, SymbolId)>,
    /// (phase symbol, coefficients per parameter); coordinates first, then
    /// momenta, each level-major.
    pub rows: Vec<(SymbolId, Vec<Expr>)>,
}

impl TotalDifferentialSystem {
    pub fn coefficients_for(&self, sym: &SymbolId) -> Option<&[Expr]> {
        self.rows
            .iter()
            .find(|(s, _)| s == sym)
            .map(|(_, c)| c.as_slice())
    }
}

impl GeneratorSet {
    pub fn layout(&self) -> &PhaseLayout {
        &self.layout
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn get(&self, label: GenLabel) -> Option<&Generator> {
        self.generators.iter().find(|g| g.label == label)
    }

    /// Constraint generators: everything except the time generator.
    pub fn constraints(&self) -> impl Iterator<Item = &Generator> {
        self.generators.iter().filter(|g| !g.is_hamiltonian())
    }

    pub fn solved_map(&self) -> &BTreeMap<SymbolId, Expr> {
        &self.solved
    }

    /// (parameter, promoted jet) pairs in promotion order.
    pub fn promoted(&self) -> &[(SymbolId, SymbolId)] {
        &self.promoted
    }

    /// Weak equality reduction: substitute the solved map, then normalize.
    pub fn reduce(&self, e: &Expr) -> Result<Expr, NormalizeError> {
        canonical_expr(&e.substitute_unchecked(&self.solved))
    }

    fn insert_solved(&mut self, key: SymbolId, value: Expr) {
        let mut single = BTreeMap::new();
        single.insert(key.clone(), value.clone());
        for v in self.solved.values_mut() {
            *v = v.substitute_unchecked(&single);
        }
        self.solved.insert(key, value);
    }

    fn promote(&mut self, jet: SymbolId) -> SymbolId {
        let (coord, level) = match &jet {
            SymbolId::Jet { coord, level } => (*coord, *level),
            _ => unreachable!("only jets are promoted"),
        };
        let param = SymbolId::Param { level, coord };
        if !self.promoted.iter().any(|(p, _)| *p == param) {
            self.promoted.push((param.clone(), jet));
        }
        param
    }
}

/// Build the initial generator set: the time generator p_t + H0 plus one
/// parametric generator per primary constraint, its parameter being the
/// jet conjugate to the constrained momentum.
pub fn build_generators(
    spec: &SystemSpec,
    analysis: &LegendreAnalysis,
) -> Result<GeneratorSet, HjError> {
    let layout = crate::model::phase_layout(spec);
    let k = spec.k();
    let mut set = GeneratorSet {
        layout,
        generators: Vec::new(),
        solved: BTreeMap::new(),
        promoted: Vec::new(),
        degenerate_coords: analysis.partition.degenerate.clone(),
        next_condition: 1,
    };
    set.generators.push(Generator {
        label: GenLabel::Hamiltonian,
        parameter: Some(SymbolId::Time),
        solved_momentum: None,
        h_part: analysis.hamiltonian.clone(),
        origin: GenOrigin::Hamiltonian,
    });
    for (mu, constraint) in &analysis.primary_constraints {
        let momentum = SymbolId::momentum(k - 1, *mu);
        // constraint = p_(k-1)mu + H; split off the momentum
        let h_part = canonical_expr(&constraint.clone().sub(Expr::symbol(momentum.clone())))?;
        let coeff = constraint.differentiate(&momentum);
        if !normalize(&coeff.sub(Expr::one()))?.is_zero() || h_part.contains(&momentum) {
            return Err(HjError::MalformedPrimary);
        }
        let param = set.promote(SymbolId::jet(*mu, k - 1));
        set.insert_solved(momentum.clone(), h_part.clone().neg());
        set.generators.push(Generator {
            label: GenLabel::Constraint {
                level: k - 1,
                coord: *mu,
            },
            parameter: Some(param),
            solved_momentum: Some(momentum),
            h_part,
            origin: GenOrigin::Primary,
        });
    }
    Ok(set)
}

/// Poisson bracket over all conjugate pairs of the layout:
/// {f, g} = sum_i (df/dq_i dg/dp_i - df/dp_i dg/dq_i), in canonical form.
pub fn poisson_bracket(f: &Expr, g: &Expr, layout: &PhaseLayout) -> Result<Expr, NormalizeError> {
    let f_syms = f.free_symbols();
    let g_syms = g.free_symbols();
    let mut terms = Vec::new();
    for (q, p) in layout.pairs() {
        if (f_syms.contains(q) && g_syms.contains(p)) || (f_syms.contains(p) && g_syms.contains(q))
        {
            let t1 = f.differentiate(q).mul(g.differentiate(p));
            let t2 = f.differentiate(p).mul(g.differentiate(q));
            terms.push(t1.sub(t2));
        }
    }
    canonical_expr(&Expr::sum(terms))
}

/// Bracket residual of an ordered generator pair, including the implicit
/// time-momentum contribution of the Hamiltonian generator, reduced
/// modulo the constraint surface.
fn pair_residual(set: &GeneratorSet, a: &Generator, b: &Generator) -> Result<Expr, NormalizeError> {
    let fa = a.full_expr();
    let fb = b.full_expr();
    let mut res = poisson_bracket(&fa, &fb, &set.layout)?;
    if b.is_hamiltonian() {
        res = res.add(fa.differentiate(&SymbolId::Time));
    }
    if a.is_hamiltonian() {
        res = res.sub(fb.differentiate(&SymbolId::Time));
    }
    set.reduce(&res)
}

/// A residual scaled so a chosen symbol has unit coefficient.
fn solve_for_symbol(residual: &Expr, sym: &SymbolId) -> Result<Option<Expr>, NormalizeError> {
    let coeff = residual.differentiate(sym);
    let coeff_nf = normalize(&coeff)?;
    let Some(c) = coeff_nf.as_constant() else {
        return Ok(None);
    };
    if num_traits::Zero::is_zero(&c) {
        return Ok(None);
    }
    // rest = (residual - c*sym)/c, must not mention sym
    let rest = residual
        .clone()
        .sub(Expr::Rational(c.clone()).mul(Expr::symbol(sym.clone())))
        .div(Expr::Rational(c));
    let rest = canonical_expr(&rest)?;
    if rest.contains(sym) {
        return Ok(None);
    }
    Ok(Some(rest))
}

/// Iteratively close the generator set under the integrability conditions.
pub fn integrability_closure(
    mut set: GeneratorSet,
    max_iter: usize,
) -> Result<(GeneratorSet, ClosureReport), HjError> {
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut additions = Vec::new();
    let mut iterations = 0;

    let finish = |set: GeneratorSet,
                  status: ClosureStatus,
                  iterations: usize,
                  additions: Vec<(GenLabel, Expr, (GenLabel, GenLabel))>,
                  trace: Vec<TraceEntry>|
     -> Result<(GeneratorSet, ClosureReport), HjError> {
        let final_brackets = final_bracket_table(&set)?;
        Ok((
            set,
            ClosureReport {
                status,
                iterations,
                additions,
                trace,
                final_brackets,
            },
        ))
    };

    while iterations < max_iter {
        iterations += 1;
        let mut dirty = false;

        'pairs: for i in 0..set.generators.len() {
            for j in (i + 1)..set.generators.len() {
                let a = &set.generators[i];
                let b = &set.generators[j];
                let pair = (a.label, b.label);
                let residual = pair_residual(&set, a, b)?;
                if residual.is_zero() {
                    continue;
                }

                // nonzero constant: contradiction with the dynamics, or a
                // second-class pair of constraints
                if let Some(c) = residual.as_rational() {
                    debug_assert!(!num_traits::Zero::is_zero(c));
                    let involves_time = a.is_hamiltonian() || b.is_hamiltonian();
                    let (status, action) = if involves_time {
                        (ClosureStatus::Inconsistent, ClosureAction::Inconsistent)
                    } else {
                        (ClosureStatus::NonInvolutive, ClosureAction::NonInvolutive)
                    };
                    trace.push(TraceEntry {
                        iteration: iterations,
                        bracket: pair,
                        residual,
                        action,
                    });
                    return finish(set, status, iterations, additions, trace);
                }

                // solvable for a fresh momentum: a new parametric generator
                if let Some((momentum, h_part)) = pick_fresh_momentum(&set, &residual)? {
                    let (level, coord) = match &momentum {
                        SymbolId::Momentum { level, coord } => (*level, *coord),
                        _ => unreachable!(),
                    };
                    let label = GenLabel::Constraint { level, coord };
                    trace.push(TraceEntry {
                        iteration: iterations,
                        bracket: pair,
                        residual: residual.clone(),
                        action: ClosureAction::AddedParametric(label),
                    });
                    let param = set.promote(SymbolId::jet(coord, level));
                    set.insert_solved(momentum.clone(), h_part.clone().neg());
                    let expr_full = Expr::symbol(momentum.clone()).add(h_part.clone());
                    additions.push((label, canonical_expr(&expr_full)?, pair));
                    set.generators.push(Generator {
                        label,
                        parameter: Some(param),
                        solved_momentum: Some(momentum),
                        h_part,
                        origin: GenOrigin::Chain { from: pair },
                    });
                    dirty = true;
                    break 'pairs;
                }

                // momentum-free: a non-parametric condition
                if residual
                    .free_symbols()
                    .iter()
                    .all(|s| !matches!(s, SymbolId::Momentum { .. }))
                {
                    let monic = normalize(&residual)?.sign_canonical().to_expr();
                    let known = set
                        .constraints()
                        .any(|g| g.parameter.is_none() && g.h_part == monic);
                    if known {
                        trace.push(TraceEntry {
                            iteration: iterations,
                            bracket: pair,
                            residual,
                            action: ClosureAction::ReducesToKnownCondition,
                        });
                        continue;
                    }
                    let label = GenLabel::Condition(set.next_condition);
                    set.next_condition += 1;
                    trace.push(TraceEntry {
                        iteration: iterations,
                        bracket: pair,
                        residual: residual.clone(),
                        action: ClosureAction::AddedCondition(label),
                    });
                    // when the condition is linear in some jet with constant
                    // coefficient, fold it into the weak-equality map so the
                    // closed => zero-residual invariant stays literal
                    if let Some((jet, rest)) = pick_solvable_jet(&set, &monic)? {
                        set.insert_solved(jet, rest.neg());
                    }
                    additions.push((label, monic.clone(), pair));
                    set.generators.push(Generator {
                        label,
                        parameter: None,
                        solved_momentum: None,
                        h_part: monic,
                        origin: GenOrigin::Chain { from: pair },
                    });
                    dirty = true;
                    break 'pairs;
                }

                // contains momenta but none with a constant coefficient:
                // outside the integrable framework
                trace.push(TraceEntry {
                    iteration: iterations,
                    bracket: pair,
                    residual,
                    action: ClosureAction::Unresolvable,
                });
                return finish(
                    set,
                    ClosureStatus::NonInvolutive,
                    iterations,
                    additions,
                    trace,
                );
            }
        }

        if !dirty {
            return finish(
                set,
                ClosureStatus::ClosedFirstClass,
                iterations,
                additions,
                trace,
            );
        }
    }

    let final_brackets = final_bracket_table(&set)?;
    let report = ClosureReport {
        status: ClosureStatus::NonInvolutive,
        iterations,
        additions,
        trace,
        final_brackets,
    };
    Err(HjError::MaxIterations {
        max_iter,
        partial: Box::new((set, report)),
    })
}

/// Choose the momentum a residual will be solved for: fresh (unsolved),
/// constant nonzero coefficient; degenerate-coordinate momenta first, then
/// the highest (level, coordinate).
fn pick_fresh_momentum(
    set: &GeneratorSet,
    residual: &Expr,
) -> Result<Option<(SymbolId, Expr)>, NormalizeError> {
    let mut candidates: Vec<(bool, usize, usize, SymbolId)> = Vec::new();
    for sym in residual.free_symbols() {
        if let SymbolId::Momentum { level, coord } = &sym {
            if set.solved.contains_key(&sym) {
                continue;
            }
            let degenerate = set.degenerate_coords.contains(coord);
            candidates.push((degenerate, *level, *coord, sym.clone()));
        }
    }
    // degenerate-coordinate momenta first, then highest (level, coord)
    candidates.sort_by(|a, b| (b.0, b.1, b.2).cmp(&(a.0, a.1, a.2)));
    for (_, _, _, sym) in candidates {
        if let Some(rest) = solve_for_symbol(residual, &sym)? {
            return Ok(Some((sym, rest)));
        }
    }
    Ok(None)
}

/// Same policy for jets inside momentum-free conditions.
fn pick_solvable_jet(
    set: &GeneratorSet,
    condition: &Expr,
) -> Result<Option<(SymbolId, Expr)>, NormalizeError> {
    let mut candidates: Vec<(bool, usize, usize, SymbolId)> = Vec::new();
    for sym in condition.free_symbols() {
        if let SymbolId::Jet { coord, level } = &sym {
            if set.solved.contains_key(&sym) {
                continue;
            }
            let degenerate = set.degenerate_coords.contains(coord);
            candidates.push((degenerate, *level, *coord, sym.clone()));
        }
    }
    candidates.sort_by(|a, b| (b.0, b.1, b.2).cmp(&(a.0, a.1, a.2)));
    for (_, _, _, sym) in candidates {
        if let Some(rest) = solve_for_symbol(condition, &sym)? {
            return Ok(Some((sym, rest)));
        }
    }
    Ok(None)
}

fn final_bracket_table(
    set: &GeneratorSet,
) -> Result<Vec<(GenLabel, GenLabel, Expr)>, NormalizeError> {
    let mut out = Vec::new();
    for i in 0..set.generators.len() {
        for j in (i + 1)..set.generators.len() {
            let a = &set.generators[i];
            let b = &set.generators[j];
            let r = pair_residual(set, a, b)?;
            out.push((a.label, b.label, r));
        }
    }
    Ok(out)
}

/// Total differential equations of motion: for every phase symbol x and
/// every parametric generator H'_B,
///   dq = +dH'_B/dp dt_B,   dp = -dH'_B/dq dt_B.
/// Momentum rows are emitted for all momenta, including those of promoted
/// coordinates.
pub fn eom_forms(
    set: &GeneratorSet,
    status: ClosureStatus,
    force: bool,
) -> Result<TotalDifferentialSystem, EomError> {
    if status != ClosureStatus::ClosedFirstClass && !force {
        return Err(EomError::NotClosed(status));
    }
    let parametric: Vec<&Generator> = set
        .generators
        .iter()
        .filter(|g| g.parameter.is_some())
        .collect();
    let parameters: Vec<(GenLabel, SymbolId)> = parametric
        .iter()
        .map(|g| (g.label, g.parameter.clone().unwrap()))
        .collect();

    let mut rows = Vec::new();
    for q in set.layout.coordinates() {
        let p = set.layout.conjugate_momentum(q).expect("paired layout");
        let coeffs = parametric
            .iter()
            .map(|g| canonical_expr(&g.full_expr().differentiate(p)))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((q.clone(), coeffs));
    }
    for p in set.layout.momenta() {
        let q = set.layout.conjugate_coordinate(p).expect("paired layout");
        let coeffs = parametric
            .iter()
            .map(|g| canonical_expr(&g.full_expr().differentiate(q).neg()))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((p.clone(), coeffs));
    }
    Ok(TotalDifferentialSystem { parameters, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legendre::{self, LegendreOptions};
    use crate::model::{phase_layout, SystemSpec};

    fn spec(text: &str) -> SystemSpec {
        SystemSpec::parse_hjl(text).unwrap()
    }

    fn pipeline(text: &str) -> (SystemSpec, GeneratorSet) {
        let sys = spec(text);
        let analysis = legendre::analyze(&sys, LegendreOptions::default()).unwrap();
        let set = build_generators(&sys, &analysis).unwrap();
        (sys, set)
    }

    fn assert_sym_eq(a: &Expr, b: &Expr) {
        assert!(
            normalize(&a.clone().sub(b.clone())).unwrap().is_zero(),
            "expected {a} == {b}"
        );
    }

    const OSC: &str = "system { coordinates: q; order: 1; lagrangian: q'^2/2 - q^2/2; }";
    const S2: &str = "system { coordinates: q1, q2; order: 2; lagrangian: (q1'' - q2')^2/2; }";
    const S3: &str = "system { coordinates: q1, q2; order: 1; lagrangian: q1'*q2 - q2'*q1; }";
    const NONINV: &str = "system { coordinates: q1, q2; order: 1; lagrangian: q1'^2/2 + q1*q2; }";

    #[test]
    fn oscillator_single_generator() {
        let (_, set) = pipeline(OSC);
        assert_eq!(set.generators().len(), 1);
        assert!(set.generators()[0].is_hamiltonian());
    }

    #[test]
    fn s2_adds_primary_with_parameter() {
        let (_, set) = pipeline(S2);
        assert_eq!(set.generators().len(), 2);
        let g = &set.generators()[1];
        assert_eq!(g.label, GenLabel::Constraint { level: 1, coord: 2 });
        assert_eq!(g.parameter, Some(SymbolId::Param { level: 1, coord: 2 }));
        assert_sym_eq(&g.full_expr(), &Expr::symbol(SymbolId::momentum(1, 2)));
    }

    #[test]
    fn s3_adds_two_parametric_generators() {
        let (_, set) = pipeline(S3);
        assert_eq!(set.generators().len(), 3);
        assert!(set.generators()[1..].iter().all(|g| g.parameter.is_some()));
    }

    #[test]
    fn bracket_canonical_pair() {
        let sys = spec(OSC);
        let layout = phase_layout(&sys);
        let q = Expr::symbol(SymbolId::jet(1, 0));
        let p = Expr::symbol(SymbolId::momentum(0, 1));
        let b = poisson_bracket(&q, &p, &layout).unwrap();
        assert!(b.is_one());
    }

    #[test]
    fn bracket_of_hamiltonian_with_itself_vanishes() {
        let (sys, set) = pipeline(OSC);
        let h = &set.generators()[0].h_part;
        let b = poisson_bracket(h, h, &phase_layout(&sys)).unwrap();
        assert!(b.is_zero());
    }

    #[test]
    fn bracket_s2_primary_with_hamiltonian() {
        // {p1_q2, H0} = -(p0_q2 + p1_q1)
        let (sys, set) = pipeline(S2);
        let h0 = &set.generators()[0].h_part;
        let primary = Expr::symbol(SymbolId::momentum(1, 2));
        let b = poisson_bracket(&primary, h0, &phase_layout(&sys)).unwrap();
        let expected = Expr::symbol(SymbolId::momentum(0, 2))
            .add(Expr::symbol(SymbolId::momentum(1, 1)))
            .neg();
        assert_sym_eq(&b, &expected);
    }

    #[test]
    fn oscillator_closes_immediately() {
        let (_, set) = pipeline(OSC);
        let (set, report) = integrability_closure(set, 10).unwrap();
        assert_eq!(report.status, ClosureStatus::ClosedFirstClass);
        assert!(report.additions.is_empty());
        assert_eq!(set.generators().len(), 1);
    }

    #[test]
    fn s2_chain_matches_hand_computation() {
        let (_, set) = pipeline(S2);
        let (set, report) = integrability_closure(set, 20).unwrap();
        assert_eq!(report.status, ClosureStatus::ClosedFirstClass);
        assert_eq!(report.iterations, 3);
        assert_eq!(report.additions.len(), 2);

        // first addition: p0_q2 + p1_q1 from {H'0, H'(1)2}
        let (label1, expr1, from1) = &report.additions[0];
        assert_eq!(*label1, GenLabel::Constraint { level: 0, coord: 2 });
        let expected1 =
            Expr::symbol(SymbolId::momentum(0, 2)).add(Expr::symbol(SymbolId::momentum(1, 1)));
        assert_sym_eq(expr1, &expected1);
        assert_eq!(
            *from1,
            (
                GenLabel::Hamiltonian,
                GenLabel::Constraint { level: 1, coord: 2 }
            )
        );

        // second addition: p0_q1
        let (label2, expr2, _) = &report.additions[1];
        assert_eq!(*label2, GenLabel::Constraint { level: 0, coord: 1 });
        assert_sym_eq(expr2, &Expr::symbol(SymbolId::momentum(0, 1)));

        // solved map sends p1_q2 -> 0, p0_q2 -> -p1_q1, p0_q1 -> 0
        let solved = set.solved_map();
        assert!(solved[&SymbolId::momentum(1, 2)].is_zero());
        assert_sym_eq(
            &solved[&SymbolId::momentum(0, 2)],
            &Expr::symbol(SymbolId::momentum(1, 1)).neg(),
        );
        assert!(solved[&SymbolId::momentum(0, 1)].is_zero());

        // all final residuals vanish on the surface
        assert!(report.final_brackets.iter().all(|(_, _, r)| r.is_zero()));

        // parameters: q2' (primary), q2, q1
        let params: Vec<SymbolId> = set.promoted().iter().map(|(p, _)| p.clone()).collect();
        assert_eq!(
            params,
            vec![
                SymbolId::Param { level: 1, coord: 2 },
                SymbolId::Param { level: 0, coord: 2 },
                SymbolId::Param { level: 0, coord: 1 },
            ]
        );
    }

    #[test]
    fn noninvolutive_detected_with_unit_residual() {
        let (_, set) = pipeline(NONINV);
        let (_, report) = integrability_closure(set, 20).unwrap();
        assert_eq!(report.status, ClosureStatus::NonInvolutive);
        let last = report.trace.last().unwrap();
        assert_eq!(last.action, ClosureAction::NonInvolutive);
        let c = last.residual.as_rational().unwrap();
        assert!(num_traits::Signed::abs(c) == num_rational::BigRational::from_integer(1.into()));
    }

    #[test]
    fn second_class_pair_flagged() {
        // two primary constraints with a constant mutual bracket
        let (_, set) = pipeline(S3);
        let (_, report) = integrability_closure(set, 20).unwrap();
        assert_eq!(report.status, ClosureStatus::NonInvolutive);
    }

    #[test]
    fn contradictory_dynamics_is_inconsistent() {
        // L = q (no velocities): constraint p, {p, H0} = 1
        let (_, set) = pipeline("system { coordinates: q; order: 1; lagrangian: q; }");
        let (_, report) = integrability_closure(set, 20).unwrap();
        assert_eq!(report.status, ClosureStatus::Inconsistent);
    }

    #[test]
    fn closure_termination_bound() {
        for text in [OSC, S2, S3, NONINV] {
            let (sys, set) = pipeline(text);
            let bound = 2 * sys.n() * sys.k() + 1;
            let (_, report) = integrability_closure(set, bound).unwrap();
            assert!(report.iterations <= bound);
        }
    }

    #[test]
    fn eom_oscillator() {
        let (_, set) = pipeline(OSC);
        let (set, report) = integrability_closure(set, 10).unwrap();
        let system = eom_forms(&set, report.status, false).unwrap();
        assert_eq!(system.parameters.len(), 1);
        let dq = &system.coefficients_for(&SymbolId::jet(1, 0)).unwrap()[0];
        let dp = &system.coefficients_for(&SymbolId::momentum(0, 1)).unwrap()[0];
        assert_sym_eq(dq, &Expr::symbol(SymbolId::momentum(0, 1)));
        assert_sym_eq(dp, &Expr::symbol(SymbolId::jet(1, 0)).neg());
    }

    #[test]
    fn eom_second_order_jet() {
        // dq = q' dt, dq' = p1 dt, dp1 = -p0 dt, dp0 = 0
        let (_, set) = pipeline("system { coordinates: q; order: 2; lagrangian: q''^2/2; }");
        let (set, report) = integrability_closure(set, 10).unwrap();
        let system = eom_forms(&set, report.status, false).unwrap();
        let get = |s: SymbolId| system.coefficients_for(&s).unwrap()[0].clone();
        assert_sym_eq(&get(SymbolId::jet(1, 0)), &Expr::symbol(SymbolId::jet(1, 1)));
        assert_sym_eq(
            &get(SymbolId::jet(1, 1)),
            &Expr::symbol(SymbolId::momentum(1, 1)),
        );
        assert_sym_eq(
            &get(SymbolId::momentum(1, 1)),
            &Expr::symbol(SymbolId::momentum(0, 1)).neg(),
        );
        assert!(get(SymbolId::momentum(0, 1)).is_zero());
    }

    #[test]
    fn eom_s2_gauge_column() {
        // the chain generator p0_q2 + p1_q1 contributes dq1' = 1 * dt_(0)2
        let (_, set) = pipeline(S2);
        let (set, report) = integrability_closure(set, 20).unwrap();
        let system = eom_forms(&set, report.status, false).unwrap();
        let col = system
            .parameters
            .iter()
            .position(|(l, _)| *l == GenLabel::Constraint { level: 0, coord: 2 })
            .unwrap();
        let dq1p = &system.coefficients_for(&SymbolId::jet(1, 1)).unwrap()[col];
        assert!(dq1p.is_one());
    }

    #[test]
    fn eom_refuses_non_involutive_without_force() {
        let (_, set) = pipeline(NONINV);
        let (set, report) = integrability_closure(set, 20).unwrap();
        assert!(matches!(
            eom_forms(&set, report.status, false),
            Err(EomError::NotClosed(_))
        ));
        assert!(eom_forms(&set, report.status, true).is_ok());
    }

    #[test]
    fn closed_set_has_vanishing_total_differentials() {
        // dH' expanded against every parameter direction reduces to zero
        for text in [
            OSC,
            S2,
            "system { coordinates: q; order: 2; lagrangian: q''^2/2; }",
        ] {
            let (_, set) = pipeline(text);
            let (set, report) = integrability_closure(set, 20).unwrap();
            assert_eq!(report.status, ClosureStatus::ClosedFirstClass);
            for (a, b, r) in &report.final_brackets {
                assert!(r.is_zero(), "residual of ({a}, {b}) should vanish, got {r}");
            }
            drop(set);
        }
    }

    #[test]
    fn generator_count_for_first_order_inputs() {
        // k = 1: one generator plus one per degenerate direction
        for (text, r) in [(OSC, 0), (S3, 2), (NONINV, 1)] {
            let sys = spec(text);
            let analysis = legendre::analyze(&sys, LegendreOptions::default()).unwrap();
            let set = build_generators(&sys, &analysis).unwrap();
            assert_eq!(set.generators().len(), 1 + r);
        }
    }
}
