//! Ostrogradsky-Legendre transform: Hessian in the top derivatives,
//! generic rank and coordinate partition, solved accelerations, primary
//! constraints and the canonical Hamiltonian.
//!
//! Lower-level momenta are independent phase variables here; the usual
//! relation p_(m-1) = dL/dq^(m) - d/dt p_(m) is not imposed as a
//! definition and is instead recovered by the momentum equations of
//! motion. Reports carry a note to that effect for k >= 2.

use crate::expr::{
    canonical_expr, normalize, rational_rank, solve_linear_system, Expr, NormalForm,
    NormalizeError, SymbolId,
};
use crate::model::SystemSpec;
use num_rational::BigRational;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;

/// Symmetric n x n matrix of second partials of L in the level-k jets.
#[derive(Debug, Clone)]
pub struct HessianMatrix {
    n: usize,
    entries: Vec<Expr>, // row-major, canonical form
}

/// Generic-rank partition of the coordinates into regular (solvable) and
/// degenerate directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPartition {
    /// Generic rank of the Hessian (n - r in the usual notation).
    pub rank: usize,
    /// 1-based coordinate indices whose accelerations can be solved.
    pub regular: Vec<usize>,
    /// 1-based degenerate coordinate indices.
    pub degenerate: Vec<usize>,
    /// Column visit order used during elimination (0-based).
    pub column_order: Vec<usize>,
    /// Number of sample points inspected (zero for the exact constant path).
    pub samples_used: usize,
}

/// Solved accelerations W for the regular coordinates.
#[derive(Debug, Clone)]
pub struct AccelerationSolution {
    /// (coordinate index, expression for its level-k jet).
    pub solved: Vec<(usize, Expr)>,
}

/// Everything the Hamilton-Jacobi stage needs from the Legendre transform.
#[derive(Debug, Clone)]
pub struct LegendreAnalysis {
    pub hessian: HessianMatrix,
    pub partition: RankPartition,
    pub accelerations: AccelerationSolution,
    /// Primary constraints p_(k-1)mu + H_(k-1)mu, one per degenerate index,
    /// in degenerate-index order.
    pub primary_constraints: Vec<(usize, Expr)>,
    /// Canonical Hamiltonian, free of level-k jets.
    pub hamiltonian: Expr,
}

#[derive(Debug, thiserror::Error)]
pub enum LegendreError {
    #[error("expression error: {0}")]
    Normalize(#[from] NormalizeError),
    #[error("rank misdetection: {detail}; re-run with more rank samples or a different seed")]
    RankMisdetection { detail: String },
    #[error(
        "sampled Hessian ranks disagree ({ranks:?}); the degeneracy is not generic, \
         stratify the system manually"
    )]
    RankDisagreement { ranks: Vec<usize> },
    #[error("internal consistency: degenerate acceleration `{symbol}` survives in H0")]
    DegenerateSurvives { symbol: String },
}

impl HessianMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<Expr>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.entry(i, j).clone()).collect())
            .collect()
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(|e| e.as_rational().is_some() || e.is_zero())
    }
}

/// A_ij = d^2 L / d q_i^(k) d q_j^(k), in canonical form.
pub fn hessian(spec: &SystemSpec) -> Result<HessianMatrix, LegendreError> {
    let tops = spec.top_jets();
    let n = spec.n();
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        let first = spec.lagrangian().differentiate(&tops[i]);
        for j in 0..n {
            let second = first.differentiate(&tops[j]);
            entries.push(canonical_expr(&second)?);
        }
    }
    Ok(HessianMatrix { n, entries })
}

/// Generic rank by exact elimination at seeded random rational points.
///
/// Entries that are all constant take an exact single-pass elimination.
/// Otherwise every free symbol is sampled as a rational with numerator and
/// denominator in [-99, 99] (both nonzero), `samples` times; the rank must
/// agree across samples. Pivot columns are scanned in an order that puts
/// columns of larger symbolic degree last.
pub fn generic_rank(
    h: &HessianMatrix,
    samples: usize,
    seed: u64,
) -> Result<RankPartition, LegendreError> {
    let n = h.n();
    let column_order = pivot_column_order(h)?;

    let run = |values: &dyn Fn(usize, usize) -> BigRational| -> (usize, Vec<usize>) {
        rational_rank(n, n, |i, j| values(i, j), &column_order)
    };

    let (rank, pivots, samples_used) = if h.is_constant() {
        let (rank, pivots) = run(&|i, j| {
            h.entry(i, j)
                .as_rational()
                .cloned()
                .unwrap_or_else(|| BigRational::from_integer(0.into()))
        });
        (rank, pivots, 0)
    } else {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut outcomes: Vec<(usize, Vec<usize>)> = Vec::new();
        for _ in 0..samples.max(1) {
            let point = sample_point(h, &mut rng);
            let evaluated: Vec<BigRational> = h
                .entries
                .iter()
                .map(|e| {
                    let nf = normalize(&e.substitute_unchecked(&point))
                        .expect("hessian entries have constant denominators at samples");
                    nf.as_constant().expect("fully bound sample")
                })
                .collect();
            outcomes.push(run(&|i, j| evaluated[i * n + j].clone()));
        }
        let ranks: Vec<usize> = outcomes.iter().map(|(r, _)| *r).collect();
        if ranks.windows(2).any(|w| w[0] != w[1]) {
            return Err(LegendreError::RankDisagreement { ranks });
        }
        let best = outcomes.into_iter().next().unwrap();
        (best.0, best.1, samples.max(1))
    };

    let mut regular: Vec<usize> = pivots.iter().map(|c| c + 1).collect();
    regular.sort_unstable();
    let degenerate: Vec<usize> = (1..=n).filter(|i| !regular.contains(i)).collect();
    Ok(RankPartition {
        rank,
        regular,
        degenerate,
        column_order,
        samples_used,
    })
}

fn pivot_column_order(h: &HessianMatrix) -> Result<Vec<usize>, LegendreError> {
    let n = h.n();
    let mut degrees = Vec::with_capacity(n);
    for j in 0..n {
        let mut d = 0u32;
        for i in 0..n {
            let nf = normalize(h.entry(i, j))?;
            d = d.max(nf.numerator().total_degree());
        }
        degrees.push(d);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| (degrees[j], j));
    Ok(order)
}

fn sample_point(h: &HessianMatrix, rng: &mut StdRng) -> BTreeMap<SymbolId, Expr> {
    let mut symbols = std::collections::BTreeSet::new();
    for e in &h.entries {
        symbols.extend(e.free_symbols());
    }
    let mut point = BTreeMap::new();
    for s in symbols {
        let numer: i64 = {
            let v = rng.random_range(1..=99i64);
            if rng.random_bool(0.5) {
                -v
            } else {
                v
            }
        };
        let denom: i64 = rng.random_range(1..=99i64);
        point.insert(s, Expr::rational(numer, denom));
    }
    point
}

/// Momenta conjugate to the top jets: p_(k-1)i = dL/dq_i^(k).
pub fn top_momenta(spec: &SystemSpec) -> Result<Vec<Expr>, LegendreError> {
    spec.top_jets()
        .iter()
        .map(|top| Ok(canonical_expr(&spec.lagrangian().differentiate(top))?))
        .collect()
}

/// Solve the regular block of the momentum definitions for the regular
/// accelerations. The result may reference degenerate accelerations.
pub fn solve_top(
    spec: &SystemSpec,
    partition: &RankPartition,
) -> Result<AccelerationSolution, LegendreError> {
    let k = spec.k();
    let tops = spec.top_jets();
    let momenta = top_momenta(spec)?;
    let regular = &partition.regular;
    let m = regular.len();
    if m == 0 {
        return Ok(AccelerationSolution { solved: Vec::new() });
    }

    // dL/dq_a^(k) is affine in the top jets: dL/dq_a^(k) = sum_j A_aj q_j^(k) + B_a
    let mut zero_tops = BTreeMap::new();
    for t in &tops {
        zero_tops.insert(t.clone(), Expr::zero());
    }

    let mut a_mat: Vec<Vec<NormalForm>> = Vec::with_capacity(m);
    let mut b_vec: Vec<NormalForm> = Vec::with_capacity(m);
    for &a in regular.iter() {
        let grad = &momenta[a - 1];
        let mut mat_row = Vec::with_capacity(m);
        for &b in regular.iter() {
            let coeff = grad.differentiate(&tops[b - 1]);
            mat_row.push(normalize(&coeff)?);
        }
        a_mat.push(mat_row);
        // rhs_a = p_(k-1)a - B_a - sum_{mu degenerate} A_{a mu} q_mu^(k)
        let momentum_sym = Expr::symbol(SymbolId::momentum(k - 1, a));
        let affine_rest = grad.substitute_unchecked(&zero_tops);
        let mut rhs = momentum_sym.sub(affine_rest);
        for &mu in &partition.degenerate {
            let coeff = grad.differentiate(&tops[mu - 1]);
            rhs = rhs.sub(coeff.mul(Expr::symbol(tops[mu - 1].clone())));
        }
        b_vec.push(normalize(&rhs)?);
    }

    let solution = solve_linear_system(&a_mat, &b_vec)?.ok_or_else(|| {
        LegendreError::RankMisdetection {
            detail: format!(
                "regular block of size {m} is symbolically singular despite sampled rank {}",
                partition.rank
            ),
        }
    })?;

    let solved: Vec<(usize, Expr)> = regular
        .iter()
        .zip(solution)
        .map(|(&a, nf)| (a, nf.to_expr()))
        .collect();

    // the solution must reproduce the momentum definitions identically
    let mut w_map = BTreeMap::new();
    for (a, w) in &solved {
        w_map.insert(tops[a - 1].clone(), w.clone());
    }
    for &a in regular {
        let residual = Expr::symbol(SymbolId::momentum(k - 1, a))
            .sub(momenta[a - 1].substitute_unchecked(&w_map));
        if !normalize(&residual)?.is_zero() {
            return Err(LegendreError::RankMisdetection {
                detail: format!("solved acceleration for coordinate {a} fails verification"),
            });
        }
    }
    Ok(AccelerationSolution { solved })
}

impl AccelerationSolution {
    /// Substitution map q_a^(k) -> W_a.
    pub fn substitution(&self, k: usize) -> BTreeMap<SymbolId, Expr> {
        self.solved
            .iter()
            .map(|(a, w)| (SymbolId::jet(*a, k), w.clone()))
            .collect()
    }
}

/// Primary constraints: for each degenerate mu,
/// H'_(k-1)mu = p_(k-1)mu - (dL/dq_mu^(k))|_W, verified independent of
/// every top acceleration.
pub fn primary_constraints(
    spec: &SystemSpec,
    partition: &RankPartition,
    w: &AccelerationSolution,
) -> Result<Vec<(usize, Expr)>, LegendreError> {
    let k = spec.k();
    let tops = spec.top_jets();
    let w_map = w.substitution(k);
    let mut out = Vec::new();
    for &mu in &partition.degenerate {
        let grad = spec.lagrangian().differentiate(&tops[mu - 1]);
        let substituted = grad.substitute_unchecked(&w_map);
        let constraint = Expr::symbol(SymbolId::momentum(k - 1, mu)).sub(substituted);
        let constraint = canonical_expr(&constraint)?;
        for top in &tops {
            if !normalize(&constraint.differentiate(top))?.is_zero() {
                return Err(LegendreError::RankMisdetection {
                    detail: format!(
                        "primary constraint for coordinate {mu} still depends on a top derivative"
                    ),
                });
            }
        }
        out.push((mu, constraint));
    }
    Ok(out)
}

/// Canonical Hamiltonian:
/// H0 = sum_{u<=k-2} p_(u)i q_i^(u+1) + sum_a p_(k-1)a W_a
///      + sum_mu (dL/dq_mu^(k))|_W q_mu^(k) - L|_W.
/// The level-k degenerate jets must cancel; the cancellation is checked.
pub fn canonical_hamiltonian(
    spec: &SystemSpec,
    partition: &RankPartition,
    w: &AccelerationSolution,
) -> Result<Expr, LegendreError> {
    let n = spec.n();
    let k = spec.k();
    let tops = spec.top_jets();
    let w_map = w.substitution(k);

    let mut terms = Vec::new();
    for u in 0..k.saturating_sub(1) {
        for i in 1..=n {
            terms.push(
                Expr::symbol(SymbolId::momentum(u, i)).mul(Expr::symbol(SymbolId::jet(i, u + 1))),
            );
        }
    }
    for (a, w_expr) in &w.solved {
        terms.push(Expr::symbol(SymbolId::momentum(k - 1, *a)).mul(w_expr.clone()));
    }
    for &mu in &partition.degenerate {
        let grad = spec
            .lagrangian()
            .differentiate(&tops[mu - 1])
            .substitute_unchecked(&w_map);
        terms.push(grad.mul(Expr::symbol(tops[mu - 1].clone())));
    }
    terms.push(spec.lagrangian().substitute_unchecked(&w_map).neg());

    let h0 = canonical_expr(&Expr::sum(terms))?;
    for top in &tops {
        if h0.contains(top) || !normalize(&h0.differentiate(top))?.is_zero() {
            return Err(LegendreError::DegenerateSurvives {
                symbol: Expr::symbol(top.clone()).render(Some(spec.symbol_table())),
            });
        }
    }
    Ok(h0)
}

/// Options for the Legendre stage.
#[derive(Debug, Clone, Copy)]
pub struct LegendreOptions {
    pub rank_samples: usize,
    pub seed: u64,
}

impl Default for LegendreOptions {
    fn default() -> Self {
        LegendreOptions {
            rank_samples: 5,
            seed: 42,
        }
    }
}

/// Run the whole Legendre stage.
pub fn analyze(spec: &SystemSpec, opts: LegendreOptions) -> Result<LegendreAnalysis, LegendreError> {
    let h = hessian(spec)?;
    let partition = generic_rank(&h, opts.rank_samples, opts.seed)?;
    let accelerations = solve_top(spec, &partition)?;
    let primary = primary_constraints(spec, &partition, &accelerations)?;
    let hamiltonian = canonical_hamiltonian(spec, &partition, &accelerations)?;
    Ok(LegendreAnalysis {
        hessian: h,
        partition,
        accelerations,
        primary_constraints: primary,
        hamiltonian,
    })
}
