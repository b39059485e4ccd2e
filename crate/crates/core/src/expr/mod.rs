//! Self-contained symbolic kernel: expression trees over the problem's
//! symbol universe, with exact rational constants.
//!
//! Expressions are immutable trees of sums, products, integer powers and
//! the unary functions sin/cos/exp. Division is a power with a negative
//! exponent, subtraction a sum with a `-1` factor. All constants are
//! arbitrary-precision rationals so that zero tests downstream are exact.

mod latex;
mod normal;
mod parse;
mod poly;

pub use latex::to_latex;
pub use normal::{
    canonical_expr, is_identically_zero, normalize, rational_rank, reduce_modulo,
    solve_linear_system, NormalForm, NormalizeError,
};
pub use parse::{parse, ParseError, ParseErrorKind, SymbolTable};
pub use poly::{Atom, Poly};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Identifier of a symbol in the problem universe.
///
/// Equality and ordering are value-based; the ordering (kind tag, then
/// level, then index, then name) fixes the deterministic atom order used
/// by the canonical normal form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SymbolId {
    /// s-th time derivative of coordinate i (1-based), treated as an
    /// independent jet variable. Level 0 is the coordinate itself.
    Jet { coord: usize, level: usize },
    /// Momentum conjugate to the level-s jet of coordinate i.
    Momentum { level: usize, coord: usize },
    /// Explicit time.
    Time,
    /// Evolution parameter t_(s)mu for a coordinate promoted by the
    /// constraint analysis.
    Param { level: usize, coord: usize },
    /// Free-standing named symbol (used by curve specs and tests).
    Aux(String),
}

impl SymbolId {
    /// (kind tag, level, index, name) sort key.
    fn sort_key(&self) -> (u8, usize, usize, &str) {
        match self {
            SymbolId::Jet { coord, level } => (0, *level, *coord, ""),
            SymbolId::Momentum { level, coord } => (1, *level, *coord, ""),
            SymbolId::Time => (2, 0, 0, ""),
            SymbolId::Param { level, coord } => (3, *level, *coord, ""),
            SymbolId::Aux(name) => (4, 0, 0, name.as_str()),
        }
    }

    pub fn jet(coord: usize, level: usize) -> Self {
        SymbolId::Jet { coord, level }
    }

    pub fn momentum(level: usize, coord: usize) -> Self {
        SymbolId::Momentum { level, coord }
    }

    pub fn aux(name: &str) -> Self {
        SymbolId::Aux(name.to_string())
    }
}

impl Ord for SymbolId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for SymbolId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Unary transcendental functions admitted in expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnaryFunc {
    Sin,
    Cos,
    Exp,
}

impl UnaryFunc {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFunc::Sin => "sin",
            UnaryFunc::Cos => "cos",
            UnaryFunc::Exp => "exp",
        }
    }
}

/// Symbolic expression tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    /// Exact rational constant.
    Rational(BigRational),
    Symbol(SymbolId),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    /// Integer power; negative exponents encode division.
    Pow(Box<Expr>, i64),
    Func(UnaryFunc, Box<Expr>),
}

/// Errors from numeric evaluation of an expression.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("pole: division by a value below epsilon ({0:e})")]
    Pole(f64),
}

/// Errors from the formal total time derivative.
#[derive(Debug, thiserror::Error)]
pub enum DtError {
    #[error("total time derivative needs jet level {needed}, above the allowed {allowed}")]
    LevelExceeded { needed: usize, allowed: usize },
    #[error("total time derivative is defined only over jet variables and time; found `{0}`")]
    ForeignSymbol(String),
}

/// Error raised when a substitution map is self-referential.
#[derive(Debug, thiserror::Error)]
#[error("cyclic substitution: `{0}` appears in its own replacement chain")]
pub struct CyclicSubstitution(pub String);

pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: i64) -> Expr {
    Expr::Rational(BigRational::from(BigInt::from(n)))
}

impl From<SymbolId> for Expr {
    fn from(s: SymbolId) -> Self {
        Expr::Symbol(s)
    }
}

impl Expr {
    pub fn zero() -> Expr {
        int(0)
    }

    pub fn one() -> Expr {
        int(1)
    }

    pub fn rational(num: i64, den: i64) -> Expr {
        Expr::Rational(rat(num, den))
    }

    pub fn symbol(s: SymbolId) -> Expr {
        Expr::Symbol(s)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Rational(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Rational(r) if r.is_one())
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match self {
            Expr::Rational(r) => Some(r),
            _ => None,
        }
    }

    /// Sum with flattening, constant folding and zero elimination.
    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut flat = Vec::new();
        let mut constant = BigRational::zero();
        let mut stack: Vec<Expr> = terms.into_iter().rev().collect();
        while let Some(t) = stack.pop() {
            match t {
                Expr::Sum(inner) => stack.extend(inner.into_iter().rev()),
                Expr::Rational(r) => constant += r,
                other => flat.push(other),
            }
        }
        if !constant.is_zero() {
            flat.push(Expr::Rational(constant));
        }
        match flat.len() {
            0 => Expr::zero(),
            1 => flat.pop().unwrap(),
            _ => Expr::Sum(flat),
        }
    }

    /// Product with flattening, constant folding and annihilation by zero.
    pub fn product(factors: Vec<Expr>) -> Expr {
        let mut flat = Vec::new();
        let mut constant = BigRational::one();
        let mut stack: Vec<Expr> = factors.into_iter().rev().collect();
        while let Some(f) = stack.pop() {
            match f {
                Expr::Product(inner) => stack.extend(inner.into_iter().rev()),
                Expr::Rational(r) => constant *= r,
                other => flat.push(other),
            }
        }
        if constant.is_zero() {
            return Expr::zero();
        }
        if !constant.is_one() {
            flat.insert(0, Expr::Rational(constant));
        }
        match flat.len() {
            0 => Expr::one(),
            1 => flat.pop().unwrap(),
            _ => Expr::Product(flat),
        }
    }

    pub fn add(self, other: Expr) -> Expr {
        Expr::sum(vec![self, other])
    }

    pub fn sub(self, other: Expr) -> Expr {
        Expr::sum(vec![self, other.neg()])
    }

    pub fn neg(self) -> Expr {
        Expr::product(vec![int(-1), self])
    }

    pub fn mul(self, other: Expr) -> Expr {
        Expr::product(vec![self, other])
    }

    pub fn div(self, other: Expr) -> Expr {
        Expr::product(vec![self, other.pow(-1)])
    }

    pub fn pow(self, exp: i64) -> Expr {
        match (&self, exp) {
            (_, 1) => return self,
            (Expr::Rational(r), _) if !r.is_zero() || exp > 0 => {
                if exp == 0 {
                    return Expr::one();
                }
                let p = r.pow(exp.unsigned_abs() as i32);
                let p = if exp < 0 { p.recip() } else { p };
                return Expr::Rational(p);
            }
            (_, 0) => return Expr::one(),
            _ => {}
        }
        if let Expr::Pow(base, inner) = self {
            return (*base).pow(inner.saturating_mul(exp));
        }
        Expr::Pow(Box::new(self), exp)
    }

    pub fn func(f: UnaryFunc, arg: Expr) -> Expr {
        Expr::Func(f, Box::new(arg))
    }

    pub fn sin(self) -> Expr {
        Expr::func(UnaryFunc::Sin, self)
    }

    pub fn cos(self) -> Expr {
        Expr::func(UnaryFunc::Cos, self)
    }

    pub fn exp(self) -> Expr {
        Expr::func(UnaryFunc::Exp, self)
    }

    /// All symbols appearing in the tree.
    pub fn free_symbols(&self) -> BTreeSet<SymbolId> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Symbol(s) = e {
                out.insert(s.clone());
            }
        });
        out
    }

    pub fn contains(&self, sym: &SymbolId) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let Expr::Symbol(s) = e {
                if s == sym {
                    found = true;
                }
            }
        });
        found
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Sum(v) | Expr::Product(v) => v.iter().for_each(|e| e.visit(f)),
            Expr::Pow(b, _) => b.visit(f),
            Expr::Func(_, a) => a.visit(f),
            _ => {}
        }
    }

    /// Exact partial derivative with respect to `x`; every other symbol is
    /// treated as independent.
    pub fn differentiate(&self, x: &SymbolId) -> Expr {
        match self {
            Expr::Rational(_) => Expr::zero(),
            Expr::Symbol(s) => {
                if s == x {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Sum(terms) => Expr::sum(terms.iter().map(|t| t.differentiate(x)).collect()),
            Expr::Product(factors) => {
                let mut terms = Vec::new();
                for (i, f) in factors.iter().enumerate() {
                    let df = f.differentiate(x);
                    if df.is_zero() {
                        continue;
                    }
                    let mut rest: Vec<Expr> = factors
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, g)| g.clone())
                        .collect();
                    rest.push(df);
                    terms.push(Expr::product(rest));
                }
                Expr::sum(terms)
            }
            Expr::Pow(base, n) => {
                let db = base.differentiate(x);
                if db.is_zero() {
                    return Expr::zero();
                }
                Expr::product(vec![int(*n), base.as_ref().clone().pow(n - 1), db])
            }
            Expr::Func(f, arg) => {
                let da = arg.differentiate(x);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match f {
                    UnaryFunc::Sin => arg.as_ref().clone().cos(),
                    UnaryFunc::Cos => arg.as_ref().clone().sin().neg(),
                    UnaryFunc::Exp => arg.as_ref().clone().exp(),
                };
                outer.mul(da)
            }
        }
    }

    /// Simultaneous substitution: every binding sees the original tree,
    /// so `{a -> b, b -> a}` swaps the two symbols.
    pub fn substitute(
        &self,
        bindings: &BTreeMap<SymbolId, Expr>,
    ) -> Result<Expr, CyclicSubstitution> {
        // Simultaneity makes direct cycles ({a -> b, b -> a}) well-defined;
        // reject only a binding whose replacement mentions its own key.
        for (k, v) in bindings {
            if v.contains(k) {
                return Err(CyclicSubstitution(format!("{k:?}")));
            }
        }
        Ok(self.substitute_unchecked(bindings))
    }

    pub(crate) fn substitute_unchecked(&self, bindings: &BTreeMap<SymbolId, Expr>) -> Expr {
        match self {
            Expr::Rational(_) => self.clone(),
            Expr::Symbol(s) => bindings.get(s).cloned().unwrap_or_else(|| self.clone()),
            Expr::Sum(v) => Expr::sum(v.iter().map(|e| e.substitute_unchecked(bindings)).collect()),
            Expr::Product(v) => {
                Expr::product(v.iter().map(|e| e.substitute_unchecked(bindings)).collect())
            }
            Expr::Pow(b, n) => b.substitute_unchecked(bindings).pow(*n),
            Expr::Func(f, a) => Expr::func(*f, a.substitute_unchecked(bindings)),
        }
    }

    /// IEEE double evaluation at a point binding every free symbol.
    pub fn evaluate(&self, point: &BTreeMap<SymbolId, f64>) -> Result<f64, EvalError> {
        self.evaluate_with_eps(point, POLE_EPSILON)
    }

    pub fn evaluate_with_eps(
        &self,
        point: &BTreeMap<SymbolId, f64>,
        eps: f64,
    ) -> Result<f64, EvalError> {
        match self {
            Expr::Rational(r) => Ok(rational_to_f64(r)),
            Expr::Symbol(s) => point
                .get(s)
                .copied()
                .ok_or_else(|| EvalError::Unbound(format!("{s}"))),
            Expr::Sum(v) => {
                let mut acc = 0.0;
                for e in v {
                    acc += e.evaluate_with_eps(point, eps)?;
                }
                Ok(acc)
            }
            Expr::Product(v) => {
                let mut acc = 1.0;
                for e in v {
                    acc *= e.evaluate_with_eps(point, eps)?;
                }
                Ok(acc)
            }
            Expr::Pow(b, n) => {
                let base = b.evaluate_with_eps(point, eps)?;
                if *n < 0 && base.abs() < eps {
                    return Err(EvalError::Pole(eps));
                }
                Ok(base.powi(*n as i32))
            }
            Expr::Func(f, a) => {
                let v = a.evaluate_with_eps(point, eps)?;
                Ok(match f {
                    UnaryFunc::Sin => v.sin(),
                    UnaryFunc::Cos => v.cos(),
                    UnaryFunc::Exp => v.exp(),
                })
            }
        }
    }

    /// Formal total time derivative: jets shift one level up, explicit
    /// time differentiates to one. Fails if the shift would need a jet
    /// level above `levels_allowed`.
    pub fn total_time_derivative(&self, levels_allowed: usize) -> Result<Expr, DtError> {
        let mut terms = Vec::new();
        for sym in self.free_symbols() {
            match &sym {
                SymbolId::Jet { coord, level } => {
                    let partial = self.differentiate(&sym);
                    if partial.is_zero() {
                        continue;
                    }
                    if level + 1 > levels_allowed {
                        return Err(DtError::LevelExceeded {
                            needed: level + 1,
                            allowed: levels_allowed,
                        });
                    }
                    let shifted = Expr::symbol(SymbolId::jet(*coord, level + 1));
                    terms.push(partial.mul(shifted));
                }
                SymbolId::Time => {
                    terms.push(self.differentiate(&sym));
                }
                other => {
                    return Err(DtError::ForeignSymbol(format!("{other}")));
                }
            }
        }
        Ok(Expr::sum(terms))
    }
}

/// Epsilon below which a divisor counts as a pole during evaluation.
pub const POLE_EPSILON: f64 = 1e-12;

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.numer()
        .to_f64()
        .and_then(|n| r.denom().to_f64().map(|d| n / d))
        .unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------
// Display: the printed form reparses through the DSL grammar.

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolId::Jet { coord, level } => {
                write!(f, "q{coord}")?;
                for _ in 0..*level {
                    write!(f, "'")?;
                }
                Ok(())
            }
            SymbolId::Momentum { level, coord } => write!(f, "p{level}_q{coord}"),
            SymbolId::Time => write!(f, "t"),
            SymbolId::Param { level, coord } => write!(f, "t{level}_q{coord}"),
            SymbolId::Aux(name) => write!(f, "{name}"),
        }
    }
}

impl Expr {
    /// Render with coordinate names from a symbol table; `Display` uses
    /// positional `q1, q2, ...` names.
    pub fn render(&self, names: Option<&SymbolTable>) -> String {
        let mut s = String::new();
        self.write_prec(&mut s, 0, names);
        s
    }

    fn symbol_text(sym: &SymbolId, names: Option<&SymbolTable>) -> String {
        match (sym, names) {
            (SymbolId::Jet { coord, level }, Some(t)) => {
                let mut s = t.coordinate_name(*coord).to_string();
                s.extend(std::iter::repeat('\'').take(*level));
                s
            }
            (SymbolId::Momentum { level, coord }, Some(t)) => {
                format!("p{level}_{}", t.coordinate_name(*coord))
            }
            (SymbolId::Param { level, coord }, Some(t)) => {
                format!("t{level}_{}", t.coordinate_name(*coord))
            }
            _ => format!("{sym}"),
        }
    }

    // prec: 0 sum, 1 product, 2 power/atom
    fn write_prec(&self, out: &mut String, prec: u8, names: Option<&SymbolTable>) {
        match self {
            Expr::Rational(r) => {
                let negative = r.is_negative();
                let needs_div = !r.denom().is_one();
                let wrap = (negative && prec >= 1) || (needs_div && prec >= 2);
                if wrap {
                    out.push('(');
                }
                out.push_str(&r.to_string());
                if wrap {
                    out.push(')');
                }
            }
            Expr::Symbol(s) => out.push_str(&Self::symbol_text(s, names)),
            Expr::Sum(terms) => {
                if prec >= 1 {
                    out.push('(');
                }
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        // fold a leading -1 factor into the separator
                        if let Some(pos) = t.clone().strip_negation() {
                            out.push_str(" - ");
                            pos.write_prec(out, 1, names);
                            continue;
                        }
                        out.push_str(" + ");
                    }
                    t.write_prec(out, 1, names);
                }
                if prec >= 1 {
                    out.push(')');
                }
            }
            Expr::Product(factors) => {
                if prec >= 2 {
                    out.push('(');
                }
                let mut first = true;
                for f in factors {
                    if let Expr::Pow(b, n) = f {
                        if *n < 0 {
                            if first {
                                out.push('1');
                                first = false;
                            }
                            out.push_str(" / ");
                            b.clone().pow(-n).write_prec(out, 2, names);
                            continue;
                        }
                    }
                    if !first {
                        out.push_str(" * ");
                    }
                    f.write_prec(out, 2, names);
                    first = false;
                }
                if prec >= 2 {
                    out.push(')');
                }
            }
            Expr::Pow(b, n) => {
                if *n < 0 {
                    out.push_str("1 / ");
                    b.clone().pow(-n).write_prec(out, 2, names);
                } else {
                    b.write_prec(out, 2, names);
                    out.push('^');
                    out.push_str(&n.to_string());
                }
            }
            Expr::Func(f, a) => {
                out.push_str(f.name());
                out.push('(');
                a.write_prec(out, 0, names);
                out.push(')');
            }
        }
    }

    /// If the expression is `-1 * rest`, return `rest`.
    fn strip_negation(self) -> Option<Expr> {
        if let Expr::Product(factors) = &self {
            if let Some(Expr::Rational(r)) = factors.first() {
                if *r == -BigRational::one() {
                    return Some(Expr::product(factors[1..].to_vec()));
                }
            }
        }
        None
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render(None))
    }
}
