//! Canonical rational normal form.
//!
//! Two expressions that are equal as rational functions normalize to the
//! same value: numerator and denominator are reduced by their polynomial
//! GCD, the denominator is made monic, and sin-squared powers are rewritten
//! through the Pythagorean identity before atomization.

use super::poly::{Atom, Poly};
use super::{Expr, UnaryFunc};
use num_traits::Signed;
use std::collections::BTreeMap;

/// Canonical rational form `num / den` with `den` monic and
/// `gcd(num, den) = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalForm {
    num: Poly,
    den: Poly,
}

#[derive(Debug, thiserror::Error)]
pub enum NormalizeError {
    #[error("division by an identically-zero denominator")]
    ZeroDenominator,
}

impl NormalForm {
    pub fn zero() -> NormalForm {
        NormalForm {
            num: Poly::zero(),
            den: Poly::one(),
        }
    }

    pub fn one() -> NormalForm {
        NormalForm {
            num: Poly::one(),
            den: Poly::one(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.num == Poly::one() && self.den == Poly::one()
    }

    pub fn numerator(&self) -> &Poly {
        &self.num
    }

    pub fn denominator(&self) -> &Poly {
        &self.den
    }

    /// True when the form is a plain rational constant.
    pub fn as_constant(&self) -> Option<num_rational::BigRational> {
        if !self.den.is_constant() {
            return None;
        }
        let n = self.num.as_constant()?;
        let d = self.den.as_constant()?;
        Some(n / d)
    }

    fn reduce(num: Poly, den: Poly) -> Result<NormalForm, NormalizeError> {
        if den.is_zero() {
            return Err(NormalizeError::ZeroDenominator);
        }
        let num = num.reduce_sin_squares();
        let den = den.reduce_sin_squares();
        if num.is_zero() {
            return Ok(NormalForm::zero());
        }
        let g = Poly::gcd(&num, &den);
        let (mut num, mut den) = if g.is_constant() {
            (num, den)
        } else {
            (
                num.div_exact(&g).expect("gcd divides numerator"),
                den.div_exact(&g).expect("gcd divides denominator"),
            )
        };
        // make the denominator monic under the canonical monomial order
        let lc = den.leading().expect("nonzero denominator").1.clone();
        let inv = lc.recip();
        num = num.scale(&inv);
        den = den.scale(&inv);
        Ok(NormalForm { num, den })
    }

    pub fn add(&self, other: &NormalForm) -> Result<NormalForm, NormalizeError> {
        let num = self.num.mul(&other.den).add(&other.num.mul(&self.den));
        let den = self.den.mul(&other.den);
        NormalForm::reduce(num, den)
    }

    pub fn sub(&self, other: &NormalForm) -> Result<NormalForm, NormalizeError> {
        let num = self.num.mul(&other.den).sub(&other.num.mul(&self.den));
        let den = self.den.mul(&other.den);
        NormalForm::reduce(num, den)
    }

    pub fn mul(&self, other: &NormalForm) -> Result<NormalForm, NormalizeError> {
        NormalForm::reduce(self.num.mul(&other.num), self.den.mul(&other.den))
    }

    pub fn inv(&self) -> Result<NormalForm, NormalizeError> {
        NormalForm::reduce(self.den.clone(), self.num.clone())
    }

    pub fn div(&self, other: &NormalForm) -> Result<NormalForm, NormalizeError> {
        NormalForm::reduce(self.num.mul(&other.den), self.den.mul(&other.num))
    }

    pub fn neg(&self) -> NormalForm {
        NormalForm {
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }

    pub fn pow(&self, n: i64) -> Result<NormalForm, NormalizeError> {
        if n == 0 {
            return Ok(NormalForm::one());
        }
        let (num, den) = if n > 0 {
            (self.num.pow(n as u32), self.den.pow(n as u32))
        } else {
            (self.den.pow((-n) as u32), self.num.pow((-n) as u32))
        };
        NormalForm::reduce(num, den)
    }

    /// Rebuild an expression tree in canonical term order.
    pub fn to_expr(&self) -> Expr {
        let n = self.num.to_expr();
        if self.den == Poly::one() {
            n
        } else {
            n.div(self.den.to_expr())
        }
    }
}

/// Normalize an expression to its canonical rational form.
pub fn normalize(e: &Expr) -> Result<NormalForm, NormalizeError> {
    match e {
        Expr::Rational(r) => NormalForm::reduce(Poly::constant(r.clone()), Poly::one()),
        Expr::Symbol(s) => {
            NormalForm::reduce(Poly::var(Atom::Sym(s.clone())), Poly::one())
        }
        Expr::Sum(terms) => {
            let mut acc = NormalForm::zero();
            for t in terms {
                acc = acc.add(&normalize(t)?)?;
            }
            Ok(acc)
        }
        Expr::Product(factors) => {
            let mut acc = NormalForm::one();
            for f in factors {
                acc = acc.mul(&normalize(f)?)?;
                if acc.is_zero() {
                    // a later factor may still be 1/0
                    continue;
                }
            }
            Ok(acc)
        }
        Expr::Pow(base, n) => normalize(base)?.pow(*n),
        Expr::Func(f, arg) => {
            let arg_nf = normalize(arg)?;
            let atom = canonical_trans_atom(*f, &arg_nf);
            NormalForm::reduce(Poly::var(atom), Poly::one())
        }
    }
}

fn canonical_trans_atom(f: UnaryFunc, arg: &NormalForm) -> Atom {
    Atom::Trans(f, arg.to_expr())
}

/// Convenience: canonical zero test for an expression.
pub fn is_identically_zero(e: &Expr) -> Result<bool, NormalizeError> {
    Ok(normalize(e)?.is_zero())
}

/// Canonical form of an expression, rebuilt as a tree.
pub fn canonical_expr(e: &Expr) -> Result<Expr, NormalizeError> {
    Ok(normalize(e)?.to_expr())
}

/// Solve a linear system `A x = b` over the rational-function field by
/// Gaussian elimination with symbolic nonzero pivots. Returns `None` when
/// the matrix is singular as a matrix of rational functions.
pub fn solve_linear_system(
    a: &[Vec<NormalForm>],
    b: &[NormalForm],
) -> Result<Option<Vec<NormalForm>>, NormalizeError> {
    let n = a.len();
    assert!(a.iter().all(|row| row.len() == n) && b.len() == n);
    let mut m: Vec<Vec<NormalForm>> = a.to_vec();
    let mut rhs: Vec<NormalForm> = b.to_vec();
    let mut row_of_col = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for col in 0..n {
        let Some(pivot_row) = (0..n).find(|&r| !used[r] && !m[r][col].is_zero()) else {
            return Ok(None);
        };
        used[pivot_row] = true;
        row_of_col[col] = pivot_row;
        let pivot = m[pivot_row][col].clone();
        for r in 0..n {
            if r == pivot_row || m[r][col].is_zero() {
                continue;
            }
            let factor = m[r][col].div(&pivot)?;
            for c in 0..n {
                let delta = factor.mul(&m[pivot_row][c])?;
                m[r][c] = m[r][c].sub(&delta)?;
            }
            let delta = factor.mul(&rhs[pivot_row])?;
            rhs[r] = rhs[r].sub(&delta)?;
        }
    }
    let mut x = vec![NormalForm::zero(); n];
    for col in 0..n {
        let r = row_of_col[col];
        x[col] = rhs[r].div(&m[r][col])?;
    }
    Ok(Some(x))
}

/// Numeric rank of a rational matrix by exact fraction-free elimination.
/// Returns the rank together with the pivot columns in visit order.
pub fn rational_rank(
    rows: usize,
    cols: usize,
    entry: impl Fn(usize, usize) -> num_rational::BigRational,
    column_order: &[usize],
) -> (usize, Vec<usize>) {
    use num_traits::Zero;
    let mut m: Vec<Vec<num_rational::BigRational>> = (0..rows)
        .map(|r| (0..cols).map(|c| entry(r, c)).collect())
        .collect();
    let mut pivots = Vec::new();
    let mut next_row = 0;
    for &col in column_order {
        if next_row >= rows {
            break;
        }
        let Some(pr) = (next_row..rows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(next_row, pr);
        let pivot = m[next_row][col].clone();
        for r in (next_row + 1)..rows {
            if m[r][col].is_zero() {
                continue;
            }
            let factor = m[r][col].clone() / pivot.clone();
            for c in 0..cols {
                let delta = factor.clone() * m[next_row][c].clone();
                m[r][c] -= delta;
            }
        }
        pivots.push(col);
        next_row += 1;
    }
    (pivots.len(), pivots)
}

/// Substitute then normalize: the workhorse "reduce modulo a solved-symbol
/// map" operation used by the constraint analysis.
pub fn reduce_modulo(
    e: &Expr,
    solved: &BTreeMap<super::SymbolId, Expr>,
) -> Result<NormalForm, NormalizeError> {
    normalize(&e.substitute_unchecked(solved))
}

impl NormalForm {
    /// Signed canonical representative: scales so the leading numerator
    /// coefficient is positive. Used where an overall constant is
    /// irrelevant (constraint directions).
    pub fn sign_canonical(&self) -> NormalForm {
        match self.num.leading() {
            Some((_, c)) if c.is_negative() => NormalForm {
                num: self.num.neg(),
                den: self.den.clone(),
            },
            _ => self.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat, SymbolId};

    fn q() -> Expr {
        Expr::symbol(SymbolId::aux("q"))
    }

    fn p() -> Expr {
        Expr::symbol(SymbolId::aux("p"))
    }

    #[test]
    fn binomial_difference_is_zero() {
        // (q+1)^2 - q^2 - 2q - 1 -> 0
        let e = q()
            .add(Expr::one())
            .pow(2)
            .sub(q().pow(2))
            .sub(q().mul(Expr::rational(2, 1)))
            .sub(Expr::one());
        assert!(normalize(&e).unwrap().is_zero());
    }

    #[test]
    fn self_quotient_is_one() {
        let e = q().div(q());
        assert!(normalize(&e).unwrap().is_one());
    }

    #[test]
    fn product_collects() {
        // p*(p/2) + p^2/2 = p^2
        let e = p()
            .clone()
            .mul(p().mul(Expr::rational(1, 2)))
            .add(p().pow(2).mul(Expr::rational(1, 2)));
        let expected = normalize(&p().pow(2)).unwrap();
        assert_eq!(normalize(&e).unwrap(), expected);
    }

    #[test]
    fn idempotent() {
        let e = q().add(Expr::one()).pow(3).div(q().sub(Expr::one()));
        let nf = normalize(&e).unwrap();
        let again = normalize(&nf.to_expr()).unwrap();
        assert_eq!(nf, again);
    }

    #[test]
    fn zero_denominator_detected() {
        let e = Expr::one().div(q().sub(q()));
        assert!(matches!(
            normalize(&e),
            Err(NormalizeError::ZeroDenominator)
        ));
    }

    #[test]
    fn rational_function_cancellation() {
        // (q^2 - 1)/(q - 1) == q + 1
        let e = q()
            .pow(2)
            .sub(Expr::one())
            .div(q().sub(Expr::one()));
        let expected = normalize(&q().add(Expr::one())).unwrap();
        assert_eq!(normalize(&e).unwrap(), expected);
    }

    #[test]
    fn pythagorean_identity() {
        let e = q().sin().pow(2).add(q().cos().pow(2));
        assert!(normalize(&e).unwrap().is_one());
    }

    #[test]
    fn transcendental_atoms_with_equal_args_merge() {
        // sin(q + q) and sin(2q) are the same atom
        let a = q().add(q()).sin();
        let b = q().mul(Expr::rational(2, 1)).sin();
        assert!(normalize(&a.sub(b)).unwrap().is_zero());
    }

    #[test]
    fn linear_solve_two_by_two() {
        let one = NormalForm::one();
        let two = normalize(&Expr::rational(2, 1)).unwrap();
        let qnf = normalize(&q()).unwrap();
        // [1 2; 0 q] x = [1; q] -> x = [1 - 2, 1] = [-1, 1]
        let a = vec![vec![one.clone(), two.clone()], vec![NormalForm::zero(), qnf.clone()]];
        let b = vec![one.clone(), qnf];
        let x = solve_linear_system(&a, &b).unwrap().unwrap();
        assert_eq!(x[0], normalize(&Expr::rational(-1, 1)).unwrap());
        assert!(x[1].is_one());
    }

    #[test]
    fn singular_system_detected() {
        let one = NormalForm::one();
        let a = vec![vec![one.clone(), one.clone()], vec![one.clone(), one.clone()]];
        let b = vec![one.clone(), one];
        assert!(solve_linear_system(&a, &b).unwrap().is_none());
    }

    #[test]
    fn rank_of_rational_matrix() {
        let entries = [
            [rat(1, 1), rat(0, 1)],
            [rat(0, 1), rat(0, 1)],
        ];
        let (rank, pivots) =
            rational_rank(2, 2, |r, c| entries[r][c].clone(), &[0, 1]);
        assert_eq!(rank, 1);
        assert_eq!(pivots, vec![0]);
    }
}
