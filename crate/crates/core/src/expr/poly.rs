//! Sparse multivariate polynomials over exact rationals, the carrier of
//! the canonical normal form.
//!
//! Variables are [`Atom`]s: plain symbols, or opaque transcendental
//! subterms whose argument is already in canonical form. The GCD used for
//! fraction cancellation is the classical primitive Euclidean algorithm on
//! a recursive univariate view.

use super::{Expr, SymbolId, UnaryFunc};
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::collections::BTreeMap;

/// A variable of the polynomial ring: a symbol, or an opaque sin/cos/exp
/// subterm with a canonical argument.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Atom {
    Sym(SymbolId),
    Trans(UnaryFunc, Expr),
}

impl Atom {
    pub fn to_expr(&self) -> Expr {
        match self {
            Atom::Sym(s) => Expr::Symbol(s.clone()),
            Atom::Trans(f, arg) => Expr::func(*f, arg.clone()),
        }
    }
}

/// Exponent map of one monomial; absent atoms have exponent zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Monomial(pub BTreeMap<Atom, u32>);

// Graded lexicographic monomial order: total degree first, ties broken by
// the exponent of the greatest atom. A genuine monomial order is required
// for the division algorithm below to witness exact divisibility.
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match self.total_degree().cmp(&other.total_degree()) {
            Ordering::Equal => {}
            o => return o,
        }
        let mut a = self.0.iter().rev().peekable();
        let mut b = other.0.iter().rev().peekable();
        loop {
            match (a.peek(), b.peek()) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some((aa, ae)), Some((ba, be))) => match aa.cmp(ba) {
                    // whoever holds the greater atom has a positive
                    // exponent where the other has zero
                    Ordering::Greater => return Ordering::Greater,
                    Ordering::Less => return Ordering::Less,
                    Ordering::Equal => match ae.cmp(be) {
                        Ordering::Equal => {
                            a.next();
                            b.next();
                        }
                        o => return o,
                    },
                },
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Monomial {
    pub fn unit() -> Self {
        Monomial::default()
    }

    pub fn var(a: Atom) -> Self {
        let mut m = BTreeMap::new();
        m.insert(a, 1);
        Monomial(m)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = self.0.clone();
        for (a, e) in &other.0 {
            *out.entry(a.clone()).or_insert(0) += e;
        }
        Monomial(out)
    }

    pub fn total_degree(&self) -> u32 {
        self.0.values().sum()
    }

    fn divide_by(&self, other: &Monomial) -> Option<Monomial> {
        let mut out = self.0.clone();
        for (a, e) in &other.0 {
            let have = out.get_mut(a)?;
            if *have < *e {
                return None;
            }
            *have -= *e;
            if *have == 0 {
                out.remove(a);
            }
        }
        Some(Monomial(out))
    }
}

/// Sparse polynomial: canonical map monomial -> nonzero coefficient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Poly {
    pub terms: BTreeMap<Monomial, BigRational>,
}

impl Poly {
    pub fn zero() -> Poly {
        Poly::default()
    }

    pub fn constant(c: BigRational) -> Poly {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Monomial::unit(), c);
        }
        Poly { terms }
    }

    pub fn one() -> Poly {
        Poly::constant(BigRational::one())
    }

    pub fn var(a: Atom) -> Poly {
        let mut terms = BTreeMap::new();
        terms.insert(Monomial::var(a), BigRational::one());
        Poly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty() || (self.terms.len() == 1 && self.terms.contains_key(&Monomial::unit()))
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        if self.terms.is_empty() {
            return Some(BigRational::zero());
        }
        if self.terms.len() == 1 {
            if let Some(c) = self.terms.get(&Monomial::unit()) {
                return Some(c.clone());
            }
        }
        None
    }

    pub fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Poly {
        Poly {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c.clone())).collect(),
        }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }

    pub fn scale(&self, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self.terms.iter().map(|(m, k)| (m.clone(), k * c)).collect(),
        }
    }

    pub fn pow(&self, n: u32) -> Poly {
        let mut out = Poly::one();
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                out = out.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        out
    }

    pub fn atoms(&self) -> Vec<Atom> {
        let mut out: Vec<Atom> = Vec::new();
        for m in self.terms.keys() {
            for a in m.0.keys() {
                if !out.contains(a) {
                    out.push(a.clone());
                }
            }
        }
        out.sort();
        out
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.total_degree()).max().unwrap_or(0)
    }

    pub fn degree_in(&self, a: &Atom) -> u32 {
        self.terms
            .keys()
            .map(|m| m.0.get(a).copied().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Leading (maximal-monomial) term under the canonical order.
    pub fn leading(&self) -> Option<(&Monomial, &BigRational)> {
        self.terms.iter().next_back()
    }

    /// Coefficient polynomials with respect to one atom, indexed by power.
    fn coeffs_in(&self, a: &Atom) -> Vec<Poly> {
        let deg = self.degree_in(a) as usize;
        let mut out = vec![Poly::zero(); deg + 1];
        for (m, c) in &self.terms {
            let e = m.0.get(a).copied().unwrap_or(0) as usize;
            let mut reduced = m.clone();
            reduced.0.remove(a);
            out[e].add_term(reduced, c.clone());
        }
        out
    }

    /// Exact division; `None` when the divisor does not divide exactly.
    pub fn div_exact(&self, divisor: &Poly) -> Option<Poly> {
        if divisor.is_zero() {
            return None;
        }
        if let Some(c) = divisor.as_constant() {
            return Some(self.scale(&c.recip()));
        }
        let mut rem = self.clone();
        let mut quot = Poly::zero();
        let (lm, lc) = divisor.leading().map(|(m, c)| (m.clone(), c.clone()))?;
        while !rem.is_zero() {
            let (rm, rc) = rem.leading().map(|(m, c)| (m.clone(), c.clone()))?;
            let qm = rm.divide_by(&lm)?;
            let qc = rc / lc.clone();
            let mut t = Poly::zero();
            t.add_term(qm, qc);
            quot = quot.add(&t);
            rem = rem.sub(&t.mul(divisor));
        }
        Some(quot)
    }

    /// Evaluate with rational values for every atom (atoms must all be bound).
    pub fn eval_rational(&self, point: &BTreeMap<Atom, BigRational>) -> Option<BigRational> {
        let mut acc = BigRational::zero();
        for (m, c) in &self.terms {
            let mut term = c.clone();
            for (a, e) in &m.0 {
                let v = point.get(a)?;
                let mut p = BigRational::one();
                for _ in 0..*e {
                    p *= v;
                }
                term *= p;
            }
            acc += term;
        }
        Some(acc)
    }

    // -- GCD machinery ------------------------------------------------------

    /// Primitive multivariate GCD, normalized to leading coefficient one.
    pub fn gcd(a: &Poly, b: &Poly) -> Poly {
        let g = Self::gcd_inner(a, b);
        g.monic()
    }

    pub fn monic(&self) -> Poly {
        match self.leading() {
            Some((_, lc)) => {
                let inv = lc.clone().recip();
                self.scale(&inv)
            }
            None => Poly::zero(),
        }
    }

    fn gcd_inner(a: &Poly, b: &Poly) -> Poly {
        if a.is_zero() {
            return b.clone();
        }
        if b.is_zero() {
            return a.clone();
        }
        if a.is_constant() || b.is_constant() {
            return Poly::one();
        }
        // main variable: the greatest atom appearing in either operand
        let mut atoms = a.atoms();
        atoms.extend(b.atoms());
        atoms.sort();
        atoms.dedup();
        let v = atoms.last().expect("non-constant poly has atoms").clone();

        let da = a.degree_in(&v);
        let db = b.degree_in(&v);
        if da == 0 {
            return Self::gcd_inner(a, &Self::content_in(b, &v));
        }
        if db == 0 {
            return Self::gcd_inner(&Self::content_in(a, &v), b);
        }

        let ca = Self::content_in(a, &v);
        let cb = Self::content_in(b, &v);
        let cont_gcd = Self::gcd_inner(&ca, &cb);
        let pa = a.div_exact(&ca).expect("content divides");
        let pb = b.div_exact(&cb).expect("content divides");

        let (mut f, mut g) = if da >= db { (pa, pb) } else { (pb, pa) };
        loop {
            let r = Self::pseudo_rem(&f, &g, &v);
            if r.is_zero() {
                break;
            }
            let rc = Self::content_in(&r, &v);
            let rp = r.div_exact(&rc).expect("content divides");
            f = g;
            g = rp;
            if g.degree_in(&v) == 0 {
                return cont_gcd;
            }
        }
        cont_gcd.mul(&g)
    }

    /// Content: GCD of the coefficient polynomials w.r.t. one variable.
    fn content_in(p: &Poly, v: &Atom) -> Poly {
        let coeffs = p.coeffs_in(v);
        let mut acc = Poly::zero();
        for c in coeffs {
            if !c.is_zero() {
                acc = Self::gcd_inner(&acc, &c);
                if acc.is_constant() {
                    return Poly::one();
                }
            }
        }
        if acc.is_zero() {
            Poly::one()
        } else {
            acc
        }
    }

    /// Pseudo-remainder of f by g in the variable v.
    fn pseudo_rem(f: &Poly, g: &Poly, v: &Atom) -> Poly {
        let dg = g.degree_in(v);
        let g_coeffs = g.coeffs_in(v);
        let glead = g_coeffs[dg as usize].clone();
        let mut r = f.clone();
        while !r.is_zero() {
            let dr = r.degree_in(v);
            if dr < dg {
                break;
            }
            let r_coeffs = r.coeffs_in(v);
            let rlead = r_coeffs[dr as usize].clone();
            // r := glead * r - rlead * v^(dr-dg) * g
            let shift = {
                let mut m = Monomial::unit();
                if dr > dg {
                    m.0.insert(v.clone(), dr - dg);
                }
                let mut p = Poly::zero();
                p.add_term(m, BigRational::one());
                p
            };
            r = r.mul(&glead).sub(&rlead.mul(&shift).mul(g));
        }
        r
    }

    /// Rewrite sin(u)^m with m >= 2 as (1 - cos(u)^2)^(m div 2) * sin(u)^(m mod 2),
    /// so that the Pythagorean identity holds in the canonical form.
    pub fn reduce_sin_squares(&self) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            let mut rest = Monomial::unit();
            let mut expansion = Poly::constant(c.clone());
            for (a, e) in &m.0 {
                match a {
                    Atom::Trans(UnaryFunc::Sin, arg) if *e >= 2 => {
                        let half = e / 2;
                        let parity = e % 2;
                        let cos_atom = Atom::Trans(UnaryFunc::Cos, arg.clone());
                        let one_minus_cos2 = Poly::one().sub(&Poly::var(cos_atom).pow(2));
                        expansion = expansion.mul(&one_minus_cos2.pow(half));
                        if parity == 1 {
                            rest.0.insert(a.clone(), 1);
                        }
                    }
                    _ => {
                        rest.0.insert(a.clone(), *e);
                    }
                }
            }
            let mut shifted = Poly::zero();
            for (em, ec) in &expansion.terms {
                shifted.add_term(em.mul(&rest), ec.clone());
            }
            out = out.add(&shifted);
        }
        out
    }

    pub fn to_expr(&self) -> Expr {
        if self.is_zero() {
            return Expr::zero();
        }
        let mut terms = Vec::new();
        for (m, c) in &self.terms {
            let mut factors = vec![Expr::Rational(c.clone())];
            for (a, e) in &m.0 {
                factors.push(a.to_expr().pow(*e as i64));
            }
            terms.push(Expr::product(factors));
        }
        Expr::sum(terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat;

    fn sym(name: &str) -> Atom {
        Atom::Sym(SymbolId::aux(name))
    }

    #[test]
    fn arithmetic_roundtrip() {
        let x = Poly::var(sym("x"));
        let y = Poly::var(sym("y"));
        // (x+y)^2 - x^2 - 2xy - y^2 == 0
        let lhs = x.add(&y).pow(2);
        let rhs = x
            .pow(2)
            .add(&x.mul(&y).scale(&rat(2, 1)))
            .add(&y.pow(2));
        assert!(lhs.sub(&rhs).is_zero());
    }

    #[test]
    fn exact_division() {
        let x = Poly::var(sym("x"));
        let y = Poly::var(sym("y"));
        let prod = x.add(&y).mul(&x.sub(&y));
        let q = prod.div_exact(&x.add(&y)).unwrap();
        assert!(q.sub(&x.sub(&y)).is_zero());
        assert!(x.pow(2).div_exact(&x.add(&y)).is_none());
    }

    #[test]
    fn gcd_cancels_common_factor() {
        let x = Poly::var(sym("x"));
        let y = Poly::var(sym("y"));
        // gcd((x+y)*x, (x+y)*y) = x+y (monic)
        let g = Poly::gcd(&x.add(&y).mul(&x), &x.add(&y).mul(&y));
        assert!(g.sub(&x.add(&y)).is_zero());
    }

    #[test]
    fn gcd_of_coprime_is_one() {
        let x = Poly::var(sym("x"));
        let y = Poly::var(sym("y"));
        let g = Poly::gcd(&x.add(&Poly::one()), &y.add(&Poly::one()));
        assert!(g.sub(&Poly::one()).is_zero());
    }

    #[test]
    fn gcd_univariate() {
        let x = Poly::var(sym("x"));
        // gcd(x^2-1, x^2+2x+1) = x+1
        let a = x.pow(2).sub(&Poly::one());
        let b = x.pow(2).add(&x.scale(&rat(2, 1))).add(&Poly::one());
        let g = Poly::gcd(&a, &b);
        assert!(g.sub(&x.add(&Poly::one())).is_zero());
    }

    #[test]
    fn sin_square_rewrite() {
        let arg = Expr::symbol(SymbolId::aux("x"));
        let s = Poly::var(Atom::Trans(UnaryFunc::Sin, arg.clone()));
        let c = Poly::var(Atom::Trans(UnaryFunc::Cos, arg));
        // sin^2 + cos^2 -> 1
        let total = s.pow(2).add(&c.pow(2)).reduce_sin_squares();
        assert!(total.sub(&Poly::one()).is_zero());
    }
}
