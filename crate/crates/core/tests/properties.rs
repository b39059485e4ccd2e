//! Property and invariant checks across the symbolic kernel and pipeline.

mod common;

use common::{analyze_file, assert_sym_eq, load_system, random_expr, random_point};
use hjcanon::expr::{
    normalize, parse, solve_linear_system, Expr, NormalForm, SymbolId, SymbolTable,
};
use hjcanon::legendre::{generic_rank, hessian};
use hjcanon::model::{phase_layout, validate_spec, SystemSpec};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;

fn aux(name: &str) -> SymbolId {
    SymbolId::aux(name)
}

#[test]
fn differentiation_product_rule_on_random_corpus() {
    let symbols = vec![aux("x"), aux("y"), aux("z")];
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..40 {
        let f = random_expr(&mut rng, &symbols, 2);
        let g = random_expr(&mut rng, &symbols, 2);
        let x = &symbols[rng.random_range(0..symbols.len())];
        let lhs = f.clone().mul(g.clone()).differentiate(x);
        let rhs = f
            .clone()
            .differentiate(x)
            .mul(g.clone())
            .add(f.clone().mul(g.clone().differentiate(x)));
        assert!(
            normalize(&lhs.sub(rhs)).unwrap().is_zero(),
            "product rule failed for f={f}, g={g}"
        );
    }
}

#[test]
fn differentiation_linearity_on_random_corpus() {
    let symbols = vec![aux("x"), aux("y")];
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..40 {
        let f = random_expr(&mut rng, &symbols, 2);
        let g = random_expr(&mut rng, &symbols, 2);
        let x = &symbols[0];
        let lhs = f
            .clone()
            .mul(Expr::rational(3, 2))
            .add(g.clone().mul(Expr::rational(-5, 7)))
            .differentiate(x);
        let rhs = f
            .differentiate(x)
            .mul(Expr::rational(3, 2))
            .add(g.differentiate(x).mul(Expr::rational(-5, 7)));
        assert!(normalize(&lhs.sub(rhs)).unwrap().is_zero());
    }
}

#[test]
fn substitution_commutes_with_differentiation() {
    // when the substituted symbol differs from the derivative symbol and
    // the replacement does not contain the derivative symbol
    let symbols = vec![aux("x"), aux("y"), aux("z")];
    let mut rng = StdRng::seed_from_u64(13);
    for _ in 0..30 {
        let f = random_expr(&mut rng, &symbols, 2);
        let replacement = random_expr(&mut rng, &symbols[2..], 1); // z only
        let mut map = BTreeMap::new();
        map.insert(aux("y"), replacement);
        let x = aux("x");
        let lhs = f.substitute(&map).unwrap().differentiate(&x);
        let rhs = f.differentiate(&x).substitute(&map).unwrap();
        assert!(
            normalize(&lhs.sub(rhs)).unwrap().is_zero(),
            "commute failed for f={f}"
        );
    }
}

#[test]
fn normalization_preserves_value_at_random_points() {
    let symbols = vec![aux("x"), aux("y")];
    let mut rng = StdRng::seed_from_u64(17);
    let mut checked = 0;
    for _ in 0..40 {
        let e = random_expr(&mut rng, &symbols, 3);
        let Ok(nf) = normalize(&e) else {
            continue;
        };
        let canonical = nf.to_expr();
        for _ in 0..4 {
            let point = random_point(&mut rng, &symbols);
            let (Ok(v1), Ok(v2)) = (e.evaluate(&point), canonical.evaluate(&point)) else {
                continue;
            };
            let scale = 1.0 + v1.abs();
            assert!(
                (v1 - v2).abs() <= 1e-9 * scale,
                "normalize changed value of {e}: {v1} vs {v2}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} comparisons ran");
}

#[test]
fn finite_difference_matches_symbolic_derivative() {
    // d/dx of sin(x) * x^3 checked against a central difference at random
    // points: the derivative path and the evaluation path are independent
    let x = aux("x");
    let e = Expr::symbol(x.clone()).sin().mul(Expr::symbol(x.clone()).pow(3));
    let de = e.differentiate(&x);
    let mut rng = StdRng::seed_from_u64(19);
    for _ in 0..100 {
        let at = rng.random_range(-2.0..2.0f64);
        let h = 1e-5;
        let eval = |v: f64| {
            let mut p = BTreeMap::new();
            p.insert(x.clone(), v);
            e.evaluate(&p).unwrap()
        };
        let numeric = (eval(at + h) - eval(at - h)) / (2.0 * h);
        let mut p = BTreeMap::new();
        p.insert(x.clone(), at);
        let symbolic = de.evaluate(&p).unwrap();
        let scale = 1.0 + symbolic.abs();
        assert!(
            (numeric - symbolic).abs() <= 1e-6 * scale,
            "at {at}: fd {numeric} vs sym {symbolic}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// parse(print(e)) is symbolically equal to e.
    #[test]
    fn parser_round_trip(seed in any::<u64>()) {
        let table = SymbolTable::new(vec!["q1".into(), "q2".into()], 2);
        let symbols = vec![
            SymbolId::jet(1, 0),
            SymbolId::jet(1, 2),
            SymbolId::jet(2, 1),
            SymbolId::momentum(0, 1),
            SymbolId::Time,
        ];
        let mut rng = StdRng::seed_from_u64(seed);
        let e = random_expr(&mut rng, &symbols, 3);
        let printed = e.render(Some(&table));
        let reparsed = parse(&printed, &table)
            .unwrap_or_else(|err| panic!("`{printed}` failed to reparse: {err}"));
        prop_assert!(
            normalize(&e.sub(reparsed)).unwrap().is_zero(),
            "round trip drift for `{}`", printed
        );
    }

    /// Normalization is idempotent.
    #[test]
    fn normalize_idempotent(seed in any::<u64>()) {
        let symbols = vec![SymbolId::aux("x"), SymbolId::aux("y")];
        let mut rng = StdRng::seed_from_u64(seed);
        let e = random_expr(&mut rng, &symbols, 3);
        if let Ok(nf) = normalize(&e) {
            let again = normalize(&nf.to_expr()).unwrap();
            prop_assert!(nf == again, "normalize not idempotent for {}", e);
        }
    }
}

#[test]
fn phase_dimension_is_always_2nk() {
    for (name, n, k) in [
        ("oscillator.hjl", 1, 1),
        ("s2.hjl", 2, 2),
        ("pu.hjl", 1, 2),
        ("s3.hjl", 2, 1),
    ] {
        let spec = load_system(name);
        assert_eq!(phase_layout(&spec).dimension(), 2 * n * k);
    }
}

#[test]
fn corpus_validates_and_mutants_fail() {
    for name in [
        "oscillator.hjl",
        "free.hjl",
        "jet2.hjl",
        "s2.hjl",
        "pu.hjl",
        "noninv.hjl",
        "s3.hjl",
        "total_derivative.hjl",
    ] {
        let spec = load_system(name);
        assert!(
            validate_spec(&spec).is_valid(),
            "corpus file {name} must validate"
        );
    }
    // degree bump
    let bad = SystemSpec::parse_hjl("system { coordinates: q; order: 2; lagrangian: q''^3; }")
        .unwrap();
    assert!(!validate_spec(&bad).is_valid());
    // transcendental of the top derivative
    let bad =
        SystemSpec::parse_hjl("system { coordinates: q; order: 2; lagrangian: exp(q''); }")
            .unwrap();
    assert!(!validate_spec(&bad).is_valid());
    // level overflow is a parse error
    assert!(
        SystemSpec::parse_hjl("system { coordinates: q; order: 2; lagrangian: q'''^2; }").is_err()
    );
}

#[test]
fn rank_at_special_points_never_exceeds_generic_rank() {
    // Hessian [[q1, 0], [0, 0]]: rank drops at q1 = 0, never rises
    let spec =
        SystemSpec::parse_hjl("system { coordinates: q1, q2; order: 2; lagrangian: q1*q1''^2/2; }")
            .unwrap();
    let h = hessian(&spec).unwrap();
    let generic = generic_rank(&h, 5, 42).unwrap();
    assert_eq!(generic.rank, 1);

    let mut rng = StdRng::seed_from_u64(23);
    for trial in 0..8 {
        let q1_value = if trial == 0 {
            Expr::zero() // the special point where the Hessian degenerates
        } else {
            Expr::rational(rng.random_range(-9..=9), rng.random_range(1..=9))
        };
        let mut at = BTreeMap::new();
        at.insert(SymbolId::jet(1, 0), q1_value);
        let entries: Vec<_> = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| {
                normalize(&h.entry(i, j).substitute(&at).unwrap())
                    .unwrap()
                    .as_constant()
                    .expect("fully bound")
            })
            .collect();
        let (rank, _) = hjcanon::expr::rational_rank(
            2,
            2,
            |i, j| entries[i * 2 + j].clone(),
            &[0, 1],
        );
        assert!(rank <= generic.rank, "rank {rank} exceeds generic");
    }
}

#[test]
fn bracket_bilinearity() {
    let spec = load_system("s3.hjl");
    let layout = phase_layout(&spec);
    let symbols = layout.symbols();
    let mut rng = StdRng::seed_from_u64(29);
    for _ in 0..20 {
        let f = random_expr(&mut rng, &symbols, 2);
        let g = random_expr(&mut rng, &symbols, 2);
        let h = random_expr(&mut rng, &symbols, 2);
        let (a, b) = (Expr::rational(2, 3), Expr::rational(-7, 5));
        let lhs = hjcanon::hj::poisson_bracket(
            &f.clone().mul(a.clone()).add(g.clone().mul(b.clone())),
            &h,
            &layout,
        )
        .unwrap();
        let rhs = hjcanon::hj::poisson_bracket(&f, &h, &layout)
            .unwrap()
            .mul(a)
            .add(hjcanon::hj::poisson_bracket(&g, &h, &layout).unwrap().mul(b));
        assert!(normalize(&lhs.sub(rhs)).unwrap().is_zero());
    }
}

#[test]
fn added_constraints_are_independent() {
    // the Jacobian of the constraint list has full row rank at random points
    let mut rng = StdRng::seed_from_u64(31);
    for name in ["s2.hjl", "s3.hjl", "total_derivative.hjl"] {
        let a = analyze_file(name);
        let constraints: Vec<Expr> = a.set.constraints().map(|g| g.full_expr()).collect();
        if constraints.is_empty() {
            continue;
        }
        let layout = phase_layout(&a.spec);
        let symbols = layout.symbols();
        for _ in 0..3 {
            let mut point = random_point(&mut rng, &symbols);
            point.insert(SymbolId::Time, 0.0);
            let mut mat: Vec<Vec<f64>> = Vec::new();
            for c in &constraints {
                mat.push(
                    symbols
                        .iter()
                        .map(|s| c.differentiate(s).evaluate(&point).unwrap())
                        .collect(),
                );
            }
            assert_eq!(
                float_row_rank(mat, 1e-9),
                constraints.len(),
                "{name}: dependent constraint rows"
            );
        }
    }
}

fn float_row_rank(mut mat: Vec<Vec<f64>>, tol: f64) -> usize {
    let rows = mat.len();
    let cols = mat.first().map(|r| r.len()).unwrap_or(0);
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

/// Classical first-order Legendre transform computed directly: solve
/// p_i = dL/dv_i as a linear system and build H = sum p v - L. This is an
/// independent route to compare the pipeline's Hamiltonian against.
fn direct_first_order_hamiltonian(spec: &SystemSpec) -> Expr {
    assert_eq!(spec.k(), 1);
    let n = spec.n();
    let velocities: Vec<SymbolId> = (1..=n).map(|i| SymbolId::jet(i, 1)).collect();
    // dL/dv = A v + b
    let mut zero_map = BTreeMap::new();
    for v in &velocities {
        zero_map.insert(v.clone(), Expr::zero());
    }
    let mut a: Vec<Vec<NormalForm>> = Vec::new();
    let mut rhs: Vec<NormalForm> = Vec::new();
    for i in 1..=n {
        let grad = spec.lagrangian().differentiate(&velocities[i - 1]);
        let row: Vec<NormalForm> = velocities
            .iter()
            .map(|v| normalize(&grad.differentiate(v)).unwrap())
            .collect();
        a.push(row);
        let b = grad.substitute(&zero_map).unwrap();
        rhs.push(
            normalize(&Expr::symbol(SymbolId::momentum(0, i)).sub(b)).unwrap(),
        );
    }
    let sol = solve_linear_system(&a, &rhs)
        .unwrap()
        .expect("regular system");
    let mut v_map = BTreeMap::new();
    for (i, v) in velocities.iter().enumerate() {
        v_map.insert(v.clone(), sol[i].to_expr());
    }
    let mut h = spec.lagrangian().substitute(&v_map).unwrap().neg();
    for i in 1..=n {
        h = h.add(
            Expr::symbol(SymbolId::momentum(0, i)).mul(v_map[&velocities[i - 1]].clone()),
        );
    }
    h
}

#[test]
fn first_order_hamiltonian_matches_direct_legendre_transform() {
    for text in [
        "system { coordinates: q; order: 1; lagrangian: q'^2/2 - q^2/2; }",
        "system { coordinates: q; order: 1; lagrangian: q'^2/2; }",
        "system { coordinates: q1, q2; order: 1; lagrangian: q1'^2/2 + q2'^2/2 + q1*q2; }",
        "system { coordinates: q1, q2; order: 1; lagrangian: q1'^2 + q1'*q2' + q2'^2 - q1^2; }",
    ] {
        let spec = SystemSpec::parse_hjl(text).unwrap();
        let analysis =
            hjcanon::legendre::analyze(&spec, hjcanon::legendre::LegendreOptions::default())
                .unwrap();
        assert!(analysis.partition.degenerate.is_empty());
        let direct = direct_first_order_hamiltonian(&spec);
        assert_sym_eq(&analysis.hamiltonian, &direct);
    }
}

#[test]
fn closed_systems_keep_every_total_differential_zero() {
    for name in ["oscillator.hjl", "free.hjl", "jet2.hjl", "s2.hjl", "pu.hjl"] {
        let a = analyze_file(name);
        assert_eq!(
            a.closure.status,
            hjcanon::hj::ClosureStatus::ClosedFirstClass,
            "{name}"
        );
        for (x, y, r) in &a.closure.final_brackets {
            assert!(r.is_zero(), "{name}: ({x},{y}) residual {r}");
        }
    }
}

#[test]
fn closure_iteration_bound_holds_across_corpus() {
    for name in [
        "oscillator.hjl",
        "free.hjl",
        "jet2.hjl",
        "s2.hjl",
        "pu.hjl",
        "noninv.hjl",
        "s3.hjl",
        "total_derivative.hjl",
    ] {
        let a = analyze_file(name);
        let bound = 2 * a.spec.n() * a.spec.k() + 1;
        assert!(
            a.closure.iterations <= bound,
            "{name}: {} iterations > {bound}",
            a.closure.iterations
        );
    }
}
