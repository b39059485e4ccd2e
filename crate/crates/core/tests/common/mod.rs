//! Shared helpers for the integration test suites.
#![allow(dead_code)]

use hjcanon::action::{action_differential, reduced_space, ActionForm, ReducedPhaseSpace};
use hjcanon::expr::{Expr, SymbolId};
use hjcanon::hj::{
    build_generators, eom_forms, integrability_closure, ClosureReport, GeneratorSet,
    TotalDifferentialSystem,
};
use hjcanon::legendre::{self, LegendreAnalysis, LegendreOptions};
use hjcanon::model::SystemSpec;
use rand::rngs::StdRng;
use rand::Rng;
use std::collections::BTreeMap;
use std::path::PathBuf;

pub struct Analyzed {
    pub spec: SystemSpec,
    pub analysis: LegendreAnalysis,
    pub set: GeneratorSet,
    pub closure: ClosureReport,
}

pub fn systems_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../systems")
        .canonicalize()
        .expect("systems directory exists")
}

pub fn load_system(name: &str) -> SystemSpec {
    let path = systems_dir().join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    SystemSpec::parse_hjl(&text).expect("corpus file parses")
}

pub fn analyze(spec: SystemSpec) -> Analyzed {
    let analysis = legendre::analyze(&spec, LegendreOptions::default()).expect("legendre stage");
    let set = build_generators(&spec, &analysis).expect("generators");
    let max_iter = 2 * spec.n() * spec.k() + 1;
    let (set, closure) = integrability_closure(set, max_iter).expect("closure settles");
    Analyzed {
        spec,
        analysis,
        set,
        closure,
    }
}

pub fn analyze_file(name: &str) -> Analyzed {
    analyze(load_system(name))
}

impl Analyzed {
    pub fn eom(&self, force: bool) -> TotalDifferentialSystem {
        eom_forms(&self.set, self.closure.status, force).expect("equations of motion")
    }

    pub fn reduced(&self) -> ReducedPhaseSpace {
        reduced_space(&self.set)
    }

    pub fn action_form(&self) -> ActionForm {
        let red = self.reduced();
        action_differential(&self.set, self.closure.status, &red).expect("action form")
    }
}

pub fn assert_sym_eq(a: &Expr, b: &Expr) {
    let diff = a.clone().sub(b.clone());
    assert!(
        hjcanon::expr::normalize(&diff).unwrap().is_zero(),
        "expected {a} == {b}"
    );
}

pub fn init_map(entries: &[(SymbolId, f64)]) -> BTreeMap<SymbolId, f64> {
    entries.iter().cloned().collect()
}

/// Random expression over the given symbols: polynomial-ish trees with
/// small exact coefficients and occasional transcendental leaves.
pub fn random_expr(rng: &mut StdRng, symbols: &[SymbolId], depth: usize) -> Expr {
    if depth == 0 {
        return match rng.random_range(0..4u8) {
            0 => Expr::rational(rng.random_range(-3i64..=3), rng.random_range(1i64..=3)),
            1 | 2 => Expr::symbol(symbols[rng.random_range(0..symbols.len())].clone()),
            _ => {
                let s = Expr::symbol(symbols[rng.random_range(0..symbols.len())].clone());
                match rng.random_range(0..3u8) {
                    0 => s.sin(),
                    1 => s.cos(),
                    _ => s,
                }
            }
        };
    }
    match rng.random_range(0..4u8) {
        0 => {
            let a = random_expr(rng, symbols, depth - 1);
            let b = random_expr(rng, symbols, depth - 1);
            a.add(b)
        }
        1 => {
            let a = random_expr(rng, symbols, depth - 1);
            let b = random_expr(rng, symbols, depth - 1);
            a.mul(b)
        }
        2 => random_expr(rng, symbols, depth - 1).pow(2),
        _ => {
            let a = random_expr(rng, symbols, depth - 1);
            let b = random_expr(rng, symbols, depth - 1);
            a.sub(b)
        }
    }
}

/// Random point with every symbol bound, away from the origin poles.
pub fn random_point(rng: &mut StdRng, symbols: &[SymbolId]) -> BTreeMap<SymbolId, f64> {
    symbols
        .iter()
        .map(|s| (s.clone(), rng.random_range(-1.0..1.0)))
        .collect()
}
