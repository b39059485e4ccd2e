//! Analysis report: a serializable echo of the whole pipeline. JSON is the
//! canonical machine format; the text and LaTeX renderings are display-only.

use crate::action::{ActionForm, ExponentSummary, ReducedPhaseSpace};
use crate::expr::{Expr, SymbolId, SymbolTable};
use crate::hj::{ClosureReport, GenOrigin, GeneratorSet, TotalDifferentialSystem};
use crate::legendre::LegendreAnalysis;
use crate::model::SystemSpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    pub format: String,
    pub seed: u64,
    pub rank_samples: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEcho {
    pub coordinates: Vec<String>,
    pub order: usize,
    pub lagrangian: String,
    pub phase_dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEcho {
    pub hessian: Vec<Vec<String>>,
    pub generic_rank: usize,
    pub regular: Vec<String>,
    pub degenerate: Vec<String>,
    pub column_order: Vec<usize>,
    pub samples_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEcho {
    pub label: String,
    pub parameter: Option<String>,
    pub expression: String,
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEcho {
    pub iteration: usize,
    pub bracket: [String; 2],
    pub residual: String,
    pub action_taken: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureEcho {
    pub status: String,
    pub iterations: usize,
    pub additions: Vec<GeneratorEcho>,
    pub trace: Vec<TraceEcho>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEcho {
    /// parameter -> coefficient of its differential in dZ
    pub terms: BTreeMap<String, String>,
    pub measure: Vec<[String; 2]>,
    pub exponent: String,
}

/// Full machine-readable analysis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub flags: ReportFlags,
    pub system: SystemEcho,
    pub rank: RankEcho,
    pub accelerations: BTreeMap<String, String>,
    pub hamiltonian: String,
    pub generators: Vec<GeneratorEcho>,
    pub closure: ClosureEcho,
    /// phase symbol -> parameter -> coefficient (zero entries omitted)
    pub equations_of_motion: BTreeMap<String, BTreeMap<String, String>>,
    pub action: Option<ActionEcho>,
    pub reduced_coordinates: Vec<String>,
    pub reduced_momenta: Vec<String>,
    pub warnings: Vec<String>,
}

pub struct ReportInputs<'a> {
    pub spec: &'a SystemSpec,
    pub analysis: &'a LegendreAnalysis,
    pub set: &'a GeneratorSet,
    pub closure: &'a ClosureReport,
    pub eom: Option<&'a TotalDifferentialSystem>,
    pub action: Option<(&'a ActionForm, &'a ReducedPhaseSpace, &'a ExponentSummary)>,
    pub command: &'a str,
    pub flags: ReportFlags,
}

fn sym_text(table: &SymbolTable, s: &SymbolId) -> String {
    Expr::symbol(s.clone()).render(Some(table))
}

pub fn build_report(inputs: ReportInputs<'_>) -> AnalysisReport {
    let table = inputs.spec.symbol_table();
    let render = |e: &Expr| e.render(Some(table));

    let n = inputs.analysis.hessian.n();
    let hessian = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| render(inputs.analysis.hessian.entry(i, j)))
                .collect()
        })
        .collect();
    let coord_name = |i: usize| inputs.spec.coordinates()[i - 1].clone();

    let gen_echo = |g: &crate::hj::Generator| GeneratorEcho {
        label: g.label.to_string(),
        parameter: g.parameter.as_ref().map(|p| sym_text(table, p)),
        expression: if g.is_hamiltonian() {
            format!("p_t + {}", render(&g.h_part))
        } else {
            render(&g.full_expr())
        },
        origin: match &g.origin {
            GenOrigin::Hamiltonian => "hamiltonian".to_string(),
            GenOrigin::Primary => "primary".to_string(),
            GenOrigin::Chain { from } => format!("chain[{}, {}]", from.0, from.1),
        },
    };

    let additions = inputs
        .closure
        .additions
        .iter()
        .map(|(label, expr, from)| GeneratorEcho {
            label: label.to_string(),
            parameter: inputs
                .set
                .get(*label)
                .and_then(|g| g.parameter.as_ref())
                .map(|p| sym_text(table, p)),
            expression: render(expr),
            origin: format!("chain[{}, {}]", from.0, from.1),
        })
        .collect();

    let trace = inputs
        .closure
        .trace
        .iter()
        .map(|t| TraceEcho {
            iteration: t.iteration,
            bracket: [t.bracket.0.to_string(), t.bracket.1.to_string()],
            residual: render(&t.residual),
            action_taken: t.action.to_string(),
        })
        .collect();

    let mut eom_map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    if let Some(system) = inputs.eom {
        for (sym, coeffs) in &system.rows {
            let mut row = BTreeMap::new();
            for ((_, param), coeff) in system.parameters.iter().zip(coeffs) {
                if !coeff.is_zero() {
                    row.insert(sym_text(table, param), render(coeff));
                }
            }
            eom_map.insert(sym_text(table, sym), row);
        }
    }

    let action = inputs.action.map(|(form, _, summary)| ActionEcho {
        terms: form
            .terms
            .iter()
            .map(|(_, p, c)| (sym_text(table, p), render(c)))
            .collect(),
        measure: summary
            .measure
            .iter()
            .map(|(q, p)| [sym_text(table, q), sym_text(table, p)])
            .collect(),
        exponent: summary.render_text(Some(table)),
    });

    let (reduced_coordinates, reduced_momenta) = match inputs.action {
        Some((_, red, _)) => (
            red.pairs.iter().map(|(q, _)| sym_text(table, q)).collect(),
            red.pairs.iter().map(|(_, p)| sym_text(table, p)).collect(),
        ),
        None => (Vec::new(), Vec::new()),
    };

    let mut warnings = Vec::new();
    if inputs.spec.k() >= 2 {
        warnings.push(
            "lower-level momenta are independent phase-space variables; the relation \
             p_(m-1) = dL/dq^(m) - d/dt p_(m) is recovered by the momentum equations \
             of motion rather than imposed as a definition"
                .to_string(),
        );
    }
    warnings.push(
        "momentum evolution equations are emitted for every phase momentum, including \
         those conjugate to promoted coordinates"
            .to_string(),
    );

    AnalysisReport {
        tool: "hjcanon".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: inputs.command.to_string(),
        flags: inputs.flags,
        system: SystemEcho {
            coordinates: inputs.spec.coordinates().to_vec(),
            order: inputs.spec.k(),
            lagrangian: render(inputs.spec.lagrangian()),
            phase_dimension: 2 * inputs.spec.n() * inputs.spec.k(),
        },
        rank: RankEcho {
            hessian,
            generic_rank: inputs.analysis.partition.rank,
            regular: inputs
                .analysis
                .partition
                .regular
                .iter()
                .map(|&i| coord_name(i))
                .collect(),
            degenerate: inputs
                .analysis
                .partition
                .degenerate
                .iter()
                .map(|&i| coord_name(i))
                .collect(),
            column_order: inputs.analysis.partition.column_order.clone(),
            samples_used: inputs.analysis.partition.samples_used,
        },
        accelerations: inputs
            .analysis
            .accelerations
            .solved
            .iter()
            .map(|(a, w)| {
                (
                    sym_text(table, &SymbolId::jet(*a, inputs.spec.k())),
                    render(w),
                )
            })
            .collect(),
        hamiltonian: render(&inputs.analysis.hamiltonian),
        generators: inputs.set.generators().iter().map(gen_echo).collect(),
        closure: ClosureEcho {
            status: inputs.closure.status.to_string(),
            iterations: inputs.closure.iterations,
            additions,
            trace,
        },
        equations_of_motion: eom_map,
        action,
        reduced_coordinates,
        reduced_momenta,
        warnings,
    }
}

pub fn to_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn render_text(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!(
        "{} {} :: {}",
        report.tool, report.version, report.command
    ));
    line(format!(
        "system: coordinates [{}], order {}",
        report.system.coordinates.join(", "),
        report.system.order
    ));
    line(format!("lagrangian: {}", report.system.lagrangian));
    line(format!("phase dimension: {}", report.system.phase_dimension));
    line(String::new());
    line("hessian in top derivatives:".to_string());
    for row in &report.rank.hessian {
        line(format!("  [ {} ]", row.join(", ")));
    }
    line(format!(
        "generic rank {} (regular: [{}], degenerate: [{}], samples: {})",
        report.rank.generic_rank,
        report.rank.regular.join(", "),
        report.rank.degenerate.join(", "),
        report.rank.samples_used
    ));
    if !report.accelerations.is_empty() {
        line("solved accelerations:".to_string());
        for (sym, w) in &report.accelerations {
            line(format!("  {sym} = {w}"));
        }
    }
    line(format!("H0 = {}", report.hamiltonian));
    line(String::new());
    line("generators:".to_string());
    for g in &report.generators {
        let param = g
            .parameter
            .as_ref()
            .map(|p| format!(" [parameter {p}]"))
            .unwrap_or_default();
        line(format!(
            "  {} = {}{param} ({})",
            g.label, g.expression, g.origin
        ));
    }
    line(format!(
        "closure: {} after {} iterations, {} additions",
        report.closure.status,
        report.closure.iterations,
        report.closure.additions.len()
    ));
    for t in &report.closure.trace {
        line(format!(
            "  it {}: {{{}, {}}} = {} -> {}",
            t.iteration, t.bracket[0], t.bracket[1], t.residual, t.action_taken
        ));
    }
    if !report.equations_of_motion.is_empty() {
        line(String::new());
        line("equations of motion:".to_string());
        for (sym, row) in &report.equations_of_motion {
            if row.is_empty() {
                line(format!("  d{sym} = 0"));
                continue;
            }
            let rhs = row
                .iter()
                .map(|(p, c)| format!("({c}) d{p}"))
                .collect::<Vec<_>>()
                .join(" + ");
            line(format!("  d{sym} = {rhs}"));
        }
    }
    if let Some(action) = &report.action {
        line(String::new());
        line("action differential:".to_string());
        for (p, c) in &action.terms {
            line(format!("  dZ += ({c}) d{p}"));
        }
        line(format!("path integral: {}", action.exponent));
        line(format!(
            "reduced phase space: coordinates [{}], momenta [{}]",
            report.reduced_coordinates.join(", "),
            report.reduced_momenta.join(", ")
        ));
    }
    line(String::new());
    for w in &report.warnings {
        line(format!("note: {w}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{action_differential, path_integral_exponent, reduced_space};
    use crate::hj::{build_generators, eom_forms, integrability_closure};
    use crate::legendre::{self, LegendreOptions};

    fn report_for(text: &str) -> AnalysisReport {
        let spec = SystemSpec::parse_hjl(text).unwrap();
        let analysis = legendre::analyze(&spec, LegendreOptions::default()).unwrap();
        let set = build_generators(&spec, &analysis).unwrap();
        let (set, closure) = integrability_closure(set, 25).unwrap();
        let eom = eom_forms(&set, closure.status, true).unwrap();
        let red = reduced_space(&set);
        let form = action_differential(&set, closure.status, &red).ok();
        let summary = form.as_ref().map(|f| path_integral_exponent(f, &red));
        let action = form
            .as_ref()
            .zip(summary.as_ref())
            .map(|(f, s)| (f, &red, s));
        build_report(ReportInputs {
            spec: &spec,
            analysis: &analysis,
            set: &set,
            closure: &closure,
            eom: Some(&eom),
            action,
            command: "analyze",
            flags: ReportFlags {
                format: "json".into(),
                seed: 42,
                rank_samples: 5,
                max_iter: 25,
                tol: 1e-10,
                force: false,
            },
        })
    }

    #[test]
    fn json_round_trip() {
        let report =
            report_for("system { coordinates: q1, q2; order: 2; lagrangian: (q1''-q2')^2/2; }");
        let json = to_json(&report);
        let parsed: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(to_json(&parsed), json);
    }

    #[test]
    fn report_is_deterministic() {
        let a = report_for("system { coordinates: q; order: 2; lagrangian: q''^2/2; }");
        let b = report_for("system { coordinates: q; order: 2; lagrangian: q''^2/2; }");
        assert_eq!(to_json(&a), to_json(&b));
    }

    #[test]
    fn warnings_mention_momentum_convention_for_higher_order() {
        let report = report_for("system { coordinates: q; order: 2; lagrangian: q''^2/2; }");
        assert!(report.warnings.iter().any(|w| w.contains("recovered")));
        let first = report_for("system { coordinates: q; order: 1; lagrangian: q'^2/2; }");
        assert!(!first.warnings.iter().any(|w| w.contains("recovered")));
    }

    #[test]
    fn text_rendering_contains_key_sections() {
        let report =
            report_for("system { coordinates: q1, q2; order: 2; lagrangian: (q1''-q2')^2/2; }");
        let text = render_text(&report);
        assert!(text.contains("generic rank 1"));
        assert!(text.contains("closure: closed_first_class"));
        assert!(text.contains("H0 ="));
        assert!(text.contains("action differential"));
    }
}
