//! Problem statement: a higher-order Lagrangian system with `n` coordinates
//! and top derivative order `k`, plus the phase-space layout the canonical
//! analysis works on.

use crate::expr::{normalize, parse, Expr, NormalizeError, ParseError, SymbolId, SymbolTable};
use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt;

/// A validated (or to-be-validated) system: coordinates, order, Lagrangian.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    table: SymbolTable,
    lagrangian: Expr,
}

/// Ordered phase space: 2nk symbols, jets paired with conjugate momenta,
/// level-major and index-minor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseLayout {
    pairs: Vec<(SymbolId, SymbolId)>,
}

/// One problem found while validating a system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SpecViolation {
    /// Lagrangian mentions a symbol outside the jet bundle and time.
    ForeignSymbol { symbol: String },
    /// Degree above two in the top-level derivatives (jointly).
    DegreeAboveTwo { witness: String },
    /// sin/cos/exp applied to something containing a top-level derivative.
    TranscendentalOfTopDerivative { argument: String },
    /// The Lagrangian is not a valid rational expression (zero denominator).
    DegenerateExpression { detail: String },
    /// Structural bounds: order must be at least one, coordinates nonempty.
    EmptySystem,
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::ForeignSymbol { symbol } => {
                write!(f, "lagrangian references non-configuration symbol `{symbol}`")
            }
            SpecViolation::DegreeAboveTwo { witness } => {
                write!(f, "degree > 2 in top derivative (witness {witness})")
            }
            SpecViolation::TranscendentalOfTopDerivative { argument } => {
                write!(f, "transcendental of top derivative: {argument}")
            }
            SpecViolation::DegenerateExpression { detail } => {
                write!(f, "degenerate expression: {detail}")
            }
            SpecViolation::EmptySystem => write!(f, "system needs n >= 1 and k >= 1"),
        }
    }
}

/// Outcome of validation; empty means the system is analyzable.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<SpecViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Errors loading a `.hjl` file.
#[derive(Debug, thiserror::Error)]
pub enum HjlError {
    #[error("missing `system {{ ... }}` block")]
    MissingSystemBlock,
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("invalid coordinate name `{0}`")]
    InvalidCoordinateName(String),
    #[error("lagrangian: {0}")]
    Lagrangian(#[from] ParseError),
    #[error("malformed entry `{0}` (expected `key: value;`)")]
    MalformedEntry(String),
}

impl SystemSpec {
    pub fn new(coords: Vec<String>, order: usize, lagrangian: Expr) -> Self {
        SystemSpec {
            table: SymbolTable::new(coords, order),
            lagrangian,
        }
    }

    pub fn n(&self) -> usize {
        self.table.coordinate_count()
    }

    pub fn k(&self) -> usize {
        self.table.order()
    }

    pub fn coordinates(&self) -> &[String] {
        self.table.coordinate_names()
    }

    pub fn lagrangian(&self) -> &Expr {
        &self.lagrangian
    }

    pub fn symbol_table(&self) -> &SymbolTable {
        &self.table
    }

    /// The level-k jet symbols, one per coordinate.
    pub fn top_jets(&self) -> Vec<SymbolId> {
        (1..=self.n()).map(|i| SymbolId::jet(i, self.k())).collect()
    }

    /// Parse the `.hjl` file format:
    ///
    /// ```text
    /// system {
    ///   coordinates: q1, q2;
    ///   order: 2;
    ///   lagrangian: (1/2)*(q1'' - q2')^2;
    /// }
    /// ```
    ///
    /// Keys may appear in any order; `#` starts a line comment.
    pub fn parse_hjl(text: &str) -> Result<SystemSpec, HjlError> {
        let stripped: String = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .collect::<Vec<_>>()
            .join("\n");
        let open = stripped.find('{').ok_or(HjlError::MissingSystemBlock)?;
        let head = stripped[..open].trim();
        if head != "system" {
            return Err(HjlError::MissingSystemBlock);
        }
        let close = stripped.rfind('}').ok_or(HjlError::MissingSystemBlock)?;
        let body = &stripped[open + 1..close];

        let mut coordinates: Option<Vec<String>> = None;
        let mut order: Option<usize> = None;
        let mut lagrangian_text: Option<String> = None;
        for entry in body.split(';') {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            let Some((key, value)) = entry.split_once(':') else {
                return Err(HjlError::MalformedEntry(entry.to_string()));
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "coordinates" => {
                    if coordinates.is_some() {
                        return Err(HjlError::DuplicateKey(key.into()));
                    }
                    let names: Vec<String> =
                        value.split(',').map(|s| s.trim().to_string()).collect();
                    for name in &names {
                        let ok = !name.is_empty()
                            && name.chars().next().unwrap().is_ascii_alphabetic()
                            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                            && !matches!(name.as_str(), "t" | "tau" | "sin" | "cos" | "exp" | "p");
                        if !ok {
                            return Err(HjlError::InvalidCoordinateName(name.clone()));
                        }
                    }
                    coordinates = Some(names);
                }
                "order" => {
                    if order.is_some() {
                        return Err(HjlError::DuplicateKey(key.into()));
                    }
                    order = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| HjlError::InvalidOrder(e.to_string()))?,
                    );
                }
                "lagrangian" => {
                    if lagrangian_text.is_some() {
                        return Err(HjlError::DuplicateKey(key.into()));
                    }
                    lagrangian_text = Some(value.to_string());
                }
                other => return Err(HjlError::UnknownKey(other.to_string())),
            }
        }
        let coords = coordinates.ok_or(HjlError::MissingKey("coordinates"))?;
        let k = order.ok_or(HjlError::MissingKey("order"))?;
        let ltext = lagrangian_text.ok_or(HjlError::MissingKey("lagrangian"))?;
        let table = SymbolTable::new(coords, k);
        let lagrangian = parse(&ltext, &table)?;
        Ok(SystemSpec { table, lagrangian })
    }

    /// Render back to `.hjl` text.
    pub fn to_hjl(&self) -> String {
        format!(
            "system {{\n  coordinates: {};\n  order: {};\n  lagrangian: {};\n}}\n",
            self.coordinates().join(", "),
            self.k(),
            self.lagrangian.render(Some(&self.table)),
        )
    }
}

/// Check the structural rules the Legendre stage depends on.
pub fn validate_spec(spec: &SystemSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if spec.n() == 0 || spec.k() == 0 {
        report.violations.push(SpecViolation::EmptySystem);
        return report;
    }
    let names = spec.symbol_table();
    let tops: BTreeSet<SymbolId> = spec.top_jets().into_iter().collect();

    // symbol universe: jets up to level k, plus explicit time
    for sym in spec.lagrangian.free_symbols() {
        let allowed = matches!(&sym, SymbolId::Jet { coord, level }
            if *coord >= 1 && *coord <= spec.n() && *level <= spec.k())
            || sym == SymbolId::Time;
        if !allowed {
            report.violations.push(SpecViolation::ForeignSymbol {
                symbol: Expr::symbol(sym.clone()).render(Some(names)),
            });
        }
    }

    // transcendental arguments must avoid level-k jets
    let mut trans_violations = Vec::new();
    collect_transcendental_violations(&spec.lagrangian, &tops, names, &mut trans_violations);
    report.violations.extend(trans_violations);

    // joint degree <= 2 in the top jets: every second partial with respect
    // to top jets must be free of all top jets
    match degree_check(spec, &tops) {
        Ok(Some(witness)) => report
            .violations
            .push(SpecViolation::DegreeAboveTwo { witness }),
        Ok(None) => {}
        Err(e) => report.violations.push(SpecViolation::DegenerateExpression {
            detail: e.to_string(),
        }),
    }
    report
}

fn collect_transcendental_violations(
    e: &Expr,
    tops: &BTreeSet<SymbolId>,
    names: &SymbolTable,
    out: &mut Vec<SpecViolation>,
) {
    match e {
        Expr::Func(_, arg) => {
            if arg.free_symbols().iter().any(|s| tops.contains(s)) {
                out.push(SpecViolation::TranscendentalOfTopDerivative {
                    argument: arg.render(Some(names)),
                });
            }
            collect_transcendental_violations(arg, tops, names, out);
        }
        Expr::Sum(v) | Expr::Product(v) => {
            for sub in v {
                collect_transcendental_violations(sub, tops, names, out);
            }
        }
        Expr::Pow(b, _) => collect_transcendental_violations(b, tops, names, out),
        _ => {}
    }
}

fn degree_check(
    spec: &SystemSpec,
    tops: &BTreeSet<SymbolId>,
) -> Result<Option<String>, NormalizeError> {
    for a in tops {
        let first = spec.lagrangian.differentiate(a);
        for b in tops {
            let second = first.differentiate(b);
            for c in tops {
                let third = second.differentiate(c);
                if !normalize(&third)?.is_zero() {
                    return Ok(Some(format!(
                        "d^3L / {} {} {}",
                        Expr::symbol(a.clone()).render(Some(spec.symbol_table())),
                        Expr::symbol(b.clone()).render(Some(spec.symbol_table())),
                        Expr::symbol(c.clone()).render(Some(spec.symbol_table()))
                    )));
                }
            }
        }
    }
    Ok(None)
}

impl PhaseLayout {
    pub fn pairs(&self) -> &[(SymbolId, SymbolId)] {
        &self.pairs
    }

    pub fn dimension(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn coordinates(&self) -> impl Iterator<Item = &SymbolId> {
        self.pairs.iter().map(|(q, _)| q)
    }

    pub fn momenta(&self) -> impl Iterator<Item = &SymbolId> {
        self.pairs.iter().map(|(_, p)| p)
    }

    /// All phase symbols: coordinates then momenta, each level-major.
    pub fn symbols(&self) -> Vec<SymbolId> {
        self.coordinates()
            .cloned()
            .chain(self.momenta().cloned())
            .collect()
    }

    pub fn conjugate_momentum(&self, q: &SymbolId) -> Option<&SymbolId> {
        self.pairs.iter().find(|(c, _)| c == q).map(|(_, p)| p)
    }

    pub fn conjugate_coordinate(&self, p: &SymbolId) -> Option<&SymbolId> {
        self.pairs.iter().find(|(_, m)| m == p).map(|(q, _)| q)
    }
}

/// Phase layout of a system: (q_i^(s), p_(s)i) for s = 0..k-1, level-major.
pub fn phase_layout(spec: &SystemSpec) -> PhaseLayout {
    let mut pairs = Vec::with_capacity(spec.n() * spec.k());
    for level in 0..spec.k() {
        for coord in 1..=spec.n() {
            pairs.push((SymbolId::jet(coord, level), SymbolId::momentum(level, coord)));
        }
    }
    PhaseLayout { pairs }
}
