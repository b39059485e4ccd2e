//! LaTeX rendering of expressions. Display-only: not part of any
//! round-trip guarantee.

use super::{Expr, SymbolId, SymbolTable};
use num_traits::{One, Signed};

pub fn to_latex(e: &Expr, names: Option<&SymbolTable>) -> String {
    let mut s = String::new();
    write_prec(e, &mut s, 0, names);
    s
}

fn symbol_latex(sym: &SymbolId, names: Option<&SymbolTable>) -> String {
    let coord_name = |i: usize| -> String {
        match names {
            Some(t) => t.coordinate_name(i).to_string(),
            None => format!("q_{{{i}}}"),
        }
    };
    match sym {
        SymbolId::Jet { coord, level } => {
            let base = coord_name(*coord);
            if *level == 0 {
                base
            } else {
                format!("{base}^{{({level})}}")
            }
        }
        SymbolId::Momentum { level, coord } => {
            format!("p_{{({level}){coord}}}")
        }
        SymbolId::Time => "t".to_string(),
        SymbolId::Param { level, coord } => format!("t_{{({level}){coord}}}"),
        SymbolId::Aux(name) => name.clone(),
    }
}

// prec: 0 sum, 1 product, 2 power
fn write_prec(e: &Expr, out: &mut String, prec: u8, names: Option<&SymbolTable>) {
    match e {
        Expr::Rational(r) => {
            let body = if r.denom().is_one() {
                r.numer().to_string()
            } else {
                format!("\\frac{{{}}}{{{}}}", r.numer(), r.denom())
            };
            if r.is_negative() && prec >= 1 && r.denom().is_one() {
                out.push_str(&format!("({body})"));
            } else {
                out.push_str(&body);
            }
        }
        Expr::Symbol(s) => out.push_str(&symbol_latex(s, names)),
        Expr::Sum(terms) => {
            if prec >= 1 {
                out.push_str("\\left(");
            }
            for (i, t) in terms.iter().enumerate() {
                if i > 0 {
                    out.push_str(" + ");
                }
                write_prec(t, out, 1, names);
            }
            if prec >= 1 {
                out.push_str("\\right)");
            }
        }
        Expr::Product(factors) => {
            if prec >= 2 {
                out.push_str("\\left(");
            }
            let mut first = true;
            for f in factors {
                if !first {
                    out.push_str(" \\, ");
                }
                write_prec(f, out, 2, names);
                first = false;
            }
            if prec >= 2 {
                out.push_str("\\right)");
            }
        }
        Expr::Pow(b, n) => {
            if *n < 0 {
                out.push_str("\\frac{1}{");
                write_prec(&b.clone().pow(-n), out, 0, names);
                out.push('}');
            } else {
                let needs_brace = !matches!(b.as_ref(), Expr::Symbol(_) | Expr::Rational(_));
                if needs_brace {
                    out.push_str("\\left(");
                }
                write_prec(b, out, 2, names);
                if needs_brace {
                    out.push_str("\\right)");
                }
                out.push_str(&format!("^{{{n}}}"));
            }
        }
        Expr::Func(f, a) => {
            out.push_str(&format!("\\{}\\left(", f.name()));
            write_prec(a, out, 0, names);
            out.push_str("\\right)");
        }
    }
}
