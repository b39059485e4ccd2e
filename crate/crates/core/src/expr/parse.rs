//! Recursive-descent parser for the expression DSL.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr    := ['-'] term (('+'|'-') term)*
//! term    := factor (('*'|'/') factor)*
//! factor  := base ('^' ['-'] integer)?
//! base    := number | ident primes? | func '(' expr ')' | '(' expr ')'
//! primes  := "'" x (1..k)
//! func    := sin | cos | exp
//! number  := integer ('/' integer)? | decimal
//! ```
//!
//! Decimal literals are converted exactly to rationals, so `0.5` and `1/2`
//! parse to the same constant.

use super::{Expr, SymbolId};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use std::collections::BTreeSet;
use std::fmt;

/// Resolution context for identifiers: coordinate names, derivative
/// order, and optional free-standing auxiliary names.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    coords: Vec<String>,
    order: usize,
    aux: BTreeSet<String>,
}

impl SymbolTable {
    pub fn new(coords: Vec<String>, order: usize) -> Self {
        SymbolTable {
            coords,
            order,
            aux: BTreeSet::new(),
        }
    }

    pub fn with_aux(mut self, names: &[&str]) -> Self {
        self.aux.extend(names.iter().map(|s| s.to_string()));
        self
    }

    pub fn coordinate_count(&self) -> usize {
        self.coords.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coordinate_names(&self) -> &[String] {
        &self.coords
    }

    /// 1-based coordinate name lookup; falls back to a positional name so
    /// rendering never panics on foreign indices.
    pub fn coordinate_name(&self, index: usize) -> &str {
        self.coords
            .get(index.wrapping_sub(1))
            .map(|s| s.as_str())
            .unwrap_or("q?")
    }

    pub fn coordinate_index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c == name).map(|i| i + 1)
    }

    /// Resolve an identifier plus prime count to a symbol.
    fn resolve(&self, ident: &str, primes: usize, pos: usize) -> Result<SymbolId, ParseError> {
        if let Some(i) = self.coordinate_index(ident) {
            if primes > self.order {
                return Err(ParseError::new(
                    pos,
                    ParseErrorKind::DerivativeLevelExceedsOrder {
                        level: primes,
                        order: self.order,
                    },
                ));
            }
            return Ok(SymbolId::jet(i, primes));
        }
        if primes > 0 {
            return Err(ParseError::new(
                pos,
                ParseErrorKind::UnknownIdentifier(ident.to_string()),
            ));
        }
        if ident == "t" {
            return Ok(SymbolId::Time);
        }
        if self.aux.contains(ident) {
            return Ok(SymbolId::Aux(ident.to_string()));
        }
        if let Some(sym) = self.resolve_momentum_or_param(ident) {
            return Ok(sym);
        }
        Err(ParseError::new(
            pos,
            ParseErrorKind::UnknownIdentifier(ident.to_string()),
        ))
    }

    /// Momentum names: `p<level>_<coord>`, `p_<coord>`, or a bare `p` for a
    /// single-coordinate first-order system. Parameter names: `t<level>_<coord>`.
    fn resolve_momentum_or_param(&self, ident: &str) -> Option<SymbolId> {
        let (head, is_param) = if let Some(rest) = ident.strip_prefix('p') {
            (rest, false)
        } else if let Some(rest) = ident.strip_prefix('t') {
            (rest, true)
        } else {
            return None;
        };
        if head.is_empty() {
            // bare `p` is unambiguous only for n = 1
            if !is_param && self.coords.len() == 1 && self.order >= 1 {
                return Some(SymbolId::momentum(0, 1));
            }
            return None;
        }
        let (level_text, coord_name) = head.split_once('_')?;
        let level: usize = if level_text.is_empty() {
            if is_param {
                return None;
            }
            0
        } else {
            level_text.parse().ok()?
        };
        let coord = self.coordinate_index(coord_name)?;
        if level + 1 > self.order {
            return None;
        }
        Some(if is_param {
            SymbolId::Param { level, coord }
        } else {
            SymbolId::momentum(level, coord)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedCharacter(char),
    UnexpectedEnd,
    UnexpectedToken(String),
    UnknownIdentifier(String),
    DerivativeLevelExceedsOrder { level: usize, order: usize },
    ZeroDenominator,
    ExponentOutOfRange,
}

/// Syntax error with a byte position into the source text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(position: usize, kind: ParseErrorKind) -> Self {
        ParseError { position, kind }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match &self.kind {
            ParseErrorKind::UnexpectedCharacter(c) => format!("unexpected character `{c}`"),
            ParseErrorKind::UnexpectedEnd => "unexpected end of input".to_string(),
            ParseErrorKind::UnexpectedToken(t) => format!("unexpected token `{t}`"),
            ParseErrorKind::UnknownIdentifier(i) => format!("unknown identifier `{i}`"),
            ParseErrorKind::DerivativeLevelExceedsOrder { level, order } => {
                format!("derivative level exceeds order: {level} primes with order {order}")
            }
            ParseErrorKind::ZeroDenominator => "zero denominator in rational literal".to_string(),
            ParseErrorKind::ExponentOutOfRange => "exponent out of range".to_string(),
        };
        write!(f, "{msg} at position {}", self.position)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(BigRational),
    Ident(String, usize), // name, prime count
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(text: &'a str) -> Result<Vec<(usize, Token)>, ParseError> {
        let mut lx = Lexer {
            src: text.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        while let Some(tok) = lx.next_token()? {
            out.push(tok);
        }
        Ok(out)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn next_token(&mut self) -> Result<Option<(usize, Token)>, ParseError> {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok(None);
        };
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Token::Plus
            }
            b'-' => {
                self.pos += 1;
                Token::Minus
            }
            b'*' => {
                self.pos += 1;
                Token::Star
            }
            b'/' => {
                self.pos += 1;
                Token::Slash
            }
            b'^' => {
                self.pos += 1;
                Token::Caret
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b'0'..=b'9' => self.lex_number()?,
            c if c.is_ascii_alphabetic() || c == b'_' => self.lex_ident(),
            other => {
                return Err(ParseError::new(
                    start,
                    ParseErrorKind::UnexpectedCharacter(other as char),
                ))
            }
        };
        Ok(Some((start, tok)))
    }

    fn lex_number(&mut self) -> Result<Token, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let int_part = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let mut value: BigRational =
            BigRational::from(int_part.parse::<BigInt>().expect("digits"));
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let frac_start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            let frac = std::str::from_utf8(&self.src[frac_start..self.pos]).unwrap();
            if !frac.is_empty() {
                let numer: BigInt = frac.parse().expect("digits");
                let mut denom = BigInt::one();
                for _ in 0..frac.len() {
                    denom *= 10;
                }
                value += BigRational::new(numer, denom);
            }
        }
        Ok(Token::Number(value))
    }

    fn lex_ident(&mut self) -> Token {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .to_string();
        let mut primes = 0;
        while self.peek() == Some(b'\'') {
            primes += 1;
            self.pos += 1;
        }
        Token::Ident(name, primes)
    }
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    cursor: usize,
    table: &'a SymbolTable,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(usize, Token)> {
        self.tokens.get(self.cursor)
    }

    fn advance(&mut self) -> Option<(usize, Token)> {
        let t = self.tokens.get(self.cursor).cloned();
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut negate_first = false;
        if matches!(self.peek(), Some((_, Token::Minus))) {
            self.advance();
            negate_first = true;
        }
        let mut acc = self.term()?;
        if negate_first {
            acc = acc.neg();
        }
        loop {
            match self.peek() {
                Some((_, Token::Plus)) => {
                    self.advance();
                    let rhs = self.term()?;
                    acc = acc.add(rhs);
                }
                Some((_, Token::Minus)) => {
                    self.advance();
                    let rhs = self.term()?;
                    acc = acc.sub(rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some((_, Token::Star)) => {
                    self.advance();
                    let rhs = self.factor()?;
                    acc = acc.mul(rhs);
                }
                Some((pos, Token::Slash)) => {
                    let pos = *pos;
                    self.advance();
                    let rhs = self.factor()?;
                    if rhs.is_zero() {
                        return Err(ParseError::new(pos, ParseErrorKind::ZeroDenominator));
                    }
                    acc = acc.div(rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.base()?;
        if matches!(self.peek(), Some((_, Token::Caret))) {
            self.advance();
            let mut negative = false;
            if matches!(self.peek(), Some((_, Token::Minus))) {
                self.advance();
                negative = true;
            }
            let (pos, tok) = self
                .advance()
                .ok_or_else(|| ParseError::new(self.end, ParseErrorKind::UnexpectedEnd))?;
            let Token::Number(n) = tok else {
                return Err(ParseError::new(
                    pos,
                    ParseErrorKind::UnexpectedToken(format!("{tok:?}")),
                ));
            };
            if !n.is_integer() {
                return Err(ParseError::new(pos, ParseErrorKind::ExponentOutOfRange));
            }
            let Some(mut exp) = num_traits::ToPrimitive::to_i64(n.numer()) else {
                return Err(ParseError::new(pos, ParseErrorKind::ExponentOutOfRange));
            };
            if negative {
                exp = -exp;
            }
            return Ok(base.pow(exp));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let (pos, tok) = self
            .advance()
            .ok_or_else(|| ParseError::new(self.end, ParseErrorKind::UnexpectedEnd))?;
        match tok {
            Token::Number(n) => {
                // integer '/' integer handled by term-level division; a
                // literal like 1/2 therefore parses as a quotient and folds.
                Ok(Expr::Rational(n))
            }
            Token::LParen => {
                let inner = self.expr()?;
                match self.advance() {
                    Some((_, Token::RParen)) => Ok(inner),
                    Some((p, t)) => Err(ParseError::new(
                        p,
                        ParseErrorKind::UnexpectedToken(format!("{t:?}")),
                    )),
                    None => Err(ParseError::new(self.end, ParseErrorKind::UnexpectedEnd)),
                }
            }
            Token::Ident(name, primes) => {
                if primes == 0 {
                    if let Some(f) = match name.as_str() {
                        "sin" => Some(super::UnaryFunc::Sin),
                        "cos" => Some(super::UnaryFunc::Cos),
                        "exp" => Some(super::UnaryFunc::Exp),
                        _ => None,
                    } {
                        match self.advance() {
                            Some((_, Token::LParen)) => {}
                            Some((p, t)) => {
                                return Err(ParseError::new(
                                    p,
                                    ParseErrorKind::UnexpectedToken(format!("{t:?}")),
                                ))
                            }
                            None => {
                                return Err(ParseError::new(
                                    self.end,
                                    ParseErrorKind::UnexpectedEnd,
                                ))
                            }
                        }
                        let arg = self.expr()?;
                        match self.advance() {
                            Some((_, Token::RParen)) => return Ok(Expr::func(f, arg)),
                            Some((p, t)) => {
                                return Err(ParseError::new(
                                    p,
                                    ParseErrorKind::UnexpectedToken(format!("{t:?}")),
                                ))
                            }
                            None => {
                                return Err(ParseError::new(
                                    self.end,
                                    ParseErrorKind::UnexpectedEnd,
                                ))
                            }
                        }
                    }
                }
                Ok(Expr::Symbol(self.table.resolve(&name, primes, pos)?))
            }
            other => Err(ParseError::new(
                pos,
                ParseErrorKind::UnexpectedToken(format!("{other:?}")),
            )),
        }
    }
}

/// Parse an expression against a symbol table.
pub fn parse(text: &str, table: &SymbolTable) -> Result<Expr, ParseError> {
    let tokens = Lexer::tokenize(text)?;
    let mut parser = Parser {
        tokens,
        cursor: 0,
        table,
        end: text.len(),
    };
    let e = parser.expr()?;
    if let Some((p, t)) = parser.peek() {
        return Err(ParseError::new(
            *p,
            ParseErrorKind::UnexpectedToken(format!("{t:?}")),
        ));
    }
    Ok(e)
}
