//! Recursive-descent parser for the formula language.
//!
//! ```text
//! formula := disj
//! disj    := conj { "|" conj }
//! conj    := lit { "&" lit }
//! lit     := "!" lit | "(" formula ")" | "true" | "false" | atom
//! atom    := linexp cmp linexp | "(" linexp ")" "%" nat "=" nat
//! cmp     := "<" | "<=" | "=" | ">=" | ">"
//! linexp  := ["-"] term { ("+" | "-") term }
//! term    := integer ["*" primary] | primary
//! primary := var | "(" linexp ")"
//! ```
//!
//! Both sides of a comparison may carry variables; the atom is stored with
//! every variable on the left.

use crate::error::{Error, Result};
use crate::formula::{CmpOp, Formula, LinExpr};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Percent,
    Not,
    And,
    Or,
    Cmp(CmpOp),
    Colon,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

/// Whether `name` is a valid variable identifier in formulas.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    let shape = match chars.next() {
        Some(c) if is_ident_start(c) => chars.all(is_ident_char),
        _ => false,
    };
    shape && !matches!(name, "true" | "false" | "forall" | "exists")
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '%' => Tok::Percent,
            '!' => Tok::Not,
            '&' => {
                if chars.get(i + 1) == Some(&'&') {
                    i += 1;
                }
                Tok::And
            }
            '|' => {
                if chars.get(i + 1) == Some(&'|') {
                    i += 1;
                }
                Tok::Or
            }
            ':' => Tok::Colon,
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 1;
                }
                Tok::Cmp(CmpOp::Eq)
            }
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 1;
                    Tok::Cmp(CmpOp::Le)
                } else {
                    Tok::Cmp(CmpOp::Lt)
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 1;
                    Tok::Cmp(CmpOp::Ge)
                } else {
                    Tok::Cmp(CmpOp::Gt)
                }
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let v = s
                    .parse::<i64>()
                    .map_err(|_| Error::Syntax { pos: start, msg: format!("integer literal '{}' out of range", s) })?;
                i = j - 1;
                Tok::Int(v)
            }
            c if is_ident_start(c) => {
                let mut j = i;
                while j < chars.len() && is_ident_char(chars[j]) {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                i = j - 1;
                Tok::Ident(s)
            }
            other => return Err(Error::Syntax { pos: start, msg: format!("unexpected character '{}'", other) }),
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { pos: self.offset(), msg: msg.into() })
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &Tok, what: &str) -> Result<()> {
        if self.eat(t) {
            Ok(())
        } else {
            self.err(format!("expected {}", what))
        }
    }

    fn formula(&mut self) -> Result<Formula> {
        let mut parts = vec![self.conj()?];
        while self.eat(&Tok::Or) {
            parts.push(self.conj()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::Or(parts) })
    }

    fn conj(&mut self) -> Result<Formula> {
        let mut parts = vec![self.lit()?];
        while self.eat(&Tok::And) {
            parts.push(self.lit()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    fn lit(&mut self) -> Result<Formula> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(Formula::Not(Box::new(self.lit()?)))
            }
            Some(Tok::Ident(s)) if s == "forall" || s == "exists" => Err(Error::Quantifier { pos: self.offset() }),
            Some(Tok::Ident(s)) if s == "true" => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(Tok::Ident(s)) if s == "false" => {
                self.pos += 1;
                Ok(Formula::False)
            }
            Some(Tok::LParen) => {
                let save = self.pos;
                // A parenthesised formula, unless arithmetic or a comparison follows.
                if let Ok(f) = self.paren_formula() {
                    if !matches!(
                        self.peek(),
                        Some(Tok::Cmp(_)) | Some(Tok::Plus) | Some(Tok::Minus) | Some(Tok::Percent) | Some(Tok::Star)
                    ) {
                        return Ok(f);
                    }
                }
                self.pos = save;
                self.atom()
            }
            _ => self.atom(),
        }
    }

    fn paren_formula(&mut self) -> Result<Formula> {
        self.expect(&Tok::LParen, "'('")?;
        let f = self.formula()?;
        self.expect(&Tok::RParen, "')'")?;
        Ok(f)
    }

    fn atom(&mut self) -> Result<Formula> {
        let lhs = self.linexp()?;
        match self.peek().cloned() {
            Some(Tok::Percent) => {
                self.pos += 1;
                let m = self.nat("modulus")?;
                if m < 2 {
                    return Err(Error::BadModulus(m));
                }
                self.expect(&Tok::Cmp(CmpOp::Eq), "'=' after modulus")?;
                let r_pos = self.offset();
                let r = self.nat("residue")?;
                if r >= m {
                    return Err(Error::Syntax {
                        pos: r_pos,
                        msg: format!("residue {} must be smaller than modulus {}", r, m),
                    });
                }
                Formula::remainder(lhs, m, r)
            }
            Some(Tok::Cmp(op)) => {
                self.pos += 1;
                let rhs = self.linexp()?;
                Ok(Formula::cmp(lhs, op, rhs))
            }
            _ => self.err("expected comparison operator or '%'"),
        }
    }

    fn nat(&mut self, what: &str) -> Result<i64> {
        match self.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(v)
            }
            _ => self.err(format!("expected {}", what)),
        }
    }

    fn linexp(&mut self) -> Result<LinExpr> {
        let mut sign = 1;
        if self.eat(&Tok::Minus) {
            sign = -1;
        } else {
            self.eat(&Tok::Plus);
        }
        let mut acc = self.term()?.scale(sign);
        loop {
            if self.eat(&Tok::Plus) {
                acc = acc.plus(&self.term()?);
            } else if self.eat(&Tok::Minus) {
                acc = acc.minus(&self.term()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<LinExpr> {
        match self.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                if self.eat(&Tok::Star) {
                    Ok(self.primary()?.scale(v))
                } else if matches!(self.peek(), Some(Tok::Ident(_))) {
                    // "2x" shorthand
                    Ok(self.primary()?.scale(v))
                } else {
                    Ok(LinExpr::constant(v))
                }
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<LinExpr> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                if s == "forall" || s == "exists" {
                    return Err(Error::Quantifier { pos: self.offset() });
                }
                if s == "true" || s == "false" {
                    return self.err("boolean constant in arithmetic position");
                }
                self.pos += 1;
                Ok(LinExpr::var(s))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.linexp()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Colon) => self.err("unexpected ':'"),
            _ => self.err("expected variable, integer or '('"),
        }
    }
}

fn parser_for(text: &str) -> Result<Parser> {
    Ok(Parser { toks: lex(text)?, pos: 0, end: text.chars().count() })
}

/// Parses a quantifier-free formula.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let mut p = parser_for(text)?;
    if p.toks.is_empty() {
        return p.err("empty formula");
    }
    let f = p.formula()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(f)
}

/// Parses a linear expression such as `2*AY + PY - 1`.
pub fn parse_linexpr(text: &str) -> Result<LinExpr> {
    let mut p = parser_for(text)?;
    let e = p.linexp()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}
