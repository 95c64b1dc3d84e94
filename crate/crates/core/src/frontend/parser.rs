//! Hand-rolled lexer and recursive-descent parser for the query surface
//! syntax.
//!
//! ```text
//! program  := binding* expr
//! binding  := "fun" IDENT "(" params ")" "=" expr
//!           | "let" IDENT "=" expr
//! expr     := "for" "(" gens ")" ["where" union] expr
//!           | "if" expr "then" expr "else" expr
//!           | "fun" "(" params ")" "->" expr
//!           | "return" expr
//!           | union
//! union    := or ("++" or)*
//! or       := and ("||" and)*
//! and      := not ("&&" not)*
//! not      := "not" not | cmp
//! cmp      := add [("=" | "<>" | "<" | ">" | "<=" | ">=") add]
//! add      := mul (("+" | "-") mul)*
//! mul      := postfix ("*" postfix)*
//! postfix  := atom ("." label | "(" args ")")*
//! atom     := IDENT | INT | STRING | "true" | "false" | "[]"
//!           | "empty" "(" expr ")" | "{" fields "}" | "(" exprs ")"
//! ```
//!
//! `--` starts a line comment. Tuples `(a, b)` are sugar for records with
//! labels `#1`, `#2`, and `e.1` projects them. `where` desugars into a
//! conditional with an empty else branch inside the comprehension body.

use crate::ast::{tuple_label, Literal, Prim, Term};
use crate::error::{Error, Pos, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Kw(&'static str),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s}"),
            Tok::Int(n) => format!("integer {n}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Kw(k) => format!("keyword {k}"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

const KEYWORDS: &[&str] = &[
    "for", "where", "return", "if", "then", "else", "fun", "let", "not", "empty", "true", "false",
];

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn here(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c.is_ascii_whitespace() {
                    self.bump();
                } else if c == b'-' && self.peek2() == Some(b'-') {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let pos = self.here();
            let Some(c) = self.peek() else {
                out.push((Tok::Eof, pos));
                return Ok(out);
            };
            let tok = if c.is_ascii_alphabetic() {
                let start = self.pos;
                while self
                    .peek()
                    .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
                {
                    self.bump();
                }
                let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match KEYWORDS.iter().find(|k| **k == word) {
                    Some(k) => Tok::Kw(k),
                    None => Tok::Ident(word.to_string()),
                }
            } else if c.is_ascii_digit() {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let n = text.parse::<i64>().map_err(|_| Error::SyntaxError {
                    pos,
                    expected: "integer literal in range".to_string(),
                    found: text.to_string(),
                })?;
                Tok::Int(n)
            } else if c == b'"' {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        Some(b'"') => break,
                        Some(b'\\') => match self.bump() {
                            Some(b'"') => s.push('"'),
                            Some(b'\\') => s.push('\\'),
                            Some(b'n') => s.push('\n'),
                            Some(b't') => s.push('\t'),
                            other => {
                                return Err(Error::SyntaxError {
                                    pos: self.here(),
                                    expected: "escape sequence".to_string(),
                                    found: format!("{other:?}"),
                                })
                            }
                        },
                        Some(c) => s.push(c as char),
                        None => {
                            return Err(Error::SyntaxError {
                                pos: self.here(),
                                expected: "closing quote".to_string(),
                                found: "end of input".to_string(),
                            })
                        }
                    }
                }
                Tok::Str(s)
            } else {
                let two: Option<&'static str> = match (c, self.peek2()) {
                    (b'<', Some(b'-')) => Some("<-"),
                    (b'<', Some(b'>')) => Some("<>"),
                    (b'<', Some(b'=')) => Some("<="),
                    (b'>', Some(b'=')) => Some(">="),
                    (b'+', Some(b'+')) => Some("++"),
                    (b'&', Some(b'&')) => Some("&&"),
                    (b'|', Some(b'|')) => Some("||"),
                    (b'-', Some(b'>')) => Some("->"),
                    (b'[', Some(b']')) => Some("[]"),
                    _ => None,
                };
                if let Some(sym) = two {
                    self.bump();
                    self.bump();
                    Tok::Sym(sym)
                } else {
                    let one: &'static str = match c {
                        b'(' => "(",
                        b')' => ")",
                        b'{' => "{",
                        b'}' => "}",
                        b',' => ",",
                        b'.' => ".",
                        b'=' => "=",
                        b'<' => "<",
                        b'>' => ">",
                        b'+' => "+",
                        b'-' => "-",
                        b'*' => "*",
                        _ => {
                            return Err(Error::SyntaxError {
                                pos,
                                expected: "token".to_string(),
                                found: format!("{:?}", c as char),
                            })
                        }
                    };
                    self.bump();
                    Tok::Sym(one)
                }
            };
            out.push((tok, pos));
        }
    }
}

/// A parsed query file: named nonrecursive bindings plus the main query.
#[derive(Debug, Clone)]
pub struct SourceQuery {
    pub bindings: Vec<(String, Term)>,
    pub main: Term,
}

pub fn parse_query(text: &str) -> Result<SourceQuery> {
    let tokens = Lexer::new(text).tokens()?;
    let mut p = Parser {
        tokens,
        at: 0,
        depth: 0,
    };
    let mut bindings = Vec::new();
    // `fun IDENT` or `let IDENT` opens a binding; `fun (` is an anonymous
    // lambda and so belongs to the main expression.
    loop {
        if p.cur() == &Tok::Kw("fun") && matches!(p.lookahead(1), Tok::Ident(_)) {
            p.next();
            let name = p.ident()?;
            p.expect_sym("(")?;
            let params = p.param_list()?;
            p.expect_sym("=")?;
            let body = p.expr()?;
            let lam = params
                .into_iter()
                .rev()
                .fold(body, |acc, x| Term::Lam(x, Box::new(acc)));
            bindings.push((name, lam));
        } else if p.cur() == &Tok::Kw("let") {
            p.next();
            let name = p.ident()?;
            p.expect_sym("=")?;
            let body = p.expr()?;
            bindings.push((name, body));
        } else {
            break;
        }
    }
    let main = p.expr()?;
    p.expect_eof()?;
    Ok(SourceQuery { bindings, main })
}

/// Expression nesting bound; recursion past this depth is rejected rather
/// than risking the stack.
const MAX_DEPTH: usize = 128;

struct Parser {
    tokens: Vec<(Tok, Pos)>,
    at: usize,
    depth: usize,
}

impl Parser {
    fn cur(&self) -> &Tok {
        &self.tokens[self.at].0
    }

    fn lookahead(&self, n: usize) -> &Tok {
        let i = (self.at + n).min(self.tokens.len() - 1);
        &self.tokens[i].0
    }

    fn pos(&self) -> Pos {
        self.tokens[self.at].1
    }

    fn next(&mut self) -> Tok {
        let t = self.tokens[self.at].0.clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, expected: &str) -> Result<T> {
        Err(Error::SyntaxError {
            pos: self.pos(),
            expected: expected.to_string(),
            found: self.cur().describe(),
        })
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.cur(), Tok::Sym(t) if *t == s) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        match self.cur() {
            Tok::Sym(t) if *t == s => {
                self.next();
                Ok(())
            }
            _ => self.err(&format!("`{s}`")),
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<()> {
        match self.cur() {
            Tok::Kw(t) if *t == k => {
                self.next();
                Ok(())
            }
            _ => self.err(&format!("keyword {k}")),
        }
    }

    fn expect_eof(&mut self) -> Result<()> {
        match self.cur() {
            Tok::Eof => Ok(()),
            _ => self.err("end of input"),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.cur().clone() {
            Tok::Ident(s) => {
                if s.starts_with('_') {
                    return self.err("identifier (names starting with _ are reserved)");
                }
                self.next();
                Ok(s)
            }
            _ => self.err("identifier"),
        }
    }

    fn param_list(&mut self) -> Result<Vec<String>> {
        let mut params = vec![self.ident()?];
        while self.eat_sym(",") {
            params.push(self.ident()?);
        }
        self.expect_sym(")")?;
        Ok(params)
    }

    fn expr(&mut self) -> Result<Term> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            self.depth -= 1;
            return self.err("shallower nesting");
        }
        let out = self.expr_inner();
        self.depth -= 1;
        out
    }

    fn expr_inner(&mut self) -> Result<Term> {
        match self.cur() {
            Tok::Kw("for") => {
                self.next();
                self.expect_sym("(")?;
                let mut gens = Vec::new();
                loop {
                    let x = self.ident()?;
                    match self.cur() {
                        Tok::Sym("<-") => {
                            self.next();
                        }
                        _ => return self.err("`<-`"),
                    }
                    let src = self.expr()?;
                    gens.push((x, src));
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(")")?;
                let guard = if self.cur() == &Tok::Kw("where") {
                    self.next();
                    Some(self.union()?)
                } else {
                    None
                };
                let body = self.expr()?;
                let body = match guard {
                    Some(g) => Term::If(Box::new(g), Box::new(body), Box::new(Term::Empty)),
                    None => body,
                };
                Ok(gens.into_iter().rev().fold(body, |acc, (x, src)| {
                    Term::For(x, Box::new(src), Box::new(acc))
                }))
            }
            Tok::Kw("if") => {
                self.next();
                let c = self.expr()?;
                self.expect_kw("then")?;
                let a = self.expr()?;
                self.expect_kw("else")?;
                let b = self.expr()?;
                Ok(Term::If(Box::new(c), Box::new(a), Box::new(b)))
            }
            Tok::Kw("fun") => {
                self.next();
                self.expect_sym("(")?;
                let params = self.param_list()?;
                match self.cur() {
                    Tok::Sym("->") => {
                        self.next();
                    }
                    _ => return self.err("`->`"),
                }
                let body = self.expr()?;
                Ok(params
                    .into_iter()
                    .rev()
                    .fold(body, |acc, x| Term::Lam(x, Box::new(acc))))
            }
            Tok::Kw("return") => {
                self.next();
                let e = self.expr()?;
                Ok(Term::Singleton(Box::new(e)))
            }
            _ => self.union(),
        }
    }

    fn union(&mut self) -> Result<Term> {
        let mut lhs = self.or_expr()?;
        while self.cur() == &Tok::Sym("++") {
            self.next();
            let rhs = self.or_expr()?;
            lhs = Term::Union(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn or_expr(&mut self) -> Result<Term> {
        let mut lhs = self.and_expr()?;
        while self.cur() == &Tok::Sym("||") {
            self.next();
            let rhs = self.and_expr()?;
            lhs = Term::PrimApp(Prim::Or, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Term> {
        let mut lhs = self.not_expr()?;
        while self.cur() == &Tok::Sym("&&") {
            self.next();
            let rhs = self.not_expr()?;
            lhs = Term::PrimApp(Prim::And, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Term> {
        if self.cur() == &Tok::Kw("not") {
            self.depth += 1;
            if self.depth > MAX_DEPTH {
                self.depth -= 1;
                return self.err("shallower nesting");
            }
            self.next();
            let e = self.not_expr();
            self.depth -= 1;
            Ok(Term::PrimApp(Prim::Not, vec![e?]))
        } else {
            self.cmp_expr()
        }
    }

    fn cmp_expr(&mut self) -> Result<Term> {
        let lhs = self.add_expr()?;
        let op = match self.cur() {
            Tok::Sym("=") => Some(Prim::Eq),
            Tok::Sym("<>") => Some(Prim::Ne),
            Tok::Sym("<") => Some(Prim::Lt),
            Tok::Sym(">") => Some(Prim::Gt),
            Tok::Sym("<=") => Some(Prim::Le),
            Tok::Sym(">=") => Some(Prim::Ge),
            _ => None,
        };
        match op {
            Some(p) => {
                self.next();
                let rhs = self.add_expr()?;
                Ok(Term::PrimApp(p, vec![lhs, rhs]))
            }
            None => Ok(lhs),
        }
    }

    fn add_expr(&mut self) -> Result<Term> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.cur() {
                Tok::Sym("+") => Prim::Add,
                Tok::Sym("-") => Prim::Sub,
                _ => break,
            };
            self.next();
            let rhs = self.mul_expr()?;
            lhs = Term::PrimApp(op, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> Result<Term> {
        let mut lhs = self.postfix()?;
        while self.cur() == &Tok::Sym("*") {
            self.next();
            let rhs = self.postfix()?;
            lhs = Term::PrimApp(Prim::Mul, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn postfix(&mut self) -> Result<Term> {
        let mut e = self.atom()?;
        loop {
            if self.cur() == &Tok::Sym(".") {
                self.next();
                let label = match self.cur().clone() {
                    Tok::Ident(l) => {
                        self.next();
                        l
                    }
                    Tok::Int(n) if n >= 1 => {
                        self.next();
                        tuple_label(n as usize)
                    }
                    _ => return self.err("field label"),
                };
                e = Term::Project(Box::new(e), label);
            } else if self.cur() == &Tok::Sym("(") {
                self.next();
                let mut args = vec![self.expr()?];
                while self.eat_sym(",") {
                    args.push(self.expr()?);
                }
                self.expect_sym(")")?;
                e = args
                    .into_iter()
                    .fold(e, |f, a| Term::App(Box::new(f), Box::new(a)));
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<Term> {
        match self.cur().clone() {
            Tok::Ident(_) => {
                let name = self.ident()?;
                Ok(Term::Var(name))
            }
            Tok::Int(n) => {
                self.next();
                Ok(Term::lit(Literal::Int(n)))
            }
            Tok::Str(s) => {
                self.next();
                Ok(Term::lit(Literal::Str(s)))
            }
            Tok::Kw("true") => {
                self.next();
                Ok(Term::bool_lit(true))
            }
            Tok::Kw("false") => {
                self.next();
                Ok(Term::bool_lit(false))
            }
            Tok::Sym("[]") => {
                self.next();
                Ok(Term::Empty)
            }
            Tok::Kw("empty") => {
                self.next();
                self.expect_sym("(")?;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(Term::IsEmpty(Box::new(e)))
            }
            Tok::Sym("{") => {
                self.next();
                let mut fields = Vec::new();
                if self.cur() != &Tok::Sym("}") {
                    loop {
                        let l = self.ident()?;
                        self.expect_sym("=")?;
                        let v = self.expr()?;
                        fields.push((l, v));
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                }
                self.expect_sym("}")?;
                Ok(Term::Record(fields))
            }
            Tok::Sym("(") => {
                self.next();
                let first = self.expr()?;
                if self.cur() == &Tok::Sym(",") {
                    let mut items = vec![first];
                    while self.eat_sym(",") {
                        if self.cur() == &Tok::Sym(")") {
                            break;
                        }
                        items.push(self.expr()?);
                    }
                    self.expect_sym(")")?;
                    Ok(Term::Record(
                        items
                            .into_iter()
                            .enumerate()
                            .map(|(i, e)| (tuple_label(i + 1), e))
                            .collect(),
                    ))
                } else {
                    self.expect_sym(")")?;
                    Ok(first)
                }
            }
            _ => self.err("expression"),
        }
    }
}
