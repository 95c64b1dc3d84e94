//! Stable textual forms for terms, normal forms, shredded terms, types and
//! values.
//!
//! The term printer emits surface syntax: `parse(pretty_term(t))` gives back
//! `t` (after table-name resolution). Normal forms and shredded terms use
//! the same notation extended with tag annotations `return^a` and index
//! placeholders `a(up)` / `a(down)`; those forms are for golden files and
//! the CLI, and are not re-parsed.

use crate::ast::*;

// Precedence levels, loosest first. `Low` covers for/if/fun/return which
// swallow everything to their right.
const LOW: u8 = 0;
const UNION: u8 = 1;
const OR: u8 = 2;
const AND: u8 = 3;
const NOT: u8 = 4;
const CMP: u8 = 5;
const ADD: u8 = 6;
const MUL: u8 = 7;
const POSTFIX: u8 = 8;
const ATOM: u8 = 9;

pub fn pretty_term(t: &Term) -> String {
    let mut s = String::new();
    term(&mut s, t, LOW);
    s
}

fn term(out: &mut String, t: &Term, ctx: u8) {
    let level = term_level(t);
    if level < ctx {
        out.push('(');
        term_bare(out, t);
        out.push(')');
    } else {
        term_bare(out, t);
    }
}

fn term_level(t: &Term) -> u8 {
    match t {
        Term::For(_, _, _) | Term::If(_, _, _) | Term::Lam(_, _) | Term::Singleton(_) => LOW,
        Term::Union(_, _) => UNION,
        Term::PrimApp(p, args) if !args.is_empty() => match p {
            Prim::Or => OR,
            Prim::And => AND,
            Prim::Not => NOT,
            Prim::Eq | Prim::Ne | Prim::Lt | Prim::Gt | Prim::Le | Prim::Ge => CMP,
            Prim::Add | Prim::Sub => ADD,
            Prim::Mul => MUL,
            Prim::Lit(_) => ATOM,
        },
        Term::Project(_, _) | Term::App(_, _) => POSTFIX,
        _ => ATOM,
    }
}

fn term_bare(out: &mut String, t: &Term) {
    match t {
        Term::Var(x) | Term::Table(x) => out.push_str(x),
        Term::PrimApp(p, args) => prim_app(out, p, args),
        Term::If(c, a, b) => {
            out.push_str("if ");
            term(out, c, UNION);
            out.push_str(" then ");
            term(out, a, LOW);
            out.push_str(" else ");
            term(out, b, LOW);
        }
        Term::Lam(x, body) => {
            out.push_str("fun (");
            out.push_str(x);
            out.push_str(") -> ");
            term(out, body, LOW);
        }
        Term::App(_, _) => {
            // Uncurry f(a)(b) back into f(a, b).
            let mut args = Vec::new();
            let mut head = t;
            while let Term::App(f, a) = head {
                args.push(a.as_ref());
                head = f;
            }
            args.reverse();
            term(out, head, POSTFIX);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                term(out, a, UNION);
            }
            out.push(')');
        }
        Term::Record(fields) => record_syntax(out, fields, |out, v| term(out, v, UNION)),
        Term::Project(e, l) => {
            term(out, e, POSTFIX);
            out.push('.');
            out.push_str(label_display(l));
        }
        Term::Empty => out.push_str("[]"),
        Term::Singleton(e) => {
            out.push_str("return ");
            term(out, e, LOW);
        }
        Term::Union(a, b) => {
            term(out, a, UNION + 1);
            out.push_str(" ++ ");
            term(out, b, UNION + 1);
        }
        Term::For(x, src, body) => {
            out.push_str("for (");
            out.push_str(x);
            out.push_str(" <- ");
            term(out, src, UNION);
            out.push_str(") ");
            term(out, body, LOW);
        }
        Term::IsEmpty(e) => {
            out.push_str("empty(");
            term(out, e, LOW);
            out.push(')');
        }
    }
}

fn prim_app(out: &mut String, p: &Prim, args: &[Term]) {
    match p {
        Prim::Lit(l) => out.push_str(&l.to_string()),
        Prim::Not => {
            out.push_str("not ");
            term(out, &args[0], NOT);
        }
        _ => {
            let level = match p {
                Prim::Or => OR,
                Prim::And => AND,
                Prim::Eq | Prim::Ne | Prim::Lt | Prim::Gt | Prim::Le | Prim::Ge => CMP,
                Prim::Add | Prim::Sub => ADD,
                Prim::Mul => MUL,
                _ => unreachable!(),
            };
            // Comparisons are non-associative; everything else associates
            // left, so the right operand is printed one level tighter.
            term(out, &args[0], if level == CMP { level + 1 } else { level });
            out.push(' ');
            out.push_str(p.name());
            out.push(' ');
            term(out, &args[1], level + 1);
        }
    }
}

fn label_display(l: &str) -> &str {
    l.strip_prefix('#').unwrap_or(l)
}

/// Prints `{l = v, ...}`, or tuple syntax when the labels are exactly
/// `#1..#n` in order.
fn record_syntax<T>(out: &mut String, fields: &[(String, T)], mut pr: impl FnMut(&mut String, &T)) {
    let is_tuple = !fields.is_empty()
        && fields
            .iter()
            .enumerate()
            .all(|(i, (l, _))| l == &tuple_label(i + 1));
    if is_tuple {
        out.push('(');
        for (i, (_, v)) in fields.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            pr(out, v);
        }
        if fields.len() == 1 {
            out.push(',');
        }
        out.push(')');
    } else {
        out.push('{');
        for (i, (l, v)) in fields.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(l);
            out.push_str(" = ");
            pr(out, v);
        }
        out.push('}');
    }
}

// ---------------------------------------------------------------------------
// Normal forms
// ---------------------------------------------------------------------------

pub fn pretty_normal_form(q: &QueryTerm) -> String {
    let mut s = String::new();
    query_term(&mut s, q);
    s
}

fn query_term(out: &mut String, q: &QueryTerm) {
    if q.comprehensions.is_empty() {
        out.push_str("[]");
        return;
    }
    let many = q.comprehensions.len() > 1;
    for (i, c) in q.comprehensions.iter().enumerate() {
        if i > 0 {
            out.push_str(" ++ ");
        }
        if many {
            out.push('(');
        }
        comprehension(out, c);
        if many {
            out.push(')');
        }
    }
}

fn comprehension(out: &mut String, c: &Comprehension) {
    if !c.generators.is_empty() {
        out.push_str("for (");
        for (i, (x, t)) in c.generators.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(x);
            out.push_str(" <- ");
            out.push_str(t);
        }
        out.push_str(") ");
    } else if !c.guard.is_truth() {
        out.push_str("for () ");
    }
    if !c.guard.is_truth() {
        out.push_str("where (");
        base_term(out, &c.guard);
        out.push_str(") ");
    }
    out.push_str("return");
    if let Some(tag) = c.tag {
        out.push('^');
        out.push_str(&tag.alias());
    }
    out.push(' ');
    norm_term(out, &c.body);
}

fn norm_term(out: &mut String, n: &NormTerm) {
    match n {
        NormTerm::Base(b) => base_term(out, b),
        NormTerm::Record(fields) => record_syntax(out, fields, norm_term),
        NormTerm::Query(q) => {
            let needs_parens = q.comprehensions.len() == 1
                && (!q.comprehensions[0].generators.is_empty()
                    || !q.comprehensions[0].guard.is_truth());
            if needs_parens {
                out.push('(');
                query_term(out, q);
                out.push(')');
            } else {
                query_term(out, q);
            }
        }
    }
}

fn base_term(out: &mut String, b: &BaseTerm) {
    // Base terms reuse the term printer through a direct embedding.
    term(out, &base_to_term(b), UNION);
}

fn base_to_term(b: &BaseTerm) -> Term {
    match b {
        BaseTerm::Project(x, l) => Term::project(Term::var(x), l),
        BaseTerm::PrimApp(p, args) => {
            Term::PrimApp(p.clone(), args.iter().map(base_to_term).collect())
        }
        BaseTerm::IsEmpty(q) => Term::IsEmpty(Box::new(Term::Var(format!(
            "<query:{}>",
            pretty_normal_form(q)
        )))),
    }
}

// ---------------------------------------------------------------------------
// Shredded terms
// ---------------------------------------------------------------------------

pub fn pretty_shredded(q: &ShreddedQuery) -> String {
    let mut s = String::new();
    shredded_query(&mut s, q);
    s
}

fn shredded_query(out: &mut String, q: &ShreddedQuery) {
    if q.comprehensions.is_empty() {
        out.push_str("[]");
        return;
    }
    let many = q.comprehensions.len() > 1;
    for (i, c) in q.comprehensions.iter().enumerate() {
        if i > 0 {
            out.push_str("\n++ ");
        }
        if many {
            out.push('(');
        }
        shredded_comp(out, c);
        if many {
            out.push(')');
        }
    }
}

fn shredded_comp(out: &mut String, c: &ShreddedComp) {
    for clause in &c.clauses {
        out.push_str("for (");
        for (i, (x, t)) in clause.generators.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(x);
            out.push_str(" <- ");
            out.push_str(t);
        }
        out.push(')');
        if !clause.guard.is_truth() {
            out.push_str(" where (");
            shred_base(out, &clause.guard);
            out.push(')');
        }
        out.push(' ');
    }
    out.push_str("return^");
    out.push_str(&c.tag.alias());
    out.push_str(" <");
    index_term(out, &c.outer);
    out.push_str(", ");
    shred_inner(out, &c.inner);
    out.push('>');
}

fn index_term(out: &mut String, ix: &IndexTerm) {
    out.push_str(&ix.tag.alias());
    out.push_str(match ix.hole {
        IndexHole::Up => "(up)",
        IndexHole::Down => "(down)",
    });
}

fn shred_inner(out: &mut String, n: &ShredInner) {
    match n {
        ShredInner::Base(b) => shred_base(out, b),
        ShredInner::Record(fields) => record_syntax(out, fields, shred_inner),
        ShredInner::Index(ix) => index_term(out, ix),
    }
}

fn shred_base(out: &mut String, b: &ShredBase) {
    match b {
        ShredBase::Project(x, l) => {
            out.push_str(x);
            out.push('.');
            out.push_str(label_display(l));
        }
        ShredBase::PrimApp(p, args) => match p {
            Prim::Lit(l) => out.push_str(&l.to_string()),
            Prim::Not => {
                out.push_str("not ");
                shred_base_paren(out, &args[0]);
            }
            _ => {
                shred_base_paren(out, &args[0]);
                out.push(' ');
                out.push_str(p.name());
                out.push(' ');
                shred_base_paren(out, &args[1]);
            }
        },
        ShredBase::IsEmpty(q) => {
            out.push_str("empty(");
            shredded_query(out, q);
            out.push(')');
        }
    }
}

fn shred_base_paren(out: &mut String, b: &ShredBase) {
    let atomic = matches!(
        b,
        ShredBase::Project(_, _) | ShredBase::IsEmpty(_) | ShredBase::PrimApp(Prim::Lit(_), _)
    );
    if atomic {
        shred_base(out, b);
    } else {
        out.push('(');
        shred_base(out, b);
        out.push(')');
    }
}

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

pub fn pretty_type(t: &NestedType) -> String {
    let mut s = String::new();
    nested_type(&mut s, t);
    s
}

fn nested_type(out: &mut String, t: &NestedType) {
    match t {
        NestedType::Base(b) => out.push_str(&b.to_string()),
        NestedType::Record(fields) => {
            out.push('{');
            for (i, (l, ft)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(l);
                out.push_str(": ");
                nested_type(out, ft);
            }
            out.push('}');
        }
        NestedType::Bag(elem) => {
            out.push_str("Bag ");
            if matches!(elem.as_ref(), NestedType::Base(_) | NestedType::Record(_)) {
                nested_type(out, elem);
            } else {
                out.push('(');
                nested_type(out, elem);
                out.push(')');
            }
        }
        NestedType::Fun(a, b) => {
            out.push('(');
            nested_type(out, a);
            out.push_str(" -> ");
            nested_type(out, b);
            out.push(')');
        }
    }
}

pub fn pretty_flat_type(t: &FlatType) -> String {
    let mut s = String::new();
    flat_type(&mut s, t);
    s
}

fn flat_type(out: &mut String, t: &FlatType) {
    match t {
        FlatType::Base(b) => out.push_str(&b.to_string()),
        FlatType::Index => out.push_str("Index"),
        FlatType::Record(fields) => {
            out.push('{');
            for (i, (l, ft)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(l);
                out.push_str(": ");
                flat_type(out, ft);
            }
            out.push('}');
        }
    }
}

pub fn pretty_shredded_type(t: &ShreddedType) -> String {
    format!("Bag<Index, {}>", pretty_flat_type(&t.payload))
}

// ---------------------------------------------------------------------------
// Values
// ---------------------------------------------------------------------------

/// JSON rendering used by the CLI: bags become arrays sorted by the value
/// total order so diffs are stable.
pub fn value_to_json(v: &Value) -> serde_json::Value {
    fn go(v: &Value) -> serde_json::Value {
        match v {
            Value::Const(Literal::Bool(b)) => serde_json::Value::Bool(*b),
            Value::Const(Literal::Int(n)) => serde_json::Value::from(*n),
            Value::Const(Literal::Str(s)) => serde_json::Value::String(s.clone()),
            Value::Const(Literal::Unit) => serde_json::Value::Null,
            Value::Record(fields) => {
                serde_json::Value::Object(fields.iter().map(|(l, v)| (l.clone(), go(v))).collect())
            }
            Value::Bag(items) => {
                serde_json::Value::Array(items.iter().map(|(v, _)| go(v)).collect())
            }
            Value::Idx(ix) => serde_json::Value::String(ix.to_string()),
        }
    }
    go(&v.canonical())
}

/// Display form used in test output; follows the order of the value as
/// given, annotations after `@`.
pub fn display_value(v: &Value) -> String {
    fn go(out: &mut String, v: &Value) {
        match v {
            Value::Const(l) => out.push_str(&l.to_string()),
            Value::Record(fields) => record_syntax(out, fields, go),
            Value::Bag(items) => {
                out.push('[');
                for (i, (v, ann)) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    go(out, v);
                    if let Some(ix) = ann {
                        out.push('@');
                        out.push_str(&ix.to_string());
                    }
                }
                out.push(']');
            }
            Value::Idx(ix) => out.push_str(&ix.to_string()),
        }
    }
    let mut s = String::new();
    go(&mut s, v);
    s
}
