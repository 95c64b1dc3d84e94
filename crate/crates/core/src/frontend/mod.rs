//! Surface syntax, schema and data files, and typechecking.
//!
//! `elaborate` turns a parsed query file into a single closed term: named
//! bindings are inlined by substitution in order, saturated lambda
//! applications are reduced, table names are resolved, and every binder is
//! renamed apart.

pub mod parser;
pub mod rename;
pub mod schema;
pub mod typecheck;

use std::collections::HashSet;

pub use parser::{parse_query, SourceQuery};
pub use schema::{parse_data, parse_schema};
pub use typecheck::{
    typecheck_query, typecheck_query_at, typecheck_term, typecheck_term_lenient, TypeEnv,
};

use crate::ast::{Schema, Term};
use crate::error::{Error, Result};
use rename::{substitute, uniquify, NameSupply};

/// Inline-reduction budget; generously above anything the corpus needs and
/// only a guard against runaway expansion of pathological inputs.
const INLINE_FUEL: usize = 1_000_000;

/// Inlines bindings, reduces the lambda applications this exposes, resolves
/// table names against the schema and renames binders apart.
pub fn elaborate(q: &SourceQuery, schema: &Schema) -> Result<Term> {
    let mut supply = NameSupply::new();
    // Bindings are nonrecursive; later ones may reference earlier ones, so
    // each definition is closed against the prefix before use.
    let mut defs: Vec<(String, Term)> = Vec::new();
    for (name, def) in &q.bindings {
        let mut def = def.clone();
        for (earlier, earlier_def) in defs.iter().rev() {
            def = substitute(&def, earlier, earlier_def, &mut supply);
        }
        defs.push((name.clone(), def));
    }
    let mut main = q.main.clone();
    for (name, def) in defs.iter().rev() {
        main = substitute(&main, name, def, &mut supply);
    }
    let mut fuel = INLINE_FUEL;
    let reduced = beta_inline(&main, &mut supply, &mut fuel)?;
    let resolved = resolve_tables(&reduced, schema);
    let avoid: Vec<&str> = schema.tables.keys().map(String::as_str).collect();
    Ok(uniquify(&resolved, &avoid))
}

/// Reduces `App(Lam(x, body), arg)` to fixpoint. Binding inlining produces
/// exactly these redexes, and reducing them now means the typechecker never
/// has to guess a lambda's parameter type.
fn beta_inline(t: &Term, supply: &mut NameSupply, fuel: &mut usize) -> Result<Term> {
    if *fuel == 0 {
        return Err(Error::InternalNonTermination(
            "binding inlining".to_string(),
        ));
    }
    *fuel -= 1;
    Ok(match t {
        Term::App(f, a) => {
            let f = beta_inline(f, supply, fuel)?;
            let a = beta_inline(a, supply, fuel)?;
            match f {
                Term::Lam(x, body) => {
                    let reduced = substitute(&body, &x, &a, supply);
                    beta_inline(&reduced, supply, fuel)?
                }
                other => Term::App(Box::new(other), Box::new(a)),
            }
        }
        Term::Var(_) | Term::Table(_) | Term::Empty => t.clone(),
        Term::PrimApp(p, args) => Term::PrimApp(
            p.clone(),
            args.iter()
                .map(|x| beta_inline(x, supply, fuel))
                .collect::<Result<_>>()?,
        ),
        Term::If(c, x, y) => Term::If(
            Box::new(beta_inline(c, supply, fuel)?),
            Box::new(beta_inline(x, supply, fuel)?),
            Box::new(beta_inline(y, supply, fuel)?),
        ),
        Term::Lam(x, body) => Term::Lam(x.clone(), Box::new(beta_inline(body, supply, fuel)?)),
        Term::Record(fields) => Term::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), beta_inline(v, supply, fuel)?)))
                .collect::<Result<_>>()?,
        ),
        Term::Project(e, l) => Term::Project(Box::new(beta_inline(e, supply, fuel)?), l.clone()),
        Term::Singleton(e) => Term::Singleton(Box::new(beta_inline(e, supply, fuel)?)),
        Term::Union(x, y) => Term::Union(
            Box::new(beta_inline(x, supply, fuel)?),
            Box::new(beta_inline(y, supply, fuel)?),
        ),
        Term::For(x, src, body) => Term::For(
            x.clone(),
            Box::new(beta_inline(src, supply, fuel)?),
            Box::new(beta_inline(body, supply, fuel)?),
        ),
        Term::IsEmpty(e) => Term::IsEmpty(Box::new(beta_inline(e, supply, fuel)?)),
    })
}

/// Rewrites free variables naming schema tables into table references.
pub fn resolve_tables(t: &Term, schema: &Schema) -> Term {
    fn go(t: &Term, bound: &mut HashSet<String>, schema: &Schema) -> Term {
        match t {
            Term::Var(x) => {
                if !bound.contains(x) && schema.tables.contains_key(x) {
                    Term::Table(x.clone())
                } else {
                    Term::Var(x.clone())
                }
            }
            Term::Table(_) | Term::Empty => t.clone(),
            Term::PrimApp(p, args) => Term::PrimApp(
                p.clone(),
                args.iter().map(|a| go(a, bound, schema)).collect(),
            ),
            Term::If(c, a, b) => Term::If(
                Box::new(go(c, bound, schema)),
                Box::new(go(a, bound, schema)),
                Box::new(go(b, bound, schema)),
            ),
            Term::Lam(x, body) => {
                let added = bound.insert(x.clone());
                let body = go(body, bound, schema);
                if added {
                    bound.remove(x);
                }
                Term::Lam(x.clone(), Box::new(body))
            }
            Term::App(f, a) => Term::App(
                Box::new(go(f, bound, schema)),
                Box::new(go(a, bound, schema)),
            ),
            Term::Record(fields) => Term::Record(
                fields
                    .iter()
                    .map(|(l, v)| (l.clone(), go(v, bound, schema)))
                    .collect(),
            ),
            Term::Project(e, l) => Term::Project(Box::new(go(e, bound, schema)), l.clone()),
            Term::Singleton(e) => Term::Singleton(Box::new(go(e, bound, schema))),
            Term::Union(a, b) => Term::Union(
                Box::new(go(a, bound, schema)),
                Box::new(go(b, bound, schema)),
            ),
            Term::For(x, src, body) => {
                let src = go(src, bound, schema);
                let added = bound.insert(x.clone());
                let body = go(body, bound, schema);
                if added {
                    bound.remove(x);
                }
                Term::For(x.clone(), Box::new(src), Box::new(body))
            }
            Term::IsEmpty(e) => Term::IsEmpty(Box::new(go(e, bound, schema))),
        }
    }
    go(t, &mut HashSet::new(), schema)
}

/// Parses, elaborates and typechecks a query file in one step.
pub fn load_query(text: &str, schema: &Schema) -> Result<(Term, crate::ast::NestedType)> {
    let parsed = parse_query(text)?;
    let term = elaborate(&parsed, schema)?;
    let ty = typecheck_query(&term, schema)?;
    Ok((term, ty))
}
