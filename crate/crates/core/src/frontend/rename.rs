//! Bound-variable renaming and capture-avoiding substitution.
//!
//! `uniquify` makes every binder in a term globally distinct, preserving
//! original names where it can; later stages (let-insertion in particular)
//! rely on this.

use std::collections::{HashMap, HashSet};

use crate::ast::Term;

/// Allocates fresh names, preferring the original when unused.
pub struct NameSupply {
    used: HashSet<String>,
    counters: HashMap<String, u32>,
}

impl NameSupply {
    pub fn new() -> NameSupply {
        NameSupply {
            used: HashSet::new(),
            counters: HashMap::new(),
        }
    }

    pub fn reserve(&mut self, name: &str) {
        self.used.insert(name.to_string());
    }

    pub fn fresh(&mut self, base: &str) -> String {
        if self.used.insert(base.to_string()) {
            return base.to_string();
        }
        let counter = self.counters.entry(base.to_string()).or_insert(0);
        loop {
            *counter += 1;
            let candidate = format!("{base}_{counter}");
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
        }
    }
}

impl Default for NameSupply {
    fn default() -> Self {
        NameSupply::new()
    }
}

/// Renames every binder to a globally unique name. `avoid` seeds the supply
/// with names that must not be produced (table names, reserved variables).
pub fn uniquify(t: &Term, avoid: &[&str]) -> Term {
    let mut supply = NameSupply::new();
    for name in avoid {
        supply.reserve(name);
    }
    fn go(t: &Term, env: &HashMap<String, String>, supply: &mut NameSupply) -> Term {
        match t {
            Term::Var(x) => Term::Var(env.get(x).cloned().unwrap_or_else(|| x.clone())),
            Term::Table(t) => Term::Table(t.clone()),
            Term::PrimApp(p, args) => {
                Term::PrimApp(p.clone(), args.iter().map(|a| go(a, env, supply)).collect())
            }
            Term::If(c, a, b) => Term::If(
                Box::new(go(c, env, supply)),
                Box::new(go(a, env, supply)),
                Box::new(go(b, env, supply)),
            ),
            Term::Lam(x, body) => {
                let fresh = supply.fresh(x);
                let mut env2 = env.clone();
                env2.insert(x.clone(), fresh.clone());
                Term::Lam(fresh, Box::new(go(body, &env2, supply)))
            }
            Term::App(f, a) => {
                Term::App(Box::new(go(f, env, supply)), Box::new(go(a, env, supply)))
            }
            Term::Record(fields) => Term::Record(
                fields
                    .iter()
                    .map(|(l, v)| (l.clone(), go(v, env, supply)))
                    .collect(),
            ),
            Term::Project(e, l) => Term::Project(Box::new(go(e, env, supply)), l.clone()),
            Term::Empty => Term::Empty,
            Term::Singleton(e) => Term::Singleton(Box::new(go(e, env, supply))),
            Term::Union(a, b) => {
                Term::Union(Box::new(go(a, env, supply)), Box::new(go(b, env, supply)))
            }
            Term::For(x, src, body) => {
                let src = go(src, env, supply);
                let fresh = supply.fresh(x);
                let mut env2 = env.clone();
                env2.insert(x.clone(), fresh.clone());
                Term::For(fresh, Box::new(src), Box::new(go(body, &env2, supply)))
            }
            Term::IsEmpty(e) => Term::IsEmpty(Box::new(go(e, env, supply))),
        }
    }
    go(t, &HashMap::new(), &mut supply)
}

pub fn free_vars(t: &Term) -> HashSet<String> {
    fn go(t: &Term, bound: &mut Vec<String>, out: &mut HashSet<String>) {
        match t {
            Term::Var(x) => {
                if !bound.iter().any(|b| b == x) {
                    out.insert(x.clone());
                }
            }
            Term::Table(_) | Term::Empty => {}
            Term::PrimApp(_, args) => args.iter().for_each(|a| go(a, bound, out)),
            Term::If(c, a, b) => {
                go(c, bound, out);
                go(a, bound, out);
                go(b, bound, out);
            }
            Term::Lam(x, body) => {
                bound.push(x.clone());
                go(body, bound, out);
                bound.pop();
            }
            Term::App(f, a) | Term::Union(f, a) => {
                go(f, bound, out);
                go(a, bound, out);
            }
            Term::Record(fields) => fields.iter().for_each(|(_, v)| go(v, bound, out)),
            Term::Project(e, _) | Term::Singleton(e) | Term::IsEmpty(e) => go(e, bound, out),
            Term::For(x, src, body) => {
                go(src, bound, out);
                bound.push(x.clone());
                go(body, bound, out);
                bound.pop();
            }
        }
    }
    let mut out = HashSet::new();
    go(t, &mut Vec::new(), &mut out);
    out
}

/// Capture-avoiding substitution `t[x := arg]`. Binders that would capture
/// a free variable of `arg` are renamed through `supply`.
pub fn substitute(t: &Term, x: &str, arg: &Term, supply: &mut NameSupply) -> Term {
    let fv = free_vars(arg);
    fn go(t: &Term, x: &str, arg: &Term, fv: &HashSet<String>, supply: &mut NameSupply) -> Term {
        match t {
            Term::Var(y) if y == x => arg.clone(),
            Term::Var(_) | Term::Table(_) | Term::Empty => t.clone(),
            Term::PrimApp(p, args) => Term::PrimApp(
                p.clone(),
                args.iter().map(|a| go(a, x, arg, fv, supply)).collect(),
            ),
            Term::If(c, a, b) => Term::If(
                Box::new(go(c, x, arg, fv, supply)),
                Box::new(go(a, x, arg, fv, supply)),
                Box::new(go(b, x, arg, fv, supply)),
            ),
            Term::Lam(y, body) => {
                if y == x {
                    t.clone()
                } else if fv.contains(y) {
                    let fresh = supply.fresh(y);
                    let renamed = substitute(body, y, &Term::Var(fresh.clone()), supply);
                    Term::Lam(fresh, Box::new(go(&renamed, x, arg, fv, supply)))
                } else {
                    Term::Lam(y.clone(), Box::new(go(body, x, arg, fv, supply)))
                }
            }
            Term::App(f, a) => Term::App(
                Box::new(go(f, x, arg, fv, supply)),
                Box::new(go(a, x, arg, fv, supply)),
            ),
            Term::Record(fields) => Term::Record(
                fields
                    .iter()
                    .map(|(l, v)| (l.clone(), go(v, x, arg, fv, supply)))
                    .collect(),
            ),
            Term::Project(e, l) => Term::Project(Box::new(go(e, x, arg, fv, supply)), l.clone()),
            Term::Singleton(e) => Term::Singleton(Box::new(go(e, x, arg, fv, supply))),
            Term::Union(a, b) => Term::Union(
                Box::new(go(a, x, arg, fv, supply)),
                Box::new(go(b, x, arg, fv, supply)),
            ),
            Term::For(y, src, body) => {
                let src = Box::new(go(src, x, arg, fv, supply));
                if y == x {
                    Term::For(y.clone(), src, body.clone())
                } else if fv.contains(y) {
                    let fresh = supply.fresh(y);
                    let renamed = substitute(body, y, &Term::Var(fresh.clone()), supply);
                    Term::For(fresh, src, Box::new(go(&renamed, x, arg, fv, supply)))
                } else {
                    Term::For(y.clone(), src, Box::new(go(body, x, arg, fv, supply)))
                }
            }
            Term::IsEmpty(e) => Term::IsEmpty(Box::new(go(e, x, arg, fv, supply))),
        }
    }
    go(t, x, arg, &fv, supply)
}
