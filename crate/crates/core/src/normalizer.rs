//! Three-stage query normalization: symbolic evaluation, conditional
//! hoisting, and a type-directed split into unions of comprehensions,
//! followed by static-tag annotation.
//!
//! Symbolic evaluation performs beta-steps and commuting conversions until
//! no elimination frame holds a hoistable term. Hoisting then lifts
//! conditionals out of primitive arguments, record fields and singletons
//! so the split stage can turn them into where-guards. Both
//! relations are strongly normalizing; the fuel counter exists purely to
//! turn an implementation bug into an error instead of a hang. Hoisting can
//! expose new symbolic redexes (a lifted conditional may land in test
//! position of another conditional), so the two stages run to a joint
//! fixpoint.

use std::collections::{HashMap, HashSet};

use crate::ast::*;
use crate::error::{Error, Result};
use crate::frontend::rename::{substitute, NameSupply};
use crate::frontend::typecheck::{typecheck_term_lenient, TypeEnv};

/// Which rewrite stage an applied rule belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    SymbolicEval,
    HoistIf,
    Split,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::SymbolicEval => write!(f, "c"),
            Stage::HoistIf => write!(f, "h"),
            Stage::Split => write!(f, "split"),
        }
    }
}

/// Applied rules in order, with the redex location as a child-index path.
#[derive(Debug, Clone, Default)]
pub struct RewriteTrace {
    pub steps: Vec<(Stage, &'static str, Vec<usize>)>,
}

impl RewriteTrace {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (stage, rule, path) in &self.steps {
            let loc: Vec<String> = path.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("[{stage}] {rule} at {}\n", loc.join(".")));
        }
        out
    }
}

struct Rewriter {
    fuel: u64,
    trace: RewriteTrace,
}

impl Rewriter {
    fn new(term_size: usize) -> Rewriter {
        let size = term_size as u64;
        Rewriter {
            fuel: (10 * size * size).max(10_000),
            trace: RewriteTrace::default(),
        }
    }

    fn tick(&mut self, stage: Stage, rule: &'static str, path: &[usize]) -> Result<()> {
        if self.fuel == 0 {
            return Err(Error::InternalNonTermination(format!(
                "{stage} stage, rule {rule}"
            )));
        }
        self.fuel -= 1;
        self.trace.steps.push((stage, rule, path.to_vec()));
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Stage c: symbolic evaluation
// ---------------------------------------------------------------------------

/// One root step of the symbolic evaluation relation, or None when the root
/// is not a redex.
fn root_step_c(t: &Term, supply: &mut NameSupply) -> Option<(Term, &'static str)> {
    match t {
        // Beta rules: introduction inside the matching elimination frame.
        Term::App(f, a) => match f.as_ref() {
            Term::Lam(x, body) => Some((substitute(body, x, a, supply), "beta-fun")),
            other => hoist_from_frame(other, |m| Term::App(Box::new(m), a.clone())),
        },
        Term::Project(e, l) => match e.as_ref() {
            Term::Record(fields) => fields
                .iter()
                .find(|(m, _)| m == l)
                .map(|(_, v)| (v.clone(), "beta-record")),
            other => hoist_from_frame(other, |m| Term::Project(Box::new(m), l.clone())),
        },
        Term::If(c, a, b) => match c.as_ref() {
            Term::PrimApp(Prim::Lit(Literal::Bool(true)), _) => {
                Some((a.as_ref().clone(), "beta-if-true"))
            }
            Term::PrimApp(Prim::Lit(Literal::Bool(false)), _) => {
                Some((b.as_ref().clone(), "beta-if-false"))
            }
            other => hoist_from_frame(other, |m| Term::If(Box::new(m), a.clone(), b.clone())),
        },
        Term::For(x, src, body) => match src.as_ref() {
            Term::Singleton(m) => Some((substitute(body, x, m, supply), "beta-for")),
            other => hoist_from_frame(other, |m| Term::For(x.clone(), Box::new(m), body.clone())),
        },
        _ => None,
    }
}

/// Commuting conversions: hoist a comprehension, conditional, empty bag or
/// union out of the elimination frame `frame`.
fn hoist_from_frame(inner: &Term, frame: impl Fn(Term) -> Term) -> Option<(Term, &'static str)> {
    match inner {
        Term::For(x, m, n) => Some((
            Term::For(x.clone(), m.clone(), Box::new(frame(n.as_ref().clone()))),
            "hoist-for",
        )),
        Term::If(l, m, n) => Some((
            Term::If(
                l.clone(),
                Box::new(frame(m.as_ref().clone())),
                Box::new(frame(n.as_ref().clone())),
            ),
            "hoist-if",
        )),
        Term::Empty => Some((Term::Empty, "hoist-empty")),
        Term::Union(m1, m2) => Some((
            Term::Union(
                Box::new(frame(m1.as_ref().clone())),
                Box::new(frame(m2.as_ref().clone())),
            ),
            "hoist-union",
        )),
        _ => None,
    }
}

fn reduce_c(
    t: &Term,
    rw: &mut Rewriter,
    supply: &mut NameSupply,
    path: &mut Vec<usize>,
) -> Result<Term> {
    if let Some((t2, rule)) = root_step_c(t, supply) {
        rw.tick(Stage::SymbolicEval, rule, path)?;
        return reduce_c(&t2, rw, supply, path);
    }
    let t2 = map_children(t, &mut |i, child| {
        path.push(i);
        let out = reduce_c(child, rw, supply, path);
        path.pop();
        out
    })?;
    if let Some((t3, rule)) = root_step_c(&t2, supply) {
        rw.tick(Stage::SymbolicEval, rule, path)?;
        return reduce_c(&t3, rw, supply, path);
    }
    Ok(t2)
}

// ---------------------------------------------------------------------------
// Stage h: conditional hoisting
// ---------------------------------------------------------------------------

/// A term whose shape pins it to bag type, conservatively through
/// conditionals. Exact on the symbolically evaluated, well-typed terms the
/// hoist stage receives.
fn bag_shaped(t: &Term) -> bool {
    match t {
        Term::Empty
        | Term::Singleton(_)
        | Term::For(_, _, _)
        | Term::Table(_)
        | Term::Union(_, _) => true,
        Term::If(_, a, b) => bag_shaped(a) || bag_shaped(b),
        _ => false,
    }
}

/// One root step of the hoisting relation: a conditional directly under a
/// primitive application, record field or singleton is lifted above it,
/// duplicating the frame into both branches. The leftmost such position
/// fires first.
///
/// Bag-typed conditionals are not hoisted: the split stage turns them into
/// where-guards of the comprehensions they contain wherever they sit, and
/// lifting one over its frame would re-split an already-normal union into
/// strictly more comprehensions on every embedding round trip.
fn root_step_h(t: &Term) -> Option<(Term, &'static str)> {
    let lift = |l: &Term, m: Term, n: Term| Term::If(Box::new(l.clone()), Box::new(m), Box::new(n));
    let hoistable = |m: &Term, n: &Term| !bag_shaped(m) && !bag_shaped(n);
    match t {
        Term::PrimApp(p, args) => {
            for (i, arg) in args.iter().enumerate() {
                if let Term::If(l, m, n) = arg {
                    if !hoistable(m, n) {
                        continue;
                    }
                    let mut left = args.clone();
                    left[i] = m.as_ref().clone();
                    let mut right = args.clone();
                    right[i] = n.as_ref().clone();
                    return Some((
                        lift(
                            l,
                            Term::PrimApp(p.clone(), left),
                            Term::PrimApp(p.clone(), right),
                        ),
                        "hoist-if-prim",
                    ));
                }
            }
            None
        }
        Term::Record(fields) => {
            for (i, (_, v)) in fields.iter().enumerate() {
                if let Term::If(l, m, n) = v {
                    if !hoistable(m, n) {
                        continue;
                    }
                    let mut left = fields.clone();
                    left[i].1 = m.as_ref().clone();
                    let mut right = fields.clone();
                    right[i].1 = n.as_ref().clone();
                    return Some((
                        lift(l, Term::Record(left), Term::Record(right)),
                        "hoist-if-record",
                    ));
                }
            }
            None
        }
        Term::Singleton(e) => {
            if let Term::If(l, m, n) = e.as_ref() {
                if hoistable(m, n) {
                    return Some((
                        lift(l, Term::Singleton(m.clone()), Term::Singleton(n.clone())),
                        "hoist-if-return",
                    ));
                }
            }
            None
        }
        _ => None,
    }
}

fn reduce_h(t: &Term, rw: &mut Rewriter, path: &mut Vec<usize>) -> Result<Term> {
    if let Some((t2, rule)) = root_step_h(t) {
        rw.tick(Stage::HoistIf, rule, path)?;
        return reduce_h(&t2, rw, path);
    }
    let t2 = map_children(t, &mut |i, child| {
        path.push(i);
        let out = reduce_h(child, rw, path);
        path.pop();
        out
    })?;
    if let Some((t3, rule)) = root_step_h(&t2) {
        rw.tick(Stage::HoistIf, rule, path)?;
        return reduce_h(&t3, rw, path);
    }
    Ok(t2)
}

fn map_children(t: &Term, f: &mut impl FnMut(usize, &Term) -> Result<Term>) -> Result<Term> {
    Ok(match t {
        Term::Var(_) | Term::Table(_) | Term::Empty => t.clone(),
        Term::PrimApp(p, args) => Term::PrimApp(
            p.clone(),
            args.iter()
                .enumerate()
                .map(|(i, a)| f(i, a))
                .collect::<Result<_>>()?,
        ),
        Term::If(c, a, b) => Term::If(Box::new(f(0, c)?), Box::new(f(1, a)?), Box::new(f(2, b)?)),
        Term::Lam(x, body) => Term::Lam(x.clone(), Box::new(f(0, body)?)),
        Term::App(x, y) => Term::App(Box::new(f(0, x)?), Box::new(f(1, y)?)),
        Term::Record(fields) => Term::Record(
            fields
                .iter()
                .enumerate()
                .map(|(i, (l, v))| Ok((l.clone(), f(i, v)?)))
                .collect::<Result<_>>()?,
        ),
        Term::Project(e, l) => Term::Project(Box::new(f(0, e)?), l.clone()),
        Term::Singleton(e) => Term::Singleton(Box::new(f(0, e)?)),
        Term::Union(x, y) => Term::Union(Box::new(f(0, x)?), Box::new(f(1, y)?)),
        Term::For(x, src, body) => {
            Term::For(x.clone(), Box::new(f(0, src)?), Box::new(f(1, body)?))
        }
        Term::IsEmpty(e) => Term::IsEmpty(Box::new(f(0, e)?)),
    })
}

/// Symbolic evaluation to its normal form: no beta redex and no hoistable
/// term left inside an elimination frame. Emptiness tests are reduced
/// inside but otherwise stay inert.
pub fn symbolic_eval(t: &Term) -> Result<Term> {
    symbolic_eval_traced(t).map(|(t, _)| t)
}

pub fn symbolic_eval_traced(t: &Term) -> Result<(Term, RewriteTrace)> {
    let mut rw = Rewriter::new(t.size());
    let mut supply = supply_for(t);
    let out = reduce_c(t, &mut rw, &mut supply, &mut Vec::new())?;
    Ok((out, rw.trace))
}

/// Hoists every conditional up to the nearest comprehension body.
pub fn hoist_ifs(t: &Term) -> Result<Term> {
    let mut rw = Rewriter::new(t.size());
    reduce_h(t, &mut rw, &mut Vec::new())
}

fn supply_for(t: &Term) -> NameSupply {
    let mut supply = NameSupply::new();
    fn reserve(t: &Term, supply: &mut NameSupply) {
        match t {
            Term::Var(x) => supply.reserve(x),
            Term::Lam(x, b) => {
                supply.reserve(x);
                reserve(b, supply);
            }
            Term::For(x, s, b) => {
                supply.reserve(x);
                reserve(s, supply);
                reserve(b, supply);
            }
            Term::Table(x) => supply.reserve(x),
            Term::Empty => {}
            Term::PrimApp(_, args) => args.iter().for_each(|a| reserve(a, supply)),
            Term::If(a, b, c) => {
                reserve(a, supply);
                reserve(b, supply);
                reserve(c, supply);
            }
            Term::App(a, b) | Term::Union(a, b) => {
                reserve(a, supply);
                reserve(b, supply);
            }
            Term::Record(fs) => fs.iter().for_each(|(_, v)| reserve(v, supply)),
            Term::Project(e, _) | Term::Singleton(e) | Term::IsEmpty(e) => reserve(e, supply),
        }
    }
    reserve(t, &mut supply);
    supply
}

// ---------------------------------------------------------------------------
// Stage split: the structurally recursive normalization function
// ---------------------------------------------------------------------------

struct Splitter<'a> {
    schema: &'a Schema,
    supply: NameSupply,
    eta_counter: u32,
}

impl<'a> Splitter<'a> {
    fn fresh_eta(&mut self) -> String {
        // Fresh generators for eta-expanded tables live in a reserved
        // namespace that user identifiers cannot use.
        let name = format!("_t{}", self.eta_counter);
        self.eta_counter += 1;
        self.supply.reserve(&name);
        name
    }

    fn split_query(
        &mut self,
        m: &Term,
        elem: &NestedType,
        env: &HashMap<String, NestedType>,
    ) -> Result<QueryTerm> {
        let comps = self.split_bag(m, elem, Vec::new(), BaseTerm::truth(), env)?;
        Ok(QueryTerm {
            comprehensions: comps,
        })
    }

    fn split_bag(
        &mut self,
        m: &Term,
        elem: &NestedType,
        gens: Vec<(String, String)>,
        guard: BaseTerm,
        env: &HashMap<String, NestedType>,
    ) -> Result<Vec<Comprehension>> {
        match m {
            Term::Singleton(body) => {
                let mut env2 = env.clone();
                for (x, t) in &gens {
                    env2.insert(x.clone(), self.schema.table(t)?.row_type());
                }
                let body = self.split_norm(body, elem, &env2)?;
                Ok(vec![Comprehension {
                    generators: gens,
                    guard,
                    body,
                    tag: None,
                }])
            }
            Term::For(x, src, body) => match src.as_ref() {
                Term::Table(t) => {
                    let mut gens = gens;
                    gens.push((x.clone(), t.clone()));
                    self.split_bag(body, elem, gens, guard, env)
                }
                other => Err(Error::NotNormalInput(format!(
                    "comprehension source is not a table: {other:?}"
                ))),
            },
            Term::Table(t) => {
                let x = self.fresh_eta();
                let mut gens = gens;
                gens.push((x.clone(), t.clone()));
                self.split_bag(
                    &Term::Singleton(Box::new(Term::Var(x))),
                    elem,
                    gens,
                    guard,
                    env,
                )
            }
            Term::Empty => Ok(Vec::new()),
            Term::Union(a, b) => {
                let mut left = self.split_bag(a, elem, gens.clone(), guard.clone(), env)?;
                let mut right = self.split_bag(b, elem, gens, guard, env)?;
                left.append(&mut right);
                Ok(left)
            }
            Term::If(cond, a, b) => {
                let mut env2 = env.clone();
                for (x, t) in &gens {
                    env2.insert(x.clone(), self.schema.table(t)?.row_type());
                }
                let cond = self.split_base(cond, &env2)?;
                let mut left =
                    self.split_bag(a, elem, gens.clone(), guard.clone().conj(cond.clone()), env)?;
                let mut right = self.split_bag(b, elem, gens, guard.conj(cond.negate()), env)?;
                left.append(&mut right);
                Ok(left)
            }
            other => Err(Error::NotNormalInput(format!(
                "unexpected bag-position term: {other:?}"
            ))),
        }
    }

    fn split_norm(
        &mut self,
        m: &Term,
        ty: &NestedType,
        env: &HashMap<String, NestedType>,
    ) -> Result<NormTerm> {
        match ty {
            NestedType::Base(_) => Ok(NormTerm::Base(self.split_base(m, env)?)),
            NestedType::Record(fields) => {
                let out = fields
                    .iter()
                    .map(|(l, fty)| {
                        let field_term = match m {
                            // Variables of record type are eta-expanded.
                            Term::Var(x) => Term::project(Term::var(x), l),
                            Term::Record(fs) => fs
                                .iter()
                                .find(|(fl, _)| fl == l)
                                .map(|(_, v)| v.clone())
                                .ok_or_else(|| {
                                    Error::NotNormalInput(format!("record missing field {l}"))
                                })?,
                            other => {
                                return Err(Error::NotNormalInput(format!(
                                    "unexpected record-position term: {other:?}"
                                )))
                            }
                        };
                        Ok((l.clone(), self.split_norm(&field_term, fty, env)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(NormTerm::Record(out))
            }
            NestedType::Bag(elem) => Ok(NormTerm::Query(self.split_query(m, elem, env)?)),
            NestedType::Fun(_, _) => Err(Error::TypeHasFunctions),
        }
    }

    fn split_base(&mut self, m: &Term, env: &HashMap<String, NestedType>) -> Result<BaseTerm> {
        match m {
            Term::Project(e, l) => match e.as_ref() {
                Term::Var(x) => Ok(BaseTerm::Project(x.clone(), l.clone())),
                other => Err(Error::NotNormalInput(format!(
                    "projection of a non-variable: {other:?}"
                ))),
            },
            Term::PrimApp(p, args) => Ok(BaseTerm::PrimApp(
                p.clone(),
                args.iter()
                    .map(|a| self.split_base(a, env))
                    .collect::<Result<_>>()?,
            )),
            Term::IsEmpty(inner) => {
                // The emptiness test's body is normalized as an independent
                // query at its own type. An element type left open by empty
                // bags is never consumed by the split, so the lenient
                // placeholder is fine here.
                let tenv = TypeEnv { vars: env.clone() };
                let ty = typecheck_term_lenient(inner, self.schema, &tenv)?;
                let elem = match ty {
                    NestedType::Bag(elem) => *elem,
                    other => {
                        return Err(Error::NotNormalInput(format!(
                            "emptiness test over non-bag {other:?}"
                        )))
                    }
                };
                Ok(BaseTerm::IsEmpty(Box::new(
                    self.split_query(inner, &elem, env)?,
                )))
            }
            other => Err(Error::NotNormalInput(format!(
                "unexpected base-position term: {other:?}"
            ))),
        }
    }
}

/// Type-directed split of a hoisted term into the normal-form grammar:
/// unions are floated to the top, tables and record variables are
/// eta-expanded, and conditionals inside bag bodies become where-guards.
pub fn split(m: &Term, ty: &NestedType, schema: &Schema) -> Result<NormalForm> {
    let elem = match ty {
        NestedType::Bag(elem) => elem.as_ref(),
        other => {
            return Err(Error::NotNormalInput(format!(
                "query type must be a bag, got {other:?}"
            )))
        }
    };
    let mut splitter = Splitter {
        schema,
        supply: supply_for(m),
        eta_counter: 0,
    };
    let nf = splitter.split_query(m, elem, &HashMap::new())?;
    Ok(ensure_distinct_generators(nf))
}

/// Full normalization pipeline for a closed flat-nested query.
pub fn normalize(m: &Term, ty: &NestedType, schema: &Schema) -> Result<NormalForm> {
    normalize_traced(m, ty, schema).map(|(nf, _)| nf)
}

pub fn normalize_traced(
    m: &Term,
    ty: &NestedType,
    schema: &Schema,
) -> Result<(NormalForm, RewriteTrace)> {
    let mut rw = Rewriter::new(m.size());
    let mut supply = supply_for(m);
    // Hoisting a conditional can land it in test position of an enclosing
    // conditional, which is a symbolic redex again, so the two stages
    // iterate to a joint fixpoint.
    let mut cur = m.clone();
    loop {
        let reduced = reduce_c(&cur, &mut rw, &mut supply, &mut Vec::new())?;
        let hoisted = reduce_h(&reduced, &mut rw, &mut Vec::new())?;
        if hoisted == cur {
            break;
        }
        cur = hoisted;
    }
    let nf = split(&cur, ty, schema)?;
    Ok((nf, rw.trace))
}

/// Renames generator variables apart across the whole normal form,
/// preserving first occurrences. Let-insertion requires global distinctness.
fn ensure_distinct_generators(nf: NormalForm) -> NormalForm {
    let mut used: HashSet<String> = HashSet::new();
    let mut counters: HashMap<String, u32> = HashMap::new();
    rename_query(nf, &mut used, &mut counters, &HashMap::new())
}

fn rename_query(
    nf: QueryTerm,
    used: &mut HashSet<String>,
    counters: &mut HashMap<String, u32>,
    subst: &HashMap<String, String>,
) -> QueryTerm {
    QueryTerm {
        comprehensions: nf
            .comprehensions
            .into_iter()
            .map(|c| {
                let mut subst = subst.clone();
                let generators = c
                    .generators
                    .into_iter()
                    .map(|(x, t)| {
                        let fresh = if used.insert(x.clone()) {
                            x.clone()
                        } else {
                            let counter = counters.entry(x.clone()).or_insert(0);
                            loop {
                                *counter += 1;
                                let candidate = format!("{x}_{counter}");
                                if used.insert(candidate.clone()) {
                                    break candidate;
                                }
                            }
                        };
                        subst.insert(x, fresh.clone());
                        (fresh, t)
                    })
                    .collect();
                Comprehension {
                    generators,
                    guard: rename_base(c.guard, used, counters, &subst),
                    body: rename_norm(c.body, used, counters, &subst),
                    tag: c.tag,
                }
            })
            .collect(),
    }
}

fn rename_norm(
    n: NormTerm,
    used: &mut HashSet<String>,
    counters: &mut HashMap<String, u32>,
    subst: &HashMap<String, String>,
) -> NormTerm {
    match n {
        NormTerm::Base(b) => NormTerm::Base(rename_base(b, used, counters, subst)),
        NormTerm::Record(fields) => NormTerm::Record(
            fields
                .into_iter()
                .map(|(l, v)| (l, rename_norm(v, used, counters, subst)))
                .collect(),
        ),
        NormTerm::Query(q) => NormTerm::Query(rename_query(q, used, counters, subst)),
    }
}

fn rename_base(
    b: BaseTerm,
    used: &mut HashSet<String>,
    counters: &mut HashMap<String, u32>,
    subst: &HashMap<String, String>,
) -> BaseTerm {
    match b {
        BaseTerm::Project(x, l) => BaseTerm::Project(subst.get(&x).cloned().unwrap_or(x), l),
        BaseTerm::PrimApp(p, args) => BaseTerm::PrimApp(
            p,
            args.into_iter()
                .map(|a| rename_base(a, used, counters, subst))
                .collect(),
        ),
        BaseTerm::IsEmpty(q) => {
            BaseTerm::IsEmpty(Box::new(rename_query(*q, used, counters, subst)))
        }
    }
}

/// Canonically renames generator variables in traversal order; two normal
/// forms are equal modulo variable names iff their canonical renamings are
/// structurally equal.
pub fn alpha_rename(nf: &NormalForm) -> NormalForm {
    fn query(q: &QueryTerm, counter: &mut u32, subst: &HashMap<String, String>) -> QueryTerm {
        QueryTerm {
            comprehensions: q
                .comprehensions
                .iter()
                .map(|c| {
                    let mut subst = subst.clone();
                    let generators = c
                        .generators
                        .iter()
                        .map(|(x, t)| {
                            let fresh = format!("_g{counter}");
                            *counter += 1;
                            subst.insert(x.clone(), fresh.clone());
                            (fresh, t.clone())
                        })
                        .collect();
                    Comprehension {
                        generators,
                        guard: base(&c.guard, counter, &subst),
                        body: norm(&c.body, counter, &subst),
                        tag: c.tag,
                    }
                })
                .collect(),
        }
    }
    fn norm(n: &NormTerm, counter: &mut u32, subst: &HashMap<String, String>) -> NormTerm {
        match n {
            NormTerm::Base(b) => NormTerm::Base(base(b, counter, subst)),
            NormTerm::Record(fields) => NormTerm::Record(
                fields
                    .iter()
                    .map(|(l, v)| (l.clone(), norm(v, counter, subst)))
                    .collect(),
            ),
            NormTerm::Query(q) => NormTerm::Query(query(q, counter, subst)),
        }
    }
    fn base(b: &BaseTerm, counter: &mut u32, subst: &HashMap<String, String>) -> BaseTerm {
        match b {
            BaseTerm::Project(x, l) => BaseTerm::Project(
                subst.get(x).cloned().unwrap_or_else(|| x.clone()),
                l.clone(),
            ),
            BaseTerm::PrimApp(p, args) => BaseTerm::PrimApp(
                p.clone(),
                args.iter().map(|a| base(a, counter, subst)).collect(),
            ),
            BaseTerm::IsEmpty(q) => BaseTerm::IsEmpty(Box::new(query(q, counter, subst))),
        }
    }
    query(nf, &mut 0, &HashMap::new())
}

// ---------------------------------------------------------------------------
// Annotation
// ---------------------------------------------------------------------------

/// Assigns a distinct static tag to every comprehension body, numbering in
/// leftmost-outermost traversal order so reruns produce identical tags.
pub fn annotate(nf: &NormalForm) -> NormalForm {
    let mut counter = 0u32;
    fn query(q: &QueryTerm, counter: &mut u32) -> QueryTerm {
        QueryTerm {
            comprehensions: q
                .comprehensions
                .iter()
                .map(|c| {
                    *counter += 1;
                    let tag = StaticTag(*counter);
                    Comprehension {
                        generators: c.generators.clone(),
                        guard: base(&c.guard, counter),
                        body: norm(&c.body, counter),
                        tag: Some(tag),
                    }
                })
                .collect(),
        }
    }
    fn norm(n: &NormTerm, counter: &mut u32) -> NormTerm {
        match n {
            NormTerm::Base(b) => NormTerm::Base(base(b, counter)),
            NormTerm::Record(fields) => NormTerm::Record(
                fields
                    .iter()
                    .map(|(l, v)| (l.clone(), norm(v, counter)))
                    .collect(),
            ),
            NormTerm::Query(q) => NormTerm::Query(query(q, counter)),
        }
    }
    fn base(b: &BaseTerm, counter: &mut u32) -> BaseTerm {
        match b {
            BaseTerm::Project(_, _) => b.clone(),
            BaseTerm::PrimApp(p, args) => {
                BaseTerm::PrimApp(p.clone(), args.iter().map(|a| base(a, counter)).collect())
            }
            BaseTerm::IsEmpty(q) => BaseTerm::IsEmpty(Box::new(query(q, counter))),
        }
    }
    query(nf, &mut counter)
}

// ---------------------------------------------------------------------------
// Embedding back into terms
// ---------------------------------------------------------------------------

/// Embeds a normal form back into the term language; tags are dropped.
pub fn to_term(nf: &NormalForm) -> Term {
    fn query(q: &QueryTerm) -> Term {
        let mut branches = q.comprehensions.iter().map(comp);
        match branches.next() {
            None => Term::Empty,
            Some(first) => branches.fold(first, |acc, b| Term::Union(Box::new(acc), Box::new(b))),
        }
    }
    fn comp(c: &Comprehension) -> Term {
        let body = Term::Singleton(Box::new(norm(&c.body)));
        let body = if c.guard.is_truth() {
            body
        } else {
            Term::If(
                Box::new(base(&c.guard)),
                Box::new(body),
                Box::new(Term::Empty),
            )
        };
        c.generators.iter().rev().fold(body, |acc, (x, t)| {
            Term::For(x.clone(), Box::new(Term::Table(t.clone())), Box::new(acc))
        })
    }
    fn norm(n: &NormTerm) -> Term {
        match n {
            NormTerm::Base(b) => base(b),
            NormTerm::Record(fields) => {
                Term::Record(fields.iter().map(|(l, v)| (l.clone(), norm(v))).collect())
            }
            NormTerm::Query(q) => query(q),
        }
    }
    fn base(b: &BaseTerm) -> Term {
        match b {
            BaseTerm::Project(x, l) => Term::project(Term::var(x), l),
            BaseTerm::PrimApp(p, args) => Term::PrimApp(p.clone(), args.iter().map(base).collect()),
            BaseTerm::IsEmpty(q) => Term::IsEmpty(Box::new(query(q))),
        }
    }
    query(nf)
}

// ---------------------------------------------------------------------------
// Grammar validation
// ---------------------------------------------------------------------------

/// Checks that a normal form fits the restricted grammar all later stages
/// consume: generators range over schema tables, every projection sees a
/// generator in scope with that column, guards are boolean, and (when
/// annotated) tags are pairwise distinct.
pub fn validate_normal_form(nf: &NormalForm, schema: &Schema) -> Result<()> {
    let mut tags = HashSet::new();
    validate_query(nf, schema, &HashMap::new(), &mut tags)
}

fn validate_query(
    q: &QueryTerm,
    schema: &Schema,
    outer: &HashMap<String, String>,
    tags: &mut HashSet<StaticTag>,
) -> Result<()> {
    for c in &q.comprehensions {
        if let Some(tag) = c.tag {
            if tag.is_top() || !tags.insert(tag) {
                return Err(Error::NotNormalInput(format!(
                    "tag {tag} reused or reserved"
                )));
            }
        }
        let mut env = outer.clone();
        for (x, t) in &c.generators {
            schema.table(t)?;
            env.insert(x.clone(), t.clone());
        }
        let guard_ty = validate_base(&c.guard, schema, &env, tags)?;
        if guard_ty != BaseType::Bool {
            return Err(Error::NotNormalInput(format!("guard has type {guard_ty}")));
        }
        validate_norm(&c.body, schema, &env, tags)?;
    }
    Ok(())
}

fn validate_norm(
    n: &NormTerm,
    schema: &Schema,
    env: &HashMap<String, String>,
    tags: &mut HashSet<StaticTag>,
) -> Result<()> {
    match n {
        NormTerm::Base(b) => {
            validate_base(b, schema, env, tags)?;
            Ok(())
        }
        NormTerm::Record(fields) => {
            let mut seen = HashSet::new();
            for (l, v) in fields {
                if !seen.insert(l.clone()) {
                    return Err(Error::NotNormalInput(format!("duplicate record label {l}")));
                }
                validate_norm(v, schema, env, tags)?;
            }
            Ok(())
        }
        NormTerm::Query(q) => validate_query(q, schema, env, tags),
    }
}

fn validate_base(
    b: &BaseTerm,
    schema: &Schema,
    env: &HashMap<String, String>,
    tags: &mut HashSet<StaticTag>,
) -> Result<BaseType> {
    match b {
        BaseTerm::Project(x, l) => {
            let table = env
                .get(x)
                .ok_or_else(|| Error::NotNormalInput(format!("unbound variable {x}")))?;
            schema
                .table(table)?
                .column_type(l)
                .ok_or_else(|| Error::NotNormalInput(format!("{table} has no column {l}")))
        }
        BaseTerm::PrimApp(p, args) => {
            if args.len() != p.arity() {
                return Err(Error::NotNormalInput(format!("arity of {}", p.name())));
            }
            let arg_tys: Vec<BaseType> = args
                .iter()
                .map(|a| validate_base(a, schema, env, tags))
                .collect::<Result<_>>()?;
            match p {
                Prim::Lit(l) => Ok(l.base_type()),
                Prim::Eq | Prim::Ne => {
                    if arg_tys[0] == arg_tys[1] && arg_tys[0] != BaseType::Unit {
                        Ok(BaseType::Bool)
                    } else {
                        Err(Error::NotNormalInput("mismatched comparison".to_string()))
                    }
                }
                Prim::Lt | Prim::Gt | Prim::Le | Prim::Ge => {
                    if arg_tys[0] == arg_tys[1]
                        && matches!(arg_tys[0], BaseType::Int | BaseType::String)
                    {
                        Ok(BaseType::Bool)
                    } else {
                        Err(Error::NotNormalInput("mismatched comparison".to_string()))
                    }
                }
                Prim::And | Prim::Or | Prim::Not => {
                    if arg_tys.iter().all(|t| *t == BaseType::Bool) {
                        Ok(BaseType::Bool)
                    } else {
                        Err(Error::NotNormalInput("non-boolean connective".to_string()))
                    }
                }
                Prim::Add | Prim::Sub | Prim::Mul => {
                    if arg_tys.iter().all(|t| *t == BaseType::Int) {
                        Ok(BaseType::Int)
                    } else {
                        Err(Error::NotNormalInput("non-integer arithmetic".to_string()))
                    }
                }
            }
        }
        BaseTerm::IsEmpty(q) => {
            validate_query(q, schema, env, tags)?;
            Ok(BaseType::Bool)
        }
    }
}
