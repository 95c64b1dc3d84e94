//! Executable reference semantics: plain nested evaluation, the annotated
//! variant that tags every bag element with its index, shredded-query
//! evaluation, and the three concrete indexing schemes (canonical position
//! lists, natural key tuples, flat per-tag enumeration).
//!
//! Bags evaluate to lists; tables are read in their canonical row order.
//! Comprehension clauses enumerate the filtered product of their generators
//! and thread the 1-based position into the dynamic index.

use std::collections::HashMap;
use std::sync::Arc;

use crate::ast::*;
use crate::backend::{LetBase, LetComp, LetInner, LetQuery, LetSource, Subquery};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

/// Variable bindings, innermost last. Values are shared so that binding a
/// table row costs a reference count, not a deep clone.
#[derive(Debug, Clone, Default)]
pub struct Env {
    stack: Vec<(String, Arc<Value>)>,
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    pub fn bind(&mut self, x: &str, v: Arc<Value>) {
        self.stack.push((x.to_string(), v));
    }

    pub fn bind_value(&mut self, x: &str, v: Value) {
        self.bind(x, Arc::new(v));
    }

    pub fn unbind(&mut self) {
        self.stack.pop();
    }

    pub fn lookup(&self, x: &str) -> Result<&Value> {
        self.stack
            .iter()
            .rev()
            .find(|(y, _)| y == x)
            .map(|(_, v)| v.as_ref())
            .ok_or_else(|| Error::UnboundVariable(x.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

fn apply_prim(p: &Prim, args: &[Value]) -> Result<Value> {
    let lit = |i: usize| -> Result<&Literal> {
        match &args[i] {
            Value::Const(l) => Ok(l),
            other => Err(Error::TypeMismatch(format!(
                "primitive {} applied to non-constant {other:?}",
                p.name()
            ))),
        }
    };
    let int = |i: usize| -> Result<i64> {
        match lit(i)? {
            Literal::Int(n) => Ok(*n),
            other => Err(Error::TypeMismatch(format!("expected Int, got {other}"))),
        }
    };
    let boolean = |i: usize| -> Result<bool> {
        match lit(i)? {
            Literal::Bool(b) => Ok(*b),
            other => Err(Error::TypeMismatch(format!("expected Bool, got {other}"))),
        }
    };
    let cmp = |i: usize, j: usize| -> Result<std::cmp::Ordering> {
        match (lit(i)?, lit(j)?) {
            (Literal::Int(a), Literal::Int(b)) => Ok(a.cmp(b)),
            (Literal::Str(a), Literal::Str(b)) => Ok(a.cmp(b)),
            (Literal::Bool(a), Literal::Bool(b)) => Ok(a.cmp(b)),
            (a, b) => Err(Error::TypeMismatch(format!("cannot compare {a} with {b}"))),
        }
    };
    Ok(match p {
        Prim::Lit(l) => Value::Const(l.clone()),
        Prim::Eq => Value::bool(cmp(0, 1)?.is_eq()),
        Prim::Ne => Value::bool(cmp(0, 1)?.is_ne()),
        Prim::Lt => Value::bool(cmp(0, 1)?.is_lt()),
        Prim::Gt => Value::bool(cmp(0, 1)?.is_gt()),
        Prim::Le => Value::bool(cmp(0, 1)?.is_le()),
        Prim::Ge => Value::bool(cmp(0, 1)?.is_ge()),
        Prim::And => Value::bool(boolean(0)? && boolean(1)?),
        Prim::Or => Value::bool(boolean(0)? || boolean(1)?),
        Prim::Not => Value::bool(!boolean(0)?),
        Prim::Add => Value::int(int(0)?.wrapping_add(int(1)?)),
        Prim::Sub => Value::int(int(0)?.wrapping_sub(int(1)?)),
        Prim::Mul => Value::int(int(0)?.wrapping_mul(int(1)?)),
    })
}

// ---------------------------------------------------------------------------
// Plain nested semantics
// ---------------------------------------------------------------------------

/// List-based semantics of terms: comprehensions concatenate, tables are
/// read in canonical order, emptiness tests inspect the whole bag.
/// Saturated lambda applications evaluate by binding; an unapplied lambda
/// has no value form and is rejected.
pub fn eval_nested(t: &Term, db: &DatabaseInstance, env: &mut Env) -> Result<Value> {
    Ok(match t {
        Term::Var(x) => env.lookup(x)?.clone(),
        Term::Table(name) => Value::Bag(
            db.rows(name)?
                .iter()
                .map(|r| (DatabaseInstance::row_value(r), None))
                .collect(),
        ),
        Term::PrimApp(p, args) => {
            let vals: Vec<Value> = args
                .iter()
                .map(|a| eval_nested(a, db, env))
                .collect::<Result<_>>()?;
            apply_prim(p, &vals)?
        }
        Term::If(c, a, b) => match eval_nested(c, db, env)? {
            Value::Const(Literal::Bool(true)) => eval_nested(a, db, env)?,
            Value::Const(Literal::Bool(false)) => eval_nested(b, db, env)?,
            other => return Err(Error::TypeMismatch(format!("conditional test {other:?}"))),
        },
        Term::Lam(x, _) => {
            return Err(Error::TypeMismatch(format!(
                "lambda (parameter {x}) has no first-order value"
            )))
        }
        Term::App(f, a) => match f.as_ref() {
            Term::Lam(x, body) => {
                let arg = eval_nested(a, db, env)?;
                env.bind_value(x, arg);
                let out = eval_nested(body, db, env);
                env.unbind();
                out?
            }
            other => {
                return Err(Error::TypeMismatch(format!(
                    "application of a non-lambda {other:?}"
                )))
            }
        },
        Term::Record(fields) => Value::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), eval_nested(v, db, env)?)))
                .collect::<Result<_>>()?,
        ),
        Term::Project(e, l) => {
            let v = eval_nested(e, db, env)?;
            v.field(l)
                .cloned()
                .ok_or_else(|| Error::TypeMismatch(format!("projection .{l} of {v:?}")))?
        }
        Term::Empty => Value::Bag(Vec::new()),
        Term::Singleton(e) => Value::Bag(vec![(eval_nested(e, db, env)?, None)]),
        Term::Union(a, b) => {
            let mut left = match eval_nested(a, db, env)? {
                Value::Bag(items) => items,
                other => return Err(Error::TypeMismatch(format!("union of {other:?}"))),
            };
            match eval_nested(b, db, env)? {
                Value::Bag(mut items) => left.append(&mut items),
                other => return Err(Error::TypeMismatch(format!("union of {other:?}"))),
            }
            Value::Bag(left)
        }
        Term::For(x, src, body) => {
            let src = eval_nested(src, db, env)?;
            let items = match src {
                Value::Bag(items) => items,
                other => return Err(Error::TypeMismatch(format!("generator over {other:?}"))),
            };
            let mut out = Vec::new();
            for (v, _) in items {
                env.bind_value(x, v);
                let r = eval_nested(body, db, env);
                env.unbind();
                match r? {
                    Value::Bag(mut items) => out.append(&mut items),
                    other => return Err(Error::TypeMismatch(format!("body yielded {other:?}"))),
                }
            }
            Value::Bag(out)
        }
        Term::IsEmpty(e) => match eval_nested(e, db, env)? {
            Value::Bag(items) => Value::bool(items.is_empty()),
            other => return Err(Error::TypeMismatch(format!("emptiness test of {other:?}"))),
        },
    })
}

/// Plain semantics of a normal form, evaluated directly: one filtered
/// product per comprehension, results concatenated. Agrees with evaluating
/// the term embedding, without re-materializing generator sources.
pub fn eval_normal_form(nf: &NormalForm, db: &DatabaseInstance, env: &mut Env) -> Result<Value> {
    let mut items = Vec::new();
    for c in &nf.comprehensions {
        let guard = base_guard(&c.guard);
        for_each_filtered(&c.generators, &guard, db, env, &mut |env, _| {
            items.push((eval_norm_term(&c.body, db, env)?, None));
            Ok(())
        })?;
    }
    Ok(Value::Bag(items))
}

fn eval_norm_term(n: &NormTerm, db: &DatabaseInstance, env: &mut Env) -> Result<Value> {
    match n {
        NormTerm::Base(b) => eval_base(b, db, env),
        NormTerm::Record(fields) => Ok(Value::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), eval_norm_term(v, db, env)?)))
                .collect::<Result<_>>()?,
        )),
        NormTerm::Query(q) => eval_normal_form(q, db, env),
    }
}

// ---------------------------------------------------------------------------
// Filtered generator enumeration
// ---------------------------------------------------------------------------

/// Enumerates the guarded product of one comprehension clause: every
/// combination of rows (in canonical table order) that passes the guard,
/// with its 1-based position. The guard is evaluated under the plain
/// semantics.
fn for_each_filtered(
    generators: &[(String, String)],
    guard: &dyn Fn(&mut Env, &DatabaseInstance) -> Result<bool>,
    db: &DatabaseInstance,
    env: &mut Env,
    f: &mut dyn FnMut(&mut Env, u64) -> Result<()>,
) -> Result<()> {
    fn product(
        generators: &[(String, String)],
        guard: &dyn Fn(&mut Env, &DatabaseInstance) -> Result<bool>,
        db: &DatabaseInstance,
        env: &mut Env,
        pos: &mut u64,
        f: &mut dyn FnMut(&mut Env, u64) -> Result<()>,
    ) -> Result<()> {
        match generators.split_first() {
            None => {
                if guard(env, db)? {
                    *pos += 1;
                    f(env, *pos)?;
                }
                Ok(())
            }
            Some(((x, t), rest)) => {
                for row in db.row_arcs(t)? {
                    env.bind(x, row.clone());
                    let r = product(rest, guard, db, env, pos, f);
                    env.unbind();
                    r?;
                }
                Ok(())
            }
        }
    }
    let mut pos = 0;
    product(generators, guard, db, env, &mut pos, f)
}

/// Borrowed-or-owned literal, so that the common guard shapes (projections
/// compared against projections or literals) evaluate without allocating.
enum LitRef<'a> {
    Borrowed(&'a Literal),
    Owned(Literal),
}

impl<'a> LitRef<'a> {
    fn get(&self) -> &Literal {
        match self {
            LitRef::Borrowed(l) => l,
            LitRef::Owned(l) => l,
        }
    }
}

fn lit_cmp(a: &Literal, b: &Literal) -> Result<std::cmp::Ordering> {
    match (a, b) {
        (Literal::Int(x), Literal::Int(y)) => Ok(x.cmp(y)),
        (Literal::Str(x), Literal::Str(y)) => Ok(x.cmp(y)),
        (Literal::Bool(x), Literal::Bool(y)) => Ok(x.cmp(y)),
        _ => Err(Error::TypeMismatch(format!("cannot compare {a} with {b}"))),
    }
}

/// Allocation-free evaluation of base terms that contain no emptiness
/// tests; returns None when one is present and the caller must take the
/// general path.
fn eval_base_fast<'e>(b: &'e BaseTerm, env: &'e Env) -> Option<Result<LitRef<'e>>> {
    match b {
        BaseTerm::Project(x, l) => {
            let v = match env.lookup(x) {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            match v.field(l) {
                Some(Value::Const(lit)) => Some(Ok(LitRef::Borrowed(lit))),
                _ => Some(Err(Error::TypeMismatch(format!("projection {x}.{l}")))),
            }
        }
        BaseTerm::PrimApp(Prim::Lit(l), _) => Some(Ok(LitRef::Borrowed(l))),
        BaseTerm::PrimApp(p, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                match eval_base_fast(a, env)? {
                    Ok(v) => vals.push(v),
                    Err(e) => return Some(Err(e)),
                }
            }
            Some(apply_prim_lit(p, &vals))
        }
        BaseTerm::IsEmpty(_) => None,
    }
}

fn apply_prim_lit<'e>(p: &Prim, vals: &[LitRef<'e>]) -> Result<LitRef<'e>> {
    let boolean = |i: usize| -> Result<bool> {
        match vals[i].get() {
            Literal::Bool(b) => Ok(*b),
            other => Err(Error::TypeMismatch(format!("expected Bool, got {other}"))),
        }
    };
    let int = |i: usize| -> Result<i64> {
        match vals[i].get() {
            Literal::Int(n) => Ok(*n),
            other => Err(Error::TypeMismatch(format!("expected Int, got {other}"))),
        }
    };
    let out = match p {
        Prim::Lit(l) => return Ok(LitRef::Owned(l.clone())),
        Prim::Eq => Literal::Bool(lit_cmp(vals[0].get(), vals[1].get())?.is_eq()),
        Prim::Ne => Literal::Bool(lit_cmp(vals[0].get(), vals[1].get())?.is_ne()),
        Prim::Lt => Literal::Bool(lit_cmp(vals[0].get(), vals[1].get())?.is_lt()),
        Prim::Gt => Literal::Bool(lit_cmp(vals[0].get(), vals[1].get())?.is_gt()),
        Prim::Le => Literal::Bool(lit_cmp(vals[0].get(), vals[1].get())?.is_le()),
        Prim::Ge => Literal::Bool(lit_cmp(vals[0].get(), vals[1].get())?.is_ge()),
        Prim::And => Literal::Bool(boolean(0)? && boolean(1)?),
        Prim::Or => Literal::Bool(boolean(0)? || boolean(1)?),
        Prim::Not => Literal::Bool(!boolean(0)?),
        Prim::Add => Literal::Int(int(0)?.wrapping_add(int(1)?)),
        Prim::Sub => Literal::Int(int(0)?.wrapping_sub(int(1)?)),
        Prim::Mul => Literal::Int(int(0)?.wrapping_mul(int(1)?)),
    };
    Ok(LitRef::Owned(out))
}

fn base_guard(b: &BaseTerm) -> impl Fn(&mut Env, &DatabaseInstance) -> Result<bool> + '_ {
    move |env, db| {
        if let Some(fast) = eval_base_fast(b, env) {
            return match fast?.get() {
                Literal::Bool(ok) => Ok(*ok),
                other => Err(Error::TypeMismatch(format!("guard {other}"))),
            };
        }
        match eval_base(b, db, env)? {
            Value::Const(Literal::Bool(ok)) => Ok(ok),
            other => Err(Error::TypeMismatch(format!("guard {other:?}"))),
        }
    }
}

fn eval_base(b: &BaseTerm, db: &DatabaseInstance, env: &mut Env) -> Result<Value> {
    match b {
        BaseTerm::Project(x, l) => {
            let v = env.lookup(x)?;
            v.field(l)
                .cloned()
                .ok_or_else(|| Error::TypeMismatch(format!("projection {x}.{l}")))
        }
        BaseTerm::PrimApp(p, args) => {
            let vals: Vec<Value> = args
                .iter()
                .map(|a| eval_base(a, db, env))
                .collect::<Result<_>>()?;
            apply_prim(p, &vals)
        }
        BaseTerm::IsEmpty(q) => {
            let v = eval_normal_form(q, db, env)?;
            match v {
                Value::Bag(items) => Ok(Value::bool(items.is_empty())),
                other => Err(Error::TypeMismatch(format!("emptiness test of {other:?}"))),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Indexing schemes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexScheme {
    Canonical,
    Natural,
    Flat,
}

impl IndexScheme {
    pub fn name(&self) -> &'static str {
        match self {
            IndexScheme::Canonical => "canonical",
            IndexScheme::Natural => "natural",
            IndexScheme::Flat => "flat",
        }
    }
}

impl std::str::FromStr for IndexScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<IndexScheme> {
        match s {
            "canonical" => Ok(IndexScheme::Canonical),
            "natural" => Ok(IndexScheme::Natural),
            "flat" => Ok(IndexScheme::Flat),
            other => Err(Error::ConfigError(format!("unknown index scheme {other}"))),
        }
    }
}

/// A concrete indexing function: either the canonical identity or a finite
/// map precomputed from the query and database. Validity means injectivity
/// and definedness on every canonical index the query produces.
#[derive(Debug, Clone)]
pub struct IndexFn {
    scheme: IndexScheme,
    map: Option<HashMap<Index, Index>>,
}

impl IndexFn {
    pub fn canonical() -> IndexFn {
        IndexFn {
            scheme: IndexScheme::Canonical,
            map: None,
        }
    }

    /// A handcrafted mapping; exists so harnesses can exercise invalid
    /// (non-injective or partial) indexing functions.
    pub fn custom(scheme: IndexScheme, map: HashMap<Index, Index>) -> IndexFn {
        IndexFn {
            scheme,
            map: Some(map),
        }
    }

    pub fn scheme(&self) -> IndexScheme {
        self.scheme
    }

    pub fn apply(&self, ix: &Index) -> Result<Index> {
        match &self.map {
            None => Ok(ix.clone()),
            Some(map) => map
                .get(ix)
                .cloned()
                .ok_or_else(|| Error::IndexUndefined(ix.to_string())),
        }
    }

    /// The concrete image of the distinguished top-level index.
    pub fn root(&self) -> Result<Index> {
        self.apply(&Index::top_canonical())
    }
}

/// The canonical indexes of a nested query result, in evaluation order:
/// each comprehension element contributes its own index followed by the
/// indexes of its body.
pub fn canonical_indexes(l: &NormalForm, db: &DatabaseInstance) -> Result<Vec<Index>> {
    let mut out = Vec::new();
    isem_query(l, db, &mut Env::new(), &[1], &mut out)?;
    Ok(out)
}

fn isem_query(
    q: &QueryTerm,
    db: &DatabaseInstance,
    env: &mut Env,
    iota: &[u64],
    out: &mut Vec<Index>,
) -> Result<()> {
    for c in &q.comprehensions {
        let tag = c.tag.ok_or(Error::UnannotatedInput)?;
        let guard = base_guard(&c.guard);
        for_each_filtered(&c.generators, &guard, db, env, &mut |env, j| {
            let mut next = iota.to_vec();
            next.push(j);
            out.push(Index::canonical(tag, next.clone()));
            isem_norm(&c.body, db, env, &next, out)
        })?;
    }
    Ok(())
}

fn isem_norm(
    n: &NormTerm,
    db: &DatabaseInstance,
    env: &mut Env,
    iota: &[u64],
    out: &mut Vec<Index>,
) -> Result<()> {
    match n {
        NormTerm::Base(_) => Ok(()),
        NormTerm::Record(fields) => {
            for (_, v) in fields {
                isem_norm(v, db, env, iota, out)?;
            }
            Ok(())
        }
        NormTerm::Query(q) => isem_query(q, db, env, iota, out),
    }
}

/// Natural indexes, synthesized from row keys accumulated along the
/// nesting chain, in the same enumeration order as [`canonical_indexes`].
fn natural_indexes(l: &NormalForm, db: &DatabaseInstance, schema: &Schema) -> Result<Vec<Index>> {
    fn query(
        q: &QueryTerm,
        db: &DatabaseInstance,
        schema: &Schema,
        env: &mut Env,
        chain: &[(String, Vec<Literal>)],
        out: &mut Vec<Index>,
    ) -> Result<()> {
        for c in &q.comprehensions {
            let tag = c.tag.ok_or(Error::UnannotatedInput)?;
            for (_, t) in &c.generators {
                if schema.table(t)?.key.is_none() {
                    return Err(Error::NoKeyDeclared(t.clone()));
                }
            }
            let guard = base_guard(&c.guard);
            let generators = c.generators.clone();
            for_each_filtered(&generators, &guard, db, env, &mut |env, _| {
                let mut next = chain.to_vec();
                for (x, t) in &generators {
                    let key = schema.table(t)?.key.clone().expect("checked above");
                    let row = env.lookup(x)?.clone();
                    let key_vals: Vec<Literal> = key
                        .iter()
                        .map(|k| match row.field(k) {
                            Some(Value::Const(l)) => Ok(l.clone()),
                            _ => Err(Error::NoKeyDeclared(format!("{t}.{k}"))),
                        })
                        .collect::<Result<_>>()?;
                    next.push((t.clone(), key_vals));
                }
                out.push(Index {
                    tag,
                    dynamic: DynamicIndex::Natural(next.clone()),
                });
                norm(&c.body, db, schema, env, &next, out)
            })?;
        }
        Ok(())
    }
    fn norm(
        n: &NormTerm,
        db: &DatabaseInstance,
        schema: &Schema,
        env: &mut Env,
        chain: &[(String, Vec<Literal>)],
        out: &mut Vec<Index>,
    ) -> Result<()> {
        match n {
            NormTerm::Base(_) => Ok(()),
            NormTerm::Record(fields) => {
                for (_, v) in fields {
                    norm(v, db, schema, env, chain, out)?;
                }
                Ok(())
            }
            NormTerm::Query(q) => query(q, db, schema, env, chain, out),
        }
    }
    let mut out = Vec::new();
    query(l, db, schema, &mut Env::new(), &[], &mut out)?;
    Ok(out)
}

/// Builds the natural indexing function: the i-th canonical index maps to
/// the i-th natural index. Requires a declared key on every generated
/// table; injectivity is asserted.
pub fn natural_index_fn(l: &NormalForm, db: &DatabaseInstance, schema: &Schema) -> Result<IndexFn> {
    let canonical = canonical_indexes(l, db)?;
    let natural = natural_indexes(l, db, schema)?;
    debug_assert_eq!(canonical.len(), natural.len());
    let mut map = HashMap::with_capacity(canonical.len() + 1);
    let mut image: HashMap<Index, Index> = HashMap::with_capacity(canonical.len());
    for (c, n) in canonical.into_iter().zip(natural) {
        if let Some(prev) = image.insert(n.clone(), c.clone()) {
            if prev != c {
                return Err(Error::KeyNotUnique(format!(
                    "natural index {n} assigned to two canonical indexes"
                )));
            }
        }
        map.insert(c, n);
    }
    map.insert(
        Index::top_canonical(),
        Index {
            tag: StaticTag::TOP,
            dynamic: DynamicIndex::Natural(Vec::new()),
        },
    );
    Ok(IndexFn {
        scheme: IndexScheme::Natural,
        map: Some(map),
    })
}

/// Builds the flat indexing function: per static tag, canonical dynamic
/// indexes are enumerated from 1 in canonical order.
pub fn flat_index_fn(l: &NormalForm, db: &DatabaseInstance) -> Result<IndexFn> {
    let canonical = canonical_indexes(l, db)?;
    let mut counters: HashMap<StaticTag, u64> = HashMap::new();
    let mut map = HashMap::with_capacity(canonical.len() + 1);
    for ix in canonical {
        let counter = counters.entry(ix.tag).or_insert(0);
        *counter += 1;
        map.insert(ix.clone(), Index::flat(ix.tag, *counter));
    }
    map.insert(Index::top_canonical(), Index::flat(StaticTag::TOP, 1));
    Ok(IndexFn {
        scheme: IndexScheme::Flat,
        map: Some(map),
    })
}

/// Builds the indexing function for the requested scheme.
pub fn index_fn_for(
    scheme: IndexScheme,
    l: &NormalForm,
    db: &DatabaseInstance,
    schema: &Schema,
) -> Result<IndexFn> {
    match scheme {
        IndexScheme::Canonical => Ok(IndexFn::canonical()),
        IndexScheme::Natural => natural_index_fn(l, db, schema),
        IndexScheme::Flat => flat_index_fn(l, db),
    }
}

// ---------------------------------------------------------------------------
// Annotated semantics
// ---------------------------------------------------------------------------

/// Nested evaluation with every bag element annotated by its concrete
/// index. Erasing the annotations gives exactly the plain semantics.
pub fn eval_annotated(l: &NormalForm, db: &DatabaseInstance, ix: &IndexFn) -> Result<Value> {
    let items = asem_query(l, db, &mut Env::new(), &[1], ix)?;
    Ok(Value::Bag(items))
}

fn asem_query(
    q: &QueryTerm,
    db: &DatabaseInstance,
    env: &mut Env,
    iota: &[u64],
    ix: &IndexFn,
) -> Result<Vec<(Value, Option<Index>)>> {
    let mut out = Vec::new();
    for c in &q.comprehensions {
        let tag = c.tag.ok_or(Error::UnannotatedInput)?;
        let guard = base_guard(&c.guard);
        for_each_filtered(&c.generators, &guard, db, env, &mut |env, j| {
            let mut next = iota.to_vec();
            next.push(j);
            let ann = ix.apply(&Index::canonical(tag, next.clone()))?;
            let v = asem_norm(&c.body, db, env, &next, ix)?;
            out.push((v, Some(ann)));
            Ok(())
        })?;
    }
    Ok(out)
}

fn asem_norm(
    n: &NormTerm,
    db: &DatabaseInstance,
    env: &mut Env,
    iota: &[u64],
    ix: &IndexFn,
) -> Result<Value> {
    match n {
        NormTerm::Base(b) => eval_base(b, db, env),
        NormTerm::Record(fields) => Ok(Value::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), asem_norm(v, db, env, iota, ix)?)))
                .collect::<Result<_>>()?,
        )),
        NormTerm::Query(q) => Ok(Value::Bag(asem_query(q, db, env, iota, ix)?)),
    }
}

/// The indexes of `v` along path `p`: the annotation list at that bag
/// level, concatenated across the elements above it.
pub fn indexes_along_path(p: &Path, v: &Value) -> Result<Vec<Index>> {
    fn go(steps: &[PathStep], v: &Value, out: &mut Vec<Index>) -> Result<()> {
        match steps.first() {
            None => match v {
                Value::Bag(items) => {
                    for (_, ann) in items {
                        out.push(ann.clone().ok_or(Error::UnannotatedInput)?);
                    }
                    Ok(())
                }
                other => Err(Error::InvalidPath(format!("expected bag, found {other:?}"))),
            },
            Some(PathStep::Down) => match v {
                Value::Bag(items) => {
                    for (item, _) in items {
                        go(&steps[1..], item, out)?;
                    }
                    Ok(())
                }
                other => Err(Error::InvalidPath(format!("expected bag, found {other:?}"))),
            },
            Some(PathStep::Field(l)) => match v.field(l) {
                Some(inner) => go(&steps[1..], inner, out),
                None => Err(Error::InvalidPath(format!("no field {l}"))),
            },
        }
    }
    let mut out = Vec::new();
    go(&p.0, v, &mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shredded semantics
// ---------------------------------------------------------------------------

/// Runs one shredded query, producing rows of outer index and flat payload.
/// The dynamic index is threaded through the clause-by-clause enumeration;
/// the up-placeholder resolves one level out, the down-placeholder at the
/// current level.
pub fn eval_shredded(
    m: &ShreddedQuery,
    db: &DatabaseInstance,
    ix: &IndexFn,
) -> Result<ShreddedResult> {
    let mut rows = Vec::new();
    for c in &m.comprehensions {
        eval_shredded_comp(c, db, &mut Env::new(), &[1], ix, &mut rows)?;
    }
    Ok(ShreddedResult { rows })
}

fn eval_shredded_comp(
    c: &ShreddedComp,
    db: &DatabaseInstance,
    env: &mut Env,
    iota: &[u64],
    ix: &IndexFn,
    rows: &mut Vec<ShreddedRow>,
) -> Result<()> {
    fn clauses(
        cs: &[ShredClause],
        c: &ShreddedComp,
        db: &DatabaseInstance,
        env: &mut Env,
        iota: &[u64],
        ix: &IndexFn,
        rows: &mut Vec<ShreddedRow>,
    ) -> Result<()> {
        match cs.split_first() {
            None => {
                let outer = resolve_index(&c.outer, iota, ix)?;
                let payload = eval_shred_inner(&c.inner, db, env, iota, ix)?;
                let annotation = ix.apply(&Index::canonical(c.tag, iota.to_vec()))?;
                rows.push(ShreddedRow {
                    outer,
                    payload,
                    annotation: Some(annotation),
                });
                Ok(())
            }
            Some((clause, rest)) => {
                let guard = shred_guard(&clause.guard);
                for_each_filtered(&clause.generators, &guard, db, env, &mut |env, j| {
                    let mut next = iota.to_vec();
                    next.push(j);
                    clauses(rest, c, db, env, &next, ix, rows)
                })
            }
        }
    }
    clauses(&c.clauses, c, db, env, iota, ix, rows)
}

fn resolve_index(term: &IndexTerm, iota: &[u64], ix: &IndexFn) -> Result<Index> {
    let dynamic = match term.hole {
        // The current position list always has the initial 1 plus one entry
        // per clause, so the up-placeholder drops the innermost entry.
        IndexHole::Up => iota[..iota.len() - 1].to_vec(),
        IndexHole::Down => iota.to_vec(),
    };
    ix.apply(&Index::canonical(term.tag, dynamic))
}

/// Emptiness-test-free shredded guards share the allocation-free path.
fn eval_shred_fast<'e>(b: &'e ShredBase, env: &'e Env) -> Option<Result<LitRef<'e>>> {
    match b {
        ShredBase::Project(x, l) => {
            let v = match env.lookup(x) {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            match v.field(l) {
                Some(Value::Const(lit)) => Some(Ok(LitRef::Borrowed(lit))),
                _ => Some(Err(Error::TypeMismatch(format!("projection {x}.{l}")))),
            }
        }
        ShredBase::PrimApp(Prim::Lit(l), _) => Some(Ok(LitRef::Borrowed(l))),
        ShredBase::PrimApp(p, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                match eval_shred_fast(a, env)? {
                    Ok(v) => vals.push(v),
                    Err(e) => return Some(Err(e)),
                }
            }
            Some(apply_prim_lit(p, &vals))
        }
        ShredBase::IsEmpty(_) => None,
    }
}

fn shred_guard(b: &ShredBase) -> impl Fn(&mut Env, &DatabaseInstance) -> Result<bool> + '_ {
    move |env, db| {
        if let Some(fast) = eval_shred_fast(b, env) {
            return match fast?.get() {
                Literal::Bool(ok) => Ok(*ok),
                other => Err(Error::TypeMismatch(format!("guard {other}"))),
            };
        }
        match eval_shred_base(b, db, env)? {
            Value::Const(Literal::Bool(ok)) => Ok(ok),
            other => Err(Error::TypeMismatch(format!("guard {other:?}"))),
        }
    }
}

fn eval_shred_inner(
    n: &ShredInner,
    db: &DatabaseInstance,
    env: &mut Env,
    iota: &[u64],
    ix: &IndexFn,
) -> Result<Value> {
    Ok(match n {
        ShredInner::Base(b) => eval_shred_base(b, db, env)?,
        ShredInner::Record(fields) => Value::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), eval_shred_inner(v, db, env, iota, ix)?)))
                .collect::<Result<_>>()?,
        ),
        ShredInner::Index(term) => Value::Idx(resolve_index(term, iota, ix)?),
    })
}

fn eval_shred_base(b: &ShredBase, db: &DatabaseInstance, env: &mut Env) -> Result<Value> {
    match b {
        ShredBase::Project(x, l) => {
            let v = env.lookup(x)?;
            v.field(l)
                .cloned()
                .ok_or_else(|| Error::TypeMismatch(format!("projection {x}.{l}")))
        }
        ShredBase::PrimApp(p, args) => {
            let vals: Vec<Value> = args
                .iter()
                .map(|a| eval_shred_base(a, db, env))
                .collect::<Result<_>>()?;
            apply_prim(p, &vals)
        }
        // Emptiness only depends on whether any row exists, never on index
        // values, so the test runs under the total canonical scheme. The
        // enclosing environment carries the correlated bindings.
        ShredBase::IsEmpty(q) => {
            let mut rows = Vec::new();
            let canonical = IndexFn::canonical();
            for c in &q.comprehensions {
                eval_shredded_comp(c, db, env, &[1], &canonical, &mut rows)?;
                if !rows.is_empty() {
                    break;
                }
            }
            Ok(Value::bool(rows.is_empty()))
        }
    }
}

// ---------------------------------------------------------------------------
// Let-inserted semantics
// ---------------------------------------------------------------------------

/// Environment extension for let-bound subqueries.
struct LetCtx<'a> {
    db: &'a DatabaseInstance,
    bound: Option<Vec<Arc<Value>>>,
}

/// Runs a let-inserted query. The let-bound subquery evaluates once per
/// comprehension; `index` yields the 1-based position in the enumerated,
/// guard-filtered generator product of the subquery it appears in.
pub fn eval_letinserted(q: &LetQuery, db: &DatabaseInstance) -> Result<Vec<Value>> {
    let mut out = Vec::new();
    for comp in &q.comprehensions {
        eval_let_comp(comp, db, &mut out)?;
    }
    Ok(out)
}

fn eval_let_comp(comp: &LetComp, db: &DatabaseInstance, out: &mut Vec<Value>) -> Result<()> {
    let bound = match &comp.binding {
        Some(sub) => {
            let mut rows = Vec::new();
            eval_subquery(sub, &LetCtx { db, bound: None }, &mut Env::new(), &mut rows)?;
            Some(rows.into_iter().map(Arc::new).collect())
        }
        None => None,
    };
    eval_subquery(&comp.body, &LetCtx { db, bound }, &mut Env::new(), out)
}

fn eval_subquery(
    sub: &Subquery,
    ctx: &LetCtx<'_>,
    env: &mut Env,
    out: &mut Vec<Value>,
) -> Result<()> {
    fn product(
        gens: &[(String, LetSource)],
        sub: &Subquery,
        ctx: &LetCtx<'_>,
        env: &mut Env,
        pos: &mut u64,
        out: &mut Vec<Value>,
    ) -> Result<()> {
        match gens.split_first() {
            None => {
                let ok = match eval_let_fast(&sub.guard, env) {
                    Some(fast) => match fast?.get() {
                        Literal::Bool(b) => *b,
                        other => return Err(Error::TypeMismatch(format!("guard {other}"))),
                    },
                    None => match eval_let_base(&sub.guard, ctx, env)? {
                        Value::Const(Literal::Bool(b)) => b,
                        other => return Err(Error::TypeMismatch(format!("guard {other:?}"))),
                    },
                };
                if ok {
                    *pos += 1;
                    out.push(eval_let_inner(&sub.head, ctx, env, *pos)?);
                }
                Ok(())
            }
            Some(((x, source), rest)) => {
                let rows: &[Arc<Value>] = match source {
                    LetSource::Table(t) => ctx.db.row_arcs(t)?,
                    LetSource::LetVar(name) => ctx
                        .bound
                        .as_deref()
                        .ok_or_else(|| Error::UnboundQueryName(name.clone()))?,
                };
                for row in rows {
                    env.bind(x, row.clone());
                    let r = product(rest, sub, ctx, env, pos, out);
                    env.unbind();
                    r?;
                }
                Ok(())
            }
        }
    }
    let mut pos = 0;
    product(&sub.generators, sub, ctx, env, &mut pos, out)
}

fn eval_let_fast<'e>(b: &'e LetBase, env: &'e Env) -> Option<Result<LitRef<'e>>> {
    match b {
        LetBase::Proj(x, labels) => {
            let mut v = match env.lookup(x) {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            for l in labels {
                v = match v.field(l) {
                    Some(inner) => inner,
                    None => return Some(Err(Error::TypeMismatch(format!("projection {x}…{l}")))),
                };
            }
            match v {
                Value::Const(lit) => Some(Ok(LitRef::Borrowed(lit))),
                _ => Some(Err(Error::TypeMismatch(format!(
                    "projection {x} is not base"
                )))),
            }
        }
        LetBase::Prim(Prim::Lit(l), _) => Some(Ok(LitRef::Borrowed(l))),
        LetBase::Prim(p, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                match eval_let_fast(a, env)? {
                    Ok(v) => vals.push(v),
                    Err(e) => return Some(Err(e)),
                }
            }
            Some(apply_prim_lit(p, &vals))
        }
        LetBase::IsEmpty(_) => None,
    }
}

fn eval_let_inner(n: &LetInner, ctx: &LetCtx<'_>, env: &mut Env, pos: u64) -> Result<Value> {
    Ok(match n {
        LetInner::Base(b) => eval_let_base(b, ctx, env)?,
        LetInner::Record(fields) => Value::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), eval_let_inner(v, ctx, env, pos)?)))
                .collect::<Result<_>>()?,
        ),
        LetInner::RowNumber => Value::int(pos as i64),
    })
}

fn eval_let_base(b: &LetBase, ctx: &LetCtx<'_>, env: &mut Env) -> Result<Value> {
    match b {
        LetBase::Proj(x, labels) => {
            let mut v = env.lookup(x)?.clone();
            for l in labels {
                v = v
                    .field(l)
                    .cloned()
                    .ok_or_else(|| Error::TypeMismatch(format!("projection {x}…{l}")))?;
            }
            Ok(v)
        }
        LetBase::Prim(p, args) => {
            let vals: Vec<Value> = args
                .iter()
                .map(|a| eval_let_base(a, ctx, env))
                .collect::<Result<_>>()?;
            apply_prim(p, &vals)
        }
        LetBase::IsEmpty(q) => {
            let mut rows = Vec::new();
            for branch in &q.branches {
                eval_subquery(branch, ctx, env, &mut rows)?;
                if !rows.is_empty() {
                    break;
                }
            }
            Ok(Value::bool(rows.is_empty()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_data, parse_schema};

    fn schema() -> Schema {
        parse_schema(
            r#"{ "tables": {
                "nums": { "columns": [["n", "Int"], ["id", "Int"]], "key": ["id"] }
            } }"#,
        )
        .unwrap()
    }

    fn db() -> DatabaseInstance {
        parse_data(
            r#"{ "nums": [ {"n": 10, "id": 1}, {"n": 20, "id": 2}, {"n": 30, "id": 3} ] }"#,
            &schema(),
        )
        .unwrap()
    }

    fn annotated_single() -> NormalForm {
        let nf = QueryTerm {
            comprehensions: vec![Comprehension {
                generators: vec![("x".to_string(), "nums".to_string())],
                guard: BaseTerm::truth(),
                body: NormTerm::Base(BaseTerm::Project("x".to_string(), "n".to_string())),
                tag: None,
            }],
        };
        crate::normalizer::annotate(&nf)
    }

    #[test]
    fn empty_and_union_follow_list_semantics() {
        let db = db();
        let mut env = Env::new();
        assert_eq!(
            eval_nested(&Term::Empty, &db, &mut env).unwrap(),
            Value::bag([])
        );
        let u = Term::Union(
            Box::new(Term::Singleton(Box::new(Term::lit(Literal::Int(1))))),
            Box::new(Term::Singleton(Box::new(Term::lit(Literal::Int(2))))),
        );
        assert_eq!(
            eval_nested(&u, &db, &mut env).unwrap(),
            Value::bag([Value::int(1), Value::int(2)])
        );
    }

    #[test]
    fn canonical_indexes_of_single_comprehension() {
        // One comprehension over a 3-row table with a true guard.
        let nf = annotated_single();
        let ixs = canonical_indexes(&nf, &db()).unwrap();
        let tag = nf.comprehensions[0].tag.unwrap();
        assert_eq!(
            ixs,
            vec![
                Index::canonical(tag, vec![1, 1]),
                Index::canonical(tag, vec![1, 2]),
                Index::canonical(tag, vec![1, 3]),
            ]
        );
    }

    #[test]
    fn false_guard_gives_no_indexes() {
        let mut nf = annotated_single();
        nf.comprehensions[0].guard = BaseTerm::lit(Literal::Bool(false));
        assert!(canonical_indexes(&nf, &db()).unwrap().is_empty());
    }

    #[test]
    fn natural_index_fn_projects_declared_keys() {
        let nf = annotated_single();
        let tag = nf.comprehensions[0].tag.unwrap();
        let ixfn = natural_index_fn(&nf, &db(), &schema()).unwrap();
        let got = ixfn.apply(&Index::canonical(tag, vec![1, 2])).unwrap();
        assert_eq!(
            got,
            Index {
                tag,
                dynamic: DynamicIndex::Natural(vec![("nums".to_string(), vec![Literal::Int(2)])]),
            }
        );
        assert_eq!(
            ixfn.root().unwrap().dynamic,
            DynamicIndex::Natural(Vec::new())
        );
    }

    #[test]
    fn natural_index_fn_requires_keys() {
        let schema = parse_schema(
            r#"{ "tables": { "nums": { "columns": [["n", "Int"], ["id", "Int"]] } } }"#,
        )
        .unwrap();
        let db = parse_data(r#"{ "nums": [ {"n": 1, "id": 1} ] }"#, &schema).unwrap();
        let nf = annotated_single();
        let err = natural_index_fn(&nf, &db, &schema).unwrap_err();
        assert!(matches!(err, Error::NoKeyDeclared(_)), "{err:?}");
    }

    #[test]
    fn flat_index_fn_enumerates_per_tag() {
        let nf = annotated_single();
        let tag = nf.comprehensions[0].tag.unwrap();
        let ixfn = flat_index_fn(&nf, &db()).unwrap();
        assert_eq!(
            ixfn.apply(&Index::canonical(tag, vec![1, 1])).unwrap(),
            Index::flat(tag, 1)
        );
        assert_eq!(
            ixfn.apply(&Index::canonical(tag, vec![1, 3])).unwrap(),
            Index::flat(tag, 3)
        );
        assert_eq!(ixfn.root().unwrap(), Index::flat(StaticTag::TOP, 1));
        // Empty enumeration maps only the root.
        let empty_db = parse_data(r#"{ "nums": [] }"#, &schema()).unwrap();
        let ixfn = flat_index_fn(&nf, &empty_db).unwrap();
        assert!(ixfn.apply(&Index::canonical(tag, vec![1, 1])).is_err());
    }

    #[test]
    fn annotated_semantics_erases_to_plain() {
        let nf = annotated_single();
        let annotated = eval_annotated(&nf, &db(), &IndexFn::canonical()).unwrap();
        let plain = eval_normal_form(&nf, &db(), &mut Env::new()).unwrap();
        assert_eq!(annotated.erased(), plain);
        // And the annotations are pairwise distinct along the root path.
        let ixs = indexes_along_path(&Path::root(), &annotated).unwrap();
        let set: std::collections::HashSet<_> = ixs.iter().collect();
        assert_eq!(set.len(), ixs.len());
    }
}
