//! Core data definitions shared by every compiler stage: types, terms,
//! normal forms, shredded terms, paths, indexes, packages, values and
//! schemas.
//!
//! Bags are kept as vectors so that the row-numbering stages stay
//! deterministic, but all semantic comparisons go through multiset
//! equality (see [`multiset_equal`]). Record fields keep their declaration
//! order for display and SQL column order; equality is by label set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BaseType {
    Int,
    Bool,
    String,
    /// Exists only to support record flattening; user schemas reject it.
    Unit,
}

impl fmt::Display for BaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseType::Int => write!(f, "Int"),
            BaseType::Bool => write!(f, "Bool"),
            BaseType::String => write!(f, "String"),
            BaseType::Unit => write!(f, "Unit"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum NestedType {
    Base(BaseType),
    Record(Vec<(String, NestedType)>),
    Bag(Box<NestedType>),
    Fun(Box<NestedType>, Box<NestedType>),
}

impl NestedType {
    pub fn bag(elem: NestedType) -> NestedType {
        NestedType::Bag(Box::new(elem))
    }

    pub fn record<I: IntoIterator<Item = (String, NestedType)>>(fields: I) -> NestedType {
        NestedType::Record(fields.into_iter().collect())
    }

    pub fn contains_fun(&self) -> bool {
        match self {
            NestedType::Base(_) => false,
            NestedType::Record(fs) => fs.iter().any(|(_, t)| t.contains_fun()),
            NestedType::Bag(t) => t.contains_fun(),
            NestedType::Fun(_, _) => true,
        }
    }

    /// A type is nested iff it contains no function arrows.
    pub fn is_nested(&self) -> bool {
        !self.contains_fun()
    }

    /// A type is flat iff it is built from base and record types only.
    pub fn is_flat(&self) -> bool {
        match self {
            NestedType::Base(_) => true,
            NestedType::Record(fs) => fs.iter().all(|(_, t)| t.is_flat()),
            NestedType::Bag(_) | NestedType::Fun(_, _) => false,
        }
    }

    /// Tables are constrained to `Bag(Record of Base)`.
    pub fn is_flat_relation(&self) -> bool {
        match self {
            NestedType::Bag(elem) => match elem.as_ref() {
                NestedType::Record(fs) => fs.iter().all(|(_, t)| matches!(t, NestedType::Base(_))),
                _ => false,
            },
            _ => false,
        }
    }

    pub fn field(&self, label: &str) -> Option<&NestedType> {
        match self {
            NestedType::Record(fs) => fs.iter().find(|(l, _)| l == label).map(|(_, t)| t),
            _ => None,
        }
    }
}

/// Records compare by label set, not declaration order.
impl PartialEq for NestedType {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (NestedType::Base(a), NestedType::Base(b)) => a == b,
            (NestedType::Bag(a), NestedType::Bag(b)) => a == b,
            (NestedType::Fun(a1, b1), NestedType::Fun(a2, b2)) => a1 == a2 && b1 == b2,
            (NestedType::Record(a), NestedType::Record(b)) => {
                if a.len() != b.len() {
                    return false;
                }
                let bm: BTreeMap<&str, &NestedType> =
                    b.iter().map(|(l, t)| (l.as_str(), t)).collect();
                a.iter().all(|(l, t)| bm.get(l.as_str()) == Some(&t))
            }
            _ => false,
        }
    }
}

impl Eq for NestedType {}

// ---------------------------------------------------------------------------
// Terms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Str(String),
    Unit,
}

impl Literal {
    pub fn base_type(&self) -> BaseType {
        match self {
            Literal::Bool(_) => BaseType::Bool,
            Literal::Int(_) => BaseType::Int,
            Literal::Str(_) => BaseType::String,
            Literal::Unit => BaseType::Unit,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Int(n) => write!(f, "{n}"),
            Literal::Str(s) => write!(f, "{s:?}"),
            Literal::Unit => write!(f, "()"),
        }
    }
}

/// Primitive operations. Constants are nullary primitives.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Prim {
    Lit(Literal),
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    And,
    Or,
    Not,
    Add,
    Sub,
    Mul,
}

impl Prim {
    pub fn arity(&self) -> usize {
        match self {
            Prim::Lit(_) => 0,
            Prim::Not => 1,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Prim::Lit(_) => "lit",
            Prim::Eq => "=",
            Prim::Ne => "<>",
            Prim::Lt => "<",
            Prim::Gt => ">",
            Prim::Le => "<=",
            Prim::Ge => ">=",
            Prim::And => "&&",
            Prim::Or => "||",
            Prim::Not => "not",
            Prim::Add => "+",
            Prim::Sub => "-",
            Prim::Mul => "*",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Var(String),
    PrimApp(Prim, Vec<Term>),
    Table(String),
    If(Box<Term>, Box<Term>, Box<Term>),
    Lam(String, Box<Term>),
    App(Box<Term>, Box<Term>),
    Record(Vec<(String, Term)>),
    Project(Box<Term>, String),
    Empty,
    Singleton(Box<Term>),
    Union(Box<Term>, Box<Term>),
    For(String, Box<Term>, Box<Term>),
    IsEmpty(Box<Term>),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    pub fn lit(l: Literal) -> Term {
        Term::PrimApp(Prim::Lit(l), Vec::new())
    }

    pub fn bool_lit(b: bool) -> Term {
        Term::lit(Literal::Bool(b))
    }

    pub fn project(t: Term, label: &str) -> Term {
        Term::Project(Box::new(t), label.to_string())
    }

    pub fn size(&self) -> usize {
        let children: usize = match self {
            Term::Var(_) | Term::Table(_) | Term::Empty => 0,
            Term::PrimApp(_, args) => args.iter().map(Term::size).sum(),
            Term::If(a, b, c) => a.size() + b.size() + c.size(),
            Term::Lam(_, b) => b.size(),
            Term::App(a, b) | Term::Union(a, b) => a.size() + b.size(),
            Term::Record(fs) => fs.iter().map(|(_, t)| t.size()).sum(),
            Term::Project(t, _) | Term::Singleton(t) | Term::IsEmpty(t) => t.size(),
            Term::For(_, s, b) => s.size() + b.size(),
        };
        children + 1
    }
}

/// Label for the i-th tuple component, `#1`, `#2`, ...
pub fn tuple_label(i: usize) -> String {
    format!("#{i}")
}

// ---------------------------------------------------------------------------
// Static tags and indexes
// ---------------------------------------------------------------------------

/// Symbolic tag naming one comprehension body. Tag 0 is reserved for the
/// distinguished top level; comprehension bodies get 1, 2, 3, ... which
/// display as a, b, c, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StaticTag(pub u32);

impl StaticTag {
    pub const TOP: StaticTag = StaticTag(0);

    pub fn is_top(&self) -> bool {
        self.0 == 0
    }

    /// Display alias: top, a, b, ..., z, then a1, b1, ...
    pub fn alias(&self) -> String {
        if self.is_top() {
            return "top".to_string();
        }
        let n = self.0 - 1;
        let letter = (b'a' + (n % 26) as u8) as char;
        let round = n / 26;
        if round == 0 {
            letter.to_string()
        } else {
            format!("{letter}{round}")
        }
    }
}

impl fmt::Display for StaticTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.alias())
    }
}

/// Dynamic part of an index, in one of the three concrete schemes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DynamicIndex {
    /// Position list threaded through generator enumeration; nonempty,
    /// rooted at 1.
    Canonical(Vec<u64>),
    /// Key projections of the generator rows along the nesting chain.
    Natural(Vec<(String, Vec<Literal>)>),
    /// Per-tag enumeration position.
    Flat(u64),
}

impl fmt::Display for DynamicIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicIndex::Canonical(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join("."))
            }
            DynamicIndex::Natural(ks) => {
                let parts: Vec<String> = ks
                    .iter()
                    .map(|(t, vals)| {
                        let vs: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
                        format!("{t}:{}", vs.join(","))
                    })
                    .collect();
                write!(f, "({})", parts.join(";"))
            }
            DynamicIndex::Flat(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Index {
    pub tag: StaticTag,
    pub dynamic: DynamicIndex,
}

impl Index {
    pub fn canonical(tag: StaticTag, path: Vec<u64>) -> Index {
        Index {
            tag,
            dynamic: DynamicIndex::Canonical(path),
        }
    }

    pub fn flat(tag: StaticTag, pos: u64) -> Index {
        Index {
            tag,
            dynamic: DynamicIndex::Flat(pos),
        }
    }

    /// The canonical root index the stitcher starts from.
    pub fn top_canonical() -> Index {
        Index::canonical(StaticTag::TOP, vec![1])
    }
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}<{}>", self.tag, self.dynamic)
    }
}

// ---------------------------------------------------------------------------
// Normal forms
// ---------------------------------------------------------------------------

/// Union of comprehensions: the restricted grammar all later stages consume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTerm {
    pub comprehensions: Vec<Comprehension>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comprehension {
    /// Generators `x <- t` over named tables.
    pub generators: Vec<(String, String)>,
    pub guard: BaseTerm,
    pub body: NormTerm,
    /// Filled in by the annotation pass; distinct within one query.
    pub tag: Option<StaticTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormTerm {
    Base(BaseTerm),
    Record(Vec<(String, NormTerm)>),
    Query(QueryTerm),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaseTerm {
    /// `x.label` where `x` is generator-bound.
    Project(String, String),
    PrimApp(Prim, Vec<BaseTerm>),
    IsEmpty(Box<QueryTerm>),
}

impl BaseTerm {
    pub fn lit(l: Literal) -> BaseTerm {
        BaseTerm::PrimApp(Prim::Lit(l), Vec::new())
    }

    pub fn truth() -> BaseTerm {
        BaseTerm::lit(Literal::Bool(true))
    }

    pub fn is_truth(&self) -> bool {
        matches!(self, BaseTerm::PrimApp(Prim::Lit(Literal::Bool(true)), _))
    }

    /// Guard conjunction; a leading literal `true` is dropped, nothing else
    /// is simplified.
    pub fn conj(self, other: BaseTerm) -> BaseTerm {
        if self.is_truth() {
            other
        } else {
            BaseTerm::PrimApp(Prim::And, vec![self, other])
        }
    }

    pub fn negate(self) -> BaseTerm {
        BaseTerm::PrimApp(Prim::Not, vec![self])
    }
}

pub type NormalForm = QueryTerm;

impl QueryTerm {
    /// All tags are assigned and pairwise distinct.
    pub fn is_annotated(&self) -> bool {
        let mut seen = BTreeSet::new();
        let mut ok = true;
        self.visit_comprehensions(&mut |c| match c.tag {
            Some(t) if !t.is_top() && seen.insert(t) => {}
            _ => ok = false,
        });
        ok
    }

    pub fn visit_comprehensions<F: FnMut(&Comprehension)>(&self, f: &mut F) {
        for c in &self.comprehensions {
            f(c);
            visit_base(&c.guard, f);
            visit_norm(&c.body, f);
        }
    }
}

fn visit_norm<F: FnMut(&Comprehension)>(n: &NormTerm, f: &mut F) {
    match n {
        NormTerm::Base(b) => visit_base(b, f),
        NormTerm::Record(fs) => fs.iter().for_each(|(_, t)| visit_norm(t, f)),
        NormTerm::Query(q) => q.visit_comprehensions(f),
    }
}

fn visit_base<F: FnMut(&Comprehension)>(b: &BaseTerm, f: &mut F) {
    match b {
        BaseTerm::Project(_, _) => {}
        BaseTerm::PrimApp(_, args) => args.iter().for_each(|a| visit_base(a, f)),
        BaseTerm::IsEmpty(q) => q.visit_comprehensions(f),
    }
}

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathStep {
    Down,
    Field(String),
}

/// Pointer to a bag constructor inside a type. Stored without the trailing
/// epsilon marker; the printer restores it.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path(pub Vec<PathStep>);

impl Path {
    pub fn root() -> Path {
        Path(Vec::new())
    }

    pub fn child(&self, step: PathStep) -> Path {
        let mut steps = self.0.clone();
        steps.push(step);
        Path(steps)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.0 {
            match step {
                PathStep::Down => write!(f, "down.")?,
                PathStep::Field(l) => write!(f, "{l}.")?,
            }
        }
        write!(f, "e")
    }
}

/// The set of paths to bag constructors in `a`, in preorder.
pub fn paths_of(a: &NestedType) -> Result<Vec<Path>> {
    if a.contains_fun() {
        return Err(Error::TypeHasFunctions);
    }
    fn go(a: &NestedType, prefix: &Path, out: &mut Vec<Path>) {
        match a {
            NestedType::Base(_) => {}
            NestedType::Record(fs) => {
                for (l, t) in fs {
                    go(t, &prefix.child(PathStep::Field(l.clone())), out);
                }
            }
            NestedType::Bag(t) => {
                out.push(prefix.clone());
                go(t, &prefix.child(PathStep::Down), out);
            }
            NestedType::Fun(_, _) => unreachable!("checked above"),
        }
    }
    let mut out = Vec::new();
    go(a, &Path::root(), &mut out);
    Ok(out)
}

/// Number of bag constructors in the type; equals the number of shredded
/// queries it gives rise to.
pub fn nesting_degree(a: &NestedType) -> Result<usize> {
    Ok(paths_of(a)?.len())
}

/// The type sitting under the bag constructor at `p`.
pub fn type_at_path<'a>(a: &'a NestedType, p: &Path) -> Result<&'a NestedType> {
    let mut cur = a;
    for step in &p.0 {
        cur = match (cur, step) {
            (NestedType::Bag(t), PathStep::Down) => t,
            (NestedType::Record(_), PathStep::Field(l)) => cur
                .field(l)
                .ok_or_else(|| Error::InvalidPath(format!("no field {l}")))?,
            _ => {
                return Err(Error::InvalidPath(format!(
                    "step {step:?} does not match type"
                )))
            }
        };
    }
    match cur {
        NestedType::Bag(t) => Ok(t),
        _ => Err(Error::InvalidPath(format!(
            "path {p} does not end at a bag"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Shredded terms
// ---------------------------------------------------------------------------

/// Placeholder for the outer or inner dynamic index, resolved at evaluation
/// or let-insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexHole {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTerm {
    pub tag: StaticTag,
    pub hole: IndexHole,
}

/// Union of shredded comprehensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShreddedQuery {
    pub comprehensions: Vec<ShreddedComp>,
}

/// A chain of generator clauses, one per nesting level, ending in a body
/// `<outer index, inner term>` tagged with the body's own static tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShreddedComp {
    pub clauses: Vec<ShredClause>,
    pub outer: IndexTerm,
    pub inner: ShredInner,
    pub tag: StaticTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShredClause {
    pub generators: Vec<(String, String)>,
    pub guard: ShredBase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShredInner {
    Base(ShredBase),
    Record(Vec<(String, ShredInner)>),
    Index(IndexTerm),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShredBase {
    Project(String, String),
    PrimApp(Prim, Vec<ShredBase>),
    IsEmpty(Box<ShreddedQuery>),
}

impl ShredBase {
    pub fn truth() -> ShredBase {
        ShredBase::PrimApp(Prim::Lit(Literal::Bool(true)), Vec::new())
    }

    pub fn is_truth(&self) -> bool {
        matches!(self, ShredBase::PrimApp(Prim::Lit(Literal::Bool(true)), _))
    }
}

/// Shredded type `Bag<Index, F>`: the index component is implicit, the
/// payload is the flat type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShreddedType {
    pub payload: FlatType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlatType {
    Base(BaseType),
    Record(Vec<(String, FlatType)>),
    Index,
}

// ---------------------------------------------------------------------------
// Shredded packages
// ---------------------------------------------------------------------------

/// A nested type with an annotation attached to each bag constructor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Package<A> {
    Base(BaseType),
    Record(Vec<(String, Package<A>)>),
    Bag(Box<Package<A>>, A),
}

impl<A> Package<A> {
    pub fn erase(&self) -> NestedType {
        match self {
            Package::Base(b) => NestedType::Base(*b),
            Package::Record(fs) => {
                NestedType::Record(fs.iter().map(|(l, p)| (l.clone(), p.erase())).collect())
            }
            Package::Bag(p, _) => NestedType::bag(p.erase()),
        }
    }

    pub fn pmap<'a, B>(&'a self, f: &mut impl FnMut(&'a A) -> B) -> Package<B> {
        match self {
            Package::Base(b) => Package::Base(*b),
            Package::Record(fs) => {
                Package::Record(fs.iter().map(|(l, p)| (l.clone(), p.pmap(f))).collect())
            }
            Package::Bag(p, a) => {
                // Annotation first: annotations are visited in path preorder.
                let fa = f(a);
                Package::Bag(Box::new(p.pmap(f)), fa)
            }
        }
    }

    pub fn try_pmap<B, E>(
        &self,
        f: &mut impl FnMut(&A) -> std::result::Result<B, E>,
    ) -> std::result::Result<Package<B>, E> {
        Ok(match self {
            Package::Base(b) => Package::Base(*b),
            Package::Record(fs) => Package::Record(
                fs.iter()
                    .map(|(l, p)| Ok((l.clone(), p.try_pmap(f)?)))
                    .collect::<std::result::Result<_, E>>()?,
            ),
            Package::Bag(p, a) => {
                let fa = f(a)?;
                Package::Bag(Box::new(p.try_pmap(f)?), fa)
            }
        })
    }

    /// Annotations in path preorder; in bijection with `paths_of(erase())`.
    pub fn annotations(&self) -> Vec<&A> {
        let mut out = Vec::new();
        fn go<'a, A>(p: &'a Package<A>, out: &mut Vec<&'a A>) {
            match p {
                Package::Base(_) => {}
                Package::Record(fs) => fs.iter().for_each(|(_, q)| go(q, out)),
                Package::Bag(q, a) => {
                    out.push(a);
                    go(q, out);
                }
            }
        }
        go(self, &mut out);
        out
    }
}

/// Builds the package shape of `a` with `f(path)` at each bag constructor.
pub fn package_of<A>(a: &NestedType, f: &mut impl FnMut(&Path) -> Result<A>) -> Result<Package<A>> {
    fn go<A>(
        a: &NestedType,
        p: &Path,
        f: &mut impl FnMut(&Path) -> Result<A>,
    ) -> Result<Package<A>> {
        Ok(match a {
            NestedType::Base(b) => Package::Base(*b),
            NestedType::Record(fs) => Package::Record(
                fs.iter()
                    .map(|(l, t)| Ok((l.clone(), go(t, &p.child(PathStep::Field(l.clone())), f)?)))
                    .collect::<Result<_>>()?,
            ),
            NestedType::Bag(t) => {
                let ann = f(p)?;
                Package::Bag(Box::new(go(t, &p.child(PathStep::Down), f)?), ann)
            }
            NestedType::Fun(_, _) => return Err(Error::TypeHasFunctions),
        })
    }
    go(a, &Path::root(), f)
}

// ---------------------------------------------------------------------------
// Values
// ---------------------------------------------------------------------------

/// Nested values. Bag elements optionally carry index annotations; these are
/// produced only by the annotated semantics and erased before comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Const(Literal),
    Record(Vec<(String, Value)>),
    Bag(Vec<(Value, Option<Index>)>),
    Idx(Index),
}

impl Value {
    pub fn record<I: IntoIterator<Item = (String, Value)>>(fields: I) -> Value {
        Value::Record(fields.into_iter().collect())
    }

    pub fn bag<I: IntoIterator<Item = Value>>(items: I) -> Value {
        Value::Bag(items.into_iter().map(|v| (v, None)).collect())
    }

    pub fn str(s: &str) -> Value {
        Value::Const(Literal::Str(s.to_string()))
    }

    pub fn int(n: i64) -> Value {
        Value::Const(Literal::Int(n))
    }

    pub fn bool(b: bool) -> Value {
        Value::Const(Literal::Bool(b))
    }

    pub fn field(&self, label: &str) -> Option<&Value> {
        match self {
            Value::Record(fs) => fs.iter().find(|(l, _)| l == label).map(|(_, v)| v),
            _ => None,
        }
    }

    pub fn erased(&self) -> Value {
        match self {
            Value::Const(_) | Value::Idx(_) => self.clone(),
            Value::Record(fs) => {
                Value::Record(fs.iter().map(|(l, v)| (l.clone(), v.erased())).collect())
            }
            Value::Bag(items) => {
                Value::Bag(items.iter().map(|(v, _)| (v.erased(), None)).collect())
            }
        }
    }

    /// Canonical form for deterministic comparison and display: annotations
    /// erased, record fields sorted by label, bag elements sorted by the
    /// value total order.
    pub fn canonical(&self) -> Value {
        match self {
            Value::Const(_) | Value::Idx(_) => self.clone(),
            Value::Record(fs) => {
                let mut fields: Vec<(String, Value)> =
                    fs.iter().map(|(l, v)| (l.clone(), v.canonical())).collect();
                fields.sort_by(|a, b| a.0.cmp(&b.0));
                Value::Record(fields)
            }
            Value::Bag(items) => {
                let mut elems: Vec<(Value, Option<Index>)> =
                    items.iter().map(|(v, _)| (v.canonical(), None)).collect();
                elems.sort_by(|a, b| cmp_canonical(&a.0, &b.0));
                Value::Bag(elems)
            }
        }
    }
}

fn rank(v: &Value) -> u8 {
    match v {
        Value::Const(Literal::Bool(_)) => 0,
        Value::Const(Literal::Int(_)) => 1,
        Value::Const(Literal::Str(_)) => 2,
        Value::Const(Literal::Unit) => 3,
        Value::Record(_) => 4,
        Value::Bag(_) => 5,
        Value::Idx(_) => 6,
    }
}

/// Total order on canonical values: Bool < Int < String < Unit < Record <
/// Bag < Index, lexicographic within. Exists only to make multiset
/// comparison and test output deterministic.
pub fn cmp_canonical(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Const(x), Value::Const(y)) => match (x, y) {
            (Literal::Bool(p), Literal::Bool(q)) => p.cmp(q),
            (Literal::Int(p), Literal::Int(q)) => p.cmp(q),
            (Literal::Str(p), Literal::Str(q)) => p.cmp(q),
            (Literal::Unit, Literal::Unit) => Ordering::Equal,
            _ => rank(a).cmp(&rank(b)),
        },
        (Value::Record(xs), Value::Record(ys)) => {
            for ((la, va), (lb, vb)) in xs.iter().zip(ys.iter()) {
                let c = la.cmp(lb).then_with(|| cmp_canonical(va, vb));
                if c != Ordering::Equal {
                    return c;
                }
            }
            xs.len().cmp(&ys.len())
        }
        (Value::Bag(xs), Value::Bag(ys)) => {
            for ((va, _), (vb, _)) in xs.iter().zip(ys.iter()) {
                let c = cmp_canonical(va, vb);
                if c != Ordering::Equal {
                    return c;
                }
            }
            xs.len().cmp(&ys.len())
        }
        (Value::Idx(x), Value::Idx(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

/// Recursive bag-as-multiset equality after annotation erasure.
pub fn multiset_equal(v1: &Value, v2: &Value) -> Result<bool> {
    fn same_shape(a: &Value, b: &Value) -> bool {
        match (a, b) {
            (Value::Const(x), Value::Const(y)) => x.base_type() == y.base_type(),
            (Value::Idx(_), Value::Idx(_)) => true,
            (Value::Record(xs), Value::Record(ys)) => {
                xs.len() == ys.len()
                    && xs.iter().all(|(l, v)| match b.field(l) {
                        Some(w) => same_shape(v, w),
                        None => false,
                    })
                    && ys.iter().all(|(l, _)| a.field(l).is_some())
            }
            // Element shapes are checked against each other only when both
            // bags are inhabited; an empty bag matches any bag.
            (Value::Bag(xs), Value::Bag(ys)) => match (xs.first(), ys.first()) {
                (Some((x, _)), Some((y, _))) => same_shape(x, y),
                _ => true,
            },
            _ => false,
        }
    }
    if !same_shape(v1, v2) {
        return Err(Error::TypeMismatch(format!(
            "cannot compare values of different shapes: {v1:?} vs {v2:?}"
        )));
    }
    Ok(v1.canonical() == v2.canonical())
}

// ---------------------------------------------------------------------------
// Shredded results
// ---------------------------------------------------------------------------

/// One row of a shredded result: an outer index, a flat payload, and an
/// optional ghost annotation carrying the row's own index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShreddedRow {
    pub outer: Index,
    pub payload: Value,
    pub annotation: Option<Index>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShreddedResult {
    pub rows: Vec<ShreddedRow>,
}

impl ShreddedResult {
    /// Rows as (outer, payload) pairs, annotations dropped.
    pub fn pairs(&self) -> Vec<(Index, Value)> {
        self.rows
            .iter()
            .map(|r| (r.outer.clone(), r.payload.clone()))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Schemas and database instances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    pub columns: Vec<(String, BaseType)>,
    pub key: Option<Vec<String>>,
}

impl TableSchema {
    pub fn column_type(&self, label: &str) -> Option<BaseType> {
        self.columns
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, t)| *t)
    }

    pub fn row_type(&self) -> NestedType {
        NestedType::Record(
            self.columns
                .iter()
                .map(|(l, t)| (l.clone(), NestedType::Base(*t)))
                .collect(),
        )
    }

    pub fn relation_type(&self) -> NestedType {
        NestedType::bag(self.row_type())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    pub tables: BTreeMap<String, TableSchema>,
}

impl Schema {
    pub fn table(&self, name: &str) -> Result<&TableSchema> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::MissingTable(name.to_string()))
    }
}

/// A loaded database: one row list per table, held in canonical order.
/// Row values are built once and shared; evaluation binds them by
/// reference counting rather than cloning.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatabaseInstance {
    tables: BTreeMap<String, Vec<Vec<(String, Literal)>>>,
    row_values: BTreeMap<String, Vec<std::sync::Arc<Value>>>,
}

impl DatabaseInstance {
    /// Builds an instance, sorting each table into its canonical row order:
    /// rows compare lexicographically by the columns arranged in label
    /// order. Declared keys are checked for uniqueness.
    pub fn new(
        schema: &Schema,
        mut tables: BTreeMap<String, Vec<Vec<(String, Literal)>>>,
    ) -> Result<DatabaseInstance> {
        for (name, rows) in tables.iter_mut() {
            let ts = schema
                .tables
                .get(name)
                .ok_or_else(|| Error::SchemaError(format!("data for unknown table {name}")))?;
            let mut labels: Vec<&str> = ts.columns.iter().map(|(l, _)| l.as_str()).collect();
            labels.sort_unstable();
            for row in rows.iter_mut() {
                if row.len() != ts.columns.len() {
                    return Err(Error::SchemaError(format!(
                        "row of {name} has {} fields, schema declares {}",
                        row.len(),
                        ts.columns.len()
                    )));
                }
                for (label, lit) in row.iter() {
                    match ts.column_type(label) {
                        Some(t) if lit.base_type() == t => {}
                        Some(t) => {
                            return Err(Error::SchemaError(format!(
                                "{name}.{label}: expected {t}, got {}",
                                lit.base_type()
                            )))
                        }
                        None => {
                            return Err(Error::SchemaError(format!(
                                "{name} row has unknown column {label}"
                            )))
                        }
                    }
                }
                // Store fields in declared column order.
                row.sort_by_key(|(l, _)| {
                    ts.columns
                        .iter()
                        .position(|(cl, _)| cl == l)
                        .unwrap_or(usize::MAX)
                });
            }
            rows.sort_by(|a, b| {
                for l in &labels {
                    let va = a.iter().find(|(al, _)| al == l).map(|(_, v)| v);
                    let vb = b.iter().find(|(bl, _)| bl == l).map(|(_, v)| v);
                    let c = va.cmp(&vb);
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                Ordering::Equal
            });
            if let Some(key) = &ts.key {
                let mut seen = BTreeSet::new();
                for row in rows.iter() {
                    let kv: Vec<&Literal> = key
                        .iter()
                        .filter_map(|k| row.iter().find(|(l, _)| l == k).map(|(_, v)| v))
                        .collect();
                    if !seen.insert(format!("{kv:?}")) {
                        return Err(Error::KeyNotUnique(name.clone()));
                    }
                }
            }
        }
        let row_values = tables
            .iter()
            .map(|(name, rows)| {
                let values = rows
                    .iter()
                    .map(|r| std::sync::Arc::new(DatabaseInstance::row_value(r)))
                    .collect();
                (name.clone(), values)
            })
            .collect();
        Ok(DatabaseInstance { tables, row_values })
    }

    pub fn rows(&self, table: &str) -> Result<&[Vec<(String, Literal)>]> {
        self.tables
            .get(table)
            .map(|r| r.as_slice())
            .ok_or_else(|| Error::MissingTable(table.to_string()))
    }

    /// Shared row values in canonical order.
    pub fn row_arcs(&self, table: &str) -> Result<&[std::sync::Arc<Value>]> {
        self.row_values
            .get(table)
            .map(|r| r.as_slice())
            .ok_or_else(|| Error::MissingTable(table.to_string()))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &String> {
        self.tables.keys()
    }

    pub fn row_value(row: &[(String, Literal)]) -> Value {
        Value::Record(
            row.iter()
                .map(|(l, v)| (l.clone(), Value::Const(v.clone())))
                .collect(),
        )
    }
}
