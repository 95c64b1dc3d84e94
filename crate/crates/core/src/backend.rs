//! Bridge to SQL: let-insertion, record flattening and unflattening, and
//! SQL:1999 emission.
//!
//! Let-insertion rearranges each shredded comprehension into two
//! subqueries: the first enumerates the outer generator prefix and numbers
//! its rows, the second joins that numbering back in through the
//! distinguished variable `z` and computes the results. Indexes become
//! plain integer pairs. Record flattening then removes nested records by
//! concatenating labels, and emission renders the result as one SQL
//! statement per shredded query, with `ROW_NUMBER() OVER (ORDER BY ...)`
//! standing in for the row-numbering primitive.

use std::collections::HashMap;

use crate::ast::*;
use crate::error::{Error, Result};

/// The distinguished let-bound variable. Input queries must not use it.
pub const Z_VAR: &str = "z";

/// Lifted base values flatten into single-column records under this label;
/// it concatenates away against any enclosing label.
pub const BULLET: &str = "\u{2022}";

// ---------------------------------------------------------------------------
// Let-inserted queries
// ---------------------------------------------------------------------------

/// Union of let-inserted comprehensions, one per shredded comprehension.
#[derive(Debug, Clone, PartialEq)]
pub struct LetQuery {
    pub comprehensions: Vec<LetComp>,
}

/// `let q = binding in body`. The binding is absent when the outer
/// generator prefix is empty and unguarded; the top index is then a
/// literal pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LetComp {
    pub binding: Option<Subquery>,
    pub body: Subquery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subquery {
    pub generators: Vec<(String, LetSource)>,
    pub guard: LetBase,
    pub head: LetInner,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LetSource {
    Table(String),
    /// The let-bound subquery, referenced through `z`.
    LetVar(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LetInner {
    Base(LetBase),
    Record(Vec<(String, LetInner)>),
    /// The row-numbering primitive: 1-based position in the enumerated,
    /// guard-filtered generator product of the enclosing subquery.
    RowNumber,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LetBase {
    /// n-ary projection `x.l1...ln`.
    Proj(String, Vec<String>),
    Prim(Prim, Vec<LetBase>),
    IsEmpty(ExistsQuery),
}

impl LetBase {
    pub fn truth() -> LetBase {
        LetBase::Prim(Prim::Lit(Literal::Bool(true)), Vec::new())
    }

    pub fn is_truth(&self) -> bool {
        matches!(self, LetBase::Prim(Prim::Lit(Literal::Bool(true)), _))
    }

    fn conj(self, other: LetBase) -> LetBase {
        if self.is_truth() {
            other
        } else if other.is_truth() {
            self
        } else {
            LetBase::Prim(Prim::And, vec![self, other])
        }
    }
}

/// Emptiness tests only need row existence, so their argument collapses to
/// guarded generator products with unit heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ExistsQuery {
    pub branches: Vec<Subquery>,
}

// ---------------------------------------------------------------------------
// Let-insertion
// ---------------------------------------------------------------------------

/// Renames generators that collide with the distinguished variable; run
/// before [`let_insert`] on queries that may legitimately bind `z`.
pub fn avoid_z(m: &ShreddedQuery) -> ShreddedQuery {
    let mut taken: std::collections::HashSet<String> = std::collections::HashSet::new();
    collect_generator_names(m, &mut taken);
    if !taken.contains(Z_VAR) {
        return m.clone();
    }
    let mut counter = 0u32;
    let fresh = loop {
        counter += 1;
        let candidate = format!("{Z_VAR}_{counter}");
        if !taken.contains(&candidate) {
            break candidate;
        }
    };
    rename_generator(m, Z_VAR, &fresh)
}

fn collect_generator_names(m: &ShreddedQuery, out: &mut std::collections::HashSet<String>) {
    for c in &m.comprehensions {
        for clause in &c.clauses {
            for (x, _) in &clause.generators {
                out.insert(x.clone());
            }
            collect_base_names(&clause.guard, out);
        }
        collect_inner_names(&c.inner, out);
    }
}

fn collect_inner_names(n: &ShredInner, out: &mut std::collections::HashSet<String>) {
    match n {
        ShredInner::Base(b) => collect_base_names(b, out),
        ShredInner::Record(fs) => fs.iter().for_each(|(_, v)| collect_inner_names(v, out)),
        ShredInner::Index(_) => {}
    }
}

fn collect_base_names(b: &ShredBase, out: &mut std::collections::HashSet<String>) {
    match b {
        ShredBase::Project(_, _) => {}
        ShredBase::PrimApp(_, args) => args.iter().for_each(|a| collect_base_names(a, out)),
        ShredBase::IsEmpty(q) => collect_generator_names(q, out),
    }
}

fn rename_generator(m: &ShreddedQuery, old: &str, new: &str) -> ShreddedQuery {
    fn query(m: &ShreddedQuery, old: &str, new: &str) -> ShreddedQuery {
        ShreddedQuery {
            comprehensions: m
                .comprehensions
                .iter()
                .map(|c| ShreddedComp {
                    clauses: c
                        .clauses
                        .iter()
                        .map(|cl| ShredClause {
                            generators: cl
                                .generators
                                .iter()
                                .map(|(x, t)| {
                                    let x = if x == old { new.to_string() } else { x.clone() };
                                    (x, t.clone())
                                })
                                .collect(),
                            guard: base(&cl.guard, old, new),
                        })
                        .collect(),
                    outer: c.outer.clone(),
                    inner: inner(&c.inner, old, new),
                    tag: c.tag,
                })
                .collect(),
        }
    }
    fn inner(n: &ShredInner, old: &str, new: &str) -> ShredInner {
        match n {
            ShredInner::Base(b) => ShredInner::Base(base(b, old, new)),
            ShredInner::Record(fs) => ShredInner::Record(
                fs.iter()
                    .map(|(l, v)| (l.clone(), inner(v, old, new)))
                    .collect(),
            ),
            ShredInner::Index(ix) => ShredInner::Index(ix.clone()),
        }
    }
    fn base(b: &ShredBase, old: &str, new: &str) -> ShredBase {
        match b {
            ShredBase::Project(x, l) => {
                let x = if x == old { new.to_string() } else { x.clone() };
                ShredBase::Project(x, l.clone())
            }
            ShredBase::PrimApp(p, args) => {
                ShredBase::PrimApp(p.clone(), args.iter().map(|a| base(a, old, new)).collect())
            }
            ShredBase::IsEmpty(q) => ShredBase::IsEmpty(Box::new(query(q, old, new))),
        }
    }
    query(m, old, new)
}

/// Translates a shredded query into let-inserted form: per comprehension,
/// the generator prefix becomes a row-numbered subquery bound to `q`, the
/// last clause joins against it through `z`, outer-index placeholders
/// become `z.2`, inner ones become the row-numbering primitive, and static
/// tags become integer literals.
pub fn let_insert(m: &ShreddedQuery, schema: &Schema) -> Result<LetQuery> {
    let mut names = std::collections::HashSet::new();
    collect_generator_names(m, &mut names);
    if names.contains(Z_VAR) {
        return Err(Error::NameClashZ);
    }
    let comprehensions = m
        .comprehensions
        .iter()
        .map(|c| let_insert_comp(c, schema))
        .collect::<Result<_>>()?;
    Ok(LetQuery { comprehensions })
}

fn let_insert_comp(c: &ShreddedComp, schema: &Schema) -> Result<LetComp> {
    let (init, last) = c.clauses.split_at(c.clauses.len() - 1);
    let last = &last[0];
    let outer_gens: Vec<(String, String)> = init
        .iter()
        .flat_map(|cl| cl.generators.iter().cloned())
        .collect();
    let outer_guard = init
        .iter()
        .map(|cl| convert_base(&cl.guard, &[]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(LetBase::truth(), LetBase::conj);
    let outer_names: Vec<String> = outer_gens.iter().map(|(x, _)| x.clone()).collect();

    // With an empty, unguarded prefix the binding would hold exactly one
    // row numbered 1, so it is elided and the outer index becomes literal.
    let degenerate = outer_gens.is_empty() && outer_guard.is_truth();
    let binding = if degenerate {
        None
    } else {
        let row = LetInner::Record(
            outer_gens
                .iter()
                .enumerate()
                .map(|(i, (x, t))| Ok((tuple_label(i + 1), expand_row(x, t, schema)?)))
                .collect::<Result<_>>()?,
        );
        Some(Subquery {
            generators: outer_gens
                .iter()
                .map(|(x, t)| (x.clone(), LetSource::Table(t.clone())))
                .collect(),
            guard: outer_guard,
            head: LetInner::Record(vec![
                (tuple_label(1), row),
                (tuple_label(2), LetInner::RowNumber),
            ]),
        })
    };

    let mut generators: Vec<(String, LetSource)> = Vec::new();
    if binding.is_some() {
        generators.push((Z_VAR.to_string(), LetSource::LetVar("q".to_string())));
    }
    generators.extend(
        last.generators
            .iter()
            .map(|(x, t)| (x.clone(), LetSource::Table(t.clone()))),
    );
    let convert_names = if binding.is_some() {
        outer_names
    } else {
        Vec::new()
    };
    let head = LetInner::Record(vec![
        (tuple_label(1), convert_index(&c.outer, binding.is_some())),
        (tuple_label(2), convert_inner(&c.inner, &convert_names)?),
    ]);
    Ok(LetComp {
        binding,
        body: Subquery {
            generators,
            guard: convert_base(&last.guard, &convert_names)?,
            head,
        },
    })
}

fn expand_row(x: &str, table: &str, schema: &Schema) -> Result<LetInner> {
    let ts = schema.table(table)?;
    Ok(LetInner::Record(
        ts.columns
            .iter()
            .map(|(l, _)| {
                (
                    l.clone(),
                    LetInner::Base(LetBase::Proj(x.to_string(), vec![l.clone()])),
                )
            })
            .collect(),
    ))
}

fn convert_index(ix: &IndexTerm, has_binding: bool) -> LetInner {
    let tag = LetInner::Base(LetBase::Prim(
        Prim::Lit(Literal::Int(ix.tag.0 as i64)),
        Vec::new(),
    ));
    let dynamic = match ix.hole {
        IndexHole::Up => {
            if has_binding {
                LetInner::Base(LetBase::Proj(Z_VAR.to_string(), vec![tuple_label(2)]))
            } else {
                // Elided binding: the prefix enumerates exactly one row, so
                // the enclosing dynamic index is always 1.
                LetInner::Base(LetBase::Prim(Prim::Lit(Literal::Int(1)), Vec::new()))
            }
        }
        IndexHole::Down => LetInner::RowNumber,
    };
    LetInner::Record(vec![(tuple_label(1), tag), (tuple_label(2), dynamic)])
}

fn convert_inner(n: &ShredInner, outer: &[String]) -> Result<LetInner> {
    Ok(match n {
        ShredInner::Base(b) => LetInner::Base(convert_base(b, outer)?),
        ShredInner::Record(fields) => LetInner::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), convert_inner(v, outer)?)))
                .collect::<Result<_>>()?,
        ),
        // Payload indexes are always inner-index placeholders, which turn
        // into the row-numbering primitive regardless of the binding.
        ShredInner::Index(ix) => {
            debug_assert_eq!(ix.hole, IndexHole::Down);
            convert_index(ix, true)
        }
    })
}

fn convert_base(b: &ShredBase, outer: &[String]) -> Result<LetBase> {
    Ok(match b {
        ShredBase::Project(x, l) => match outer.iter().position(|y| y == x) {
            Some(i) => LetBase::Proj(
                Z_VAR.to_string(),
                vec![tuple_label(1), tuple_label(i + 1), l.clone()],
            ),
            None => LetBase::Proj(x.clone(), vec![l.clone()]),
        },
        ShredBase::PrimApp(p, args) => LetBase::Prim(
            p.clone(),
            args.iter()
                .map(|a| convert_base(a, outer))
                .collect::<Result<_>>()?,
        ),
        ShredBase::IsEmpty(q) => {
            let branches = q
                .comprehensions
                .iter()
                .map(|c| {
                    let generators: Vec<(String, LetSource)> = c
                        .clauses
                        .iter()
                        .flat_map(|cl| cl.generators.iter())
                        .map(|(x, t)| (x.clone(), LetSource::Table(t.clone())))
                        .collect();
                    let guard = c
                        .clauses
                        .iter()
                        .map(|cl| convert_base(&cl.guard, outer))
                        .collect::<Result<Vec<_>>>()?
                        .into_iter()
                        .fold(LetBase::truth(), LetBase::conj);
                    Ok(Subquery {
                        generators,
                        guard,
                        head: LetInner::Record(Vec::new()),
                    })
                })
                .collect::<Result<_>>()?;
            LetBase::IsEmpty(ExistsQuery { branches })
        }
    })
}

// ---------------------------------------------------------------------------
// Let-inserted types and typechecking
// ---------------------------------------------------------------------------

/// The let-translation on shredded types: indexes become integer pairs.
pub fn l_type(f: &FlatType) -> FlatType {
    match f {
        FlatType::Base(b) => FlatType::Base(*b),
        FlatType::Record(fields) => {
            FlatType::Record(fields.iter().map(|(l, t)| (l.clone(), l_type(t))).collect())
        }
        FlatType::Index => FlatType::Record(vec![
            (tuple_label(1), FlatType::Base(BaseType::Int)),
            (tuple_label(2), FlatType::Base(BaseType::Int)),
        ]),
    }
}

/// The full row type of a let-inserted comprehension body: a pair of the
/// outer index pair and the translated payload.
pub fn l_row_type(payload: &FlatType) -> FlatType {
    FlatType::Record(vec![
        (tuple_label(1), l_type(&FlatType::Index)),
        (tuple_label(2), l_type(payload)),
    ])
}

/// Checks a let-inserted query and returns the common row type of its
/// comprehension bodies.
pub fn typecheck_letinserted(q: &LetQuery, schema: &Schema) -> Result<FlatType> {
    let mut row: Option<FlatType> = None;
    for comp in &q.comprehensions {
        let z_type = match &comp.binding {
            Some(binding) => Some(check_subquery(binding, schema, None, &HashMap::new())?),
            None => None,
        };
        let t = check_subquery(&comp.body, schema, z_type.as_ref(), &HashMap::new())?;
        match &row {
            None => row = Some(t),
            Some(expected) if *expected == t => {}
            Some(expected) => {
                return Err(Error::TypeError {
                    context: "let-inserted union".to_string(),
                    expected: format!("{expected:?}"),
                    found: format!("{t:?}"),
                })
            }
        }
    }
    row.ok_or_else(|| Error::TypeError {
        context: "let-inserted query".to_string(),
        expected: "at least one comprehension".to_string(),
        found: "empty union".to_string(),
    })
}

fn check_subquery(
    sub: &Subquery,
    schema: &Schema,
    z_type: Option<&FlatType>,
    outer: &HashMap<String, FlatType>,
) -> Result<FlatType> {
    let mut env: HashMap<String, FlatType> = outer.clone();
    for (x, source) in &sub.generators {
        let t = match source {
            LetSource::Table(t) => {
                let ts = schema.table(t)?;
                FlatType::Record(
                    ts.columns
                        .iter()
                        .map(|(l, b)| (l.clone(), FlatType::Base(*b)))
                        .collect(),
                )
            }
            LetSource::LetVar(name) => z_type
                .cloned()
                .ok_or_else(|| Error::UnboundQueryName(name.clone()))?,
        };
        env.insert(x.clone(), t);
    }
    let guard = check_let_base(&sub.guard, schema, &env)?;
    if guard != FlatType::Base(BaseType::Bool) {
        return Err(Error::TypeError {
            context: "let-inserted guard".to_string(),
            expected: "Bool".to_string(),
            found: format!("{guard:?}"),
        });
    }
    check_let_inner(&sub.head, schema, &env)
}

fn check_let_inner(
    n: &LetInner,
    schema: &Schema,
    env: &HashMap<String, FlatType>,
) -> Result<FlatType> {
    Ok(match n {
        LetInner::Base(b) => check_let_base(b, schema, env)?,
        LetInner::Record(fields) => FlatType::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), check_let_inner(v, schema, env)?)))
                .collect::<Result<_>>()?,
        ),
        LetInner::RowNumber => FlatType::Base(BaseType::Int),
    })
}

fn check_let_base(
    b: &LetBase,
    schema: &Schema,
    env: &HashMap<String, FlatType>,
) -> Result<FlatType> {
    match b {
        LetBase::Proj(x, labels) => {
            let mut t = env
                .get(x)
                .cloned()
                .ok_or_else(|| Error::UnboundVariable(x.clone()))?;
            for l in labels {
                t = match t {
                    FlatType::Record(fields) => fields
                        .iter()
                        .find(|(fl, _)| fl == l)
                        .map(|(_, ft)| ft.clone())
                        .ok_or_else(|| Error::TypeError {
                            context: format!("projection {x}…{l}"),
                            expected: "a record field".to_string(),
                            found: l.clone(),
                        })?,
                    other => {
                        return Err(Error::TypeError {
                            context: format!("projection {x}…{l}"),
                            expected: "a record".to_string(),
                            found: format!("{other:?}"),
                        })
                    }
                };
            }
            Ok(t)
        }
        LetBase::Prim(p, args) => {
            let tys: Vec<FlatType> = args
                .iter()
                .map(|a| check_let_base(a, schema, env))
                .collect::<Result<_>>()?;
            let bases: Option<Vec<BaseType>> = tys
                .iter()
                .map(|t| match t {
                    FlatType::Base(b) => Some(*b),
                    _ => None,
                })
                .collect();
            let bases = bases.ok_or_else(|| Error::TypeError {
                context: format!("primitive {}", p.name()),
                expected: "base arguments".to_string(),
                found: "record".to_string(),
            })?;
            let out = match p {
                Prim::Lit(l) => l.base_type(),
                Prim::Eq | Prim::Ne | Prim::Lt | Prim::Gt | Prim::Le | Prim::Ge => {
                    if bases.len() == 2 && bases[0] == bases[1] {
                        BaseType::Bool
                    } else {
                        return Err(Error::TypeError {
                            context: p.name().to_string(),
                            expected: "matching base types".to_string(),
                            found: format!("{bases:?}"),
                        });
                    }
                }
                Prim::And | Prim::Or | Prim::Not => BaseType::Bool,
                Prim::Add | Prim::Sub | Prim::Mul => BaseType::Int,
            };
            Ok(FlatType::Base(out))
        }
        // Correlated tests see the enclosing subquery's bindings.
        LetBase::IsEmpty(q) => {
            for branch in &q.branches {
                check_subquery(branch, schema, None, env)?;
            }
            Ok(FlatType::Base(BaseType::Bool))
        }
    }
}

// ---------------------------------------------------------------------------
// Record flattening
// ---------------------------------------------------------------------------

fn label_component(l: &str) -> String {
    match l.strip_prefix('#') {
        Some(k) => format!("i{k}"),
        None => l.to_string(),
    }
}

fn join_label(parent: Option<&str>, child: &str) -> String {
    match parent {
        None => child.to_string(),
        Some(p) if child == BULLET => p.to_string(),
        Some(p) => format!("{p}#{child}"),
    }
}

/// Flattens a record-nested type to its column list: labels concatenate
/// with their ancestors', lifted base values take the bullet label, and
/// index pairs contribute their two integer components.
pub fn flatten_type(f: &FlatType) -> Vec<(String, BaseType)> {
    fn go(f: &FlatType, prefix: Option<&str>, out: &mut Vec<(String, BaseType)>) {
        match f {
            FlatType::Base(b) => out.push((join_label(prefix, BULLET), *b)),
            FlatType::Record(fields) => {
                for (l, sub) in fields {
                    let label = join_label(prefix, &label_component(l));
                    go(sub, Some(&label), out);
                }
            }
            FlatType::Index => go(&l_type(&FlatType::Index), prefix, out),
        }
    }
    let mut out = Vec::new();
    go(f, None, &mut out);
    // A bare base type flattens to the single bullet column.
    if let [(label, _)] = out.as_mut_slice() {
        if label.is_empty() {
            *label = BULLET.to_string();
        }
    }
    out
}

/// Flattens every head and projection in a let-inserted query so no nested
/// record constructors or multi-step projections remain.
pub fn flatten_query(q: &LetQuery) -> LetQuery {
    LetQuery {
        comprehensions: q
            .comprehensions
            .iter()
            .map(|comp| LetComp {
                binding: comp.binding.as_ref().map(flatten_subquery),
                body: flatten_subquery(&comp.body),
            })
            .collect(),
    }
}

fn flatten_subquery(sub: &Subquery) -> Subquery {
    Subquery {
        generators: sub.generators.clone(),
        guard: flatten_base(&sub.guard),
        head: LetInner::Record(flatten_inner(&sub.head, None)),
    }
}

fn flatten_inner(n: &LetInner, prefix: Option<&str>) -> Vec<(String, LetInner)> {
    match n {
        LetInner::Base(b) => {
            vec![(join_label(prefix, BULLET), LetInner::Base(flatten_base(b)))]
        }
        LetInner::RowNumber => vec![(join_label(prefix, BULLET), LetInner::RowNumber)],
        LetInner::Record(fields) => {
            let mut out = Vec::new();
            for (l, sub) in fields {
                let label = join_label(prefix, &label_component(l));
                out.extend(flatten_inner(sub, Some(&label)));
            }
            out
        }
    }
}

fn flatten_base(b: &LetBase) -> LetBase {
    match b {
        LetBase::Proj(x, labels) => {
            let joined = labels
                .iter()
                .fold(None::<String>, |acc, l| {
                    Some(join_label(acc.as_deref(), &label_component(l)))
                })
                .unwrap_or_else(|| BULLET.to_string());
            LetBase::Proj(x.clone(), vec![joined])
        }
        LetBase::Prim(p, args) => LetBase::Prim(p.clone(), args.iter().map(flatten_base).collect()),
        LetBase::IsEmpty(q) => LetBase::IsEmpty(ExistsQuery {
            branches: q.branches.iter().map(flatten_subquery).collect(),
        }),
    }
}

/// Reconstructs nested values from flattened rows, splitting on the label
/// separator; the bullet collapses to the bare value and index pairs come
/// back as flat indexes.
pub fn unflatten_values(rows: &[Vec<(String, Literal)>], ty: &FlatType) -> Result<Vec<Value>> {
    rows.iter()
        .map(|row| {
            let cols: HashMap<&str, &Literal> = row.iter().map(|(l, v)| (l.as_str(), v)).collect();
            unflatten_one(&cols, ty, None)
        })
        .collect()
}

fn unflatten_one(
    cols: &HashMap<&str, &Literal>,
    ty: &FlatType,
    prefix: Option<&str>,
) -> Result<Value> {
    match ty {
        FlatType::Base(b) => {
            let label = join_label(prefix, BULLET);
            let lit = cols
                .get(label.as_str())
                .ok_or_else(|| Error::ColumnMismatch(format!("missing column {label}")))?;
            if lit.base_type() != *b {
                return Err(Error::ColumnMismatch(format!(
                    "column {label}: expected {b}, got {}",
                    lit.base_type()
                )));
            }
            Ok(Value::Const((*lit).clone()))
        }
        FlatType::Record(fields) => Ok(Value::Record(
            fields
                .iter()
                .map(|(l, sub)| {
                    let label = join_label(prefix, &label_component(l));
                    Ok((l.clone(), unflatten_one(cols, sub, Some(&label))?))
                })
                .collect::<Result<_>>()?,
        )),
        FlatType::Index => {
            let tag_label = join_label(prefix, "i1");
            let dyn_label = join_label(prefix, "i2");
            let tag = match cols.get(tag_label.as_str()) {
                Some(Literal::Int(n)) => *n,
                _ => return Err(Error::ColumnMismatch(format!("missing column {tag_label}"))),
            };
            let pos = match cols.get(dyn_label.as_str()) {
                Some(Literal::Int(n)) => *n,
                _ => return Err(Error::ColumnMismatch(format!("missing column {dyn_label}"))),
            };
            Ok(Value::Idx(Index::flat(StaticTag(tag as u32), pos as u64)))
        }
    }
}

// ---------------------------------------------------------------------------
// SQL emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct EmitOptions {
    /// Inline the let binding as a derived table instead of a WITH clause.
    pub inline_with: bool,
    /// Order row-numbering by declared keys only, when every source in the
    /// subquery has one.
    pub key_row_numbering: bool,
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn sql_literal(l: &Literal) -> String {
    match l {
        Literal::Int(n) => n.to_string(),
        Literal::Bool(true) => "TRUE".to_string(),
        Literal::Bool(false) => "FALSE".to_string(),
        Literal::Str(s) => format!("'{}'", s.replace('\'', "''")),
        Literal::Unit => "NULL".to_string(),
    }
}

/// Emits one flattened let-inserted query as a single SQL statement:
/// UNION ALL across comprehensions, a WITH clause (or inlined derived
/// table) per binding, and ROW_NUMBER over the full column list of every
/// referenced source for the row-numbering primitive.
pub fn emit_sql(q: &LetQuery, schema: &Schema, opts: &EmitOptions) -> Result<String> {
    let parts: Vec<String> = q
        .comprehensions
        .iter()
        .map(|comp| emit_comp(comp, schema, opts))
        .collect::<Result<_>>()?;
    if parts.len() == 1 {
        Ok(format!("{};\n", parts[0]))
    } else {
        let wrapped: Vec<String> = parts.into_iter().map(|p| format!("({p})")).collect();
        Ok(format!("{};\n", wrapped.join("\nUNION ALL\n")))
    }
}

fn emit_comp(comp: &LetComp, schema: &Schema, opts: &EmitOptions) -> Result<String> {
    let z_columns: Vec<String> = match &comp.binding {
        Some(binding) => match &binding.head {
            LetInner::Record(fields) => fields.iter().map(|(l, _)| l.clone()).collect(),
            _ => {
                return Err(Error::UnflattenedInput(
                    "binding head is not a record".into(),
                ))
            }
        },
        None => Vec::new(),
    };
    let body = emit_subquery(&comp.body, schema, opts, &z_columns, None)?;
    match &comp.binding {
        None => Ok(body),
        Some(binding) => {
            let binding_sql = emit_subquery(binding, schema, opts, &[], None)?;
            if opts.inline_with {
                let inlined =
                    emit_subquery(&comp.body, schema, opts, &z_columns, Some(&binding_sql))?;
                Ok(inlined)
            } else {
                Ok(format!(
                    "WITH \"q\" AS (\n{}\n)\n{}",
                    indent(&binding_sql),
                    body
                ))
            }
        }
    }
}

fn indent(s: &str) -> String {
    s.lines()
        .map(|l| format!("  {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders one subquery. `inline_source` carries the rendered binding when
/// WITH-inlining is enabled.
fn emit_subquery(
    sub: &Subquery,
    schema: &Schema,
    opts: &EmitOptions,
    z_columns: &[String],
    inline_source: Option<&str>,
) -> Result<String> {
    let order_by = row_number_order(sub, schema, opts, z_columns)?;
    let fields = match &sub.head {
        LetInner::Record(fields) => fields.as_slice(),
        _ => {
            return Err(Error::UnflattenedInput(
                "subquery head is not a record".into(),
            ))
        }
    };
    let mut select_items = Vec::with_capacity(fields.len());
    for (label, item) in fields {
        let rendered = match item {
            LetInner::Base(b) => emit_base(b, schema, opts)?,
            // A zero-generator product holds at most one row, so its row
            // number degenerates to the literal 1.
            LetInner::RowNumber if order_by.is_empty() => "1".to_string(),
            LetInner::RowNumber => {
                format!("ROW_NUMBER() OVER (ORDER BY {})", order_by.join(", "))
            }
            LetInner::Record(_) => {
                return Err(Error::UnflattenedInput(format!(
                    "nested record under column {label}"
                )))
            }
        };
        select_items.push(format!("{rendered} AS {}", quote_ident(label)));
    }
    let mut from_items = Vec::with_capacity(sub.generators.len());
    for (x, source) in &sub.generators {
        let item = match source {
            LetSource::Table(t) => format!("{} AS {}", quote_ident(t), quote_ident(x)),
            LetSource::LetVar(name) => match inline_source {
                Some(sql) => format!("(\n{}\n) AS {}", indent(sql), quote_ident(x)),
                None => format!("{} AS {}", quote_ident(name), quote_ident(x)),
            },
        };
        from_items.push(item);
    }
    let mut out = format!("SELECT {}", select_items.join(", "));
    if !from_items.is_empty() {
        out.push_str(&format!("\nFROM {}", from_items.join(", ")));
    }
    if !sub.guard.is_truth() {
        out.push_str(&format!("\nWHERE {}", emit_base(&sub.guard, schema, opts)?));
    }
    Ok(out)
}

/// Column list for ROW_NUMBER ordering: every column of every source of the
/// subquery, in generator order; tables contribute their schema columns,
/// the let variable contributes its carried data and index columns. With
/// key row-numbering enabled and keys everywhere, only key columns (and the
/// let variable's index column) are listed.
fn row_number_order(
    sub: &Subquery,
    schema: &Schema,
    opts: &EmitOptions,
    z_columns: &[String],
) -> Result<Vec<String>> {
    let keys_available = opts.key_row_numbering
        && sub.generators.iter().all(|(_, s)| match s {
            LetSource::Table(t) => schema
                .tables
                .get(t)
                .map(|ts| ts.key.is_some())
                .unwrap_or(false),
            LetSource::LetVar(_) => true,
        });
    let mut cols = Vec::new();
    for (x, source) in &sub.generators {
        match source {
            LetSource::Table(t) => {
                let ts = schema.table(t)?;
                let labels: Vec<String> = if keys_available {
                    ts.key.clone().expect("checked above")
                } else {
                    ts.columns.iter().map(|(l, _)| l.clone()).collect()
                };
                for l in labels {
                    cols.push(format!("{}.{}", quote_ident(x), quote_ident(&l)));
                }
            }
            LetSource::LetVar(_) => {
                if keys_available {
                    // The carried row number is already unique per row.
                    if let Some(last) = z_columns.last() {
                        cols.push(format!("{}.{}", quote_ident(x), quote_ident(last)));
                    }
                } else {
                    for l in z_columns {
                        cols.push(format!("{}.{}", quote_ident(x), quote_ident(l)));
                    }
                }
            }
        }
    }
    Ok(cols)
}

fn emit_base(b: &LetBase, schema: &Schema, opts: &EmitOptions) -> Result<String> {
    Ok(match b {
        LetBase::Proj(x, labels) => match labels.as_slice() {
            [label] => format!("{}.{}", quote_ident(x), quote_ident(label)),
            _ => {
                return Err(Error::UnflattenedInput(format!(
                    "multi-step projection {x}.{labels:?}"
                )))
            }
        },
        LetBase::Prim(p, args) => match p {
            Prim::Lit(l) => sql_literal(l),
            Prim::Not => format!("NOT ({})", emit_base(&args[0], schema, opts)?),
            _ => {
                let op = match p {
                    Prim::Eq => "=",
                    Prim::Ne => "<>",
                    Prim::Lt => "<",
                    Prim::Gt => ">",
                    Prim::Le => "<=",
                    Prim::Ge => ">=",
                    Prim::And => "AND",
                    Prim::Or => "OR",
                    Prim::Add => "+",
                    Prim::Sub => "-",
                    Prim::Mul => "*",
                    Prim::Lit(_) | Prim::Not => unreachable!(),
                };
                format!(
                    "({} {op} {})",
                    emit_base(&args[0], schema, opts)?,
                    emit_base(&args[1], schema, opts)?
                )
            }
        },
        LetBase::IsEmpty(q) => {
            let branches: Vec<String> = q
                .branches
                .iter()
                .map(|branch| emit_exists_branch(branch, schema, opts))
                .collect::<Result<_>>()?;
            if branches.len() == 1 {
                format!("NOT EXISTS ({})", branches[0])
            } else {
                let wrapped: Vec<String> = branches.into_iter().map(|b| format!("({b})")).collect();
                format!("NOT EXISTS ({})", wrapped.join(" UNION ALL "))
            }
        }
    })
}

fn emit_exists_branch(branch: &Subquery, schema: &Schema, opts: &EmitOptions) -> Result<String> {
    let mut out = "SELECT 1".to_string();
    if !branch.generators.is_empty() {
        let items: Vec<String> = branch
            .generators
            .iter()
            .map(|(x, s)| match s {
                LetSource::Table(t) => Ok(format!("{} AS {}", quote_ident(t), quote_ident(x))),
                LetSource::LetVar(name) => Err(Error::UnflattenedInput(format!(
                    "let variable {name} inside an emptiness test"
                ))),
            })
            .collect::<Result<_>>()?;
        out.push_str(&format!(" FROM {}", items.join(", ")));
    }
    if !branch.guard.is_truth() {
        out.push_str(&format!(
            " WHERE {}",
            emit_base(&branch.guard, schema, opts)?
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Compiled packages
// ---------------------------------------------------------------------------

/// Everything stitching needs after the queries round-trip through a DBMS.
#[derive(Debug, Clone)]
pub struct CompiledQuery {
    pub path: Path,
    pub sql: String,
    /// Shredded payload type (indexes abstract), used to unflatten rows.
    pub payload_type: FlatType,
    /// Full flattened row columns, in select order.
    pub columns: Vec<(String, BaseType)>,
}

#[derive(Debug, Clone)]
pub struct CompiledPackage {
    pub result_type: NestedType,
    pub queries: Vec<CompiledQuery>,
    /// Static tag aliases to the integer literals used in the SQL.
    pub tags: Vec<(String, u32)>,
}

impl CompiledPackage {
    /// The full row type each query returns: outer index pair plus payload.
    pub fn row_type(payload: &FlatType) -> FlatType {
        FlatType::Record(vec![
            (tuple_label(1), FlatType::Index),
            (tuple_label(2), payload.clone()),
        ])
    }
}

/// Compiles an annotated normal form to SQL: one statement per path of the
/// result type, plus the metadata needed to stitch rows coming back from a
/// database.
pub fn compile(
    nf: &NormalForm,
    result_type: &NestedType,
    schema: &Schema,
    opts: &EmitOptions,
) -> Result<CompiledPackage> {
    let paths = paths_of(result_type)?;
    let mut queries = Vec::with_capacity(paths.len());
    let mut tags: Vec<(String, u32)> = vec![("top".to_string(), 0)];
    nf.visit_comprehensions(&mut |c| {
        if let Some(tag) = c.tag {
            tags.push((tag.alias(), tag.0));
        }
    });
    for path in paths {
        let shredded = crate::shredder::shred_term(nf, &path)?;
        let shredded_ty = crate::shredder::typecheck_shredded(&shredded, schema)?;
        let prepared = avoid_z(&shredded);
        let inserted = let_insert(&prepared, schema)?;
        typecheck_letinserted(&inserted, schema)?;
        let flattened = flatten_query(&inserted);
        let sql = emit_sql(&flattened, schema, opts)?;
        let row_type = CompiledPackage::row_type(&shredded_ty.payload);
        queries.push(CompiledQuery {
            path,
            sql,
            payload_type: shredded_ty.payload,
            columns: flatten_type(&row_type),
        });
    }
    Ok(CompiledPackage {
        result_type: result_type.clone(),
        queries,
        tags,
    })
}

/// Parses rows returned by a database back into a shredded result, using
/// the compiled row layout.
pub fn rows_to_result(
    rows: &[Vec<(String, Literal)>],
    payload_type: &FlatType,
) -> Result<ShreddedResult> {
    let row_type = CompiledPackage::row_type(payload_type);
    let values = unflatten_values(rows, &row_type)?;
    let out = values
        .into_iter()
        .map(|v| {
            let outer = match v.field(&tuple_label(1)) {
                Some(Value::Idx(ix)) => ix.clone(),
                other => {
                    return Err(Error::ColumnMismatch(format!(
                        "expected index pair, got {other:?}"
                    )))
                }
            };
            let payload = v
                .field(&tuple_label(2))
                .cloned()
                .ok_or_else(|| Error::ColumnMismatch("missing payload".to_string()))?;
            Ok(ShreddedRow {
                outer,
                payload,
                annotation: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ShreddedResult { rows: out })
}

/// Converts one let-inserted result value, a pair of an integer index pair
/// and a payload, into a shredded row; integer pairs at index positions of
/// the payload type come back as flat indexes.
pub fn pair_value_to_row(v: &Value, payload: &FlatType) -> Result<ShreddedRow> {
    let outer = index_from_pair(v.field(&tuple_label(1)).ok_or_else(|| {
        Error::ColumnMismatch("let-inserted row has no outer index".to_string())
    })?)?;
    let inner = v
        .field(&tuple_label(2))
        .ok_or_else(|| Error::ColumnMismatch("let-inserted row has no payload".to_string()))?;
    Ok(ShreddedRow {
        outer,
        payload: pair_payload(inner, payload)?,
        annotation: None,
    })
}

fn index_from_pair(v: &Value) -> Result<Index> {
    let int = |label: &str| match v.field(label) {
        Some(Value::Const(Literal::Int(n))) => Ok(*n),
        other => Err(Error::ColumnMismatch(format!(
            "index pair component: {other:?}"
        ))),
    };
    Ok(Index::flat(
        StaticTag(int(&tuple_label(1))? as u32),
        int(&tuple_label(2))? as u64,
    ))
}

fn pair_payload(v: &Value, ty: &FlatType) -> Result<Value> {
    match ty {
        FlatType::Base(_) => Ok(v.clone()),
        FlatType::Index => index_from_pair(v).map(Value::Idx),
        FlatType::Record(fields) => Ok(Value::Record(
            fields
                .iter()
                .map(|(l, sub)| {
                    let inner = v.field(l).ok_or_else(|| {
                        Error::ColumnMismatch(format!("payload missing field {l}"))
                    })?;
                    Ok((l.clone(), pair_payload(inner, sub)?))
                })
                .collect::<Result<_>>()?,
        )),
    }
}

// ---------------------------------------------------------------------------
// Metadata serialization
// ---------------------------------------------------------------------------

pub fn flat_type_to_json(t: &FlatType) -> serde_json::Value {
    match t {
        FlatType::Base(b) => serde_json::json!({ "base": b.to_string() }),
        FlatType::Record(fields) => serde_json::json!({
            "record": fields
                .iter()
                .map(|(l, v)| serde_json::json!([l, flat_type_to_json(v)]))
                .collect::<Vec<_>>()
        }),
        FlatType::Index => serde_json::json!("index"),
    }
}

pub fn nested_type_to_json(t: &NestedType) -> serde_json::Value {
    match t {
        NestedType::Base(b) => serde_json::json!({ "base": b.to_string() }),
        NestedType::Record(fields) => serde_json::json!({
            "record": fields
                .iter()
                .map(|(l, v)| serde_json::json!([l, nested_type_to_json(v)]))
                .collect::<Vec<_>>()
        }),
        NestedType::Bag(e) => serde_json::json!({ "bag": nested_type_to_json(e) }),
        NestedType::Fun(_, _) => serde_json::json!("fun"),
    }
}

impl CompiledPackage {
    /// Package description written next to the SQL files: shape, tag
    /// mapping and flattened column lists.
    pub fn metadata(&self, name: &str) -> serde_json::Value {
        serde_json::json!({
            "result_type": nested_type_to_json(&self.result_type),
            "tags": self.tags.iter().map(|(a, n)| serde_json::json!([a, n])).collect::<Vec<_>>(),
            "queries": self
                .queries
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    serde_json::json!({
                        "file": format!("{name}.{}.sql", i + 1),
                        "path": q.path.to_string(),
                        "payload_type": flat_type_to_json(&q.payload_type),
                        "columns": q
                            .columns
                            .iter()
                            .map(|(l, b)| serde_json::json!([l, b.to_string()]))
                            .collect::<Vec<_>>(),
                    })
                })
                .collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_type_concatenates_ancestor_labels() {
        // {a: {b: Int, c: Int}, d: Int} flattens to a#b, a#c, d.
        let t = FlatType::Record(vec![
            (
                "a".to_string(),
                FlatType::Record(vec![
                    ("b".to_string(), FlatType::Base(BaseType::Int)),
                    ("c".to_string(), FlatType::Base(BaseType::Int)),
                ]),
            ),
            ("d".to_string(), FlatType::Base(BaseType::Int)),
        ]);
        let cols: Vec<String> = flatten_type(&t).into_iter().map(|(l, _)| l).collect();
        assert_eq!(cols, vec!["a#b", "a#c", "d"]);
    }

    #[test]
    fn bare_base_type_lifts_to_bullet_column() {
        let cols = flatten_type(&FlatType::Base(BaseType::Int));
        assert_eq!(cols, vec![(BULLET.to_string(), BaseType::Int)]);
    }

    #[test]
    fn already_flat_record_keeps_labels() {
        let t = FlatType::Record(vec![
            ("x".to_string(), FlatType::Base(BaseType::String)),
            ("y".to_string(), FlatType::Base(BaseType::Bool)),
        ]);
        let cols: Vec<String> = flatten_type(&t).into_iter().map(|(l, _)| l).collect();
        assert_eq!(cols, vec!["x", "y"]);
    }

    #[test]
    fn unflatten_collapses_bullet_and_rebuilds_nesting() {
        // {•: 5} unflattens to the bare value.
        let rows = vec![vec![(BULLET.to_string(), Literal::Int(5))]];
        let out = unflatten_values(&rows, &FlatType::Base(BaseType::Int)).unwrap();
        assert_eq!(out, vec![Value::int(5)]);

        // {a#b: 1, a#c: 2, d: 3} unflattens to {a = {b = 1, c = 2}, d = 3}.
        let t = FlatType::Record(vec![
            (
                "a".to_string(),
                FlatType::Record(vec![
                    ("b".to_string(), FlatType::Base(BaseType::Int)),
                    ("c".to_string(), FlatType::Base(BaseType::Int)),
                ]),
            ),
            ("d".to_string(), FlatType::Base(BaseType::Int)),
        ]);
        let rows = vec![vec![
            ("a#b".to_string(), Literal::Int(1)),
            ("a#c".to_string(), Literal::Int(2)),
            ("d".to_string(), Literal::Int(3)),
        ]];
        let out = unflatten_values(&rows, &t).unwrap();
        assert_eq!(
            out,
            vec![Value::record(vec![
                (
                    "a".to_string(),
                    Value::record(vec![
                        ("b".to_string(), Value::int(1)),
                        ("c".to_string(), Value::int(2)),
                    ])
                ),
                ("d".to_string(), Value::int(3)),
            ])]
        );
    }

    #[test]
    fn unflatten_rejects_missing_columns() {
        let rows = vec![vec![("x".to_string(), Literal::Int(1))]];
        let t = FlatType::Record(vec![("y".to_string(), FlatType::Base(BaseType::Int))]);
        assert!(matches!(
            unflatten_values(&rows, &t),
            Err(Error::ColumnMismatch(_))
        ));
    }
}
