//! Shredding: translating one annotated nested query into one flat query
//! per bag constructor in its result type, plus the package machinery that
//! keeps the flat pieces organized against the type's shape.
//!
//! Shredding a term at a path walks the comprehension spine: each bag level
//! contributes its generator clause, the body at the target level returns a
//! pair of the enclosing level's index and a flattened payload in which any
//! nested query is replaced by its own index. Emptiness tests keep only the
//! top-level query of their argument. The translation is linear per path.

use std::collections::HashMap;

use crate::ast::*;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Type shredding
// ---------------------------------------------------------------------------

/// Flat representation of a bag's contents: nested bags become indexes.
pub fn shred_type_inner(a: &NestedType) -> Result<FlatType> {
    Ok(match a {
        NestedType::Base(b) => FlatType::Base(*b),
        NestedType::Record(fields) => FlatType::Record(
            fields
                .iter()
                .map(|(l, t)| Ok((l.clone(), shred_type_inner(t)?)))
                .collect::<Result<_>>()?,
        ),
        NestedType::Bag(_) => FlatType::Index,
        NestedType::Fun(_, _) => return Err(Error::TypeHasFunctions),
    })
}

/// The shredded type of the bag at path `p` in `a`.
pub fn shred_type_outer(a: &NestedType, p: &Path) -> Result<ShreddedType> {
    if a.contains_fun() {
        return Err(Error::TypeHasFunctions);
    }
    let elem = type_at_path(a, p)?;
    Ok(ShreddedType {
        payload: shred_type_inner(elem)?,
    })
}

// ---------------------------------------------------------------------------
// Term shredding
// ---------------------------------------------------------------------------

/// Shreds an annotated normal form at one path of its result type.
pub fn shred_term(l: &NormalForm, p: &Path) -> Result<ShreddedQuery> {
    let comps = shred_query_at(l, StaticTag::TOP, &p.0)?;
    Ok(ShreddedQuery {
        comprehensions: comps,
    })
}

fn shred_query_at(q: &QueryTerm, outer: StaticTag, p: &[PathStep]) -> Result<Vec<ShreddedComp>> {
    let mut out = Vec::new();
    for c in &q.comprehensions {
        out.extend(shred_comp_at(c, outer, p)?);
    }
    Ok(out)
}

fn shred_comp_at(c: &Comprehension, outer: StaticTag, p: &[PathStep]) -> Result<Vec<ShreddedComp>> {
    let tag = c.tag.ok_or(Error::UnannotatedInput)?;
    let clause = ShredClause {
        generators: c.generators.clone(),
        guard: shred_base(&c.guard)?,
    };
    match p.first() {
        None => Ok(vec![ShreddedComp {
            clauses: vec![clause],
            outer: IndexTerm {
                tag: outer,
                hole: IndexHole::Up,
            },
            inner: shred_inner(&c.body, tag)?,
            tag,
        }]),
        Some(PathStep::Down) => {
            let mut comps = shred_norm_at(&c.body, tag, &p[1..])?;
            for comp in &mut comps {
                comp.clauses.insert(0, clause.clone());
            }
            Ok(comps)
        }
        Some(PathStep::Field(l)) => Err(Error::InvalidPath(format!(
            "field step {l} at a bag constructor"
        ))),
    }
}

fn shred_norm_at(n: &NormTerm, outer: StaticTag, p: &[PathStep]) -> Result<Vec<ShreddedComp>> {
    match n {
        NormTerm::Record(fields) => match p.first() {
            Some(PathStep::Field(l)) => {
                let field = fields
                    .iter()
                    .find(|(fl, _)| fl == l)
                    .map(|(_, v)| v)
                    .ok_or_else(|| Error::InvalidPath(format!("no field {l}")))?;
                shred_norm_at(field, outer, &p[1..])
            }
            other => Err(Error::InvalidPath(format!(
                "expected field step, got {other:?}"
            ))),
        },
        NormTerm::Query(q) => shred_query_at(q, outer, p),
        NormTerm::Base(_) => Err(Error::InvalidPath(
            "path descends into a base term".to_string(),
        )),
    }
}

/// Flat representation of a body with inner static tag `tag`: nested
/// queries become inner-index placeholders, emptiness tests keep the
/// top-level query of their argument.
fn shred_inner(n: &NormTerm, tag: StaticTag) -> Result<ShredInner> {
    Ok(match n {
        NormTerm::Base(b) => ShredInner::Base(shred_base(b)?),
        NormTerm::Record(fields) => ShredInner::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), shred_inner(v, tag)?)))
                .collect::<Result<_>>()?,
        ),
        NormTerm::Query(_) => ShredInner::Index(IndexTerm {
            tag,
            hole: IndexHole::Down,
        }),
    })
}

fn shred_base(b: &BaseTerm) -> Result<ShredBase> {
    Ok(match b {
        BaseTerm::Project(x, l) => ShredBase::Project(x.clone(), l.clone()),
        BaseTerm::PrimApp(p, args) => ShredBase::PrimApp(
            p.clone(),
            args.iter().map(shred_base).collect::<Result<_>>()?,
        ),
        BaseTerm::IsEmpty(q) => ShredBase::IsEmpty(Box::new(shred_term(q, &Path::root())?)),
    })
}

// ---------------------------------------------------------------------------
// Packages
// ---------------------------------------------------------------------------

/// The result type annotated with its own shredded types.
pub fn shred_type_package(a: &NestedType) -> Result<Package<ShreddedType>> {
    package_of(a, &mut |p| shred_type_outer(a, p))
}

/// The result type annotated with the shredded query for each bag
/// constructor.
pub fn shred_package(l: &NormalForm, a: &NestedType) -> Result<Package<ShreddedQuery>> {
    package_of(a, &mut |p| shred_term(l, p))
}

/// Annotation erasure; the left inverse of type shredding.
pub fn erase_package<A>(p: &Package<A>) -> NestedType {
    p.erase()
}

/// Maps a function over a package's annotations, preserving its shape.
pub fn pmap<A, B>(p: &Package<A>, mut f: impl FnMut(&A) -> B) -> Package<B> {
    p.pmap(&mut f)
}

// ---------------------------------------------------------------------------
// Shredded-term typechecker
// ---------------------------------------------------------------------------

/// Checks a shredded query against the shredded typing rules and returns its
/// type. Every comprehension must produce the same payload shape.
pub fn typecheck_shredded(q: &ShreddedQuery, schema: &Schema) -> Result<ShreddedType> {
    check_query(q, schema, &HashMap::new())
}

fn check_query(
    q: &ShreddedQuery,
    schema: &Schema,
    outer: &HashMap<String, String>,
) -> Result<ShreddedType> {
    let mut payload: Option<FlatType> = None;
    if q.comprehensions.is_empty() {
        return Err(Error::TypeError {
            context: "shredded query".to_string(),
            expected: "at least one comprehension".to_string(),
            found: "empty union".to_string(),
        });
    }
    for c in &q.comprehensions {
        let mut env = outer.clone();
        for clause in &c.clauses {
            for (x, t) in &clause.generators {
                schema.table(t)?;
                env.insert(x.clone(), t.clone());
            }
            let guard_ty = check_base(&clause.guard, schema, &env)?;
            if guard_ty != FlatType::Base(BaseType::Bool) {
                return Err(Error::TypeError {
                    context: "shredded guard".to_string(),
                    expected: "Bool".to_string(),
                    found: format!("{guard_ty:?}"),
                });
            }
        }
        let inner_ty = check_inner(&c.inner, schema, &env)?;
        match &payload {
            None => payload = Some(inner_ty),
            Some(expected) if *expected == inner_ty => {}
            Some(expected) => {
                return Err(Error::TypeError {
                    context: "shredded union".to_string(),
                    expected: format!("{expected:?}"),
                    found: format!("{inner_ty:?}"),
                })
            }
        }
    }
    Ok(ShreddedType {
        payload: payload.expect("nonempty union"),
    })
}

fn check_inner(n: &ShredInner, schema: &Schema, env: &HashMap<String, String>) -> Result<FlatType> {
    Ok(match n {
        ShredInner::Base(b) => check_base(b, schema, env)?,
        ShredInner::Record(fields) => FlatType::Record(
            fields
                .iter()
                .map(|(l, v)| Ok((l.clone(), check_inner(v, schema, env)?)))
                .collect::<Result<_>>()?,
        ),
        ShredInner::Index(_) => FlatType::Index,
    })
}

fn check_base(b: &ShredBase, schema: &Schema, env: &HashMap<String, String>) -> Result<FlatType> {
    match b {
        ShredBase::Project(x, l) => {
            let table = env.get(x).ok_or_else(|| Error::TypeError {
                context: format!("projection {x}.{l}"),
                expected: "generator-bound variable".to_string(),
                found: "unbound name".to_string(),
            })?;
            let col = schema
                .table(table)?
                .column_type(l)
                .ok_or_else(|| Error::TypeError {
                    context: format!("projection {x}.{l}"),
                    expected: format!("a column of {table}"),
                    found: l.clone(),
                })?;
            Ok(FlatType::Base(col))
        }
        ShredBase::PrimApp(p, args) => {
            let arg_tys: Vec<FlatType> = args
                .iter()
                .map(|a| check_base(a, schema, env))
                .collect::<Result<_>>()?;
            let bases: Option<Vec<BaseType>> = arg_tys
                .iter()
                .map(|t| match t {
                    FlatType::Base(b) => Some(*b),
                    _ => None,
                })
                .collect();
            let bases = bases.ok_or_else(|| Error::TypeError {
                context: format!("primitive {}", p.name()),
                expected: "base-typed arguments".to_string(),
                found: "index or record".to_string(),
            })?;
            let out = match p {
                Prim::Lit(l) => l.base_type(),
                Prim::Eq | Prim::Ne | Prim::Lt | Prim::Gt | Prim::Le | Prim::Ge => {
                    if bases.len() == 2 && bases[0] == bases[1] {
                        BaseType::Bool
                    } else {
                        return Err(Error::TypeError {
                            context: format!("comparison {}", p.name()),
                            expected: "matching base types".to_string(),
                            found: format!("{bases:?}"),
                        });
                    }
                }
                Prim::And | Prim::Or | Prim::Not => {
                    if bases.iter().all(|b| *b == BaseType::Bool) {
                        BaseType::Bool
                    } else {
                        return Err(Error::TypeError {
                            context: p.name().to_string(),
                            expected: "Bool".to_string(),
                            found: format!("{bases:?}"),
                        });
                    }
                }
                Prim::Add | Prim::Sub | Prim::Mul => {
                    if bases.iter().all(|b| *b == BaseType::Int) {
                        BaseType::Int
                    } else {
                        return Err(Error::TypeError {
                            context: p.name().to_string(),
                            expected: "Int".to_string(),
                            found: format!("{bases:?}"),
                        });
                    }
                }
            };
            Ok(FlatType::Base(out))
        }
        ShredBase::IsEmpty(q) => {
            check_query(q, schema, env)?;
            Ok(FlatType::Base(BaseType::Bool))
        }
    }
}
