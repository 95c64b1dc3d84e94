//! Syntax-directed typechecker for elaborated queries.
//!
//! Runs after binding inlining, so lambda redexes have already been
//! reduced away; a lambda left in a position where its parameter type is
//! unknown is reported as an error rather than inferred. Empty bags get a
//! local element hole that must be filled by a join with the surrounding
//! context (the `where` desugaring relies on this).

use std::collections::HashMap;

use crate::ast::{BaseType, NestedType, Prim, Schema, Term};
use crate::error::{Error, Result};

/// Typing environment: variables in scope plus the fixed table signatures.
#[derive(Debug, Clone, Default)]
pub struct TypeEnv {
    pub vars: HashMap<String, NestedType>,
}

#[derive(Debug, Clone, PartialEq)]
enum Ty {
    Base(BaseType),
    Record(Vec<(String, Ty)>),
    Bag(Box<Ty>),
    Fun(Box<Ty>, Box<Ty>),
    /// Element type of an empty bag, not yet determined.
    Hole,
}

impl Ty {
    fn from_nested(t: &NestedType) -> Ty {
        match t {
            NestedType::Base(b) => Ty::Base(*b),
            NestedType::Record(fs) => Ty::Record(
                fs.iter()
                    .map(|(l, t)| (l.clone(), Ty::from_nested(t)))
                    .collect(),
            ),
            NestedType::Bag(t) => Ty::Bag(Box::new(Ty::from_nested(t))),
            NestedType::Fun(a, b) => {
                Ty::Fun(Box::new(Ty::from_nested(a)), Box::new(Ty::from_nested(b)))
            }
        }
    }

    fn to_nested(&self, context: &str) -> Result<NestedType> {
        Ok(match self {
            Ty::Base(b) => NestedType::Base(*b),
            Ty::Record(fs) => NestedType::Record(
                fs.iter()
                    .map(|(l, t)| Ok((l.clone(), t.to_nested(context)?)))
                    .collect::<Result<_>>()?,
            ),
            Ty::Bag(t) => NestedType::bag(t.to_nested(context)?),
            Ty::Fun(a, b) => NestedType::Fun(
                Box::new(a.to_nested(context)?),
                Box::new(b.to_nested(context)?),
            ),
            Ty::Hole => {
                return Err(Error::TypeError {
                    context: context.to_string(),
                    expected: "a determinable element type".to_string(),
                    found: "empty bag in an unconstrained position".to_string(),
                })
            }
        })
    }

    /// As [`Ty::to_nested`], but element types left open by empty bags
    /// become the unit base type. Such positions are only ever reached
    /// through empty bags, so the placeholder is never consumed.
    fn to_nested_lenient(&self) -> NestedType {
        match self {
            Ty::Base(b) => NestedType::Base(*b),
            Ty::Record(fs) => NestedType::Record(
                fs.iter()
                    .map(|(l, t)| (l.clone(), t.to_nested_lenient()))
                    .collect(),
            ),
            Ty::Bag(t) => NestedType::bag(t.to_nested_lenient()),
            Ty::Fun(a, b) => NestedType::Fun(
                Box::new(a.to_nested_lenient()),
                Box::new(b.to_nested_lenient()),
            ),
            Ty::Hole => NestedType::Base(BaseType::Unit),
        }
    }

    fn describe(&self) -> String {
        match self {
            Ty::Base(b) => b.to_string(),
            Ty::Record(fs) => {
                let inner: Vec<String> = fs
                    .iter()
                    .map(|(l, t)| format!("{l}: {}", t.describe()))
                    .collect();
                format!("{{{}}}", inner.join(", "))
            }
            Ty::Bag(t) => format!("Bag {}", t.describe()),
            Ty::Fun(a, b) => format!("({} -> {})", a.describe(), b.describe()),
            Ty::Hole => "Bag element".to_string(),
        }
    }
}

/// Least upper bound under hole filling.
fn join(a: &Ty, b: &Ty, context: &str) -> Result<Ty> {
    match (a, b) {
        (Ty::Hole, _) => Ok(b.clone()),
        (_, Ty::Hole) => Ok(a.clone()),
        (Ty::Base(x), Ty::Base(y)) if x == y => Ok(a.clone()),
        (Ty::Bag(x), Ty::Bag(y)) => Ok(Ty::Bag(Box::new(join(x, y, context)?))),
        (Ty::Fun(a1, b1), Ty::Fun(a2, b2)) => Ok(Ty::Fun(
            Box::new(join(a1, a2, context)?),
            Box::new(join(b1, b2, context)?),
        )),
        (Ty::Record(xs), Ty::Record(ys)) if xs.len() == ys.len() => {
            let fields = xs
                .iter()
                .map(|(l, x)| match ys.iter().find(|(m, _)| m == l) {
                    Some((_, y)) => Ok((l.clone(), join(x, y, context)?)),
                    None => Err(Error::TypeError {
                        context: context.to_string(),
                        expected: format!("record with field {l}"),
                        found: b.describe(),
                    }),
                })
                .collect::<Result<_>>()?;
            Ok(Ty::Record(fields))
        }
        _ => Err(Error::TypeError {
            context: context.to_string(),
            expected: a.describe(),
            found: b.describe(),
        }),
    }
}

struct Checker<'a> {
    schema: &'a Schema,
}

impl<'a> Checker<'a> {
    fn synth(&self, t: &Term, env: &HashMap<String, Ty>) -> Result<Ty> {
        match t {
            Term::Var(x) => env.get(x).cloned().ok_or_else(|| Error::TypeError {
                context: format!("variable {x}"),
                expected: "a bound variable".to_string(),
                found: "unbound name".to_string(),
            }),
            Term::Table(name) => {
                let ts = self.schema.table(name).map_err(|_| Error::TypeError {
                    context: format!("table {name}"),
                    expected: "a declared table".to_string(),
                    found: "unknown table".to_string(),
                })?;
                Ok(Ty::from_nested(&ts.relation_type()))
            }
            Term::PrimApp(p, args) => self.synth_prim(p, args, env),
            Term::If(c, a, b) => {
                let tc = self.synth(c, env)?;
                join(&tc, &Ty::Base(BaseType::Bool), "conditional test")?;
                let ta = self.synth(a, env)?;
                let tb = self.synth(b, env)?;
                join(&ta, &tb, "conditional branches")
            }
            Term::Lam(x, _) => Err(Error::TypeError {
                context: format!("fun ({x}) -> ..."),
                expected: "a first-order expression".to_string(),
                found: "a lambda whose parameter type cannot be determined".to_string(),
            }),
            Term::App(f, a) => {
                // A lambda applied in place is an inlined binding: bind the
                // argument's type and check the body directly.
                if let Term::Lam(x, body) = f.as_ref() {
                    let ta = self.synth(a, env)?;
                    let mut env2 = env.clone();
                    env2.insert(x.clone(), ta);
                    return self.synth(body, &env2);
                }
                let tf = self.synth(f, env)?;
                match tf {
                    Ty::Fun(param, result) => {
                        let ta = self.synth(a, env)?;
                        join(&param, &ta, "function argument")?;
                        Ok(*result)
                    }
                    other => Err(Error::TypeError {
                        context: "application".to_string(),
                        expected: "a function".to_string(),
                        found: other.describe(),
                    }),
                }
            }
            Term::Record(fields) => {
                let mut out = Vec::new();
                for (l, v) in fields {
                    if out.iter().any(|(m, _): &(String, Ty)| m == l) {
                        return Err(Error::TypeError {
                            context: "record literal".to_string(),
                            expected: "distinct labels".to_string(),
                            found: format!("duplicate label {l}"),
                        });
                    }
                    out.push((l.clone(), self.synth(v, env)?));
                }
                Ok(Ty::Record(out))
            }
            Term::Project(e, l) => {
                let te = self.synth(e, env)?;
                match te {
                    Ty::Record(fs) => fs
                        .iter()
                        .find(|(m, _)| m == l)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| Error::TypeError {
                            context: format!("projection .{l}"),
                            expected: format!("record with field {l}"),
                            found: Ty::Record(fs.clone()).describe(),
                        }),
                    other => Err(Error::TypeError {
                        context: format!("projection .{l}"),
                        expected: "a record".to_string(),
                        found: other.describe(),
                    }),
                }
            }
            Term::Empty => Ok(Ty::Bag(Box::new(Ty::Hole))),
            Term::Singleton(e) => Ok(Ty::Bag(Box::new(self.synth(e, env)?))),
            Term::Union(a, b) => {
                let ta = self.synth(a, env)?;
                let tb = self.synth(b, env)?;
                let joined = join(&ta, &tb, "bag union")?;
                match joined {
                    Ty::Bag(_) => Ok(joined),
                    other => Err(Error::TypeError {
                        context: "bag union".to_string(),
                        expected: "bags".to_string(),
                        found: other.describe(),
                    }),
                }
            }
            Term::For(x, src, body) => {
                let tsrc = self.synth(src, env)?;
                let elem = match tsrc {
                    Ty::Bag(elem) => *elem,
                    other => {
                        return Err(Error::TypeError {
                            context: format!("generator {x}"),
                            expected: "a bag".to_string(),
                            found: other.describe(),
                        })
                    }
                };
                if elem == Ty::Hole {
                    return Err(Error::TypeError {
                        context: format!("generator {x}"),
                        expected: "a bag with a known element type".to_string(),
                        found: "empty bag literal".to_string(),
                    });
                }
                let mut env2 = env.clone();
                env2.insert(x.clone(), elem);
                let tbody = self.synth(body, &env2)?;
                match tbody {
                    Ty::Bag(_) => Ok(tbody),
                    other => Err(Error::TypeError {
                        context: "comprehension body".to_string(),
                        expected: "a bag".to_string(),
                        found: other.describe(),
                    }),
                }
            }
            Term::IsEmpty(e) => {
                let te = self.synth(e, env)?;
                match te {
                    Ty::Bag(_) => Ok(Ty::Base(BaseType::Bool)),
                    other => Err(Error::TypeError {
                        context: "empty(...)".to_string(),
                        expected: "a bag".to_string(),
                        found: other.describe(),
                    }),
                }
            }
        }
    }

    fn synth_prim(&self, p: &Prim, args: &[Term], env: &HashMap<String, Ty>) -> Result<Ty> {
        if args.len() != p.arity() {
            return Err(Error::TypeError {
                context: format!("primitive {}", p.name()),
                expected: format!("{} arguments", p.arity()),
                found: format!("{}", args.len()),
            });
        }
        let tys: Vec<Ty> = args
            .iter()
            .map(|a| self.synth(a, env))
            .collect::<Result<_>>()?;
        let base = |t: &Ty| match t {
            Ty::Base(b) => Some(*b),
            _ => None,
        };
        match p {
            Prim::Lit(l) => Ok(Ty::Base(l.base_type())),
            Prim::Eq | Prim::Ne => match (base(&tys[0]), base(&tys[1])) {
                (Some(a), Some(b)) if a == b && a != BaseType::Unit => Ok(Ty::Base(BaseType::Bool)),
                _ => Err(Error::TypeError {
                    context: format!("comparison {}", p.name()),
                    expected: "matching base types".to_string(),
                    found: format!("{} vs {}", tys[0].describe(), tys[1].describe()),
                }),
            },
            Prim::Lt | Prim::Gt | Prim::Le | Prim::Ge => match (base(&tys[0]), base(&tys[1])) {
                (Some(a), Some(b)) if a == b && matches!(a, BaseType::Int | BaseType::String) => {
                    Ok(Ty::Base(BaseType::Bool))
                }
                _ => Err(Error::TypeError {
                    context: format!("comparison {}", p.name()),
                    expected: "two Ints or two Strings".to_string(),
                    found: format!("{} vs {}", tys[0].describe(), tys[1].describe()),
                }),
            },
            Prim::And | Prim::Or => {
                for t in &tys {
                    join(t, &Ty::Base(BaseType::Bool), p.name())?;
                }
                Ok(Ty::Base(BaseType::Bool))
            }
            Prim::Not => {
                join(&tys[0], &Ty::Base(BaseType::Bool), "not")?;
                Ok(Ty::Base(BaseType::Bool))
            }
            Prim::Add | Prim::Sub | Prim::Mul => {
                for t in &tys {
                    join(t, &Ty::Base(BaseType::Int), p.name())?;
                }
                Ok(Ty::Base(BaseType::Int))
            }
        }
    }
}

/// Synthesizes the type of an elaborated term under the given environment.
pub fn typecheck_term(t: &Term, schema: &Schema, env: &TypeEnv) -> Result<NestedType> {
    let checker = Checker { schema };
    let env: HashMap<String, Ty> = env
        .vars
        .iter()
        .map(|(x, t)| (x.clone(), Ty::from_nested(t)))
        .collect();
    let ty = checker.synth(t, &env)?;
    ty.to_nested("query")
}

/// As [`typecheck_term`], but unconstrained empty-bag element types come
/// back as unit placeholders instead of failing.
pub fn typecheck_term_lenient(t: &Term, schema: &Schema, env: &TypeEnv) -> Result<NestedType> {
    let checker = Checker { schema };
    let env: HashMap<String, Ty> = env
        .vars
        .iter()
        .map(|(x, t)| (x.clone(), Ty::from_nested(t)))
        .collect();
    Ok(checker.synth(t, &env)?.to_nested_lenient())
}

/// Checks a term against an expected type; empty bags take their element
/// type from the expectation.
pub fn typecheck_query_at(t: &Term, expected: &NestedType, schema: &Schema) -> Result<()> {
    let checker = Checker { schema };
    let ty = checker.synth(t, &HashMap::new())?;
    join(
        &ty,
        &Ty::from_nested(expected),
        "query against its declared type",
    )?;
    Ok(())
}

/// Typechecks a closed query and enforces the flat-nested discipline: flat
/// tables in, no function arrows in the result type.
pub fn typecheck_query(t: &Term, schema: &Schema) -> Result<NestedType> {
    let ty = typecheck_term(t, schema, &TypeEnv::default())?;
    if ty.contains_fun() {
        return Err(Error::NotFlatNested(format!(
            "result type {} contains a function arrow",
            crate::pretty::pretty_type(&ty)
        )));
    }
    Ok(ty)
}
