//! Shared fixtures for the integration suites: corpus loading, the sample
//! database, and seeded random generators for types, values and well-typed
//! queries over the organisation schema.

#![allow(dead_code)]

use shredql::ast::*;
use shredql::datagen::Rng;
use shredql::frontend::{parse_data, parse_schema};

pub fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("cannot read {path}: {e}"))
}

pub fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("cannot read {path}: {e}"))
}

pub fn golden_path(name: &str) -> String {
    format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn org_schema() -> Schema {
    parse_schema(&corpus("org.schema.json")).unwrap()
}

pub fn sample_db() -> DatabaseInstance {
    parse_data(&corpus("org_sample.data.json"), &org_schema()).unwrap()
}

pub const CORPUS_QUERIES: &[&str] = &[
    "q1", "q2", "q3", "q4", "q5", "q6", "qf1", "qf2", "qf3", "qf4",
];

// ---------------------------------------------------------------------------
// Random generators
// ---------------------------------------------------------------------------

pub struct Gen {
    pub rng: Rng,
}

impl Gen {
    pub fn new(seed: u64) -> Gen {
        Gen {
            rng: Rng::new(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(7)),
        }
    }

    fn pick(&mut self, n: u64) -> u64 {
        self.rng.range(0, n - 1)
    }

    /// A random nested type without function arrows.
    pub fn nested_type(&mut self, depth: u32) -> NestedType {
        match if depth == 0 { 0 } else { self.pick(5) } {
            0 => NestedType::Base(self.base_type()),
            1 | 2 => {
                let n = self.rng.range(1, 3);
                NestedType::Record(
                    (0..n)
                        .map(|i| (format!("f{i}"), self.nested_type(depth - 1)))
                        .collect(),
                )
            }
            _ => NestedType::bag(self.nested_type(depth - 1)),
        }
    }

    /// A random query result type: a bag of something nested.
    pub fn result_type(&mut self, depth: u32) -> NestedType {
        NestedType::bag(self.nested_type(depth))
    }

    pub fn base_type(&mut self) -> BaseType {
        match self.pick(3) {
            0 => BaseType::Int,
            1 => BaseType::Bool,
            _ => BaseType::String,
        }
    }

    /// A record-nested flat type with base leaves.
    pub fn flat_record_type(&mut self, depth: u32) -> FlatType {
        if depth == 0 || self.rng.chance(40) {
            FlatType::Base(self.base_type())
        } else {
            let n = self.rng.range(1, 3);
            FlatType::Record(
                (0..n)
                    .map(|i| (format!("f{i}"), self.flat_record_type(depth - 1)))
                    .collect(),
            )
        }
    }

    pub fn literal_of(&mut self, ty: BaseType) -> Literal {
        match ty {
            BaseType::Int => Literal::Int(self.rng.range(0, 9) as i64),
            BaseType::Bool => Literal::Bool(self.rng.chance(50)),
            BaseType::String => Literal::Str(format!("s{}", self.rng.range(0, 4))),
            BaseType::Unit => Literal::Unit,
        }
    }

    pub fn value_of_flat(&mut self, ty: &FlatType) -> Value {
        match ty {
            FlatType::Base(b) => Value::Const(self.literal_of(*b)),
            FlatType::Record(fields) => Value::Record(
                fields
                    .iter()
                    .map(|(l, t)| (l.clone(), self.value_of_flat(t)))
                    .collect(),
            ),
            FlatType::Index => Value::Idx(Index::flat(
                StaticTag(self.rng.range(0, 4) as u32),
                self.rng.range(1, 9),
            )),
        }
    }

    /// A random nested value: type-directed, so bags stay homogeneous the
    /// way evaluation results are.
    pub fn nested_value(&mut self, depth: u32) -> Value {
        let ty = self.nested_type(depth);
        self.value_of_nested(&ty)
    }

    pub fn value_of_nested(&mut self, ty: &NestedType) -> Value {
        match ty {
            NestedType::Base(b) => Value::Const(self.literal_of(*b)),
            NestedType::Record(fields) => Value::Record(
                fields
                    .iter()
                    .map(|(l, t)| (l.clone(), self.value_of_nested(t)))
                    .collect(),
            ),
            NestedType::Bag(elem) => {
                let n = self.rng.range(0, 3);
                Value::bag((0..n).map(|_| self.value_of_nested(elem)))
            }
            NestedType::Fun(_, _) => unreachable!("generator never makes arrows"),
        }
    }

    /// A random closed, well-typed flat-nested query over the organisation
    /// schema, paired with its result type.
    pub fn query(&mut self, schema: &Schema) -> (Term, NestedType) {
        let ty = self.result_type(2);
        let elem = match &ty {
            NestedType::Bag(e) => e.as_ref().clone(),
            _ => unreachable!(),
        };
        let mut fresh = 0u32;
        let term = self.bag_term(&elem, schema, &mut Vec::new(), &mut fresh, 3);
        (term, ty)
    }

    fn bag_term(
        &mut self,
        elem: &NestedType,
        schema: &Schema,
        env: &mut Vec<(String, String)>,
        fresh: &mut u32,
        depth: u32,
    ) -> Term {
        if depth == 0 {
            return if self.rng.chance(50) {
                Term::Empty
            } else {
                Term::Singleton(Box::new(self.inner_term(elem, schema, env, fresh, 0)))
            };
        }
        match self.pick(10) {
            0 => Term::Empty,
            1 | 2 => Term::Singleton(Box::new(self.inner_term(
                elem,
                schema,
                env,
                fresh,
                depth - 1,
            ))),
            3 => Term::Union(
                Box::new(self.bag_term(elem, schema, env, fresh, depth - 1)),
                Box::new(self.bag_term(elem, schema, env, fresh, depth - 1)),
            ),
            4 => Term::If(
                Box::new(self.base_term(BaseType::Bool, schema, env, fresh, 1)),
                Box::new(self.bag_term(elem, schema, env, fresh, depth - 1)),
                Box::new(self.bag_term(elem, schema, env, fresh, depth - 1)),
            ),
            5 => {
                // A reducible application, to exercise symbolic evaluation.
                let table = self.table(schema);
                let x = self.fresh_var(fresh);
                env.push((x.clone(), table.clone()));
                let body = self.bag_term(elem, schema, env, fresh, depth - 1);
                env.pop();
                let row = self.literal_row(schema, &table);
                Term::App(Box::new(Term::Lam(x, Box::new(body))), Box::new(row))
            }
            _ => {
                let table = self.table(schema);
                let x = self.fresh_var(fresh);
                env.push((x.clone(), table.clone()));
                let mut body = self.bag_term(elem, schema, env, fresh, depth - 1);
                if self.rng.chance(70) {
                    let guard = self.base_term(BaseType::Bool, schema, env, fresh, 1);
                    body = Term::If(Box::new(guard), Box::new(body), Box::new(Term::Empty));
                }
                env.pop();
                Term::For(x, Box::new(Term::Table(table)), Box::new(body))
            }
        }
    }

    fn fresh_var(&mut self, fresh: &mut u32) -> String {
        *fresh += 1;
        format!("v{fresh}")
    }

    fn table(&mut self, schema: &Schema) -> String {
        let names: Vec<&String> = schema.tables.keys().collect();
        names[self.pick(names.len() as u64) as usize].clone()
    }

    fn literal_row(&mut self, schema: &Schema, table: &str) -> Term {
        let ts = schema.tables.get(table).expect("table exists");
        Term::Record(
            ts.columns
                .iter()
                .map(|(l, b)| (l.clone(), Term::lit(self.literal_of(*b))))
                .collect(),
        )
    }

    fn inner_term(
        &mut self,
        ty: &NestedType,
        schema: &Schema,
        env: &mut Vec<(String, String)>,
        fresh: &mut u32,
        depth: u32,
    ) -> Term {
        match ty {
            NestedType::Base(b) => self.base_term(*b, schema, env, fresh, 1),
            NestedType::Record(fields) => Term::Record(
                fields
                    .iter()
                    .map(|(l, t)| (l.clone(), self.inner_term(t, schema, env, fresh, depth)))
                    .collect(),
            ),
            NestedType::Bag(elem) => self.bag_term(elem, schema, env, fresh, depth),
            NestedType::Fun(_, _) => unreachable!("generator never makes arrows"),
        }
    }

    fn base_term(
        &mut self,
        ty: BaseType,
        schema: &Schema,
        env: &mut Vec<(String, String)>,
        fresh: &mut u32,
        depth: u32,
    ) -> Term {
        // Prefer projections from generators in scope when one has a column
        // of the right type.
        let mut candidates = Vec::new();
        for (x, t) in env.iter() {
            if let Some(ts) = schema.tables.get(t) {
                for (l, b) in &ts.columns {
                    if *b == ty {
                        candidates.push((x.clone(), l.clone()));
                    }
                }
            }
        }
        if !candidates.is_empty() && self.rng.chance(60) {
            let (x, l) = candidates[self.pick(candidates.len() as u64) as usize].clone();
            return Term::project(Term::var(&x), &l);
        }
        if depth > 0 && ty == BaseType::Bool && self.rng.chance(50) {
            return match self.pick(4) {
                0 => {
                    let arg = self.base_type();
                    let a = self.base_term(arg, schema, env, fresh, 0);
                    let b = self.base_term(arg, schema, env, fresh, 0);
                    Term::PrimApp(
                        if self.rng.chance(50) {
                            Prim::Eq
                        } else {
                            Prim::Ne
                        },
                        vec![a, b],
                    )
                }
                1 => {
                    let a = self.base_term(BaseType::Int, schema, env, fresh, 0);
                    let b = self.base_term(BaseType::Int, schema, env, fresh, 0);
                    Term::PrimApp(
                        if self.rng.chance(50) {
                            Prim::Lt
                        } else {
                            Prim::Ge
                        },
                        vec![a, b],
                    )
                }
                2 => {
                    let a = self.base_term(BaseType::Bool, schema, env, fresh, 0);
                    let b = self.base_term(BaseType::Bool, schema, env, fresh, 0);
                    Term::PrimApp(
                        if self.rng.chance(50) {
                            Prim::And
                        } else {
                            Prim::Or
                        },
                        vec![a, b],
                    )
                }
                _ => {
                    // Correlated emptiness test over a small comprehension.
                    let elem = NestedType::Base(self.base_type());
                    let inner = self.bag_term(&elem, schema, env, fresh, 1);
                    Term::IsEmpty(Box::new(inner))
                }
            };
        }
        if depth > 0 && ty == BaseType::Int && self.rng.chance(30) {
            let a = self.base_term(BaseType::Int, schema, env, fresh, 0);
            let b = self.base_term(BaseType::Int, schema, env, fresh, 0);
            let op = match self.pick(3) {
                0 => Prim::Add,
                1 => Prim::Sub,
                _ => Prim::Mul,
            };
            return Term::PrimApp(op, vec![a, b]);
        }
        Term::lit(self.literal_of(ty))
    }
}
