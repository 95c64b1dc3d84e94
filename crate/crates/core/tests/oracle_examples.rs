//! Worked examples and derived oracles that pin down individual operation
//! behaviours: published values asserted directly, derived values computed
//! by independent means before being frozen here.

mod common;

use common::{corpus, org_schema, sample_db, Gen};
use shredql::ast::*;
use shredql::backend::{avoid_z, let_insert, EmitOptions, LetBase, LetInner, LetSource};
use shredql::error::Error;
use shredql::evaluator::{
    canonical_indexes, eval_annotated, eval_letinserted, eval_nested, eval_shredded, flat_index_fn,
    indexes_along_path, Env, IndexFn, IndexScheme,
};
use shredql::frontend::{parse_data, typecheck_term, TypeEnv};
use shredql::normalizer::normalize_traced;
use shredql::pipeline::{prepare, run_memory_with};
use shredql::shredder::shred_term;

fn empty_db() -> DatabaseInstance {
    parse_data(r#"{}"#, &org_schema()).unwrap()
}

// ---------------------------------------------------------------------------
// Multiset equality
// ---------------------------------------------------------------------------

#[test]
fn multiset_equality_on_flat_bags() {
    let a = Value::bag([Value::int(1), Value::int(2), Value::int(2)]);
    let b = Value::bag([Value::int(2), Value::int(1), Value::int(2)]);
    assert!(multiset_equal(&a, &b).unwrap());
    let c = Value::bag([Value::int(1), Value::int(2)]);
    assert!(!multiset_equal(&a, &c).unwrap());
    let mismatched = Value::bag([Value::str("x")]);
    assert!(matches!(
        multiset_equal(&a, &mismatched),
        Err(Error::TypeMismatch(_))
    ));
}

#[test]
fn published_result_is_equal_under_inner_permutation() {
    // Permute people and tasks bags of the evaluated running example
    // programmatically and compare as multisets.
    let schema = org_schema();
    let db = sample_db();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    let value = shredql::evaluator::eval_normal_form(&q.normal_form, &db, &mut Env::new())
        .unwrap()
        .erased();
    fn reverse_bags(v: &Value) -> Value {
        match v {
            Value::Const(_) | Value::Idx(_) => v.clone(),
            Value::Record(fs) => Value::Record(
                fs.iter()
                    .map(|(l, x)| (l.clone(), reverse_bags(x)))
                    .collect(),
            ),
            Value::Bag(items) => Value::Bag(
                items
                    .iter()
                    .rev()
                    .map(|(x, a)| (reverse_bags(x), a.clone()))
                    .collect(),
            ),
        }
    }
    assert!(multiset_equal(&value, &reverse_bags(&value)).unwrap());
}

// ---------------------------------------------------------------------------
// Paths and nesting degree
// ---------------------------------------------------------------------------

#[test]
fn nesting_degree_counts_all_bag_constructors() {
    // A bag of a two-bag record has degree three.
    let ab = NestedType::bag(NestedType::record(vec![
        (
            "A".to_string(),
            NestedType::bag(NestedType::Base(BaseType::Int)),
        ),
        (
            "B".to_string(),
            NestedType::bag(NestedType::Base(BaseType::String)),
        ),
    ]));
    let paths: Vec<String> = paths_of(&ab)
        .unwrap()
        .iter()
        .map(|p| p.to_string())
        .collect();
    assert_eq!(paths, vec!["e", "down.A.e", "down.B.e"]);
    assert_eq!(nesting_degree(&ab).unwrap(), 3);
    assert_eq!(
        nesting_degree(&NestedType::bag(NestedType::Base(BaseType::Int))).unwrap(),
        1
    );
    assert!(paths_of(&NestedType::Base(BaseType::Int))
        .unwrap()
        .is_empty());
}

// ---------------------------------------------------------------------------
// Typechecking examples
// ---------------------------------------------------------------------------

#[test]
fn typechecks_parameterised_function_body_under_an_environment() {
    let schema = org_schema();
    // The body of the per-department employee query, with d a record from
    // the context.
    let text = "for (e <- employees) where (d.name = e.dept)\n\
                return {name = e.name, salary = e.salary,\n\
                        tasks = for (t <- tasks) where (t.employee = e.name) return t.task}";
    let parsed = shredql::frontend::parse_query(text).unwrap();
    let term = shredql::frontend::resolve_tables(&parsed.main, &schema);
    let mut env = TypeEnv::default();
    env.vars.insert(
        "d".to_string(),
        NestedType::record(vec![(
            "name".to_string(),
            NestedType::Base(BaseType::String),
        )]),
    );
    let ty = typecheck_term(&term, &schema, &env).unwrap();
    let want = NestedType::bag(NestedType::record(vec![
        ("name".to_string(), NestedType::Base(BaseType::String)),
        ("salary".to_string(), NestedType::Base(BaseType::Int)),
        (
            "tasks".to_string(),
            NestedType::bag(NestedType::Base(BaseType::String)),
        ),
    ]));
    assert_eq!(ty, want);
}

#[test]
fn running_example_has_the_published_result_type() {
    let schema = org_schema();
    let q = prepare(&corpus("q6.nrc"), &schema).unwrap();
    let want = NestedType::bag(NestedType::record(vec![
        ("department".to_string(), NestedType::Base(BaseType::String)),
        (
            "people".to_string(),
            NestedType::bag(NestedType::record(vec![
                ("name".to_string(), NestedType::Base(BaseType::String)),
                (
                    "tasks".to_string(),
                    NestedType::bag(NestedType::Base(BaseType::String)),
                ),
            ])),
        ),
    ]));
    assert_eq!(q.result_type, want);
}

/// The higher-order all/contains query normalizes to a flat, single
/// comprehension whose guard nests emptiness tests (two levels deep).
#[test]
fn higher_order_predicates_normalize_to_emptiness_guards() {
    let schema = org_schema();
    let q = prepare(&corpus("q2.nrc"), &schema).unwrap();
    assert_eq!(nesting_degree(&q.result_type).unwrap(), 1);
    assert_eq!(q.normal_form.comprehensions.len(), 1);
    fn count_isempty(b: &BaseTerm) -> usize {
        match b {
            BaseTerm::Project(_, _) => 0,
            BaseTerm::PrimApp(_, args) => args.iter().map(count_isempty).sum(),
            BaseTerm::IsEmpty(q) => {
                let mut inner = 0;
                q.visit_comprehensions(&mut |_| {});
                for c in &q.comprehensions {
                    inner += count_isempty(&c.guard);
                }
                1 + inner
            }
        }
    }
    let guard = &q.normal_form.comprehensions[0].guard;
    assert!(count_isempty(guard) >= 2, "expected nested emptiness tests");
}

#[test]
fn non_boolean_conditional_test_is_rejected() {
    let schema = org_schema();
    let parsed = shredql::frontend::parse_query("if 3 then [] else []").unwrap();
    let err = shredql::frontend::typecheck_query(&parsed.main, &schema).unwrap_err();
    assert!(matches!(err, Error::TypeError { .. }), "{err:?}");
}

// ---------------------------------------------------------------------------
// Evaluation examples
// ---------------------------------------------------------------------------

#[test]
fn canonical_indexes_of_the_running_example_count_departments() {
    let schema = org_schema();
    let db = sample_db();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    let ixs = canonical_indexes(&q.normal_form, &db).unwrap();
    // One index with the outer comprehension's tag per department.
    let outer_tag = q.normal_form.comprehensions[0].tag.unwrap();
    let count = ixs.iter().filter(|ix| ix.tag == outer_tag).count();
    assert_eq!(count, 4);
}

#[test]
fn running_example_is_well_indexed_under_every_scheme() {
    let schema = org_schema();
    let db = sample_db();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    for scheme in [
        IndexScheme::Canonical,
        IndexScheme::Natural,
        IndexScheme::Flat,
    ] {
        let ix = shredql::evaluator::index_fn_for(scheme, &q.normal_form, &db, &schema).unwrap();
        let annotated = eval_annotated(&q.normal_form, &db, &ix).unwrap();
        for path in paths_of(&q.result_type).unwrap() {
            let ixs = indexes_along_path(&path, &annotated).unwrap();
            let distinct: std::collections::HashSet<_> = ixs.iter().collect();
            assert_eq!(distinct.len(), ixs.len(), "{scheme:?} at {path}");
        }
    }
}

#[test]
fn shredded_evaluation_on_the_empty_database_is_empty() {
    let schema = org_schema();
    let db = empty_db();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    let ix = flat_index_fn(&q.normal_form, &db).unwrap();
    for shredded in q.package.annotations() {
        assert!(eval_shredded(shredded, &db, &ix).unwrap().rows.is_empty());
    }
    let annotated = eval_annotated(&q.normal_form, &db, &IndexFn::canonical()).unwrap();
    assert_eq!(annotated, Value::Bag(Vec::new()));
}

// ---------------------------------------------------------------------------
// Let-insertion examples
// ---------------------------------------------------------------------------

#[test]
fn single_clause_comprehension_elides_its_binding() {
    // The outer query of the running example: one clause, so no binding and
    // a literal top index.
    let schema = org_schema();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    let q1 = &q.package.annotations()[0];
    let inserted = let_insert(q1, &schema).unwrap();
    assert_eq!(inserted.comprehensions.len(), 1);
    let comp = &inserted.comprehensions[0];
    assert!(comp.binding.is_none());
    assert_eq!(comp.body.generators.len(), 1);
    assert!(matches!(comp.body.generators[0].1, LetSource::Table(_)));
    // Outer index is the literal pair <0, 1>.
    match &comp.body.head {
        LetInner::Record(fields) => match &fields[0].1 {
            LetInner::Record(pair) => {
                assert!(matches!(
                    pair[0].1,
                    LetInner::Base(LetBase::Prim(Prim::Lit(Literal::Int(0)), _))
                ));
                assert!(matches!(
                    pair[1].1,
                    LetInner::Base(LetBase::Prim(Prim::Lit(Literal::Int(1)), _))
                ));
            }
            other => panic!("expected index pair, got {other:?}"),
        },
        other => panic!("expected pair head, got {other:?}"),
    }
}

#[test]
fn two_level_comprehension_binds_its_prefix() {
    let schema = org_schema();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    let q2 = &q.package.annotations()[1];
    let inserted = let_insert(q2, &schema).unwrap();
    assert_eq!(inserted.comprehensions.len(), 2);
    for comp in &inserted.comprehensions {
        let binding = comp
            .binding
            .as_ref()
            .expect("two-clause comprehension binds");
        // The binding enumerates departments and returns the expanded row
        // plus the row number.
        assert_eq!(binding.generators.len(), 1);
        assert!(binding.guard.is_truth());
        // The body joins z back in first.
        assert_eq!(comp.body.generators[0].0, "z");
        assert!(matches!(comp.body.generators[0].1, LetSource::LetVar(_)));
        // The guard references the carried department name through z.
        fn mentions_z(b: &LetBase) -> bool {
            match b {
                LetBase::Proj(x, _) => x == "z",
                LetBase::Prim(_, args) => args.iter().any(mentions_z),
                LetBase::IsEmpty(_) => false,
            }
        }
        assert!(mentions_z(&comp.body.guard));
    }
}

#[test]
fn let_insertion_rejects_the_reserved_variable() {
    let schema = org_schema();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    // The innermost query binds z over tasks in its first branch.
    let q3 = &q.package.annotations()[2];
    let err = let_insert(q3, &schema).unwrap_err();
    assert!(matches!(err, Error::NameClashZ));
    // The avoidance pass renames it and insertion succeeds.
    let inserted = let_insert(&avoid_z(q3), &schema).unwrap();
    assert_eq!(inserted.comprehensions.len(), 2);
}

#[test]
fn letinserted_false_guard_yields_no_rows() {
    let schema = org_schema();
    let db = sample_db();
    let q = prepare(
        "for (d <- departments) where (d.name = \"NoSuch\") return {n = d.name}",
        &schema,
    )
    .unwrap();
    let shredded = &q.package.annotations()[0];
    let inserted = let_insert(&avoid_z(shredded), &schema).unwrap();
    assert!(eval_letinserted(&inserted, &db).unwrap().is_empty());
}

// ---------------------------------------------------------------------------
// Index-function validity
// ---------------------------------------------------------------------------

/// A deliberately non-injective indexing function is caught by the
/// equivalence harness: the stitched result disagrees with the reference
/// semantics.
#[test]
fn corrupted_index_function_is_detected() {
    let schema = org_schema();
    let db = sample_db();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    let expected = shredql::evaluator::eval_normal_form(&q.normal_form, &db, &mut Env::new())
        .unwrap()
        .erased();

    // Start from the valid flat mapping, then collapse all people-level
    // dynamic indexes to 1.
    let canonical = canonical_indexes(&q.normal_form, &db).unwrap();
    let valid = flat_index_fn(&q.normal_form, &db).unwrap();
    let people_tag = StaticTag(2);
    let mut corrupt = std::collections::HashMap::new();
    corrupt.insert(Index::top_canonical(), Index::flat(StaticTag::TOP, 1));
    for ix in canonical {
        let image = valid.apply(&ix).unwrap();
        let image = if image.tag == people_tag {
            Index::flat(people_tag, 1)
        } else {
            image
        };
        corrupt.insert(ix, image);
    }
    let corrupted = IndexFn::custom(IndexScheme::Flat, corrupt);
    let report = run_memory_with(&q, &db, &schema, IndexScheme::Flat, Some(corrupted)).unwrap();
    assert!(
        !multiset_equal(&expected, &report.value.erased()).unwrap(),
        "harness failed to notice the invalid indexing function"
    );
}

/// An injective relabeling of the flat indexes changes nothing: stitching
/// never looks inside an index.
#[test]
fn stitching_is_representation_independent() {
    let schema = org_schema();
    let db = sample_db();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    let expected = shredql::evaluator::eval_normal_form(&q.normal_form, &db, &mut Env::new())
        .unwrap()
        .erased();
    let canonical = canonical_indexes(&q.normal_form, &db).unwrap();
    let valid = flat_index_fn(&q.normal_form, &db).unwrap();
    let mut scrambled = std::collections::HashMap::new();
    let remap = |ix: Index| match ix.dynamic {
        DynamicIndex::Flat(n) => Index::flat(ix.tag, 1000 + 7 * n),
        _ => ix,
    };
    scrambled.insert(
        Index::top_canonical(),
        remap(Index::flat(StaticTag::TOP, 1)),
    );
    for ix in canonical {
        scrambled.insert(ix.clone(), remap(valid.apply(&ix).unwrap()));
    }
    let ixfn = IndexFn::custom(IndexScheme::Flat, scrambled);
    let report = run_memory_with(&q, &db, &schema, IndexScheme::Flat, Some(ixfn)).unwrap();
    assert!(multiset_equal(&expected, &report.value.erased()).unwrap());
}

// ---------------------------------------------------------------------------
// Shredding stays linear
// ---------------------------------------------------------------------------

fn shredded_size(q: &ShreddedQuery) -> usize {
    fn inner(n: &ShredInner) -> usize {
        match n {
            ShredInner::Base(b) => base(b),
            ShredInner::Record(fs) => 1 + fs.iter().map(|(_, v)| inner(v)).sum::<usize>(),
            ShredInner::Index(_) => 1,
        }
    }
    fn base(b: &ShredBase) -> usize {
        match b {
            ShredBase::Project(_, _) => 1,
            ShredBase::PrimApp(_, args) => 1 + args.iter().map(base).sum::<usize>(),
            ShredBase::IsEmpty(q) => 1 + shredded_size(q),
        }
    }
    q.comprehensions
        .iter()
        .map(|c| {
            1 + c.clauses.len()
                + c.clauses.iter().map(|cl| base(&cl.guard)).sum::<usize>()
                + inner(&c.inner)
        })
        .sum()
}

fn normal_form_size(q: &QueryTerm) -> usize {
    fn norm(n: &NormTerm) -> usize {
        match n {
            NormTerm::Base(b) => base(b),
            NormTerm::Record(fs) => 1 + fs.iter().map(|(_, v)| norm(v)).sum::<usize>(),
            NormTerm::Query(q) => normal_form_size(q),
        }
    }
    fn base(b: &BaseTerm) -> usize {
        match b {
            BaseTerm::Project(_, _) => 1,
            BaseTerm::PrimApp(_, args) => 1 + args.iter().map(base).sum::<usize>(),
            BaseTerm::IsEmpty(q) => 1 + normal_form_size(q),
        }
    }
    q.comprehensions
        .iter()
        .map(|c| 1 + c.generators.len() + base(&c.guard) + norm(&c.body))
        .sum()
}

/// Each per-path shredding is linear in the input: total output over all
/// paths stays within a small constant of |input| * |paths|.
#[test]
fn shredding_output_is_linear_per_path() {
    let schema = org_schema();
    // A deep and a wide normal form, generated rather than handwritten.
    let mut gen = Gen::new(97);
    for _ in 0..50 {
        let (term, ty) = gen.query(&schema);
        let nf = shredql::normalizer::annotate(
            &shredql::normalizer::normalize(&term, &ty, &schema).unwrap(),
        );
        let input = normal_form_size(&nf);
        let paths = paths_of(&ty).unwrap();
        let mut total = 0;
        for p in &paths {
            total += shredded_size(&shred_term(&nf, p).unwrap());
        }
        let budget = 4 * input * paths.len().max(1) + 8 * paths.len() + 8;
        assert!(
            total <= budget,
            "shredded size {total} exceeds linear budget {budget} (input {input}, {} paths)",
            paths.len()
        );
    }
}

// ---------------------------------------------------------------------------
// Let-inserted flattening round trip and emitted ordering
// ---------------------------------------------------------------------------

/// Evaluating the flattened query and unflattening the rows gives back
/// exactly what the unflattened query evaluates to, for the whole corpus.
#[test]
fn flatten_then_unflatten_commutes_with_evaluation() {
    let schema = org_schema();
    let db = sample_db();
    for name in common::CORPUS_QUERIES {
        let q = prepare(&corpus(&format!("{name}.nrc")), &schema).unwrap();
        for shredded in q.package.annotations() {
            let inserted = let_insert(&avoid_z(shredded), &schema).unwrap();
            let direct = eval_letinserted(&inserted, &db).unwrap();
            let flattened = shredql::backend::flatten_query(&inserted);
            let flat_rows = eval_letinserted(&flattened, &db).unwrap();
            // Flattened rows are single-level records of base values; read
            // them back against the translated row type.
            let sty = shredql::shredder::typecheck_shredded(shredded, &schema).unwrap();
            let row_ty = shredql::backend::l_row_type(&sty.payload);
            let columns: Vec<Vec<(String, Literal)>> = flat_rows
                .iter()
                .map(|v| match v {
                    Value::Record(fields) => fields
                        .iter()
                        .map(|(l, v)| match v {
                            Value::Const(lit) => (l.clone(), lit.clone()),
                            other => panic!("{name}: non-constant column {other:?}"),
                        })
                        .collect(),
                    other => panic!("{name}: non-record flattened row {other:?}"),
                })
                .collect();
            let rebuilt = shredql::backend::unflatten_values(&columns, &row_ty).unwrap();
            assert_eq!(rebuilt, direct, "{name}");
        }
    }
}

/// Every emitted row-numbering orders by at least every column of every
/// table generator in its subquery (the determinism guarantee), checked
/// textually across the whole corpus.
#[test]
fn emitted_row_numbering_orders_by_all_generator_columns() {
    let schema = org_schema();
    for name in common::CORPUS_QUERIES {
        let q = prepare(&corpus(&format!("{name}.nrc")), &schema).unwrap();
        let compiled = shredql::pipeline::compile_prepared(
            &q,
            &schema,
            &shredql::backend::EmitOptions::default(),
        )
        .unwrap();
        for cq in &compiled.queries {
            for select in cq.sql.split("SELECT").skip(1) {
                // Table aliases referenced by this SELECT's FROM clause.
                let Some(from) = select.split("\nFROM ").nth(1) else {
                    continue;
                };
                let from_line = from.lines().next().unwrap_or("");
                let mut aliases = Vec::new();
                for item in from_line.split(", ") {
                    let mut parts = item.split(" AS ");
                    let (Some(table), Some(alias)) = (parts.next(), parts.next()) else {
                        continue;
                    };
                    let table = table.trim().trim_matches('"');
                    let alias = alias
                        .trim()
                        .trim_end_matches(';')
                        .trim_matches(|c| c == '"' || c == ')');
                    if let Some(ts) = schema.tables.get(table) {
                        aliases.push((alias.to_string(), ts));
                    }
                }
                let Some(order) = select.split("OVER (ORDER BY ").nth(1) else {
                    continue;
                };
                let order = order.split(')').next().unwrap_or("");
                for (alias, ts) in &aliases {
                    for (col, _) in &ts.columns {
                        let needle = format!("\"{alias}\".\"{col}\"");
                        assert!(
                            order.contains(&needle),
                            "{name}: ordering misses {needle} in\n{}",
                            cq.sql
                        );
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation laws
// ---------------------------------------------------------------------------

/// Union evaluates to concatenation, on random subterms.
#[test]
fn union_evaluates_to_concatenation() {
    let schema = org_schema();
    let db = sample_db();
    let mut gen = Gen::new(41);
    for _ in 0..200 {
        let (a, _) = gen.query(&schema);
        let (b, _) = gen.query(&schema);
        let union = Term::Union(Box::new(a.clone()), Box::new(b.clone()));
        let env = &mut Env::new();
        let whole = eval_nested(&union, &db, env).unwrap();
        let left = eval_nested(&a, &db, env).unwrap();
        let right = eval_nested(&b, &db, env).unwrap();
        let (Value::Bag(w), Value::Bag(l), Value::Bag(r)) = (whole, left, right) else {
            panic!("bags expected");
        };
        let concat: Vec<_> = l.into_iter().chain(r).collect();
        assert_eq!(w, concat);
    }
}

#[test]
fn index_functions_on_the_empty_database_map_only_the_root() {
    let schema = org_schema();
    let db = empty_db();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    assert!(canonical_indexes(&q.normal_form, &db).unwrap().is_empty());
    let flat = flat_index_fn(&q.normal_form, &db).unwrap();
    assert_eq!(flat.root().unwrap(), Index::flat(StaticTag::TOP, 1));
    let natural = shredql::evaluator::natural_index_fn(&q.normal_form, &db, &schema).unwrap();
    assert_eq!(
        natural.root().unwrap().dynamic,
        DynamicIndex::Natural(Vec::new())
    );
}

// ---------------------------------------------------------------------------
// Bag semantics under duplicate rows, and emptiness tests in payloads
// ---------------------------------------------------------------------------

/// Duplicate rows in keyless tables survive with their multiplicities
/// through the whole pipeline: every occurrence of a row yields its own
/// indexed element.
#[test]
fn duplicate_rows_keep_their_multiplicity() {
    let schema = shredql::frontend::parse_schema(
        r#"{ "tables": {
            "r": { "columns": [["a", "Int"]] },
            "s": { "columns": [["a", "Int"], ["b", "Int"]] }
        } }"#,
    )
    .unwrap();
    let db = shredql::frontend::parse_data(
        r#"{ "r": [ {"a": 1}, {"a": 1}, {"a": 2} ],
             "s": [ {"a": 1, "b": 10}, {"a": 1, "b": 10}, {"a": 2, "b": 20} ] }"#,
        &schema,
    )
    .unwrap();
    // Nested query joining the duplicated rows: each copy of r gets the
    // full bag of matching s copies.
    let q = prepare(
        "for (x <- r) return {a = x.a, bs = for (y <- s) where (y.a = x.a) return y.b}",
        &schema,
    )
    .unwrap();
    let expected = Value::bag([
        Value::record(vec![
            ("a".to_string(), Value::int(1)),
            ("bs".to_string(), Value::bag([Value::int(10), Value::int(10)])),
        ]),
        Value::record(vec![
            ("a".to_string(), Value::int(1)),
            ("bs".to_string(), Value::bag([Value::int(10), Value::int(10)])),
        ]),
        Value::record(vec![
            ("a".to_string(), Value::int(2)),
            ("bs".to_string(), Value::bag([Value::int(20)])),
        ]),
    ]);
    let direct = eval_nested(&q.term, &db, &mut Env::new()).unwrap();
    assert!(multiset_equal(&direct.erased(), &expected).unwrap());
    for scheme in [IndexScheme::Canonical, IndexScheme::Flat] {
        let report = shredql::pipeline::run_memory(&q, &db, &schema, scheme).unwrap();
        assert!(
            multiset_equal(&report.value.erased(), &expected).unwrap(),
            "{scheme:?}"
        );
    }
    // The natural scheme needs keys, and these tables cannot declare any.
    let err = shredql::evaluator::natural_index_fn(&q.normal_form, &db, &schema).unwrap_err();
    assert!(matches!(err, Error::NoKeyDeclared(_)));

    // A union of the same comprehension with itself doubles multiplicities
    // rather than merging inner bags.
    let doubled = prepare(
        "(for (x <- r) return {a = x.a, bs = for (y <- s) where (y.a = x.a) return y.b})\n\
         ++ (for (x <- r) return {a = x.a, bs = for (y <- s) where (y.a = x.a) return y.b})",
        &schema,
    )
    .unwrap();
    let report =
        shredql::pipeline::run_memory(&doubled, &db, &schema, IndexScheme::Flat).unwrap();
    let Value::Bag(items) = report.value.erased() else { panic!("bag expected") };
    assert_eq!(items.len(), 6);
    let ones_with_two_bs = items
        .iter()
        .filter(|(v, _)| {
            v.field("a") == Some(&Value::int(1))
                && matches!(v.field("bs"), Some(Value::Bag(bs)) if bs.len() == 2)
        })
        .count();
    assert_eq!(ones_with_two_bs, 4, "inner bags merged across the union");
}

/// Emptiness tests may sit in the returned payload, not just in guards.
#[test]
fn emptiness_test_in_payload_position() {
    let schema = org_schema();
    let db = sample_db();
    let q = prepare(
        "for (d <- departments)\n\
         return {dept = d.name,\n\
                 idle = empty(for (e <- employees) where (e.dept = d.name) return e.name)}",
        &schema,
    )
    .unwrap();
    let expected = Value::bag([
        Value::record(vec![
            ("dept".to_string(), Value::str("Product")),
            ("idle".to_string(), Value::bool(false)),
        ]),
        Value::record(vec![
            ("dept".to_string(), Value::str("Quality")),
            ("idle".to_string(), Value::bool(true)),
        ]),
        Value::record(vec![
            ("dept".to_string(), Value::str("Research")),
            ("idle".to_string(), Value::bool(false)),
        ]),
        Value::record(vec![
            ("dept".to_string(), Value::str("Sales")),
            ("idle".to_string(), Value::bool(false)),
        ]),
    ]);
    for scheme in [IndexScheme::Canonical, IndexScheme::Natural, IndexScheme::Flat] {
        let report = shredql::pipeline::run_memory(&q, &db, &schema, scheme).unwrap();
        assert!(
            multiset_equal(&report.value.erased(), &expected).unwrap(),
            "{scheme:?}"
        );
    }
    // The emitted SQL carries the test as NOT EXISTS in the select list.
    let compiled =
        shredql::pipeline::compile_prepared(&q, &schema, &EmitOptions::default()).unwrap();
    assert!(compiled.queries[0].sql.contains("NOT EXISTS"), "{}", compiled.queries[0].sql);
    // And the let-inserted evaluator agrees with the flat shredded run.
    let ix = flat_index_fn(&q.normal_form, &db).unwrap();
    let shredded = &q.package.annotations()[0];
    let flat_rows = eval_shredded(shredded, &db, &ix).unwrap();
    let inserted = let_insert(&avoid_z(shredded), &schema).unwrap();
    let values = eval_letinserted(&inserted, &db).unwrap();
    let sty = shredql::shredder::typecheck_shredded(shredded, &schema).unwrap();
    let rows: Vec<_> = values
        .iter()
        .map(|v| shredql::backend::pair_value_to_row(v, &sty.payload).unwrap())
        .map(|r| (r.outer, r.payload))
        .collect();
    assert_eq!(flat_rows.pairs(), rows);
}

// ---------------------------------------------------------------------------
// Rewrite traces
// ---------------------------------------------------------------------------

#[test]
fn normalization_of_the_composed_query_records_a_trace() {
    let schema = org_schema();
    let (term, ty) = shredql::frontend::load_query(&corpus("q6.nrc"), &schema).unwrap();
    let (_, trace) = normalize_traced(&term, &ty, &schema).unwrap();
    assert!(!trace.steps.is_empty());
    let rendered = trace.render();
    assert!(rendered.contains("[c]"), "{rendered}");
}
