//! Exercises the database round-trip plumbing without a database: a mock
//! driver answers each compiled statement by running the let-inserted
//! evaluator over the flattened query, yielding named-column rows the way
//! a real driver would. Everything downstream — unflattening, package
//! reassembly, stitching — is the production path.

mod common;

use std::collections::HashMap;

use common::{corpus, org_schema, sample_db, CORPUS_QUERIES};
use shredql::ast::*;
use shredql::backend::{avoid_z, flatten_query, let_insert, EmitOptions};
use shredql::evaluator::{eval_letinserted, eval_normal_form, Env};
use shredql::pipeline::{compile_prepared, prepare, run_with_driver, DbDriver};

/// Answers SQL statements from a prebuilt table of results.
struct MockDriver {
    by_sql: HashMap<String, Vec<Vec<(String, Literal)>>>,
}

impl MockDriver {
    /// Evaluates each compiled query's flattened form and lays the values
    /// out under the emitted column names, in column order.
    fn for_query(
        q: &shredql::pipeline::PreparedQuery,
        schema: &Schema,
        db: &DatabaseInstance,
    ) -> MockDriver {
        let compiled = compile_prepared(q, schema, &EmitOptions::default()).unwrap();
        let mut by_sql = HashMap::new();
        for (cq, shredded) in compiled.queries.iter().zip(q.package.annotations()) {
            let flattened = flatten_query(&let_insert(&avoid_z(shredded), schema).unwrap());
            let rows = eval_letinserted(&flattened, db)
                .unwrap()
                .into_iter()
                .map(|row| {
                    let fields = match row {
                        Value::Record(fields) => fields,
                        other => panic!("flattened row is not a record: {other:?}"),
                    };
                    // A driver returns columns under their emitted aliases;
                    // check the labels line up with the compiled layout.
                    assert_eq!(
                        fields.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>(),
                        cq.columns.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>(),
                        "column layout mismatch"
                    );
                    fields
                        .into_iter()
                        .map(|(l, v)| match v {
                            Value::Const(lit) => (l, lit),
                            other => panic!("non-scalar column {other:?}"),
                        })
                        .collect()
                })
                .collect();
            by_sql.insert(cq.sql.clone(), rows);
        }
        MockDriver { by_sql }
    }
}

impl DbDriver for MockDriver {
    fn execute(&mut self, sql: &str) -> shredql::Result<Vec<Vec<(String, Literal)>>> {
        self.by_sql
            .get(sql)
            .cloned()
            .ok_or_else(|| shredql::Error::DbError(format!("unexpected statement:\n{sql}")))
    }

    fn ping(&mut self) -> shredql::Result<()> {
        Ok(())
    }
}

#[test]
fn driver_path_agrees_with_reference_semantics_across_the_corpus() {
    let schema = org_schema();
    for seed in [0u64, 3, 11] {
        let db = if seed == 0 {
            sample_db()
        } else {
            shredql::datagen::generate_org_data(&shredql::datagen::OrgDataConfig {
                departments: 6,
                mean_employees: 8,
                seed,
            })
            .unwrap()
        };
        for name in CORPUS_QUERIES {
            let q = prepare(&corpus(&format!("{name}.nrc")), &schema).unwrap();
            let mut driver = MockDriver::for_query(&q, &schema, &db);
            let report =
                run_with_driver(&q, &schema, &mut driver, &EmitOptions::default()).unwrap();
            let expected = eval_normal_form(&q.normal_form, &db, &mut Env::new()).unwrap();
            assert!(
                multiset_equal(&expected.erased(), &report.value.erased()).unwrap(),
                "{name} at seed {seed}: driver path diverged"
            );
            assert_eq!(
                report.shredded_query_count,
                nesting_degree(&q.result_type).unwrap(),
                "{name}"
            );
        }
    }
}

#[test]
fn driver_path_handles_shuffled_row_order() {
    // Stitching must not depend on the order a database returns rows in.
    let schema = org_schema();
    let db = sample_db();
    let q = prepare(&corpus("q_comp.nrc"), &schema).unwrap();
    let mut driver = MockDriver::for_query(&q, &schema, &db);
    for rows in driver.by_sql.values_mut() {
        rows.reverse();
    }
    let report = run_with_driver(&q, &schema, &mut driver, &EmitOptions::default()).unwrap();
    let expected = eval_normal_form(&q.normal_form, &db, &mut Env::new()).unwrap();
    assert!(multiset_equal(&expected.erased(), &report.value.erased()).unwrap());
}
