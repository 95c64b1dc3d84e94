//! End-to-end pipeline composition and the equivalence-checking harness.
//!
//! The memory engine runs parse, typecheck, normalize, annotate, shred,
//! evaluate and stitch entirely in-process. The database engine compiles to
//! SQL, executes through a [`DbDriver`], unflattens the returned rows and
//! stitches the same way. The core carries no database dependency; concrete
//! drivers live behind the CLI.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use crate::ast::*;
use crate::backend::{self, CompiledPackage, EmitOptions};
use crate::datagen::{generate_org_data, org_schema, OrgDataConfig};
use crate::error::{Error, Result};
use crate::evaluator::{eval_normal_form, eval_shredded, index_fn_for, Env, IndexFn, IndexScheme};
use crate::frontend;
use crate::normalizer;
use crate::shredder;
use crate::stitcher::stitch;

/// Minimal surface a database backend must offer: execute one statement and
/// return rows as column-name/value pairs matching the emitted aliases.
pub trait DbDriver {
    fn execute(&mut self, sql: &str) -> Result<Vec<Vec<(String, Literal)>>>;
    fn ping(&mut self) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Memory,
    Postgres,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Engine> {
        match s {
            "memory" => Ok(Engine::Memory),
            "postgres" => Ok(Engine::Postgres),
            other => Err(Error::ConfigError(format!("unknown engine {other}"))),
        }
    }
}

/// A query taken through the front half of the pipeline, ready to run
/// against any database instance.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub term: Term,
    pub result_type: NestedType,
    /// Annotated normal form.
    pub normal_form: NormalForm,
    pub package: Package<ShreddedQuery>,
}

/// Parse, elaborate, typecheck, normalize, annotate and shred.
pub fn prepare(query_text: &str, schema: &Schema) -> Result<PreparedQuery> {
    let (term, result_type) = frontend::load_query(query_text, schema)?;
    let nf = normalizer::normalize(&term, &result_type, schema)?;
    normalizer::validate_normal_form(&nf, schema)?;
    let normal_form = normalizer::annotate(&nf);
    let package = shredder::shred_package(&normal_form, &result_type)?;
    Ok(PreparedQuery {
        term,
        result_type,
        normal_form,
        package,
    })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub value: Value,
    pub shredded_query_count: usize,
    pub timings: Vec<(&'static str, Duration)>,
}

/// Full in-memory run under the chosen indexing scheme.
pub fn run_memory(
    q: &PreparedQuery,
    db: &DatabaseInstance,
    schema: &Schema,
    scheme: IndexScheme,
) -> Result<RunReport> {
    run_memory_with(q, db, schema, scheme, None)
}

/// As [`run_memory`], but with a caller-supplied indexing function; the
/// equivalence harness uses this to demonstrate that invalid functions are
/// caught.
pub fn run_memory_with(
    q: &PreparedQuery,
    db: &DatabaseInstance,
    schema: &Schema,
    scheme: IndexScheme,
    override_ix: Option<IndexFn>,
) -> Result<RunReport> {
    let mut timings = Vec::new();
    let t0 = Instant::now();
    let ix = match override_ix {
        Some(ix) => ix,
        None => index_fn_for(scheme, &q.normal_form, db, schema)?,
    };
    timings.push(("index", t0.elapsed()));

    let t1 = Instant::now();
    let results = q
        .package
        .try_pmap(&mut |sq: &ShreddedQuery| eval_shredded(sq, db, &ix))?;
    timings.push(("evaluate", t1.elapsed()));

    let t2 = Instant::now();
    let root = ix.root()?;
    let (value, _) = stitch(&results, &root)?;
    timings.push(("stitch", t2.elapsed()));

    Ok(RunReport {
        value,
        shredded_query_count: q.package.annotations().len(),
        timings,
    })
}

/// Compiles to SQL and runs through a database driver. The database must
/// already hold the source tables.
pub fn run_with_driver(
    q: &PreparedQuery,
    schema: &Schema,
    driver: &mut dyn DbDriver,
    opts: &EmitOptions,
) -> Result<RunReport> {
    let mut timings = Vec::new();
    let t0 = Instant::now();
    let compiled = backend::compile(&q.normal_form, &q.result_type, schema, opts)?;
    timings.push(("compile", t0.elapsed()));

    let t1 = Instant::now();
    let mut by_path: HashMap<Path, ShreddedResult> = HashMap::new();
    for cq in &compiled.queries {
        let rows = driver.execute(&cq.sql)?;
        by_path.insert(
            cq.path.clone(),
            backend::rows_to_result(&rows, &cq.payload_type)?,
        );
    }
    timings.push(("execute", t1.elapsed()));

    let t2 = Instant::now();
    let results = package_of(&q.result_type, &mut |p| {
        by_path
            .get(p)
            .cloned()
            .ok_or_else(|| Error::InvalidPath(format!("no compiled query at {p}")))
    })?;
    let root = Index::flat(StaticTag::TOP, 1);
    let (value, _) = stitch(&results, &root)?;
    timings.push(("stitch", t2.elapsed()));

    Ok(RunReport {
        value,
        shredded_query_count: compiled.queries.len(),
        timings,
    })
}

/// SQL DDL plus INSERTs to load a generated instance; used by the driver
/// path to set up scratch databases.
pub fn load_statements(schema: &Schema, db: &DatabaseInstance) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (name, ts) in &schema.tables {
        out.push(format!("DROP TABLE IF EXISTS \"{name}\";"));
        let cols: Vec<String> = ts
            .columns
            .iter()
            .map(|(l, b)| {
                let sql_ty = match b {
                    BaseType::Int => "BIGINT",
                    BaseType::Bool => "BOOLEAN",
                    BaseType::String => "TEXT",
                    BaseType::Unit => "TEXT",
                };
                format!("\"{l}\" {sql_ty}")
            })
            .collect();
        out.push(format!("CREATE TABLE \"{name}\" ({});", cols.join(", ")));
        for row in db.rows(name)? {
            let labels: Vec<String> = row.iter().map(|(l, _)| format!("\"{l}\"")).collect();
            let values: Vec<String> = row
                .iter()
                .map(|(_, v)| match v {
                    Literal::Int(n) => n.to_string(),
                    Literal::Bool(true) => "TRUE".to_string(),
                    Literal::Bool(false) => "FALSE".to_string(),
                    Literal::Str(s) => format!("'{}'", s.replace('\'', "''")),
                    Literal::Unit => "NULL".to_string(),
                })
                .collect();
            out.push(format!(
                "INSERT INTO \"{name}\" ({}) VALUES ({});",
                labels.join(", "),
                values.join(", ")
            ));
        }
    }
    Ok(out)
}

/// Convenience wrapper around [`backend::compile`].
pub fn compile_prepared(
    q: &PreparedQuery,
    schema: &Schema,
    opts: &EmitOptions,
) -> Result<CompiledPackage> {
    backend::compile(&q.normal_form, &q.result_type, schema, opts)
}

// ---------------------------------------------------------------------------
// Equivalence checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct EquivalenceReport {
    pub trials: u64,
    pub checks: u64,
    pub passes: u64,
    pub failures: Vec<(u64, String, &'static str)>,
}

impl EquivalenceReport {
    pub fn min_failing_seed(&self) -> Option<u64> {
        self.failures.iter().map(|(seed, _, _)| *seed).min()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "trials: {}, checks: {}, passes: {}, failures: {}\n",
            self.trials,
            self.checks,
            self.passes,
            self.failures.len()
        );
        if let Some(seed) = self.min_failing_seed() {
            out.push_str(&format!("minimal failing seed: {seed}\n"));
            for (seed, query, scheme) in &self.failures {
                out.push_str(&format!("  seed {seed}: {query} under {scheme}\n"));
            }
        }
        out
    }
}

/// For each trial seed: generate an organisation database, evaluate the
/// normalized query under the reference semantics, run the full shredded
/// pipeline under each scheme, and require multiset equality throughout.
pub fn check_equivalence(
    queries: &[(String, PreparedQuery)],
    trials: u64,
    schemes: &[IndexScheme],
) -> Result<EquivalenceReport> {
    let schema = org_schema();
    let mut report = EquivalenceReport {
        trials,
        ..Default::default()
    };
    for seed in 1..=trials {
        let departments = [4u64, 8, 16, 32][(seed % 4) as usize];
        let db = generate_org_data(&OrgDataConfig {
            departments,
            mean_employees: 10,
            seed,
        })?;
        for (name, prepared) in queries {
            let expected = eval_normal_form(&prepared.normal_form, &db, &mut Env::new())?;
            for scheme in schemes {
                report.checks += 1;
                let got = run_memory(prepared, &db, &schema, *scheme)?;
                if multiset_equal(&expected.erased(), &got.value.erased())? {
                    report.passes += 1;
                } else {
                    report.failures.push((seed, name.clone(), scheme.name()));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_gives_empty_passing_report() {
        let report = check_equivalence(&[], 0, &[IndexScheme::Flat]).unwrap();
        assert_eq!(report.checks, 0);
        assert!(report.failures.is_empty());
    }
}
