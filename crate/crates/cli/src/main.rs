//! Operator surface: normalize, shred, compile, run, check, gen-data.
//!
//! Exit codes: 0 ok, 1 usage or configuration, 2 parse/type errors,
//! 3 equivalence failure, 4 database errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[cfg(feature = "postgres")]
use shredql::ast::multiset_equal;
use shredql::ast::Schema;
use shredql::backend::EmitOptions;
use shredql::datagen::{generate_org_data, instance_to_json, org_schema, OrgDataConfig};
use shredql::error::Error;
use shredql::evaluator::IndexScheme;
use shredql::frontend::{parse_data, parse_schema};
use shredql::pipeline::{check_equivalence, prepare, run_memory, PreparedQuery};
use shredql::pretty;

#[cfg(feature = "postgres")]
mod pg;

#[derive(Parser)]
#[command(
    name = "shredql",
    version,
    about = "Compile nested bag queries to flat SQL and check the translations against reference semantics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Normalize a query and print its annotated normal form.
    Normalize {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Also dump the rewrite trace.
        #[arg(long)]
        trace: bool,
    },
    /// Print the shredded package: one flat query per bag constructor.
    Shred {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Emit SQL files plus package metadata for later stitching.
    Compile {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Output directory for <name>.N.sql and <name>.package.json.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Inline WITH bindings as derived tables.
        #[arg(long)]
        inline_with: bool,
        /// Row-number by declared keys only.
        #[arg(long)]
        key_rownum: bool,
    },
    /// Run the full pipeline and print the stitched nested value as JSON.
    Run {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// JSON data file (memory engine).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Database connection string (postgres engine).
        #[arg(long)]
        dsn: Option<String>,
        #[arg(long, default_value = "flat")]
        scheme: String,
        #[arg(long, default_value = "memory")]
        engine: String,
        /// Generate organisation data from this seed instead of --data.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 4)]
        departments: u64,
        #[arg(long)]
        inline_with: bool,
        #[arg(long)]
        key_rownum: bool,
    },
    /// Re-run a query across generated databases and all index schemes,
    /// comparing the stitched result against the reference semantics.
    Check {
        /// Query files over the organisation schema; repeatable.
        #[arg(long, required = true)]
        query: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trials: u64,
        /// canonical, natural, flat, or all.
        #[arg(long, default_value = "all")]
        scheme: String,
    },
    /// Generate a deterministic organisation database as JSON.
    GenData {
        #[arg(long, default_value_t = 4)]
        departments: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        mean_employees: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ConfigError(_) => 1,
        Error::EquivalenceFailure { .. } => 3,
        Error::DbError(_) => 4,
        _ => 2,
    }
}

fn read_file(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn load_schema(path: &Path) -> Result<Schema, Error> {
    parse_schema(&read_file(path)?)
}

fn load_prepared(query: &Path, schema: &Schema) -> Result<PreparedQuery, Error> {
    prepare(&read_file(query)?, schema)
}

fn parse_scheme(s: &str) -> Result<IndexScheme, Error> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.cmd {
        Cmd::Normalize {
            query,
            schema,
            trace,
        } => {
            let schema = load_schema(&schema)?;
            let (term, ty) = shredql::frontend::load_query(&read_file(&query)?, &schema)?;
            let (nf, rewrite_trace) = shredql::normalizer::normalize_traced(&term, &ty, &schema)?;
            let annotated = shredql::normalizer::annotate(&nf);
            println!("{}", pretty::pretty_normal_form(&annotated));
            if trace {
                eprint!("{}", rewrite_trace.render());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Shred { query, schema } => {
            let schema = load_schema(&schema)?;
            let q = load_prepared(&query, &schema)?;
            let paths = shredql::ast::paths_of(&q.result_type)?;
            println!("result type: {}", pretty::pretty_type(&q.result_type));
            println!("nesting degree: {}", paths.len());
            for (path, shredded) in paths.iter().zip(q.package.annotations()) {
                let ty = shredql::shredder::shred_type_outer(&q.result_type, path)?;
                println!("\n-- path {path} : {}", pretty::pretty_shredded_type(&ty));
                println!("{}", pretty::pretty_shredded(shredded));
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Compile {
            query,
            schema,
            out_dir,
            inline_with,
            key_rownum,
        } => {
            let schema_v = load_schema(&schema)?;
            let q = load_prepared(&query, &schema_v)?;
            let opts = EmitOptions {
                inline_with,
                key_row_numbering: key_rownum,
            };
            let compiled = shredql::pipeline::compile_prepared(&q, &schema_v, &opts)?;
            let stem = query
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("query")
                .to_string();
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
            for (i, cq) in compiled.queries.iter().enumerate() {
                let path = out_dir.join(format!("{stem}.{}.sql", i + 1));
                std::fs::write(&path, &cq.sql)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                println!("wrote {}", path.display());
            }
            let meta_path = out_dir.join(format!("{stem}.package.json"));
            let meta = serde_json::to_string_pretty(&compiled.metadata(&stem))
                .expect("metadata serializes");
            std::fs::write(&meta_path, meta)
                .map_err(|e| Error::Io(format!("{}: {e}", meta_path.display())))?;
            println!("wrote {}", meta_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run {
            query,
            schema,
            data,
            dsn,
            scheme,
            engine,
            seed,
            departments,
            inline_with,
            key_rownum,
        } => {
            let schema_v = load_schema(&schema)?;
            let q = load_prepared(&query, &schema_v)?;
            let engine: shredql::pipeline::Engine = engine.parse()?;
            let report = match engine {
                shredql::pipeline::Engine::Memory => {
                    let db = match (&data, seed) {
                        (Some(path), _) => parse_data(&read_file(path)?, &schema_v)?,
                        (None, Some(seed)) => generate_org_data(&OrgDataConfig {
                            departments,
                            mean_employees: 10,
                            seed,
                        })?,
                        (None, None) => {
                            return Err(Error::ConfigError(
                                "memory engine needs --data or --seed".to_string(),
                            ))
                        }
                    };
                    run_memory(&q, &db, &schema_v, parse_scheme(&scheme)?)?
                }
                shredql::pipeline::Engine::Postgres => {
                    let Some(dsn) = dsn else {
                        return Err(Error::ConfigError(
                            "postgres engine needs --dsn".to_string(),
                        ));
                    };
                    // SQL emission implements the flat scheme only.
                    if parse_scheme(&scheme)? != IndexScheme::Flat {
                        return Err(Error::ConfigError(format!(
                            "the postgres engine supports only --scheme flat, not {scheme}"
                        )));
                    }
                    run_postgres(
                        &q,
                        &schema_v,
                        &dsn,
                        data.as_deref(),
                        seed,
                        departments,
                        &EmitOptions {
                            inline_with,
                            key_row_numbering: key_rownum,
                        },
                    )?
                }
            };
            for (stage, d) in &report.timings {
                eprintln!("{stage}: {}us", d.as_micros());
            }
            eprintln!("shredded queries: {}", report.shredded_query_count);
            println!(
                "{}",
                serde_json::to_string_pretty(&pretty::value_to_json(&report.value))
                    .expect("value serializes")
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Check {
            query,
            trials,
            scheme,
        } => {
            let schema = org_schema();
            let schemes: Vec<IndexScheme> = match scheme.as_str() {
                "all" => vec![
                    IndexScheme::Canonical,
                    IndexScheme::Natural,
                    IndexScheme::Flat,
                ],
                other => vec![parse_scheme(other)?],
            };
            let mut prepared = Vec::new();
            for path in &query {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("query")
                    .to_string();
                prepared.push((name, load_prepared(path, &schema)?));
            }
            let report = check_equivalence(&prepared, trials, &schemes)?;
            print!("{}", report.render());
            if report.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
        Cmd::GenData {
            departments,
            seed,
            mean_employees,
            out,
        } => {
            let db = generate_org_data(&OrgDataConfig {
                departments,
                mean_employees,
                seed,
            })?;
            let json = serde_json::to_string_pretty(&instance_to_json(&db, &org_schema()))
                .expect("instance serializes");
            match out {
                Some(path) => std::fs::write(&path, json)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[cfg(feature = "postgres")]
fn run_postgres(
    q: &PreparedQuery,
    schema: &Schema,
    dsn: &str,
    data: Option<&Path>,
    seed: Option<u64>,
    departments: u64,
    opts: &EmitOptions,
) -> Result<shredql::pipeline::RunReport, Error> {
    let mut driver = pg::PgDriver::connect(dsn)?;
    // When data is supplied (or generated), load it first; otherwise run
    // against whatever the database already holds.
    let db = match (data, seed) {
        (Some(path), _) => Some(parse_data(&read_file(path)?, schema)?),
        (None, Some(seed)) => Some(generate_org_data(&OrgDataConfig {
            departments,
            mean_employees: 10,
            seed,
        })?),
        (None, None) => None,
    };
    if let Some(db) = &db {
        driver.load(schema, db)?;
        // Sanity check while we have both sides: memory and database paths
        // must agree on the stitched value.
        let memory = run_memory(q, db, schema, IndexScheme::Flat)?;
        let db_run = shredql::pipeline::run_with_driver(q, schema, &mut driver, opts)?;
        if !multiset_equal(&memory.value.erased(), &db_run.value.erased())? {
            return Err(Error::EquivalenceFailure {
                seed: seed.unwrap_or_default(),
                query: "run".to_string(),
                scheme: "flat/postgres".to_string(),
            });
        }
        return Ok(db_run);
    }
    shredql::pipeline::run_with_driver(q, schema, &mut driver, opts)
}

#[cfg(not(feature = "postgres"))]
fn run_postgres(
    _q: &PreparedQuery,
    _schema: &Schema,
    _dsn: &str,
    _data: Option<&Path>,
    _seed: Option<u64>,
    _departments: u64,
    _opts: &EmitOptions,
) -> Result<shredql::pipeline::RunReport, Error> {
    Err(Error::ConfigError(
        "this build has no postgres support; rebuild with --features postgres".to_string(),
    ))
}
