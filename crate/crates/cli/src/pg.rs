//! PostgreSQL driver behind the `postgres` feature. The core stays free of
//! database dependencies; this adapter converts rows into the column
//! name/literal pairs the pipeline stitches from.

use postgres::types::Type;
use postgres::{Client, NoTls};

use shredql::ast::{DatabaseInstance, Literal, Schema};
use shredql::error::{Error, Result};
use shredql::pipeline::{load_statements, DbDriver};

pub struct PgDriver {
    client: Client,
}

impl PgDriver {
    pub fn connect(dsn: &str) -> Result<PgDriver> {
        let client = Client::connect(dsn, NoTls).map_err(|e| Error::DbError(e.to_string()))?;
        Ok(PgDriver { client })
    }

    /// Drops, recreates and fills the schema's tables.
    pub fn load(&mut self, schema: &Schema, db: &DatabaseInstance) -> Result<()> {
        for stmt in load_statements(schema, db)? {
            self.client
                .batch_execute(&stmt)
                .map_err(|e| Error::DbError(format!("{stmt}: {e}")))?;
        }
        Ok(())
    }
}

impl DbDriver for PgDriver {
    fn execute(&mut self, sql: &str) -> Result<Vec<Vec<(String, Literal)>>> {
        let rows = self
            .client
            .query(sql, &[])
            .map_err(|e| Error::DbError(format!("query failed: {e}\n{sql}")))?;
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let mut fields = Vec::with_capacity(row.len());
            for (i, col) in row.columns().iter().enumerate() {
                let lit = match *col.type_() {
                    Type::INT2 => Literal::Int(row.get::<_, i16>(i) as i64),
                    Type::INT4 => Literal::Int(row.get::<_, i32>(i) as i64),
                    Type::INT8 => Literal::Int(row.get::<_, i64>(i)),
                    Type::BOOL => Literal::Bool(row.get::<_, bool>(i)),
                    Type::TEXT | Type::VARCHAR | Type::BPCHAR => {
                        Literal::Str(row.get::<_, String>(i))
                    }
                    ref other => {
                        return Err(Error::DbError(format!(
                            "column {} has unsupported type {other}",
                            col.name()
                        )))
                    }
                };
                fields.push((col.name().to_string(), lit));
            }
            out.push(fields);
        }
        Ok(out)
    }

    fn ping(&mut self) -> Result<()> {
        self.client
            .batch_execute("SELECT 1;")
            .map_err(|e| Error::DbError(e.to_string()))
    }
}
