//! Schema and data files.
//!
//! Schemas are JSON objects of the form
//!
//! ```json
//! { "tables": { "employees": { "columns": [["dept", "String"], ["id", "Int"]],
//!                              "key": ["id"] } } }
//! ```
//!
//! and data files map table names to arrays of row objects.

use std::collections::BTreeMap;

use serde_json::Value as Json;

use crate::ast::{BaseType, DatabaseInstance, Literal, Schema, TableSchema};
use crate::error::{Error, Result};

pub fn parse_schema(text: &str) -> Result<Schema> {
    let json: Json =
        serde_json::from_str(text).map_err(|e| Error::SchemaError(format!("bad JSON: {e}")))?;
    let tables_json = json
        .get("tables")
        .and_then(Json::as_object)
        .ok_or_else(|| Error::SchemaError("top-level object must have a \"tables\" map".into()))?;
    let mut tables = BTreeMap::new();
    for (name, spec) in tables_json {
        let columns_json = spec
            .get("columns")
            .and_then(Json::as_array)
            .ok_or_else(|| Error::SchemaError(format!("table {name}: missing \"columns\"")))?;
        let mut columns = Vec::new();
        for col in columns_json {
            let pair = col.as_array().filter(|a| a.len() == 2).ok_or_else(|| {
                Error::SchemaError(format!(
                    "table {name}: column entries are [label, type] pairs"
                ))
            })?;
            let label = pair[0]
                .as_str()
                .ok_or_else(|| Error::SchemaError(format!("table {name}: non-string label")))?;
            if label.contains('#') || label.starts_with('_') {
                return Err(Error::SchemaError(format!(
                    "table {name}: label {label} uses a reserved character"
                )));
            }
            let ty = match pair[1].as_str() {
                Some("Int") => BaseType::Int,
                Some("Bool") => BaseType::Bool,
                Some("String") => BaseType::String,
                // Unit exists only for internal record flattening.
                Some(other) => {
                    return Err(Error::SchemaError(format!(
                        "table {name}.{label}: unknown base type {other}"
                    )))
                }
                None => {
                    return Err(Error::SchemaError(format!(
                        "table {name}.{label}: type must be a string"
                    )))
                }
            };
            if columns.iter().any(|(l, _): &(String, BaseType)| l == label) {
                return Err(Error::SchemaError(format!(
                    "table {name}: duplicate column {label}"
                )));
            }
            columns.push((label.to_string(), ty));
        }
        let key = match spec.get("key") {
            None | Some(Json::Null) => None,
            Some(Json::Array(ks)) => {
                let mut key = Vec::new();
                for k in ks {
                    let label = k.as_str().ok_or_else(|| {
                        Error::SchemaError(format!("table {name}: key entries must be strings"))
                    })?;
                    if !columns.iter().any(|(l, _)| l == label) {
                        return Err(Error::SchemaError(format!(
                            "table {name}: key column {label} is not declared"
                        )));
                    }
                    key.push(label.to_string());
                }
                if key.is_empty() {
                    return Err(Error::SchemaError(format!(
                        "table {name}: key must be nonempty"
                    )));
                }
                Some(key)
            }
            Some(_) => {
                return Err(Error::SchemaError(format!(
                    "table {name}: \"key\" must be an array of labels"
                )))
            }
        };
        tables.insert(name.clone(), TableSchema { columns, key });
    }
    Ok(Schema { tables })
}

pub fn parse_data(text: &str, schema: &Schema) -> Result<DatabaseInstance> {
    let json: Json =
        serde_json::from_str(text).map_err(|e| Error::SchemaError(format!("bad JSON: {e}")))?;
    let obj = json
        .as_object()
        .ok_or_else(|| Error::SchemaError("data file must be a table-to-rows object".into()))?;
    let mut tables = BTreeMap::new();
    for (name, rows_json) in obj {
        let ts = schema
            .tables
            .get(name)
            .ok_or_else(|| Error::SchemaError(format!("data for unknown table {name}")))?;
        let rows_json = rows_json
            .as_array()
            .ok_or_else(|| Error::SchemaError(format!("table {name}: rows must be an array")))?;
        let mut rows = Vec::new();
        for row_json in rows_json {
            let row_obj = row_json
                .as_object()
                .ok_or_else(|| Error::SchemaError(format!("table {name}: rows are objects")))?;
            let mut row = Vec::new();
            for (label, ty) in &ts.columns {
                let v = row_obj.get(label).ok_or_else(|| {
                    Error::SchemaError(format!("table {name}: row missing column {label}"))
                })?;
                let lit = json_literal(v, *ty)
                    .ok_or_else(|| Error::SchemaError(format!("{name}.{label}: expected {ty}")))?;
                row.push((label.clone(), lit));
            }
            if row_obj.len() != ts.columns.len() {
                return Err(Error::SchemaError(format!(
                    "table {name}: row has extra columns"
                )));
            }
            rows.push(row);
        }
        tables.insert(name.clone(), rows);
    }
    // Declared but absent tables are empty.
    for name in schema.tables.keys() {
        tables.entry(name.clone()).or_default();
    }
    DatabaseInstance::new(schema, tables)
}

fn json_literal(v: &Json, ty: BaseType) -> Option<Literal> {
    match (v, ty) {
        (Json::Number(n), BaseType::Int) => n.as_i64().map(Literal::Int),
        (Json::Bool(b), BaseType::Bool) => Some(Literal::Bool(*b)),
        (Json::String(s), BaseType::String) => Some(Literal::Str(s.clone())),
        _ => None,
    }
}
