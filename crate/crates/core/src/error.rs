//! Error types shared across the compiler stages.

use std::fmt;

/// Position in a source file, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Parse failure with the position and what was expected there.
    SyntaxError {
        pos: Pos,
        expected: String,
        found: String,
    },
    /// Malformed schema or data file.
    SchemaError(String),
    /// Type error with location context.
    TypeError {
        context: String,
        expected: String,
        found: String,
    },
    /// The query result type contains a function type.
    NotFlatNested(String),
    /// A type operation was applied to a type containing function arrows.
    TypeHasFunctions,
    /// Comparison of values at different types.
    TypeMismatch(String),
    /// Path does not point at a bag constructor of the given type.
    InvalidPath(String),
    /// Shredding was asked to run on a normal form without tag annotations.
    UnannotatedInput,
    /// A rewrite stage exceeded its fuel budget; signals an implementation bug.
    InternalNonTermination(String),
    /// `split` was handed a term outside its input grammar.
    NotNormalInput(String),
    /// Evaluator met a free variable; signals a frontend bug.
    UnboundVariable(String),
    /// Evaluator met a table absent from the database instance.
    MissingTable(String),
    /// An indexing function was applied outside its domain.
    IndexUndefined(String),
    /// Natural indexing requires a declared key on every generated table.
    NoKeyDeclared(String),
    /// A declared key is not unique in the database instance.
    KeyNotUnique(String),
    /// Let-inserted query referenced an unbound subquery name.
    UnboundQueryName(String),
    /// Let-insertion input already uses the reserved variable `z`.
    NameClashZ,
    /// SQL emission was handed a query with nested records left in it.
    UnflattenedInput(String),
    /// Returned rows do not match the expected flattened column list.
    ColumnMismatch(String),
    /// Invalid pipeline configuration.
    ConfigError(String),
    /// A pipeline output disagreed with the reference semantics.
    EquivalenceFailure {
        seed: u64,
        query: String,
        scheme: String,
    },
    /// Database driver failure.
    DbError(String),
    /// Catch-all for I/O around query/schema/data files.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Error::*;
        match self {
            SyntaxError {
                pos,
                expected,
                found,
            } => {
                write!(
                    f,
                    "syntax error at {pos}: expected {expected}, found {found}"
                )
            }
            SchemaError(m) => write!(f, "schema error: {m}"),
            TypeError {
                context,
                expected,
                found,
            } => {
                write!(
                    f,
                    "type error at {context}: expected {expected}, found {found}"
                )
            }
            NotFlatNested(m) => write!(f, "query is not flat-nested: {m}"),
            TypeHasFunctions => write!(f, "type contains function arrows"),
            TypeMismatch(m) => write!(f, "type mismatch: {m}"),
            InvalidPath(m) => write!(f, "invalid path: {m}"),
            UnannotatedInput => write!(f, "normal form is missing tag annotations"),
            InternalNonTermination(m) => write!(f, "rewrite fuel exhausted: {m}"),
            NotNormalInput(m) => write!(f, "input outside normal-form grammar: {m}"),
            UnboundVariable(x) => write!(f, "unbound variable {x}"),
            MissingTable(t) => write!(f, "missing table {t}"),
            IndexUndefined(m) => write!(f, "indexing function undefined on {m}"),
            NoKeyDeclared(t) => write!(f, "table {t} declares no key"),
            KeyNotUnique(t) => write!(f, "duplicate key values in table {t}"),
            UnboundQueryName(q) => write!(f, "unbound subquery name {q}"),
            NameClashZ => write!(f, "input uses the reserved variable z"),
            UnflattenedInput(m) => write!(f, "nested records reached SQL emission: {m}"),
            ColumnMismatch(m) => write!(f, "column mismatch: {m}"),
            ConfigError(m) => write!(f, "configuration error: {m}"),
            EquivalenceFailure {
                seed,
                query,
                scheme,
            } => {
                write!(
                    f,
                    "equivalence failure: query {query}, scheme {scheme}, seed {seed}"
                )
            }
            DbError(m) => write!(f, "database error: {m}"),
            Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
