//! A compiler from higher-order nested relational calculus over bags to a
//! fixed number of flat SQL:1999 queries, with executable reference
//! semantics for checking every translation at small scale.
//!
//! The pipeline: parse and typecheck a query over a flat schema; normalize
//! it to a union of comprehensions; tag each comprehension body; shred the
//! query into one flat query per bag constructor of its result type, linked
//! by indexes; evaluate the pieces (in memory under one of three indexing
//! schemes, or on a database by way of let-insertion, record flattening and
//! SQL emission); and stitch the flat results back into the nested value
//! the original query denotes.

pub mod ast;
pub mod backend;
pub mod datagen;
pub mod error;
pub mod evaluator;
pub mod frontend;
pub mod normalizer;
pub mod pipeline;
pub mod pretty;
pub mod shredder;
pub mod stitcher;

pub use ast::{
    multiset_equal, nesting_degree, paths_of, BaseType, DatabaseInstance, Index, Literal,
    NestedType, NormalForm, Path, Schema, ShreddedQuery, ShreddedResult, StaticTag, Term, Value,
};
pub use error::{Error, Result};
