//! Schema-constrained natural-language querying over cleaned ERP data.

pub mod catalog;
pub mod cleaning;
pub mod fixtures;
pub mod guard;
pub mod nl2sql;
pub mod retrieval;
pub mod service;
pub mod store;
pub mod sync;
pub mod synth;
pub mod table;
pub mod text;
