//! Cohort retrieval over echocardiography-style reports.
//!
//! The crate covers the whole loop: a catalog-driven synthetic corpus with
//! known relevance, report parsing, the subcategory index and splits, LVEF
//! quantity matching, a BM25 baseline, a small dense bi-encoder trained with
//! a positive-masked ranking loss, and an evaluation harness.

pub mod bm25;
pub mod catalog;
pub mod cohort;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod optim;
pub mod parser;
pub mod pipeline;
pub mod pretrain;
pub mod quantity;
pub mod store;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
