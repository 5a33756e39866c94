//! Query performance prediction (QPP) and query-variant selection.
//!
//! The crate covers the whole offline loop: build a small inverted index,
//! retrieve ranked lists for every query variant of an information need,
//! score each variant with pre- and post-retrieval predictors, measure the
//! variants' true effectiveness (nDCG, recall, nugget utility), and then
//! evaluate predictors both by correlation and by the end-to-end quality of
//! the variant each predictor would pick.

pub mod data_io;
pub mod error;
pub mod eval;
pub mod index;
pub mod pipeline;
pub mod predictors;
pub mod qpp_post;
pub mod qpp_pre;
pub mod selection;
pub mod stats;
pub mod tokenize;

pub use error::{Error, Result};
pub use index::{Document, Index, IndexStats, Postings, RankedList, RetrievalModel};
pub use tokenize::{Tokenizer, TokenizerConfig};

/// Variant id reserved for the original (unreformulated) query.
pub const ORIGINAL_VARIANT: &str = "v00";
