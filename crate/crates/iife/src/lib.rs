//! Automated feature engineering for tabular data.
//!
//! The engine ranks feature pairs by interaction information (a
//! three-variable synergy measure estimated with mixed-data nearest-neighbor
//! estimators), combines the best-synergizing pairs with bivariate and
//! univariate operators, and keeps a candidate only when it improves a
//! cross-validated downstream linear model. Engineered features feed back
//! into the pool, so complex features grow out of simple ones.
//!
//! Modules:
//! - [`tabular`]: CSV ingestion, column kinds, splits, folds, scaling/encoding
//! - [`infotheory`]: entropy / MI / CMI / interaction-information estimators
//! - [`featurelang`]: the engineered-feature expression language
//! - [`downstream`]: Lasso and logistic regression, metrics, cross-validation
//! - [`engine`]: the greedy loop, stop condition, and expand-reduce baseline
//! - [`cli`]: command-line entry points and report formats

pub mod cli;
pub mod downstream;
pub mod engine;
pub mod error;
pub mod featurelang;
pub mod infotheory;
pub mod tabular;

pub use error::{Error, Result};

/// Mixes a base seed with a stream tag so independent random components
/// (fold shuffles, subsampling per pair, per-iteration row draws) never
/// share an RNG stream. splitmix64 finalizer.
pub(crate) fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
