//! Differentially private collaborative filtering with user-group fairness
//! re-ranking.
//!
//! The pipeline has two stages. Stage one trains a latent factor recommender
//! (matrix factorization or a small two-tower scorer) on implicit feedback
//! with DP-SGD, clipping and noising user, item, and extra parameter
//! gradients as separate groups. Stage two re-ranks each user's top-K
//! candidate list into a top-k list that maximizes total predicted score
//! subject to a bound on the F1 gap between active and inactive user groups,
//! solved exactly as a 0-1 integer program.
//!
//! Modules:
//! - [`data`]: ingestion, binarization, splits, negative sampling, user groups
//! - [`model`]: parameters, scorers, pairwise ranking loss and gradients
//! - [`privacy`]: clipping, Gaussian noise, RDP accounting and calibration
//! - [`train`]: the private training loop and candidate list generation
//! - [`metrics`]: NDCG@k, F1@k, and the user-group fairness gap
//! - [`rerank`]: the fairness-constrained re-ranking solver
//! - [`experiment`]: end-to-end runs, sweeps, manifests, and reports

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod privacy;
pub mod rerank;
pub mod rng;
pub mod train;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
