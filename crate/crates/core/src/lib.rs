//! # otmix
//!
//! Entropic optimal transport and class-proportion estimation on discrete
//! measures.
//!
//! The crate solves one statistical problem end to end: given a labelled
//! source sample that splits into `K` sub-populations and an unlabelled
//! target sample, estimate the vector of class proportions `θ ∈ Σ_K` such
//! that the re-weighted source mixture best matches the target under an
//! optimal-transport loss. Everything is built on discrete measures in
//! `R^d` with the squared Euclidean ground cost.
//!
//! ## Modules
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`measures`] | Discrete measures, labelled samples, mixtures, simplex geometry |
//! | [`ot`] | Log-domain Sinkhorn, Sinkhorn divergence, c/s-transforms, identities |
//! | [`exact`] | Un-regularized transport via network simplex (plan + duals) |
//! | [`estimator`] | Projected gradient descent over the simplex for all losses |
//! | [`datagen`] | Seeded Gaussian-mixture sample generator |
//! | [`experiment`] | Monte Carlo sweep harness with CSV/JSON reports |
//! | [`io`] | CSV ingestion and persistence of the file formats |
//!
//! ## Losses
//!
//! Five estimators are available through [`estimator::LossSpec`]: the exact
//! cost `W_0`, the regularized cost `W_λ`, the Sinkhorn divergence `S_λ`,
//! and the finite-iteration variants `W_λ^(ℓ)` and `S_λ^(ℓ)` obtained by
//! capping the number of Sinkhorn iterations.

pub mod datagen;
pub mod error;
pub mod estimator;
pub mod exact;
pub mod experiment;
pub mod io;
pub mod measures;
pub mod ot;

pub use error::{Error, Result};
pub use estimator::{DescentConfig, EstimateResult, LossKind, LossSpec};
pub use exact::TransportPlan;
pub use measures::{DiscreteMeasure, LabeledSample, MixtureModel, SimplexVector};
pub use ot::{DualSolution, IterationBudget, SinkhornConfig};
