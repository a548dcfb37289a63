//! Sparse separated-representation regression for scarce multi-parametric data.
//!
//! The central object is a [`model::SeparatedModel`]: a rank-`M` sum of products of
//! one-dimensional basis expansions, fitted greedily one rank-one mode at a time.
//! Three fitting strategies are provided on top of the same alternating-direction
//! engine:
//!
//! - **s-PGD**: plain least squares per direction with a modal adaptivity schedule
//!   that raises the polynomial degree when the training residual stagnates.
//! - **rs-PGD**: ridge / Elastic-Net penalized direction solves, with the penalty
//!   factor selected per enrichment step by cross-validation or a held-out split.
//! - **s²-PGD**: Lasso in selected dimensions to recover sparse coefficient
//!   supports, followed by OLS de-biasing on the detected support.
//!
//! The [`anova`] module adds an anchored ANOVA pipeline (univariate splines on a
//! cross design plus a low-order coupling model) and Sobol sensitivity estimates.
//! [`sampling`] provides the design-of-experiments generators (Latin hypercube,
//! Clenshaw-Curtis / Smolyak sparse grids, anchor crosses) and [`benchmarks`] the
//! reference problems used by the acceptance suite and the CLI.

pub mod anova;
pub mod basis;
pub mod benchmarks;
pub mod fit;
pub mod model;
pub mod sampling;
pub mod solvers;

pub use basis::{BasisFamily, BasisSpec};
pub use fit::{Dataset, FitConfig, FitReport, Method};
pub use model::{Mode, SeparatedModel};
