//! Optimization-based trajectory planning with smooth separating and
//! containing constraints between convex sets.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: polytopes, ellipsoids, poses and placed sets with tangents.
//! - [`separation`], [`containment`], [`baseline_dual`]: constraint residuals
//!   with exact Jacobians.
//! - [`dynamics`], [`ocp`], [`initializer`]: vehicle models, transcription to
//!   a sparse NLP and warm starts.
//! - [`solver`]: augmented-Lagrangian solver with a projected Newton inner
//!   loop (projected L-BFGS optional).
//! - [`audit`]: finite-difference audit of every constraint family.
//! - [`verification`]: solver-independent collision and containment oracles.
//! - [`equivalence`]: randomized residual-versus-oracle agreement suites.
//! - [`feasibility`]: plane searches cross-checking residuals against oracles.
//! - [`io`]: scenario files, trajectory CSV and reports.
//! - [`par`]: rayon-backed maps with a sequential fallback.

// Negated float comparisons are used on purpose so NaN inputs fail checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod baseline_dual;
pub mod containment;
pub mod dynamics;
pub mod equivalence;
pub mod error;
pub mod feasibility;
pub mod geometry;
pub mod initializer;
pub mod io;
pub mod ocp;
pub mod par;
pub mod residual;
pub mod separation;
pub mod solver;
pub mod sparse;
pub mod verification;

pub use error::{Error, Result};
