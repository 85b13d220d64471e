//! Equilibria of submodular monotone-follower games on finite scenario trees.
//!
//! Players choose nondecreasing controls `A^i` on a non-recombining tree and
//! minimise convex costs of the form
//! `E[Σ h(L, A) Δt + g(L_T, A_T) + Σ f ΔA]`. Least (and greatest) Nash
//! equilibria are computed by iterating the best-reply map from the bottom
//! (top) of the strategy lattice.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod best_reply;
pub mod cost_models;
pub mod diagnostics;
pub mod functional;
pub mod presets;
pub mod scenario_tree;
pub mod sdg_adapters;
pub mod sweep;
pub mod topkis;

pub use best_reply::{AdmissibleSet, BestReply, BestReplyError, SolverOptions};
pub use cost_models::{CostError, CostFamily};
pub use functional::{GameError, GameSpec};
pub use scenario_tree::{AdaptedProcess, ScenarioTree, TreeError};
