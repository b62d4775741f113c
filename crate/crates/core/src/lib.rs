//! Tree-structured varying-coefficient generalized linear models.
//!
//! Each predictor's coefficient may be a binary tree over the other
//! predictors (its effect modifiers). Trees grow one split at a time; the
//! best split is accepted only if a permutation test of its maximally
//! selected likelihood-ratio statistic rejects at level `alpha / (p - 1)`.
//! Linear terms that are not effect modifiers are then screened.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature; the `parallel` feature spreads candidate scoring and
//! permutation replicates over a rayon pool.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod algorithm;
pub mod data;
pub mod glm;
pub mod linalg;
pub mod model;
pub mod par;
pub mod permutation;
pub mod rng;
pub mod sim;
pub mod split;
pub mod tree;

pub use algorithm::{deviance_aic, fit_tsvc, linear_term_screen, replay, FitConfig, FitError, ScreenRecord, SplitRecord};
pub use data::{Branch, Column, DataError, Dataset, Region, Scale, Side};
pub use glm::{fit_glm, Distribution, Family, GlmError, GlmFit, GlmOptions, Link};
pub use model::{build_design, predict, predict_columns, Design, Diagnostics, ModelError, ModelStructure, TsvcModel};
pub use permutation::{alpha_local, permutation_test, PermTestResult, PermutationOptions};
pub use split::{candidate_split_points, max_selected, score_split, MaxSelected, SplitCandidate, SplitError, SplitSearch};
pub use tree::{CoefficientTree, NodeId, TreeNode, ROOT};
