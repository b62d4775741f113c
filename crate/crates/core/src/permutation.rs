//! Permutation tests for the maximally selected split statistic.
//!
//! Replicates run in fixed batches; replicate `k` draws from stream `k` of
//! the test's seed, so counts do not depend on thread scheduling. With
//! curtailment on, the test stops once significance is out of reach; the
//! decision is the same as for the full run.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::glm::Family;
use crate::model::ModelStructure;
use crate::par::map_indexed;
use crate::rng::replicate_rng;
use crate::split::{SplitError, SplitSearch};
use crate::tree::NodeId;

const BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PermutationError {
    #[error("invalid arguments: {0}")]
    InvalidArgs(&'static str),
    #[error(transparent)]
    Split(#[from] SplitError),
}

/// Per-test level `alpha / (p - 1)`.
pub fn alpha_local(alpha: f64, p: usize) -> Result<f64, PermutationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PermutationError::InvalidArgs("alpha must lie in (0, 1)"));
    }
    if p < 2 {
        return Err(PermutationError::InvalidArgs("need at least two predictors"));
    }
    Ok(alpha / (p - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationOptions {
    pub n_perm: usize,
    pub level: f64,
    pub seed: u64,
    pub curtail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermTestResult {
    pub t_obs: f64,
    /// Replicates actually evaluated.
    pub n_perm: usize,
    pub n_requested: usize,
    /// Replicates whose statistic reached `t_obs`.
    pub n_geq: usize,
    pub p_value: f64,
    pub alpha_local: f64,
    pub significant: bool,
    pub seed: u64,
    pub curtailed: bool,
    /// Replicates without any admissible split, counted as statistic 0.
    pub n_degenerate: usize,
}

/// Run `statistic` on replicates `0..n_perm` and compare with `t_obs`.
/// `statistic` returns `None` when the replicate has no valid candidate.
pub fn run_permutations<F>(t_obs: f64, opts: &PermutationOptions, statistic: F) -> Result<PermTestResult, PermutationError>
where
    F: Fn(&mut ChaCha8Rng) -> Option<f64> + Sync + Send,
{
    if opts.n_perm == 0 {
        return Err(PermutationError::InvalidArgs("n_perm must be at least 1"));
    }
    if !t_obs.is_finite() {
        return Err(PermutationError::InvalidArgs("observed statistic must be finite"));
    }
    // near-ties count as exceedances
    let threshold = t_obs - 1e-9 * (1.0 + libm::fabs(t_obs));
    let mut n_done = 0;
    let mut n_geq = 0;
    let mut n_degenerate = 0;
    let mut curtailed = false;
    while n_done < opts.n_perm {
        let size = BATCH.min(opts.n_perm - n_done);
        let start = n_done;
        let batch: Vec<Option<f64>> = map_indexed(size, |k| statistic(&mut replicate_rng(opts.seed, (start + k) as u64)));
        for t in batch {
            match t {
                Some(t) if t >= threshold => n_geq += 1,
                Some(_) => {}
                None => {
                    n_degenerate += 1;
                    if 0.0 >= threshold {
                        n_geq += 1;
                    }
                }
            }
        }
        n_done += size;
        if opts.curtail && n_done < opts.n_perm && (n_geq + 1) as f64 > opts.level * (opts.n_perm + 1) as f64 {
            curtailed = true;
            break;
        }
    }
    let p_value = (n_geq + 1) as f64 / (n_done + 1) as f64;
    Ok(PermTestResult {
        t_obs,
        n_perm: n_done,
        n_requested: opts.n_perm,
        n_geq,
        p_value,
        alpha_local: opts.level,
        significant: !curtailed && p_value <= opts.level,
        seed: opts.seed,
        curtailed,
        n_degenerate,
    })
}

/// Permutation test of the split combination `(j, node, m)` within a search.
/// The modifier column is permuted over all rows; node membership and the
/// rest of the model stay as fitted on the original data.
pub fn permutation_test_in(
    search: &SplitSearch<'_>,
    data: &Dataset,
    j: usize,
    node: NodeId,
    m: usize,
    opts: &PermutationOptions,
) -> Result<PermTestResult, PermutationError> {
    let observed = search.max_selected(j, node, m)?;
    let mask = search.node_rows(j, node)?;
    let original = data.values(m);
    run_permutations(observed.t_max, opts, |rng| {
        let mut values = original.to_vec();
        values.shuffle(rng);
        search.max_selected_on(j, node, m, &mask, &values).ok().map(|b| b.t_max)
    })
}

/// Stand-alone permutation test for `(j, node, m)` under `structure`.
#[allow(clippy::too_many_arguments)]
pub fn permutation_test(
    structure: &ModelStructure,
    j: usize,
    node: NodeId,
    m: usize,
    data: &Dataset,
    family: Family,
    min_node_size: usize,
    opts: &PermutationOptions,
) -> Result<PermTestResult, PermutationError> {
    let search = SplitSearch::new(structure, data, family, min_node_size)?;
    permutation_test_in(&search, data, j, node, m, opts)
}
