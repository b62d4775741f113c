//! The fitting procedure: repeated split search with permutation-based
//! stopping, followed by a screen of the remaining linear terms.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::glm::{Family, GlmError, GlmOptions};
use crate::model::{build_design, fit_structure, Diagnostics, ModelError, ModelStructure, TsvcModel};
use crate::par::map_indexed;
use crate::permutation::{alpha_local, permutation_test_in, run_permutations, PermutationError, PermutationOptions};
use crate::rng::derive_seed;
use crate::split::{BaseModel, MaxSelected, SplitError, SplitSearch};
use crate::tree::NodeId;

/// Ridge used only when the final model is rank deficient.
pub const FINAL_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub alpha: f64,
    pub n_perm: usize,
    pub min_node_size: usize,
    pub max_splits: usize,
    pub seed: u64,
    /// `(predictor, modifier)` pairs that may never be split on.
    pub modifier_exclusions: Vec<(usize, usize)>,
    /// Stop a permutation test early once significance is out of reach.
    pub curtail: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_perm: 1000,
            min_node_size: 5,
            max_splits: 30,
            seed: 0,
            modifier_exclusions: Vec::new(),
            curtail: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, p: usize) -> Result<(), FitError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(FitError::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        if self.n_perm == 0 {
            return Err(FitError::InvalidConfig("n_perm must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(FitError::InvalidConfig("min_node_size must be at least 1".into()));
        }
        for &(j, m) in &self.modifier_exclusions {
            if j >= p || m >= p {
                return Err(FitError::InvalidConfig(alloc::format!("modifier exclusion ({j}, {m}) out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub iteration: usize,
    pub predictor: usize,
    pub node: NodeId,
    pub modifier: usize,
    pub split_point: f64,
    pub t_obs: f64,
    pub p_value: f64,
    pub n_perm: usize,
    pub n_geq: usize,
    /// Deviance of the model the split was proposed on.
    pub parent_deviance: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRecord {
    pub predictor: usize,
    pub t_obs: f64,
    pub p_value: f64,
    pub n_perm: usize,
    pub n_geq: usize,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate data: {0}")]
    DegenerateData(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Permutation(#[from] PermutationError),
}

impl From<GlmError> for FitError {
    fn from(e: GlmError) -> Self {
        FitError::Model(ModelError::Glm(e))
    }
}

/// Fit a tree-structured varying-coefficient model.
pub fn fit_tsvc(data: &Dataset, family: Family, config: &FitConfig) -> Result<TsvcModel, FitError> {
    let p = data.p();
    if p < 2 {
        return Err(FitError::DegenerateData("at least two predictors are required"));
    }
    config.validate(p)?;
    family.validate_response(data.response())?;
    let level = alpha_local(config.alpha, p)?;

    let eligible: Vec<bool> = (0..p)
        .map(|j| {
            let v = data.values(j);
            v.iter().any(|&x| x != v[0])
        })
        .collect();
    if !eligible.iter().any(|&e| e) {
        return Err(FitError::DegenerateData("all predictors are constant"));
    }
    for j in (0..p).filter(|&j| !eligible[j]) {
        log::info!("predictor `{}` is constant and left out", data.name(j));
    }

    let mut structure = ModelStructure::linear((0..p).filter(|&j| eligible[j]));
    let mut history = Vec::new();
    let mut max_splits_reached = false;
    let mut iteration = 0;
    loop {
        if history.iter().filter(|r: &&SplitRecord| r.accepted).count() >= config.max_splits {
            if config.max_splits > 0 {
                log::warn!("stopped at the cap of {} splits", config.max_splits);
                max_splits_reached = true;
            }
            break;
        }
        iteration += 1;
        let search = SplitSearch::new(&structure, data, family, config.min_node_size)?;
        let Some(best) = best_split(&search, &config.modifier_exclusions, &eligible) else {
            log::debug!("no admissible split left");
            break;
        };
        let opts = PermutationOptions {
            n_perm: config.n_perm,
            level,
            seed: derive_seed(config.seed, &[1, iteration as u64]),
            curtail: config.curtail,
        };
        let test = permutation_test_in(&search, data, best.predictor, best.node, best.modifier, &opts)?;
        log::info!(
            "split {iteration}: `{}` at node {} by `{}` <= {:.4}, T = {:.3}, p = {:.4}",
            data.name(best.predictor),
            best.node,
            data.name(best.modifier),
            best.split_point,
            best.t_max,
            test.p_value
        );
        history.push(SplitRecord {
            iteration,
            predictor: best.predictor,
            node: best.node,
            modifier: best.modifier,
            split_point: best.split_point,
            t_obs: best.t_max,
            p_value: test.p_value,
            n_perm: test.n_perm,
            n_geq: test.n_geq,
            parent_deviance: search.base().deviance(),
            accepted: test.significant,
        });
        drop(search);
        if !test.significant {
            break;
        }
        structure.split(best.predictor, best.node, best.modifier, best.split_point)?;
    }

    let (structure, screen) = linear_term_screen(&structure, data, family, config.alpha, config.n_perm, derive_seed(config.seed, &[2]), config.curtail)?;
    let opts = GlmOptions::default().with_ridge(FINAL_RIDGE);
    let (design, fit) = fit_structure(&structure, data, family, &opts)?;
    if !fit.converged {
        log::warn!("final refit did not converge");
    }
    let diagnostics = Diagnostics {
        max_splits_reached,
        split_history: history,
        screen,
        ..Diagnostics::default()
    };
    Ok(TsvcModel::assemble(&structure, &design, &fit, data, family, diagnostics)?)
}

/// Largest `t_max` over all combinations; ties go to the smallest
/// `(predictor, modifier, node, split point)`.
fn best_split(search: &SplitSearch<'_>, exclusions: &[(usize, usize)], eligible: &[bool]) -> Option<MaxSelected> {
    let combos = search.combinations(exclusions, eligible);
    let scored = map_indexed(combos.len(), |k| {
        let (j, node, m) = combos[k];
        search.max_selected(j, node, m).ok()
    });
    scored.into_iter().flatten().fold(None, |best: Option<MaxSelected>, c| match best {
        None => Some(c),
        Some(b) => {
            let key = |s: &MaxSelected| (s.predictor, s.modifier, s.node);
            let better = c.t_max > b.t_max || (c.t_max == b.t_max && (key(&c), c.split_point) < (key(&b), b.split_point));
            Some(if better { c } else { b })
        }
    })
}

/// Permutation screen of the linear terms that are not effect modifiers.
/// Each term is tested against the full model at level `alpha`; all
/// non-significant terms are then dropped together.
pub fn linear_term_screen(
    structure: &ModelStructure,
    data: &Dataset,
    family: Family,
    alpha: f64,
    n_perm: usize,
    seed: u64,
    curtail: bool,
) -> Result<(ModelStructure, Vec<ScreenRecord>), FitError> {
    let modifiers = structure.modifiers();
    let tested: Vec<usize> = structure.linear_terms().iter().copied().filter(|l| !modifiers.contains(l)).collect();
    let mut records = Vec::with_capacity(tested.len());
    let mut kept = structure.clone();
    for &l in &tested {
        let reduced = structure.without_linear(l);
        let design = build_design(&reduced, data)?;
        let base = BaseModel::new(design.matrix, data.response(), family, &GlmOptions::default())?;
        let column = data.values(l);
        let t_obs = base.lr_statistic(&base.augment_from(column), &mut None).unwrap_or(0.0);
        let opts = PermutationOptions {
            n_perm,
            level: alpha,
            seed: derive_seed(seed, &[l as u64]),
            curtail,
        };
        let test = run_permutations(t_obs, &opts, |rng| {
            let mut values = column.to_vec();
            values.shuffle(rng);
            base.lr_statistic(&base.augment_from(&values), &mut None)
        })?;
        log::info!("linear term `{}`: T = {:.3}, p = {:.4}", data.name(l), t_obs, test.p_value);
        records.push(ScreenRecord {
            predictor: l,
            t_obs,
            p_value: test.p_value,
            n_perm: test.n_perm,
            n_geq: test.n_geq,
            retained: test.significant,
        });
        if !test.significant {
            kept = kept.without_linear(l);
        }
    }
    Ok((kept, records))
}

/// Deviance and AIC of a fitted model evaluated on `data`.
pub fn deviance_aic(model: &TsvcModel, data: &Dataset) -> Result<(f64, f64), FitError> {
    let design = build_design(&model.structure(), data)?;
    let eta = design.matrix.mul_vec(&model.coefficient_vector());
    let family = model.family;
    let deviance = family.deviance(data.response(), &eta);
    let ll = family.log_likelihood(data.response(), &eta, deviance);
    Ok((deviance, family.aic(ll, design.sources.len())))
}

/// Rebuild the split structure from the accepted records, starting from
/// every predictor as a linear term.
pub fn replay(records: &[SplitRecord], p: usize) -> Result<ModelStructure, FitError> {
    let mut structure = ModelStructure::linear(0..p);
    let mut last = 0;
    for r in records {
        if r.iteration <= last {
            return Err(FitError::InvalidConfig("split records are not ordered by iteration".into()));
        }
        last = r.iteration;
        if r.accepted {
            structure.split(r.predictor, r.node, r.modifier, r.split_point)?;
        }
    }
    Ok(structure)
}
