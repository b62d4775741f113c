//! Candidate splits and their likelihood-ratio statistics.
//!
//! Splitting the leaf column `x_j * I(node)` at `(m, c)` spans the same space
//! as keeping it and adding `a = x_j * I(node) * I(x_m <= c)`. Every
//! candidate is therefore the current design plus one column, which
//! [`BaseModel`] scores without rebuilding the design: in closed form for
//! the gaussian family, and for the others by Newton-type iterations with
//! the Hessian frozen at the current fit (falling back to a full IRLS fit of
//! the explicit design if that stalls).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Scale};
use crate::glm::{fit_glm, fit_glm_from, Family, GlmError, GlmFit, GlmOptions};
use crate::linalg::{dot, sym_mul_vec, Cholesky, Matrix};
use crate::model::{build_design, ColumnSource, Design, ModelError, ModelStructure};
use crate::tree::{NodeId, ROOT};

/// Candidates whose added column keeps less than this share of its weighted
/// norm after projection on the current design are treated as collinear.
const COLLINEAR_TOL: f64 = 1e-10;
const MAX_FAST_ITER: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("no admissible split of predictor {predictor} at node {node} on modifier {modifier}")]
    NoAdmissibleSplit { predictor: usize, node: NodeId, modifier: usize },
    #[error("split point {split_point} on modifier {modifier} is not admissible")]
    NotAdmissible { modifier: usize, split_point: f64 },
    #[error("predictor {predictor} has no leaf {node} in the current model")]
    UnknownNode { predictor: usize, node: NodeId },
    #[error("predictor {0} cannot modify its own coefficient")]
    SelfModification(usize),
    #[error("candidate model is rank deficient")]
    Collinear,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<GlmError> for SplitError {
    fn from(e: GlmError) -> Self {
        SplitError::Model(ModelError::Glm(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub predictor: usize,
    pub node: NodeId,
    pub modifier: usize,
    pub split_point: f64,
    pub lr_statistic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxSelected {
    pub predictor: usize,
    pub node: NodeId,
    pub modifier: usize,
    pub split_point: f64,
    pub t_max: f64,
    /// Admissible split points that produced a valid (full-rank) candidate.
    pub n_scored: usize,
    /// Admissible split points discarded as collinear or unfittable.
    pub n_invalid: usize,
}

/// Admissible thresholds of `values` within the rows flagged by `mask`.
///
/// Continuous and ordinal modifiers use midpoints between consecutive
/// distinct values, binary ones the single threshold 0. Thresholds leaving
/// fewer than `min_node_size` rows on either side are dropped.
pub fn candidate_split_points(values: &[f64], scale: Scale, mask: &[bool], min_node_size: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
    v.sort_by(f64::total_cmp);
    points_from_sorted(&v, scale, min_node_size)
}

fn points_from_sorted(sorted: &[f64], scale: Scale, min_node_size: usize) -> Vec<f64> {
    let n = sorted.len();
    let min = min_node_size.max(1);
    let mut out = Vec::new();
    match scale {
        Scale::Binary => {
            let left = sorted.partition_point(|&x| x <= 0.0);
            if left >= min && n - left >= min {
                out.push(0.0);
            }
        }
        Scale::Continuous | Scale::Ordinal => {
            for k in 1..n {
                if sorted[k] != sorted[k - 1] && k >= min && n - k >= min {
                    out.push(0.5 * (sorted[k - 1] + sorted[k]));
                }
            }
        }
    }
    out
}

/// Current fit plus everything needed to score one added column.
#[derive(Debug, Clone)]
pub struct BaseModel {
    family: Family,
    design: Matrix,
    /// Row-major copy of the design.
    rows: Vec<f64>,
    q: usize,
    y: Vec<f64>,
    weights: Vec<f64>,
    /// Inverse of `X' W X` at the current fit, row-major.
    gram_inv: Vec<f64>,
    fit: GlmFit,
    /// `y - mu` at the current fit.
    residual: Vec<f64>,
    opts: GlmOptions,
}

/// Column added to a [`BaseModel`], with its inner products accumulated.
#[derive(Debug, Clone)]
pub struct Augment {
    values: Vec<f64>,
    support: Vec<usize>,
    /// `X' W a`
    cross: Vec<f64>,
    /// `a' W a`
    norm: f64,
    /// `a' (y - mu)`
    score: f64,
}

impl BaseModel {
    pub fn new(design: Matrix, y: &[f64], family: Family, opts: &GlmOptions) -> Result<Self, SplitError> {
        let fit = fit_glm(&design, y, family, opts)?;
        Self::from_fit(design, y, family, opts, fit)
    }

    pub fn from_fit(design: Matrix, y: &[f64], family: Family, opts: &GlmOptions, fit: GlmFit) -> Result<Self, SplitError> {
        let n = design.rows();
        let q = design.cols();
        let mu: Vec<f64> = fit.linear_predictor.iter().map(|&e| family.inverse_link(e)).collect();
        let weights: Vec<f64> = mu.iter().map(|&m| family.variance(m).max(1e-300)).collect();
        let gram = design.weighted_gram(&weights);
        let chol = Cholesky::factor(&gram, q, opts.rank_tol, None).map_err(|_| SplitError::Collinear)?;
        let gram_inv = chol.inverse();
        let mut rows = vec![0.0; n * q];
        for k in 0..q {
            for (i, &x) in design.column(k).iter().enumerate() {
                rows[i * q + k] = x;
            }
        }
        let residual = y.iter().zip(&mu).map(|(&yi, &m)| yi - m).collect();
        Ok(Self {
            family,
            design,
            rows,
            q,
            y: y.to_vec(),
            weights,
            gram_inv,
            fit,
            residual,
            opts: opts.clone(),
        })
    }

    pub fn fit(&self) -> &GlmFit {
        &self.fit
    }

    pub fn deviance(&self) -> f64 {
        self.fit.deviance
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn empty_augment(&self) -> Augment {
        Augment {
            values: vec![0.0; self.n()],
            support: Vec::new(),
            cross: vec![0.0; self.q],
            norm: 0.0,
            score: 0.0,
        }
    }

    /// Set entry `i` of the added column (each row at most once).
    #[inline]
    pub fn push(&self, aug: &mut Augment, i: usize, value: f64) {
        if value == 0.0 {
            return;
        }
        debug_assert_eq!(aug.values[i], 0.0);
        aug.values[i] = value;
        aug.support.push(i);
        let wa = self.weights[i] * value;
        let row = &self.rows[i * self.q..(i + 1) * self.q];
        for (c, &x) in aug.cross.iter_mut().zip(row) {
            *c += wa * x;
        }
        aug.norm += wa * value;
        aug.score += value * self.residual[i];
    }

    /// Augment holding a full column.
    pub fn augment_from(&self, column: &[f64]) -> Augment {
        let mut aug = self.empty_augment();
        for (i, &v) in column.iter().enumerate() {
            self.push(&mut aug, i, v);
        }
        aug
    }

    /// Deviance drop from adding the column, clamped at zero, or `None` when
    /// the column is collinear with the design or the fit fails.
    ///
    /// `warm` carries `(beta, gamma)` between calls for non-gaussian families.
    pub fn lr_statistic(&self, aug: &Augment, warm: &mut Option<(Vec<f64>, f64)>) -> Option<f64> {
        if aug.support.is_empty() || aug.norm <= 0.0 {
            return None;
        }
        let u = sym_mul_vec(&self.gram_inv, &aug.cross);
        let schur = aug.norm - dot(&aug.cross, &u);
        if !(schur > COLLINEAR_TOL * aug.norm) {
            return None;
        }
        if self.family.is_gaussian() {
            return Some((aug.score * aug.score / schur).max(0.0));
        }
        let dev = match self.newton(aug, &u, schur, warm) {
            Some(d) => d,
            None => {
                *warm = None;
                self.full_refit(aug)?
            }
        };
        Some((self.fit.deviance - dev).max(0.0))
    }

    /// Frozen-Hessian Newton iterations on the augmented model.
    fn newton(&self, aug: &Augment, u: &[f64], schur: f64, warm: &mut Option<(Vec<f64>, f64)>) -> Option<f64> {
        let n = self.n();
        let q = self.q;
        let (mut beta, mut gamma) = match warm.take() {
            Some((b, g)) if b.len() == q && g.is_finite() => (b, g),
            _ => (self.fit.coefficients.clone(), 0.0),
        };
        let mut eta = vec![0.0; n];
        let eval = |beta: &[f64], gamma: f64, eta: &mut [f64]| -> f64 {
            for i in 0..n {
                eta[i] = dot(&self.rows[i * q..(i + 1) * q], beta) + gamma * aug.values[i];
            }
            self.family.deviance(&self.y, eta)
        };
        let mut dev = eval(&beta, gamma, &mut eta);
        if !dev.is_finite() {
            beta.clone_from(&self.fit.coefficients);
            gamma = 0.0;
            dev = eval(&beta, gamma, &mut eta);
        }
        let tol = 1e-12 * (libm::fabs(dev) + 1.0);
        let mut g = vec![0.0; q];
        let mut trial_beta = vec![0.0; q];
        let mut trial_eta = vec![0.0; n];
        for _ in 0..MAX_FAST_ITER {
            g.iter_mut().for_each(|v| *v = 0.0);
            let mut ga = 0.0;
            for i in 0..n {
                let r = self.y[i] - self.family.inverse_link(eta[i]);
                if r != 0.0 {
                    let row = &self.rows[i * q..(i + 1) * q];
                    for (gk, &x) in g.iter_mut().zip(row) {
                        *gk += r * x;
                    }
                    ga += r * aug.values[i];
                }
            }
            let h0g = sym_mul_vec(&self.gram_inv, &g);
            let d_gamma = (ga - dot(u, &g)) / schur;
            let d_beta: Vec<f64> = h0g.iter().zip(u).map(|(&h, &uk)| h - uk * d_gamma).collect();
            let decrement = dot(&g, &d_beta) + ga * d_gamma;
            if !decrement.is_finite() {
                return None;
            }
            if decrement < tol {
                *warm = Some((beta, gamma));
                return Some(dev);
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                for k in 0..q {
                    trial_beta[k] = beta[k] + step * d_beta[k];
                }
                let trial_gamma = gamma + step * d_gamma;
                let d = eval(&trial_beta, trial_gamma, &mut trial_eta);
                if d.is_finite() && d <= dev + 1e-14 * (libm::fabs(dev) + 1.0) {
                    beta.copy_from_slice(&trial_beta);
                    gamma = trial_gamma;
                    core::mem::swap(&mut eta, &mut trial_eta);
                    let stalled = dev - d < 1e-15 * (libm::fabs(dev) + 1.0) && step < 1.0;
                    dev = d;
                    accepted = !stalled;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
        None
    }

    fn full_refit(&self, aug: &Augment) -> Option<f64> {
        let mut design = self.design.clone();
        design.push_column(&aug.values);
        let mut start = self.fit.coefficients.clone();
        start.push(0.0);
        let fit = fit_glm_from(&design, &self.y, self.family, &self.opts, Some(&start))
            .or_else(|_| fit_glm(&design, &self.y, self.family, &self.opts))
            .ok()?;
        Some(fit.deviance)
    }
}

/// Search state for one fitted structure: the base fit plus node lookups.
#[derive(Debug, Clone)]
pub struct SplitSearch<'a> {
    data: &'a Dataset,
    structure: &'a ModelStructure,
    design: Design,
    base: BaseModel,
    min_node_size: usize,
}

impl<'a> SplitSearch<'a> {
    pub fn new(structure: &'a ModelStructure, data: &'a Dataset, family: Family, min_node_size: usize) -> Result<Self, SplitError> {
        let design = build_design(structure, data)?;
        let base = BaseModel::new(design.matrix.clone(), data.response(), family, &GlmOptions::default())?;
        Ok(Self {
            data,
            structure,
            design,
            base,
            min_node_size,
        })
    }

    pub fn base(&self) -> &BaseModel {
        &self.base
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn structure(&self) -> &ModelStructure {
        self.structure
    }

    /// Rows in `node` of predictor `j`'s tree (the root of a linear term covers every row).
    pub fn node_rows(&self, j: usize, node: NodeId) -> Result<Vec<bool>, SplitError> {
        let src = match self.structure.tree(j) {
            Some(_) => ColumnSource::Leaf { predictor: j, node },
            None if node == ROOT => ColumnSource::Linear { predictor: j },
            None => return Err(SplitError::UnknownNode { predictor: j, node }),
        };
        if self.design.position(src).is_none() {
            return Err(SplitError::UnknownNode { predictor: j, node });
        }
        Ok(match self.structure.tree(j) {
            Some(tree) => (0..self.data.n()).map(|i| tree.leaf_for(|m| self.data.values(m)[i]) == node).collect(),
            None => vec![true; self.data.n()],
        })
    }

    /// Every `(j, node, m)` combination eligible for splitting.
    pub fn combinations(&self, exclusions: &[(usize, usize)], eligible: &[bool]) -> Vec<(usize, NodeId, usize)> {
        let p = self.data.p();
        let mut out = Vec::new();
        for j in 0..p {
            if !eligible[j] {
                continue;
            }
            let nodes: Vec<NodeId> = match self.structure.tree(j) {
                Some(t) => t.leaves().iter().map(|l| l.id).collect(),
                None if self.structure.has_linear(j) => vec![ROOT],
                None => continue,
            };
            for node in nodes {
                for m in 0..p {
                    if m != j && eligible[m] && !exclusions.contains(&(j, m)) {
                        out.push((j, node, m));
                    }
                }
            }
        }
        out
    }

    fn check(&self, j: usize, m: usize) -> Result<(), SplitError> {
        self.data.check_index(j).map_err(ModelError::from)?;
        self.data.check_index(m).map_err(ModelError::from)?;
        if j == m {
            return Err(SplitError::SelfModification(j));
        }
        Ok(())
    }

    /// Statistic of a single admissible split.
    pub fn score_split(&self, j: usize, node: NodeId, m: usize, c: f64) -> Result<SplitCandidate, SplitError> {
        self.check(j, m)?;
        let mask = self.node_rows(j, node)?;
        let points = candidate_split_points(self.data.values(m), self.data.scale(m), &mask, self.min_node_size);
        if !points.iter().any(|&p| p == c) {
            return Err(SplitError::NotAdmissible { modifier: m, split_point: c });
        }
        let xj = self.data.values(j);
        let xm = self.data.values(m);
        let mut aug = self.base.empty_augment();
        for i in 0..self.data.n() {
            if mask[i] && xm[i] <= c {
                self.base.push(&mut aug, i, xj[i]);
            }
        }
        let t = self.base.lr_statistic(&aug, &mut None).ok_or(SplitError::Collinear)?;
        Ok(SplitCandidate {
            predictor: j,
            node,
            modifier: m,
            split_point: c,
            lr_statistic: t,
        })
    }

    /// Maximally selected statistic over all admissible split points.
    pub fn max_selected(&self, j: usize, node: NodeId, m: usize) -> Result<MaxSelected, SplitError> {
        self.check(j, m)?;
        let mask = self.node_rows(j, node)?;
        self.max_selected_on(j, node, m, &mask, self.data.values(m))
    }

    /// As [`Self::max_selected`] with the modifier's values replaced by
    /// `modifier` (node membership still follows the original data).
    pub fn max_selected_on(&self, j: usize, node: NodeId, m: usize, mask: &[bool], modifier: &[f64]) -> Result<MaxSelected, SplitError> {
        let mut best: Option<MaxSelected> = None;
        let mut n_scored = 0;
        let mut n_invalid = 0;
        self.sweep(j, mask, modifier, self.data.scale(m), |c, t| match t {
            Some(t) => {
                n_scored += 1;
                if best.map_or(true, |b| t > b.t_max) {
                    best = Some(MaxSelected {
                        predictor: j,
                        node,
                        modifier: m,
                        split_point: c,
                        t_max: t,
                        n_scored: 0,
                        n_invalid: 0,
                    });
                }
            }
            None => n_invalid += 1,
        });
        match best {
            Some(b) => Ok(MaxSelected { n_scored, n_invalid, ..b }),
            None => {
                if n_invalid > 0 {
                    log::debug!("all {n_invalid} split points of ({j}, {node}, {m}) are collinear");
                }
                Err(SplitError::NoAdmissibleSplit { predictor: j, node, modifier: m })
            }
        }
    }

    /// Every admissible split point with its statistic (`None` = invalid).
    pub fn scan(&self, j: usize, node: NodeId, m: usize) -> Result<Vec<(f64, Option<f64>)>, SplitError> {
        self.check(j, m)?;
        let mask = self.node_rows(j, node)?;
        let mut out = Vec::new();
        self.sweep(j, &mask, self.data.values(m), self.data.scale(m), |c, t| out.push((c, t)));
        Ok(out)
    }

    /// Visit admissible split points in increasing order, growing the added
    /// column one block of tied modifier values at a time.
    fn sweep<F: FnMut(f64, Option<f64>)>(&self, j: usize, mask: &[bool], modifier: &[f64], scale: Scale, mut visit: F) {
        let mut order: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        order.sort_by(|&a, &b| modifier[a].total_cmp(&modifier[b]).then(a.cmp(&b)));
        let sorted: Vec<f64> = order.iter().map(|&i| modifier[i]).collect();
        let points = points_from_sorted(&sorted, scale, self.min_node_size);
        let xj = self.data.values(j);
        let mut aug = self.base.empty_augment();
        let mut warm = None;
        let mut next = 0;
        for c in points {
            while next < order.len() && sorted[next] <= c {
                let i = order[next];
                self.base.push(&mut aug, i, xj[i]);
                next += 1;
            }
            visit(c, self.base.lr_statistic(&aug, &mut warm));
        }
    }
}

/// One-off statistic of a single split of `structure`.
pub fn score_split(
    structure: &ModelStructure,
    j: usize,
    node: NodeId,
    m: usize,
    c: f64,
    data: &Dataset,
    family: Family,
    min_node_size: usize,
) -> Result<SplitCandidate, SplitError> {
    SplitSearch::new(structure, data, family, min_node_size)?.score_split(j, node, m, c)
}

/// One-off maximally selected statistic for `(j, node, m)`.
pub fn max_selected(
    structure: &ModelStructure,
    j: usize,
    node: NodeId,
    m: usize,
    data: &Dataset,
    family: Family,
    min_node_size: usize,
) -> Result<MaxSelected, SplitError> {
    SplitSearch::new(structure, data, family, min_node_size)?.max_selected(j, node, m)
}
