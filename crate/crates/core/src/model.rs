//! Model structure, TSVC design matrices, fitted models and prediction.
//!
//! The linear predictor of a fitted model is
//!
//! ```text
//! eta_i = b0 + sum_{j in V} x_ij * tr_j(x_i) + sum_{l in L} x_il * b_l
//! ```
//!
//! where `tr_j` is the coefficient tree of predictor `j`. The design holds an
//! intercept column, one column `x_j * I(leaf)` per leaf of every tree
//! (trees in ascending predictor order, leaves depth-first) and one column
//! per linear term (ascending).

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{ScreenRecord, SplitRecord};
use crate::data::{Column, DataError, Dataset, Scale};
use crate::glm::{fit_glm, Family, GlmError, GlmFit, GlmOptions};
use crate::linalg::Matrix;
use crate::tree::{CoefficientTree, NodeId, TreeError, TreeNode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error("leaf {node} of the tree for predictor {predictor} contains no observations")]
    EmptyLeaf { predictor: usize, node: NodeId },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid model structure: {0}")]
    InvalidStructure(&'static str),
}

/// Which predictors enter as trees and which as plain linear terms.
/// Coefficients stored in the trees are ignored when building designs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelStructure {
    trees: Vec<CoefficientTree>,
    linear: Vec<usize>,
}

impl ModelStructure {
    /// Every listed predictor as a linear term.
    pub fn linear(predictors: impl IntoIterator<Item = usize>) -> Self {
        let mut linear: Vec<usize> = predictors.into_iter().collect();
        linear.sort_unstable();
        linear.dedup();
        Self { trees: Vec::new(), linear }
    }

    pub fn new(mut trees: Vec<CoefficientTree>, mut linear: Vec<usize>) -> Result<Self, ModelError> {
        trees.sort_by_key(|t| t.predictor());
        linear.sort_unstable();
        if trees.windows(2).any(|w| w[0].predictor() == w[1].predictor()) || linear.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::InvalidStructure("duplicate predictor"));
        }
        if trees.iter().any(|t| linear.binary_search(&t.predictor()).is_ok()) {
            return Err(ModelError::InvalidStructure("predictor is both a tree and a linear term"));
        }
        for t in &trees {
            t.validate()?;
        }
        Ok(Self { trees, linear })
    }

    pub fn trees(&self) -> &[CoefficientTree] {
        &self.trees
    }

    pub fn linear_terms(&self) -> &[usize] {
        &self.linear
    }

    pub fn tree(&self, predictor: usize) -> Option<&CoefficientTree> {
        self.trees.iter().find(|t| t.predictor() == predictor)
    }

    pub fn tree_mut(&mut self, predictor: usize) -> Option<&mut CoefficientTree> {
        self.trees.iter_mut().find(|t| t.predictor() == predictor)
    }

    pub fn has_linear(&self, predictor: usize) -> bool {
        self.linear.binary_search(&predictor).is_ok()
    }

    /// Predictors present in the model in any form.
    pub fn contains(&self, predictor: usize) -> bool {
        self.has_linear(predictor) || self.tree(predictor).is_some()
    }

    /// Union of modifiers over all trees.
    pub fn modifiers(&self) -> BTreeSet<usize> {
        self.trees.iter().flat_map(|t| t.modifiers()).collect()
    }

    /// Number of design columns.
    pub fn n_columns(&self) -> usize {
        1 + self.trees.iter().map(|t| t.n_leaves()).sum::<usize>() + self.linear.len()
    }

    /// Split a leaf of `predictor`'s tree. A predictor without a tree gets one
    /// (and loses its linear term) when its root is split.
    pub fn split(&mut self, predictor: usize, node: NodeId, modifier: usize, split_point: f64) -> Result<(NodeId, NodeId), ModelError> {
        if self.tree(predictor).is_none() {
            let mut tree = CoefficientTree::new(predictor, 0.0);
            let children = tree.split_leaf(node, modifier, split_point)?;
            self.linear.retain(|&l| l != predictor);
            let pos = self.trees.partition_point(|t| t.predictor() < predictor);
            self.trees.insert(pos, tree);
            return Ok(children);
        }
        Ok(self.tree_mut(predictor).expect("checked").split_leaf(node, modifier, split_point)?)
    }

    pub fn without_linear(&self, predictor: usize) -> Self {
        let mut s = self.clone();
        s.linear.retain(|&l| l != predictor);
        s
    }

    pub fn max_predictor(&self) -> Option<usize> {
        let t = self.trees.iter().flat_map(|t| core::iter::once(t.predictor()).chain(t.modifiers()));
        t.chain(self.linear.iter().copied()).max()
    }
}

/// Provenance of one design column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnSource {
    Intercept,
    Leaf { predictor: usize, node: NodeId },
    Linear { predictor: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: Matrix,
    pub sources: Vec<ColumnSource>,
}

impl Design {
    pub fn position(&self, source: ColumnSource) -> Option<usize> {
        self.sources.iter().position(|s| *s == source)
    }
}

/// Assemble the design matrix of `structure` on `data`.
pub fn build_design(structure: &ModelStructure, data: &Dataset) -> Result<Design, ModelError> {
    design_from_columns(structure, data.columns(), data.n())
}

pub(crate) fn design_from_columns(structure: &ModelStructure, columns: &[Column], n: usize) -> Result<Design, ModelError> {
    let p = columns.len();
    if let Some(max) = structure.max_predictor() {
        if max >= p {
            return Err(DataError::InvalidIndex { index: max, p }.into());
        }
    }
    let mut matrix = Matrix::with_rows(n);
    let mut sources = Vec::with_capacity(structure.n_columns());
    matrix.push_column(&vec![1.0; n]);
    sources.push(ColumnSource::Intercept);

    for tree in structure.trees() {
        let j = tree.predictor();
        let leaf_ids: Vec<NodeId> = tree.leaves().iter().map(|l| l.id).collect();
        let mut slot = vec![usize::MAX; tree.nodes().len()];
        for (k, &id) in leaf_ids.iter().enumerate() {
            slot[id] = k;
        }
        let mut cols = vec![vec![0.0; n]; leaf_ids.len()];
        let mut counts = vec![0usize; leaf_ids.len()];
        let xj = &columns[j].values;
        for i in 0..n {
            let k = slot[tree.leaf_for(|m| columns[m].values[i])];
            cols[k][i] = xj[i];
            counts[k] += 1;
        }
        for (k, col) in cols.iter().enumerate() {
            if counts[k] == 0 {
                return Err(ModelError::EmptyLeaf { predictor: j, node: leaf_ids[k] });
            }
            matrix.push_column(col);
            sources.push(ColumnSource::Leaf { predictor: j, node: leaf_ids[k] });
        }
    }
    for &l in structure.linear_terms() {
        matrix.push_column(&columns[l].values);
        sources.push(ColumnSource::Linear { predictor: l });
    }
    Ok(Design { matrix, sources })
}

/// Fit a structure on data; returns the design alongside the GLM fit.
pub fn fit_structure(structure: &ModelStructure, data: &Dataset, family: Family, opts: &GlmOptions) -> Result<(Design, GlmFit), ModelError> {
    let design = build_design(structure, data)?;
    let fit = fit_glm(&design.matrix, data.response(), family, opts)?;
    Ok((design, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTerm {
    pub predictor: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorInfo {
    pub name: String,
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(with = "finite")]
    pub deviance: f64,
    #[serde(with = "finite")]
    pub log_likelihood: f64,
    #[serde(with = "finite")]
    pub aic: f64,
    /// Design columns of the final model (intercept + leaves + linear terms).
    pub n_coefficients: usize,
    pub converged: bool,
    pub boundary: bool,
    pub ridged: bool,
    pub max_splits_reached: bool,
    pub split_history: Vec<SplitRecord>,
    pub screen: Vec<ScreenRecord>,
}

/// Fitted tree-structured varying-coefficient model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsvcModel {
    pub family: Family,
    pub predictors: Vec<PredictorInfo>,
    pub intercept: f64,
    /// Predictors with varying coefficients (the set V), ascending.
    pub trees: Vec<CoefficientTree>,
    /// Predictors with a constant coefficient (the set L), ascending.
    pub linear: Vec<LinearTerm>,
    /// Predictors removed from the model, ascending.
    pub excluded: Vec<usize>,
    pub diagnostics: Diagnostics,
}

impl TsvcModel {
    /// Write the fitted coefficients back into the structure.
    pub fn assemble(
        structure: &ModelStructure,
        design: &Design,
        fit: &GlmFit,
        data: &Dataset,
        family: Family,
        diagnostics: Diagnostics,
    ) -> Result<Self, ModelError> {
        let mut trees = structure.trees().to_vec();
        let mut linear = Vec::new();
        let mut intercept = 0.0;
        for (src, &b) in design.sources.iter().zip(&fit.coefficients) {
            match *src {
                ColumnSource::Intercept => intercept = b,
                ColumnSource::Leaf { predictor, node } => {
                    let tree = trees.iter_mut().find(|t| t.predictor() == predictor).ok_or(ModelError::InvalidStructure("design/tree mismatch"))?;
                    tree.set_leaf_coefficient(node, b)?;
                }
                ColumnSource::Linear { predictor } => linear.push(LinearTerm { predictor, coefficient: b }),
            }
        }
        let excluded = (0..data.p()).filter(|&j| !structure.contains(j)).collect();
        let predictors = data
            .columns()
            .iter()
            .map(|c| PredictorInfo {
                name: c.name.clone(),
                scale: c.scale,
            })
            .collect();
        let model = Self {
            family,
            predictors,
            intercept,
            trees,
            linear,
            excluded,
            diagnostics: Diagnostics {
                deviance: fit.deviance,
                log_likelihood: fit.log_likelihood,
                aic: fit.aic,
                n_coefficients: design.sources.len(),
                converged: fit.converged,
                boundary: fit.boundary,
                ridged: fit.ridged,
                ..diagnostics
            },
        };
        model.check_invariants()?;
        Ok(model)
    }

    pub fn p(&self) -> usize {
        self.predictors.len()
    }

    pub fn tree(&self, predictor: usize) -> Option<&CoefficientTree> {
        self.trees.iter().find(|t| t.predictor() == predictor)
    }

    pub fn linear_coefficient(&self, predictor: usize) -> Option<f64> {
        self.linear.iter().find(|l| l.predictor == predictor).map(|l| l.coefficient)
    }

    /// Predictors with a tree (V).
    pub fn varying(&self) -> Vec<usize> {
        self.trees.iter().map(|t| t.predictor()).collect()
    }

    /// Union of all effect modifiers (M).
    pub fn modifiers(&self) -> BTreeSet<usize> {
        self.trees.iter().flat_map(|t| t.modifiers()).collect()
    }

    /// Predictors present in the model with a tree or a linear term.
    pub fn included(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.varying();
        v.extend(self.linear.iter().map(|l| l.predictor));
        v.sort_unstable();
        v
    }

    pub fn structure(&self) -> ModelStructure {
        ModelStructure {
            trees: self.trees.clone(),
            linear: self.linear.iter().map(|l| l.predictor).collect(),
        }
    }

    /// V, L and excluded partition the predictors, and every modifier keeps
    /// a main effect.
    pub fn check_invariants(&self) -> Result<(), ModelError> {
        let p = self.p();
        let mut seen = vec![0u8; p];
        let ids = self
            .trees
            .iter()
            .map(|t| t.predictor())
            .chain(self.linear.iter().map(|l| l.predictor))
            .chain(self.excluded.iter().copied());
        for j in ids {
            if j >= p {
                return Err(DataError::InvalidIndex { index: j, p }.into());
            }
            seen[j] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(ModelError::InvalidStructure("trees, linear terms and exclusions must partition the predictors"));
        }
        for t in &self.trees {
            t.validate()?;
            for m in t.modifiers() {
                if m >= p {
                    return Err(DataError::InvalidIndex { index: m, p }.into());
                }
                if self.excluded.contains(&m) {
                    return Err(ModelError::InvalidStructure("effect modifier without a main effect"));
                }
            }
        }
        Ok(())
    }

    /// Linear predictor of one row, evaluated term by term by walking trees.
    pub fn eta_row<F: Fn(usize) -> f64>(&self, x: F) -> f64 {
        let mut eta = self.intercept;
        for t in &self.trees {
            eta += x(t.predictor()) * t.coefficient_for(&x);
        }
        for l in &self.linear {
            eta += x(l.predictor) * l.coefficient;
        }
        eta
    }

    /// Coefficient vector aligned with [`build_design`] on [`Self::structure`].
    pub fn coefficient_vector(&self) -> Vec<f64> {
        let mut out = vec![self.intercept];
        for t in &self.trees {
            for leaf in t.leaves() {
                out.push(leaf.coefficient);
            }
        }
        out.extend(self.linear.iter().map(|l| l.coefficient));
        out
    }

    fn check_schema(&self, columns: &[Column]) -> Result<(), ModelError> {
        if columns.len() != self.p() {
            return Err(ModelError::SchemaMismatch(alloc::format!(
                "model has {} predictors, data has {} columns",
                self.p(),
                columns.len()
            )));
        }
        for (c, info) in columns.iter().zip(&self.predictors) {
            if c.name != info.name {
                return Err(ModelError::SchemaMismatch(alloc::format!("expected column `{}`, found `{}`", info.name, c.name)));
            }
        }
        Ok(())
    }
}

/// Linear predictor for covariate columns matching the model's schema.
pub fn linear_predictor(model: &TsvcModel, columns: &[Column]) -> Result<Vec<f64>, ModelError> {
    model.check_schema(columns)?;
    let n = columns.first().map_or(0, |c| c.values.len());
    crate::data::validate_columns(columns, n)?;
    Ok((0..n).map(|i| model.eta_row(|k| columns[k].values[i])).collect())
}

/// Fitted means on the response scale.
pub fn predict(model: &TsvcModel, data: &Dataset) -> Result<Vec<f64>, ModelError> {
    predict_columns(model, data.columns())
}

pub fn predict_columns(model: &TsvcModel, columns: &[Column]) -> Result<Vec<f64>, ModelError> {
    let eta = linear_predictor(model, columns)?;
    Ok(eta.into_iter().map(|e| model.family.inverse_link(e)).collect())
}

/// Leaf of `tree` holding each row; exposed for diagnostics.
pub fn leaf_assignment(tree: &CoefficientTree, data: &Dataset) -> Vec<NodeId> {
    (0..data.n()).map(|i| tree.leaf_for(|m| data.values(m)[i])).collect()
}

/// Coefficient of each leaf of `tree`.
pub fn leaf_coefficients(tree: &CoefficientTree) -> Vec<(NodeId, f64)> {
    tree.nodes()
        .iter()
        .enumerate()
        .filter_map(|(id, n)| match n {
            TreeNode::Leaf { coefficient } => Some((id, *coefficient)),
            TreeNode::Split { .. } => None,
        })
        .collect()
}

/// Non-finite floats round-trip through JSON as `null`.
mod finite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
