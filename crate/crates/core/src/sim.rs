//! Simulation scenarios with known varying-coefficient structure and the
//! detection rates used to score fits against them.
//!
//! All scenarios are gaussian with intercept 0.2 and remaining coefficients
//! 0.4; `x1, x2 ~ N(0, 1)` and `x3, x4 ~ Bernoulli(0.5)`. Predictor indices
//! below are 0-based (`x1` is index 0).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{fit_tsvc, FitConfig, FitError};
use crate::data::{Column, Dataset};
use crate::glm::Family;
use crate::model::TsvcModel;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid scenario settings: {0}")]
    InvalidSpec(&'static str),
    #[error("{fits} fits but {truths} truths")]
    LengthMismatch { fits: usize, truths: usize },
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    /// Linear model, no varying coefficients.
    #[serde(rename = "1")]
    S1,
    /// `x1 * atan(x2) + x2 * atan(x1)`.
    #[serde(rename = "2")]
    S2,
    /// `x3` modified by `x4` and vice versa, through binary splits.
    #[serde(rename = "3")]
    S3,
    /// As 3 plus four irrelevant predictors.
    #[serde(rename = "4")]
    S4,
    /// As 3 with `x2` as a second modifier of both trees.
    #[serde(rename = "5")]
    S5,
    /// Two-level trees for `x1` (by `x2`, `x3`) and `x2` (by `x1`, `x4`), n = 400.
    Illustrative,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [Self::S1, Self::S2, Self::S3, Self::S4, Self::S5, Self::Illustrative];

    pub fn name(self) -> &'static str {
        match self {
            Self::S1 => "1",
            Self::S2 => "2",
            Self::S3 => "3",
            Self::S4 => "4",
            Self::S5 => "5",
            Self::Illustrative => "illustrative",
        }
    }

    pub fn p(self) -> usize {
        match self {
            Self::S4 => 8,
            _ => 4,
        }
    }

    fn code(self) -> u64 {
        match self {
            Self::S1 => 1,
            Self::S2 => 2,
            Self::S3 => 3,
            Self::S4 => 4,
            Self::S5 => 5,
            Self::Illustrative => 6,
        }
    }

    /// True `(predictor, modifier)` pairs.
    pub fn true_pairs(self) -> &'static [(usize, usize)] {
        match self {
            Self::S1 => &[],
            Self::S2 => &[(0, 1), (1, 0)],
            Self::S3 | Self::S4 => &[(2, 3), (3, 2)],
            Self::S5 => &[(2, 3), (2, 1), (3, 2), (3, 1)],
            Self::Illustrative => &[(0, 1), (0, 2), (1, 0), (1, 3)],
        }
    }

    pub fn truth(self) -> Truth {
        let p = self.p();
        let mut varying = vec![false; p];
        let mut pairs = vec![vec![false; p]; p];
        for &(j, m) in self.true_pairs() {
            varying[j] = true;
            pairs[j][m] = true;
        }
        Truth { varying, pairs }
    }

    /// Mean of the response given one row of covariates.
    pub fn mean(self, x: &[f64]) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        let b0 = 0.2;
        let b = 0.4;
        match self {
            Self::S1 => b0 + b * (x[0] + x[1] + x[2] + x[3]),
            Self::S2 => b0 + x[0] * libm::atan(x[1]) + x[1] * libm::atan(x[0]) + b * (x[2] + x[3]),
            Self::S3 | Self::S4 => {
                let tr3 = b + 0.4 * ind(x[3] == 0.0);
                let tr4 = b + 0.4 * ind(x[2] == 0.0);
                b0 + b * (x[0] + x[1]) + x[2] * tr3 + x[3] * tr4
            }
            Self::S5 => {
                let tr3 = b + 0.4 * ind(x[3] == 0.0) + 0.4 * ind(x[3] == 0.0 && x[1] > 0.0);
                let tr4 = b + 0.4 * ind(x[2] == 0.0) + 0.4 * ind(x[2] == 0.0 && x[1] > 0.0);
                b0 + b * (x[0] + x[1]) + x[2] * tr3 + x[3] * tr4
            }
            Self::Illustrative => {
                let tr1 = b + 0.6 * ind(x[1] > 0.2) + 0.6 * ind(x[1] > 0.2 && x[2] == 1.0);
                let tr2 = b + 0.6 * ind(x[0] > -0.2) + 0.6 * ind(x[0] > -0.2 && x[3] == 1.0);
                b0 + x[0] * tr1 + x[1] * tr2 + b * (x[2] + x[3])
            }
        }
    }

    /// Whether predictor `j` is drawn from N(0, 1) (otherwise Bernoulli(0.5)).
    pub fn is_continuous(self, j: usize) -> bool {
        matches!(j, 0 | 1 | 4 | 5)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.trim_start_matches("scenario").trim_start_matches('s').trim_start_matches(['-', '_', ' ']);
        match t {
            "1" => Ok(Self::S1),
            "2" => Ok(Self::S2),
            "3" => Ok(Self::S3),
            "4" => Ok(Self::S4),
            "5" => Ok(Self::S5),
            "illustrative" | "ill" | "0" => Ok(Self::Illustrative),
            _ => Err(SimError::UnknownScenario(s.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: usize,
    pub sigma: f64,
    pub n_reps: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::InvalidSpec("n must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(SimError::InvalidSpec("sigma must be positive"));
        }
        Ok(())
    }

    /// Setting of the illustrative example: n = 400, unit noise.
    pub fn illustrative(seed: u64) -> Self {
        Self {
            id: ScenarioId::Illustrative,
            n: 400,
            sigma: 1.0,
            n_reps: 1,
            seed,
        }
    }
}

/// True varying structure: `varying[j]` and `pairs[j][m]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub varying: Vec<bool>,
    pub pairs: Vec<Vec<bool>>,
}

/// Draw replicate `rep` of a scenario. Noise is a standard normal scaled by
/// `sigma`, so settings differing only in `sigma` share covariates and
/// noise draws.
pub fn generate(spec: &ScenarioSpec, rep: usize) -> Result<(Dataset, Truth), SimError> {
    spec.validate()?;
    let id = spec.id;
    let p = id.p();
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[id.code(), n as u64, rep as u64]));
    let mut columns = Vec::with_capacity(p);
    for j in 0..p {
        let values: Vec<f64> = if id.is_continuous(j) {
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        } else {
            (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()
        };
        let name = format!("x{}", j + 1);
        columns.push(if id.is_continuous(j) {
            Column::continuous(name, values)
        } else {
            Column::binary(name, values)
        });
    }
    let mut row = vec![0.0; p];
    let y = (0..n)
        .map(|i| {
            for (r, c) in row.iter_mut().zip(&columns) {
                *r = c.values[i];
            }
            let eps: f64 = StandardNormal.sample(&mut rng);
            id.mean(&row) + spec.sigma * eps
        })
        .collect();
    let data = Dataset::new(columns, y).map_err(|_| SimError::InvalidSpec("generated data failed validation"))?;
    Ok((data, id.truth()))
}

/// Sample R^2 of the true mean: `var(mu) / var(y)`.
pub fn r_squared(data: &Dataset, id: ScenarioId) -> f64 {
    let n = data.n();
    let mu: Vec<f64> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..data.p()).map(|j| data.values(j)[i]).collect();
            id.mean(&row)
        })
        .collect();
    variance(&mu) / variance(data.response())
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// What a fitted model claims about the structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub varying: Vec<bool>,
    pub pairs: Vec<Vec<bool>>,
    /// Predictor is in the model as a tree or a linear term.
    pub included: Vec<bool>,
}

impl Detection {
    pub fn from_model(model: &TsvcModel) -> Self {
        let p = model.p();
        let mut varying = vec![false; p];
        let mut pairs = vec![vec![false; p]; p];
        for t in &model.trees {
            varying[t.predictor()] = true;
            for m in t.modifiers() {
                pairs[t.predictor()][m] = true;
            }
        }
        let mut included = vec![false; p];
        for j in model.included() {
            included[j] = true;
        }
        Self { varying, pairs, included }
    }
}

/// Detection rates averaged over replications; a rate whose denominator is
/// empty for the scenario is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub tpr_c: Option<f64>,
    pub fpr_c: Option<f64>,
    pub tpr_cm: Option<f64>,
    pub fpr_cm: Option<f64>,
    pub poc: f64,
    pub n_reps: usize,
}

impl EvalResult {
    /// `(metric name, value)` in table order.
    pub fn metrics(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("tpr_c", self.tpr_c),
            ("fpr_c", self.fpr_c),
            ("tpr_cm", self.tpr_cm),
            ("fpr_cm", self.fpr_cm),
            ("poc", Some(self.poc)),
        ]
    }
}

pub fn evaluate(fits: &[TsvcModel], truths: &[Truth]) -> Result<EvalResult, SimError> {
    let detections: Vec<Detection> = fits.iter().map(Detection::from_model).collect();
    evaluate_detections(&detections, truths)
}

pub fn evaluate_detections(detections: &[Detection], truths: &[Truth]) -> Result<EvalResult, SimError> {
    if detections.len() != truths.len() {
        return Err(SimError::LengthMismatch {
            fits: detections.len(),
            truths: truths.len(),
        });
    }
    #[derive(Default)]
    struct Mean {
        sum: f64,
        count: usize,
    }
    impl Mean {
        fn add(&mut self, hits: usize, total: usize) {
            if total > 0 {
                self.sum += hits as f64 / total as f64;
                self.count += 1;
            }
        }
        fn get(&self) -> Option<f64> {
            (self.count > 0).then(|| self.sum / self.count as f64)
        }
    }
    let (mut tpr_c, mut fpr_c, mut tpr_cm, mut fpr_cm, mut poc) = (Mean::default(), Mean::default(), Mean::default(), Mean::default(), Mean::default());
    for (d, t) in detections.iter().zip(truths) {
        let p = t.varying.len();
        let (mut tp, mut pos, mut fp, mut neg) = (0, 0, 0, 0);
        for j in 0..p {
            if t.varying[j] {
                pos += 1;
                tp += usize::from(d.varying[j]);
            } else {
                neg += 1;
                fp += usize::from(d.varying[j]);
            }
        }
        tpr_c.add(tp, pos);
        fpr_c.add(fp, neg);
        let (mut tp, mut pos, mut fp, mut neg) = (0, 0, 0, 0);
        for j in 0..p {
            for m in (0..p).filter(|&m| m != j) {
                if t.pairs[j][m] {
                    pos += 1;
                    tp += usize::from(d.pairs[j][m]);
                } else {
                    neg += 1;
                    fp += usize::from(d.pairs[j][m]);
                }
            }
        }
        tpr_cm.add(tp, pos);
        fpr_cm.add(fp, neg);
        poc.add(d.included.iter().filter(|&&b| b).count(), p);
    }
    Ok(EvalResult {
        tpr_c: tpr_c.get(),
        fpr_c: fpr_c.get(),
        tpr_cm: tpr_cm.get(),
        fpr_cm: fpr_cm.get(),
        poc: poc.get().unwrap_or(0.0),
        n_reps: detections.len(),
    })
}

/// Replication budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 50 replications, 500 permutations.
    Desk,
    /// 100 replications, 1000 permutations.
    Full,
}

impl Preset {
    pub fn n_reps(self) -> usize {
        match self {
            Preset::Desk => 50,
            Preset::Full => 100,
        }
    }

    pub fn n_perm(self) -> usize {
        match self {
            Preset::Desk => 500,
            Preset::Full => 1000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }

    /// Sample sizes and noise levels of the full grid.
    pub fn grid() -> (&'static [usize], &'static [f64]) {
        (&[100, 250, 500], &[1.0, 1.5, 2.0])
    }
}

impl FromStr for Preset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(SimError::InvalidSpec("preset must be `desk` or `full`")),
        }
    }
}

/// Generate replicate `rep` and fit it. The fit seed is derived from the
/// spec's seed so replicates are independent of each other and of order.
pub fn run_replicate(spec: &ScenarioSpec, rep: usize, config: &FitConfig) -> Result<(TsvcModel, Truth), SimError> {
    let (data, truth) = generate(spec, rep)?;
    let config = FitConfig {
        seed: derive_seed(spec.seed, &[spec.id.code(), spec.n as u64, rep as u64, 0xF17]),
        ..config.clone()
    };
    let model = fit_tsvc(&data, Family::gaussian(), &config)?;
    Ok((model, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: ScenarioId, n: usize, sigma: f64) -> ScenarioSpec {
        ScenarioSpec { id, n, sigma, n_reps: 1, seed: 42 }
    }

    #[test]
    fn truth_tables() {
        let t = ScenarioId::S1.truth();
        assert!(t.varying.iter().all(|&v| !v));
        let t = ScenarioId::S3.truth();
        assert_eq!(t.varying, vec![false, false, true, true]);
        assert!(t.pairs[2][3] && t.pairs[3][2]);
        assert_eq!(t.pairs.iter().flatten().filter(|&&b| b).count(), 2);
        assert_eq!(ScenarioId::S4.truth().varying.len(), 8);
    }

    #[test]
    fn generation_is_deterministic_and_shares_noise() {
        let (a, _) = generate(&spec(ScenarioId::S2, 50, 1.0), 3).unwrap();
        let (b, _) = generate(&spec(ScenarioId::S2, 50, 1.0), 3).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&spec(ScenarioId::S2, 50, 2.0), 3).unwrap();
        assert_eq!(a.values(0), c.values(0));
        for i in 0..50 {
            let row: Vec<f64> = (0..4).map(|j| a.values(j)[i]).collect();
            let mu = ScenarioId::S2.mean(&row);
            assert!(((c.response()[i] - mu) - 2.0 * (a.response()[i] - mu)).abs() < 1e-12);
        }
    }

    #[test]
    fn scenario_one_signal_strength() {
        let (d, _) = generate(&spec(ScenarioId::S1, 200_000, 1.0), 0).unwrap();
        assert!((r_squared(&d, ScenarioId::S1) - 0.4 / 1.4).abs() < 0.01);
    }

    #[test]
    fn rates_for_perfect_and_empty_detections() {
        let t = ScenarioId::S3.truth();
        let perfect = Detection {
            varying: t.varying.clone(),
            pairs: t.pairs.clone(),
            included: vec![true; 4],
        };
        let r = evaluate_detections(&[perfect], &[t.clone()]).unwrap();
        assert_eq!((r.tpr_c, r.fpr_c, r.tpr_cm, r.fpr_cm, r.poc), (Some(1.0), Some(0.0), Some(1.0), Some(0.0), 1.0));
        let s1 = ScenarioId::S1.truth();
        let none = Detection {
            varying: vec![false; 4],
            pairs: vec![vec![false; 4]; 4],
            included: vec![true, true, false, false],
        };
        let r = evaluate_detections(&[none], &[s1]).unwrap();
        assert_eq!(r.tpr_c, None);
        assert_eq!(r.fpr_c, Some(0.0));
        assert_eq!(r.poc, 0.5);
        assert!(matches!(evaluate_detections(&[], &[t]), Err(SimError::LengthMismatch { .. })));
    }

    #[test]
    fn parse_ids() {
        assert_eq!("3".parse::<ScenarioId>().unwrap(), ScenarioId::S3);
        assert_eq!("scenario5".parse::<ScenarioId>().unwrap(), ScenarioId::S5);
        assert_eq!("Illustrative".parse::<ScenarioId>().unwrap(), ScenarioId::Illustrative);
        assert!("9".parse::<ScenarioId>().is_err());
    }
}
