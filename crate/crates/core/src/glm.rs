//! Generalized linear models with canonical links, fitted by iteratively
//! reweighted least squares.
//!
//! Three families are supported: gaussian/identity, binomial/logit (0/1
//! responses) and poisson/log. AIC is `-2 loglik + 2k` where `k` counts the
//! design columns plus, for the gaussian family, the variance; the gaussian
//! log-likelihood uses the profiled variance `deviance / n`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Cholesky, Matrix};

/// Linear predictors are clamped to this magnitude for binomial fits so the
/// IRLS weights stay finite under (quasi-)separation.
pub const ETA_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Gaussian,
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

impl Distribution {
    pub fn canonical_link(self) -> Link {
        match self {
            Distribution::Gaussian => Link::Identity,
            Distribution::Binomial => Link::Logit,
            Distribution::Poisson => Link::Log,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Binomial => "binomial",
            Distribution::Poisson => "poisson",
        }
    }
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logit => "logit",
            Link::Log => "log",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distribution {
    type Err = GlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Distribution::Gaussian),
            "binomial" | "logistic" => Ok(Distribution::Binomial),
            "poisson" => Ok(Distribution::Poisson),
            _ => Err(GlmError::UnknownFamily),
        }
    }
}

/// Exponential family with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr", into = "FamilyRepr")]
pub struct Family {
    distribution: Distribution,
    link: Link,
}

#[derive(Serialize, Deserialize)]
struct FamilyRepr {
    distribution: Distribution,
    link: Link,
}

impl TryFrom<FamilyRepr> for Family {
    type Error = GlmError;

    fn try_from(r: FamilyRepr) -> Result<Self, Self::Error> {
        Family::new(r.distribution, r.link)
    }
}

impl From<Family> for FamilyRepr {
    fn from(f: Family) -> Self {
        FamilyRepr {
            distribution: f.distribution,
            link: f.link,
        }
    }
}

impl Family {
    /// Rejects any non-canonical pairing.
    pub fn new(distribution: Distribution, link: Link) -> Result<Self, GlmError> {
        if distribution.canonical_link() != link {
            return Err(GlmError::NonCanonicalLink { distribution, link });
        }
        Ok(Self { distribution, link })
    }

    pub const fn gaussian() -> Self {
        Self {
            distribution: Distribution::Gaussian,
            link: Link::Identity,
        }
    }

    pub const fn binomial() -> Self {
        Self {
            distribution: Distribution::Binomial,
            link: Link::Logit,
        }
    }

    pub const fn poisson() -> Self {
        Self {
            distribution: Distribution::Poisson,
            link: Link::Log,
        }
    }

    pub fn canonical(distribution: Distribution) -> Self {
        match distribution {
            Distribution::Gaussian => Self::gaussian(),
            Distribution::Binomial => Self::binomial(),
            Distribution::Poisson => Self::poisson(),
        }
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn is_gaussian(&self) -> bool {
        self.distribution == Distribution::Gaussian
    }

    /// Mean from linear predictor.
    #[inline]
    pub fn inverse_link(&self, eta: f64) -> f64 {
        match self.distribution {
            Distribution::Gaussian => eta,
            Distribution::Binomial => {
                let e = eta.clamp(-ETA_CAP, ETA_CAP);
                1.0 / (1.0 + libm::exp(-e))
            }
            Distribution::Poisson => libm::exp(eta),
        }
    }

    #[inline]
    pub fn link_fn(&self, mu: f64) -> f64 {
        match self.distribution {
            Distribution::Gaussian => mu,
            Distribution::Binomial => libm::log(mu / (1.0 - mu)),
            Distribution::Poisson => libm::log(mu),
        }
    }

    /// Variance function; equals the IRLS weight for canonical links.
    #[inline]
    pub fn variance(&self, mu: f64) -> f64 {
        match self.distribution {
            Distribution::Gaussian => 1.0,
            Distribution::Binomial => mu * (1.0 - mu),
            Distribution::Poisson => mu,
        }
    }

    /// Number of parameters beyond the regression coefficients.
    pub fn extra_parameters(&self) -> usize {
        match self.distribution {
            Distribution::Gaussian => 1,
            _ => 0,
        }
    }

    pub fn validate_response(&self, y: &[f64]) -> Result<(), GlmError> {
        for (index, &value) in y.iter().enumerate() {
            let ok = value.is_finite()
                && match self.distribution {
                    Distribution::Gaussian => true,
                    Distribution::Binomial => value == 0.0 || value == 1.0,
                    Distribution::Poisson => value >= 0.0 && libm::trunc(value) == value,
                };
            if !ok {
                return Err(GlmError::InvalidResponse { index, value });
            }
        }
        Ok(())
    }

    /// Contribution of one observation to the deviance.
    #[inline]
    pub fn unit_deviance(&self, y: f64, eta: f64) -> f64 {
        match self.distribution {
            Distribution::Gaussian => {
                let r = y - eta;
                r * r
            }
            Distribution::Binomial => {
                let e = eta.clamp(-ETA_CAP, ETA_CAP);
                // -2 log P(y), with log(1 + exp(.)) evaluated stably
                if y > 0.5 {
                    2.0 * softplus(-e)
                } else {
                    2.0 * softplus(e)
                }
            }
            Distribution::Poisson => {
                let mu = libm::exp(eta);
                if y > 0.0 {
                    2.0 * (y * (libm::log(y) - eta) - (y - mu))
                } else {
                    2.0 * mu
                }
            }
        }
    }

    pub fn deviance(&self, y: &[f64], eta: &[f64]) -> f64 {
        y.iter().zip(eta).map(|(&yi, &ei)| self.unit_deviance(yi, ei)).sum()
    }

    /// Maximized log-likelihood given the linear predictor and its deviance.
    pub fn log_likelihood(&self, y: &[f64], eta: &[f64], deviance: f64) -> f64 {
        match self.distribution {
            Distribution::Gaussian => {
                let n = y.len() as f64;
                let sigma2 = deviance / n;
                -0.5 * n * (libm::log(2.0 * core::f64::consts::PI * sigma2) + 1.0)
            }
            Distribution::Binomial => -0.5 * deviance,
            Distribution::Poisson => y
                .iter()
                .zip(eta)
                .map(|(&yi, &ei)| yi * ei - libm::exp(ei) - libm::lgamma(yi + 1.0))
                .sum(),
        }
    }

    pub fn aic(&self, log_likelihood: f64, n_coefficients: usize) -> f64 {
        -2.0 * log_likelihood + 2.0 * (n_coefficients + self.extra_parameters()) as f64
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub max_iter: usize,
    /// Relative deviance change `|d - d_old| / (|d| + 0.1)` at which IRLS stops.
    pub tol: f64,
    /// Pivot threshold relative to the largest pivot of the equilibrated Gram matrix.
    pub rank_tol: f64,
    /// Ridge added to the equilibrated Gram matrix when it is rank deficient;
    /// `None` turns rank deficiency into an error.
    pub ridge: Option<f64>,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            rank_tol: 1e-10,
            ridge: None,
        }
    }
}

impl GlmOptions {
    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = Some(ridge);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub deviance: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Estimates drift towards the edge of the parameter space: a binomial
    /// linear predictor sits at the clamp, or the IRLS weights degenerated
    /// on separated rows and the last full-rank iterate was kept.
    pub boundary: bool,
    /// Whether the ridge fallback was needed.
    pub ridged: bool,
    pub linear_predictor: Vec<f64>,
}

impl GlmFit {
    pub fn fitted_values(&self, family: Family) -> Vec<f64> {
        self.linear_predictor.iter().map(|&e| family.inverse_link(e)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlmError {
    #[error("design is rank deficient (column {column} is linearly dependent)")]
    RankDeficient { column: usize },
    #[error("response value {value} at row {index} is outside the family's support")]
    InvalidResponse { index: usize, value: f64 },
    #[error("{distribution} family requires its canonical link, got {link:?}")]
    NonCanonicalLink { distribution: Distribution, link: Link },
    #[error("unknown family")]
    UnknownFamily,
    #[error("design has {rows} rows but response has {response}")]
    DimensionMismatch { rows: usize, response: usize },
    #[error("{rows} observations cannot identify {cols} coefficients")]
    Underdetermined { rows: usize, cols: usize },
    #[error("IRLS produced non-finite values")]
    NonFinite,
}

/// Fit by IRLS. Non-convergence after `max_iter` is not an error: the last
/// iterate is returned with `converged == false`.
pub fn fit_glm(design: &Matrix, response: &[f64], family: Family, opts: &GlmOptions) -> Result<GlmFit, GlmError> {
    fit_glm_from(design, response, family, opts, None)
}

/// Like [`fit_glm`] but starting from the given coefficients.
pub fn fit_glm_from(
    design: &Matrix,
    response: &[f64],
    family: Family,
    opts: &GlmOptions,
    start: Option<&[f64]>,
) -> Result<GlmFit, GlmError> {
    let n = design.rows();
    let q = design.cols();
    if response.len() != n {
        return Err(GlmError::DimensionMismatch { rows: n, response: response.len() });
    }
    if n < q {
        return Err(GlmError::Underdetermined { rows: n, cols: q });
    }
    family.validate_response(response)?;

    if family.is_gaussian() {
        return fit_gaussian(design, response, family, opts);
    }

    let mut ridged = false;
    let (mut beta, mut eta, mut have_beta) = match start {
        Some(b) if b.len() == q => (b.to_vec(), design.mul_vec(b), true),
        _ => {
            let eta: Vec<f64> = response
                .iter()
                .map(|&y| match family.distribution() {
                    Distribution::Binomial => family.link_fn((y + 0.5) / 2.0),
                    _ => family.link_fn(y + 0.1),
                })
                .collect();
            (vec![0.0; q], eta, false)
        }
    };
    let mut dev_old = family.deviance(response, &eta);
    let mut converged = false;
    let mut degenerate = false;
    let mut n_iter = 0;
    let mut w = vec![0.0; n];
    let mut wz = vec![0.0; n];
    let mut eta_new = vec![0.0; n];

    for iter in 1..=opts.max_iter {
        n_iter = iter;
        for i in 0..n {
            let e = clamp_eta(family, eta[i]);
            let mu = family.inverse_link(e);
            let var = family.variance(mu).max(1e-300);
            w[i] = var;
            // w * z with z = eta + (y - mu) / var
            wz[i] = var * e + (response[i] - mu);
        }
        let gram = design.weighted_gram(&w);
        let rhs = design.tr_mul_vec(&wz);
        let chol = match Cholesky::factor(&gram, q, opts.rank_tol, None) {
            Ok(c) => c,
            Err(_) if iter > 1 && opts.ridge.is_none() => {
                // weights collapsed on (quasi-)separated rows: keep the last iterate
                log::debug!("IRLS weights degenerate after {} iterations", iter - 1);
                n_iter = iter - 1;
                degenerate = true;
                break;
            }
            Err(s) => match opts.ridge {
                Some(l) => {
                    ridged = true;
                    Cholesky::factor(&gram, q, opts.rank_tol, Some(l)).map_err(|s| GlmError::RankDeficient { column: s.column })?
                }
                None => return Err(GlmError::RankDeficient { column: s.column }),
            },
        };
        let mut beta_new = chol.solve(&rhs);
        design.mul_vec_into(&beta_new, &mut eta_new);
        let mut dev_new = family.deviance(response, &eta_new);

        let increased = |d: f64, old: f64| !d.is_finite() || d > old + 1e-12 * (old.abs() + 1.0);
        if have_beta && increased(dev_new, dev_old) {
            for _ in 0..30 {
                for (bn, b) in beta_new.iter_mut().zip(&beta) {
                    *bn = 0.5 * (*bn + *b);
                }
                design.mul_vec_into(&beta_new, &mut eta_new);
                dev_new = family.deviance(response, &eta_new);
                if !increased(dev_new, dev_old) {
                    break;
                }
            }
        }
        if !dev_new.is_finite() {
            return Err(GlmError::NonFinite);
        }
        let change = libm::fabs(dev_new - dev_old) / (libm::fabs(dev_new) + 0.1);
        beta = beta_new;
        core::mem::swap(&mut eta, &mut eta_new);
        dev_old = dev_new;
        have_beta = true;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged && !degenerate {
        log::warn!("IRLS did not converge in {} iterations", opts.max_iter);
    }
    let deviance = dev_old;
    let log_likelihood = family.log_likelihood(response, &eta, deviance);
    let boundary = degenerate || (family.distribution() == Distribution::Binomial && eta.iter().any(|e| libm::fabs(*e) >= ETA_CAP));
    Ok(GlmFit {
        aic: family.aic(log_likelihood, q),
        coefficients: beta,
        deviance,
        log_likelihood,
        n_iter,
        converged,
        boundary,
        ridged,
        linear_predictor: eta,
    })
}

#[inline]
fn clamp_eta(family: Family, eta: f64) -> f64 {
    match family.distribution() {
        Distribution::Binomial => eta.clamp(-ETA_CAP, ETA_CAP),
        _ => eta,
    }
}

fn fit_gaussian(design: &Matrix, response: &[f64], family: Family, opts: &GlmOptions) -> Result<GlmFit, GlmError> {
    let q = design.cols();
    let ones = vec![1.0; design.rows()];
    let gram = design.weighted_gram(&ones);
    let rhs = design.tr_mul_vec(response);
    let mut ridged = false;
    let chol = match Cholesky::factor(&gram, q, opts.rank_tol, None) {
        Ok(c) => c,
        Err(s) => match opts.ridge {
            Some(l) => {
                ridged = true;
                Cholesky::factor(&gram, q, opts.rank_tol, Some(l)).map_err(|s| GlmError::RankDeficient { column: s.column })?
            }
            None => return Err(GlmError::RankDeficient { column: s.column }),
        },
    };
    let beta = chol.solve(&rhs);
    let eta = design.mul_vec(&beta);
    let deviance = family.deviance(response, &eta);
    let log_likelihood = family.log_likelihood(response, &eta, deviance);
    Ok(GlmFit {
        aic: family.aic(log_likelihood, q),
        coefficients: beta,
        deviance,
        log_likelihood,
        n_iter: 1,
        converged: true,
        boundary: false,
        ridged,
        linear_predictor: eta,
    })
}
