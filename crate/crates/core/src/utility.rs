//! The KLD utility and its Monte Carlo expectation over the prior predictive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::gaussian::GaussianApprox;
use crate::inference::{joint_posterior, laplace_b_given_theta, laplace_theta, LaplaceSettings};
use crate::model::HierarchicalModel;
use crate::rng::{substream, Domain};
use crate::simulate::TimeDesign;

/// `KL(post || prior)` between two multivariate Normals.
///
/// Uses Cholesky factors throughout: the trace term is `||L0^-1 L1||_F^2` and
/// the quadratic term `||L0^-1 (mu0 - mu1)||^2`.
pub fn kld_mvn(prior: &GaussianApprox, post: &GaussianApprox) -> Result<f64> {
    let m = prior.dim();
    if post.dim() != m {
        return config(format!("KLD between dimensions {m} and {}", post.dim()));
    }
    if m == 0 {
        return Ok(0.0);
    }
    let l0 = prior.cholesky()?;
    let l1 = post.cholesky()?;
    let l0m = l0.l();
    let l1m = l1.l();
    let a = l0m
        .solve_lower_triangular(&l1m)
        .ok_or_else(|| Error::NotPositiveDefinite("singular prior factor".into()))?;
    let diff = prior.mean() - post.mean();
    let z = l0m
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::NotPositiveDefinite("singular prior factor".into()))?;
    let log_det = |l: &nalgebra::DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let kl = 0.5 * (a.norm_squared() + z.norm_squared() - m as f64 - (log_det(&l1m) - log_det(&l0m)));
    if !kl.is_finite() {
        return Err(Error::Evaluation(format!("KLD evaluated to {kl}")));
    }
    Ok(kl)
}

/// Monte Carlo estimate of the expected utility of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub estimate: f64,
    pub std_error: f64,
    #[serde(rename = "L")]
    pub l: usize,
    /// Utility of each sample, `None` where the inner inference failed.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_sample: Vec<Option<f64>>,
    pub failures: usize,
}

/// Sum with a fixed binary-tree order, so the result does not depend on
/// how the terms were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Utility of one prior-predictive sample: draw `(theta, b)`, simulate, fit,
/// and score the joint posterior against the prior moments.
pub fn sample_utility<M: HierarchicalModel>(
    model: &M,
    design: &TimeDesign,
    settings: &LaplaceSettings,
    seed: u64,
    index: u64,
) -> Result<f64> {
    let mut rng = substream(seed, Domain::Sample, index);
    let (theta, effects) = model.sample_prior(&mut rng)?;
    let data = model.simulate(design, &theta, &effects, &mut rng)?;
    let mut crn = substream(seed, Domain::Inference, index);
    let theta_fit = laplace_theta(model, &data, settings, &mut crn)?;
    let theta_star: Vec<f64> = theta_fit.posterior.mean().iter().copied().collect();
    let b_fit = laplace_b_given_theta(model, &data, &theta_star, settings)?;
    let joint = joint_posterior(&theta_fit.posterior, &b_fit.posterior)?;
    kld_mvn(model.prior_moments(), &joint)
}

/// Expected KLD utility of `design` from `l` prior-predictive samples.
///
/// Sample `i` draws from substreams keyed by `(seed, i)`, so the result is the
/// same for any number of worker threads. Runs on the current rayon pool.
pub fn expected_utility<M: HierarchicalModel>(
    model: &M,
    design: &TimeDesign,
    settings: &LaplaceSettings,
    l: usize,
    seed: u64,
) -> Result<UtilityEstimate> {
    if l < 2 {
        return config(format!("L must be at least 2, got {l}"));
    }
    settings.validate()?;
    model.check_design(design)?;
    let per_sample: Vec<Option<f64>> = (0..l as u64)
        .into_par_iter()
        .map(|i| match sample_utility(model, design, settings, seed, i) {
            Ok(u) => Some(u),
            Err(e) => {
                log::debug!("sample {i} dropped: {e}");
                None
            }
        })
        .collect();
    summarize(per_sample)
}

/// Mean and standard error over the successful samples.
pub fn summarize(per_sample: Vec<Option<f64>>) -> Result<UtilityEstimate> {
    let l = per_sample.len();
    let ok: Vec<f64> = per_sample.iter().flatten().copied().collect();
    let failures = l - ok.len();
    if ok.is_empty() {
        return Err(Error::Estimation(format!("all {l} samples failed")));
    }
    if failures * 20 > l {
        log::warn!("{failures} of {l} samples failed inner inference");
    }
    let n = ok.len() as f64;
    let mean = pairwise_sum(&ok) / n;
    let dev: Vec<f64> = ok.iter().map(|u| (u - mean).powi(2)).collect();
    let std_error = if ok.len() > 1 {
        (pairwise_sum(&dev) / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(UtilityEstimate { estimate: mean, std_error, l, per_sample, failures })
}
