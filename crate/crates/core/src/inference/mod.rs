//! Two-stage Laplace approximation of the joint posterior of `(theta, b)`.
//!
//! Stage one finds the mode of `log p(y | theta) + log p(theta)`, where the
//! marginal likelihood integrates the random effects by Monte Carlo with a
//! fixed set of standard-normal draws (common random numbers), so the
//! objective is a deterministic smooth function of `theta`. Stage two fixes
//! `theta*` and approximates `p(b | y, theta*)`. The joint posterior is the
//! block-diagonal combination of the two.

mod hessian;
mod simplex;

pub use hessian::{fd_derivatives, finite_diff_hessian, spd_inverse, spd_repair, FdDerivatives};
pub use simplex::{nelder_mead, SimplexResult};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::gaussian::GaussianApprox;
use crate::model::HierarchicalModel;
use crate::rng::SimRng;
use crate::simulate::Dataset;

/// Knobs of the Laplace fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplaceSettings {
    /// Simplex starts: the prior mean, then prior draws.
    pub restarts: usize,
    /// Iteration cap per simplex run.
    pub max_iter: usize,
    /// Convergence tolerance on the objective.
    pub tol: f64,
    /// Finite-difference step scale.
    pub h: f64,
    /// Eigenvalue floor used when repairing negative Hessians.
    pub spd_floor: f64,
    /// Monte Carlo draws of the random effects in the marginal likelihood.
    pub mc_draws: usize,
    /// Newton refinement steps after the simplex search.
    pub newton_steps: usize,
}

impl Default for LaplaceSettings {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_iter: 2000,
            tol: 1e-8,
            h: 1e-4,
            spd_floor: 1e-8,
            mc_draws: 100,
            newton_steps: 20,
        }
    }
}

impl LaplaceSettings {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iter == 0 || self.mc_draws == 0 {
            return config("restarts, max_iter and mc_draws must be at least 1");
        }
        for (name, v) in [("tol", self.tol), ("h", self.h), ("spd_floor", self.spd_floor)] {
            if !(v > 0.0 && v.is_finite()) {
                return config(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Result of one Laplace fit.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub posterior: GaussianApprox,
    /// Objective at the mode.
    pub objective: f64,
    /// Eigenvalues raised to the floor while repairing the negative Hessian.
    pub floored: usize,
    pub evaluations: usize,
}

impl LaplaceFit {
    /// Whether the negative Hessian needed repair.
    pub fn repaired(&self) -> bool {
        self.floored > 0
    }
}

/// Fixed standard-normal draws `z_e` (row-major, `count x dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectDraws {
    dim: usize,
    values: Vec<f64>,
}

impl EffectDraws {
    pub fn standard(count: usize, dim: usize, rng: &mut SimRng) -> Self {
        let values = StandardNormal.sample_iter(rng).take(count * dim).collect();
        Self { dim, values }
    }

    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1))
    }
}

/// Monte Carlo estimate of `log p(y | theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalLikelihood {
    pub value: f64,
    /// Every draw had zero likelihood; `value` is `-inf`.
    pub underflow: bool,
}

/// `log p(y | theta, b)` after checking that the dataset fits the model.
pub fn log_likelihood_conditional<M: HierarchicalModel>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    effects: &[f64],
) -> Result<f64> {
    check_dims(model, theta, Some(effects))?;
    model.check_dataset(data)?;
    let ll = model.log_likelihood(data, theta, effects)?;
    if ll.is_infinite() && ll > 0.0 {
        return Err(Error::Evaluation("log-likelihood is +inf".into()));
    }
    Ok(ll)
}

fn check_dims<M: HierarchicalModel>(model: &M, theta: &[f64], effects: Option<&[f64]>) -> Result<()> {
    if theta.len() != model.theta_dim() {
        return config(format!("theta has {} entries, model expects {}", theta.len(), model.theta_dim()));
    }
    if let Some(b) = effects {
        if b.len() != model.effects_dim() {
            return config(format!("b has {} entries, model expects {}", b.len(), model.effects_dim()));
        }
    }
    Ok(())
}

/// `log` of the mean of `exp(lls)`, with a max shift.
pub fn log_mean_exp(lls: &[f64]) -> MarginalLikelihood {
    let max = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return MarginalLikelihood { value: f64::NEG_INFINITY, underflow: true };
    }
    let sum: f64 = lls.iter().map(|l| (l - max).exp()).sum();
    MarginalLikelihood { value: max + (sum / lls.len() as f64).ln(), underflow: false }
}

/// Generic Monte Carlo marginal likelihood: one full likelihood call per draw.
pub fn marginal_by_draws<'a, M: HierarchicalModel + ?Sized>(
    model: &'a M,
    data: &'a Dataset,
    draws: &'a EffectDraws,
) -> impl FnMut(&[f64]) -> Result<MarginalLikelihood> + 'a {
    let q = model.effects_dim();
    let mut sds = vec![0.0; q];
    let mut b = vec![0.0; q];
    let mut lls = Vec::with_capacity(draws.count());
    move |theta| {
        if q == 0 {
            let value = model.log_likelihood(data, theta, &[])?;
            return Ok(MarginalLikelihood { value, underflow: value == f64::NEG_INFINITY });
        }
        model.effect_sds(theta, &mut sds);
        lls.clear();
        for z in draws.rows() {
            for ((bi, zi), si) in b.iter_mut().zip(z).zip(&sds) {
                *bi = si * zi;
            }
            lls.push(model.log_likelihood(data, theta, &b)?);
        }
        Ok(log_mean_exp(&lls))
    }
}

/// `log (1/E) sum_e p(y | theta, b_e)` with `b_e = sd(theta) * z_e`, evaluated
/// with a max shift.
pub fn log_marginal_likelihood_mc<M: HierarchicalModel>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    draws: &EffectDraws,
) -> Result<MarginalLikelihood> {
    check_dims(model, theta, None)?;
    model.check_dataset(data)?;
    if model.effects_dim() > 0 && (draws.dim() != model.effects_dim() || draws.count() == 0) {
        return config(format!(
            "need at least one draw of dimension {}, got {} of dimension {}",
            model.effects_dim(),
            draws.count(),
            draws.dim()
        ));
    }
    model.marginal_evaluator(data, draws)(theta)
}

/// Damped Newton ascent on `f` using finite-difference derivatives.
///
/// Returns the final point and the derivatives evaluated there.
fn newton_ascent<F>(
    mut f: F,
    mut x: Vec<f64>,
    settings: &LaplaceSettings,
    max_steps: usize,
    evaluations: &mut usize,
) -> Result<(Vec<f64>, FdDerivatives)>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut derivs = fd_derivatives(&mut f, &x, settings.h)?;
    *evaluations += derivs.evaluations;
    for _ in 0..max_steps {
        let neg = -&derivs.hessian;
        let (precision, _) = spd_repair(&neg, settings.spd_floor);
        let Some(chol) = precision.cholesky() else { break };
        let step = chol.solve(&derivs.gradient);
        let f0 = derivs.value;
        // Newton decrement: predicted gain of the full step. Only skip the
        // step when the gain is at rounding level; one step is exact on a quadratic.
        if 0.5 * derivs.gradient.dot(&step) <= f64::EPSILON * (1.0 + f0.abs()) {
            break;
        }
        let mut accepted = None;
        let mut alpha = 1.0;
        let mut trial = x.clone();
        for _ in 0..30 {
            for ((t, xi), s) in trial.iter_mut().zip(&x).zip(step.iter()) {
                *t = xi + alpha * s;
            }
            let ft = f(&trial);
            *evaluations += 1;
            if ft.is_finite() && ft > f0 {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }
        let Some(ft) = accepted else { break };
        x.copy_from_slice(&trial);
        derivs = fd_derivatives(&mut f, &x, settings.h)?;
        *evaluations += derivs.evaluations;
        if ft - f0 <= settings.tol * (1.0 + f0.abs()) {
            break;
        }
    }
    Ok((x, derivs))
}

fn laplace_at_mode(
    x: Vec<f64>,
    derivs: &FdDerivatives,
    settings: &LaplaceSettings,
    evaluations: usize,
) -> Result<LaplaceFit> {
    let neg = -&derivs.hessian;
    let (precision, floored) = spd_repair(&neg, settings.spd_floor);
    if floored > 0 {
        log::debug!("Laplace: floored {floored} eigenvalue(s) of the negative Hessian");
    }
    let cov = spd_inverse(&precision)?;
    let posterior = GaussianApprox::new(DVector::from_vec(x), cov)?;
    Ok(LaplaceFit { posterior, objective: derivs.value, floored, evaluations })
}

/// Laplace approximation of `p(theta | y)`.
///
/// The random-effect draws for the marginal likelihood, and the restart
/// points after the first (prior-mean) start, come from `rng`.
pub fn laplace_theta<M: HierarchicalModel>(
    model: &M,
    data: &Dataset,
    settings: &LaplaceSettings,
    rng: &mut SimRng,
) -> Result<LaplaceFit> {
    settings.validate()?;
    model.check_dataset(data)?;
    let p = model.theta_dim();
    let q = model.effects_dim();
    let draws = EffectDraws::standard(if q > 0 { settings.mc_draws } else { 0 }, q, rng);
    let mut marginal = model.marginal_evaluator(data, &draws);
    let mut objective = |theta: &[f64]| -> f64 {
        match marginal(theta) {
            Ok(ml) => ml.value + model.log_prior_theta(theta),
            Err(_) => f64::NAN,
        }
    };

    let prior = model.prior_moments();
    let start_mean: Vec<f64> = prior.mean().iter().take(p).copied().collect();
    let scale: Vec<f64> = (0..p).map(|i| prior.cov()[(i, i)].sqrt()).collect();

    let mut evaluations = 0;
    let mut best: Option<SimplexResult> = None;
    let mut any_converged = false;
    for restart in 0..settings.restarts {
        let start = if restart == 0 { start_mean.clone() } else { model.sample_theta(rng) };
        let run = nelder_mead(|x| -objective(x), &start, &scale, settings.tol, settings.max_iter);
        evaluations += run.evaluations;
        any_converged |= run.converged;
        if best.as_ref().map_or(true, |b| run.value < b.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    if !any_converged || !best.value.is_finite() {
        return Err(Error::NotConverged {
            restarts: settings.restarts,
            best: best.x,
            best_objective: -best.value,
        });
    }
    let (x, derivs) = newton_ascent(&mut objective, best.x, settings, settings.newton_steps, &mut evaluations)?;
    laplace_at_mode(x, &derivs, settings, evaluations)
}

/// Laplace approximation of `p(b | y, theta*)` with `b ~ N(0, sd(theta*)^2)`.
pub fn laplace_b_given_theta<M: HierarchicalModel>(
    model: &M,
    data: &Dataset,
    theta_star: &[f64],
    settings: &LaplaceSettings,
) -> Result<LaplaceFit> {
    settings.validate()?;
    check_dims(model, theta_star, None)?;
    model.check_dataset(data)?;
    let q = model.effects_dim();
    if q == 0 {
        return Ok(LaplaceFit { posterior: GaussianApprox::empty(), objective: 0.0, floored: 0, evaluations: 0 });
    }
    let mut conditional = model.conditional_evaluator(data, theta_star);
    let objective = |b: &[f64]| -> f64 {
        match conditional(b) {
            Ok(ll) => ll + model.log_prior_effects(theta_star, b),
            Err(_) => f64::NAN,
        }
    };
    let mut evaluations = 0;
    let max_steps = settings.newton_steps.max(1) * 2;
    let (x, derivs) = newton_ascent(objective, vec![0.0; q], settings, max_steps, &mut evaluations)?;
    laplace_at_mode(x, &derivs, settings, evaluations)
}

/// Block-diagonal joint posterior of `(theta, b)`.
pub fn joint_posterior(theta_post: &GaussianApprox, b_post: &GaussianApprox) -> Result<GaussianApprox> {
    let (p, q) = (theta_post.dim(), b_post.dim());
    let mut mean = DVector::zeros(p + q);
    mean.rows_mut(0, p).copy_from(theta_post.mean());
    mean.rows_mut(p, q).copy_from(b_post.mean());
    let mut cov = DMatrix::zeros(p + q, p + q);
    cov.view_mut((0, 0), (p, p)).copy_from(theta_post.cov());
    cov.view_mut((p, p), (q, q)).copy_from(b_post.cov());
    GaussianApprox::new(mean, cov)
}
