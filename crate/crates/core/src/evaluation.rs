//! Relative efficiency under a data-generating model, prior realisation
//! curves, and a spread statistic for designs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::inference::LaplaceSettings;
use crate::model::{GrowthModel, HierarchicalModel};
use crate::rng::{substream, Domain};
use crate::simulate::TimeDesign;
use crate::utility::{expected_utility, UtilityEstimate};

/// `U(d) / U(d_star)` under one data-generating model, with both components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub ratio: f64,
    pub design: UtilityEstimate,
    pub reference: UtilityEstimate,
}

/// Relative efficiency of `d` against `d_star` under `dgm`, both evaluated
/// with the same seed. Values above 1 are reported as they come.
pub fn relative_efficiency<M: HierarchicalModel>(
    d: &TimeDesign,
    dgm: &M,
    d_star: &TimeDesign,
    laplace: &LaplaceSettings,
    l: usize,
    seed: u64,
) -> Result<Efficiency> {
    if d.len() != d_star.len() || d.protocol() != d_star.protocol() || d.fruit_count() != d_star.fruit_count() {
        return config("designs compared for efficiency must share n, protocol and fruit count");
    }
    let mut design = expected_utility(dgm, d, laplace, l, seed)?;
    let reference = expected_utility(dgm, d_star, laplace, l, seed)?;
    if !(reference.estimate > 0.0) {
        return Err(Error::Evaluation(format!(
            "reference design has non-positive expected utility {}",
            reference.estimate
        )));
    }
    let ratio = if d.times() == d_star.times() {
        // identical evaluations under common random numbers
        design = reference.clone();
        1.0
    } else {
        design.estimate / reference.estimate
    };
    Ok(Efficiency { ratio, design, reference })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationMode {
    /// Fixed effects held at their prior means; only random effects vary.
    FixFixedEffects,
    /// Fixed and random effects drawn from the prior.
    FullPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationRow {
    pub curve: usize,
    pub t: f64,
    pub y: f64,
}

/// Prior realisations of the mean curve on `t_grid`, curve-major.
///
/// Weight models are tabulated for the first fruit.
pub fn generate_realizations(
    model: &GrowthModel,
    n_curves: usize,
    t_grid: &[f64],
    mode: RealizationMode,
    seed: u64,
) -> Result<Vec<RealizationRow>> {
    let t_max = model.spec().t_max;
    if let Some(t) = t_grid.iter().find(|t| !(0.0..=t_max).contains(*t)) {
        return config(format!("grid time {t} outside [0, {t_max}]"));
    }
    let fruit = model.spec().kind.is_two_phase().then_some(0);
    let mean_theta = model.theta_prior_mean();
    let mut sds = vec![0.0; model.effects_dim()];
    model.effect_sds(&mean_theta, &mut sds);
    let mut rows = Vec::with_capacity(n_curves * t_grid.len());
    for c in 0..n_curves {
        let mut rng = substream(seed, Domain::Realize, c as u64);
        let (theta, effects) = match mode {
            RealizationMode::FullPrior => model.sample_prior(&mut rng)?,
            RealizationMode::FixFixedEffects => {
                let b = sds.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
                (mean_theta.clone(), b)
            }
        };
        for &t in t_grid {
            rows.push(RealizationRow { curve: c, t, y: model.mean(&theta, &effects, t, fruit) });
        }
    }
    Ok(rows)
}

/// Mean gap between consecutive sorted design times divided by `T / (n - 1)`:
/// 1 for an equispaced design spanning the horizon, 0 when all points coincide.
pub fn flexibility_dispersion(design: &TimeDesign) -> Result<f64> {
    let n = design.len();
    if n < 2 {
        return config(format!("dispersion needs at least 2 design points, got {n}"));
    }
    let times = design.times();
    let gaps: f64 = times.windows(2).map(|w| w[1] - w[0]).sum();
    Ok(gaps / (n - 1) as f64 / (design.t_max() / (n - 1) as f64))
}
