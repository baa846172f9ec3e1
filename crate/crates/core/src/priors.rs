//! Priors on the unconstrained scale, including the dry-matter and
//! fruit-weight presets and their four flexibility levels.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::gaussian::GaussianApprox;
use crate::growth::{GrowthModelSpec, ModelKind};
use crate::params::{EffectsVector, ParamLayout, ParamName, ParamVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Scale on which a prior entry is Normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
}

/// `name ~ N(mean, sd^2)` on the transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorEntry {
    pub name: ParamName,
    pub transform: Transform,
    pub mean: f64,
    pub sd: f64,
}

impl PriorEntry {
    pub fn normal(name: ParamName, mean: f64, sd: f64) -> Self {
        Self { name, transform: Transform::Identity, mean, sd }
    }

    /// Normal prior for `ln(value)` centred at `ln(median)`.
    pub fn log_normal(name: ParamName, median: f64, sd: f64) -> Self {
        Self { name, transform: Transform::Log, mean: median.ln(), sd }
    }
}

/// Prior for the fixed-effect block plus the random-effect scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub entries: Vec<PriorEntry>,
    /// SD of the (phase-1) spline random effects.
    #[serde(default = "one")]
    pub sigma_b_bar: f64,
    /// SD of the phase-2 spline random effects.
    #[serde(default = "one")]
    pub sigma_b2_bar: f64,
    /// SD of the per-fruit growth-rate effects.
    #[serde(default = "fruit_sd")]
    pub fruit_sd: f64,
}

fn one() -> f64 {
    1.0
}

fn fruit_sd() -> f64 {
    0.2
}

/// Flexibility ladders for the two case studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flexibility {
    VeryLow,
    Low,
    Medium,
    High,
}

impl Flexibility {
    pub const ALL: [Flexibility; 4] =
        [Flexibility::VeryLow, Flexibility::Low, Flexibility::Medium, Flexibility::High];

    /// `(sigma_b_bar, K)` for the dry-matter model.
    pub fn dry_matter(self) -> (f64, usize) {
        match self {
            Flexibility::VeryLow => (0.01, 3),
            Flexibility::Low => (0.3, 4),
            Flexibility::Medium => (7.5, 12),
            Flexibility::High => (10.0, 30),
        }
    }

    /// `(sigma_b1_bar, sigma_b2_bar, K1, K2)` for the fruit-weight model.
    pub fn fruit_weight(self) -> (f64, f64, usize, usize) {
        match self {
            Flexibility::VeryLow => (10.0, 10.0, 3, 3),
            Flexibility::Low => (20.0, 20.0, 16, 16),
            Flexibility::Medium => (60.0, 60.0, 30, 30),
            Flexibility::High => (80.0, 80.0, 40, 40),
        }
    }
}

impl PriorSpec {
    /// Dry-matter prior for `kind` with spline random-effect scale `sigma_b_bar`.
    pub fn dry_matter_2021(kind: ModelKind, sigma_b_bar: f64) -> Self {
        use ParamName::*;
        let layout = ParamLayout::for_kind(kind);
        let entries = layout
            .names()
            .iter()
            .map(|&name| match name {
                LogR => PriorEntry::log_normal(name, 0.1, 0.1),
                LogLambda => PriorEntry::log_normal(name, 0.3, 0.1),
                Beta0 => PriorEntry::normal(name, 0.1, 0.1),
                Beta1 => PriorEntry::normal(name, 0.1, 0.1),
                LogSigmaE => PriorEntry::log_normal(name, 1.0, 0.05),
                LogSigmaB => PriorEntry::log_normal(name, sigma_b_bar, 0.4),
                // Two-phase coordinates fall back to the weight preset.
                other => fruit_weight_entry(other, sigma_b_bar, sigma_b_bar),
            })
            .collect();
        Self { entries, sigma_b_bar, sigma_b2_bar: sigma_b_bar, fruit_sd: 0.2 }
    }

    /// Fruit-weight prior for `kind` with spline scales for the two phases.
    pub fn fruit_weight(kind: ModelKind, sigma_b1_bar: f64, sigma_b2_bar: f64) -> Self {
        let layout = ParamLayout::for_kind(kind);
        let entries = layout
            .names()
            .iter()
            .map(|&name| fruit_weight_entry(name, sigma_b1_bar, sigma_b2_bar))
            .collect();
        Self { entries, sigma_b_bar: sigma_b1_bar, sigma_b2_bar, fruit_sd: 0.2 }
    }

    /// Dry-matter preset at a flexibility level; returns the matching spec too.
    pub fn dry_matter_preset(kind: ModelKind, level: Flexibility) -> (GrowthModelSpec, Self) {
        let (sigma, k) = level.dry_matter();
        (GrowthModelSpec::dry_matter(kind, k), Self::dry_matter_2021(kind, sigma))
    }

    /// Entries aligned with the layout of `spec`, after validation.
    pub fn aligned(&self, spec: &GrowthModelSpec) -> Result<Vec<PriorEntry>> {
        let layout = ParamLayout::for_kind(spec.kind);
        for e in &self.entries {
            if layout.index_of(e.name).is_none() {
                return config(format!("prior entry {} is not a parameter of {:?}", e.name, spec.kind));
            }
        }
        let mut out = Vec::with_capacity(layout.len());
        for &name in layout.names() {
            let mut found = self.entries.iter().filter(|e| e.name == name);
            let Some(entry) = found.next() else {
                return config(format!("prior has no entry for {name}"));
            };
            if found.next().is_some() {
                return config(format!("prior has more than one entry for {name}"));
            }
            let expected = if name.is_log() { Transform::Log } else { Transform::Identity };
            if entry.transform != expected {
                return config(format!("{name} needs the {expected:?} transform"));
            }
            if !(entry.sd > 0.0 && entry.sd.is_finite()) || !entry.mean.is_finite() {
                return config(format!("{name}: need finite mean and sd > 0"));
            }
            out.push(entry.clone());
        }
        let (k1, k2, g) = spec.effect_sizes();
        for (used, value, label) in [
            (k1 > 0, self.sigma_b_bar, "sigma_b_bar"),
            (k2 > 0, self.sigma_b2_bar, "sigma_b2_bar"),
            (g > 0, self.fruit_sd, "fruit_sd"),
        ] {
            if used && !(value > 0.0 && value.is_finite()) {
                return config(format!("{label} must be positive, got {value}"));
            }
        }
        Ok(out)
    }

    /// Prior SDs of the effects block `(phase-1 spline, phase-2 spline, fruit)`.
    pub fn effect_sds(&self, spec: &GrowthModelSpec) -> Vec<f64> {
        let (k1, k2, g) = spec.effect_sizes();
        let mut sds = vec![self.sigma_b_bar; k1];
        sds.extend(std::iter::repeat(self.sigma_b2_bar).take(k2));
        sds.extend(std::iter::repeat(self.fruit_sd).take(g));
        sds
    }
}

fn fruit_weight_entry(name: ParamName, sigma_b1_bar: f64, sigma_b2_bar: f64) -> PriorEntry {
    use ParamName::*;
    match name {
        LogR => PriorEntry::log_normal(name, 0.02, 0.1),
        LogLambda => PriorEntry::log_normal(name, 150.0, 0.1),
        LogLambda2 => PriorEntry::log_normal(name, 200.0, 0.1),
        LogEta => PriorEntry::log_normal(name, 200.0, 0.1),
        Beta0 | Beta02 => PriorEntry::normal(name, 1.0, 0.1),
        Beta1 | Beta12 => PriorEntry::normal(name, 0.01, 0.1),
        LogSigmaE => PriorEntry::log_normal(name, 20.0, 0.1),
        LogSigmaB => PriorEntry::log_normal(name, sigma_b1_bar, 0.1),
        LogSigmaB2 => PriorEntry::log_normal(name, sigma_b2_bar, 0.1),
        LogSigmaBg => PriorEntry::log_normal(name, 0.2, 0.1),
    }
}

/// One joint prior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDraw {
    pub params: ParamVector,
    pub effects: EffectsVector,
    /// Draws discarded because `lambda2 <= lambda1` (two-phase models).
    pub rejections: u32,
}

const MAX_REJECTIONS: u32 = 10_000;

pub(crate) fn draw_theta<R: Rng + ?Sized>(entries: &[PriorEntry], rng: &mut R) -> Vec<f64> {
    entries
        .iter()
        .map(|e| e.mean + e.sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub(crate) fn draw_effects<R: Rng + ?Sized>(sds: &[f64], rng: &mut R) -> Vec<f64> {
    sds.iter().map(|&s| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws `(theta, b)` from the prior. Two-phase draws with `lambda2 <= lambda1`
/// are rejected and counted.
pub fn sample_prior<R: Rng + ?Sized>(
    prior: &PriorSpec,
    spec: &GrowthModelSpec,
    rng: &mut R,
) -> Result<PriorDraw> {
    let entries = prior.aligned(spec)?;
    let layout = ParamLayout::for_kind(spec.kind);
    let (theta, rejections) = draw_theta_constrained(&entries, &layout, rng)?;
    let flat = draw_effects(&prior.effect_sds(spec), rng);
    Ok(PriorDraw {
        params: ParamVector::new(layout, theta)?,
        effects: EffectsVector::from_flat(spec, &flat)?,
        rejections,
    })
}

pub(crate) fn draw_theta_constrained<R: Rng + ?Sized>(
    entries: &[PriorEntry],
    layout: &ParamLayout,
    rng: &mut R,
) -> Result<(Vec<f64>, u32)> {
    let caps = layout
        .index_of(ParamName::LogLambda)
        .zip(layout.index_of(ParamName::LogLambda2));
    let mut rejections = 0;
    loop {
        let theta = draw_theta(entries, rng);
        match caps {
            Some((i1, i2)) if theta[i2] <= theta[i1] => {
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::Config(
                        "prior puts almost no mass on lambda2 > lambda1".into(),
                    ));
                }
            }
            _ => return Ok((theta, rejections)),
        }
    }
}

/// Joint prior moments `(mu0, Sigma0)` of `(theta, b)`; Sigma0 is diagonal.
pub fn prior_moments(prior: &PriorSpec, spec: &GrowthModelSpec) -> Result<GaussianApprox> {
    let entries = prior.aligned(spec)?;
    let mut mean: Vec<f64> = entries.iter().map(|e| e.mean).collect();
    let mut var: Vec<f64> = entries.iter().map(|e| e.sd * e.sd).collect();
    for s in prior.effect_sds(spec) {
        mean.push(0.0);
        var.push(s * s);
    }
    GaussianApprox::diagonal(mean, var)
}

#[inline]
pub(crate) fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

/// Sum of Normal log-densities of `params` on the transformed scale.
pub fn log_prior_density(prior: &PriorSpec, params: &ParamVector) -> Result<f64> {
    let mut total = 0.0;
    for (&name, &v) in params.layout().names().iter().zip(params.values()) {
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("{name} is not finite")));
        }
        let Some(e) = prior.entries.iter().find(|e| e.name == name) else {
            return config(format!("prior has no entry for {name}"));
        };
        total += normal_log_density(v, e.mean, e.sd);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dry_matter_very_low_moments() {
        let (spec, prior) = PriorSpec::dry_matter_preset(ModelKind::FlexGompertz, Flexibility::VeryLow);
        let g = prior_moments(&prior, &spec).unwrap();
        let mu = [0.1f64.ln(), 0.3f64.ln(), 0.1, 0.1, 0.0, 0.01f64.ln(), 0.0, 0.0, 0.0];
        let var = [0.01, 0.01, 0.01, 0.01, 0.0025, 0.16, 1e-4, 1e-4, 1e-4];
        assert_eq!(g.dim(), 9);
        for i in 0..9 {
            assert!((g.mean()[i] - mu[i]).abs() < 1e-15);
            assert!((g.cov()[(i, i)] - var[i]).abs() < 1e-15);
            for j in 0..9 {
                if i != j {
                    assert_eq!(g.cov()[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn weight_preset_values() {
        let spec = GrowthModelSpec::fruit_weight(ModelKind::FlexDoubleGompertz, 3, 3, 5);
        let prior = PriorSpec::fruit_weight(ModelKind::FlexDoubleGompertz, 10.0, 10.0);
        let entries = prior.aligned(&spec).unwrap();
        let get = |n: ParamName| entries.iter().find(|e| e.name == n).unwrap().clone();
        assert!((get(ParamName::LogEta).mean - 200f64.ln()).abs() < 1e-15);
        assert!((get(ParamName::LogSigmaE).mean - 20f64.ln()).abs() < 1e-15);
        assert!((get(ParamName::LogSigmaBg).mean - 0.2f64.ln()).abs() < 1e-15);
        assert_eq!(get(ParamName::Beta12).mean, 0.01);
        let g = prior_moments(&prior, &spec).unwrap();
        assert_eq!(g.dim(), 12 + 3 + 3 + 5);
        assert!((g.cov()[(22, 22)] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn log_density_examples() {
        let layout = ParamLayout::for_kind(ModelKind::Gompertz);
        let prior = PriorSpec {
            entries: vec![
                PriorEntry { name: ParamName::LogR, transform: Transform::Log, mean: 0.0, sd: 1.0 },
                PriorEntry { name: ParamName::LogLambda, transform: Transform::Log, mean: 0.0, sd: 1.0 },
                PriorEntry { name: ParamName::LogSigmaE, transform: Transform::Log, mean: 0.0, sd: 1.0 },
            ],
            sigma_b_bar: 1.0,
            sigma_b2_bar: 1.0,
            fruit_sd: 0.2,
        };
        let at_mode = ParamVector::new(layout.clone(), vec![0.0; 3]).unwrap();
        let lp = log_prior_density(&prior, &at_mode).unwrap();
        assert!((lp - 3.0 * -0.918_938_533_204_672_7).abs() < 1e-12);
        let shifted = ParamVector::new(layout, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((log_prior_density(&prior, &shifted).unwrap() - (lp - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn dry_matter_density_at_mean_sums_mode_densities() {
        let (spec, prior) = PriorSpec::dry_matter_preset(ModelKind::FlexLogistic, Flexibility::Low);
        let entries = prior.aligned(&spec).unwrap();
        let p = ParamVector::new(
            ParamLayout::for_kind(spec.kind),
            entries.iter().map(|e| e.mean).collect(),
        )
        .unwrap();
        let expected: f64 = [0.1, 0.1, 0.1, 0.1, 0.05, 0.4]
            .iter()
            .map(|sd: &f64| -0.5 * (2.0 * std::f64::consts::PI * sd * sd).ln())
            .sum();
        assert!((log_prior_density(&prior, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_priors() {
        let spec = GrowthModelSpec::dry_matter(ModelKind::Gompertz, 0);
        let mut prior = PriorSpec::dry_matter_2021(ModelKind::Gompertz, 0.01);
        prior.entries[0].sd = 0.0;
        assert!(prior.aligned(&spec).is_err());
        let mut prior = PriorSpec::dry_matter_2021(ModelKind::Gompertz, 0.01);
        prior.entries.pop();
        assert!(prior.aligned(&spec).is_err());
        let mut prior = PriorSpec::dry_matter_2021(ModelKind::Gompertz, 0.01);
        prior.entries[0].transform = Transform::Identity;
        assert!(prior.aligned(&spec).is_err());
        let prior = PriorSpec::dry_matter_2021(ModelKind::FlexGompertz, 0.01);
        assert!(prior.aligned(&spec).is_err());
    }

    #[test]
    fn tiny_sd_draws_sit_at_mean() {
        let spec = GrowthModelSpec::dry_matter(ModelKind::FlexGompertz, 3);
        let mut prior = PriorSpec::dry_matter_2021(ModelKind::FlexGompertz, 1e-9);
        for e in &mut prior.entries {
            e.sd = 1e-9;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = sample_prior(&prior, &spec, &mut rng).unwrap();
        for (v, e) in d.params.values().iter().zip(&prior.entries) {
            assert!((v - e.mean).abs() < 1e-6);
        }
        assert!(d.effects.spline.iter().all(|b| b.abs() < 1e-6));
    }

    #[test]
    fn two_phase_draws_respect_capacity_order() {
        let spec = GrowthModelSpec::fruit_weight(ModelKind::DoubleGompertz, 0, 0, 5);
        let mut prior = PriorSpec::fruit_weight(ModelKind::DoubleGompertz, 10.0, 10.0);
        // Equal medians so roughly half of the raw draws violate the order.
        for e in &mut prior.entries {
            if e.name == ParamName::LogLambda2 {
                e.mean = 150f64.ln();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rejected = 0;
        for _ in 0..200 {
            let d = sample_prior(&prior, &spec, &mut rng).unwrap();
            assert!(d.params.get(ParamName::LogLambda2) > d.params.get(ParamName::LogLambda));
            rejected += d.rejections;
            assert_eq!(d.effects.fruit.len(), 5);
        }
        assert!(rejected > 50);
    }
}
