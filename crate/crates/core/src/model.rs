//! The hierarchical model interface used by inference and design search, and
//! its implementation for the growth models.

use crate::error::{config, Error, Result};
use crate::gaussian::GaussianApprox;
use crate::growth::{spline_basis, EffectsView, GrowthModelSpec, ModelKind};
use crate::inference::{log_mean_exp, marginal_by_draws, EffectDraws, MarginalLikelihood};
use crate::params::{NaturalParams, ParamLayout, ParamName};
use crate::priors::{
    draw_effects, draw_theta, draw_theta_constrained, normal_log_density, prior_moments, PriorEntry,
    PriorSpec,
};
use crate::rng::SimRng;
use crate::simulate::{simulate_natural, Dataset, Protocol, TimeDesign};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A model with fixed effects `theta`, Normal random effects `b ~ N(0, diag(sd(theta)^2))`
/// and a Gaussian prior on `theta`.
///
/// Both blocks are flat slices on the unconstrained scale.
pub trait HierarchicalModel: Sync {
    fn theta_dim(&self) -> usize;

    fn effects_dim(&self) -> usize;

    /// Prior moments of the joint `(theta, b)` vector used by the KLD utility.
    fn prior_moments(&self) -> &GaussianApprox;

    fn log_prior_theta(&self, theta: &[f64]) -> f64;

    /// SD of each random effect given `theta`.
    fn effect_sds(&self, theta: &[f64], out: &mut [f64]);

    /// `log p(y | theta, b)`.
    fn log_likelihood(&self, data: &Dataset, theta: &[f64], effects: &[f64]) -> Result<f64>;

    /// One draw of `theta` from its prior (used for optimizer restarts).
    fn sample_theta(&self, rng: &mut SimRng) -> Vec<f64>;

    /// One joint prior draw `(theta, b)`.
    fn sample_prior(&self, rng: &mut SimRng) -> Result<(Vec<f64>, Vec<f64>)>;

    fn simulate(
        &self,
        design: &TimeDesign,
        theta: &[f64],
        effects: &[f64],
        rng: &mut SimRng,
    ) -> Result<Dataset>;

    fn check_design(&self, _design: &TimeDesign) -> Result<()> {
        Ok(())
    }

    fn check_dataset(&self, _data: &Dataset) -> Result<()> {
        Ok(())
    }

    /// Monte Carlo marginal likelihood `theta -> log (1/E) sum_e p(y | theta, sd(theta) z_e)`
    /// for fixed standard-normal draws `z_e`. Models may override this with a
    /// faster equivalent.
    fn marginal_evaluator<'a>(
        &'a self,
        data: &'a Dataset,
        draws: &'a EffectDraws,
    ) -> Box<dyn FnMut(&[f64]) -> Result<MarginalLikelihood> + 'a> {
        Box::new(marginal_by_draws(self, data, draws))
    }

    /// `b -> log p(y | theta, b)` for fixed `data` and `theta`. Models may override
    /// this with a faster equivalent.
    fn conditional_evaluator<'a>(
        &'a self,
        data: &'a Dataset,
        theta: &'a [f64],
    ) -> Box<dyn FnMut(&[f64]) -> Result<f64> + 'a> {
        Box::new(move |b: &[f64]| self.log_likelihood(data, theta, b))
    }

    /// `log p(b | sd(theta))`.
    fn log_prior_effects(&self, theta: &[f64], effects: &[f64]) -> f64 {
        let mut sds = vec![0.0; effects.len()];
        self.effect_sds(theta, &mut sds);
        effects
            .iter()
            .zip(&sds)
            .map(|(&b, &s)| normal_log_density(b, 0.0, s))
            .sum()
    }
}

/// A growth model paired with its prior.
#[derive(Debug, Clone)]
pub struct GrowthModel {
    spec: GrowthModelSpec,
    prior: PriorSpec,
    layout: ParamLayout,
    entries: Vec<PriorEntry>,
    moments: GaussianApprox,
    prior_effect_sds: Vec<f64>,
    /// Index into theta of the SD parameter for each effects block.
    sd_index: [Option<usize>; 3],
}

impl GrowthModel {
    pub fn new(spec: GrowthModelSpec, prior: PriorSpec) -> Result<Self> {
        spec.validate()?;
        let entries = prior.aligned(&spec)?;
        let layout = ParamLayout::for_kind(spec.kind);
        let moments = prior_moments(&prior, &spec)?;
        let prior_effect_sds = prior.effect_sds(&spec);
        let (k1, k2, g) = spec.effect_sizes();
        let sd_index = [
            (k1 > 0).then(|| layout.index_of(ParamName::LogSigmaB)).flatten(),
            (k2 > 0).then(|| layout.index_of(ParamName::LogSigmaB2)).flatten(),
            (g > 0).then(|| layout.index_of(ParamName::LogSigmaBg)).flatten(),
        ];
        for (size, idx) in [k1, k2, g].into_iter().zip(sd_index) {
            if size > 0 && idx.is_none() {
                return config(format!("{:?} has random effects without an SD parameter", spec.kind));
            }
        }
        Ok(Self { spec, prior, layout, entries, moments, prior_effect_sds, sd_index })
    }

    pub fn spec(&self) -> &GrowthModelSpec {
        &self.spec
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Prior means of `theta` on the transformed scale.
    pub fn theta_prior_mean(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.mean).collect()
    }

    pub fn natural(&self, theta: &[f64]) -> NaturalParams {
        NaturalParams::decode(&self.layout, theta)
    }

    /// Mean response for a flat `(theta, b)` pair; `None` for the population curve.
    pub fn mean(&self, theta: &[f64], effects: &[f64], t: f64, fruit: Option<usize>) -> f64 {
        let p = self.natural(theta);
        self.spec
            .mean_unchecked(&p, &EffectsView::split(&self.spec, effects), t, fruit)
    }
}

impl HierarchicalModel for GrowthModel {
    fn theta_dim(&self) -> usize {
        self.layout.len()
    }

    fn effects_dim(&self) -> usize {
        self.prior_effect_sds.len()
    }

    fn prior_moments(&self) -> &GaussianApprox {
        &self.moments
    }

    fn log_prior_theta(&self, theta: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(theta)
            .map(|(e, &v)| normal_log_density(v, e.mean, e.sd))
            .sum()
    }

    fn effect_sds(&self, theta: &[f64], out: &mut [f64]) {
        let (k1, k2, _) = self.spec.effect_sizes();
        for (i, slot) in out.iter_mut().enumerate() {
            let block = if i < k1 { 0 } else if i < k1 + k2 { 1 } else { 2 };
            *slot = theta[self.sd_index[block].expect("validated at construction")].exp();
        }
    }

    fn marginal_evaluator<'a>(
        &'a self,
        data: &'a Dataset,
        draws: &'a EffectDraws,
    ) -> Box<dyn FnMut(&[f64]) -> Result<MarginalLikelihood> + 'a> {
        let k = self.spec.knots.len();
        let single_warp = matches!(self.spec.kind, ModelKind::FlexGompertz | ModelKind::FlexLogistic);
        if !single_warp || k == 0 || self.effects_dim() != k || draws.dim() != k {
            return Box::new(marginal_by_draws(self, data, draws));
        }
        // With b = sigma_b z the random part of the warp is sigma_b * sum_k z_k phi_k(t),
        // and the sums only depend on the fixed draws.
        let n = data.rows.len();
        let mut phi = vec![0.0; k];
        let mut basis = Vec::with_capacity(n * k);
        for row in &data.rows {
            spline_basis(&self.spec.knots, self.spec.spline_time_unit, row.time, &mut phi);
            basis.extend_from_slice(&phi);
        }
        let mut sums = Vec::with_capacity(draws.count() * n);
        for z in draws.rows() {
            for i in 0..n {
                sums.push(basis[i * k..(i + 1) * k].iter().zip(z).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let y0 = self.spec.y0;
        let gompertz = self.spec.kind == ModelKind::FlexGompertz;
        let mut lls = vec![0.0; draws.count()];
        Box::new(move |theta: &[f64]| {
            let p = self.natural(theta);
            let log_ratio = (p.lambda / y0).ln();
            let inv = 1.0 / p.sigma_e;
            let norm = n as f64 * (p.sigma_e.ln() + 0.5 * LN_2PI);
            for (e, ll) in lls.iter_mut().enumerate() {
                let mut ss = 0.0;
                for (row, s) in data.rows.iter().zip(&sums[e * n..(e + 1) * n]) {
                    let t = row.time;
                    let w = p.beta0 * t + 0.5 * p.beta1 * t * t + p.sigma_b * s;
                    let decay = (-p.r * w).exp();
                    let m = if gompertz {
                        p.lambda * (-log_ratio * decay).exp()
                    } else {
                        p.lambda * y0 / (y0 + (p.lambda - y0) * decay)
                    };
                    let z = (row.y - m) * inv;
                    ss += z * z;
                }
                *ll = -0.5 * ss - norm;
                if ll.is_nan() {
                    return Err(Error::Evaluation(format!("log-likelihood is NaN at theta = {theta:?}")));
                }
            }
            Ok(log_mean_exp(&lls))
        })
    }

    fn conditional_evaluator<'a>(
        &'a self,
        data: &'a Dataset,
        theta: &'a [f64],
    ) -> Box<dyn FnMut(&[f64]) -> Result<f64> + 'a> {
        let k = self.spec.knots.len();
        let single_warp = matches!(self.spec.kind, ModelKind::FlexGompertz | ModelKind::FlexLogistic);
        if !single_warp || k == 0 || self.effects_dim() != k {
            return Box::new(move |b: &[f64]| self.log_likelihood(data, theta, b));
        }
        let n = data.rows.len();
        let p = self.natural(theta);
        let mut basis = vec![0.0; n * k];
        let mut fixed = Vec::with_capacity(n);
        for (row, phi) in data.rows.iter().zip(basis.chunks_exact_mut(k)) {
            spline_basis(&self.spec.knots, self.spec.spline_time_unit, row.time, phi);
            fixed.push(p.beta0 * row.time + 0.5 * p.beta1 * row.time * row.time);
        }
        let y0 = self.spec.y0;
        let log_ratio = (p.lambda / y0).ln();
        let gompertz = self.spec.kind == ModelKind::FlexGompertz;
        let inv = 1.0 / p.sigma_e;
        let norm = n as f64 * (p.sigma_e.ln() + 0.5 * LN_2PI);
        Box::new(move |b: &[f64]| {
            let mut ss = 0.0;
            for ((row, phi), f) in data.rows.iter().zip(basis.chunks_exact(k)).zip(&fixed) {
                let w = f + phi.iter().zip(b).map(|(x, c)| x * c).sum::<f64>();
                let decay = (-p.r * w).exp();
                let m = if gompertz {
                    p.lambda * (-log_ratio * decay).exp()
                } else {
                    p.lambda * y0 / (y0 + (p.lambda - y0) * decay)
                };
                let z = (row.y - m) * inv;
                ss += z * z;
            }
            let ll = -0.5 * ss - norm;
            if ll.is_nan() {
                return Err(Error::Evaluation(format!("log-likelihood is NaN at theta = {theta:?}")));
            }
            Ok(ll)
        })
    }

    fn log_likelihood(&self, data: &Dataset, theta: &[f64], effects: &[f64]) -> Result<f64> {
        let p = self.natural(theta);
        let view = EffectsView::split(&self.spec, effects);
        let inv = 1.0 / p.sigma_e;
        let mut ss = 0.0;
        for row in &data.rows {
            let m = self.spec.mean_unchecked(&p, &view, row.time, row.fruit);
            let z = (row.y - m) * inv;
            ss += z * z;
        }
        let n = data.rows.len() as f64;
        let ll = -0.5 * ss - n * (p.sigma_e.ln() + 0.5 * LN_2PI);
        if ll.is_nan() {
            return Err(Error::Evaluation(format!("log-likelihood is NaN at theta = {theta:?}")));
        }
        Ok(ll)
    }

    fn sample_theta(&self, rng: &mut SimRng) -> Vec<f64> {
        draw_theta(&self.entries, rng)
    }

    fn sample_prior(&self, rng: &mut SimRng) -> Result<(Vec<f64>, Vec<f64>)> {
        let (theta, rejections) = draw_theta_constrained(&self.entries, &self.layout, rng)?;
        if rejections > 0 {
            log::debug!("prior draw rejected {rejections} time(s) for lambda2 <= lambda1");
        }
        let effects = draw_effects(&self.prior_effect_sds, rng);
        Ok((theta, effects))
    }

    fn simulate(
        &self,
        design: &TimeDesign,
        theta: &[f64],
        effects: &[f64],
        rng: &mut SimRng,
    ) -> Result<Dataset> {
        let p = self.natural(theta);
        simulate_natural(&self.spec, design, &p, &EffectsView::split(&self.spec, effects), rng)
    }

    fn check_design(&self, design: &TimeDesign) -> Result<()> {
        design.check_against(&self.spec)
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        let repeated = self.spec.kind.is_two_phase();
        for row in &data.rows {
            if !(0.0..=self.spec.t_max).contains(&row.time) {
                return Err(Error::Domain(format!("observation time {} outside horizon", row.time)));
            }
            match (repeated, row.fruit) {
                (true, Some(g)) if g < self.spec.fruit_count => {}
                (false, None) => {}
                _ => {
                    return config(format!(
                        "fruit id {:?} inconsistent with {:?} ({:?} protocol expected)",
                        row.fruit,
                        self.spec.kind,
                        if repeated { Protocol::RepeatedMeasures } else { Protocol::Destructive }
                    ))
                }
            }
            if !row.y.is_finite() {
                return Err(Error::Evaluation(format!("response at t = {} is not finite", row.time)));
            }
        }
        Ok(())
    }
}
