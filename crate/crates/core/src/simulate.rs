//! Sampling designs, datasets and prior-predictive simulation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::growth::{EffectsView, GrowthModelSpec};
use crate::params::{EffectsVector, NaturalParams, ParamVector};

/// How fruit are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// One fruit harvested per time point.
    Destructive,
    /// Every fruit is measured at every design time.
    RepeatedMeasures,
}

/// `n` sampling times within `[0, t_max]`, kept sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDesign {
    times: Vec<f64>,
    t_max: f64,
    protocol: Protocol,
    fruit_count: usize,
}

impl TimeDesign {
    pub fn new(mut times: Vec<f64>, t_max: f64, protocol: Protocol, fruit_count: usize) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return config(format!("design horizon must be positive, got {t_max}"));
        }
        if let Some(t) = times.iter().find(|t| !(0.0..=t_max).contains(*t)) {
            return Err(Error::Domain(format!("design time {t} outside [0, {t_max}]")));
        }
        if protocol == Protocol::RepeatedMeasures && fruit_count == 0 {
            return config("repeated-measures design needs at least one fruit");
        }
        times.sort_by(f64::total_cmp);
        let fruit_count = match protocol {
            Protocol::Destructive => 1,
            Protocol::RepeatedMeasures => fruit_count,
        };
        Ok(Self { times, t_max, protocol, fruit_count })
    }

    pub fn destructive(times: Vec<f64>, t_max: f64) -> Result<Self> {
        Self::new(times, t_max, Protocol::Destructive, 1)
    }

    pub fn repeated(times: Vec<f64>, t_max: f64, fruit_count: usize) -> Result<Self> {
        Self::new(times, t_max, Protocol::RepeatedMeasures, fruit_count)
    }

    /// Same protocol and horizon with different times.
    pub fn with_times(&self, times: Vec<f64>) -> Result<Self> {
        Self::new(times, self.t_max, self.protocol, self.fruit_count)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn fruit_count(&self) -> usize {
        self.fruit_count
    }

    /// Number of observations this design produces.
    pub fn rows(&self) -> usize {
        self.times.len() * self.fruit_count
    }

    /// Checks that this design can be used with `spec`.
    pub fn check_against(&self, spec: &GrowthModelSpec) -> Result<()> {
        let expected = if spec.kind.is_two_phase() {
            Protocol::RepeatedMeasures
        } else {
            Protocol::Destructive
        };
        if self.protocol != expected {
            return config(format!(
                "{:?} needs a {expected:?} design, got {:?}",
                spec.kind, self.protocol
            ));
        }
        if expected == Protocol::RepeatedMeasures && self.fruit_count != spec.fruit_count {
            return config(format!(
                "design has {} fruit, model has {}",
                self.fruit_count, spec.fruit_count
            ));
        }
        if self.t_max > spec.t_max {
            return config(format!(
                "design horizon {} exceeds model horizon {}",
                self.t_max, spec.t_max
            ));
        }
        Ok(())
    }
}

/// One observed response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub fruit: Option<usize>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<Observation>,
}

impl Dataset {
    pub fn new(rows: Vec<Observation>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Responses are not truncated at zero; Normal noise is applied as is.
pub(crate) fn simulate_natural<R: Rng + ?Sized>(
    spec: &GrowthModelSpec,
    design: &TimeDesign,
    p: &NaturalParams,
    effects: &EffectsView<'_>,
    rng: &mut R,
) -> Result<Dataset> {
    let fruit: Vec<Option<usize>> = match design.protocol() {
        Protocol::Destructive => vec![None],
        Protocol::RepeatedMeasures => (0..design.fruit_count()).map(Some).collect(),
    };
    let mut rows = Vec::with_capacity(design.rows());
    for g in fruit {
        for &t in design.times() {
            let m = spec.mean_unchecked(p, effects, t, g);
            let y = m + p.sigma_e * rng.sample::<f64, _>(StandardNormal);
            if !y.is_finite() {
                return Err(Error::Evaluation(format!(
                    "simulated response not finite at t = {t} (mean {m}, sigma_e {})",
                    p.sigma_e
                )));
            }
            rows.push(Observation { time: t, fruit: g, y });
        }
    }
    Ok(Dataset { rows })
}

/// Draws one dataset at `design`: each row is the model mean plus
/// `N(0, sigma_e^2)` noise.
pub fn simulate_dataset<R: Rng + ?Sized>(
    spec: &GrowthModelSpec,
    design: &TimeDesign,
    params: &ParamVector,
    effects: &EffectsVector,
    rng: &mut R,
) -> Result<Dataset> {
    design.check_against(spec)?;
    if params.layout() != &crate::params::ParamLayout::for_kind(spec.kind) {
        return config(format!("parameter layout does not match {:?}", spec.kind));
    }
    effects.check(spec)?;
    let p = NaturalParams::from_vector(params);
    simulate_natural(spec, design, &p, &EffectsView::of(effects), rng)
}
