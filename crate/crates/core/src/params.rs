//! Parameter blocks on the unconstrained scale.
//!
//! Positive quantities are stored as logarithms so that every prior is an
//! exact Normal and the Gaussian posterior approximations live on the same
//! scale. The order of the fixed-effect block is determined by
//! [`ParamLayout::for_kind`]; effects are always ordered
//! `(phase-1 spline, phase-2 spline, fruit)`.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::growth::{GrowthModelSpec, ModelKind};

/// Coordinates of the fixed-effect block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    LogR,
    /// Carrying capacity (phase 1 for two-phase models).
    LogLambda,
    LogLambda2,
    /// Switch time between phases.
    LogEta,
    /// Constant spline coefficient (phase 1 for two-phase models).
    Beta0,
    /// Linear spline coefficient (phase 1 for two-phase models).
    Beta1,
    Beta02,
    Beta12,
    LogSigmaE,
    /// Spline random-effect SD (phase 1 for two-phase models).
    LogSigmaB,
    LogSigmaB2,
    /// SD of the per-fruit growth-rate effects.
    LogSigmaBg,
}

impl ParamName {
    pub fn is_log(self) -> bool {
        !matches!(
            self,
            ParamName::Beta0 | ParamName::Beta1 | ParamName::Beta02 | ParamName::Beta12
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::LogR => "log_r",
            ParamName::LogLambda => "log_lambda",
            ParamName::LogLambda2 => "log_lambda2",
            ParamName::LogEta => "log_eta",
            ParamName::Beta0 => "beta0",
            ParamName::Beta1 => "beta1",
            ParamName::Beta02 => "beta02",
            ParamName::Beta12 => "beta12",
            ParamName::LogSigmaE => "log_sigma_e",
            ParamName::LogSigmaB => "log_sigma_b",
            ParamName::LogSigmaB2 => "log_sigma_b2",
            ParamName::LogSigmaBg => "log_sigma_bg",
        }
    }
}

impl std::fmt::Display for ParamName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered list of fixed-effect coordinates for one model kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    names: Vec<ParamName>,
}

impl ParamLayout {
    pub fn for_kind(kind: ModelKind) -> Self {
        use ParamName::*;
        let names = match kind {
            ModelKind::Gompertz | ModelKind::Logistic | ModelKind::Richards | ModelKind::Weibull => {
                vec![LogR, LogLambda, LogSigmaE]
            }
            ModelKind::FlexGompertz | ModelKind::FlexLogistic => {
                vec![LogR, LogLambda, Beta0, Beta1, LogSigmaE, LogSigmaB]
            }
            ModelKind::DoubleGompertz => vec![LogR, LogLambda, LogLambda2, LogEta, LogSigmaE, LogSigmaBg],
            ModelKind::FlexDoubleGompertz => vec![
                LogR, LogLambda, LogLambda2, LogEta, Beta0, Beta1, Beta02, Beta12, LogSigmaE,
                LogSigmaB, LogSigmaB2, LogSigmaBg,
            ],
        };
        Self { names }
    }

    pub fn names(&self) -> &[ParamName] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: ParamName) -> Option<usize> {
        self.names.iter().position(|&n| n == name)
    }
}

/// Fixed-effect block θ on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return config(format!(
                "parameter vector has {} entries, layout expects {}",
                values.len(),
                layout.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "parameter {} is not finite ({})",
                layout.names[i], values[i]
            )));
        }
        Ok(Self { layout, values })
    }

    /// Builds a vector from natural-scale values (positive entries are log-transformed).
    pub fn from_natural(kind: ModelKind, pairs: &[(ParamName, f64)]) -> Result<Self> {
        let layout = ParamLayout::for_kind(kind);
        let mut values = vec![f64::NAN; layout.len()];
        for &(name, v) in pairs {
            let Some(i) = layout.index_of(name) else {
                return config(format!("{name} is not a parameter of {kind:?}"));
            };
            values[i] = if name.is_log() { v.ln() } else { v };
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return config(format!("missing value for {}", layout.names[i]));
        }
        Self::new(layout, values)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: ParamName) -> Option<f64> {
        self.layout.index_of(name).map(|i| self.values[i])
    }
}

/// Random-effect block b.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectsVector {
    /// Spline coefficients of the single phase, or of phase 1.
    pub spline: Vec<f64>,
    /// Phase-2 spline coefficients (two-phase models only).
    pub spline2: Vec<f64>,
    /// Per-fruit log growth-rate offsets (weight models only).
    pub fruit: Vec<f64>,
}

impl EffectsVector {
    pub fn zeros(spec: &GrowthModelSpec) -> Self {
        let (k1, k2, g) = spec.effect_sizes();
        Self {
            spline: vec![0.0; k1],
            spline2: vec![0.0; k2],
            fruit: vec![0.0; g],
        }
    }

    pub fn len(&self) -> usize {
        self.spline.len() + self.spline2.len() + self.fruit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.spline);
        out.extend_from_slice(&self.spline2);
        out.extend_from_slice(&self.fruit);
        out
    }

    pub fn from_flat(spec: &GrowthModelSpec, flat: &[f64]) -> Result<Self> {
        let (k1, k2, g) = spec.effect_sizes();
        if flat.len() != k1 + k2 + g {
            return config(format!(
                "effects vector has {} entries, model expects {}",
                flat.len(),
                k1 + k2 + g
            ));
        }
        Ok(Self {
            spline: flat[..k1].to_vec(),
            spline2: flat[k1..k1 + k2].to_vec(),
            fruit: flat[k1 + k2..].to_vec(),
        })
    }

    pub(crate) fn check(&self, spec: &GrowthModelSpec) -> Result<()> {
        let (k1, k2, g) = spec.effect_sizes();
        if self.spline.len() != k1 || self.spline2.len() != k2 || self.fruit.len() != g {
            return config(format!(
                "effects sizes ({}, {}, {}) do not match model ({k1}, {k2}, {g})",
                self.spline.len(),
                self.spline2.len(),
                self.fruit.len()
            ));
        }
        if self.spline.iter().chain(&self.spline2).chain(&self.fruit).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("non-finite random effect".into()));
        }
        Ok(())
    }
}

/// Natural-scale view of θ used by the mean functions.
///
/// Non-flexible models carry the identity warp `beta0 = 1, beta1 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalParams {
    pub r: f64,
    pub lambda: f64,
    pub lambda2: f64,
    pub eta: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta02: f64,
    pub beta12: f64,
    pub sigma_e: f64,
    pub sigma_b: f64,
    pub sigma_b2: f64,
    pub sigma_bg: f64,
}

impl NaturalParams {
    pub fn decode(layout: &ParamLayout, values: &[f64]) -> Self {
        let mut p = NaturalParams {
            r: f64::NAN,
            lambda: f64::NAN,
            lambda2: f64::NAN,
            eta: f64::NAN,
            beta0: 1.0,
            beta1: 0.0,
            beta02: 1.0,
            beta12: 0.0,
            sigma_e: f64::NAN,
            sigma_b: 0.0,
            sigma_b2: 0.0,
            sigma_bg: 0.0,
        };
        for (&name, &v) in layout.names().iter().zip(values) {
            match name {
                ParamName::LogR => p.r = v.exp(),
                ParamName::LogLambda => p.lambda = v.exp(),
                ParamName::LogLambda2 => p.lambda2 = v.exp(),
                ParamName::LogEta => p.eta = v.exp(),
                ParamName::Beta0 => p.beta0 = v,
                ParamName::Beta1 => p.beta1 = v,
                ParamName::Beta02 => p.beta02 = v,
                ParamName::Beta12 => p.beta12 = v,
                ParamName::LogSigmaE => p.sigma_e = v.exp(),
                ParamName::LogSigmaB => p.sigma_b = v.exp(),
                ParamName::LogSigmaB2 => p.sigma_b2 = v.exp(),
                ParamName::LogSigmaBg => p.sigma_bg = v.exp(),
            }
        }
        p
    }

    pub fn from_vector(params: &ParamVector) -> Self {
        Self::decode(params.layout(), params.values())
    }
}
