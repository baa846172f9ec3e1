//! Run configuration: JSON schema, presets, `--set` overrides and resolution
//! into core types.

use oded_core::evaluation::RealizationMode;
use oded_core::optimize::{Algorithm, SearchSettings};
use oded_core::{
    Flexibility, GrowthModel, GrowthModelSpec, LaplaceSettings, ModelKind, Phase2Exponent, PriorEntry,
    PriorSpec, Protocol, TimeDesign,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Error in the configuration or command line; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[serde(rename = "dry_matter_2021")]
    DryMatter2021,
    FruitWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    pub kind: ModelKind,
    /// Named flexibility level; sets the random-effect scale(s) and knot count(s).
    #[serde(default)]
    pub flexibility: Option<Flexibility>,
    #[serde(default, rename = "K")]
    pub knots: Option<usize>,
    #[serde(default, rename = "K2")]
    pub knots2: Option<usize>,
    #[serde(default)]
    pub sigma_b_bar: Option<f64>,
    #[serde(default)]
    pub sigma_b2_bar: Option<f64>,
    #[serde(default)]
    pub richards_shape: Option<f64>,
    #[serde(default)]
    pub weibull_shape: Option<f64>,
    #[serde(default)]
    pub spline_time_unit: Option<f64>,
    #[serde(default)]
    pub phase2_exponent: Option<Phase2Exponent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Entries replacing the preset's entries of the same name.
    #[serde(default)]
    pub entries: Vec<PriorEntry>,
    #[serde(default)]
    pub fruit_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub n: usize,
    /// `[0, T]`; defaults to the preset horizon.
    #[serde(default)]
    pub bounds: Option<[f64; 2]>,
    #[serde(default)]
    pub protocol: Option<Protocol>,
    /// Number of fruit under repeated measures.
    #[serde(default, rename = "G")]
    pub fruit_count: Option<usize>,
    /// Fixed design for `simulate`, `expected-utility` and `fit`.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComputeConfig {
    #[serde(rename = "L_search")]
    pub l_search: usize,
    #[serde(rename = "L_final")]
    pub l_final: usize,
    #[serde(rename = "E")]
    pub mc_draws: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub h: f64,
    pub spd_floor: f64,
    pub newton_steps: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ComputeConfig {
    fn default() -> Self {
        let l = LaplaceSettings::default();
        let s = SearchSettings::default();
        Self {
            l_search: s.l_search,
            l_final: s.l_final,
            mc_draws: l.mc_draws,
            restarts: l.restarts,
            max_iter: l.max_iter,
            tol: l.tol,
            h: l.h,
            spd_floor: l.spd_floor,
            newton_steps: l.newton_steps,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    pub name: Algorithm,
    /// CE grid step; defaults to 0.5 weeks (dry matter) or 5 days (weight).
    pub grid_step: Option<f64>,
    pub passes: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub acceptance_reps: usize,
    pub starts: usize,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        let s = SearchSettings::default();
        Self {
            name: s.algorithm,
            grid_step: None,
            passes: s.passes,
            q: s.q,
            acceptance_reps: s.acceptance_reps,
            starts: s.starts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedDesign {
    pub name: String,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceDesign {
    pub dgm: ModelKind,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Data-generating models for `efficiency`.
    pub dgms: Vec<ModelKind>,
    /// Designs to evaluate (rows of the efficiency matrix).
    pub designs: Vec<NamedDesign>,
    /// Optimal designs under each dgm; searched for when missing.
    pub references: Vec<ReferenceDesign>,
    pub n_curves: usize,
    /// Points of the realisation grid over `[0, T]`.
    pub grid_points: usize,
    pub mode: RealizationMode,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            dgms: vec![ModelKind::Richards, ModelKind::Weibull],
            designs: Vec::new(),
            references: Vec::new(),
            n_curves: 10,
            grid_points: 61,
            mode: RealizationMode::FixFixedEffects,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    pub design: DesignConfig,
    #[serde(default)]
    pub compute: ComputeConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

const REQUIRED: [&str; 3] = ["model.preset", "model.kind", "design.n"];

/// Sets `path` (dot-separated) in `root` to `value`, parsed as JSON when
/// possible and as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let Some((path, raw)) = assignment.split_once('=') else {
        return bad(format!("override `{assignment}` is not of the form key=value"));
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return bad(format!("override key `{path}` has an empty component"));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let Value::Object(map) = node else {
            return bad(format!("override `{path}`: `{}` is not an object", keys[..i].join(".")));
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last key")
}

/// Parses a config document after overrides, naming missing or unknown keys.
pub fn parse(value: Value) -> Result<RunConfig, ConfigError> {
    for key in REQUIRED {
        let mut node = &value;
        for part in key.split('.') {
            match node.get(part) {
                Some(v) => node = v,
                None => return bad(format!("missing required key `{key}`")),
            }
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError(format!("invalid config at `{path}`: {}", e.inner()))
    })
}

pub fn load(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config is not valid JSON: {e}")))?;
    if !value.is_object() {
        return bad("config must be a JSON object");
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    parse(value)
}

/// Everything a subcommand needs, validated before any computation starts.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: GrowthModelSpec,
    pub prior: PriorSpec,
    pub model: GrowthModel,
    /// Design with placeholder or configured times.
    pub template: TimeDesign,
    pub laplace: LaplaceSettings,
    pub search: SearchSettings,
}

fn core_err(e: oded_core::Error) -> ConfigError {
    ConfigError(e.to_string())
}

impl RunConfig {
    /// Model spec and prior for `kind` under this config's preset and
    /// flexibility settings.
    pub fn model_for(&self, kind: ModelKind) -> Result<(GrowthModelSpec, PriorSpec), ConfigError> {
        let m = &self.model;
        let (mut spec, mut prior) = match m.preset {
            Preset::DryMatter2021 => {
                if kind.is_two_phase() {
                    return bad(format!("{kind:?} is a fruit-weight model; use preset fruit_weight"));
                }
                let (sigma, k) = m.flexibility.unwrap_or(Flexibility::VeryLow).dry_matter();
                let sigma = m.sigma_b_bar.unwrap_or(sigma);
                let k = m.knots.unwrap_or(k);
                (GrowthModelSpec::dry_matter(kind, k), PriorSpec::dry_matter_2021(kind, sigma))
            }
            Preset::FruitWeight => {
                if !kind.is_two_phase() {
                    return bad(format!("preset fruit_weight supports double_gompertz and flex_double_gompertz, not {kind:?}"));
                }
                let (s1, s2, k1, k2) = m.flexibility.unwrap_or(Flexibility::VeryLow).fruit_weight();
                let g = self.design.fruit_count.unwrap_or(5);
                (
                    GrowthModelSpec::fruit_weight(kind, m.knots.unwrap_or(k1), m.knots2.unwrap_or(k2), g),
                    PriorSpec::fruit_weight(kind, m.sigma_b_bar.unwrap_or(s1), m.sigma_b2_bar.unwrap_or(s2)),
                )
            }
        };
        if let Some(a) = m.richards_shape {
            spec.richards_shape = a;
        }
        if let Some(a) = m.weibull_shape {
            spec.weibull_shape = a;
        }
        if let Some(u) = m.spline_time_unit {
            spec.spline_time_unit = u;
        }
        if let Some(p) = m.phase2_exponent {
            spec.phase2_exponent = p;
        }
        for entry in &self.prior.entries {
            match prior.entries.iter_mut().find(|e| e.name == entry.name) {
                Some(slot) => *slot = entry.clone(),
                None => return bad(format!("prior entry `{}` is not a parameter of {kind:?}", entry.name)),
            }
        }
        if let Some(sd) = self.prior.fruit_sd {
            prior.fruit_sd = sd;
        }
        spec.validate().map_err(core_err)?;
        Ok((spec, prior))
    }

    pub fn laplace(&self) -> LaplaceSettings {
        let c = &self.compute;
        LaplaceSettings {
            restarts: c.restarts,
            max_iter: c.max_iter,
            tol: c.tol,
            h: c.h,
            spd_floor: c.spd_floor,
            mc_draws: c.mc_draws,
            newton_steps: c.newton_steps,
        }
    }

    pub fn search(&self) -> SearchSettings {
        let a = &self.algorithm;
        let default_step = match self.model.preset {
            Preset::DryMatter2021 => 0.5,
            Preset::FruitWeight => 5.0,
        };
        SearchSettings {
            algorithm: a.name,
            grid_step: a.grid_step.unwrap_or(default_step),
            passes: a.passes,
            q: a.q,
            acceptance_reps: a.acceptance_reps,
            starts: a.starts,
            l_search: self.compute.l_search,
            l_final: self.compute.l_final,
            seed: self.compute.seed,
        }
    }

    /// Design template for `spec`: configured times if given, zeros otherwise.
    pub fn template_for(&self, spec: &GrowthModelSpec) -> Result<TimeDesign, ConfigError> {
        let d = &self.design;
        if d.n == 0 {
            return bad("design.n must be at least 1");
        }
        if let Some([lo, hi]) = d.bounds {
            if lo != 0.0 || hi != spec.t_max {
                return bad(format!("design.bounds must be [0, {}] for this model", spec.t_max));
            }
        }
        let protocol = d.protocol.unwrap_or(if spec.kind.is_two_phase() {
            Protocol::RepeatedMeasures
        } else {
            Protocol::Destructive
        });
        let times = match &d.times {
            Some(t) if t.len() != d.n => {
                return bad(format!("design.times has {} entries but design.n = {}", t.len(), d.n))
            }
            Some(t) => t.clone(),
            None => vec![0.0; d.n],
        };
        let g = if protocol == Protocol::RepeatedMeasures { spec.fruit_count } else { 1 };
        let design = TimeDesign::new(times, spec.t_max, protocol, g).map_err(core_err)?;
        design.check_against(spec).map_err(core_err)?;
        Ok(design)
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let m = &self.model;
        if !m.kind.is_flexible() && (m.knots.is_some_and(|k| k > 0) || m.knots2.is_some_and(|k| k > 0)) {
            return bad(format!("{:?} has no spline; remove model.K and model.K2", m.kind));
        }
        let (spec, prior) = self.model_for(m.kind)?;
        let model = GrowthModel::new(spec.clone(), prior.clone()).map_err(core_err)?;
        let template = self.template_for(&spec)?;
        let laplace = self.laplace();
        laplace.validate().map_err(core_err)?;
        let search = self.search();
        search.validate().map_err(core_err)?;
        if self.compute.workers == 0 {
            return bad("compute.workers must be at least 1");
        }
        if self.evaluation.grid_points < 2 {
            return bad("evaluation.grid_points must be at least 2");
        }
        Ok(Resolved { spec, prior, model, template, laplace, search })
    }

    /// Fixed design times, required by some subcommands.
    pub fn fixed_times(&self) -> Result<&[f64], ConfigError> {
        self.design
            .times
            .as_deref()
            .ok_or_else(|| ConfigError("missing required key `design.times`".into()))
    }
}
