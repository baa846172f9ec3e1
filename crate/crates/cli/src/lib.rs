//! `oded`: configuration-driven runs of design search, utility estimation,
//! model fitting and design evaluation.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
//! computation fails.

pub mod config;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use oded_core::evaluation::{flexibility_dispersion, generate_realizations, relative_efficiency};
use oded_core::inference::{joint_posterior, laplace_b_given_theta, laplace_theta};
use oded_core::optimize::multi_start;
use oded_core::{derive_seed, expected_utility, substream, Domain, GrowthModel, HierarchicalModel, TimeDesign};

pub use config::{ConfigError, RunConfig};
use output::Outputs;

/// Environment variable overriding `compute.workers`.
pub const WORKERS_ENV: &str = "ODED_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "oded", version, about = "Bayesian sampling-time design for growth models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set design.n=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Where to write the manifest (default: next to the main output).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate prior realisations of the growth curve.
    Realize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one dataset at `design.times` from a prior draw.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the expected utility of `design.times`.
    ExpectedUtility {
        #[command(flatten)]
        common: Common,
        /// Monte Carlo size (default `compute.L_search`).
        #[arg(long = "L")]
        l: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sample utilities as CSV.
        #[arg(long)]
        per_sample: Option<PathBuf>,
    },
    /// Search for an optimal design.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["ce", "ace"])]
        algorithm: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "L-search")]
        l_search: Option<usize>,
        #[arg(long = "L-final")]
        l_final: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Relative efficiencies of designs under data-generating models.
    Efficiency {
        #[command(flatten)]
        common: Common,
        /// Extra design as NAME=PATH to a design.json.
        #[arg(long = "design", value_name = "NAME=PATH")]
        designs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the two-stage Laplace posterior to a CSV dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write outputs (and the new manifest) here instead of the recorded paths.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Failure of a run, mapped onto an exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Compute(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Compute(e) => write!(f, "computation failed: {e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

/// Core configuration errors keep exit code 2; everything else is a compute failure.
fn compute<E: Into<anyhow::Error>>(e: E) -> CliError {
    let e = e.into();
    match e.downcast_ref::<oded_core::Error>() {
        Some(oded_core::Error::Config(m)) => CliError::Config(m.clone()),
        _ => CliError::Compute(e),
    }
}

/// What a manifest records: enough to repeat the run exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Output role -> path.
    pub outputs: std::collections::BTreeMap<String, PathBuf>,
    /// Input role -> path.
    #[serde(default)]
    pub inputs: std::collections::BTreeMap<String, PathBuf>,
    /// Extra named designs for `efficiency`, as NAME=PATH.
    #[serde(default)]
    pub designs: Vec<String>,
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
}

/// Parses `argv`, runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Job {
    manifest: Manifest,
    manifest_path: PathBuf,
}

fn read_config(common: &Common, extra: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut overrides = common.set.clone();
    overrides.extend_from_slice(extra);
    Ok(config::load(&text, &overrides)?)
}

fn default_manifest_path(explicit: &Option<PathBuf>, main_out: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    match main_out.and_then(Path::parent) {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join("manifest.json"),
        _ => PathBuf::from("manifest.json"),
    }
}

fn new_manifest(command: &str, cfg: RunConfig) -> Manifest {
    Manifest {
        tool: "oded".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: cfg.compute.seed,
        config: cfg,
        outputs: Default::default(),
        inputs: Default::default(),
        designs: Vec::new(),
        l: None,
    }
}

fn dispatch(command: Command) -> Result<Value, CliError> {
    let job = match command {
        Command::Replay { manifest, out_dir } => replay_job(&manifest, out_dir.as_deref())?,
        other => job_from_command(other)?,
    };
    execute(job)
}

fn job_from_command(command: Command) -> Result<Job, CliError> {
    let mut outputs = std::collections::BTreeMap::new();
    let (name, common, cfg, main_out) = match command {
        Command::Realize { common, out } => {
            let cfg = read_config(&common, &[])?;
            outputs.insert("out".to_string(), out.clone());
            ("realize", common, cfg, Some(out))
        }
        Command::Simulate { common, out } => {
            let cfg = read_config(&common, &[])?;
            outputs.insert("out".to_string(), out.clone());
            ("simulate", common, cfg, Some(out))
        }
        Command::ExpectedUtility { common, l, out, per_sample } => {
            let cfg = read_config(&common, &[])?;
            if let Some(p) = &out {
                outputs.insert("out".to_string(), p.clone());
            }
            if let Some(p) = per_sample {
                outputs.insert("per_sample".to_string(), p);
            }
            let mut m = new_manifest("expected-utility", cfg);
            m.outputs = outputs;
            m.l = l;
            let manifest_path = default_manifest_path(&common.manifest, out.as_deref());
            return Ok(Job { manifest: m, manifest_path });
        }
        Command::Optimize { common, algorithm, n, starts, seed, l_search, l_final, out, trace } => {
            let mut extra = Vec::new();
            if let Some(a) = algorithm {
                extra.push(format!("algorithm.name=\"{a}\""));
            }
            if let Some(v) = n {
                extra.push(format!("design.n={v}"));
            }
            if let Some(v) = starts {
                extra.push(format!("algorithm.starts={v}"));
            }
            if let Some(v) = seed {
                extra.push(format!("compute.seed={v}"));
            }
            if let Some(v) = l_search {
                extra.push(format!("compute.L_search={v}"));
            }
            if let Some(v) = l_final {
                extra.push(format!("compute.L_final={v}"));
            }
            let cfg = read_config(&common, &extra)?;
            outputs.insert("out".to_string(), out.clone());
            if let Some(t) = trace {
                outputs.insert("trace".to_string(), t);
            }
            ("optimize", common, cfg, Some(out))
        }
        Command::Efficiency { common, designs, out } => {
            let cfg = read_config(&common, &[])?;
            outputs.insert("out".to_string(), out.clone());
            let mut m = new_manifest("efficiency", cfg);
            m.outputs = outputs;
            m.designs = designs;
            let manifest_path = default_manifest_path(&common.manifest, Some(&out));
            return Ok(Job { manifest: m, manifest_path });
        }
        Command::Fit { common, data, out } => {
            let cfg = read_config(&common, &[])?;
            outputs.insert("out".to_string(), out.clone());
            let mut m = new_manifest("fit", cfg);
            m.outputs = outputs;
            m.inputs.insert("data".to_string(), data);
            let manifest_path = default_manifest_path(&common.manifest, Some(&out));
            return Ok(Job { manifest: m, manifest_path });
        }
        Command::Replay { .. } => unreachable!("handled by dispatch"),
    };
    let mut m = new_manifest(name, cfg);
    m.outputs = outputs;
    let manifest_path = default_manifest_path(&common.manifest, main_out.as_deref());
    Ok(Job { manifest: m, manifest_path })
}

fn replay_job(path: &Path, out_dir: Option<&Path>) -> Result<Job, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid manifest {}: {e}", path.display())))?;
    let manifest_path = match out_dir {
        Some(dir) => {
            for p in manifest.outputs.values_mut() {
                let name = p.file_name().map(PathBuf::from).unwrap_or_else(|| p.clone());
                *p = dir.join(name);
            }
            dir.join("manifest.json")
        }
        None => path.to_path_buf(),
    };
    Ok(Job { manifest, manifest_path })
}

fn workers(cfg: &RunConfig) -> Result<usize, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(cfg.compute.workers),
    }
}

fn execute(job: Job) -> Result<Value, CliError> {
    let m = &job.manifest;
    // Validate everything before any computation or output.
    let resolved = m.config.resolve()?;
    let threads = workers(&m.config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} worker(s): {e}")))?;
    let mut outputs = Outputs::default();
    let result = pool.install(|| run_command(m, &resolved, &mut outputs));
    let result = result.and_then(|summary| {
        outputs
            .write_json(&job.manifest_path, &serde_json::to_value(m).expect("manifest serializes"))
            .map_err(compute)?;
        Ok(summary)
    });
    if result.is_err() {
        outputs.remove_all();
    }
    result
}

fn output_path<'a>(m: &'a Manifest, role: &str) -> Option<&'a PathBuf> {
    m.outputs.get(role)
}

fn run_command(m: &Manifest, r: &config::Resolved, outputs: &mut Outputs) -> Result<Value, CliError> {
    let cfg = &m.config;
    let seed = cfg.compute.seed;
    match m.command.as_str() {
        "realize" => {
            let t_max = r.spec.t_max;
            let k = cfg.evaluation.grid_points;
            let grid: Vec<f64> = (0..k).map(|i| t_max * i as f64 / (k - 1) as f64).collect();
            let rows = generate_realizations(&r.model, cfg.evaluation.n_curves, &grid, cfg.evaluation.mode, seed)
                .map_err(compute)?;
            let path = output_path(m, "out").expect("realize has an output");
            outputs.write_realizations(path, &rows).map_err(compute)?;
            let mid = rows
                .iter()
                .filter(|row| (row.t - grid[k / 2]).abs() < 1e-12)
                .map(|row| row.y)
                .collect::<Vec<_>>();
            Ok(json!({
                "curves": cfg.evaluation.n_curves,
                "rows": rows.len(),
                "mid_horizon_t": grid[k / 2],
                "mid_horizon_sd": sample_sd(&mid),
            }))
        }
        "simulate" => {
            let design = r.template.with_times(cfg.fixed_times()?.to_vec()).map_err(config_err)?;
            let mut rng = substream(seed, Domain::Sample, 0);
            let (theta, effects) = r.model.sample_prior(&mut rng).map_err(compute)?;
            let data = r.model.simulate(&design, &theta, &effects, &mut rng).map_err(compute)?;
            let path = output_path(m, "out").expect("simulate has an output");
            outputs.write_dataset(path, &data).map_err(compute)?;
            Ok(json!({
                "rows": data.rows.len(),
                "theta": named_theta(&r.model, &theta),
                "effects": effects,
            }))
        }
        "expected-utility" => {
            let design = r.template.with_times(cfg.fixed_times()?.to_vec()).map_err(config_err)?;
            let l = m.l.unwrap_or(cfg.compute.l_search);
            let u = expected_utility(&r.model, &design, &r.laplace, l, seed).map_err(compute)?;
            if let Some(p) = output_path(m, "per_sample") {
                outputs.write_per_sample(p, &u.per_sample).map_err(compute)?;
            }
            let summary = json!({
                "times": design.times(),
                "estimate": u.estimate,
                "std_error": u.std_error,
                "L": u.l,
                "failures": u.failures,
            });
            if let Some(p) = output_path(m, "out") {
                outputs.write_json(p, &summary).map_err(compute)?;
            }
            Ok(summary)
        }
        "optimize" => {
            let res = multi_start(&r.model, &r.template, &r.laplace, &r.search).map_err(compute)?;
            let design = json!({
                "times": res.best.times(),
                "estimate": res.best_eval.estimate,
                "std_error": res.best_eval.std_error,
                "L": r.search.l_final,
            });
            outputs.write_json(output_path(m, "out").expect("optimize has an output"), &design).map_err(compute)?;
            if let Some(p) = output_path(m, "trace") {
                outputs.write_trace(p, &res.trace).map_err(compute)?;
            }
            let starts: Vec<Value> = res
                .outcomes
                .iter()
                .map(|o| match o {
                    Some(o) => json!({
                        "start": o.start.times(),
                        "design": o.design.times(),
                        "estimate": o.final_eval.estimate,
                        "std_error": o.final_eval.std_error,
                    }),
                    None => Value::Null,
                })
                .collect();
            Ok(json!({
                "design": design,
                "best_start": res.best_start,
                "dispersion": flexibility_dispersion(&res.best).ok(),
                "starts": starts,
            }))
        }
        "efficiency" => efficiency(m, r, outputs),
        "fit" => {
            let input = m.inputs.get("data").expect("fit has a data input");
            let data = output::read_dataset(input).map_err(|e| CliError::Config(format!("{e:#}")))?;
            r.model.check_dataset(&data).map_err(config_err)?;
            let mut rng = substream(seed, Domain::Inference, 0);
            let theta_fit = laplace_theta(&r.model, &data, &r.laplace, &mut rng).map_err(compute)?;
            let theta_star: Vec<f64> = theta_fit.posterior.mean().iter().copied().collect();
            let b_fit = laplace_b_given_theta(&r.model, &data, &theta_star, &r.laplace).map_err(compute)?;
            let joint = joint_posterior(&theta_fit.posterior, &b_fit.posterior).map_err(compute)?;
            let names: Vec<&str> = r.model.layout().names().iter().map(|n| n.as_str()).collect();
            let posterior = json!({
                "theta_names": names,
                "theta": theta_fit.posterior.to_record(),
                "effects": b_fit.posterior.to_record(),
                "joint": joint.to_record(),
                "log_objective": theta_fit.objective,
                "floored_eigenvalues": theta_fit.floored + b_fit.floored,
            });
            outputs.write_json(output_path(m, "out").expect("fit has an output"), &posterior).map_err(compute)?;
            Ok(json!({
                "rows": data.rows.len(),
                "theta_mean": named_theta(&r.model, &theta_star),
                "repaired": theta_fit.repaired() || b_fit.repaired(),
            }))
        }
        other => Err(CliError::Config(format!("unknown command `{other}` in manifest"))),
    }
}

fn efficiency(m: &Manifest, r: &config::Resolved, outputs: &mut Outputs) -> Result<Value, CliError> {
    let cfg = &m.config;
    let mut designs: Vec<(String, Vec<f64>)> =
        cfg.evaluation.designs.iter().map(|d| (d.name.clone(), d.times.clone())).collect();
    for spec in &m.designs {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--design `{spec}` is not NAME=PATH")))?;
        let times = output::read_design_times(Path::new(path)).map_err(|e| CliError::Config(format!("{e:#}")))?;
        designs.push((name.to_string(), times));
    }
    if designs.is_empty() {
        return Err(CliError::Config("no designs to evaluate (evaluation.designs or --design)".into()));
    }
    if cfg.evaluation.dgms.is_empty() {
        return Err(CliError::Config("evaluation.dgms is empty".into()));
    }
    let mut dgms = Vec::new();
    for &kind in &cfg.evaluation.dgms {
        let (spec, prior) = cfg.model_for(kind)?;
        let model = GrowthModel::new(spec, prior).map_err(config_err)?;
        let template = cfg.template_for(model.spec())?;
        let design_list: Vec<TimeDesign> = designs
            .iter()
            .map(|(_, t)| template.with_times(t.clone()))
            .collect::<oded_core::Result<_>>()
            .map_err(config_err)?;
        let reference = cfg
            .evaluation
            .references
            .iter()
            .find(|d| d.dgm == kind)
            .map(|d| template.with_times(d.times.clone()))
            .transpose()
            .map_err(config_err)?;
        dgms.push((kind, model, template, design_list, reference));
    }
    let mut matrix = vec![vec![0.0; dgms.len()]; designs.len()];
    let mut details = Vec::new();
    for (j, (kind, model, template, design_list, reference)) in dgms.into_iter().enumerate() {
        let d_star = match reference {
            Some(d) => d,
            None => {
                let search = oded_core::optimize::SearchSettings {
                    seed: derive_seed(cfg.compute.seed, Domain::Search, &[j as u64]),
                    ..r.search.clone()
                };
                multi_start(&model, &template, &r.laplace, &search).map_err(compute)?.best
            }
        };
        let eval_seed = derive_seed(cfg.compute.seed, Domain::Misc, &[j as u64]);
        for (i, d) in design_list.iter().enumerate() {
            let eff = relative_efficiency(d, &model, &d_star, &r.laplace, r.search.l_final, eval_seed)
                .map_err(compute)?;
            matrix[i][j] = eff.ratio;
            details.push(json!({
                "design": designs[i].0,
                "dgm": kind,
                "ratio": eff.ratio,
                "estimate": eff.design.estimate,
                "std_error": eff.design.std_error,
                "reference_estimate": eff.reference.estimate,
                "reference_std_error": eff.reference.std_error,
                "reference_times": d_star.times(),
            }));
        }
    }
    let names: Vec<String> = cfg
        .evaluation
        .dgms
        .iter()
        .map(|k| serde_json::to_value(k).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
        .collect();
    let rows: Vec<&str> = designs.iter().map(|(n, _)| n.as_str()).collect();
    outputs
        .write_matrix(output_path(m, "out").expect("efficiency has an output"), &names, &rows, &matrix)
        .map_err(compute)?;
    Ok(json!({ "efficiencies": details }))
}

fn config_err(e: oded_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn named_theta(model: &GrowthModel, theta: &[f64]) -> Value {
    let map: serde_json::Map<String, Value> = model
        .layout()
        .names()
        .iter()
        .zip(theta)
        .map(|(n, v)| (n.as_str().to_string(), json!(v)))
        .collect();
    Value::Object(map)
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
