//! Design search: grid coordinate exchange (CE), approximate coordinate
//! exchange (ACE) on a one-dimensional GP emulator, and the multi-start
//! protocol that re-ranks finished searches with a larger Monte Carlo size.

mod gp;

pub use gp::{emulator_argmax, gp_fit_1d, Emulator, SCAN_POINTS};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::inference::LaplaceSettings;
use crate::model::HierarchicalModel;
use crate::rng::{derive_seed, substream, Domain};
use crate::simulate::TimeDesign;
use crate::utility::expected_utility;

/// One noisy evaluation of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub estimate: f64,
    pub std_error: f64,
}

impl Evaluation {
    pub fn exact(estimate: f64) -> Self {
        Self { estimate, std_error: 0.0 }
    }
}

/// A (possibly noisy) design criterion to maximize. Evaluations that share a
/// seed must use common random numbers.
pub trait DesignObjective: Sync {
    fn evaluate(&self, times: &[f64], seed: u64) -> Result<Evaluation>;
}

impl<F> DesignObjective for F
where
    F: Fn(&[f64], u64) -> Result<Evaluation> + Sync,
{
    fn evaluate(&self, times: &[f64], seed: u64) -> Result<Evaluation> {
        self(times, seed)
    }
}

/// Expected KLD utility of a model at a fixed Monte Carlo size.
pub struct UtilityObjective<'a, M: HierarchicalModel> {
    pub model: &'a M,
    /// Supplies horizon, protocol and fruit count; its times are replaced.
    pub template: TimeDesign,
    pub laplace: LaplaceSettings,
    pub l: usize,
}

impl<M: HierarchicalModel> DesignObjective for UtilityObjective<'_, M> {
    fn evaluate(&self, times: &[f64], seed: u64) -> Result<Evaluation> {
        let design = self.template.with_times(times.to_vec())?;
        let u = expected_utility(self.model, &design, &self.laplace, self.l, seed)?;
        Ok(Evaluation { estimate: u.estimate, std_error: u.std_error })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ce,
    Ace,
}

/// Knobs of the design search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub algorithm: Algorithm,
    /// CE grid spacing in time units.
    pub grid_step: f64,
    /// Sweeps over the coordinates.
    pub passes: usize,
    /// Emulator training evaluations per coordinate (ACE).
    #[serde(rename = "Q")]
    pub q: usize,
    /// Replicate evaluations of incumbent and candidate in the ACE acceptance step.
    pub acceptance_reps: usize,
    /// Random starting designs in the multi-start protocol.
    pub starts: usize,
    #[serde(rename = "L_search")]
    pub l_search: usize,
    #[serde(rename = "L_final")]
    pub l_final: usize,
    pub seed: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ace,
            grid_step: 0.5,
            passes: 3,
            q: 20,
            acceptance_reps: 2,
            starts: 10,
            l_search: 1000,
            l_final: 20000,
            seed: 0,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return config(format!("grid_step must be positive, got {}", self.grid_step));
        }
        if self.q < 5 {
            return config(format!("Q must be at least 5, got {}", self.q));
        }
        if self.starts == 0 || self.passes == 0 || self.acceptance_reps == 0 {
            return config("starts, passes and acceptance_reps must be at least 1");
        }
        if self.l_search < 2 || self.l_final < self.l_search {
            return config(format!(
                "need 2 <= L_search <= L_final, got {} and {}",
                self.l_search, self.l_final
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// Current design at the start of a coordinate step.
    Incumbent,
    /// A CE grid value or an ACE emulator training point.
    Candidate,
    /// ACE acceptance comparison of the emulator's maximizer.
    Proposal,
    /// A failed evaluation or a coordinate that could not be searched.
    Skipped,
}

/// One entry of a search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    /// Position in the trace; stands in for a timestamp.
    pub seq: usize,
    pub start: usize,
    pub pass: usize,
    pub coordinate: usize,
    pub kind: RecordKind,
    pub candidate: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub accepted: bool,
}

/// Append-only log of a search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    records: Vec<SearchRecord>,
}

impl SearchTrace {
    pub fn records(&self) -> &[SearchRecord] {
        &self.records
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        start: usize,
        pass: usize,
        coordinate: usize,
        kind: RecordKind,
        candidate: f64,
        eval: Option<Evaluation>,
        accepted: bool,
    ) -> usize {
        let seq = self.records.len();
        let (estimate, std_error) = eval.map_or((f64::NAN, f64::NAN), |e| (e.estimate, e.std_error));
        self.records.push(SearchRecord {
            seq,
            start,
            pass,
            coordinate,
            kind,
            candidate,
            estimate,
            std_error,
            accepted,
        });
        seq
    }

    fn mark_accepted(&mut self, seq: usize) {
        self.records[seq].accepted = true;
    }

    fn extend(&mut self, other: SearchTrace) {
        for mut r in other.records {
            r.seq = self.records.len();
            self.records.push(r);
        }
    }
}

fn sorted(mut times: Vec<f64>) -> Vec<f64> {
    times.sort_by(f64::total_cmp);
    times
}

fn check_start(start: &TimeDesign) -> Result<()> {
    if start.is_empty() {
        return config("cannot search over an empty design");
    }
    Ok(())
}

/// Grid `0, step, 2 step, ...` with `t_max` appended if the steps miss it.
pub fn time_grid(t_max: f64, step: f64) -> Vec<f64> {
    let count = (t_max / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=count).map(|i| (i as f64 * step).min(t_max)).collect();
    if t_max - grid[grid.len() - 1] > 1e-9 * t_max.max(1.0) {
        grid.push(t_max);
    }
    grid
}

/// Grid coordinate exchange.
///
/// All evaluations of one run share the seed `settings.seed`, so each
/// comparison is made under common random numbers and the incumbent's value
/// never decreases. A candidate replaces the incumbent only if strictly better.
pub fn coordinate_exchange<O: DesignObjective + ?Sized>(
    start: &TimeDesign,
    objective: &O,
    settings: &SearchSettings,
) -> Result<(TimeDesign, SearchTrace)> {
    settings.validate()?;
    check_start(start)?;
    let grid = time_grid(start.t_max(), settings.grid_step);
    let seed = settings.seed;
    let mut times = start.times().to_vec();
    let mut trace = SearchTrace::default();
    let mut current = objective.evaluate(&times, seed)?;
    for pass in 0..settings.passes {
        let mut changed = false;
        for i in 0..times.len() {
            let inc_seq = trace.push(0, pass, i, RecordKind::Incumbent, times[i], Some(current), false);
            let mut best: Option<(f64, Evaluation, usize)> = None;
            let mut trial = times.clone();
            for &g in &grid {
                if g == times[i] {
                    continue;
                }
                trial[i] = g;
                match objective.evaluate(&trial, seed) {
                    Ok(ev) => {
                        let seq = trace.push(0, pass, i, RecordKind::Candidate, g, Some(ev), false);
                        let bar = best.map_or(current.estimate, |b| b.1.estimate);
                        if ev.estimate > bar {
                            best = Some((g, ev, seq));
                        }
                    }
                    Err(e) => {
                        log::warn!("CE candidate t = {g} for coordinate {i} skipped: {e}");
                        trace.push(0, pass, i, RecordKind::Skipped, g, None, false);
                    }
                }
            }
            match best {
                Some((g, ev, seq)) => {
                    times[i] = g;
                    current = ev;
                    trace.mark_accepted(seq);
                    changed = true;
                }
                None => trace.mark_accepted(inc_seq),
            }
        }
        if !changed {
            break;
        }
    }
    Ok((start.with_times(sorted(times))?, trace))
}

fn replicate_mean<O: DesignObjective + ?Sized>(
    objective: &O,
    times: &[f64],
    seeds: &[u64],
) -> Result<Evaluation> {
    let evals: Vec<Evaluation> = seeds.iter().map(|&s| objective.evaluate(times, s)).collect::<Result<_>>()?;
    let n = evals.len() as f64;
    let estimate = evals.iter().map(|e| e.estimate).sum::<f64>() / n;
    let var = evals.iter().map(|e| e.std_error * e.std_error).sum::<f64>() / (n * n);
    Ok(Evaluation { estimate, std_error: var.sqrt() })
}

/// Approximate coordinate exchange.
///
/// For each coordinate, the objective is evaluated at `Q` equispaced times
/// (each with its own seed) with the other coordinates held fixed, a GP
/// emulator is fitted, and its maximizer is compared with the incumbent over
/// `acceptance_reps` fresh common seeds. The candidate is accepted only if its
/// mean is strictly higher.
pub fn ace_optimize<O: DesignObjective + ?Sized>(
    start: &TimeDesign,
    objective: &O,
    settings: &SearchSettings,
) -> Result<(TimeDesign, SearchTrace)> {
    settings.validate()?;
    check_start(start)?;
    let t_max = start.t_max();
    let points: Vec<f64> = (0..settings.q)
        .map(|j| t_max * j as f64 / (settings.q - 1) as f64)
        .collect();
    let mut times = start.times().to_vec();
    let mut trace = SearchTrace::default();
    for pass in 0..settings.passes {
        for i in 0..times.len() {
            let step_seed = derive_seed(settings.seed, Domain::Search, &[pass as u64, i as u64]);
            let batch: Vec<Result<Evaluation>> = points
                .par_iter()
                .enumerate()
                .map(|(j, &x)| {
                    let mut trial = times.clone();
                    trial[i] = x;
                    objective.evaluate(&trial, derive_seed(step_seed, Domain::Search, &[0, j as u64]))
                })
                .collect();
            let (mut xs, mut ys, mut se2) = (Vec::new(), Vec::new(), Vec::new());
            for (&x, r) in points.iter().zip(batch) {
                match r {
                    Ok(ev) => {
                        trace.push(0, pass, i, RecordKind::Candidate, x, Some(ev), false);
                        xs.push(x);
                        ys.push(ev.estimate);
                        se2.push(ev.std_error * ev.std_error);
                    }
                    Err(e) => {
                        log::warn!("ACE training point t = {x} for coordinate {i} failed: {e}");
                        trace.push(0, pass, i, RecordKind::Skipped, x, None, false);
                    }
                }
            }
            let emulator = match gp_fit_1d(&xs, &ys, &se2) {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("coordinate {i} skipped in pass {pass}: {e}");
                    trace.push(0, pass, i, RecordKind::Skipped, times[i], None, false);
                    continue;
                }
            };
            let proposal = emulator_argmax(&emulator, 0.0, t_max);
            let seeds: Vec<u64> = (0..settings.acceptance_reps)
                .map(|r| derive_seed(step_seed, Domain::Search, &[1, r as u64]))
                .collect();
            let mut trial = times.clone();
            trial[i] = proposal;
            let compared = replicate_mean(objective, &times, &seeds)
                .and_then(|inc| Ok((inc, replicate_mean(objective, &trial, &seeds)?)));
            match compared {
                Ok((inc, cand)) => {
                    let accept = cand.estimate > inc.estimate;
                    trace.push(0, pass, i, RecordKind::Incumbent, times[i], Some(inc), !accept);
                    trace.push(0, pass, i, RecordKind::Proposal, proposal, Some(cand), accept);
                    if accept {
                        times[i] = proposal;
                    }
                }
                Err(e) => {
                    log::warn!("acceptance step for coordinate {i} failed: {e}");
                    trace.push(0, pass, i, RecordKind::Skipped, proposal, None, false);
                }
            }
        }
    }
    Ok((start.with_times(sorted(times))?, trace))
}

/// Uniform random design with the template's horizon and protocol.
pub fn random_design(template: &TimeDesign, seed: u64, index: u64) -> Result<TimeDesign> {
    let mut rng = substream(seed, Domain::Start, index);
    let times = (0..template.len()).map(|_| rng.gen_range(0.0..=template.t_max())).collect();
    template.with_times(times)
}

/// Outcome of one start of [`multi_start`].
#[derive(Debug, Clone)]
pub struct StartOutcome {
    pub start: TimeDesign,
    pub design: TimeDesign,
    pub final_eval: Evaluation,
}

#[derive(Debug, Clone)]
pub struct MultiStartResult {
    pub best: TimeDesign,
    pub best_eval: Evaluation,
    /// Index of the best start.
    pub best_start: usize,
    /// One entry per start; `None` where the start failed.
    pub outcomes: Vec<Option<StartOutcome>>,
    /// Concatenated traces; records carry their start index.
    pub trace: SearchTrace,
}

/// Runs the configured optimizer from `settings.starts` uniform random designs,
/// re-evaluates every result with `final_objective` under one fresh common
/// seed, and returns the best. Fails only if every start fails.
pub fn multi_start_with<O, P>(
    template: &TimeDesign,
    search_objective: &O,
    final_objective: &P,
    settings: &SearchSettings,
) -> Result<MultiStartResult>
where
    O: DesignObjective + ?Sized,
    P: DesignObjective + ?Sized,
{
    settings.validate()?;
    check_start(template)?;
    let final_seed = derive_seed(settings.seed, Domain::Search, &[u64::MAX]);
    let mut outcomes = Vec::with_capacity(settings.starts);
    let mut trace = SearchTrace::default();
    let mut best: Option<(usize, Evaluation)> = None;
    let mut last_err = None;
    for s in 0..settings.starts {
        let run = || -> Result<(StartOutcome, SearchTrace)> {
            let start = random_design(template, settings.seed, s as u64)?;
            let run_settings = SearchSettings {
                seed: derive_seed(settings.seed, Domain::Search, &[s as u64]),
                ..settings.clone()
            };
            let (design, mut t) = match settings.algorithm {
                Algorithm::Ce => coordinate_exchange(&start, search_objective, &run_settings)?,
                Algorithm::Ace => ace_optimize(&start, search_objective, &run_settings)?,
            };
            for r in &mut t.records {
                r.start = s;
            }
            let final_eval = final_objective.evaluate(design.times(), final_seed)?;
            Ok((StartOutcome { start, design, final_eval }, t))
        };
        match run() {
            Ok((outcome, t)) => {
                log::info!(
                    "start {s}: {:?} -> {:.6} (se {:.6})",
                    outcome.design.times(),
                    outcome.final_eval.estimate,
                    outcome.final_eval.std_error
                );
                if best.map_or(true, |(_, b)| outcome.final_eval.estimate > b.estimate) {
                    best = Some((s, outcome.final_eval));
                }
                trace.extend(t);
                outcomes.push(Some(outcome));
            }
            Err(e) => {
                log::warn!("start {s} failed: {e}");
                last_err = Some(e);
                outcomes.push(None);
            }
        }
    }
    let Some((best_start, best_eval)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::Estimation("no start succeeded".into())));
    };
    let best = outcomes[best_start].as_ref().expect("best start succeeded").design.clone();
    Ok(MultiStartResult { best, best_eval, best_start, outcomes, trace })
}

/// Multi-start search of the expected KLD utility with `L_search` samples
/// during search and `L_final` for the final ranking.
pub fn multi_start<M: HierarchicalModel>(
    model: &M,
    template: &TimeDesign,
    laplace: &LaplaceSettings,
    settings: &SearchSettings,
) -> Result<MultiStartResult> {
    model.check_design(template)?;
    let search = UtilityObjective { model, template: template.clone(), laplace: laplace.clone(), l: settings.l_search };
    let fin = UtilityObjective { model, template: template.clone(), laplace: laplace.clone(), l: settings.l_final };
    multi_start_with(template, &search, &fin, settings)
}
