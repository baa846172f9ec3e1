//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --release --test acceptance -- 1 2 3`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use oded_core::evaluation::{flexibility_dispersion, relative_efficiency};
use oded_core::optimize::{
    ace_optimize, coordinate_exchange, multi_start, random_design, Algorithm, Evaluation, SearchSettings,
};
use oded_core::*;
use rand::Rng;
use support::{conjugate_fixtures, dopri, LinearToy};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "closed form vs ODE", closed_form_vs_ode),
        (2, "Laplace exactness", laplace_exactness),
        (3, "KLD correctness", kld_correctness),
        (4, "expected-utility oracle", expected_utility_oracle),
        (5, "MC error scaling", mc_error_scaling),
        (6, "optimizer sanity", optimizer_sanity),
        (7, "dispersion trend", dispersion_trend),
        (8, "efficiency ordering", efficiency_ordering),
        (9, "reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} ({name}): {status} - {} [{:.1} s]", o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn closed_form_vs_ode() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let grid_rel = |spec: &GrowthModelSpec, p: &ParamVector, breaks: &[f64]| -> f64 {
        let e = EffectsVector::zeros(spec);
        let times: Vec<f64> = (1..=20).map(|i| spec.t_max * i as f64 / 20.0).collect();
        let mut targets: Vec<f64> = times.iter().chain(breaks).copied().collect();
        targets.sort_by(f64::total_cmp);
        targets.dedup();
        let ys = dopri(|t, y| ode_rhs(spec, p, &e, t, y, None).unwrap(), 0.0, spec.y0, &targets, 1e-12, 1e-15);
        targets
            .iter()
            .zip(ys)
            .filter(|(t, _)| times.contains(t))
            .map(|(&t, y)| (mean_response(spec, p, &e, t, None).unwrap() - y).abs() / y.abs())
            .fold(0.0, f64::max)
    };
    let mut cases = 0;
    for (i, r) in [0.1, 0.2, 0.4].into_iter().enumerate() {
        for (j, lambda) in [0.2, 0.3, 0.5].into_iter().enumerate() {
            for (k, y0) in [0.005, 0.01, 0.05].into_iter().enumerate() {
                let mut single = vec![(ModelKind::Gompertz, 1.0), (ModelKind::Logistic, 1.0)];
                single.extend([0.5, 1.0, 2.0].map(|a| (ModelKind::Richards, a)));
                for (kind, a) in single {
                    let mut spec = GrowthModelSpec::dry_matter(kind, 0);
                    spec.y0 = y0;
                    spec.richards_shape = a;
                    let p = ParamVector::from_natural(
                        kind,
                        &[(ParamName::LogR, r), (ParamName::LogLambda, lambda), (ParamName::LogSigmaE, 0.01)],
                    )
                    .unwrap();
                    worst = worst.max(grid_rel(&spec, &p, &[]));
                    cases += 1;
                }
                // same grid rescaled to the weight horizon
                let mut spec = GrowthModelSpec::fruit_weight(ModelKind::DoubleGompertz, 0, 0, 1);
                spec.y0 = [0.5, 1.0, 2.0][k];
                let eta = 150.0;
                let p = ParamVector::from_natural(
                    ModelKind::DoubleGompertz,
                    &[
                        (ParamName::LogR, [0.01, 0.02, 0.04][i]),
                        (ParamName::LogLambda, [50.0, 100.0, 150.0][j]),
                        (ParamName::LogLambda2, 2.5 * [50.0, 100.0, 150.0][j]),
                        (ParamName::LogEta, eta),
                        (ParamName::LogSigmaE, 1.0),
                        (ParamName::LogSigmaBg, 0.1),
                    ],
                )
                .unwrap();
                worst = worst.max(grid_rel(&spec, &p, &[eta]));
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-6 && secs < 10.0, format!("{cases} curves, max relative error {worst:.2e}"))
}

fn laplace_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let fixtures = conjugate_fixtures();
    for (toy, data) in &fixtures {
        let fit = match laplace_theta(toy, data, &LaplaceSettings::default(), &mut substream(1, Domain::Inference, 0)) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("fit failed: {e}")),
        };
        let (mean, cov) = toy.theta_posterior(data);
        worst = worst
            .max((fit.posterior.mean() - mean).abs().max())
            .max((fit.posterior.cov() - cov).abs().max());
    }
    outcome(worst <= 1e-6, format!("{} fixtures, max |error| {worst:.2e}", fixtures.len()))
}

fn kld_correctness() -> Outcome {
    let g = |m: f64, v: f64| GaussianApprox::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap();
    let quad = |m1: f64, v1: f64, m0: f64, v0: f64| {
        let lp = |x: f64, m: f64, v: f64| -0.5 * ((x - m).powi(2) / v + (2.0 * std::f64::consts::PI * v).ln());
        let (lo, hi) = (m1 - 14.0 * v1.sqrt(), m1 + 14.0 * v1.sqrt());
        let n = 40_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| lp(x, m1, v1).exp() * (lp(x, m1, v1) - lp(x, m0, v0));
        let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
        (f(lo) + f(hi) + inner) * h / 3.0
    };
    let mut rng = substream(3, Domain::Misc, 0);
    let mut worst: f64 = 0.0;
    let mut self_worst: f64 = 0.0;
    for _ in 0..10 {
        let (m0, m1) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (v0, v1) = (rng.gen_range(0.1..4.0), rng.gen_range(0.05..4.0));
        let k = kld_mvn(&g(m0, v0), &g(m1, v1)).unwrap();
        worst = worst.max((k - quad(m1, v1, m0, v0)).abs());
        self_worst = self_worst.max(kld_mvn(&g(m0, v0), &g(m0, v0)).unwrap().abs());
    }
    outcome(
        worst <= 1e-6 && self_worst <= 1e-12,
        format!("max |analytic - quadrature| {worst:.2e}, identical moments {self_worst:.1e}"),
    )
}

fn expected_utility_oracle() -> Outcome {
    let start = Instant::now();
    let (sigma0, sigma_e, n) = (1.0, 0.5, 4);
    let toy = LinearToy::new(vec![0.0], vec![sigma0], vec![], sigma_e, 30.0);
    let design = TimeDesign::destructive(vec![3.0, 9.0, 15.0, 21.0], 30.0).unwrap();
    let exact = 0.5 * (1.0 + n as f64 * sigma0 * sigma0 / (sigma_e * sigma_e)).ln();
    let mut hits = 0;
    for rep in 0..20 {
        match expected_utility(&toy, &design, &LaplaceSettings::default(), 500, 1000 + rep) {
            Ok(u) if (u.estimate - exact).abs() <= 3.0 * u.std_error => hits += 1,
            Ok(_) => {}
            Err(e) => return outcome(false, format!("estimation failed: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(hits >= 19 && secs < 120.0, format!("{hits}/20 within 3 SE of {exact:.4}"))
}

fn mc_error_scaling() -> Outcome {
    let (spec, prior) = PriorSpec::dry_matter_preset(ModelKind::FlexGompertz, Flexibility::Low);
    let model = GrowthModel::new(spec, prior).unwrap();
    let laplace = LaplaceSettings { mc_draws: 20, restarts: 1, ..Default::default() };
    let design = TimeDesign::destructive(vec![0.0, 10.0, 20.0, 30.0], 30.0).unwrap();
    let mut pts = Vec::new();
    for l in [125usize, 250, 500, 1000, 2000] {
        match expected_utility(&model, &design, &laplace, l, 5) {
            Ok(u) => pts.push(((l as f64).ln(), u.std_error.ln())),
            Err(e) => return outcome(false, format!("estimation failed at L = {l}: {e}")),
        }
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    outcome((slope + 0.5).abs() <= 0.1, format!("slope {slope:.3}"))
}

fn optimizer_sanity() -> Outcome {
    let template = TimeDesign::destructive(vec![0.0; 3], 30.0).unwrap();
    let quadratic = |t: &[f64], _seed: u64| -> Result<Evaluation> {
        Ok(Evaluation::exact(-t.iter().map(|x| (x - 7.0).powi(2)).sum::<f64>()))
    };
    let ce = SearchSettings { algorithm: Algorithm::Ce, grid_step: 1.0, passes: 3, ..Default::default() };
    let start = random_design(&template, 1, 0).unwrap();
    let ce_best = match coordinate_exchange(&start, &quadratic, &ce) {
        Ok((d, _)) => d.times().to_vec(),
        Err(e) => return outcome(false, format!("CE failed: {e}")),
    };
    let ce_ok = ce_best == [7.0, 7.0, 7.0];

    let optimum = 11.3;
    let concave = |t: &[f64], _seed: u64| -> Result<Evaluation> {
        Ok(Evaluation::exact(-t.iter().map(|x| (x - optimum).powi(2)).sum::<f64>()))
    };
    let mut hits = 0;
    for run in 0..20u64 {
        let s = SearchSettings { algorithm: Algorithm::Ace, seed: 500 + run, ..Default::default() };
        let start = random_design(&template, 500 + run, 0).unwrap();
        if let Ok((d, _)) = ace_optimize(&start, &concave, &s) {
            if d.times().iter().all(|t| (t - optimum).abs() <= 0.5) {
                hits += 1;
            }
        }
    }
    outcome(ce_ok && hits >= 18, format!("CE -> {ce_best:?}; ACE within 0.5 in {hits}/20 runs"))
}

fn search_settings(seed: u64) -> SearchSettings {
    SearchSettings {
        algorithm: Algorithm::Ace,
        passes: 1,
        q: 5,
        acceptance_reps: 1,
        starts: 3,
        l_search: 500,
        l_final: 1000,
        seed,
        ..Default::default()
    }
}

fn search_laplace() -> LaplaceSettings {
    LaplaceSettings { mc_draws: 10, restarts: 1, ..Default::default() }
}

fn optimum(kind: ModelKind, level: Flexibility, n: usize, seed: u64) -> Result<TimeDesign> {
    let (spec, prior) = PriorSpec::dry_matter_preset(kind, level);
    let model = GrowthModel::new(spec, prior)?;
    let template = TimeDesign::destructive(vec![0.0; n], 30.0)?;
    Ok(multi_start(&model, &template, &search_laplace(), &search_settings(seed))?.best)
}

fn dispersion_trend() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for rep in 0..5u64 {
        let run = || -> Result<(f64, f64)> {
            let high = optimum(ModelKind::FlexGompertz, Flexibility::High, 12, 100 + rep)?;
            let low = optimum(ModelKind::FlexGompertz, Flexibility::VeryLow, 12, 100 + rep)?;
            Ok((flexibility_dispersion(&high)?, flexibility_dispersion(&low)?))
        };
        match run() {
            Ok((h, l)) => {
                wins += usize::from(h > l);
                pairs.push(format!("{h:.3}/{l:.3}"));
            }
            Err(e) => return outcome(false, format!("replication {rep} failed: {e}")),
        }
    }
    outcome(wins >= 4, format!("high > very low in {wins}/5 (high/very-low: {})", pairs.join(", ")))
}

fn efficiency_ordering() -> Outcome {
    let run = || -> Result<Vec<(ModelKind, f64, f64)>> {
        let high = optimum(ModelKind::FlexGompertz, Flexibility::High, 4, 200)?;
        let low = optimum(ModelKind::FlexGompertz, Flexibility::VeryLow, 4, 200)?;
        let mut rows = Vec::new();
        for (j, kind) in [ModelKind::Logistic, ModelKind::Richards].into_iter().enumerate() {
            let spec = GrowthModelSpec::dry_matter(kind, 0);
            let dgm = GrowthModel::new(spec, PriorSpec::dry_matter_2021(kind, 1.0))?;
            let d_star = optimum(kind, Flexibility::VeryLow, 4, 300 + j as u64)?;
            let seed = 400 + j as u64;
            let eh = relative_efficiency(&high, &dgm, &d_star, &search_laplace(), 2000, seed)?;
            let el = relative_efficiency(&low, &dgm, &d_star, &search_laplace(), 2000, seed)?;
            rows.push((kind, eh.ratio, el.ratio));
        }
        Ok(rows)
    };
    match run() {
        Ok(rows) => {
            let pass = rows.iter().all(|&(_, h, l)| h > l && h > 0.6);
            let detail = rows
                .iter()
                .map(|(k, h, l)| format!("{k:?}: high {h:.3}, very low {l:.3}"))
                .collect::<Vec<_>>()
                .join("; ");
            outcome(pass, detail)
        }
        Err(e) => outcome(false, format!("failed: {e}")),
    }
}

fn reproducibility() -> Outcome {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/dry_matter.json");
    let root = std::env::temp_dir().join(format!("oded-acceptance-{}", std::process::id()));
    let dirs: Vec<_> = (0..3).map(|i| root.join(i.to_string())).collect();
    for d in &dirs {
        std::fs::create_dir_all(d).unwrap();
    }
    let bin = env!("CARGO_BIN_EXE_oded");
    let p = |path: &Path| path.to_str().unwrap().to_string();
    let first = Command::new(bin)
        .env("ODED_WORKERS", "1")
        .args(["optimize", "--config", &p(&cfg), "--set", "design.n=4", "--set", "compute.seed=1"])
        .args(["--set", "compute.L_search=40", "--set", "compute.L_final=80"])
        .args(["--out", &p(&dirs[0].join("design.json")), "--trace", &p(&dirs[0].join("trace.csv"))])
        .output()
        .expect("binary runs");
    if !first.status.success() {
        return outcome(false, format!("optimize failed: {}", String::from_utf8_lossy(&first.stderr)));
    }
    let manifest = dirs[0].join("manifest.json");
    for (dir, workers) in [(&dirs[1], "8"), (&dirs[2], "1")] {
        let o = Command::new(bin)
            .env("ODED_WORKERS", workers)
            .args(["replay", "--manifest", &p(&manifest), "--out-dir", &p(dir)])
            .output()
            .expect("binary runs");
        if !o.status.success() {
            return outcome(false, format!("replay failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap_or_default();
    let same = ["design.json", "trace.csv"]
        .iter()
        .all(|f| !read(&dirs[0], f).is_empty() && dirs[1..].iter().all(|d| read(d, f) == read(&dirs[0], f)));
    let _ = std::fs::remove_dir_all(&root);
    outcome(same, "design.json and trace.csv from 1, 8 and 1 workers compared byte for byte".into())
}
