//! One-dimensional Gaussian-process emulator used by ACE.

use nalgebra::{DMatrix, DVector};

use crate::error::{config, Error, Result};

/// Points scanned by [`emulator_argmax`].
pub const SCAN_POINTS: usize = 1000;

/// Fitted zero-mean GP on standardized responses, squared-exponential kernel.
#[derive(Debug, Clone)]
pub struct Emulator {
    xs: Vec<f64>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    lengthscale: f64,
    signal_var: f64,
    /// Nugget on the standardized scale actually used.
    pub nugget: f64,
}

impl Emulator {
    fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.lengthscale;
        self.signal_var * (-0.5 * d * d).exp()
    }

    /// Predictive mean on the original response scale.
    pub fn predict(&self, x: f64) -> f64 {
        if self.y_scale == 0.0 {
            return self.y_mean;
        }
        let s: f64 = self.xs.iter().zip(self.alpha.iter()).map(|(&xi, a)| self.kernel(x, xi) * a).sum();
        self.y_mean + self.y_scale * s
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }
}

/// Fits the emulator to `(xs, ys)` with per-point squared standard errors `se2`
/// (may be empty for noiseless data).
///
/// Lengthscale is `(max - min) / 5`, the signal variance is the sample variance
/// of the standardized responses, and the nugget is `max(1e-6, mean(se2))`
/// converted to standardized units. If the kernel matrix cannot be factorized
/// the nugget is multiplied by 10, up to three times.
pub fn gp_fit_1d(xs: &[f64], ys: &[f64], se2: &[f64]) -> Result<Emulator> {
    if xs.len() < 5 || xs.len() != ys.len() {
        return config(format!("emulator needs at least 5 (x, y) pairs, got {} and {}", xs.len(), ys.len()));
    }
    if !se2.is_empty() && se2.len() != xs.len() {
        return config("one squared standard error per point is required");
    }
    if xs.iter().chain(ys).chain(se2).any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite emulator training data".into()));
    }
    let xs = separate_duplicates(xs);
    let n = xs.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let lengthscale = ((hi - lo) / 5.0).max(f64::MIN_POSITIVE);
    let y_scale = var.sqrt();
    if y_scale == 0.0 {
        return Ok(Emulator {
            alpha: DVector::zeros(xs.len()),
            xs,
            y_mean,
            y_scale,
            lengthscale,
            signal_var: 0.0,
            nugget: 0.0,
        });
    }
    let z = DVector::from_iterator(ys.len(), ys.iter().map(|y| (y - y_mean) / y_scale));
    // sample variance of the standardized responses
    let signal_var = 1.0;
    let raw_nugget = if se2.is_empty() { 0.0 } else { se2.iter().sum::<f64>() / n };
    let mut nugget = raw_nugget.max(1e-6) / var;
    let mut emulator = Emulator {
        xs,
        alpha: DVector::zeros(0),
        y_mean,
        y_scale,
        lengthscale,
        signal_var,
        nugget,
    };
    let m = emulator.xs.len();
    for attempt in 0..4 {
        let mut k = DMatrix::from_fn(m, m, |i, j| emulator.kernel(emulator.xs[i], emulator.xs[j]));
        for i in 0..m {
            k[(i, i)] += nugget;
        }
        if let Some(chol) = k.cholesky() {
            emulator.alpha = chol.solve(&z);
            emulator.nugget = nugget;
            return Ok(emulator);
        }
        if attempt < 3 {
            log::debug!("emulator kernel not positive definite; nugget {nugget:e} -> {:e}", nugget * 10.0);
            nugget *= 10.0;
        }
    }
    Err(Error::NotPositiveDefinite(format!("emulator kernel matrix (final nugget {nugget:e})")))
}

fn separate_duplicates(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    let mut warned = false;
    for i in 1..out.len() {
        while out[..i].contains(&out[i]) {
            if !warned {
                log::warn!("duplicate emulator inputs perturbed by 1e-9");
                warned = true;
            }
            out[i] += 1e-9;
        }
    }
    out
}

/// Maximizer of the emulator's predictive mean over a dense scan of
/// `[lo, hi]`; ties go to the first scan point.
pub fn emulator_argmax(e: &Emulator, lo: f64, hi: f64) -> f64 {
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    for j in 0..SCAN_POINTS {
        let x = if j == SCAN_POINTS - 1 { hi } else { lo + step * j as f64 };
        let v = e.predict(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best.0
}
