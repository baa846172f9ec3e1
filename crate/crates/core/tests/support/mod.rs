//! Shared oracles for the integration tests: a linear-Gaussian hierarchical
//! toy with closed-form posteriors, and an adaptive Dormand-Prince integrator.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use oded_core::{Dataset, GaussianApprox, HierarchicalModel, Observation, Result, SimRng, TimeDesign};
use rand::Rng;
use rand_distr::StandardNormal;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

/// `y = x(t)'theta + z(t)'b + e` with `x_j(t) = (t/T)^j`, `z_k(t) = cos((k+1) pi t / T)`,
/// known noise SD and known random-effect SDs.
#[derive(Debug, Clone)]
pub struct LinearToy {
    pub mean0: Vec<f64>,
    pub sd0: Vec<f64>,
    pub sigma_b: Vec<f64>,
    pub sigma_e: f64,
    pub t_max: f64,
    moments: GaussianApprox,
}

impl LinearToy {
    pub fn new(mean0: Vec<f64>, sd0: Vec<f64>, sigma_b: Vec<f64>, sigma_e: f64, t_max: f64) -> Self {
        let mut mean = mean0.clone();
        mean.extend(std::iter::repeat(0.0).take(sigma_b.len()));
        let var: Vec<f64> = sd0.iter().chain(&sigma_b).map(|s| s * s).collect();
        let moments = GaussianApprox::diagonal(mean, var).unwrap();
        Self { mean0, sd0, sigma_b, sigma_e, t_max, moments }
    }

    pub fn x(&self, t: f64) -> Vec<f64> {
        (0..self.mean0.len()).map(|j| (t / self.t_max).powi(j as i32)).collect()
    }

    pub fn z(&self, t: f64) -> Vec<f64> {
        (0..self.sigma_b.len())
            .map(|k| ((k + 1) as f64 * std::f64::consts::PI * t / self.t_max).cos())
            .collect()
    }

    pub fn mean(&self, t: f64, theta: &[f64], b: &[f64]) -> f64 {
        let a: f64 = self.x(t).iter().zip(theta).map(|(x, th)| x * th).sum();
        a + self.z(t).iter().zip(b).map(|(z, bk)| z * bk).sum::<f64>()
    }

    pub fn data(&self, rows: &[(f64, f64)]) -> Dataset {
        Dataset::new(rows.iter().map(|&(time, y)| Observation { time, fruit: None, y }).collect())
    }

    /// Exact posterior of theta when there are no random effects.
    pub fn theta_posterior(&self, data: &Dataset) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.mean0.len();
        let mut prec = DMatrix::from_diagonal(&DVector::from_iterator(p, self.sd0.iter().map(|s| 1.0 / (s * s))));
        let mut rhs = DVector::from_iterator(p, self.mean0.iter().zip(&self.sd0).map(|(m, s)| m / (s * s)));
        let w = 1.0 / (self.sigma_e * self.sigma_e);
        for row in &data.rows {
            let x = DVector::from_vec(self.x(row.time));
            prec += &x * x.transpose() * w;
            rhs += &x * (row.y * w);
        }
        let cov = prec.try_inverse().unwrap();
        (&cov * rhs, cov)
    }

    /// Exact posterior of b given theta.
    pub fn b_posterior(&self, data: &Dataset, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let q = self.sigma_b.len();
        let mut prec = DMatrix::from_diagonal(&DVector::from_iterator(q, self.sigma_b.iter().map(|s| 1.0 / (s * s))));
        let mut rhs = DVector::zeros(q);
        let w = 1.0 / (self.sigma_e * self.sigma_e);
        for row in &data.rows {
            let z = DVector::from_vec(self.z(row.time));
            let resid = row.y - self.mean(row.time, theta, &vec![0.0; q]);
            prec += &z * z.transpose() * w;
            rhs += &z * (resid * w);
        }
        let cov = prec.try_inverse().unwrap();
        (&cov * rhs, cov)
    }
}

impl HierarchicalModel for LinearToy {
    fn theta_dim(&self) -> usize {
        self.mean0.len()
    }

    fn effects_dim(&self) -> usize {
        self.sigma_b.len()
    }

    fn prior_moments(&self) -> &GaussianApprox {
        &self.moments
    }

    fn log_prior_theta(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.mean0).zip(&self.sd0).map(|((&t, &m), &s)| log_normal(t, m, s)).sum()
    }

    fn effect_sds(&self, _theta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.sigma_b);
    }

    fn log_likelihood(&self, data: &Dataset, theta: &[f64], effects: &[f64]) -> Result<f64> {
        Ok(data.rows.iter().map(|r| log_normal(r.y, self.mean(r.time, theta, effects), self.sigma_e)).sum())
    }

    fn sample_theta(&self, rng: &mut SimRng) -> Vec<f64> {
        self.mean0.iter().zip(&self.sd0).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn sample_prior(&self, rng: &mut SimRng) -> Result<(Vec<f64>, Vec<f64>)> {
        let theta = self.sample_theta(rng);
        let b = self.sigma_b.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok((theta, b))
    }

    fn simulate(&self, design: &TimeDesign, theta: &[f64], effects: &[f64], rng: &mut SimRng) -> Result<Dataset> {
        Ok(Dataset::new(
            design
                .times()
                .iter()
                .map(|&t| Observation {
                    time: t,
                    fruit: None,
                    y: self.mean(t, theta, effects) + self.sigma_e * rng.sample::<f64, _>(StandardNormal),
                })
                .collect(),
        ))
    }
}

/// Linear-Gaussian fixtures without random effects, so the posterior is exact.
pub fn conjugate_fixtures() -> Vec<(LinearToy, Dataset)> {
    let mut out = Vec::new();

    let toy = LinearToy::new(vec![0.0], vec![1.0], vec![], 1.0, 30.0);
    let d = toy.data(&[(5.0, 1.0)]);
    out.push((toy, d));

    let toy = LinearToy::new(vec![0.1, 0.2], vec![1.0, 0.5], vec![], 0.5, 30.0);
    let d = toy.data(&[(0.0, 0.3), (6.0, 0.2), (12.0, 0.5), (18.0, 0.4), (24.0, 0.9), (30.0, 0.7)]);
    out.push((toy, d));

    let toy = LinearToy::new(vec![1.0, -0.5, 0.25], vec![0.8, 0.8, 0.8], vec![], 0.3, 10.0);
    let rows: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 1.0 - 0.04 * i as f64 + 0.01 * (i * i) as f64)).collect();
    let d = toy.data(&rows);
    out.push((toy, d));

    let toy = LinearToy::new(vec![2.0], vec![0.1], vec![], 2.0, 1.0);
    let rows: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 / 20.0, 2.5 + if i % 2 == 0 { 1.0 } else { -0.7 })).collect();
    let d = toy.data(&rows);
    out.push((toy, d));

    let toy = LinearToy::new(vec![0.0, 0.0], vec![10.0, 10.0], vec![], 0.05, 30.0);
    let d = toy.data(&[(3.0, 0.1), (10.0, 0.35), (20.0, 0.62), (28.0, 0.95)]);
    out.push((toy, d));
    out
}

/// Integrates `y' = f(t, y)` from `(t0, y0)` through each of the increasing
/// `targets` with an adaptive Dormand-Prince 5(4) scheme, returning `y` at
/// every target.
pub fn dopri<F>(mut f: F, t0: f64, y0: f64, targets: &[f64], rtol: f64, atol: f64) -> Vec<f64>
where
    F: FnMut(f64, f64) -> f64,
{
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let (mut t, mut y) = (t0, y0);
    let mut h: f64 = 1e-3;
    let mut out = Vec::with_capacity(targets.len());
    for &target in targets {
        while t < target {
            let step = h.min(target - t);
            let mut k = [0.0; 7];
            for s in 0..7 {
                let yi = y + step * (0..s).map(|j| A[s][j] * k[j]).sum::<f64>();
                k[s] = f(t + C[s] * step, yi);
            }
            let y5 = y + step * (0..7).map(|s| B5[s] * k[s]).sum::<f64>();
            let y4 = y + step * (0..7).map(|s| B4[s] * k[s]).sum::<f64>();
            let err = (y5 - y4).abs() / (atol + rtol * y.abs().max(y5.abs()));
            if err <= 1.0 {
                t += step;
                y = y5;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
        }
        out.push(y);
    }
    out
}
