//! Nelder–Mead minimization with dimension-adaptive coefficients.

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with initial edge lengths `scale`.
///
/// Non-finite function values are treated as `+inf`. Converges when the spread
/// of vertex values is at most `tol * (1 + |f_best|)`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], scale: &[f64], tol: f64, max_iter: usize) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let value = eval(x0);
        return SimplexResult { x: Vec::new(), value, iterations: 0, evaluations: 1, converged: true };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = if n > 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    verts.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if scale[i] != 0.0 { scale[i] } else { 0.05 * (1.0 + x0[i].abs()) };
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| eval(v)).collect();
    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];
        if vals[best].is_finite() && (vals[worst] - vals[best]) <= tol * (1.0 + vals[best].abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&verts[i]) {
                *c += v / nf;
            }
        }
        let along = |coef: f64, out: &mut Vec<f64>, worst_v: &[f64]| {
            for ((o, c), w) in out.iter_mut().zip(&centroid).zip(worst_v) {
                *o = c + coef * (c - w);
            }
        };

        along(alpha, &mut trial, &verts[worst]);
        let fr = eval(&trial);
        if fr < vals[best] {
            along(alpha * gamma, &mut trial2, &verts[worst]);
            let fe = eval(&trial2);
            if fe < fr {
                verts[worst].copy_from_slice(&trial2);
                vals[worst] = fe;
            } else {
                verts[worst].copy_from_slice(&trial);
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            verts[worst].copy_from_slice(&trial);
            vals[worst] = fr;
            continue;
        }
        let (coef, threshold) = if fr < vals[worst] { (alpha * rho, fr) } else { (-rho, vals[worst]) };
        along(coef, &mut trial2, &verts[worst]);
        let fc = eval(&trial2);
        if fc <= threshold {
            verts[worst].copy_from_slice(&trial2);
            vals[worst] = fc;
            continue;
        }
        // shrink towards the best vertex
        let anchor = verts[best].clone();
        for &i in &order[1..] {
            for (v, a) in verts[i].iter_mut().zip(&anchor) {
                *v = a + sigma * (*v - a);
            }
            vals[i] = eval(&verts[i]);
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    SimplexResult {
        x: verts[best].clone(),
        value: vals[best],
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], 1e-14, 5000);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn minimizes_quadratic_in_six_dims() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.5).powi(2)).sum();
        let r = nelder_mead(f, &[0.0; 6], &[0.1; 6], 1e-12, 20_000);
        assert!(r.converged);
        assert!(r.x.iter().all(|v| (v - 0.5).abs() < 1e-4), "{:?}", r.x);
    }

    #[test]
    fn nan_region_is_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let r = nelder_mead(f, &[0.5], &[1.0], 1e-12, 1000);
        assert!((r.x[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let f = |x: &[f64]| x[0] * x[0] + x[1] * x[1];
        let r = nelder_mead(f, &[10.0, 10.0], &[1.0, 1.0], 0.0, 3);
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
