//! Derivative-free simplex minimisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmOptions {
    /// Evaluation budget; `None` means `500 * n`.
    pub max_evals: Option<usize>,
    /// Relative simplex size at which the search stops.
    pub tol: f64,
    /// Edge of the initial simplex along each axis. Relative to the start
    /// coordinate when `relative_step` is set (with a small absolute fallback
    /// for zero coordinates).
    pub initial_step: f64,
    pub relative_step: bool,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions {
            max_evals: None,
            tol: 1e-6,
            initial_step: 0.05,
            relative_step: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Standard reflect / expand / contract / shrink iteration (coefficients
/// 1, 2, 1/2, 1/2). Non-finite objective values count as `+inf`.
pub fn nelder_mead<F>(mut objective: F, x0: &[f64], opts: &NmOptions) -> Result<NmResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::OptimizerInit("empty start vector".into()));
    }
    let budget = opts.max_evals.unwrap_or(500 * n).max(n + 1);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let f = objective(x);
        if f.is_finite() {
            f
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        let step = if opts.relative_step {
            if x[i] != 0.0 {
                opts.initial_step * x[i]
            } else {
                0.00025
            }
        } else {
            opts.initial_step
        };
        x[i] += step;
        let f = eval(&x, &mut evals);
        simplex.push((x, f));
    }
    if simplex.iter().all(|(_, f)| !f.is_finite()) {
        return Err(Error::OptimizerInit("objective is non-finite at every initial vertex".into()));
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let mut converged = false;
    while evals < budget {
        let best = &simplex[0];
        let scale = best.0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let spread = simplex[n].1 - best.1;
        if size <= opts.tol * scale && spread <= opts.tol * best.1.abs().max(1.0) {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let f = eval(&x, &mut evals);
                    *v = (x, f);
                }
            }
        }
        order(&mut simplex);
    }
    let (x, f) = simplex.swap_remove(0);
    Ok(NmResult {
        x,
        f,
        evals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadratic_bowl() {
        let r = nelder_mead(|p| (p[0] - 3.0).powi(2) + (p[1] + 1.0).powi(2), &[0.0, 0.0], &NmOptions::default()).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-4 && (r.x[1] + 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!(r.converged);
    }

    fn rosenbrock(p: &[f64]) -> f64 {
        (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2)
    }

    #[test]
    fn rosenbrock_valley() {
        let opts = NmOptions { tol: 1e-10, ..NmOptions::default() };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        // Oracle: refine a dense grid around the known optimum.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let (mut cx, mut cy, mut h) = (1.0, 1.0, 0.01);
        for _ in 0..6 {
            for i in -20..=20 {
                for j in -20..=20 {
                    let (x, y) = (cx + i as f64 * h, cy + j as f64 * h);
                    let f = rosenbrock(&[x, y]);
                    if f < best.0 {
                        best = (f, x, y);
                    }
                }
            }
            (cx, cy, h) = (best.1, best.2, h / 10.0);
        }
        assert!((r.x[0] - best.1).abs() < 1e-3 && (r.x[1] - best.2).abs() < 1e-3, "{:?} vs {:?}", r.x, best);
    }

    #[test]
    fn absolute_value_kink() {
        let r = nelder_mead(|p| p[0].abs(), &[5.0], &NmOptions::default()).unwrap();
        assert!(r.x[0].abs() < 1e-5, "{}", r.x[0]);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let opts = NmOptions { max_evals: Some(20), ..NmOptions::default() };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!(!r.converged);
        assert!(r.evals <= 20 + 3);
    }

    #[test]
    fn all_non_finite_start_rejected() {
        let e = nelder_mead(|_| f64::NAN, &[1.0, 2.0], &NmOptions::default());
        assert!(matches!(e, Err(Error::OptimizerInit(_))));
    }

    proptest! {
        #[test]
        fn never_worse_than_start(a in -5.0..5.0f64, b in -5.0..5.0f64, x0 in -3.0..3.0f64, y0 in -3.0..3.0f64) {
            let f = |p: &[f64]| (p[0] - a).abs().sqrt() + (p[1] * p[1] - b).powi(2) + (p[0] * p[1]).sin();
            let start = f(&[x0, y0]);
            let opts = NmOptions { max_evals: Some(60), ..NmOptions::default() };
            let r = nelder_mead(f, &[x0, y0], &opts).unwrap();
            prop_assert!(r.f <= start);
        }
    }
}
