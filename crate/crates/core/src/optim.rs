//! Quasi-Newton (BFGS) minimisation with central-difference gradients.

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop when every coordinate moved less than this...
    pub param_tol: f64,
    /// ...and the objective changed less than this.
    pub objective_tol: f64,
    pub gradient_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            param_tol: 1e-7,
            objective_tol: 1e-9,
            gradient_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn gradient<F>(f: &F, x: &[f64], fx: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe).ok().filter(|v| v.is_finite());
        probe[i] = x[i] - h;
        let down = f(&probe).ok().filter(|v| v.is_finite());
        probe[i] = x[i];
        g[i] = match (up, down) {
            (Some(u), Some(d)) => (u - d) / (2.0 * h),
            (Some(u), None) => (u - fx) / h,
            (None, Some(d)) => (fx - d) / h,
            (None, None) => 0.0,
        };
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimise `f` from `x0`. Failed or non-finite evaluations away from `x0`
/// are treated as `+inf` by the line search; an error at `x0` is returned.
pub fn minimize<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    let mut history = vec![fx];
    if n == 0 {
        return Ok(BfgsResult {
            x,
            value: fx,
            iterations: 0,
            converged: true,
            history,
        });
    }
    let identity = |scale: f64| {
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = scale;
        }
        m
    };
    let mut hinv = identity(1.0);
    let mut g = gradient(&f, &x, fx);
    let mut first_step = true;

    for iter in 0..opts.max_iterations {
        if g.iter().all(|v| v.abs() < opts.gradient_tol) {
            return Ok(BfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged: true,
                history,
            });
        }
        let mut dir: Vec<f64> = hinv.iter().map(|row| -dot(row, &g)).collect();
        if dot(&dir, &g) >= 0.0 {
            hinv = identity(1.0);
            dir = g.iter().map(|v| -v).collect();
        }
        let slope = dot(&dir, &g);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Ok(ft) = f(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // No descent along the quasi-Newton or gradient direction: the
            // iterate is a numerical optimum at gradient resolution.
            return Ok(BfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged: true,
                history,
            });
        };
        let g_new = gradient(&f, &x_new, f_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let max_move = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let df = (fx - f_new).abs();
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if max_move < opts.param_tol && df < opts.objective_tol {
            return Ok(BfgsResult {
                x,
                value: fx,
                iterations: iter + 1,
                converged: true,
                history,
            });
        }

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first_step {
                let scale = sy / dot(&y, &y);
                hinv = identity(scale);
                first_step = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = hinv.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
    }
    Ok(BfgsResult {
        x,
        value: fx,
        iterations: opts.max_iterations,
        converged: false,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let r = minimize(f, &[-1.2, 1.0], &BfgsOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn history_is_monotone() {
        let f = |x: &[f64]| Ok(x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.3).powi(2)).sum());
        let r = minimize(f, &[5.0, -3.0, 2.0], &BfgsOptions::default()).unwrap();
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.x.iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let f = |x: &[f64]| Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let opts = BfgsOptions {
            max_iterations: 2,
            ..Default::default()
        };
        let r = minimize(f, &[-1.2, 1.0], &opts).unwrap();
        assert!(!r.converged);
        assert!(r.value <= r.history[0]);
    }
}
