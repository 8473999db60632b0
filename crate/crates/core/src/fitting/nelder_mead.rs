//! Derivative-free simplex minimization.

/// Termination settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iter: usize,
    /// Relative change below which the best point counts as settled.
    pub xtol: f64,
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iter: 20_000,
            xtol: 1e-8,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

// Relative change, measured absolutely for coordinates below unit size.
fn rel_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn run_once<F>(
    f: &mut F,
    x0: &[f64],
    steps: &[f64],
    opts: &SimplexOptions,
    budget: usize,
) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let window = 2 * n;
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut it = 0;
    while it < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        history.push(pts[0].clone());
        if history.len() > window + 1 {
            history.remove(0);
        }
        let settled = history.len() == window + 1 && rel_change(&history[0], &pts[0]) < opts.xtol;
        let collapsed = pts[1..].iter().all(|p| rel_change(p, &pts[0]) < opts.xtol);
        if settled && collapsed {
            return SimplexResult {
                x: pts[0].clone(),
                fx: vals[0],
                iterations: it,
                converged: true,
            };
        }
        it += 1;

        let mut c = vec![0.0; n];
        for p in &pts[..n] {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            c.iter()
                .zip(&pts[n])
                .map(|(ci, wi)| ci + t * (ci - wi))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(0.5);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = f(&xc);
            (xc, fc)
        };
        if fc < fr.min(vals[n]) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let shrunk: Vec<f64> = pts[0]
                .iter()
                .zip(&pts[i])
                .map(|(b, p)| b + 0.5 * (p - b))
                .collect();
            vals[i] = f(&shrunk);
            pts[i] = shrunk;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    SimplexResult {
        x: pts[best].clone(),
        fx: vals[best],
        iterations: it,
        converged: false,
    }
}

/// Minimizes `f` from `x0` with initial simplex offsets `steps`.
///
/// After the simplex collapses it is rebuilt around the best point and run
/// again, up to `opts.restarts` times, which guards against premature
/// collapse onto a non-stationary point.
pub fn minimize<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    if x0.is_empty() {
        return SimplexResult {
            x: Vec::new(),
            fx: f(x0),
            iterations: 0,
            converged: true,
        };
    }
    let mut total = 0;
    let mut res = run_once(&mut f, x0, steps, opts, opts.max_iter);
    total += res.iterations;
    for _ in 0..opts.restarts {
        if !res.converged {
            break;
        }
        let small: Vec<f64> = steps.iter().map(|s| s * 0.1).collect();
        let again = run_once(
            &mut f,
            &res.x,
            &small,
            opts,
            opts.max_iter.saturating_sub(total),
        );
        total += again.iterations;
        let moved = rel_change(&again.x, &res.x) >= opts.xtol;
        let improved = again.fx < res.fx;
        if improved {
            res = again;
        } else {
            res.converged = again.converged || res.converged;
        }
        if !moved {
            break;
        }
    }
    res.iterations = total;
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(f, &[-1.2, 1.0], &[0.1, 0.1], &SimplexOptions::default());
        assert!(r.converged);
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn quadratic_bowl_in_four_dimensions() {
        let f = |x: &[f64]| {
            x.iter()
                .enumerate()
                .map(|(i, v)| (i as f64 + 1.0) * (v - 0.5).powi(2))
                .sum()
        };
        let r = minimize(f, &[0.0; 4], &[0.2; 4], &SimplexOptions::default());
        assert!(r.converged);
        assert!(r.x.iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn iteration_budget_is_respected() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions {
            max_iter: 5,
            ..Default::default()
        };
        let r = minimize(f, &[-1.2, 1.0], &[0.1, 0.1], &opts);
        assert!(!r.converged);
        assert!(r.iterations <= 5);
    }

    #[test]
    fn empty_problem_just_evaluates() {
        let r = minimize(|_: &[f64]| 3.0, &[], &[], &SimplexOptions::default());
        assert_eq!(r.fx, 3.0);
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
    }
}
