//! Nelder–Mead simplex minimization with dimension-adaptive coefficients.

/// Stopping and start-up settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Edge length of the initial simplex along every coordinate.
    pub initial_step: f64,
    /// Converged once `max f − min f` over the vertices drops below this.
    pub spread_tol: f64,
    pub max_evals: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            initial_step: 0.5,
            spread_tol: 1e-9,
            max_evals: 50_000,
        }
    }
}

/// Best value and vertex spread after one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexRow {
    pub iter: usize,
    pub best: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
    pub evals: usize,
    pub trace: Vec<SimplexRow>,
}

/// Minimize `f` starting from `x0`.
///
/// Uses the adaptive coefficients of Gao and Han, which behave better than
/// the textbook ones above a handful of dimensions.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], opts: &SimplexOptions) -> SimplexOutcome {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let v = eval(x0, &mut evals);
        return SimplexOutcome {
            x: vec![],
            f: v,
            converged: true,
            evals,
            trace: vec![],
        };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut verts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step;
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| eval(v, &mut evals)).collect();
    let mut trace = Vec::new();
    let mut iter = 0;
    let mut converged = false;

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        verts = order.iter().map(|&i| verts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        trace.push(SimplexRow {
            iter,
            best: vals[0],
            spread,
        });
        if spread < opts.spread_tol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        iter += 1;

        let mut centroid = vec![0.0; n];
        for v in &verts[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&verts[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(alpha * gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                verts[n] = xe;
                vals[n] = fe;
            } else {
                verts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            verts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let x = along(alpha * rho);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = along(-rho);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < vals[n].min(fr) {
            verts[n] = xc;
            vals[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        let best = verts[0].clone();
        for i in 1..=n {
            for (x, b) in verts[i].iter_mut().zip(&best) {
                *x = b + sigma * (*x - b);
            }
            vals[i] = eval(&verts[i], &mut evals);
        }
    }
    SimplexOutcome {
        x: verts.swap_remove(0),
        f: vals[0],
        converged,
        evals,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let out = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5,
            &[0.0, 0.0],
            &SimplexOptions {
                spread_tol: 1e-14,
                ..Default::default()
            },
        );
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] + 2.0).abs() < 1e-5);
        assert!((out.f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rosenbrock() {
        let out = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &SimplexOptions {
                spread_tol: 1e-16,
                ..Default::default()
            },
        );
        assert!(out.f < 1e-10, "{}", out.f);
    }

    #[test]
    fn best_value_never_increases() {
        let out = nelder_mead(
            |x| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v.sin().powi(2)).sum(),
            &[0.3, -0.7, 1.1, 0.2],
            &SimplexOptions::default(),
        );
        assert!(out.trace.windows(2).all(|w| w[1].best <= w[0].best));
    }

    #[test]
    fn evaluation_budget() {
        let out = nelder_mead(
            |x| x[0].abs().sqrt(),
            &[5.0],
            &SimplexOptions {
                max_evals: 10,
                spread_tol: 0.0,
                ..Default::default()
            },
        );
        assert!(!out.converged);
        assert!(out.evals <= 12);
    }
}
