//! Nonlinear least-squares fits used by the analysis layer: a saturating
//! exponential `y = a - b exp(-c x)` and a plain decay `y = a exp(-b x)`.
//!
//! Both run Levenberg-Marquardt with analytic Jacobians from a documented
//! initialization (saturation: `a = last value`, `b = a - first value`,
//! `c = 3 / n`), with the decay rate constrained positive. If the descent
//! stalls, a log-spaced scan over the rate with the amplitude parameters
//! solved linearly (the model is separable) reseeds the iteration.
//! Parameter standard errors come from the residual-scaled inverse normal
//! matrix at the optimum.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum FitError {
    #[error("too few points for the fit: {0}")]
    TooFewPoints(usize),
    #[error("singular normal equations")]
    Singular,
    #[error("fit did not converge: {0}")]
    NoConvergence(String),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
}

/// Solves `A x = b` for small dense systems with partial pivoting.
fn solve<const P: usize>(mut a: [[f64; P]; P], mut b: [f64; P]) -> Option<[f64; P]> {
    for col in 0..P {
        let pivot = (col..P)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..P {
            let f = a[row][col] / a[col][col];
            for k in col..P {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; P];
    for col in (0..P).rev() {
        let mut s = b[col];
        for k in col + 1..P {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

fn invert<const P: usize>(a: [[f64; P]; P]) -> Option<[[f64; P]; P]> {
    let mut inv = [[0.0; P]; P];
    for col in 0..P {
        let mut e = [0.0; P];
        e[col] = 1.0;
        let x = solve(a, e)?;
        for row in 0..P {
            inv[row][col] = x[row];
        }
    }
    Some(inv)
}

struct LmOutcome<const P: usize> {
    params: [f64; P],
    covariance: [[f64; P]; P],
    sse: f64,
}

/// Levenberg-Marquardt for `y = model(x, params)`. `admissible` rejects
/// parameter vectors outside the feasible region (steps into it are
/// damped instead of taken).
fn levenberg_marquardt<const P: usize>(
    xs: &[f64],
    ys: &[f64],
    init: [f64; P],
    model: impl Fn(f64, &[f64; P]) -> f64,
    jacobian: impl Fn(f64, &[f64; P]) -> [f64; P],
    admissible: impl Fn(&[f64; P]) -> bool,
) -> Result<LmOutcome<P>, FitError> {
    let n = xs.len();
    if n < P + 1 {
        return Err(FitError::TooFewPoints(n));
    }
    let sse_of = |p: &[f64; P]| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - model(x, p);
                r * r
            })
            .sum()
    };
    let mut params = init;
    let mut sse = sse_of(&params);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        // Assemble J^T J and J^T r at the current point.
        let mut jtj = [[0.0; P]; P];
        let mut jtr = [0.0; P];
        for (&x, &y) in xs.iter().zip(ys) {
            let j = jacobian(x, &params);
            let r = y - model(x, &params);
            for a in 0..P {
                jtr[a] += j[a] * r;
                for b in 0..P {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for d in 0..P {
                damped[d][d] += lambda * jtj[d][d].max(1e-12);
            }
            if let Some(step) = solve(damped, jtr) {
                let mut candidate = params;
                for d in 0..P {
                    candidate[d] += step[d];
                }
                if admissible(&candidate) {
                    let new_sse = sse_of(&candidate);
                    if new_sse.is_finite() && new_sse < sse {
                        let gain = (sse - new_sse) / sse.max(1e-300);
                        params = candidate;
                        sse = new_sse;
                        lambda = (lambda / 3.0).max(1e-12);
                        improved = true;
                        if gain < 1e-12 {
                            // Converged: accept and stop refining.
                            return finish(xs, ys, params, sse, &jacobian);
                        }
                        break;
                    }
                }
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !improved {
            return finish(xs, ys, params, sse, &jacobian);
        }
    }
    finish(xs, ys, params, sse, &jacobian)
}

fn finish<const P: usize>(
    xs: &[f64],
    ys: &[f64],
    params: [f64; P],
    sse: f64,
    jacobian: &impl Fn(f64, &[f64; P]) -> [f64; P],
) -> Result<LmOutcome<P>, FitError> {
    let n = xs.len();
    let mut jtj = [[0.0; P]; P];
    for &x in xs {
        let j = jacobian(x, &params);
        for a in 0..P {
            for b in 0..P {
                jtj[a][b] += j[a] * j[b];
            }
        }
    }
    let _ = ys;
    let inv = invert(jtj).ok_or(FitError::Singular)?;
    let dof = n.saturating_sub(P).max(1) as f64;
    let s2 = sse / dof;
    let mut covariance = inv;
    for row in covariance.iter_mut() {
        for v in row.iter_mut() {
            *v *= s2;
        }
    }
    Ok(LmOutcome {
        params,
        covariance,
        sse,
    })
}

/// Given the decay rate, solve the separable linear subproblem for the
/// amplitude parameters of `y = a - b exp(-c x)` and return (a, b, sse).
fn saturation_linear_solve(xs: &[f64], ys: &[f64], c: f64) -> Option<(f64, f64, f64)> {
    let mut s_ww = 0.0;
    let mut s_w = 0.0;
    let mut s_wy = 0.0;
    let mut s_y = 0.0;
    let n = xs.len() as f64;
    for (&x, &y) in xs.iter().zip(ys) {
        let w = (-c * x).exp();
        s_ww += w * w;
        s_w += w;
        s_wy += w * y;
        s_y += y;
    }
    // Model y = a - b w: normal equations in (a, b).
    let det = n * s_ww - s_w * s_w;
    if det.abs() < 1e-300 {
        return None;
    }
    let a = (s_y * s_ww - s_w * s_wy) / det;
    let b = (s_y * s_w - n * s_wy) / det;
    let sse = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (a - b * (-c * x).exp());
            r * r
        })
        .sum();
    Some((a, b, sse))
}

/// Saturating exponential fit `y = a - b exp(-c x)` with `c > 0`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ExpSaturationFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub sigma_c: f64,
    pub residual_norm: f64,
}

pub fn fit_exp_saturation(xs: &[f64], ys: &[f64]) -> Result<ExpSaturationFit, FitError> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 4 {
        return Err(FitError::TooFewPoints(n));
    }
    let span = xs[n - 1] - xs[0];
    if span <= 0.0 {
        return Err(FitError::Degenerate("x values must increase".into()));
    }
    let a0 = ys[n - 1];
    let mut b0 = a0 - ys[0];
    if b0 == 0.0 {
        b0 = 1e-9 + a0.abs() * 1e-9;
    }
    let c0 = 3.0 / n as f64;
    let model = |x: f64, p: &[f64; 3]| p[0] - p[1] * (-p[2] * x).exp();
    let jac = |x: f64, p: &[f64; 3]| {
        let w = (-p[2] * x).exp();
        [1.0, -w, p[1] * x * w]
    };
    let feasible = |p: &[f64; 3]| p[2] > 0.0 && p[2].is_finite();

    let mut best = levenberg_marquardt(xs, ys, [a0, b0, c0], model, jac, feasible)?;
    // Reseed from a coarse scan over the rate when the documented start
    // stalls in a poor basin.
    let mut scan_best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..120 {
        let c = 10f64.powf(-4.0 + 6.0 * i as f64 / 119.0) / span * xs.len() as f64 / 10.0;
        if let Some((a, b, sse)) = saturation_linear_solve(xs, ys, c) {
            if scan_best.map_or(true, |(_, _, _, s)| sse < s) {
                scan_best = Some((a, b, c, sse));
            }
        }
    }
    if let Some((a, b, c, sse)) = scan_best {
        if sse < best.sse * 0.999 {
            if let Ok(refit) = levenberg_marquardt(xs, ys, [a, b, c], model, jac, feasible) {
                if refit.sse < best.sse {
                    best = refit;
                }
            }
        }
    }
    let [a, b, c] = best.params;
    if !(c > 1e-12) || !c.is_finite() {
        return Err(FitError::Degenerate(format!(
            "saturation rate collapsed to {c}"
        )));
    }
    Ok(ExpSaturationFit {
        a,
        b,
        c,
        sigma_a: best.covariance[0][0].max(0.0).sqrt(),
        sigma_b: best.covariance[1][1].max(0.0).sqrt(),
        sigma_c: best.covariance[2][2].max(0.0).sqrt(),
        residual_norm: best.sse.sqrt(),
    })
}

/// Exponential decay fit `y = a exp(-b x)` with `b > 0`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ExponentialFit {
    pub a: f64,
    pub b: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub residual_norm: f64,
}

pub fn fit_exponential(xs: &[f64], ys: &[f64]) -> Result<ExponentialFit, FitError> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 3 {
        return Err(FitError::TooFewPoints(n));
    }
    let span = xs[n - 1] - xs[0];
    if span <= 0.0 {
        return Err(FitError::Degenerate("x values must increase".into()));
    }
    let a0 = if ys[0] != 0.0 { ys[0] } else { 1e-9 };
    let model = |x: f64, p: &[f64; 2]| p[0] * (-p[1] * x).exp();
    let jac = |x: f64, p: &[f64; 2]| {
        let w = (-p[1] * x).exp();
        [w, -p[0] * x * w]
    };
    let feasible = |p: &[f64; 2]| p[1] > 0.0 && p[1].is_finite();
    let mut best: Option<LmOutcome<2>> = None;
    // The amplitude solves linearly given the rate; scan rates for seeds.
    for i in 0..80 {
        let b = 10f64.powf(-4.0 + 6.0 * i as f64 / 79.0) * 3.0 / span;
        let (mut s_wy, mut s_ww) = (0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let w = (-b * x).exp();
            s_wy += w * y;
            s_ww += w * w;
        }
        if s_ww < 1e-300 {
            continue;
        }
        let a = s_wy / s_ww;
        let sse: f64 = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - a * (-b * x).exp();
                r * r
            })
            .sum();
        if best.as_ref().map_or(true, |o| sse < o.sse) {
            best = Some(LmOutcome {
                params: [a, b],
                covariance: [[0.0; 2]; 2],
                sse,
            });
        }
    }
    let seed = best
        .map(|o| o.params)
        .unwrap_or([a0, 3.0 / span]);
    let out = levenberg_marquardt(xs, ys, seed, model, jac, feasible)?;
    let [a, b] = out.params;
    if !(b > 0.0) || !b.is_finite() {
        return Err(FitError::Degenerate(format!("decay rate collapsed to {b}")));
    }
    Ok(ExponentialFit {
        a,
        b,
        sigma_a: out.covariance[0][0].max(0.0).sqrt(),
        sigma_b: out.covariance[1][1].max(0.0).sqrt(),
        residual_norm: out.sse.sqrt(),
    })
}
