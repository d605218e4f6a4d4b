//! Derived quantities of simulated runs: trend-return diagnostics, the
//! stationary regime of a metaorder execution, per-child impact
//! decomposition, post-execution decay fits and response functions.
//!
//! Unless stated otherwise, functions here operate on *window time*: a
//! mid-price series whose entry `t` is the mid just before window event
//! `t`, with entry 0 the pre-execution anchor. On that axis child order
//! `j` (1-based, trading interval `delta`) acts between entries
//! `(delta + 1) * j - 1` and `(delta + 1) * j`, so entry
//! `c_j = (delta + 1) * j` is the mid right after child `j` and the window
//! to the next child spans `c_j .. c_j + delta`.

pub mod fit;

pub use fit::{fit_exp_saturation, fit_exponential, ExpSaturationFit, ExponentialFit, FitError};

use serde::Serialize;

use crate::execution::EnsembleResult;
use crate::models::{EventKind, SimTrajectory};
use crate::stats;

/// Trend return computed from every event of a mid-price path (the
/// economically relevant description): the damped recursion
/// `r[t] = exp(-beta1) * r[t-1] + (m[t] - m[t-1])`, starting at zero.
pub fn ewma_description_i(mid_ticks: &[f64], beta1: f64) -> Vec<f64> {
    let damping = (-beta1).exp();
    let mut out = Vec::with_capacity(mid_ticks.len());
    let mut rbar = 0.0;
    out.push(0.0);
    for t in 1..mid_ticks.len() {
        rbar = damping * rbar + (mid_ticks[t] - mid_ticks[t - 1]);
        out.push(rbar);
    }
    out
}

/// Trend return computed from child-order times only: a step function
/// constant between children; when entry `c_k` (just after child `k`) is
/// reached it absorbs the inter-child return `m[c_k] - m[c_{k-1}]` and
/// damps the previous value by `exp(-beta2)`.
///
/// `child_times` holds the post-child indices `c_k` in increasing order
/// (`c_0 = 0` is implicit).
pub fn ewma_description_ii(mid_ticks: &[f64], child_times: &[usize], beta2: f64) -> Vec<f64> {
    let damping = (-beta2).exp();
    let mut out = Vec::with_capacity(mid_ticks.len());
    let mut rbar = 0.0;
    let mut prev_child = 0usize;
    let mut next = 0usize;
    for t in 0..mid_ticks.len() {
        if next < child_times.len() && child_times[next] == t {
            rbar = damping * rbar + (mid_ticks[t] - mid_ticks[prev_child]);
            prev_child = t;
            next += 1;
        }
        out.push(rbar);
    }
    out
}

/// Maximum relative deviation between the two trend-return descriptions at
/// the post-child times, with the per-event memory tied to the per-child
/// one by `beta1 = beta2 / (delta + 1)`. Small when `beta1 * delta << 1`.
pub fn check_equivalence(
    mid_ticks: &[f64],
    child_times: &[usize],
    beta2: f64,
    trading_interval: u32,
) -> f64 {
    let beta1 = beta2 / f64::from(trading_interval + 1);
    let r1 = ewma_description_i(mid_ticks, beta1);
    let r2 = ewma_description_ii(mid_ticks, child_times, beta2);
    let scale = r2.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    child_times
        .iter()
        .map(|&c| (r1[c] - r2[c]).abs() / scale)
        .fold(0.0, f64::max)
}

/// Stationary regime of a metaorder execution, from the saturation fit of
/// the trend return sampled at child orders.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryReport {
    pub fit: ExpSaturationFit,
    /// Stationary trend return (the fitted saturation level), ticks.
    pub rbar_star: f64,
    /// First child order index of the stationary regime; 0 when the fit
    /// uncertainty already covers the whole transient.
    pub tau_star: f64,
    /// Same instant in window events.
    pub t_star: f64,
    /// Slope of the mid-price at child orders past `tau_star`, ticks per
    /// child.
    pub r_star: f64,
    pub r_star_se: f64,
    /// Children used for the slope fit.
    pub n_tail_children: usize,
    /// `r_star / (rbar_star * (1 - exp(-beta2)))`; 1 when the stationary
    /// proportionality between the two holds exactly.
    pub proportionality_ratio: f64,
}

/// Saturation fit of the trend return at child orders, plus the first
/// child index of the stationary regime: the point where the fitted
/// transient `b exp(-c j)` falls below the uncertainty of the level,
/// `tau_star = -ln(sigma_a / b) / c` (0 when the uncertainty already
/// covers the transient). `tau_star` may exceed the number of children
/// when the execution ends before the regime settles.
pub fn fit_trend_saturation(
    rbar_at_children: &[f64],
) -> Result<(ExpSaturationFit, f64), FitError> {
    let q = rbar_at_children.len();
    if q < 10 {
        return Err(FitError::TooFewPoints(q));
    }
    let xs: Vec<f64> = (1..=q).map(|j| j as f64).collect();
    let fit = fit_exp_saturation(&xs, rbar_at_children)?;
    if fit.b <= 0.0 {
        return Err(FitError::Degenerate(format!(
            "trend return is not saturating from below (b = {})",
            fit.b
        )));
    }
    let tau_star = if fit.sigma_a >= fit.b || fit.sigma_a <= 0.0 {
        0.0
    } else {
        -(fit.sigma_a / fit.b).ln() / fit.c
    };
    Ok((fit, tau_star))
}

/// Fits the stationary regime. `rbar_at_children[j-1]` and
/// `mid_at_children[j-1]` sample the trend return and the mid right after
/// child `j`.
pub fn fit_stationary(
    rbar_at_children: &[f64],
    mid_at_children: &[f64],
    trading_interval: u32,
    beta2: f64,
) -> Result<StationaryReport, FitError> {
    assert_eq!(rbar_at_children.len(), mid_at_children.len());
    let q = rbar_at_children.len();
    let (fit, tau_star) = fit_trend_saturation(rbar_at_children)?;
    let first_tail = (tau_star.floor() as usize + 1).max(1);
    if first_tail + 1 > q {
        return Err(FitError::Degenerate(format!(
            "stationary regime not reached: tau_star = {tau_star:.1} of {q} children"
        )));
    }
    let tail_x: Vec<f64> = (first_tail..=q).map(|j| j as f64).collect();
    let tail_y: Vec<f64> = mid_at_children[first_tail - 1..].to_vec();
    let line = stats::linear_fit(&tail_x, &tail_y);
    let denom = fit.a * (1.0 - (-beta2).exp());
    Ok(StationaryReport {
        fit,
        rbar_star: fit.a,
        tau_star,
        t_star: f64::from(trading_interval + 1) * tau_star - 1.0,
        r_star: line.slope,
        r_star_se: line.slope_se,
        n_tail_children: tail_x.len(),
        proportionality_ratio: line.slope / denom,
    })
}

/// Per-child decomposition of the price impact.
///
/// Between children the mean mid-price is described by the linear kernel
/// `G_j(x) = eta_j * (1 - rho_j * x)` for `x = 0..=delta`; the components
/// are `immediate[j] = eta_j - eta_{j-1} + eta_{j-1} * rho_{j-1} * delta`
/// and `reversion[j] = eta_j * rho_j * delta`, with the net impact their
/// difference. Direct estimates skip the kernel fit and read the jumps off
/// the path itself.
#[derive(Debug, Clone, Serialize)]
pub struct ImpactSeries {
    /// Kernel level right after child `j`; index 0 is child 1.
    pub eta: Vec<f64>,
    /// Kernel reversion slope (fraction of `eta` per event).
    pub rho: Vec<f64>,
    /// First child index carried by the component vectors (always 2).
    pub first_component_child: usize,
    pub immediate: Vec<f64>,
    pub reversion: Vec<f64>,
    pub net: Vec<f64>,
    pub immediate_direct: Vec<f64>,
    pub reversion_direct: Vec<f64>,
    pub smoothed_immediate: Vec<f64>,
    pub smoothed_reversion: Vec<f64>,
    pub smoothed_net: Vec<f64>,
    /// False when the trading interval is too short for per-window fits
    /// and the direct estimates back the kernel parameters instead.
    pub kernel_fits_used: bool,
    pub smoothing_half_life: f64,
}

/// Exponential moving average with the given half-life (in children).
fn ewma_smooth(values: &[f64], half_life: f64) -> Vec<f64> {
    let gamma = 0.5f64.powf(1.0 / half_life);
    let mut out = Vec::with_capacity(values.len());
    let mut s = match values.first() {
        Some(&v) => v,
        None => return out,
    };
    out.push(s);
    for &v in &values[1..] {
        s = gamma * s + (1.0 - gamma) * v;
        out.push(s);
    }
    out
}

/// Decomposes the impact of each child order from the window-time mean
/// mid-price path. Needs the path up to the last child (`volume` children,
/// trading interval `delta`).
pub fn impact_components(
    window_mid_ticks: &[f64],
    trading_interval: u32,
    volume: u32,
    smoothing_half_life: f64,
) -> ImpactSeries {
    let delta = trading_interval as usize;
    let interval = delta + 1;
    let q = volume as usize;
    assert!(q >= 3, "need at least three children");
    assert!(
        window_mid_ticks.len() > interval * q - 1,
        "path too short for the child schedule"
    );
    let kernel_fits_used = delta >= 2;
    let mut eta = Vec::with_capacity(q - 1);
    let mut rho = Vec::with_capacity(q - 1);
    for j in 1..q {
        let c = interval * j;
        if kernel_fits_used {
            let xs: Vec<f64> = (0..=delta).map(|x| x as f64).collect();
            let ys = &window_mid_ticks[c..=c + delta];
            let line = stats::linear_fit(&xs, ys);
            eta.push(line.intercept);
            rho.push(-line.slope / line.intercept);
        } else {
            let level = window_mid_ticks[c];
            eta.push(level);
            let r = if delta >= 1 && level != 0.0 {
                (level - window_mid_ticks[c + delta]) / (level * delta as f64)
            } else {
                0.0
            };
            rho.push(r);
        }
    }
    let dl = delta as f64;
    let mut immediate = Vec::with_capacity(q.saturating_sub(2));
    let mut reversion = Vec::with_capacity(q.saturating_sub(2));
    let mut net = Vec::with_capacity(q.saturating_sub(2));
    let mut immediate_direct = Vec::with_capacity(q.saturating_sub(2));
    let mut reversion_direct = Vec::with_capacity(q.saturating_sub(2));
    for j in 2..q {
        let (e, r) = (eta[j - 1], rho[j - 1]);
        let (ep, rp) = (eta[j - 2], rho[j - 2]);
        let imm = e - ep + ep * rp * dl;
        let rev = e * r * dl;
        immediate.push(imm);
        reversion.push(rev);
        net.push(imm - rev);
        let c = interval * j;
        immediate_direct.push(window_mid_ticks[c] - window_mid_ticks[c - 1]);
        reversion_direct.push(window_mid_ticks[c] - window_mid_ticks[c + delta]);
    }
    ImpactSeries {
        smoothed_immediate: ewma_smooth(&immediate, smoothing_half_life),
        smoothed_reversion: ewma_smooth(&reversion, smoothing_half_life),
        smoothed_net: ewma_smooth(&net, smoothing_half_life),
        eta,
        rho,
        first_component_child: 2,
        immediate,
        reversion,
        net,
        immediate_direct,
        reversion_direct,
        kernel_fits_used,
        smoothing_half_life,
    }
}

/// Post-execution decay: exponential fits of the trend return and of the
/// mid-price after the last child order, plus their mutual consistency
/// diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    /// Trend return amplitude at the end of the execution, ticks.
    pub a: f64,
    /// Trend return decay rate per event.
    pub b: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    /// Amplitude of the one-event return decay `r = abar * exp(-btilde x)`
    /// implied by the mid-price fit, ticks.
    pub abar: f64,
    /// Mid-price decay rate per event.
    pub btilde: f64,
    /// Asymptotic mid-price level, ticks.
    pub c: f64,
    /// Per-event damping of the trend return.
    pub gamma: f64,
    /// `a * (1 - gamma * exp(b))`: the return amplitude the trend-return
    /// fit predicts for the mid-price fit.
    pub abar_predicted: f64,
    /// `m(decay start) + abar / btilde`: the asymptote implied by the
    /// fitted amplitude and the observed starting level.
    pub c_predicted: f64,
    /// `c - pre-execution mid`, ticks.
    pub permanent_impact_ticks: f64,
    /// `ln 2 / btilde`, events.
    pub half_life_events: f64,
    /// `(peak - c) / (peak - pre-execution mid)`: share of the peak
    /// impact given back by the reversion.
    pub reversion_fraction: f64,
    pub rbar_residual_norm: f64,
    pub mid_residual_norm: f64,
}

/// Fits the decay after the execution. `rbar_decay` and `mid_decay_ticks`
/// start right after the last child order (`x = 0`); `beta1` is the
/// per-event trend memory and `pre_mid_ticks` the mid just before the
/// execution began.
pub fn fit_post_execution(
    rbar_decay: &[f64],
    mid_decay_ticks: &[f64],
    beta1: f64,
    pre_mid_ticks: f64,
) -> Result<DecayFit, FitError> {
    assert_eq!(rbar_decay.len(), mid_decay_ticks.len());
    let n = rbar_decay.len();
    if n < 8 {
        return Err(FitError::TooFewPoints(n));
    }
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let rbar_fit = fit_exponential(&xs, rbar_decay)?;
    let mid_fit = fit_exp_saturation(&xs, mid_decay_ticks)?;
    let (c, d, btilde) = (mid_fit.a, mid_fit.b, mid_fit.c);
    let abar = d * btilde;
    let gamma = (-beta1).exp();
    let peak = mid_decay_ticks[0];
    Ok(DecayFit {
        a: rbar_fit.a,
        b: rbar_fit.b,
        sigma_a: rbar_fit.sigma_a,
        sigma_b: rbar_fit.sigma_b,
        abar,
        btilde,
        c,
        gamma,
        abar_predicted: rbar_fit.a * (1.0 - gamma * rbar_fit.b.exp()),
        c_predicted: peak + abar / btilde,
        permanent_impact_ticks: c - pre_mid_ticks,
        half_life_events: std::f64::consts::LN_2 / btilde,
        reversion_fraction: (peak - c) / (peak - pre_mid_ticks),
        rbar_residual_norm: rbar_fit.residual_norm,
        mid_residual_norm: mid_fit.residual_norm,
    })
}

/// Single-trade response constant implied by the book geometry: half the
/// mean first gap, weighted by the probability that the best queue holds
/// exactly one order.
pub fn theoretical_k(p_q_best_is_one: f64, mean_gap_ticks: f64) -> f64 {
    0.5 * p_q_best_is_one * mean_gap_ticks
}

/// Lag response curve: mean signed mid-price move `tau` events after a
/// market order, in ticks, over all market orders of a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct ResponseCurve {
    /// `values[tau - 1]` is the response at lag `tau`.
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub n_market_orders: usize,
}

impl ResponseCurve {
    /// Mean response level across all lags.
    pub fn mean_level(&self) -> f64 {
        stats::mean(&self.values)
    }
}

/// Computes the response curve of a recorded trajectory. Only market
/// orders with a full `tau_max` horizon (and a preceding event for the
/// pre-trade mid) enter, so every lag averages the same trade set.
pub fn simulated_response(traj: &SimTrajectory, tau_max: usize) -> ResponseCurve {
    let n = traj.len();
    let mut sums = vec![0.0f64; tau_max];
    let mut sumsq = vec![0.0f64; tau_max];
    let mut count = 0usize;
    for i in 1..n {
        if traj.kinds[i] != EventKind::Market || i + tau_max - 1 >= n {
            continue;
        }
        let eps = match traj.sides[i] {
            crate::book::Side::Bid => 1.0,
            crate::book::Side::Ask => -1.0,
        };
        let pre = traj.mid_half_ticks[i - 1];
        count += 1;
        for tau in 1..=tau_max {
            let move_ticks = (traj.mid_half_ticks[i + tau - 1] - pre) as f64 * 0.5 * eps;
            sums[tau - 1] += move_ticks;
            sumsq[tau - 1] += move_ticks * move_ticks;
        }
    }
    let nf = count as f64;
    let values: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let standard_errors = sumsq
        .iter()
        .zip(&values)
        .map(|(&sq, &m)| {
            if count < 2 {
                f64::NAN
            } else {
                let var = (sq / nf - m * m).max(0.0) * nf / (nf - 1.0);
                (var / nf).sqrt()
            }
        })
        .collect();
    ResponseCurve {
        values,
        standard_errors,
        n_market_orders: count,
    }
}

/// Mean shape of one inter-child window, aligned on the event right after
/// a child order and averaged over the selected children of an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct ChildWindowProfile {
    /// `spread[h]` is the mean spread `h` events after a child order
    /// (h = 0 right after the child), for `h = 0..=delta`.
    pub spread: Vec<f64>,
    /// `mid_drift_ticks[h]`: mean mid-price change from right after the
    /// child to `h` events later; entry 0 is zero.
    pub mid_drift_ticks: Vec<f64>,
    pub mean_gap_bid: f64,
    pub mean_gap_ask: f64,
    pub mean_n_orders: f64,
    pub mean_p_sell: f64,
    /// Mean spread on the event just before the children (the pre-child
    /// level the post-child spread jumps from).
    pub mean_pre_child_spread: f64,
    pub n_children: usize,
}

/// Profiles the inter-child windows of children `first_child..last_child`
/// (1-based, end exclusive; capped at `volume - 1` so every window is
/// complete).
pub fn child_window_profile(
    ens: &EnsembleResult,
    first_child: u32,
    last_child: u32,
) -> ChildWindowProfile {
    let delta = ens.spec.trading_interval as usize;
    let last = last_child.min(ens.spec.volume.saturating_sub(0)) as usize;
    let first = first_child.max(1) as usize;
    assert!(first < last, "empty child range");
    let mut spread = vec![0.0; delta + 1];
    let mut drift = vec![0.0; delta + 1];
    let mut gap_bid = 0.0;
    let mut gap_ask = 0.0;
    let mut n_orders = 0.0;
    let mut p_sell = 0.0;
    let mut pre_spread = 0.0;
    let mut count = 0usize;
    for j in first..last {
        let slot = ens.child_slots[j - 1];
        count += 1;
        pre_spread += ens.mean_spread[slot - 1];
        for h in 0..=delta {
            spread[h] += ens.mean_spread[slot + h];
            drift[h] += ens.mean_mid_ticks[slot + h] - ens.mean_mid_ticks[slot];
            gap_bid += ens.mean_gap_bid[slot + h];
            gap_ask += ens.mean_gap_ask[slot + h];
            n_orders += ens.mean_n_orders[slot + h];
            p_sell += ens.mean_p_sell_lo[slot + h];
        }
    }
    let cf = count as f64;
    let samples = cf * (delta + 1) as f64;
    for v in spread.iter_mut().chain(drift.iter_mut()) {
        *v /= cf;
    }
    ChildWindowProfile {
        spread,
        mid_drift_ticks: drift,
        mean_gap_bid: gap_bid / samples,
        mean_gap_ask: gap_ask / samples,
        mean_n_orders: n_orders / samples,
        mean_p_sell: p_sell / samples,
        mean_pre_child_spread: pre_spread / cf,
        n_children: count,
    }
}

/// First child index (1-based) of the deep stationary regime: children
/// whose window time exceeds `t_star + 1 / beta1`.
pub fn deep_stationary_first_child(
    t_star: f64,
    beta1: f64,
    trading_interval: u32,
) -> u32 {
    let threshold = t_star + 1.0 / beta1;
    let interval = f64::from(trading_interval + 1);
    // Child j acts at window time interval * j - 1.
    ((threshold + 1.0) / interval).floor() as u32 + 1
}
