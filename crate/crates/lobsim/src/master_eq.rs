//! Discrete-time master equations for the spread and the mid-price in the
//! windows between child market orders, under the wide-grid approximation
//! (both limit-order sides see ~K/2 admissible levels, unit best queues,
//! first gaps and the event normalizer frozen at their stationary means).
//!
//! One step advances the distribution by one market event:
//!
//! - spread: limit orders inside the spread take spread `s` to any of
//!   `1..s-1` at rate `2 lambda / Gamma` each; market orders and
//!   best-quote cancellations widen it by the first gap of their side at
//!   rate `(mu + delta) / Gamma` each. The sell probability cancels out,
//!   so the evolution is identical for the symmetric and trend-reactive
//!   flows.
//! - mid-price (half-tick support): a limit order `j` deep inside the
//!   spread moves the mid by `j` half-ticks, down for sells (probability
//!   `p_sell`), up for buys; market orders and best-quote cancellations
//!   move it by the gap of the depleted side.
//!
//! Probability shifted outside the truncated support is dropped; mass
//! conservation is asserted per step and tiny negative entries are
//! clipped, so a leak only occurs when the support is genuinely too small
//! and is reported as an error.

use serde::Serialize;

use crate::models::ModelParams;

/// Probability vector over consecutive integers `min..=min+len-1`
/// (spread in ticks, mid-price in half-ticks).
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub min: i64,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Error, Serialize)]
pub enum MasterEqError {
    #[error("probability mass leak {leak:e} exceeds tolerance at step {step}")]
    MassLeak { step: usize, leak: f64 },
    #[error("negative probability {value:e} beyond clipping tolerance")]
    NegativeProbability { value: f64 },
    #[error("invalid context: {0}")]
    InvalidContext(String),
}

use thiserror::Error;

impl Distribution {
    /// Point mass at `at` on support `min..=max`.
    pub fn delta(min: i64, max: i64, at: i64) -> Self {
        assert!(min <= at && at <= max, "point mass outside support");
        let mut probs = vec![0.0; (max - min + 1) as usize];
        probs[(at - min) as usize] = 1.0;
        Distribution { min, probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (self.min + i as i64) as f64 * p)
            .sum()
    }

    /// Clips tiny negative entries and renormalizes. Fails when an entry
    /// is materially negative or the mass drifted more than `tol`.
    fn repair(&mut self, step: usize, tol: f64) -> Result<(), MasterEqError> {
        for p in &mut self.probs {
            if *p < 0.0 {
                if *p < -1e-12 {
                    return Err(MasterEqError::NegativeProbability { value: *p });
                }
                *p = 0.0;
            }
        }
        let mass = self.total_mass();
        let leak = (1.0 - mass).abs();
        if leak > tol {
            return Err(MasterEqError::MassLeak { step, leak });
        }
        if mass > 0.0 {
            for p in &mut self.probs {
                *p /= mass;
            }
        }
        Ok(())
    }
}

/// Frozen environment of the master equations.
#[derive(Debug, Clone, Serialize)]
pub struct MasterEqContext {
    pub params: ModelParams,
    /// Stationary mean number of resting orders, fixing the normalizer.
    pub n_orders: f64,
    /// First gap on the ask side, ticks.
    pub gap_ask: u32,
    /// First gap on the bid side, ticks.
    pub gap_bid: u32,
    /// Probability that a limit order is a sell (mid-price equation only).
    pub p_sell: f64,
    /// Spread per step feeding the mid-price evolution.
    pub spread_path: Vec<u32>,
}

impl MasterEqContext {
    /// Event normalizer `lambda K + 2 mu + delta n_orders`.
    pub fn gamma(&self) -> f64 {
        self.params.lambda * self.params.k as f64 + 2.0 * self.params.mu
            + self.params.delta * self.n_orders
    }

    pub fn validate(&self) -> Result<(), MasterEqError> {
        if self.gamma() <= 0.0 {
            return Err(MasterEqError::InvalidContext("normalizer must be positive".into()));
        }
        if self.gap_ask == 0 || self.gap_bid == 0 {
            return Err(MasterEqError::InvalidContext("gaps must be at least one tick".into()));
        }
        if !(0.0..=1.0).contains(&self.p_sell) {
            return Err(MasterEqError::InvalidContext(format!(
                "sell probability {} outside [0, 1]",
                self.p_sell
            )));
        }
        Ok(())
    }
}

const MASS_TOLERANCE: f64 = 1e-6;

/// One event step of the spread distribution (support `1..=K-1`).
pub fn spread_step(p: &Distribution, ctx: &MasterEqContext) -> Result<Distribution, MasterEqError> {
    spread_step_at(p, ctx, 0)
}

fn spread_step_at(
    p: &Distribution,
    ctx: &MasterEqContext,
    step: usize,
) -> Result<Distribution, MasterEqError> {
    debug_assert_eq!(p.min, 1);
    let gamma = ctx.gamma();
    let lam2 = 2.0 * ctx.params.lambda / gamma;
    let widen = (ctx.params.mu + ctx.params.delta) / gamma;
    let n = p.len();
    // Suffix sums: mass at spreads strictly above s.
    let mut above = vec![0.0; n + 1];
    for i in (0..n).rev() {
        above[i] = above[i + 1] + p.probs[i];
    }
    let mut out = vec![0.0; n];
    let ga = ctx.gap_ask as usize;
    let gb = ctx.gap_bid as usize;
    for i in 0..n {
        let s = i as f64 + 1.0;
        let mut v = p.probs[i];
        // Widening inflow from s - gap (one term per side).
        if i >= ga {
            v += widen * p.probs[i - ga];
        }
        if i >= gb {
            v += widen * p.probs[i - gb];
        }
        // Narrowing inflow from every larger spread.
        v += lam2 * above[i + 1];
        // Outflow.
        v -= p.probs[i] * (lam2 * (s - 1.0) + 2.0 * widen);
        out[i] = v;
    }
    let mut next = Distribution {
        min: p.min,
        probs: out,
    };
    next.repair(step, MASS_TOLERANCE)?;
    Ok(next)
}

/// One event step of the mid-price distribution on a half-tick support,
/// given the spread `s_t` in that window step.
pub fn midprice_step(
    p: &Distribution,
    ctx: &MasterEqContext,
    spread: u32,
) -> Result<Distribution, MasterEqError> {
    midprice_step_at(p, ctx, spread, 0)
}

fn midprice_step_at(
    p: &Distribution,
    ctx: &MasterEqContext,
    spread: u32,
    step: usize,
) -> Result<Distribution, MasterEqError> {
    let gamma = ctx.gamma();
    let lam2 = 2.0 * ctx.params.lambda / gamma;
    let widen = (ctx.params.mu + ctx.params.delta) / gamma;
    let n = p.len();
    let s = spread as usize;
    let mut out = vec![0.0; n];
    let ga = ctx.gap_ask as usize;
    let gb = ctx.gap_bid as usize;
    for i in 0..n {
        let mut v = p.probs[i];
        // Limit orders deep inside the spread shift the mid by j
        // half-ticks: sells pull it down (inflow from above), buys push it
        // up (inflow from below).
        for j in 1..s {
            if i + j < n {
                v += lam2 * ctx.p_sell * p.probs[i + j];
            }
            if i >= j {
                v += lam2 * (1.0 - ctx.p_sell) * p.probs[i - j];
            }
        }
        // Gap shifts from depletions of a best quote: a sell market order
        // or bid cancellation drops the mid by the bid gap, the mirror
        // moves it up by the ask gap.
        if i + gb < n {
            v += widen * p.probs[i + gb];
        }
        if i >= ga {
            v += widen * p.probs[i - ga];
        }
        v -= p.probs[i] * (lam2 * (s as f64 - 1.0) + 2.0 * widen);
        out[i] = v;
    }
    let mut next = Distribution {
        min: p.min,
        probs: out,
    };
    next.repair(step, MASS_TOLERANCE)?;
    Ok(next)
}

/// Spread that balances narrowing limit-order flow against widening
/// market orders and cancellations: `(mu + delta) / lambda + 1`.
pub fn equilibrium_spread(params: &ModelParams) -> f64 {
    (params.mu + params.delta) / params.lambda + 1.0
}

/// Which distribution [`evolve`] advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evolution {
    Spread,
    MidPrice,
}

/// Result of an evolution: per-step means (entry 0 is the initial state)
/// and the final distribution.
#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub means: Vec<f64>,
    pub final_dist: Distribution,
}

/// Iterates the chosen master equation for `steps` events. The mid-price
/// evolution reads the spread of each step from `ctx.spread_path`
/// (missing entries reuse the last one).
pub fn evolve(
    p0: Distribution,
    ctx: &MasterEqContext,
    steps: usize,
    which: Evolution,
) -> Result<EvolutionResult, MasterEqError> {
    ctx.validate()?;
    let mut means = Vec::with_capacity(steps + 1);
    let mut dist = p0;
    means.push(dist.mean());
    for step in 0..steps {
        dist = match which {
            Evolution::Spread => spread_step_at(&dist, ctx, step)?,
            Evolution::MidPrice => {
                let spread = ctx
                    .spread_path
                    .get(step)
                    .or(ctx.spread_path.last())
                    .copied()
                    .ok_or_else(|| {
                        MasterEqError::InvalidContext(
                            "mid-price evolution needs a spread path".into(),
                        )
                    })?;
                midprice_step_at(&dist, ctx, spread, step)?
            }
        };
        means.push(dist.mean());
    }
    Ok(EvolutionResult {
        means,
        final_dist: dist,
    })
}
