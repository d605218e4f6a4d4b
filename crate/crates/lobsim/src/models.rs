//! Event-time order flow models over an [`OrderBook`].
//!
//! Background flow is Poisson in event time: per step one event is drawn
//! among limit order (total rate `lambda * K`), market order (`2 * mu`) and
//! cancellation (`delta * n_orders`). Limit order price levels are uniform
//! over the admissible range of the chosen side, market order signs are
//! symmetric, and cancellations target a uniformly random resting order.
//!
//! Limit-order signs are where the two models differ. The plain
//! zero-intelligence flow picks buy/sell with probability 1/2. The
//! trend-reactive variant draws a sell with probability
//! `1 / (1 + exp(-alpha * rbar))`, where `rbar` is the exponentially
//! weighted mid-price return: traders holding reservation prices respond
//! to an upward trend by posting sell limit orders, and vice versa.
//! `alpha = 0` recovers the symmetric flow exactly.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::book::{BookError, EdgePolicy, OrderBook, OrderId, Side};

/// Poisson rates of the background flow, in events of `q0` shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Limit order rate per price level per event.
    pub lambda: f64,
    /// One-sided market order rate per event (total is `2 * mu`).
    pub mu: f64,
    /// Cancellation rate per resting order per event.
    pub delta: f64,
    /// Unit order size in shares; bookkeeping only, every simulated order
    /// has size one in these units.
    pub q0: u32,
    /// Number of tick levels in the grid.
    pub k: usize,
    /// Refill revealed grid-edge levels with fresh deep orders when the
    /// window slides (see [`EdgePolicy`]); off by default.
    #[serde(default)]
    pub edge_refill: bool,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda > 0.0 && self.mu > 0.0 && self.delta > 0.0) {
            return Err("lambda, mu and delta must be positive".into());
        }
        if self.q0 == 0 {
            return Err("q0 must be at least 1".into());
        }
        if self.k < 4 || self.k % 2 != 0 {
            return Err(format!("grid size must be even and >= 4, got {}", self.k));
        }
        Ok(())
    }
}

/// Per-event total rates of the three event classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTriple {
    /// Limit orders: `lambda * K`.
    pub limit: f64,
    /// Market orders: `2 * mu`.
    pub market: f64,
    /// Cancellations: `delta * n_orders`.
    pub cancel: f64,
    /// Normalizer, the sum of the three.
    pub total: f64,
}

/// Rates of the event classes for a book holding `n_orders` resting orders.
pub fn rates_for_population(params: &ModelParams, n_orders: u32) -> RateTriple {
    let limit = params.lambda * params.k as f64;
    let market = 2.0 * params.mu;
    let cancel = params.delta * f64::from(n_orders);
    RateTriple {
        limit,
        market,
        cancel,
        total: limit + market + cancel,
    }
}

/// Rates of the event classes given the current book population.
pub fn event_rates(book: &OrderBook, params: &ModelParams) -> RateTriple {
    rates_for_population(params, book.n_orders())
}

/// Parameters of the trend reaction in limit-order signs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendParams {
    /// Reaction intensity per tick of trend return; 0 disables the
    /// reaction and recovers the symmetric flow.
    pub alpha: f64,
    /// Inverse memory of the trend return, per market event.
    pub beta1: f64,
}

impl TrendParams {
    /// Symmetric flow: no trend reaction.
    pub fn zero_intelligence() -> Self {
        TrendParams {
            alpha: 0.0,
            beta1: 1.0,
        }
    }

    /// Builds the per-event memory from the per-child-order memory `beta2`
    /// of a schedule with `trading_interval` background events between
    /// child orders: `beta1 = beta2 / (trading_interval + 1)`.
    pub fn from_beta2(alpha: f64, beta2: f64, trading_interval: u32) -> Self {
        TrendParams {
            alpha,
            beta1: beta2 / f64::from(trading_interval + 1),
        }
    }

    /// Per-child-order memory implied by `beta1` on a schedule with
    /// `trading_interval` background events between children.
    pub fn beta2(&self, trading_interval: u32) -> f64 {
        self.beta1 * f64::from(trading_interval + 1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.alpha < 0.0 {
            return Err("alpha must be non-negative".into());
        }
        if !(self.beta1 > 0.0) {
            return Err("beta1 must be positive".into());
        }
        Ok(())
    }
}

/// Probability that a limit order is a sell, given the trend return
/// `rbar` in ticks: the logistic `1 / (1 + exp(-alpha * rbar))`.
///
/// Antisymmetric around 1/2 (`p(r) + p(-r) = 1`), slope `alpha / 4` at
/// `rbar = 0`, saturating at 0/1 for extreme trends.
pub fn sell_lo_probability(alpha: f64, rbar_ticks: f64) -> f64 {
    1.0 / (1.0 + (-alpha * rbar_ticks).exp())
}

/// Exponentially weighted mid-price return.
///
/// After every market event the state absorbs the mid-price change:
/// `rbar <- exp(-beta1) * rbar + (m_t - m_{t-1})`, starting from 0, which
/// telescopes to the weighted sum of all past one-event returns. Mids are
/// tracked in half-ticks; the return is exposed in ticks.
#[derive(Debug, Clone, Copy)]
pub struct EwmaState {
    rbar_ticks: f64,
    last_mid_half_ticks: i64,
    damping: f64,
}

impl EwmaState {
    pub fn new(mid_half_ticks: i64, beta1: f64) -> Self {
        EwmaState {
            rbar_ticks: 0.0,
            last_mid_half_ticks: mid_half_ticks,
            damping: (-beta1).exp(),
        }
    }

    /// Absorbs the post-event mid-price.
    pub fn update(&mut self, mid_half_ticks: i64) {
        let return_ticks = (mid_half_ticks - self.last_mid_half_ticks) as f64 * 0.5;
        self.rbar_ticks = self.damping * self.rbar_ticks + return_ticks;
        self.last_mid_half_ticks = mid_half_ticks;
    }

    /// Current trend return in ticks.
    pub fn rbar_ticks(&self) -> f64 {
        self.rbar_ticks
    }

    pub fn last_mid_half_ticks(&self) -> i64 {
        self.last_mid_half_ticks
    }
}

/// One sampled flow event, not yet applied to a book.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Unit limit order; `side` is the direction (`Bid` buys) and `level`
    /// the grid index, already admissible for that side.
    Limit { side: Side, level: usize },
    /// Unit market order; `side` is the taker direction.
    Market { side: Side },
    /// Cancellation of a specific resting order.
    Cancel { id: OrderId },
}

/// Draws one event from the current book state.
///
/// Event class frequencies follow [`event_rates`]; a sell limit order is
/// drawn with [`sell_lo_probability`] of the current trend return and its
/// level uniformly over the levels strictly above the best bid (buys:
/// strictly below the best ask); market order signs are symmetric;
/// cancellations pick a uniformly random resting order, which matches
/// choosing the side proportionally to its population first.
pub fn sample_event<R: Rng>(
    book: &OrderBook,
    params: &ModelParams,
    trend: &TrendParams,
    rbar_ticks: f64,
    rng: &mut R,
) -> Event {
    let rates = event_rates(book, params);
    let draw: f64 = rng.random::<f64>() * rates.total;
    if draw < rates.limit {
        let sell = rng.random::<f64>() < sell_lo_probability(trend.alpha, rbar_ticks);
        let b1 = book.best_bid_level();
        if sell {
            let admissible = params.k - b1 - 1;
            let level = b1 + 1 + rng.random_range(0..admissible);
            Event::Limit {
                side: Side::Ask,
                level,
            }
        } else {
            let admissible = book.best_ask_level();
            let level = rng.random_range(0..admissible);
            Event::Limit {
                side: Side::Bid,
                level,
            }
        }
    } else if draw < rates.limit + rates.market {
        let side = if rng.random::<f64>() < 0.5 {
            Side::Bid
        } else {
            Side::Ask
        };
        Event::Market { side }
    } else {
        let n = book.n_orders() as usize;
        let pick = rng.random_range(0..n);
        let n_bid = book.n_bid() as usize;
        let id = if pick < n_bid {
            book.order_on_side(Side::Bid, pick)
        } else {
            book.order_on_side(Side::Ask, pick - n_bid)
        }
        .expect("sampled order index out of range");
        Event::Cancel { id }
    }
}

/// Simulation failure; carries the event index at which the run aborted.
#[derive(Debug, Clone, thiserror::Error)]
#[error("simulation aborted at event {step}: {source}")]
pub struct SimError {
    pub step: u64,
    #[source]
    pub source: BookError,
}

/// Kind tag persisted in trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Limit,
    Market,
    Cancel,
}

/// Post-event record of one simulation step.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub kind: EventKind,
    /// Direction of the event (`Bid` = buy).
    pub side: Side,
    /// Absolute price of the order involved, ticks.
    pub price_ticks: i64,
    /// Absolute post-event mid-price, half-ticks.
    pub mid_half_ticks: i64,
    pub spread: u32,
    pub gap_bid: u32,
    pub gap_ask: u32,
    pub q_best_bid: u32,
    pub q_best_ask: u32,
    pub n_bid: u32,
    pub n_ask: u32,
    /// Trend return after this event, ticks.
    pub rbar_ticks: f64,
    /// Sell probability the sampler saw before this event.
    pub p_sell_lo: f64,
}

/// A self-contained simulation: book, trend state and its own random
/// stream. Single-threaded by construction; ensembles run one instance
/// per worker.
#[derive(Debug, Clone)]
pub struct Simulation {
    params: ModelParams,
    trend: TrendParams,
    book: OrderBook,
    ewma: EwmaState,
    rng: ChaCha8Rng,
    steps: u64,
}

impl Simulation {
    /// Builds a freshly filled book. `stream` selects an independent
    /// substream of the seed; ensemble member `i` uses stream `i`.
    pub fn new(
        params: ModelParams,
        trend: TrendParams,
        seed: u64,
        stream: u64,
    ) -> Result<Self, BookError> {
        params
            .validate()
            .map_err(BookError::InvalidConfiguration)?;
        trend
            .validate()
            .map_err(BookError::InvalidConfiguration)?;
        let policy = if params.edge_refill {
            EdgePolicy::Refill
        } else {
            EdgePolicy::DropAndCount
        };
        let book = OrderBook::with_edge_policy(params.k, policy)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let ewma = EwmaState::new(book.mid_half_ticks(), trend.beta1);
        Ok(Simulation {
            params,
            trend,
            book,
            ewma,
            rng,
            steps: 0,
        })
    }

    pub fn book(&self) -> &OrderBook {
        &self.book
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn trend(&self) -> &TrendParams {
        &self.trend
    }

    pub fn ewma(&self) -> &EwmaState {
        &self.ewma
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Class rates the sampler will see at the next step.
    pub fn next_rates(&self) -> RateTriple {
        event_rates(&self.book, &self.params)
    }

    /// Draws one background event, applies it, recenters the grid and
    /// updates the trend return with the new mid-price.
    pub fn step(&mut self) -> Result<StepRecord, SimError> {
        let p_sell = sell_lo_probability(self.trend.alpha, self.ewma.rbar_ticks());
        let event = sample_event(
            &self.book,
            &self.params,
            &self.trend,
            self.ewma.rbar_ticks(),
            &mut self.rng,
        );
        self.apply(event, p_sell)
    }

    /// Forces a unit market order of the given direction into the flow,
    /// bypassing the sampler; used for metaorder children. The book update,
    /// recentering and trend update are identical to a sampled event.
    pub fn inject_market_order(&mut self, taker: Side) -> Result<StepRecord, SimError> {
        let p_sell = sell_lo_probability(self.trend.alpha, self.ewma.rbar_ticks());
        self.apply(Event::Market { side: taker }, p_sell)
    }

    fn apply(&mut self, event: Event, p_sell: f64) -> Result<StepRecord, SimError> {
        let step = self.steps;
        let result = match event {
            Event::Limit { side, level } => self.book.place_limit_order(side, level),
            Event::Market { side } => self.book.execute_market_order(side),
            Event::Cancel { id } => self.book.cancel_order(id),
        };
        let delta = result.map_err(|source| SimError { step, source })?;
        self.book.recenter();
        self.steps += 1;
        let obs = self.book.observables();
        self.ewma.update(obs.mid_half_ticks);
        let (kind, side, price_ticks) = match delta.event {
            crate::book::AppliedEvent::Limit { side, price, .. } => {
                (EventKind::Limit, side, price)
            }
            crate::book::AppliedEvent::Market { side, price, .. } => {
                (EventKind::Market, side, price)
            }
            crate::book::AppliedEvent::Cancel { side, price, .. } => {
                (EventKind::Cancel, side, price)
            }
        };
        Ok(StepRecord {
            kind,
            side,
            price_ticks,
            mid_half_ticks: obs.mid_half_ticks,
            spread: obs.spread,
            gap_bid: obs.gap_bid,
            gap_ask: obs.gap_ask,
            q_best_bid: obs.q_best_bid,
            q_best_ask: obs.q_best_ask,
            n_bid: obs.n_bid,
            n_ask: obs.n_ask,
            rbar_ticks: self.ewma.rbar_ticks(),
            p_sell_lo: p_sell,
        })
    }
}

/// Column-oriented store of recorded steps plus run-level summary inputs.
#[derive(Debug, Clone, Default)]
pub struct SimTrajectory {
    pub kinds: Vec<EventKind>,
    pub sides: Vec<Side>,
    pub prices_ticks: Vec<i64>,
    pub mid_half_ticks: Vec<i64>,
    pub spread: Vec<u32>,
    pub gap_bid: Vec<u32>,
    pub gap_ask: Vec<u32>,
    pub q_best_bid: Vec<u32>,
    pub q_best_ask: Vec<u32>,
    pub n_bid: Vec<u32>,
    pub n_ask: Vec<u32>,
    pub rbar_ticks: Vec<f64>,
    pub p_sell_lo: Vec<f64>,
    /// Mean sampler probabilities of (limit, market, cancel) over the
    /// recorded steps, accumulated before each event.
    pub mean_rate_fractions: [f64; 3],
    /// Orders dropped by recentering during the whole run (warm-up
    /// included).
    pub truncated_orders: u64,
    /// Orders placed during the whole run.
    pub orders_placed: u64,
}

impl SimTrajectory {
    pub fn with_capacity(n: usize) -> Self {
        let mut t = SimTrajectory::default();
        t.kinds.reserve(n);
        t.sides.reserve(n);
        t.prices_ticks.reserve(n);
        t.mid_half_ticks.reserve(n);
        t.spread.reserve(n);
        t.gap_bid.reserve(n);
        t.gap_ask.reserve(n);
        t.q_best_bid.reserve(n);
        t.q_best_ask.reserve(n);
        t.n_bid.reserve(n);
        t.n_ask.reserve(n);
        t.rbar_ticks.reserve(n);
        t.p_sell_lo.reserve(n);
        t
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn push(&mut self, r: StepRecord) {
        self.kinds.push(r.kind);
        self.sides.push(r.side);
        self.prices_ticks.push(r.price_ticks);
        self.mid_half_ticks.push(r.mid_half_ticks);
        self.spread.push(r.spread);
        self.gap_bid.push(r.gap_bid);
        self.gap_ask.push(r.gap_ask);
        self.q_best_bid.push(r.q_best_bid);
        self.q_best_ask.push(r.q_best_ask);
        self.n_bid.push(r.n_bid);
        self.n_ask.push(r.n_ask);
        self.rbar_ticks.push(r.rbar_ticks);
        self.p_sell_lo.push(r.p_sell_lo);
    }

    /// Summary statistics of the recorded window.
    pub fn summary(&self) -> RunSummary {
        let n = self.len();
        let nf = n as f64;
        let mean_u32 = |v: &Vec<u32>| v.iter().map(|&x| f64::from(x)).sum::<f64>() / nf;
        let counts = self.kinds.iter().fold([0u64; 3], |mut acc, k| {
            acc[*k as usize] += 1;
            acc
        });
        let q1 = self
            .q_best_bid
            .iter()
            .chain(self.q_best_ask.iter())
            .filter(|&&q| q == 1)
            .count() as f64
            / (2.0 * nf);
        let mean_gap = (mean_u32(&self.gap_bid) + mean_u32(&self.gap_ask)) / 2.0;
        RunSummary {
            events: n as u64,
            event_counts: counts,
            mean_rate_fractions: self.mean_rate_fractions,
            mean_spread: mean_u32(&self.spread),
            mean_gap_bid: mean_u32(&self.gap_bid),
            mean_gap_ask: mean_u32(&self.gap_ask),
            mean_gap,
            p_q_best_is_one: q1,
            mean_n_orders: mean_u32(&self.n_bid) + mean_u32(&self.n_ask),
            truncated_orders: self.truncated_orders,
            orders_placed: self.orders_placed,
        }
    }

    /// Writes the trajectory as CSV with one row per recorded event.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "t,event_kind,side,price_ticks,mid_half_ticks,spread,gap_bid,gap_ask,n_bid,n_ask,rbar,p_sell_lo"
        )?;
        for i in 0..self.len() {
            let kind = match self.kinds[i] {
                EventKind::Limit => "limit",
                EventKind::Market => "market",
                EventKind::Cancel => "cancel",
            };
            let side = match self.sides[i] {
                Side::Bid => "buy",
                Side::Ask => "sell",
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                i,
                kind,
                side,
                self.prices_ticks[i],
                self.mid_half_ticks[i],
                self.spread[i],
                self.gap_bid[i],
                self.gap_ask[i],
                self.n_bid[i],
                self.n_ask[i],
                self.rbar_ticks[i],
                self.p_sell_lo[i]
            )?;
        }
        Ok(())
    }
}

/// Aggregates of one recorded run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub events: u64,
    /// Realized (limit, market, cancel) counts.
    pub event_counts: [u64; 3],
    /// Sampler probabilities of the classes averaged over the run.
    pub mean_rate_fractions: [f64; 3],
    pub mean_spread: f64,
    pub mean_gap_bid: f64,
    pub mean_gap_ask: f64,
    /// Both sides pooled.
    pub mean_gap: f64,
    /// Frequency of unit-length best queues, both sides pooled.
    pub p_q_best_is_one: f64,
    pub mean_n_orders: f64,
    pub truncated_orders: u64,
    pub orders_placed: u64,
}

impl RunSummary {
    /// Fraction of all placed orders lost to grid-edge truncation.
    pub fn truncation_fraction(&self) -> f64 {
        if self.orders_placed == 0 {
            0.0
        } else {
            self.truncated_orders as f64 / self.orders_placed as f64
        }
    }
}

/// Runs `warmup` unrecorded steps followed by `iterations` recorded ones.
pub fn run(
    params: ModelParams,
    trend: TrendParams,
    warmup: u64,
    iterations: u64,
    seed: u64,
    stream: u64,
) -> Result<SimTrajectory, SimError> {
    let mut sim = Simulation::new(params, trend, seed, stream)
        .map_err(|source| SimError { step: 0, source })?;
    for _ in 0..warmup {
        sim.step()?;
    }
    let mut traj = SimTrajectory::with_capacity(iterations as usize);
    let mut fraction_sums = [0.0f64; 3];
    for _ in 0..iterations {
        let rates = sim.next_rates();
        fraction_sums[0] += rates.limit / rates.total;
        fraction_sums[1] += rates.market / rates.total;
        fraction_sums[2] += rates.cancel / rates.total;
        traj.push(sim.step()?);
    }
    if iterations > 0 {
        for f in &mut fraction_sums {
            *f /= iterations as f64;
        }
    }
    traj.mean_rate_fractions = fraction_sums;
    traj.truncated_orders = sim.book().truncated_orders();
    traj.orders_placed = sim.book().orders_placed();
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn calibrated_params() -> ModelParams {
        ModelParams {
            lambda: 0.0131,
            mu: 0.0441,
            delta: 0.1174,
            q0: 101,
            k: 2000,
            edge_refill: false,
        }
    }

    #[test]
    fn rates_follow_definitions() {
        let params = calibrated_params();
        let mut book = OrderBook::new(2000).unwrap();
        // Trim the initial 2000 orders down to exactly 100.
        let mut cancelled = 0;
        let mut id = 0;
        while book.n_orders() > 100 {
            if book.cancel_order(id).is_ok() {
                cancelled += 1;
            }
            id += 1;
        }
        assert_eq!(cancelled, 1900);
        let rates = event_rates(&book, &params);
        assert!((rates.limit - 26.2).abs() < 1e-12);
        assert!((rates.market - 0.0882).abs() < 1e-12);
        assert!((rates.cancel - 11.74).abs() < 1e-12);
        assert!((rates.total - 38.0282).abs() < 1e-12);

        // Doubling K doubles the limit rate and nothing else.
        let mut wide = params;
        wide.k = 4000;
        let book2 = OrderBook::new(4000).unwrap();
        let r2 = event_rates(&book2, &wide);
        assert!((r2.limit - 2.0 * rates.limit).abs() < 1e-12);
        assert_eq!(r2.market, rates.market);
    }

    #[test]
    fn rates_with_empty_cancel_pool() {
        let params = calibrated_params();
        let rates = rates_for_population(&params, 0);
        assert_eq!(rates.cancel, 0.0);
        assert_eq!(rates.total, rates.limit + rates.market);
    }

    #[test]
    fn sigmoid_properties() {
        // Zero trend gives a fair coin for any alpha.
        assert_eq!(sell_lo_probability(0.37, 0.0), 0.5);
        // alpha = 0 gives a fair coin for any trend.
        assert_eq!(sell_lo_probability(0.0, 1234.5), 0.5);
        // Closed-form inversion: p = 2/3 at rbar = ln(2)/alpha.
        let alpha = 1e-3;
        let rbar = std::f64::consts::LN_2 / alpha;
        assert!((sell_lo_probability(alpha, rbar) - 2.0 / 3.0).abs() < 1e-12);
        // Antisymmetry.
        for r in [-900.0, -1.5, 0.0, 3.25, 4000.0] {
            let s = sell_lo_probability(alpha, r) + sell_lo_probability(alpha, -r);
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Saturation without NaN.
        assert_eq!(sell_lo_probability(1.0, 1e9), 1.0);
        assert_eq!(sell_lo_probability(1.0, -1e9), 0.0);
    }

    #[test]
    fn ewma_matches_direct_sum() {
        // Returns (+2, -1, +3) ticks with beta1 = 0.1.
        let beta1 = 0.1f64;
        let mut state = EwmaState::new(0, beta1);
        for mid in [4, 2, 8] {
            state.update(mid);
        }
        let expected = 3.0 + (-0.1f64).exp() * (-1.0) + (-0.2f64).exp() * 2.0;
        assert!((state.rbar_ticks() - expected).abs() < 1e-12);
        assert!((expected - 3.7326).abs() < 1e-3);
    }

    #[test]
    fn ewma_decays_geometrically_on_constant_mid() {
        let beta1 = 0.25;
        let mut state = EwmaState::new(0, beta1);
        state.update(2); // one +1 tick return
        let r0 = state.rbar_ticks();
        for i in 1..=5 {
            state.update(2);
            let expected = r0 * (-beta1 * i as f64).exp();
            assert!((state.rbar_ticks() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ewma_recursion_tracks_direct_sum_over_long_runs() {
        // Drift check of the recursion against the explicit weighted sum.
        let beta1: f64 = 2e-3;
        let damping = (-beta1).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mids = vec![0i64];
        for _ in 0..10_000 {
            let step = rng.random_range(-3..=3);
            mids.push(mids.last().unwrap() + step);
        }
        let mut state = EwmaState::new(mids[0], beta1);
        for &m in &mids[1..] {
            state.update(m);
        }
        let n = mids.len() - 1;
        let mut direct = 0.0;
        for s in 1..=n {
            let r = (mids[s] - mids[s - 1]) as f64 * 0.5;
            direct += damping.powi((n - s) as i32) * r;
        }
        let rel = (state.rbar_ticks() - direct).abs() / direct.abs().max(1e-30);
        assert!(rel < 1e-10, "relative drift {rel}");
    }

    #[test]
    fn sampler_respects_sign_and_side_frequencies() {
        let params = calibrated_params();
        let trend = TrendParams::zero_intelligence();
        let book = OrderBook::new(2000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sells = 0u64;
        let mut lo_draws = 0u64;
        while lo_draws < 100_000 {
            if let Event::Limit { side, .. } = sample_event(&book, &params, &trend, 0.0, &mut rng)
            {
                lo_draws += 1;
                if side == Side::Ask {
                    sells += 1;
                }
            }
        }
        // 3-sigma binomial band around 1/2.
        let freq = sells as f64 / lo_draws as f64;
        let band = 3.0 * (0.25f64 / lo_draws as f64).sqrt();
        assert!((freq - 0.5).abs() < band, "sell freq {freq}");
    }

    #[test]
    fn cancel_side_frequency_tracks_population() {
        // 75 bids vs 25 asks: cancellations should hit bids ~75% of the time.
        let params = ModelParams {
            k: 200,
            ..calibrated_params()
        };
        let mut book = OrderBook::new(200).unwrap();
        // Initial fill: 100 per side. Remove 25 bids and 75 asks.
        let mut removed_bid = 0;
        let mut removed_ask = 0;
        let mut id = 0;
        while removed_bid < 25 || removed_ask < 75 {
            let side_of_next = if id < 100 { Side::Bid } else { Side::Ask };
            let want = match side_of_next {
                Side::Bid => removed_bid < 25,
                Side::Ask => removed_ask < 75,
            };
            if want && book.cancel_order(id).is_ok() {
                match side_of_next {
                    Side::Bid => removed_bid += 1,
                    Side::Ask => removed_ask += 1,
                }
            }
            id += 1;
        }
        assert_eq!((book.n_bid(), book.n_ask()), (75, 25));
        let trend = TrendParams::zero_intelligence();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bids = 0u64;
        let mut cancels = 0u64;
        while cancels < 100_000 {
            if let Event::Cancel { id } = sample_event(&book, &params, &trend, 0.0, &mut rng) {
                cancels += 1;
                // All live orders are from the initial fill, where ids
                // 0..100 are bids and 100..200 asks.
                if id < 100 {
                    bids += 1;
                }
            }
        }
        let freq = bids as f64 / cancels as f64;
        let band = 3.0 * (0.75f64 * 0.25 / cancels as f64).sqrt();
        assert!((freq - 0.75).abs() < band, "bid cancel freq {freq}");
    }

    #[test]
    fn sell_lo_levels_are_uniform() {
        // Chi-square goodness of fit of sampled sell-LO levels against the
        // uniform law over the admissible range.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let params = ModelParams {
            k: 200,
            ..calibrated_params()
        };
        let book = OrderBook::new(200).unwrap();
        let trend = TrendParams::zero_intelligence();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let b1 = book.best_bid_level();
        let admissible = params.k - b1 - 1; // 100 levels
        let mut counts = vec![0u64; admissible];
        let mut draws = 0u64;
        while draws < 100_000 {
            if let Event::Limit {
                side: Side::Ask,
                level,
            } = sample_event(&book, &params, &trend, 0.0, &mut rng)
            {
                counts[level - b1 - 1] += 1;
                draws += 1;
            }
        }
        let expected = draws as f64 / admissible as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let dist = ChiSquared::new((admissible - 1) as f64).unwrap();
        let critical = dist.inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn fixed_seed_reproduces_trajectory() {
        let params = ModelParams {
            k: 400,
            ..calibrated_params()
        };
        let trend = TrendParams::from_beta2(1e-3, 1e-3, 20);
        let a = run(params, trend, 500, 2_000, 42, 0).unwrap();
        let b = run(params, trend, 500, 2_000, 42, 0).unwrap();
        assert_eq!(a.mid_half_ticks, b.mid_half_ticks);
        assert_eq!(a.prices_ticks, b.prices_ticks);
        assert_eq!(a.rbar_ticks, b.rbar_ticks);
        // A different stream of the same seed diverges.
        let c = run(params, trend, 500, 2_000, 42, 1).unwrap();
        assert_ne!(a.mid_half_ticks, c.mid_half_ticks);
    }

    #[test]
    fn first_step_on_fresh_small_book() {
        let params = ModelParams {
            k: 10,
            ..calibrated_params()
        };
        let mut sim =
            Simulation::new(params, TrendParams::zero_intelligence(), 3, 0).unwrap();
        let before_mid = sim.book().mid_half_ticks();
        let rec = sim.step().unwrap();
        // The trend return must match the recorded mid change exactly.
        let expected = (rec.mid_half_ticks - before_mid) as f64 * 0.5;
        assert!((rec.rbar_ticks - expected).abs() < 1e-12);
        assert_eq!(rec.p_sell_lo, 0.5);
    }

    #[test]
    fn empty_run_is_valid() {
        let params = ModelParams {
            k: 100,
            ..calibrated_params()
        };
        let traj = run(params, TrendParams::zero_intelligence(), 0, 0, 1, 0).unwrap();
        assert!(traj.is_empty());
        let summary = traj.summary();
        assert_eq!(summary.events, 0);
    }

    #[test]
    fn event_mix_matches_rate_fractions() {
        let params = calibrated_params();
        let traj = run(params, TrendParams::zero_intelligence(), 10_000, 200_000, 9, 0).unwrap();
        let summary = traj.summary();
        let n = summary.events as f64;
        for class in 0..3 {
            let expected = summary.mean_rate_fractions[class];
            let observed = summary.event_counts[class] as f64 / n;
            let band = 3.0 * (expected * (1.0 - expected) / n).sqrt();
            assert!(
                (observed - expected).abs() < band,
                "class {class}: observed {observed}, expected {expected} +- {band}"
            );
        }
    }

    #[test]
    fn two_seeds_agree_on_mean_spread() {
        let params = calibrated_params();
        let trend = TrendParams::zero_intelligence();
        let a = run(params, trend, 10_000, 100_000, 101, 0).unwrap();
        let b = run(params, trend, 10_000, 100_000, 202, 0).unwrap();
        assert_ne!(a.mid_half_ticks, b.mid_half_ticks);
        // Block means give an honest standard error under autocorrelation.
        let block_se = |t: &SimTrajectory| {
            let blocks: Vec<f64> = t
                .spread
                .chunks(5_000)
                .map(|c| c.iter().map(|&s| f64::from(s)).sum::<f64>() / c.len() as f64)
                .collect();
            let m = blocks.iter().sum::<f64>() / blocks.len() as f64;
            let var = blocks.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
                / (blocks.len() as f64 - 1.0);
            (m, (var / blocks.len() as f64).sqrt())
        };
        let (ma, sa) = block_se(&a);
        let (mb, sb) = block_se(&b);
        let diff = (ma - mb).abs();
        let band = 4.0 * (sa * sa + sb * sb).sqrt();
        assert!(diff < band, "mean spreads {ma} vs {mb}, band {band}");
    }

    #[test]
    fn truncation_stays_small_at_default_grid() {
        // Limit orders land uniformly over ~K/2 levels, so a small share
        // always rests near an edge when the window slides; those orders
        // sit ~K/2 ticks away from the mid and never touch the quotes.
        // At the calibrated rates the loss stays below 1% of placements.
        let params = calibrated_params();
        let traj = run(params, TrendParams::zero_intelligence(), 10_000, 100_000, 13, 0).unwrap();
        let summary = traj.summary();
        assert!(
            summary.truncation_fraction() < 0.01,
            "truncation fraction {}",
            summary.truncation_fraction()
        );
        assert!(summary.truncated_orders > 0);
    }

    #[test]
    fn mean_spread_approaches_flow_balance_level() {
        // (mu + delta) / lambda + 1 = 13.33 ticks at the calibrated rates.
        let params = calibrated_params();
        let traj = run(params, TrendParams::zero_intelligence(), 20_000, 200_000, 8, 0).unwrap();
        let summary = traj.summary();
        let expected = (params.mu + params.delta) / params.lambda + 1.0;
        assert!(
            (summary.mean_spread - expected).abs() / expected < 0.10,
            "mean spread {} vs {expected}",
            summary.mean_spread
        );
    }
}
