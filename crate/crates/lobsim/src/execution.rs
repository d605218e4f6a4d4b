//! Metaorder execution harness.
//!
//! A metaorder of `Q` units is worked at constant speed: child market
//! orders of one unit each are injected into the recorded flow so that
//! child `j` (1-based) occupies recorded slot `(delta + 1) * j - 1` of the
//! execution window, leaving exactly `delta` background events between
//! consecutive children (and before the first). The recorded window spans
//! `pre_window` events before the execution, the execution itself and
//! `post_window` events after the last child.
//!
//! Ensembles run independent simulations on separate random streams and
//! aggregate mean paths with standard errors. Aggregation order is fixed
//! (batches of consecutive streams combined in index order), so results
//! are bit-identical regardless of how many worker threads are used.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::book::Side;
use crate::models::{EventKind, ModelParams, SimError, Simulation, StepRecord, TrendParams};

/// Constant-speed execution schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaorderSpec {
    /// Total volume in unit child orders.
    pub volume: u32,
    /// Background events between consecutive child orders (inverse
    /// trading speed).
    pub trading_interval: u32,
    /// Direction of every child order; `Bid` buys.
    pub sign: Side,
    /// Recorded background events before the execution window; must be
    /// at least 1 so the pre-execution mid-price exists.
    pub pre_window: u32,
    /// Recorded background events after the last child order.
    pub post_window: u32,
}

impl MetaorderSpec {
    /// Slot of child `j` (1-based) inside the execution window.
    pub fn child_slot(&self, j: u32) -> u64 {
        u64::from(self.trading_interval + 1) * u64::from(j) - 1
    }

    /// Number of slots in the execution window: the last child sits at
    /// slot `duration()`, so the window holds `duration() + 1` events.
    /// Zero-volume metaorders have an empty window.
    pub fn duration(&self) -> u64 {
        if self.volume == 0 {
            0
        } else {
            self.child_slot(self.volume)
        }
    }

    /// Sign as +1 (buy) or -1 (sell).
    pub fn epsilon(&self) -> f64 {
        match self.sign {
            Side::Bid => 1.0,
            Side::Ask => -1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.pre_window == 0 {
            return Err("pre_window must be at least 1".into());
        }
        Ok(())
    }
}

/// Percentage of all market orders in the execution window that belong to
/// the metaorder: `100 * Q / N_MO`, with `n_market_orders` counting the
/// children themselves plus background market orders.
pub fn participation_rate(volume: u32, n_market_orders: u64) -> f64 {
    100.0 * f64::from(volume) / n_market_orders as f64
}

/// Recorded paths of a single execution run.
#[derive(Debug, Clone)]
pub struct ExecutionPath {
    /// Absolute post-event mid-price per recorded slot, half-ticks.
    pub mid_half_ticks: Vec<i64>,
    /// Trend return per recorded slot, ticks.
    pub rbar_ticks: Vec<f64>,
    pub spread: Vec<u32>,
    pub gap_bid: Vec<u32>,
    pub gap_ask: Vec<u32>,
    pub n_orders: Vec<u32>,
    pub p_sell_lo: Vec<f64>,
    /// Index of the first execution-window slot (= `pre_window`).
    pub exec_start: usize,
    /// Recorded-slot index of each child order.
    pub child_slots: Vec<usize>,
    /// Market orders (children included) inside the execution window.
    pub n_market_orders_exec: u64,
    /// Signed end-of-execution impact: `epsilon * (m_peak - m_pre)`,
    /// ticks; zero for zero-volume runs.
    pub peak_impact_ticks: f64,
    /// Random stream this path was drawn from.
    pub stream: u64,
}

impl ExecutionPath {
    pub fn len(&self) -> usize {
        self.mid_half_ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mid_half_ticks.is_empty()
    }

    /// Slot of the last child order.
    pub fn exec_end(&self) -> usize {
        *self.child_slots.last().unwrap_or(&self.exec_start)
    }

    pub fn participation_pct(&self, volume: u32) -> f64 {
        participation_rate(volume, self.n_market_orders_exec)
    }
}

/// Runs one simulation with the metaorder superimposed on the background
/// flow. Child orders update the trend return exactly like sampled events.
pub fn execute_metaorder(
    params: ModelParams,
    trend: TrendParams,
    spec: &MetaorderSpec,
    warmup: u64,
    seed: u64,
    stream: u64,
) -> Result<ExecutionPath, SimError> {
    spec.validate()
        .map_err(|e| SimError {
            step: 0,
            source: crate::book::BookError::InvalidConfiguration(e),
        })?;
    let mut sim = Simulation::new(params, trend, seed, stream)
        .map_err(|source| SimError { step: 0, source })?;
    for _ in 0..warmup {
        sim.step()?;
    }
    let window = if spec.volume == 0 {
        0
    } else {
        spec.duration() + 1
    };
    let total = spec.pre_window as u64 + window + u64::from(spec.post_window);
    let mut path = ExecutionPath {
        mid_half_ticks: Vec::with_capacity(total as usize),
        rbar_ticks: Vec::with_capacity(total as usize),
        spread: Vec::with_capacity(total as usize),
        gap_bid: Vec::with_capacity(total as usize),
        gap_ask: Vec::with_capacity(total as usize),
        n_orders: Vec::with_capacity(total as usize),
        p_sell_lo: Vec::with_capacity(total as usize),
        exec_start: spec.pre_window as usize,
        child_slots: Vec::with_capacity(spec.volume as usize),
        n_market_orders_exec: 0,
        peak_impact_ticks: 0.0,
        stream,
    };
    let record = |path: &mut ExecutionPath, rec: StepRecord| {
        path.mid_half_ticks.push(rec.mid_half_ticks);
        path.rbar_ticks.push(rec.rbar_ticks);
        path.spread.push(rec.spread);
        path.gap_bid.push(rec.gap_bid);
        path.gap_ask.push(rec.gap_ask);
        path.n_orders.push(rec.n_bid + rec.n_ask);
        path.p_sell_lo.push(rec.p_sell_lo);
        rec.kind == EventKind::Market
    };
    for _ in 0..spec.pre_window {
        let rec = sim.step()?;
        record(&mut path, rec);
    }
    let interval = u64::from(spec.trading_interval) + 1;
    for slot in 0..window {
        if (slot + 1) % interval == 0 {
            let rec = sim.inject_market_order(spec.sign)?;
            record(&mut path, rec);
            path.child_slots.push(path.mid_half_ticks.len() - 1);
            path.n_market_orders_exec += 1;
        } else {
            let rec = sim.step()?;
            if record(&mut path, rec) {
                path.n_market_orders_exec += 1;
            }
        }
    }
    for _ in 0..spec.post_window {
        let rec = sim.step()?;
        record(&mut path, rec);
    }
    if spec.volume > 0 {
        let peak = path.mid_half_ticks[path.exec_end()];
        let pre = path.mid_half_ticks[path.exec_start - 1];
        path.peak_impact_ticks = spec.epsilon() * (peak - pre) as f64 * 0.5;
    }
    Ok(path)
}

/// Ensemble aggregates over independent execution runs.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub params: ModelParams,
    pub trend: TrendParams,
    pub spec: MetaorderSpec,
    pub n_sims: u32,
    pub base_seed: u64,
    /// Ensemble mean mid-price per recorded slot, ticks.
    pub mean_mid_ticks: Vec<f64>,
    /// Standard error of the mean mid-price, ticks.
    pub se_mid_ticks: Vec<f64>,
    /// Ensemble mean trend return, ticks.
    pub mean_rbar_ticks: Vec<f64>,
    pub mean_spread: Vec<f64>,
    pub mean_gap_bid: Vec<f64>,
    pub mean_gap_ask: Vec<f64>,
    pub mean_n_orders: Vec<f64>,
    pub mean_p_sell_lo: Vec<f64>,
    pub exec_start: usize,
    pub child_slots: Vec<usize>,
    /// Signed mean impact at child sample points:
    /// `P(tau) = epsilon * (m just after child tau-1 - m at start)`,
    /// for `tau = 1..=volume`; `P(1) = 0` by construction.
    pub impact_curve_ticks: Vec<f64>,
    pub mean_peak_impact_ticks: f64,
    pub mean_participation_pct: f64,
    /// Per-simulation mid paths (half-ticks), kept only on request.
    pub per_sim_mid_half_ticks: Option<Vec<Vec<i64>>>,
}

#[derive(Default)]
struct Accumulator {
    n: u64,
    sum_mid: Vec<f64>,
    sumsq_mid: Vec<f64>,
    sum_rbar: Vec<f64>,
    sum_spread: Vec<f64>,
    sum_gap_bid: Vec<f64>,
    sum_gap_ask: Vec<f64>,
    sum_n_orders: Vec<f64>,
    sum_p_sell: Vec<f64>,
    sum_peak: f64,
    sum_participation: f64,
    paths: Vec<(u64, Vec<i64>)>,
}

impl Accumulator {
    fn new(len: usize, keep_paths: bool) -> Self {
        Accumulator {
            n: 0,
            sum_mid: vec![0.0; len],
            sumsq_mid: vec![0.0; len],
            sum_rbar: vec![0.0; len],
            sum_spread: vec![0.0; len],
            sum_gap_bid: vec![0.0; len],
            sum_gap_ask: vec![0.0; len],
            sum_n_orders: vec![0.0; len],
            sum_p_sell: vec![0.0; len],
            sum_peak: 0.0,
            sum_participation: 0.0,
            paths: if keep_paths { Vec::new() } else { Vec::with_capacity(0) },
        }
    }

    fn absorb(&mut self, path: ExecutionPath, volume: u32, keep_paths: bool) {
        self.n += 1;
        for (i, &m) in path.mid_half_ticks.iter().enumerate() {
            let ticks = m as f64 * 0.5;
            self.sum_mid[i] += ticks;
            self.sumsq_mid[i] += ticks * ticks;
        }
        for (i, &r) in path.rbar_ticks.iter().enumerate() {
            self.sum_rbar[i] += r;
        }
        for (i, &s) in path.spread.iter().enumerate() {
            self.sum_spread[i] += f64::from(s);
        }
        for (i, &g) in path.gap_bid.iter().enumerate() {
            self.sum_gap_bid[i] += f64::from(g);
        }
        for (i, &g) in path.gap_ask.iter().enumerate() {
            self.sum_gap_ask[i] += f64::from(g);
        }
        for (i, &n) in path.n_orders.iter().enumerate() {
            self.sum_n_orders[i] += f64::from(n);
        }
        for (i, &p) in path.p_sell_lo.iter().enumerate() {
            self.sum_p_sell[i] += p;
        }
        self.sum_peak += path.peak_impact_ticks;
        if volume > 0 {
            self.sum_participation += path.participation_pct(volume);
        }
        if keep_paths {
            self.paths.push((path.stream, path.mid_half_ticks));
        }
    }

    fn merge(&mut self, other: Accumulator) {
        self.n += other.n;
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        };
        add(&mut self.sum_mid, &other.sum_mid);
        add(&mut self.sumsq_mid, &other.sumsq_mid);
        add(&mut self.sum_rbar, &other.sum_rbar);
        add(&mut self.sum_spread, &other.sum_spread);
        add(&mut self.sum_gap_bid, &other.sum_gap_bid);
        add(&mut self.sum_gap_ask, &other.sum_gap_ask);
        add(&mut self.sum_n_orders, &other.sum_n_orders);
        add(&mut self.sum_p_sell, &other.sum_p_sell);
        self.sum_peak += other.sum_peak;
        self.sum_participation += other.sum_participation;
        self.paths.extend(other.paths);
    }
}

/// Streams per batch; fixed so that the floating-point reduction order is
/// independent of the worker count.
const BATCH: u64 = 8;

/// Runs `n_sims` independent executions on streams `0..n_sims` of
/// `base_seed` and aggregates them. With `keep_paths`, per-simulation mid
/// paths are retained (one column per simulation in the CSV output).
pub fn run_ensemble(
    params: ModelParams,
    trend: TrendParams,
    spec: &MetaorderSpec,
    warmup: u64,
    n_sims: u32,
    base_seed: u64,
    keep_paths: bool,
) -> Result<EnsembleResult, SimError> {
    assert!(n_sims >= 1, "ensemble needs at least one simulation");
    let window = if spec.volume == 0 {
        0
    } else {
        spec.duration() + 1
    };
    let len = (spec.pre_window as u64 + window + u64::from(spec.post_window)) as usize;
    let n_batches = (u64::from(n_sims) + BATCH - 1) / BATCH;
    let batches: Result<Vec<Accumulator>, SimError> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut acc = Accumulator::new(len, keep_paths);
            let lo = b * BATCH;
            let hi = (lo + BATCH).min(u64::from(n_sims));
            for stream in lo..hi {
                let path = execute_metaorder(params, trend, spec, warmup, base_seed, stream)?;
                acc.absorb(path, spec.volume, keep_paths);
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(len, keep_paths);
    for acc in batches? {
        total.merge(acc);
    }
    let n = total.n as f64;
    let mean = |v: &Vec<f64>| v.iter().map(|x| x / n).collect::<Vec<f64>>();
    let mean_mid = mean(&total.sum_mid);
    let se_mid: Vec<f64> = total
        .sumsq_mid
        .iter()
        .zip(&mean_mid)
        .map(|(&sq, &m)| {
            if total.n < 2 {
                0.0
            } else {
                let var = (sq / n - m * m).max(0.0) * n / (n - 1.0);
                (var / n).sqrt()
            }
        })
        .collect();
    let exec_start = spec.pre_window as usize;
    let interval = spec.trading_interval as usize + 1;
    let child_slots: Vec<usize> = (1..=spec.volume as usize)
        .map(|j| exec_start + interval * j - 1)
        .collect();
    let eps = spec.epsilon();
    let m0 = mean_mid[exec_start - 1];
    let impact_curve: Vec<f64> = (1..=spec.volume as usize)
        .map(|tau| {
            if tau == 1 {
                0.0
            } else {
                eps * (mean_mid[exec_start + (tau - 1) * interval - 1] - m0)
            }
        })
        .collect();
    let mut paths = total.paths;
    paths.sort_by_key(|(stream, _)| *stream);
    Ok(EnsembleResult {
        params,
        trend,
        spec: *spec,
        n_sims,
        base_seed,
        mean_mid_ticks: mean_mid,
        se_mid_ticks: se_mid,
        mean_rbar_ticks: mean(&total.sum_rbar),
        mean_spread: mean(&total.sum_spread),
        mean_gap_bid: mean(&total.sum_gap_bid),
        mean_gap_ask: mean(&total.sum_gap_ask),
        mean_n_orders: mean(&total.sum_n_orders),
        mean_p_sell_lo: mean(&total.sum_p_sell),
        exec_start,
        child_slots,
        impact_curve_ticks: impact_curve,
        mean_peak_impact_ticks: total.sum_peak / n,
        mean_participation_pct: if spec.volume > 0 {
            total.sum_participation / n
        } else {
            f64::NAN
        },
        per_sim_mid_half_ticks: if keep_paths {
            Some(paths.into_iter().map(|(_, p)| p).collect())
        } else {
            None
        },
    })
}

impl EnsembleResult {
    /// Slot of the last child order.
    pub fn exec_end(&self) -> usize {
        *self.child_slots.last().unwrap_or(&self.exec_start)
    }

    /// Mean mid-price indexed by execution-window time: entry `t` is the
    /// mid just before window event `t`, so entry 0 is the pre-execution
    /// anchor and entry `(trading_interval + 1) * j` the mid right after
    /// child `j`.
    pub fn window_mid_ticks(&self) -> &[f64] {
        &self.mean_mid_ticks[self.exec_start - 1..]
    }

    /// Mean trend return in the same indexing as [`window_mid_ticks`].
    ///
    /// [`window_mid_ticks`]: EnsembleResult::window_mid_ticks
    pub fn window_rbar_ticks(&self) -> &[f64] {
        &self.mean_rbar_ticks[self.exec_start - 1..]
    }

    /// Child sample indices in window time: `(trading_interval + 1) * j`.
    pub fn window_child_indices(&self) -> Vec<usize> {
        let interval = self.spec.trading_interval as usize + 1;
        (1..=self.spec.volume as usize).map(|j| interval * j).collect()
    }

    /// Index of the decay origin (right after the last child) in window
    /// time.
    pub fn window_decay_start(&self) -> usize {
        (self.spec.trading_interval as usize + 1) * self.spec.volume as usize
    }
}
