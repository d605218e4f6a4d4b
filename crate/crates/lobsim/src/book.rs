//! Order book state on a finite integer tick grid.
//!
//! Prices live on a grid of `K` tick levels. Every resting order has unit
//! size; each level holds a FIFO queue of order ids, so priority is
//! price-time. The grid is a moving window on an unbounded absolute price
//! axis: `grid_offset` is the absolute price (in ticks) of grid index 0,
//! and [`OrderBook::recenter`] slides the window so the mid-price stays
//! near the middle of the grid. Orders pushed off a grid edge by
//! recentering are dropped and counted in [`OrderBook::truncated_orders`].
//!
//! Mid-prices are kept in integer half-ticks (`best_bid + best_ask`) so
//! long runs accumulate no floating-point drift.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Identifier of a resting order; assigned monotonically, so it also
/// encodes time priority.
pub type OrderId = u64;

/// Book side. `Bid` doubles as the buy direction and `Ask` as the sell
/// direction when tagging order flow events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

/// Errors surfaced by book operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BookError {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("rejected order: {side:?} limit at grid level {level} would cross the book")]
    RejectedOrder { side: Side, level: usize },
    #[error("liquidity exhausted: operation would leave the {side:?} side empty")]
    LiquidityExhausted { side: Side },
    #[error("unknown or dead order id {0}")]
    UnknownOrder(OrderId),
}

/// Event actually applied to the book, with absolute prices. A log of
/// these is sufficient to replay a run against a fresh book.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppliedEvent {
    Limit { side: Side, price: i64, id: OrderId },
    Market { side: Side, price: i64, id: OrderId },
    Cancel { side: Side, price: i64, id: OrderId },
}

/// Outcome of a single book operation.
#[derive(Debug, Clone, Copy)]
pub struct BookDelta {
    pub event: AppliedEvent,
    /// Absolute mid-price before the operation, in half-ticks.
    pub old_mid_half_ticks: i64,
    /// Absolute mid-price after the operation, in half-ticks.
    pub new_mid_half_ticks: i64,
}

/// Snapshot of the quote-level observables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Observables {
    /// Best bid, absolute ticks.
    pub best_bid: i64,
    /// Best ask, absolute ticks.
    pub best_ask: i64,
    /// `best_bid + best_ask`: twice the mid-price, absolute half-ticks.
    pub mid_half_ticks: i64,
    /// `best_ask - best_bid`, ticks.
    pub spread: u32,
    /// Distance from the best bid to the next occupied bid level, ticks.
    /// When no deeper level is occupied this is the distance past the grid
    /// edge, which is the price move a depletion of the best would cause.
    pub gap_bid: u32,
    /// Distance from the best ask to the next occupied ask level, ticks.
    pub gap_ask: u32,
    /// Queue length at the best bid.
    pub q_best_bid: u32,
    /// Queue length at the best ask.
    pub q_best_ask: u32,
    /// Resting orders on the bid side.
    pub n_bid: u32,
    /// Resting orders on the ask side.
    pub n_ask: u32,
}

/// Result of a recentering pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecenterInfo {
    /// Grid shift in ticks; positive means the window moved up.
    pub shift: i64,
    /// Orders dropped off the grid edges by this shift.
    pub dropped: u32,
    /// Orders injected at revealed edge levels (refill policy only).
    pub injected: u32,
}

/// What happens at the grid edges when the window slides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Orders shifted off an edge are dropped and counted; levels revealed
    /// at the opposite edge enter empty.
    #[default]
    DropAndCount,
    /// The grid window is treated as a view onto an infinite lattice that
    /// holds one unit order per level beyond each edge (the same profile
    /// as the initial fill). Levels revealed by a window slide enter with
    /// one fresh deep order, and the outermost level of each side is
    /// replenished whenever it empties, because it is the visible tip of
    /// that exterior lattice. Orders shifted off an edge are dropped and
    /// counted, as under [`EdgePolicy::DropAndCount`]. A side can never
    /// empty under this policy, so liquidity-exhausted aborts cannot
    /// occur.
    Refill,
}

#[derive(Debug, Clone, Copy)]
struct OrderSlot {
    side: Side,
    /// Absolute price in ticks; unchanged by recentering.
    price: i64,
    /// Position inside the side's id list, for O(1) removal.
    list_pos: u32,
    alive: bool,
}

/// Limit order book on `K` tick levels with FIFO queues per level.
///
/// Operations that would leave one side of the book empty are refused with
/// [`BookError::LiquidityExhausted`]: without both sides the mid-price is
/// undefined and a simulation cannot continue, so the caller is expected to
/// abort the run with diagnostics instead.
#[derive(Debug, Clone)]
pub struct OrderBook {
    k: usize,
    /// `levels[i]` is the FIFO queue at grid index `i` (absolute price
    /// `grid_offset + i`).
    levels: VecDeque<VecDeque<OrderId>>,
    /// Slot per order ever created, indexed by id.
    slots: Vec<OrderSlot>,
    /// Ids of live bid orders, unordered; supports uniform sampling.
    bid_ids: Vec<OrderId>,
    /// Ids of live ask orders, unordered.
    ask_ids: Vec<OrderId>,
    /// Absolute price of grid index 0.
    grid_offset: i64,
    best_bid_rel: usize,
    best_ask_rel: usize,
    truncated: u64,
    injected: u64,
    edge_policy: EdgePolicy,
}

impl OrderBook {
    /// Builds a book of `k` levels pre-filled with one bid at every level
    /// of the lower half of the grid and one ask at every level of the
    /// upper half, so the spread starts at one tick.
    ///
    /// `k` must be even and at least 4.
    pub fn new(k: usize) -> Result<Self, BookError> {
        Self::with_edge_policy(k, EdgePolicy::DropAndCount)
    }

    /// As [`OrderBook::new`], with an explicit grid-edge policy.
    pub fn with_edge_policy(k: usize, edge_policy: EdgePolicy) -> Result<Self, BookError> {
        if k < 4 || k % 2 != 0 {
            return Err(BookError::InvalidConfiguration(format!(
                "grid size must be even and >= 4, got {k}"
            )));
        }
        let mut book = OrderBook {
            k,
            levels: std::iter::repeat_with(VecDeque::new).take(k).collect(),
            slots: Vec::with_capacity(k),
            bid_ids: Vec::with_capacity(k),
            ask_ids: Vec::with_capacity(k),
            grid_offset: 0,
            best_bid_rel: k / 2 - 1,
            best_ask_rel: k / 2,
            truncated: 0,
            injected: 0,
            edge_policy,
        };
        for level in 0..k {
            let side = if level < k / 2 { Side::Bid } else { Side::Ask };
            book.insert(side, level);
        }
        Ok(book)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid_offset(&self) -> i64 {
        self.grid_offset
    }

    pub fn n_bid(&self) -> u32 {
        self.bid_ids.len() as u32
    }

    pub fn n_ask(&self) -> u32 {
        self.ask_ids.len() as u32
    }

    pub fn n_orders(&self) -> u32 {
        self.n_bid() + self.n_ask()
    }

    /// Best bid as a grid index.
    pub fn best_bid_level(&self) -> usize {
        self.best_bid_rel
    }

    /// Best ask as a grid index.
    pub fn best_ask_level(&self) -> usize {
        self.best_ask_rel
    }

    /// Total number of orders dropped off the grid edges by recentering.
    pub fn truncated_orders(&self) -> u64 {
        self.truncated
    }

    /// Total number of orders injected at revealed edge levels.
    pub fn injected_orders(&self) -> u64 {
        self.injected
    }

    pub fn edge_policy(&self) -> EdgePolicy {
        self.edge_policy
    }

    /// Number of orders ever placed (initial fill included).
    pub fn orders_placed(&self) -> u64 {
        self.slots.len() as u64
    }

    /// Id of the `index`-th live order on a side, in arbitrary but stable
    /// order. Used to pick a uniformly random resting order.
    pub fn order_on_side(&self, side: Side, index: usize) -> Option<OrderId> {
        self.side_ids(side).get(index).copied()
    }

    fn side_ids(&self, side: Side) -> &Vec<OrderId> {
        match side {
            Side::Bid => &self.bid_ids,
            Side::Ask => &self.ask_ids,
        }
    }

    pub fn mid_half_ticks(&self) -> i64 {
        self.grid_offset * 2 + (self.best_bid_rel + self.best_ask_rel) as i64
    }

    /// Quote-level observables of the current state.
    pub fn observables(&self) -> Observables {
        let best_bid = self.grid_offset + self.best_bid_rel as i64;
        let best_ask = self.grid_offset + self.best_ask_rel as i64;
        let gap_bid = self
            .next_occupied_below(self.best_bid_rel)
            .map(|l| self.best_bid_rel - l)
            .unwrap_or(self.best_bid_rel + 1) as u32;
        let gap_ask = self
            .next_occupied_above(self.best_ask_rel)
            .map(|l| l - self.best_ask_rel)
            .unwrap_or(self.k - self.best_ask_rel) as u32;
        Observables {
            best_bid,
            best_ask,
            mid_half_ticks: best_bid + best_ask,
            spread: (best_ask - best_bid) as u32,
            gap_bid,
            gap_ask,
            q_best_bid: self.levels[self.best_bid_rel].len() as u32,
            q_best_ask: self.levels[self.best_ask_rel].len() as u32,
            n_bid: self.n_bid(),
            n_ask: self.n_ask(),
        }
    }

    fn next_occupied_below(&self, from: usize) -> Option<usize> {
        (0..from).rev().find(|&l| !self.levels[l].is_empty())
    }

    fn next_occupied_above(&self, from: usize) -> Option<usize> {
        (from + 1..self.k).find(|&l| !self.levels[l].is_empty())
    }

    fn insert(&mut self, side: Side, level: usize) -> OrderId {
        let id = self.slots.len() as OrderId;
        let ids = match side {
            Side::Bid => &mut self.bid_ids,
            Side::Ask => &mut self.ask_ids,
        };
        self.slots.push(OrderSlot {
            side,
            price: self.grid_offset + level as i64,
            list_pos: ids.len() as u32,
            alive: true,
        });
        ids.push(id);
        self.levels[level].push_back(id);
        id
    }

    /// Removes a live order from its queue and side list; keeps the best
    /// quotes consistent and the refill boundary condition intact. The
    /// caller guarantees the side stays non-empty.
    fn remove(&mut self, id: OrderId) {
        let slot = self.slots[id as usize];
        debug_assert!(slot.alive);
        let level = (slot.price - self.grid_offset) as usize;
        let queue = &mut self.levels[level];
        let pos = queue
            .iter()
            .position(|&q| q == id)
            .expect("order missing from its level queue");
        queue.remove(pos);
        self.slots[id as usize].alive = false;
        let ids = match slot.side {
            Side::Bid => &mut self.bid_ids,
            Side::Ask => &mut self.ask_ids,
        };
        let last = ids.pop().expect("side list empty");
        if last != id {
            ids[slot.list_pos as usize] = last;
            self.slots[last as usize].list_pos = slot.list_pos;
        }
        if self.edge_policy == EdgePolicy::Refill && self.levels[level].is_empty() {
            // The outermost level of each side is the tip of the exterior
            // lattice and replenishes as soon as it is consumed.
            let edge = match slot.side {
                Side::Bid => 0,
                Side::Ask => self.k - 1,
            };
            if level == edge {
                self.insert(slot.side, edge);
                self.injected += 1;
            }
        }
        if self.levels[level].is_empty() {
            match slot.side {
                Side::Bid if level == self.best_bid_rel => {
                    self.best_bid_rel = self
                        .next_occupied_below(level)
                        .expect("bid side unexpectedly empty");
                }
                Side::Ask if level == self.best_ask_rel => {
                    self.best_ask_rel = self
                        .next_occupied_above(level)
                        .expect("ask side unexpectedly empty");
                }
                _ => {}
            }
        }
    }

    /// Places a unit limit order at grid index `level`.
    ///
    /// A buy order must rest strictly below the best ask and a sell order
    /// strictly above the best bid; anything else would cross and is
    /// rejected (the flow sampler never produces such levels).
    pub fn place_limit_order(&mut self, side: Side, level: usize) -> Result<BookDelta, BookError> {
        let admissible = match side {
            Side::Bid => level < self.best_ask_rel,
            Side::Ask => level > self.best_bid_rel && level < self.k,
        };
        if !admissible {
            return Err(BookError::RejectedOrder { side, level });
        }
        let old_mid = self.mid_half_ticks();
        let id = self.insert(side, level);
        match side {
            Side::Bid => self.best_bid_rel = self.best_bid_rel.max(level),
            Side::Ask => self.best_ask_rel = self.best_ask_rel.min(level),
        }
        Ok(BookDelta {
            event: AppliedEvent::Limit {
                side,
                price: self.grid_offset + level as i64,
                id,
            },
            old_mid_half_ticks: old_mid,
            new_mid_half_ticks: self.mid_half_ticks(),
        })
    }

    /// Executes a unit market order. `taker` is the direction of the
    /// market order: a buy (`Side::Bid`) lifts the head of the best ask
    /// queue, a sell hits the best bid. If the opposite queue empties, the
    /// best quote moves to the next occupied level and the mid-price jumps
    /// by half the gap.
    pub fn execute_market_order(&mut self, taker: Side) -> Result<BookDelta, BookError> {
        let book_side = taker.opposite();
        if self.edge_policy != EdgePolicy::Refill && self.side_ids(book_side).len() <= 1 {
            return Err(BookError::LiquidityExhausted { side: book_side });
        }
        let level = match book_side {
            Side::Bid => self.best_bid_rel,
            Side::Ask => self.best_ask_rel,
        };
        let old_mid = self.mid_half_ticks();
        let id = *self.levels[level].front().expect("best queue empty");
        let price = self.slots[id as usize].price;
        self.remove(id);
        Ok(BookDelta {
            event: AppliedEvent::Market {
                side: taker,
                price,
                id,
            },
            old_mid_half_ticks: old_mid,
            new_mid_half_ticks: self.mid_half_ticks(),
        })
    }

    /// Cancels a resting order by id.
    pub fn cancel_order(&mut self, id: OrderId) -> Result<BookDelta, BookError> {
        let slot = match self.slots.get(id as usize) {
            Some(s) if s.alive => *s,
            _ => return Err(BookError::UnknownOrder(id)),
        };
        if self.edge_policy != EdgePolicy::Refill && self.side_ids(slot.side).len() <= 1 {
            return Err(BookError::LiquidityExhausted { side: slot.side });
        }
        let old_mid = self.mid_half_ticks();
        self.remove(id);
        Ok(BookDelta {
            event: AppliedEvent::Cancel {
                side: slot.side,
                price: slot.price,
                id,
            },
            old_mid_half_ticks: old_mid,
            new_mid_half_ticks: self.mid_half_ticks(),
        })
    }

    /// Slides the grid window so the mid-price sits at the centre of the
    /// grid. Absolute prices of resting orders are unchanged; orders that
    /// fall off a grid edge are dropped and counted.
    ///
    /// The centred position is mid = `K - 1` relative half-ticks (between
    /// the two central levels); when the spread parity makes that
    /// unreachable the mid lands one half-tick above, at grid index `K/2`.
    /// Both positions are fixed points, so recentering is idempotent.
    pub fn recenter(&mut self) -> RecenterInfo {
        let rel_mid = (self.best_bid_rel + self.best_ask_rel) as i64;
        let shift = (rel_mid - (self.k as i64 - 1)).div_euclid(2);
        if shift == 0 {
            return RecenterInfo {
                shift,
                dropped: 0,
                injected: 0,
            };
        }
        let mut dropped = 0u32;
        for _ in 0..shift.unsigned_abs() {
            // Shift up drops the lowest levels (deepest bids); shift down
            // drops the highest (deepest asks).
            let mut edge = if shift > 0 {
                self.levels.pop_front().expect("grid empty")
            } else {
                self.levels.pop_back().expect("grid empty")
            };
            for id in edge.drain(..) {
                dropped += 1;
                let slot = self.slots[id as usize];
                self.slots[id as usize].alive = false;
                let ids = match slot.side {
                    Side::Bid => &mut self.bid_ids,
                    Side::Ask => &mut self.ask_ids,
                };
                let last = ids.pop().expect("side list empty");
                if last != id {
                    ids[slot.list_pos as usize] = last;
                    self.slots[last as usize].list_pos = slot.list_pos;
                }
            }
            if shift > 0 {
                self.levels.push_back(edge);
            } else {
                self.levels.push_front(edge);
            }
        }
        self.grid_offset += shift;
        // The spread never exceeds K-1 ticks, so a shift can drop deep
        // orders but never the best quotes themselves.
        self.best_bid_rel = (self.best_bid_rel as i64 - shift) as usize;
        self.best_ask_rel = (self.best_ask_rel as i64 - shift) as usize;
        self.truncated += u64::from(dropped);
        let mut injected = 0u32;
        if self.edge_policy == EdgePolicy::Refill {
            // Revealed levels sit beyond the deepest resting orders, so
            // the best quotes are unaffected.
            let reveal = shift.unsigned_abs() as usize;
            if shift > 0 {
                for level in self.k - reveal..self.k {
                    self.insert(Side::Ask, level);
                }
            } else {
                for level in 0..reveal {
                    self.insert(Side::Bid, level);
                }
            }
            injected = reveal as u32;
            // The slide may have moved an empty interior level onto the
            // trailing edge; the edge is the exterior-lattice tip and must
            // stay occupied.
            if self.levels[0].is_empty() && self.best_ask_rel > 0 {
                self.insert(Side::Bid, 0);
                injected += 1;
            }
            if self.levels[self.k - 1].is_empty() && self.best_bid_rel < self.k - 1 {
                self.insert(Side::Ask, self.k - 1);
                injected += 1;
            }
            self.injected += u64::from(injected);
        }
        RecenterInfo {
            shift,
            dropped,
            injected,
        }
    }

    /// Canonical content snapshot: (absolute price, side, id) for every
    /// live order in book order, plus grid placement. Two books with equal
    /// digests are observationally identical.
    pub fn digest(&self) -> BookDigest {
        let mut orders = Vec::with_capacity(self.n_orders() as usize);
        for (level, queue) in self.levels.iter().enumerate() {
            for &id in queue {
                let slot = self.slots[id as usize];
                debug_assert_eq!(slot.price, self.grid_offset + level as i64);
                orders.push((slot.price, slot.side, id));
            }
        }
        BookDigest {
            orders,
            grid_offset: self.grid_offset,
            best_bid: self.grid_offset + self.best_bid_rel as i64,
            best_ask: self.grid_offset + self.best_ask_rel as i64,
            truncated: self.truncated,
        }
    }

    /// Checks the structural invariants; used by tests and debug builds.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut n_bid = 0usize;
        let mut n_ask = 0usize;
        let mut highest_bid = None;
        let mut lowest_ask = None;
        for (level, queue) in self.levels.iter().enumerate() {
            for &id in queue {
                let slot = self.slots[id as usize];
                if !slot.alive {
                    return Err(format!("dead order {id} still queued"));
                }
                if slot.price != self.grid_offset + level as i64 {
                    return Err(format!("order {id} price mismatch"));
                }
                match slot.side {
                    Side::Bid => {
                        n_bid += 1;
                        highest_bid = Some(level);
                    }
                    Side::Ask => {
                        n_ask += 1;
                        if lowest_ask.is_none() {
                            lowest_ask = Some(level);
                        }
                    }
                }
            }
        }
        if n_bid != self.bid_ids.len() || n_ask != self.ask_ids.len() {
            return Err("side counts disagree with queued orders".into());
        }
        match (highest_bid, lowest_ask) {
            (Some(b), Some(a)) if b >= a => {
                return Err(format!("crossed book: bid level {b} >= ask level {a}"))
            }
            _ => {}
        }
        if highest_bid != Some(self.best_bid_rel) {
            return Err("cached best bid stale".into());
        }
        if lowest_ask != Some(self.best_ask_rel) {
            return Err("cached best ask stale".into());
        }
        Ok(())
    }
}

/// See [`OrderBook::digest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BookDigest {
    pub orders: Vec<(i64, Side, OrderId)>,
    pub grid_offset: i64,
    pub best_bid: i64,
    pub best_ask: i64,
    pub truncated: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_fill_splits_grid() {
        let book = OrderBook::new(10).unwrap();
        let obs = book.observables();
        assert_eq!(obs.n_bid, 5);
        assert_eq!(obs.n_ask, 5);
        assert_eq!(obs.best_bid, 4);
        assert_eq!(obs.best_ask, 5);
        assert_eq!(obs.spread, 1);
        assert_eq!(obs.gap_bid, 1);
        assert_eq!(obs.gap_ask, 1);
        book.check_invariants().unwrap();
    }

    #[test]
    fn small_even_grid() {
        let book = OrderBook::new(4).unwrap();
        let obs = book.observables();
        assert_eq!(obs.n_bid, 2);
        assert_eq!(obs.n_ask, 2);
        assert_eq!(obs.best_bid, 1);
        assert_eq!(obs.best_ask, 2);
    }

    #[test]
    fn rejects_odd_or_tiny_grid() {
        assert!(matches!(
            OrderBook::new(5),
            Err(BookError::InvalidConfiguration(_))
        ));
        assert!(matches!(
            OrderBook::new(2),
            Err(BookError::InvalidConfiguration(_))
        ));
    }

    /// Book with known quotes for the limit-order arithmetic checks:
    /// best bid 4, best ask 7 on a K=12 grid.
    fn book_with_spread_3() -> OrderBook {
        let mut book = OrderBook::new(12).unwrap();
        // Initial fill has bids 0..=5, asks 6..=11. Cancel bids at 5 from
        // the initial layout to widen the spread to ask 7.
        let bid5 = book.levels[5].front().copied().unwrap();
        book.cancel_order(bid5).unwrap();
        let bid4 = book.observables();
        assert_eq!(bid4.best_bid, 4);
        let ask6 = book.levels[6].front().copied().unwrap();
        book.cancel_order(ask6).unwrap();
        let obs = book.observables();
        assert_eq!((obs.best_bid, obs.best_ask), (4, 7));
        book
    }

    #[test]
    fn limit_order_in_spread_moves_mid() {
        let mut book = book_with_spread_3();
        let delta = book.place_limit_order(Side::Ask, 5).unwrap();
        // New mid (4+5)/2 vs old (4+7)/2: one tick down.
        assert_eq!(delta.old_mid_half_ticks - delta.new_mid_half_ticks, 2);
        assert_eq!(book.observables().spread, 1);

        let mut book = book_with_spread_3();
        let delta = book.place_limit_order(Side::Bid, 6).unwrap();
        assert_eq!(delta.new_mid_half_ticks - delta.old_mid_half_ticks, 2);
    }

    #[test]
    fn crossing_limit_order_rejected() {
        let mut book = book_with_spread_3();
        assert!(matches!(
            book.place_limit_order(Side::Ask, 3),
            Err(BookError::RejectedOrder { .. })
        ));
        assert!(matches!(
            book.place_limit_order(Side::Ask, 4),
            Err(BookError::RejectedOrder { .. })
        ));
        assert!(matches!(
            book.place_limit_order(Side::Bid, 7),
            Err(BookError::RejectedOrder { .. })
        ));
    }

    #[test]
    fn market_order_moves_mid_by_half_gap() {
        // Asks at 12 and 18 only on a K=20 grid: gap 6, so a buy market
        // order lifts the mid by 3 ticks.
        let mut book = OrderBook::new(20).unwrap();
        for level in [10, 11, 13, 14, 15, 16, 17, 19] {
            let id = book.levels[level].front().copied().unwrap();
            book.cancel_order(id).unwrap();
        }
        let before = book.observables();
        assert_eq!(before.best_ask, 12);
        assert_eq!(before.q_best_ask, 1);
        assert_eq!(before.gap_ask, 6);
        let delta = book.execute_market_order(Side::Bid).unwrap();
        assert_eq!(delta.new_mid_half_ticks - delta.old_mid_half_ticks, 6); // 3 ticks

        // Two-deep best queue: the first execution leaves the mid alone.
        book.place_limit_order(Side::Ask, 12).unwrap();
        book.place_limit_order(Side::Ask, 12).unwrap();
        let before = book.observables();
        assert_eq!(before.q_best_ask, 2);
        let delta = book.execute_market_order(Side::Bid).unwrap();
        assert_eq!(delta.new_mid_half_ticks, delta.old_mid_half_ticks);
        assert_eq!(book.observables().q_best_ask, 1);
    }

    #[test]
    fn market_order_respects_fifo() {
        let mut book = book_with_spread_3();
        let first = book.place_limit_order(Side::Ask, 7).unwrap();
        let second = book.place_limit_order(Side::Ask, 7).unwrap();
        let hit = book.execute_market_order(Side::Bid).unwrap();
        let AppliedEvent::Limit { id: queued_head, .. } = first.event else {
            unreachable!()
        };
        let AppliedEvent::Market { id: executed, .. } = hit.event else {
            unreachable!()
        };
        // The pre-existing resting order at 7 has priority over both new
        // ones; after it, FIFO picks `first` before `second`.
        assert_ne!(executed, queued_head);
        let hit2 = book.execute_market_order(Side::Bid).unwrap();
        let AppliedEvent::Market { id: executed2, .. } = hit2.event else {
            unreachable!()
        };
        assert_eq!(executed2, queued_head);
        drop(second);
    }

    #[test]
    fn exhausting_a_side_is_refused() {
        let mut book = OrderBook::new(4).unwrap();
        // Ask side has orders at 2 and 3; consume one, then the guard trips.
        book.execute_market_order(Side::Bid).unwrap();
        assert!(matches!(
            book.execute_market_order(Side::Bid),
            Err(BookError::LiquidityExhausted { side: Side::Ask })
        ));
        // Same guard on the cancellation path.
        let last_ask = book.levels[book.best_ask_level()].front().copied().unwrap();
        assert!(matches!(
            book.cancel_order(last_ask),
            Err(BookError::LiquidityExhausted { side: Side::Ask })
        ));
    }

    #[test]
    fn cancel_paths() {
        let mut book = book_with_spread_3();
        // Cancel of a non-best order leaves the mid alone.
        let deep_bid = book.levels[0].front().copied().unwrap();
        let delta = book.cancel_order(deep_bid).unwrap();
        assert_eq!(delta.new_mid_half_ticks, delta.old_mid_half_ticks);

        // Cancel of the last order at the best bid with gap 4 drops the
        // mid by 2 ticks.
        let mut book = OrderBook::new(20).unwrap();
        for level in [6, 7, 8] {
            let id = book.levels[level].front().copied().unwrap();
            book.cancel_order(id).unwrap();
        }
        let obs = book.observables();
        assert_eq!(obs.best_bid, 9);
        assert_eq!(obs.gap_bid, 4);
        let best = book.levels[9].front().copied().unwrap();
        let delta = book.cancel_order(best).unwrap();
        assert_eq!(delta.old_mid_half_ticks - delta.new_mid_half_ticks, 4);

        // Cancel from a 2-deep best queue: mid unchanged, queue shortens.
        let mut book = book_with_spread_3();
        let extra = book.place_limit_order(Side::Bid, 4).unwrap();
        let AppliedEvent::Limit { id, .. } = extra.event else {
            unreachable!()
        };
        let delta = book.cancel_order(id).unwrap();
        assert_eq!(delta.new_mid_half_ticks, delta.old_mid_half_ticks);
        assert_eq!(book.observables().q_best_bid, 1);
    }

    #[test]
    fn unknown_cancel_is_an_error() {
        let mut book = OrderBook::new(10).unwrap();
        assert!(matches!(
            book.cancel_order(999),
            Err(BookError::UnknownOrder(999))
        ));
        let id = book.levels[0].front().copied().unwrap();
        book.cancel_order(id).unwrap();
        assert!(matches!(
            book.cancel_order(id),
            Err(BookError::UnknownOrder(_))
        ));
    }

    #[test]
    fn recenter_shifts_grid_and_preserves_absolute_prices() {
        // Push the mid to index 7 of a K=10 grid: bids up to 6, ask at 8.
        let mut book = OrderBook::new(10).unwrap();
        book.place_limit_order(Side::Bid, 4).unwrap(); // keeps bid depth
        for level in [5, 6] {
            let id = book.levels[level].front().copied().unwrap();
            book.cancel_order(id).unwrap();
            book.place_limit_order(Side::Bid, level).unwrap();
        }
        for level in [7] {
            let id = book.levels[level].front().copied().unwrap();
            book.cancel_order(id).unwrap();
        }
        let obs = book.observables();
        assert_eq!((obs.best_bid, obs.best_ask), (6, 8));
        let before = book.digest();
        let info = book.recenter();
        assert_eq!(info.shift, 2);
        assert_eq!(book.grid_offset(), 2);
        let after = book.observables();
        assert_eq!((after.best_bid, after.best_ask), (6, 8));
        assert_eq!(after.mid_half_ticks, before.best_bid + before.best_ask);
        assert_eq!(book.best_bid_level(), 4);
        book.check_invariants().unwrap();
    }

    #[test]
    fn recenter_is_identity_when_centred() {
        let mut book = OrderBook::new(10).unwrap();
        let before = book.digest();
        let info = book.recenter();
        assert_eq!(info.shift, 0);
        assert_eq!(book.digest(), before);
    }

    #[test]
    fn recenter_drops_edge_orders_and_counts_them() {
        // Deep bids at levels 0..3 of a K=10 grid; then push the mid up by
        // 4 ticks so the shift pushes those bids off the low edge.
        let mut book = OrderBook::new(10).unwrap();
        for level in [5, 6, 7] {
            let id = book.levels[level].front().copied().unwrap();
            book.cancel_order(id).unwrap();
            book.place_limit_order(Side::Bid, level).unwrap();
        }
        let id = book.levels[8].front().copied().unwrap();
        book.cancel_order(id).unwrap();
        // Best bid 7, best ask 9, rel mid 16, shift floor((16-9)/2) = 3.
        let n_bid_before = book.n_bid();
        let info = book.recenter();
        assert_eq!(info.shift, 3);
        assert_eq!(info.dropped, 3); // bids at levels 0, 1, 2
        assert_eq!(book.n_bid(), n_bid_before - 3);
        assert_eq!(book.truncated_orders(), 3);
        book.check_invariants().unwrap();
    }

    #[test]
    fn refill_keeps_edges_populated_and_sides_alive() {
        let mut book = OrderBook::with_edge_policy(8, EdgePolicy::Refill).unwrap();
        // Eat the whole ask side; the edge tip keeps replenishing.
        for _ in 0..50 {
            book.execute_market_order(Side::Bid).unwrap();
            book.recenter();
            assert!(book.n_ask() >= 1);
            assert!(!book.levels[book.k - 1].is_empty() || book.best_bid_rel == book.k - 1);
            book.check_invariants().unwrap();
        }
        assert!(book.injected_orders() > 0);
        // Cancelling every bid keeps the bottom tip alive too.
        let mut book = OrderBook::with_edge_policy(8, EdgePolicy::Refill).unwrap();
        for _ in 0..20 {
            let id = book
                .order_on_side(Side::Bid, 0)
                .expect("bid side must stay populated");
            book.cancel_order(id).unwrap();
            assert!(book.n_bid() >= 1);
            book.check_invariants().unwrap();
        }
    }

    #[test]
    fn refill_injects_on_window_slides() {
        let mut book = OrderBook::with_edge_policy(10, EdgePolicy::Refill).unwrap();
        // Push the mid up so the window slides and the revealed top levels
        // come in pre-filled with deep asks.
        for level in [5, 6] {
            let id = book.levels[level].front().copied().unwrap();
            book.cancel_order(id).unwrap();
            book.place_limit_order(Side::Bid, level).unwrap();
        }
        let id = book.levels[7].front().copied().unwrap();
        book.cancel_order(id).unwrap();
        let info = book.recenter();
        assert!(info.shift > 0);
        assert!(info.injected >= info.shift as u32);
        for level in book.k - info.shift as usize..book.k {
            assert!(!book.levels[level].is_empty(), "revealed level {level} empty");
        }
        book.check_invariants().unwrap();
    }

    #[test]
    fn digest_detects_differences() {
        let a = OrderBook::new(10).unwrap();
        let mut b = OrderBook::new(10).unwrap();
        assert_eq!(a.digest(), b.digest());
        b.place_limit_order(Side::Bid, 2).unwrap();
        assert_ne!(a.digest(), b.digest());
    }
}
