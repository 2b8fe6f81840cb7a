//! Position-prediction metrics and the aggregates built on them.
//!
//! A block's transactions are ranked by the fee metric a profit-maximizing
//! miner would sort by (fee rate for btc, miner tip per gas for eth). Each
//! transaction's observed position is compared with its predicted slot; a
//! fee-tied group of `k` transactions shares the slot range `[i, i+k-1]`
//! and a position inside that range counts as correctly placed.
//!
//! With `N` ranked transactions, observed position `p` and predicted range
//! `[lo, hi]`:
//!
//! ```text
//! d    = lo - p   if p < lo
//!      = hi - p   if p > hi
//!      = 0        otherwise
//! SPPE = 100 * d / N        (positive: mined higher than its fee justifies)
//! PPE  = |SPPE|
//! ```
//!
//! Every aggregate here is an additive partial with a `merge`, so per-block
//! work can be spread over any number of workers and combined in any order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate};
use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{Signed, Zero};

use crate::chain::{BtcBlock, BtcTx, ChainBlock, ChainError, EthBlock, Hash32, MempoolSnapshot};
use crate::ingest::{AccelLabelSet, PoolRegistry};
use crate::stats::{summarize, Summary};
use crate::units::{parse_decimal, percent};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("block {height} has no rankable transactions")]
    EmptyBlock { height: u64 },
    #[error("no mempool snapshot precedes block {height}")]
    NoSnapshotCoverage { height: u64 },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// An SPPE cut-off in percent, in `(0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Threshold(Rational64);

impl Threshold {
    /// Flags transactions mined near the very top despite bottom-ranked fees.
    pub const STRICT: Threshold = Threshold(Rational64::new_raw(99, 1));
    /// Looser cut-off for likely accelerations.
    pub const LIKELY: Threshold = Threshold(Rational64::new_raw(50, 1));
    /// Candidate cut-off when cross-checking against external labels.
    pub const CANDIDATE: Threshold = Threshold(Rational64::new_raw(1, 1));

    pub fn new(value: Rational64) -> Result<Self, String> {
        if value <= Rational64::zero() || value > Rational64::from_integer(100) {
            return Err(format!("threshold {value} is outside (0, 100]"));
        }
        Ok(Threshold(value))
    }

    pub fn value(&self) -> Rational64 {
        self.0
    }
}

impl FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let r = parse_decimal(s).map_err(|e| e.to_string())?;
        let to_i64 = |b: &BigInt| i64::try_from(b).map_err(|_| format!("threshold {s:?} has too many digits"));
        Threshold::new(Rational64::new(to_i64(r.numer())?, to_i64(r.denom())?))
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// CPFP exclusion

/// Split of a btc block's non-coinbase transactions.
#[derive(Debug, Clone)]
pub struct CpfpPartition<'a> {
    /// Transactions that spend, or are spent by, another transaction of the
    /// same block.
    pub excluded: BTreeSet<Hash32>,
    /// Everything else, in block order.
    pub retained: Vec<&'a BtcTx>,
}

pub fn cpfp_partition(block: &BtcBlock) -> CpfpPartition<'_> {
    let txs = block.non_coinbase();
    let ids: HashSet<Hash32> = txs.iter().map(|t| t.txid).collect();
    let mut excluded = BTreeSet::new();
    for tx in txs {
        for input in &tx.inputs {
            if input.txid != tx.txid && ids.contains(&input.txid) {
                excluded.insert(tx.txid);
                excluded.insert(input.txid);
            }
        }
    }
    let retained = txs.iter().filter(|t| !excluded.contains(&t.txid)).collect();
    CpfpPartition { excluded, retained }
}

// ---------------------------------------------------------------------------
// Predicted positions and position errors

/// 1-indexed slot range a transaction should occupy given its fee.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictedRange {
    pub lo: u32,
    pub hi: u32,
}

impl PredictedRange {
    pub fn contains(&self, position: u32) -> bool {
        self.lo <= position && position <= self.hi
    }
}

/// Predicted slot ranges for `keys` given in block order, where a larger key
/// means a better-paying transaction.
pub fn predict_positions<K: Ord>(keys: &[K]) -> Vec<PredictedRange> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].cmp(&keys[a]));
    let mut out = vec![PredictedRange { lo: 0, hi: 0 }; keys.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && keys[order[end]] == keys[order[start]] {
            end += 1;
        }
        let range = PredictedRange { lo: start as u32 + 1, hi: end as u32 };
        for &idx in &order[start..end] {
            out[idx] = range;
        }
        start = end;
    }
    out
}

/// Signed position prediction error in percent.
pub fn signed_error(observed: u32, predicted: PredictedRange, ranked: u32) -> Rational64 {
    let d = if observed < predicted.lo {
        i64::from(predicted.lo) - i64::from(observed)
    } else if observed > predicted.hi {
        i64::from(predicted.hi) - i64::from(observed)
    } else {
        0
    };
    Rational64::new(100 * d, i64::from(ranked.max(1)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionReport {
    pub txid: Hash32,
    pub height: u64,
    pub pool: String,
    /// Observed position among the ranked transactions.
    pub observed: u32,
    pub predicted: PredictedRange,
    pub sppe: Rational64,
}

impl PositionReport {
    pub fn ppe(&self) -> Rational64 {
        self.sppe.abs()
    }
}

/// Per-transaction position reports for a single block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockReport {
    pub height: u64,
    pub timestamp: i64,
    pub pool: String,
    /// Transactions that took part in the ranking.
    pub ranked: u32,
    pub cpfp_excluded: usize,
    pub reports: Vec<PositionReport>,
}

impl BlockReport {
    /// Mean PPE over the block's ranked transactions.
    pub fn block_ppe(&self) -> Rational64 {
        if self.reports.is_empty() {
            return Rational64::zero();
        }
        let sum = self.reports.iter().fold(Rational64::zero(), |acc, r| acc + r.ppe());
        sum / Rational64::from_integer(self.reports.len() as i64)
    }

    pub fn flagged(&self, threshold: Threshold) -> impl Iterator<Item = &PositionReport> {
        self.reports.iter().filter(move |r| r.sppe >= threshold.value())
    }
}

/// Reports for transactions in block order with their ranking keys.
pub fn position_report<K: Ord>(
    height: u64,
    timestamp: i64,
    pool: &str,
    ranked: &[(Hash32, K)],
    cpfp_excluded: usize,
) -> Result<BlockReport, MetricsError> {
    if ranked.is_empty() {
        return Err(MetricsError::EmptyBlock { height });
    }
    let keys: Vec<&K> = ranked.iter().map(|(_, k)| k).collect();
    let predicted = predict_positions(&keys);
    let n = ranked.len() as u32;
    let reports = ranked
        .iter()
        .zip(predicted)
        .enumerate()
        .map(|(i, ((txid, _), range))| {
            let observed = i as u32 + 1;
            PositionReport {
                txid: *txid,
                height,
                pool: pool.to_string(),
                observed,
                predicted: range,
                sppe: signed_error(observed, range, n),
            }
        })
        .collect();
    Ok(BlockReport {
        height,
        timestamp,
        pool: pool.to_string(),
        ranked: n,
        cpfp_excluded,
        reports,
    })
}

/// Ranks a btc block by fee rate after dropping the coinbase and CPFP
/// clusters.
pub fn analyze_btc_block(block: &BtcBlock, pool: &str) -> Result<BlockReport, MetricsError> {
    let part = cpfp_partition(block);
    let ranked: Vec<_> = part.retained.iter().map(|t| (t.txid, t.fee_rate())).collect();
    position_report(block.height, block.timestamp, pool, &ranked, part.excluded.len())
}

/// Ranks an eth block by the per-gas tip the miner actually keeps.
pub fn analyze_eth_block(block: &EthBlock, pool: &str) -> Result<BlockReport, MetricsError> {
    let ranked = block
        .txs
        .iter()
        .map(|t| Ok((t.hash, t.miner_tip_per_gas(block.base_fee_per_gas)?)))
        .collect::<Result<Vec<_>, ChainError>>()?;
    position_report(block.number, block.timestamp, pool, &ranked, 0)
}

pub fn analyze_block(block: &ChainBlock, pool: &str) -> Result<BlockReport, MetricsError> {
    match block {
        ChainBlock::Btc(b) => analyze_btc_block(b, pool),
        ChainBlock::Eth(b) => analyze_eth_block(b, pool),
    }
}

pub fn flag_accelerated<'a>(
    reports: impl IntoIterator<Item = &'a PositionReport>,
    threshold: Threshold,
) -> BTreeSet<Hash32> {
    reports
        .into_iter()
        .filter(|r| r.sppe >= threshold.value())
        .map(|r| r.txid)
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlagCounts {
    pub blocks: u64,
    pub flagged_blocks: u64,
    pub flagged_txs: u64,
}

impl FlagCounts {
    /// Percent of blocks containing at least one flagged transaction.
    pub fn block_share(&self) -> BigRational {
        if self.blocks == 0 {
            return BigRational::zero();
        }
        percent(u128::from(self.flagged_blocks), u128::from(self.blocks))
    }
}

/// Per-pool count of blocks that include flagged transactions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolFlagSummary {
    pub pools: BTreeMap<String, FlagCounts>,
}

impl PoolFlagSummary {
    pub fn add_block(&mut self, report: &BlockReport, threshold: Threshold) {
        let flagged = report.flagged(threshold).count() as u64;
        let entry = self.pools.entry(report.pool.clone()).or_default();
        entry.blocks += 1;
        entry.flagged_txs += flagged;
        if flagged > 0 {
            entry.flagged_blocks += 1;
        }
    }

    pub fn merge(&mut self, other: PoolFlagSummary) {
        for (pool, c) in other.pools {
            let e = self.pools.entry(pool).or_default();
            e.blocks += c.blocks;
            e.flagged_blocks += c.flagged_blocks;
            e.flagged_txs += c.flagged_txs;
        }
    }
}

// ---------------------------------------------------------------------------
// Private inclusions

/// Earliest snapshot in which each transaction was pending.
#[derive(Debug, Clone, Default)]
pub struct FirstSeen {
    first: HashMap<Hash32, i64>,
    earliest_snapshot: Option<i64>,
}

impl FirstSeen {
    pub fn from_snapshots<'a>(snapshots: impl IntoIterator<Item = &'a MempoolSnapshot>) -> Self {
        let mut seen = FirstSeen::default();
        for s in snapshots {
            seen.add_snapshot(s);
        }
        seen
    }

    pub fn add_snapshot(&mut self, snapshot: &MempoolSnapshot) {
        let ts = snapshot.timestamp;
        self.earliest_snapshot = Some(self.earliest_snapshot.map_or(ts, |e| e.min(ts)));
        for id in &snapshot.pending {
            self.first
                .entry(*id)
                .and_modify(|t| *t = (*t).min(ts))
                .or_insert(ts);
        }
    }

    /// Record an externally known first-seen time (e.g. when an acceleration
    /// was paid for).
    pub fn observe(&mut self, id: Hash32, timestamp: i64) {
        self.first
            .entry(id)
            .and_modify(|t| *t = (*t).min(timestamp))
            .or_insert(timestamp);
    }

    pub fn get(&self, id: &Hash32) -> Option<i64> {
        self.first.get(id).copied()
    }

    pub fn covers(&self, block_timestamp: i64) -> bool {
        self.earliest_snapshot.is_some_and(|e| e < block_timestamp)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Hash32, &i64)> {
        self.first.iter()
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// Transactions of `block` that no snapshot taken before the block had seen.
pub fn private_txs(block: &ChainBlock, seen: &FirstSeen) -> Result<Vec<Hash32>, MetricsError> {
    let ts = block.timestamp();
    if !seen.covers(ts) {
        return Err(MetricsError::NoSnapshotCoverage { height: block.height() });
    }
    Ok(block
        .relayed_tx_ids()
        .into_iter()
        .filter(|id| seen.get(id).is_none_or(|first| first >= ts))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateBlock {
    pub height: u64,
    pub pool: String,
    pub tx_count: usize,
    pub private: Vec<Hash32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrivateCounts {
    pub blocks: u64,
    pub txs: u64,
    pub private_txs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrivateSummary {
    pub pools: BTreeMap<String, PrivateCounts>,
    pub uncovered_blocks: u64,
}

impl PrivateSummary {
    pub fn add(&mut self, block: &PrivateBlock) {
        let e = self.pools.entry(block.pool.clone()).or_default();
        e.blocks += 1;
        e.txs += block.tx_count as u64;
        e.private_txs += block.private.len() as u64;
    }

    pub fn merge(&mut self, other: PrivateSummary) {
        for (pool, c) in other.pools {
            let e = self.pools.entry(pool).or_default();
            e.blocks += c.blocks;
            e.txs += c.txs;
            e.private_txs += c.private_txs;
        }
        self.uncovered_blocks += other.uncovered_blocks;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrivateInclusions {
    pub blocks: Vec<PrivateBlock>,
    pub summary: PrivateSummary,
    /// Heights skipped because no snapshot preceded them.
    pub uncovered: Vec<u64>,
}

pub fn detect_private_inclusions<'a>(
    blocks: impl IntoIterator<Item = &'a ChainBlock>,
    snapshots: &[MempoolSnapshot],
    registry: &PoolRegistry,
) -> PrivateInclusions {
    let seen = FirstSeen::from_snapshots(snapshots);
    let mut out = PrivateInclusions::default();
    for block in blocks {
        match private_txs(block, &seen) {
            Ok(private) => {
                let pb = PrivateBlock {
                    height: block.height(),
                    pool: registry.attribute(block).to_string(),
                    tx_count: block.relayed_tx_ids().len(),
                    private,
                };
                out.summary.add(&pb);
                out.blocks.push(pb);
            }
            Err(_) => {
                out.summary.uncovered_blocks += 1;
                out.uncovered.push(block.height());
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Calendar windows and pool shares

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    Day,
    Week,
    Month,
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(Window::Day),
            "week" => Ok(Window::Week),
            "month" => Ok(Window::Month),
            other => Err(format!("unknown window {other:?} (expected day, week or month)")),
        }
    }
}

/// UTC start date of the window containing `timestamp`. Weeks start on
/// Monday.
pub fn window_start(timestamp: i64, window: Window) -> NaiveDate {
    let date = DateTime::from_timestamp(timestamp, 0)
        .unwrap_or(DateTime::UNIX_EPOCH)
        .date_naive();
    match window {
        Window::Day => date,
        Window::Week => date - Duration::days(i64::from(date.weekday().num_days_from_monday())),
        Window::Month => date.with_day(1).expect("day 1 exists in every month"),
    }
}

/// Per-window, per-pool counts (blocks mined, or labeled transactions
/// included) and the shares derived from them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolShareWindow {
    pub window: Window,
    pub counts: BTreeMap<NaiveDate, BTreeMap<String, u64>>,
}

impl PoolShareWindow {
    pub fn new(window: Window) -> Self {
        PoolShareWindow { window, counts: BTreeMap::new() }
    }

    pub fn add(&mut self, timestamp: i64, pool: &str, count: u64) {
        let start = window_start(timestamp, self.window);
        *self
            .counts
            .entry(start)
            .or_default()
            .entry(pool.to_string())
            .or_default() += count;
    }

    pub fn merge(&mut self, other: PoolShareWindow) {
        for (start, pools) in other.counts {
            let dst = self.counts.entry(start).or_default();
            for (pool, c) in pools {
                *dst.entry(pool).or_default() += c;
            }
        }
    }

    pub fn total(&self, start: NaiveDate) -> u64 {
        self.counts.get(&start).map_or(0, |p| p.values().sum())
    }

    /// Percent share of `pool` in the window starting at `start`.
    pub fn share(&self, start: NaiveDate, pool: &str) -> BigRational {
        self.subset_share(start, &[pool])
    }

    /// Combined percent share of several pools.
    pub fn subset_share<S: AsRef<str>>(&self, start: NaiveDate, pools: &[S]) -> BigRational {
        let Some(window) = self.counts.get(&start) else {
            return BigRational::zero();
        };
        let total: u64 = window.values().sum();
        if total == 0 {
            return BigRational::zero();
        }
        let part: u64 = pools
            .iter()
            .filter_map(|p| window.get(p.as_ref()))
            .sum();
        percent(u128::from(part), u128::from(total))
    }

    /// `(window start, pool, count, percent share)` in date then pool order.
    pub fn rows(&self) -> impl Iterator<Item = (NaiveDate, &str, u64, BigRational)> + '_ {
        self.counts.iter().flat_map(|(start, pools)| {
            let total: u64 = pools.values().sum();
            pools
                .iter()
                .map(move |(pool, c)| (*start, pool.as_str(), *c, percent(u128::from(*c), u128::from(total.max(1)))))
        })
    }
}

pub fn pool_shares<'a>(
    blocks: impl IntoIterator<Item = &'a ChainBlock>,
    registry: &PoolRegistry,
    window: Window,
) -> PoolShareWindow {
    let mut shares = PoolShareWindow::new(window);
    for b in blocks {
        shares.add(b.timestamp(), registry.attribute(b), 1);
    }
    shares
}

// ---------------------------------------------------------------------------
// Delay and position statistics

/// Where and when a tracked transaction was mined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxTiming {
    pub txid: Hash32,
    pub first_seen: i64,
    /// First block mined at or after `first_seen`.
    pub reference_height: u64,
    pub inclusion_height: u64,
    /// 1-indexed position in the including block.
    pub position: u32,
    pub block_tx_count: u32,
}

impl TxTiming {
    /// Blocks waited; inclusion in the reference block itself counts as 1.
    pub fn delay_blocks(&self) -> i64 {
        self.inclusion_height as i64 - self.reference_height as i64 + 1
    }

    /// Position as a percentage of the block's transaction count.
    pub fn percentile_position(&self) -> BigRational {
        percent(u128::from(self.position), u128::from(self.block_tx_count.max(1)))
    }
}

#[derive(Debug, Clone, Copy)]
struct Tracked {
    first_seen: i64,
    reference: Option<u64>,
    inclusion: Option<(u64, u32, u32)>,
}

/// Follows a set of transactions through a height-ordered block stream.
#[derive(Debug, Clone, Default)]
pub struct InclusionTracker {
    awaiting_reference: BTreeMap<i64, Vec<Hash32>>,
    tracked: HashMap<Hash32, Tracked>,
}

impl InclusionTracker {
    pub fn new(first_seen: impl IntoIterator<Item = (Hash32, i64)>) -> Self {
        let mut t = InclusionTracker::default();
        for (id, ts) in first_seen {
            if t.tracked.insert(id, Tracked { first_seen: ts, reference: None, inclusion: None }).is_none() {
                t.awaiting_reference.entry(ts).or_default().push(id);
            }
        }
        t
    }

    /// Feed the next block; `tx_ids` must be the full block in order.
    pub fn observe_block(&mut self, height: u64, timestamp: i64, tx_ids: &[Hash32]) {
        let later = self.awaiting_reference.split_off(&(timestamp + 1));
        let due = std::mem::replace(&mut self.awaiting_reference, later);
        for id in due.into_values().flatten() {
            if let Some(t) = self.tracked.get_mut(&id) {
                t.reference.get_or_insert(height);
            }
        }
        let n = tx_ids.len() as u32;
        for (i, id) in tx_ids.iter().enumerate() {
            if let Some(t) = self.tracked.get_mut(id) {
                if t.inclusion.is_none() {
                    // Mined before any block reached its first-seen time
                    // (block clocks drift): anchor the reference here.
                    t.reference.get_or_insert(height);
                    t.inclusion = Some((height, i as u32 + 1, n));
                }
            }
        }
    }

    /// Timings of included transactions (sorted by txid) and the ids that
    /// were never mined.
    pub fn finish(self) -> (Vec<TxTiming>, Vec<Hash32>) {
        let mut timings = Vec::new();
        let mut unconfirmed = Vec::new();
        for (id, t) in self.tracked {
            match (t.reference, t.inclusion) {
                (Some(reference), Some((height, position, count))) => timings.push(TxTiming {
                    txid: id,
                    first_seen: t.first_seen,
                    reference_height: reference,
                    inclusion_height: height,
                    position,
                    block_tx_count: count,
                }),
                _ => unconfirmed.push(id),
            }
        }
        timings.sort_by_key(|t| t.txid);
        unconfirmed.sort();
        (timings, unconfirmed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupStats {
    pub delay: Option<Summary>,
    pub position: Option<Summary>,
    pub unconfirmed: Vec<Hash32>,
}

impl GroupStats {
    pub fn from_timings<'a>(timings: impl IntoIterator<Item = &'a TxTiming>, unconfirmed: Vec<Hash32>) -> Self {
        let (delays, positions): (Vec<_>, Vec<_>) = timings
            .into_iter()
            .map(|t| (BigRational::from_integer(t.delay_blocks().into()), t.percentile_position()))
            .unzip();
        GroupStats { delay: summarize(&delays), position: summarize(&positions), unconfirmed }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DelayPositionStats {
    pub accelerated: GroupStats,
    pub non_accelerated: GroupStats,
}

impl DelayPositionStats {
    pub fn from_timings(accelerated: &BTreeSet<Hash32>, timings: &[TxTiming], unconfirmed: &[Hash32]) -> Self {
        let is_acc = |id: &Hash32| accelerated.contains(id);
        let split = |want: bool| -> Vec<Hash32> { unconfirmed.iter().filter(|id| is_acc(id) == want).copied().collect() };
        DelayPositionStats {
            accelerated: GroupStats::from_timings(timings.iter().filter(|t| is_acc(&t.txid)), split(true)),
            non_accelerated: GroupStats::from_timings(timings.iter().filter(|t| !is_acc(&t.txid)), split(false)),
        }
    }
}

/// Delay (in blocks) and percentile block position of accelerated versus
/// other tracked transactions.
pub fn delay_position_stats<'a>(
    accelerated: &BTreeSet<Hash32>,
    first_seen: impl IntoIterator<Item = (Hash32, i64)>,
    blocks: impl IntoIterator<Item = &'a ChainBlock>,
) -> DelayPositionStats {
    let mut tracker = InclusionTracker::new(first_seen);
    for b in blocks {
        let ids: Vec<Hash32> = match b {
            ChainBlock::Btc(b) => b.txs.iter().map(|t| t.txid).collect(),
            ChainBlock::Eth(b) => b.txs.iter().map(|t| t.hash).collect(),
        };
        tracker.observe_block(b.height(), b.timestamp(), &ids);
    }
    let (timings, unconfirmed) = tracker.finish();
    DelayPositionStats::from_timings(accelerated, &timings, &unconfirmed)
}

// ---------------------------------------------------------------------------
// Value transferred and label cross-checks

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValueTransferred {
    pub flagged_sat: u128,
    pub total_sat: u128,
}

impl ValueTransferred {
    pub fn add_block(&mut self, block: &BtcBlock, flagged: &BTreeSet<Hash32>) {
        for tx in block.non_coinbase() {
            let v = u128::from(tx.total_output_value);
            self.total_sat += v;
            if flagged.contains(&tx.txid) {
                self.flagged_sat += v;
            }
        }
    }

    pub fn merge(&mut self, other: ValueTransferred) {
        self.flagged_sat += other.flagged_sat;
        self.total_sat += other.total_sat;
    }

    pub fn share(&self) -> BigRational {
        if self.total_sat == 0 {
            return BigRational::zero();
        }
        percent(self.flagged_sat, self.total_sat)
    }
}

pub fn value_transferred<'a>(
    flagged: &BTreeSet<Hash32>,
    blocks: impl IntoIterator<Item = &'a BtcBlock>,
) -> ValueTransferred {
    let mut v = ValueTransferred::default();
    for b in blocks {
        v.add_block(b, flagged);
    }
    v
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelConfusion {
    pub flagged_and_labeled: usize,
    pub flagged_only: usize,
    pub labeled_only: usize,
}

pub fn accel_label_crosscheck(flagged: &BTreeSet<Hash32>, labels: &AccelLabelSet) -> LabelConfusion {
    let both = flagged.iter().filter(|id| labels.contains(id)).count();
    LabelConfusion {
        flagged_and_labeled: both,
        flagged_only: flagged.len() - both,
        labeled_only: labels.len() - both,
    }
}

/// Labeled transactions included per window and pool.
pub fn accel_share_timeseries<'a>(
    labels: &AccelLabelSet,
    blocks: impl IntoIterator<Item = &'a ChainBlock>,
    registry: &PoolRegistry,
    window: Window,
) -> PoolShareWindow {
    let mut series = PoolShareWindow::new(window);
    for b in blocks {
        let n = b.relayed_tx_ids().iter().filter(|id| labels.contains(id)).count() as u64;
        if n > 0 {
            series.add(b.timestamp(), registry.attribute(b), n);
        }
    }
    series
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::OutPoint;
    use proptest::prelude::*;

    fn id(n: u64) -> Hash32 {
        let mut b = [0u8; 32];
        b[..8].copy_from_slice(&n.to_be_bytes());
        Hash32::from_bytes(b)
    }

    fn tx(n: u64, fee: u64, vsize: u64, parents: &[u64]) -> BtcTx {
        BtcTx {
            txid: id(n),
            vsize,
            fee,
            inputs: parents.iter().map(|p| OutPoint { txid: id(*p), vout: 0 }).collect(),
            total_output_value: n.wrapping_mul(1000),
        }
    }

    fn block(txs: Vec<BtcTx>) -> BtcBlock {
        let mut all = vec![tx(u64::MAX, 0, 100, &[])];
        all.extend(txs);
        BtcBlock { height: 1, timestamp: 1_600_000_000, coinbase_tag: "/test/".into(), txs: all }
    }

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn cpfp_examples() {
        let b = block(vec![tx(1, 10, 100, &[]), tx(2, 20, 100, &[])]);
        assert!(cpfp_partition(&b).excluded.is_empty());

        let b = block(vec![tx(1, 10, 100, &[]), tx(2, 20, 100, &[1])]);
        let p = cpfp_partition(&b);
        assert_eq!(p.excluded, [id(1), id(2)].into_iter().collect());
        assert!(p.retained.is_empty());

        let b = block(vec![
            tx(1, 10, 100, &[]),
            tx(4, 5, 100, &[99]),
            tx(2, 20, 100, &[1]),
            tx(3, 30, 100, &[2]),
        ]);
        let p = cpfp_partition(&b);
        assert_eq!(p.excluded, [id(1), id(2), id(3)].into_iter().collect());
        assert_eq!(p.retained.iter().map(|t| t.txid).collect::<Vec<_>>(), vec![id(4)]);
    }

    #[test]
    fn predicted_positions_examples() {
        let rng = |lo, hi| PredictedRange { lo, hi };
        assert_eq!(predict_positions(&[50, 40, 1]), vec![rng(1, 1), rng(2, 2), rng(3, 3)]);
        assert_eq!(predict_positions(&[1, 50, 40]), vec![rng(3, 3), rng(1, 1), rng(2, 2)]);
        assert_eq!(predict_positions(&[5, 7, 5, 1]), vec![rng(2, 3), rng(1, 1), rng(2, 3), rng(4, 4)]);
        assert!(predict_positions::<u32>(&[]).is_empty());
    }

    #[test]
    fn sppe_examples() {
        let b = block(vec![tx(1, 100, 100, &[]), tx(2, 5000, 100, &[]), tx(3, 4000, 100, &[])]);
        let rep = analyze_btc_block(&b, "P").unwrap();
        assert_eq!(rep.ranked, 3);
        assert_eq!(rep.reports[0].predicted, PredictedRange { lo: 3, hi: 3 });
        assert_eq!(rep.reports[0].sppe, r(200, 3));
        assert_eq!(crate::units::format_decimal(&to_big(rep.reports[0].sppe), 2), "66.67");
        assert_eq!(rep.reports[0].ppe(), r(200, 3));
        assert_eq!(rep.reports[1].sppe, r(-100, 3));
        assert_eq!(rep.reports[2].sppe, r(-100, 3));

        // Bottom-fee transaction at the top of a 100-transaction block.
        let mut txs = vec![tx(1000, 1, 1, &[])];
        txs.extend((1..100).map(|i| tx(i, 1000 - i, 1, &[])));
        let rep = analyze_btc_block(&block(txs), "P").unwrap();
        assert_eq!(rep.reports[0].sppe, r(99, 1));
        assert_eq!(flag_accelerated(&rep.reports, Threshold::STRICT), [id(1000)].into_iter().collect());

        // Same, but the bottom fee is shared by two transactions: range (99, 100).
        let mut txs = vec![tx(1000, 1, 1, &[])];
        txs.extend((1..99).map(|i| tx(i, 1000 - i, 1, &[])));
        txs.push(tx(999, 1, 1, &[]));
        let rep = analyze_btc_block(&block(txs), "P").unwrap();
        assert_eq!(rep.reports[0].predicted, PredictedRange { lo: 99, hi: 100 });
        assert_eq!(rep.reports[0].sppe, r(98, 1));
        assert!(rep.reports[99].sppe.is_zero());

        // Fee-sorted: all zero.
        let txs: Vec<_> = (1..50).map(|i| tx(i, 1000 - i, 1, &[])).collect();
        let rep = analyze_btc_block(&block(txs), "P").unwrap();
        assert!(rep.reports.iter().all(|p| p.sppe.is_zero()));
        assert!(flag_accelerated(&rep.reports, Threshold::STRICT).is_empty());
    }

    #[test]
    fn empty_block_is_reported() {
        let b = block(vec![]);
        assert_eq!(analyze_btc_block(&b, "P"), Err(MetricsError::EmptyBlock { height: 1 }));
    }

    fn to_big(x: Rational64) -> BigRational {
        BigRational::new((*x.numer()).into(), (*x.denom()).into())
    }

    #[test]
    fn pool_flag_share_counts_blocks() {
        let mut summary = PoolFlagSummary::default();
        let mut flagged_block = vec![tx(1000, 1, 1, &[])];
        flagged_block.extend((1..100).map(|i| tx(i, 1000 - i, 1, &[])));
        let flagged = analyze_btc_block(&block(flagged_block), "A").unwrap();
        let clean = analyze_btc_block(&block((1..100).map(|i| tx(i, 1000 - i, 1, &[])).collect()), "A").unwrap();
        for i in 0..50 {
            summary.add_block(if i < 10 { &flagged } else { &clean }, Threshold::STRICT);
        }
        let c = summary.pools["A"];
        assert_eq!((c.blocks, c.flagged_blocks, c.flagged_txs), (50, 10, 10));
        assert_eq!(c.block_share(), BigRational::from_integer(20.into()));
    }

    #[test]
    fn thresholds_parse_and_validate() {
        assert_eq!("99".parse::<Threshold>().unwrap(), Threshold::STRICT);
        assert_eq!("99.5".parse::<Threshold>().unwrap().value(), r(199, 2));
        assert!("0".parse::<Threshold>().is_err());
        assert!("100.01".parse::<Threshold>().is_err());
        assert!("abc".parse::<Threshold>().is_err());
    }

    fn eth_block_for_private(ts: i64, ids: &[u64]) -> ChainBlock {
        use crate::chain::{Address, EthTx, TxStatus};
        ChainBlock::Eth(EthBlock {
            number: ts as u64,
            timestamp: ts,
            miner: Address::from_bytes([7; 20]),
            base_fee_per_gas: 1,
            txs: ids
                .iter()
                .map(|n| EthTx {
                    hash: id(*n),
                    from: Address::from_bytes([1; 20]),
                    to: None,
                    gas_used: 21000,
                    max_fee_per_gas: 10,
                    max_priority_fee_per_gas: 1,
                    coinbase_transfer: 0,
                    status: TxStatus::Success,
                })
                .collect(),
        })
    }

    #[test]
    fn private_detection_examples() {
        let snaps = vec![
            MempoolSnapshot { timestamp: 100, pending: vec![id(1), id(2)] },
            MempoolSnapshot { timestamp: 200, pending: vec![id(3), id(4), id(5), id(6), id(7)] },
            MempoolSnapshot { timestamp: 400, pending: vec![id(8)] },
        ];
        let seen = FirstSeen::from_snapshots(&snaps);
        // 3 of 10 were never pending before the block; id(8) shows up only later.
        let b = eth_block_for_private(300, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        assert_eq!(private_txs(&b, &seen).unwrap(), vec![id(8), id(9), id(10)]);

        let early = eth_block_for_private(100, &[1]);
        assert_eq!(private_txs(&early, &seen), Err(MetricsError::NoSnapshotCoverage { height: 100 }));

        let reg = PoolRegistry::new();
        let out = detect_private_inclusions([&b, &early], &snaps, &reg);
        assert_eq!(out.uncovered, vec![100]);
        assert_eq!(out.summary.pools["Unknown"].private_txs, 3);
    }

    #[test]
    fn pool_share_examples() {
        let mut w = PoolShareWindow::new(Window::Day);
        for i in 0..10 {
            w.add(1_606_780_800 + i * 600, if i < 4 { "A" } else { "B" }, 1);
        }
        let day = window_start(1_606_780_800, Window::Day);
        assert_eq!(w.share(day, "A"), BigRational::from_integer(40.into()));
        assert_eq!(w.subset_share(day, &["A", "B"]), BigRational::from_integer(100.into()));
        assert_eq!(w.share(day, "C"), BigRational::zero());
    }

    #[test]
    fn windows_are_utc_aligned() {
        // 2020-12-01T00:30:00Z is a Tuesday.
        let ts = 1_606_782_600;
        assert_eq!(window_start(ts, Window::Day), NaiveDate::from_ymd_opt(2020, 12, 1).unwrap());
        assert_eq!(window_start(ts, Window::Week), NaiveDate::from_ymd_opt(2020, 11, 30).unwrap());
        assert_eq!(window_start(ts, Window::Month), NaiveDate::from_ymd_opt(2020, 12, 1).unwrap());
        assert_eq!(window_start(ts - 3600, Window::Month), NaiveDate::from_ymd_opt(2020, 11, 1).unwrap());
    }

    #[test]
    fn delay_counts_the_next_block_as_one() {
        let mut tracker = InclusionTracker::new([(id(1), 1000), (id(2), 1000), (id(3), 1000)]);
        tracker.observe_block(10, 990, &[id(99)]);
        tracker.observe_block(11, 1200, &[id(98), id(1)]);
        tracker.observe_block(12, 1800, &[id(97), id(96), id(2)]);
        let (timings, unconfirmed) = tracker.finish();
        assert_eq!(timings[0].delay_blocks(), 1);
        assert_eq!(timings[0].percentile_position(), BigRational::from_integer(100.into()));
        assert_eq!(timings[1].delay_blocks(), 2);
        assert_eq!(unconfirmed, vec![id(3)]);

        let t = TxTiming {
            txid: id(1),
            first_seen: 0,
            reference_height: 1,
            inclusion_height: 1,
            position: 2,
            block_tx_count: 1000,
        };
        assert_eq!(crate::units::format_decimal(&t.percentile_position(), 2), "0.20");
    }

    #[test]
    fn value_transferred_examples() {
        let empty = value_transferred(&BTreeSet::new(), std::iter::empty());
        assert_eq!(empty.share(), BigRational::zero());

        let mut b = block(vec![tx(1, 1, 1, &[]), tx(2, 1, 1, &[]), tx(3, 1, 1, &[]), tx(4, 1, 1, &[])]);
        for (t, v) in b.txs[1..].iter_mut().zip([3, 2, 4, 1]) {
            t.total_output_value = v;
        }
        let flagged = [id(1), id(2)].into_iter().collect();
        let v = value_transferred(&flagged, [&b]);
        assert_eq!((v.flagged_sat, v.total_sat), (5, 10));
        assert_eq!(v.share(), BigRational::from_integer(50.into()));
    }

    #[test]
    fn crosscheck_examples() {
        let a: BTreeSet<_> = [id(1), id(2)].into_iter().collect();
        let b: AccelLabelSet = [id(3)].into_iter().collect();
        assert_eq!(
            accel_label_crosscheck(&a, &b),
            LabelConfusion { flagged_and_labeled: 0, flagged_only: 2, labeled_only: 1 }
        );
        let same: AccelLabelSet = a.iter().copied().collect();
        assert_eq!(
            accel_label_crosscheck(&a, &same),
            LabelConfusion { flagged_and_labeled: 2, flagged_only: 0, labeled_only: 0 }
        );
    }

    /// Independent oracle: lo = 1 + #strictly better, hi = #at least as good.
    fn brute_force_ranges(keys: &[u64]) -> Vec<PredictedRange> {
        keys.iter()
            .map(|k| PredictedRange {
                lo: 1 + keys.iter().filter(|o| *o > k).count() as u32,
                hi: keys.iter().filter(|o| *o >= k).count() as u32,
            })
            .collect()
    }

    /// Independent oracle: connected components of the undirected
    /// intra-block spend graph, via breadth-first search.
    fn component_oracle(txs: &[BtcTx]) -> BTreeSet<Hash32> {
        let index: HashMap<Hash32, usize> = txs.iter().enumerate().map(|(i, t)| (t.txid, i)).collect();
        let mut adj = vec![Vec::new(); txs.len()];
        for (i, t) in txs.iter().enumerate() {
            for inp in &t.inputs {
                if let Some(&j) = index.get(&inp.txid) {
                    if j != i {
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                }
            }
        }
        let mut comp = vec![usize::MAX; txs.len()];
        let mut sizes = Vec::new();
        for start in 0..txs.len() {
            if comp[start] != usize::MAX {
                continue;
            }
            let c = sizes.len();
            let mut queue = std::collections::VecDeque::from([start]);
            comp[start] = c;
            let mut size = 0;
            while let Some(u) = queue.pop_front() {
                size += 1;
                for &v in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = c;
                        queue.push_back(v);
                    }
                }
            }
            sizes.push(size);
        }
        txs.iter()
            .enumerate()
            .filter(|(i, _)| sizes[comp[*i]] >= 2)
            .map(|(_, t)| t.txid)
            .collect()
    }

    proptest! {
        #[test]
        fn predicted_ranges_match_brute_force(keys in prop::collection::vec(0u64..8, 0..60)) {
            prop_assert_eq!(predict_positions(&keys), brute_force_ranges(&keys));
        }

        #[test]
        fn cpfp_equals_spend_graph_components(
            n in 1usize..50,
            edges in prop::collection::vec((0usize..50, 0usize..50), 0..40),
        ) {
            // Parents always precede children: a DAG in block order.
            let mut parents = vec![Vec::new(); n];
            for (a, b) in edges {
                let (a, b) = (a % n, b % n);
                if a < b {
                    parents[b].push(a as u64 + 1);
                }
            }
            let txs: Vec<BtcTx> = (0..n).map(|i| tx(i as u64 + 1, 10, 100, &parents[i])).collect();
            let b = block(txs.clone());
            let part = cpfp_partition(&b);
            prop_assert_eq!(&part.excluded, &component_oracle(&txs));
            let retained: Vec<_> = part.retained.iter().map(|t| t.txid).collect();
            let expect: Vec<_> = txs.iter().map(|t| t.txid).filter(|id| !part.excluded.contains(id)).collect();
            prop_assert_eq!(retained, expect);
        }

        #[test]
        fn tied_groups_permuted_internally_have_zero_sppe(
            groups in prop::collection::vec((1u64..5, 1usize..6), 1..8),
            seed in any::<u64>(),
        ) {
            // Distinct fee levels, sorted descending, each repeated; shuffle
            // inside every tie group only.
            let mut levels: Vec<_> = groups.into_iter().enumerate()
                .map(|(i, (_, k))| (1000 - i as u64 * 10, k)).collect();
            levels.sort_by_key(|l| std::cmp::Reverse(l.0));
            let mut txs = Vec::new();
            let mut next = 1u64;
            let mut s = seed;
            for (fee, k) in levels {
                let mut group: Vec<BtcTx> = (0..k).map(|_| { next += 1; tx(next, fee, 1, &[]) }).collect();
                for i in (1..group.len()).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    group.swap(i, (s >> 33) as usize % (i + 1));
                }
                txs.extend(group);
            }
            let rep = analyze_btc_block(&block(txs), "P").unwrap();
            prop_assert!(rep.reports.iter().all(|p| p.sppe.is_zero()));
        }

        #[test]
        fn fee_scaling_leaves_reports_unchanged(
            fees in prop::collection::vec((1u64..500, 1u64..400), 1..40),
            c in 1u64..1000,
        ) {
            let base: Vec<_> = fees.iter().enumerate().map(|(i, (f, v))| tx(i as u64 + 1, *f, *v, &[])).collect();
            let scaled: Vec<_> = fees.iter().enumerate().map(|(i, (f, v))| tx(i as u64 + 1, f * c, *v, &[])).collect();
            let a = analyze_btc_block(&block(base), "P").unwrap();
            let b = analyze_btc_block(&block(scaled), "P").unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn reversed_order_has_maximal_block_ppe(n in 1usize..8) {
            fn permutations(n: usize) -> Vec<Vec<usize>> {
                if n == 0 {
                    return vec![vec![]];
                }
                let mut out = Vec::new();
                for p in permutations(n - 1) {
                    for i in 0..=p.len() {
                        let mut q = p.clone();
                        q.insert(i, n - 1);
                        out.push(q);
                    }
                }
                out
            }
            let fees: Vec<u64> = (0..n as u64).map(|i| 100 * (i + 1)).collect();
            let ppe_of = |order: &[usize]| {
                let txs: Vec<_> = order.iter().map(|&i| tx(i as u64 + 1, fees[i], 1, &[])).collect();
                analyze_btc_block(&block(txs), "P").unwrap().block_ppe()
            };
            let best = permutations(n).iter().map(|p| ppe_of(p)).max().unwrap();
            let reversed: Vec<usize> = (0..n).collect();
            prop_assert_eq!(ppe_of(&reversed), best);
            let sorted: Vec<usize> = (0..n).rev().collect();
            prop_assert!(ppe_of(&sorted).is_zero());
        }

        #[test]
        fn adding_snapshots_only_shrinks_private_sets(
            base in prop::collection::vec(prop::collection::vec(1u64..30, 0..10), 1..5),
            extra in prop::collection::vec(1u64..30, 0..10),
            extra_ts in 0i64..1000,
        ) {
            let snaps: Vec<_> = base.iter().enumerate()
                .map(|(i, ids)| MempoolSnapshot { timestamp: i as i64 * 100, pending: ids.iter().map(|n| id(*n)).collect() })
                .collect();
            let block = eth_block_for_private(700, &(1..30).collect::<Vec<_>>());
            let before: BTreeSet<_> = private_txs(&block, &FirstSeen::from_snapshots(&snaps)).unwrap().into_iter().collect();
            let mut seen = FirstSeen::from_snapshots(&snaps);
            seen.add_snapshot(&MempoolSnapshot { timestamp: extra_ts, pending: extra.iter().map(|n| id(*n)).collect() });
            let after: BTreeSet<_> = private_txs(&block, &seen).unwrap().into_iter().collect();
            prop_assert!(after.is_subset(&before));
        }
    }
}
