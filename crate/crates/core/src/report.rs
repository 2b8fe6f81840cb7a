//! CSV emitters. Every file starts with a header row; percentages carry two
//! decimals, gwei nine, USD two, all rounded half-to-even.

use std::io;

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};

use crate::bundles::{BundleEconomics, BundleStats, DexCensus, HeuristicMatch, TxEconomics};
use crate::chain::Hash32;
use crate::defi::{BundlePattern, Enablement, PatternSummary, ProfitClasses};
use crate::priometrics::{
    BlockReport, DelayPositionStats, GroupStats, LabelConfusion, PoolFlagSummary, PoolShareWindow, PrivateBlock,
    PrivateSummary, Threshold, ValueTransferred,
};
use crate::stats::{CdfRow, Summary};
use crate::units::{format_decimal, format_gwei, format_wei_as_eth, format_wei_as_gwei, percent};

pub fn pct(r: &BigRational) -> String {
    format_decimal(r, 2)
}

fn small(r: Rational64) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

fn writer<W: io::Write>(w: W, header: &[&str]) -> io::Result<csv::Writer<W>> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

fn finish<W: io::Write>(mut w: csv::Writer<W>) -> io::Result<()> {
    w.flush()
}

pub fn write_sppe<'a, W: io::Write>(w: W, blocks: impl IntoIterator<Item = &'a BlockReport>) -> io::Result<()> {
    let mut out = writer(w, &["txid", "height", "pool", "p_obs", "lo", "hi", "ppe", "sppe"])?;
    for block in blocks {
        for r in &block.reports {
            out.write_record([
                r.txid.to_string(),
                r.height.to_string(),
                r.pool.clone(),
                r.observed.to_string(),
                r.predicted.lo.to_string(),
                r.predicted.hi.to_string(),
                pct(&small(r.ppe())),
                pct(&small(r.sppe)),
            ])?;
        }
    }
    finish(out)
}

/// Transactions at or above the cut-off, in block order.
pub fn write_flagged<'a, W: io::Write>(
    w: W,
    blocks: impl IntoIterator<Item = &'a BlockReport>,
    threshold: Threshold,
) -> io::Result<()> {
    let mut out = writer(w, &["height", "pool", "txid", "sppe"])?;
    for block in blocks {
        for r in block.flagged(threshold) {
            out.write_record([r.height.to_string(), r.pool.clone(), r.txid.to_string(), pct(&small(r.sppe))])?;
        }
    }
    finish(out)
}

pub fn write_block_ppe<'a, W: io::Write>(w: W, blocks: impl IntoIterator<Item = &'a BlockReport>) -> io::Result<()> {
    let mut out = writer(w, &["height", "pool", "ranked", "cpfp_excluded", "block_ppe"])?;
    for b in blocks {
        out.write_record([
            b.height.to_string(),
            b.pool.clone(),
            b.ranked.to_string(),
            b.cpfp_excluded.to_string(),
            pct(&small(b.block_ppe())),
        ])?;
    }
    finish(out)
}

pub fn write_pool_flags<W: io::Write>(w: W, summary: &PoolFlagSummary) -> io::Result<()> {
    let mut out = writer(w, &["pool", "blocks", "flagged_blocks", "flagged_txs", "flagged_block_pct"])?;
    for (pool, c) in &summary.pools {
        out.write_record([
            pool.clone(),
            c.blocks.to_string(),
            c.flagged_blocks.to_string(),
            c.flagged_txs.to_string(),
            pct(&c.block_share()),
        ])?;
    }
    finish(out)
}

pub fn write_pool_shares<W: io::Write>(w: W, shares: &PoolShareWindow) -> io::Result<()> {
    let mut out = writer(w, &["window_start", "pool", "blocks", "share_pct"])?;
    for (start, pool, count, share) in shares.rows() {
        out.write_record([start.to_string(), pool.to_string(), count.to_string(), pct(&share)])?;
    }
    finish(out)
}

/// Combined share of a pool subset per window.
pub fn write_subset_shares<W: io::Write, S: AsRef<str>>(w: W, shares: &PoolShareWindow, subset: &[S]) -> io::Result<()> {
    let label = subset.iter().map(AsRef::as_ref).collect::<Vec<_>>().join("+");
    let mut out = writer(w, &["window_start", "pools", "blocks", "share_pct"])?;
    for (start, pools) in &shares.counts {
        let blocks: u64 = subset.iter().filter_map(|p| pools.get(p.as_ref())).sum();
        out.write_record([start.to_string(), label.clone(), blocks.to_string(), pct(&shares.subset_share(*start, subset))])?;
    }
    finish(out)
}

/// Labeled transactions per window and pool, with each pool's share.
pub fn write_accel_shares<W: io::Write>(w: W, series: &PoolShareWindow) -> io::Result<()> {
    let mut out = writer(w, &["window_start", "pool", "labeled_txs", "share_pct"])?;
    for (start, pool, count, share) in series.rows() {
        out.write_record([start.to_string(), pool.to_string(), count.to_string(), pct(&share)])?;
    }
    finish(out)
}

fn summary_cells(s: &Option<Summary>) -> Vec<String> {
    match s {
        Some(s) => {
            let mut v = vec![s.count.to_string()];
            v.extend([&s.min, &s.p25, &s.median, &s.p75, &s.max, &s.mean].map(pct));
            v
        }
        None => {
            let mut v = vec!["0".to_string()];
            v.extend(std::iter::repeat_n(String::new(), 6));
            v
        }
    }
}

pub fn write_delay_stats<W: io::Write>(w: W, stats: &DelayPositionStats) -> io::Result<()> {
    let mut out = writer(
        w,
        &["group", "metric", "count", "min", "p25", "median", "p75", "max", "mean", "unconfirmed"],
    )?;
    let groups: [(&str, &GroupStats); 2] = [("accelerated", &stats.accelerated), ("non_accelerated", &stats.non_accelerated)];
    for (name, g) in groups {
        for (metric, s) in [("delay_blocks", &g.delay), ("position_pct", &g.position)] {
            let mut row = vec![name.to_string(), metric.to_string()];
            row.extend(summary_cells(s));
            row.push(g.unconfirmed.len().to_string());
            out.write_record(&row)?;
        }
    }
    finish(out)
}

pub fn write_unconfirmed<W: io::Write>(w: W, stats: &DelayPositionStats) -> io::Result<()> {
    let mut out = writer(w, &["group", "txid"])?;
    for (name, g) in [("accelerated", &stats.accelerated), ("non_accelerated", &stats.non_accelerated)] {
        for id in &g.unconfirmed {
            out.write_record([name.to_string(), id.to_string()])?;
        }
    }
    finish(out)
}

pub fn write_private<'a, W: io::Write>(w: W, blocks: impl IntoIterator<Item = &'a PrivateBlock>) -> io::Result<()> {
    let mut out = writer(w, &["height", "pool", "txid"])?;
    for b in blocks {
        for id in &b.private {
            out.write_record([b.height.to_string(), b.pool.clone(), id.to_string()])?;
        }
    }
    finish(out)
}

pub fn write_private_pools<W: io::Write>(w: W, summary: &PrivateSummary) -> io::Result<()> {
    let mut out = writer(w, &["pool", "blocks", "txs", "private_txs", "private_pct"])?;
    for (pool, c) in &summary.pools {
        let share = if c.txs == 0 { BigRational::from_integer(0.into()) } else { percent(u128::from(c.private_txs), u128::from(c.txs)) };
        out.write_record([pool.clone(), c.blocks.to_string(), c.txs.to_string(), c.private_txs.to_string(), pct(&share)])?;
    }
    finish(out)
}

pub fn write_value<W: io::Write>(w: W, v: &ValueTransferred) -> io::Result<()> {
    let mut out = writer(w, &["flagged_sat", "total_sat", "share_pct"])?;
    out.write_record([v.flagged_sat.to_string(), v.total_sat.to_string(), pct(&v.share())])?;
    finish(out)
}

pub fn write_crosscheck<W: io::Write>(w: W, c: &LabelConfusion) -> io::Result<()> {
    let mut out = writer(w, &["flagged_and_labeled", "flagged_only", "labeled_only"])?;
    out.write_record([c.flagged_and_labeled.to_string(), c.flagged_only.to_string(), c.labeled_only.to_string()])?;
    finish(out)
}

pub fn write_bundle_econ<'a, W: io::Write>(w: W, rows: impl IntoIterator<Item = &'a BundleEconomics>) -> io::Result<()> {
    let mut out = writer(w, &["block", "bundle_index", "tag", "txs", "total_gas", "total_reward_wei", "actual_fee_gwei"])?;
    for e in rows {
        out.write_record([
            e.bundle.block_number.to_string(),
            e.bundle.bundle_index.to_string(),
            e.tag.to_string(),
            e.tx_count.to_string(),
            e.total_gas.to_string(),
            e.total_reward.to_string(),
            format_gwei(&e.actual_fee()),
        ])?;
    }
    finish(out)
}

pub fn write_heuristic_matches<'a, W: io::Write>(w: W, rows: impl IntoIterator<Item = &'a HeuristicMatch>) -> io::Result<()> {
    let mut out = writer(w, &["block", "bundle_index", "public_tx", "public_tip_gwei", "actual_fee_gwei", "gap_gwei"])?;
    for m in rows {
        out.write_record([
            m.economics.bundle.block_number.to_string(),
            m.economics.bundle.bundle_index.to_string(),
            m.public_tx.to_string(),
            format_wei_as_gwei(m.public_tip),
            format_gwei(&m.economics.actual_fee()),
            format_gwei(&m.gap()),
        ])?;
    }
    finish(out)
}

/// CDF of wei-per-gas values, rendered in gwei.
pub fn write_fee_gap_cdf<W: io::Write>(w: W, rows: &[CdfRow]) -> io::Result<()> {
    let mut out = writer(w, &["gap_gwei", "count", "cum_pct"])?;
    for r in rows {
        out.write_record([format_gwei(&r.value), r.count.to_string(), pct(&r.cum_pct)])?;
    }
    finish(out)
}

pub fn write_dex_census<W: io::Write>(w: W, census: &DexCensus) -> io::Result<()> {
    let mut out = writer(w, &["protocol", "bundles", "txs"])?;
    for (p, b, t) in census.rows() {
        out.write_record([p.to_string(), b.to_string(), t.to_string()])?;
    }
    out.write_record(["Total".to_string(), census.any.0.len().to_string(), census.any.1.len().to_string()])?;
    finish(out)
}

pub fn write_bundle_stats<W: io::Write>(w: W, s: &BundleStats) -> io::Result<()> {
    let mut out = writer(w, &["metric", "value"])?;
    let mut row = |k: String, v: String| out.write_record([k, v]);
    row("bundles".into(), s.bundles.to_string())?;
    for (prefix, summary, std) in [("size", &s.size, &s.size_std), ("per_block", &s.per_block, &s.per_block_std)] {
        if let Some(sm) = summary {
            row(format!("{prefix}_min"), pct(&sm.min))?;
            row(format!("{prefix}_mean"), pct(&sm.mean))?;
            row(format!("{prefix}_median"), pct(&sm.median))?;
            row(format!("{prefix}_std"), pct(std))?;
            row(format!("{prefix}_max"), pct(&sm.max))?;
        }
    }
    row("blocks".into(), s.blocks.to_string())?;
    row("blocks_with_bundle".into(), s.blocks_with_bundle.to_string())?;
    row("blocks_with_bundle_pct".into(), pct(&s.block_share()))?;
    for pool in s.pool_bundles.keys() {
        row(format!("pool_pct:{pool}"), pct(&s.pool_share(pool)))?;
    }
    for tag in s.tag_txs.keys() {
        row(format!("tag_pct:{tag}"), pct(&s.tag_share(*tag)))?;
    }
    row("failed_tx_pct".into(), pct(&s.failed_share()))?;
    finish(out)
}

pub fn write_tx_econ<'a, W: io::Write>(w: W, rows: impl IntoIterator<Item = &'a TxEconomics>) -> io::Result<()> {
    let mut out = writer(
        w,
        &[
            "block",
            "tx_hash",
            "base_fee_gwei",
            "max_priority_fee_gwei",
            "max_fee_gwei",
            "gas_price_gwei",
            "miner_tip_gwei",
            "gas_used",
            "fee_eth",
        ],
    )?;
    for t in rows {
        out.write_record([
            t.block_number.to_string(),
            t.hash.to_string(),
            format_wei_as_gwei(t.base_fee),
            format_wei_as_gwei(t.max_priority_fee),
            format_wei_as_gwei(t.max_fee),
            format_wei_as_gwei(t.effective_gas_price),
            format_wei_as_gwei(t.miner_tip),
            t.gas_used.to_string(),
            format_wei_as_eth(t.fee_paid, 18),
        ])?;
    }
    finish(out)
}

pub fn write_patterns<'a, W: io::Write>(w: W, rows: impl IntoIterator<Item = &'a BundlePattern>) -> io::Result<()> {
    let mut out = writer(w, &["block", "bundle_index", "tags", "updates", "liquidations", "class", "feeds"])?;
    for p in rows {
        out.write_record([
            p.bundle.block_number.to_string(),
            p.bundle.bundle_index.to_string(),
            p.tag_string(),
            p.updates.to_string(),
            p.liquidations.to_string(),
            p.class.to_string(),
            p.feed_label(),
        ])?;
    }
    finish(out)
}

pub fn write_feed_pairs<W: io::Write>(w: W, summary: &PatternSummary) -> io::Result<()> {
    let mut out = writer(w, &["feeds", "bundles", "share_pct"])?;
    let total = summary.total() as u128;
    for (label, n) in &summary.feed_pairs {
        out.write_record([label.clone(), n.to_string(), pct(&percent(*n as u128, total.max(1)))])?;
    }
    finish(out)
}

pub fn write_profits<W: io::Write>(w: W, classes: &ProfitClasses) -> io::Result<()> {
    let mut out = writer(w, &["tx_hash", "protocol", "bundled_with_update", "profit_usd"])?;
    for r in &classes.rows {
        out.write_record([
            r.tx_hash.to_string(),
            r.protocol.to_string(),
            r.bundled_with_update.to_string(),
            pct(&r.profit.usd),
        ])?;
    }
    finish(out)
}

pub fn write_profit_cdf<W: io::Write>(w: W, classes: &ProfitClasses) -> io::Result<()> {
    let mut out = writer(w, &["bundled_with_update", "profit_usd", "count", "cum_pct"])?;
    for (bundled, rows) in [(true, classes.bundled_cdf()), (false, classes.unbundled_cdf())] {
        for r in rows {
            out.write_record([bundled.to_string(), pct(&r.value), r.count.to_string(), pct(&r.cum_pct)])?;
        }
    }
    finish(out)
}

pub fn write_enabled<'a, W: io::Write>(w: W, rows: impl IntoIterator<Item = (&'a Hash32, &'a str, &'a Enablement)>) -> io::Result<()> {
    let mut out = writer(
        w,
        &[
            "tx_hash",
            "protocol",
            "block",
            "threshold",
            "ratio_before",
            "ratio_after",
            "liquidatable_before",
            "liquidatable_after",
            "enabled",
        ],
    )?;
    let ratio = |r: &Option<BigRational>| r.as_ref().map_or(String::new(), |r| format_decimal(r, 6));
    for (hash, protocol, e) in rows {
        out.write_record([
            hash.to_string(),
            protocol.to_string(),
            e.block.to_string(),
            format_decimal(&e.threshold, 6),
            ratio(&e.ratio_before),
            ratio(&e.ratio_after),
            e.liquidatable_before().to_string(),
            e.liquidatable_after().to_string(),
            e.enabled().to_string(),
        ])?;
    }
    finish(out)
}
