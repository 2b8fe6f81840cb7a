//! Fixture loaders and block-stream builders shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use chrono::NaiveDateTime;
use num_rational::BigRational;

use num_traits::Signed;

use prioscope::bundles::{detect_h2, detect_h3_sandwich, EthBlockIndex};
use prioscope::chain::{BtcBlock, BtcTx, Chain, ChainBlock, EthBlock, Hash32, OutPoint, PriceStore};
use prioscope::defi::{
    bundled_with_update, classify_bundle_pattern, enabled_by_update, EventIndex, LiquidationThresholds, PatternClass,
};
use prioscope::ingest::{load_blocks, BadInputPolicy, PoolRegistry};
use prioscope::priometrics::{
    analyze_block, delay_position_stats, detect_private_inclusions, flag_accelerated, pool_shares, window_start,
    Threshold, Window,
};
use prioscope::synth::{gen_corpus, SynthSpec, TxRange};
use prioscope::units::{format_decimal, parse_decimal, pow10, Wei, WEI_PER_ETH, WEI_PER_GWEI};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn tsv_rows(name: &str) -> Vec<Vec<String>> {
    let text = fs::read_to_string(fixtures().join(name)).expect("fixture readable");
    text.lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

fn dec(s: &str) -> BigRational {
    parse_decimal(s).expect("decimal column")
}

fn leading_digits(s: &str) -> u64 {
    let d: String = s.chars().take_while(char::is_ascii_digit).collect();
    d.parse().expect("numeric column")
}

fn utc(s: &str, fmt: &str) -> i64 {
    NaiveDateTime::parse_from_str(s, fmt).expect("timestamp column").and_utc().timestamp()
}

/// One row of the Ethereum fee table, values as printed.
#[derive(Debug, Clone)]
pub struct EthFeeRow {
    pub hash: Hash32,
    pub block: u64,
    pub miner: String,
    pub fee_eth: BigRational,
    pub base_fee_gwei: BigRational,
    pub max_fee_gwei: BigRational,
    pub max_priority_fee_gwei: BigRational,
    pub gas_price_gwei: BigRational,
    pub timestamp: i64,
}

pub fn eth_fee_rows() -> Vec<EthFeeRow> {
    tsv_rows("eth_fee_rows.tsv")
        .into_iter()
        .map(|r| EthFeeRow {
            hash: r[2].parse().unwrap(),
            block: r[3].parse().unwrap(),
            miner: r[4].clone(),
            fee_eth: dec(&r[7]),
            base_fee_gwei: dec(&r[8]),
            max_fee_gwei: dec(&r[9]),
            max_priority_fee_gwei: dec(&r[10]),
            gas_price_gwei: dec(&r[11]),
            timestamp: utc(&r[12], "%Y-%m-%d %H:%M:%S"),
        })
        .collect()
}

pub fn eth_fee_blocks_path() -> PathBuf {
    fixtures().join("eth_fee_blocks.jsonl")
}

pub fn eth_fee_blocks() -> Vec<EthBlock> {
    load_blocks(&eth_fee_blocks_path(), Chain::Eth, BadInputPolicy::FailFast)
        .unwrap()
        .map(|b| match b.unwrap() {
            ChainBlock::Eth(b) => b,
            ChainBlock::Btc(_) => unreachable!("eth fixture"),
        })
        .collect()
}

/// One row of the Bitcoin acceleration table.
#[derive(Debug, Clone)]
pub struct BtcAccelRow {
    pub txid: Hash32,
    pub height: u64,
    pub miner: String,
    pub position: u32,
    pub delay_blocks: u64,
    pub vsize: u64,
    pub fee_rate: u64,
    pub timestamp: i64,
}

pub fn btc_accel_rows() -> Vec<BtcAccelRow> {
    tsv_rows("btc_accel_rows.tsv")
        .into_iter()
        .map(|r| BtcAccelRow {
            txid: r[0].parse().unwrap(),
            height: r[1].parse().unwrap(),
            miner: r[2].clone(),
            position: leading_digits(&r[3]) as u32,
            delay_blocks: r[4].parse().unwrap(),
            vsize: r[6].parse().unwrap(),
            fee_rate: r[7].parse().unwrap(),
            timestamp: utc(&r[10], "%Y-%m-%d %H:%M"),
        })
        .collect()
}

fn synthetic_id(tag: u8, height: u64, index: u32) -> Hash32 {
    let mut b = [0u8; 32];
    b[0] = tag;
    b[8..16].copy_from_slice(&height.to_be_bytes());
    b[16..20].copy_from_slice(&index.to_be_bytes());
    Hash32::from_bytes(b)
}

fn coinbase(height: u64) -> BtcTx {
    BtcTx {
        txid: synthetic_id(0xc0, height, 0),
        vsize: 200,
        fee: 0,
        inputs: vec![],
        total_output_value: 625_000_000,
    }
}

fn filler(height: u64, index: u32) -> BtcTx {
    BtcTx {
        txid: synthetic_id(0xf1, height, index),
        vsize: 250,
        fee: 250 * 20,
        inputs: vec![OutPoint { txid: synthetic_id(0xa0, height, index), vout: 0 }],
        total_output_value: 100_000,
    }
}

/// Transactions in each block that includes an accelerated row.
pub const INCLUSION_BLOCK_TXS: u32 = 2500;

pub struct DelayFixture {
    pub blocks: Vec<ChainBlock>,
    pub first_seen: Vec<(Hash32, i64)>,
    pub accelerated: BTreeSet<Hash32>,
    pub rows: Vec<BtcAccelRow>,
}

/// A contiguous block stream around the acceleration rows. Including blocks
/// carry the table's timestamps, the blocks between them are spaced evenly,
/// and each transaction is first seen one second before the block `delay - 1`
/// heights below its inclusion.
pub fn btc_delay_fixture() -> DelayFixture {
    let mut rows = btc_accel_rows();
    rows.sort_by_key(|r| r.height);
    let anchors: Vec<(u64, i64)> = rows.iter().map(|r| (r.height, r.timestamp)).collect();
    let lo = rows.iter().map(|r| r.height + 1 - r.delay_blocks).min().unwrap();
    let hi = anchors.last().unwrap().0;
    let ts_at = |h: u64| -> i64 {
        let (h0, t0) = anchors[0];
        if h <= h0 {
            return t0 - 600 * (h0 - h) as i64;
        }
        let i = anchors.iter().position(|(ah, _)| *ah >= h).unwrap();
        let ((ha, ta), (hb, tb)) = (anchors[i - 1], anchors[i]);
        ta + (tb - ta) * (h - ha) as i64 / (hb - ha) as i64
    };
    let blocks = (lo..=hi)
        .map(|h| {
            let mut txs = vec![coinbase(h)];
            if let Some(row) = rows.iter().find(|r| r.height == h) {
                for i in 1..INCLUSION_BLOCK_TXS {
                    if i + 1 == row.position {
                        txs.push(BtcTx {
                            txid: row.txid,
                            vsize: row.vsize,
                            fee: row.vsize * row.fee_rate,
                            inputs: vec![OutPoint { txid: synthetic_id(0xa1, h, i), vout: 0 }],
                            total_output_value: 50_000,
                        });
                    } else {
                        txs.push(filler(h, i));
                    }
                }
            }
            ChainBlock::Btc(BtcBlock {
                height: h,
                timestamp: ts_at(h),
                coinbase_tag: format!("/{}/", rows.iter().find(|r| r.height == h).map_or("Other", |r| &r.miner)),
                txs,
            })
        })
        .collect();
    let first_seen = rows.iter().map(|r| (r.txid, ts_at(r.height + 1 - r.delay_blocks) - 1)).collect();
    let accelerated = rows.iter().map(|r| r.txid).collect();
    DelayFixture { blocks, first_seen, accelerated, rows }
}

pub fn pool_share_rows() -> Vec<(String, BigRational)> {
    tsv_rows("pool_share_day.tsv").into_iter().map(|r| (r[0].clone(), dec(&r[1]))).collect()
}

/// Blocks mined in one UTC day (2020-12-01).
pub const POOL_SHARE_DAY_START: i64 = 1_606_780_800;
pub const POOL_SHARE_DAY_BLOCKS: u64 = 1000;

/// One day of blocks whose per-pool counts reproduce the share table, with the
/// remainder mined by pools outside it.
pub fn pool_share_fixture() -> (Vec<ChainBlock>, PoolRegistry) {
    let rows = pool_share_rows();
    let mut registry = PoolRegistry::new();
    let mut tags = Vec::new();
    for (pool, share) in &rows {
        let blocks = share * BigRational::from_integer(POOL_SHARE_DAY_BLOCKS.into()) / BigRational::from_integer(100.into());
        assert!(blocks.is_integer(), "share {share} not representable in {POOL_SHARE_DAY_BLOCKS} blocks");
        let n: u64 = blocks.to_integer().try_into().unwrap();
        registry.push(format!("/{pool}/"), pool.clone());
        tags.extend(std::iter::repeat_n(format!("Mined by /{pool}/"), n as usize));
    }
    let others = ["SlushPool", "Poolin", "BTC.com", "1THash"];
    for pool in others {
        registry.push(format!("/{pool}/"), pool);
    }
    let mut i = 0;
    while (tags.len() as u64) < POOL_SHARE_DAY_BLOCKS {
        let pool = others[i % others.len()];
        tags.push(format!("Mined by /{pool}/"));
        i += 1;
    }
    // Interleave so the fixture does not depend on block order.
    let n = tags.len();
    let order: Vec<usize> = (0..n).map(|k| (k * 7919) % n).collect();
    let blocks = order
        .into_iter()
        .enumerate()
        .map(|(k, j)| {
            let height = 660_000 + k as u64;
            ChainBlock::Btc(BtcBlock {
                height,
                timestamp: POOL_SHARE_DAY_START + 86 * k as i64,
                coinbase_tag: tags[j].clone(),
                txs: vec![coinbase(height)],
            })
        })
        .collect();
    (blocks, registry)
}

// ---------------------------------------------------------------------------
// Checks shared with the acceptance harness. Each returns a description of
// the first mismatch.

fn round(v: &BigRational, digits: u32) -> String {
    format_decimal(v, digits)
}

/// Gas price and fee of every fee-table row recomputed from the fixture
/// blocks.
pub fn check_eth_fee_table() -> Result<(), String> {
    let rows = eth_fee_rows();
    let blocks = eth_fee_blocks();
    if rows.len() != 8 || blocks.len() != 8 {
        return Err(format!("expected 8 rows and 8 blocks, got {} and {}", rows.len(), blocks.len()));
    }
    let gwei = BigRational::from_integer(WEI_PER_GWEI.into());
    let eth = BigRational::from_integer(WEI_PER_ETH.into());
    let tolerance = BigRational::new(1.into(), pow10(12));
    for (row, block) in rows.iter().zip(&blocks) {
        let (_, tx) = block.tx(&row.hash).ok_or(format!("{} missing from block {}", row.hash, block.number))?;
        let check = |what: &str, wei: Wei, table: &BigRational| -> Result<(), String> {
            let got = BigRational::from_integer(wei.into()) / &gwei;
            if round(&got, 8) == round(table, 8) {
                Ok(())
            } else {
                Err(format!("{}: {what} {} != table {}", row.hash, round(&got, 9), round(table, 8)))
            }
        };
        if block.number != row.block || block.timestamp != row.timestamp {
            return Err(format!("{}: block {} at {} != table", row.hash, block.number, block.timestamp));
        }
        check("base fee", block.base_fee_per_gas, &row.base_fee_gwei)?;
        check("max fee", tx.max_fee_per_gas, &row.max_fee_gwei)?;
        check("max priority fee", tx.max_priority_fee_per_gas, &row.max_priority_fee_gwei)?;
        let price = tx.effective_gas_price(block.base_fee_per_gas).map_err(|e| e.to_string())?;
        check("gas price", price, &row.gas_price_gwei)?;

        let gas = BigRational::from_integer(tx.gas_used.into());
        let fee = BigRational::from_integer(tx.fee_paid(block.base_fee_per_gas).map_err(|e| e.to_string())?.into()) / &eth;
        let from_table = &gas * &row.gas_price_gwei / BigRational::from_integer(pow10(9));
        if (&fee - &from_table).abs() >= tolerance {
            return Err(format!("{}: fee {} vs gas x table price {}", row.hash, round(&fee, 18), round(&from_table, 18)));
        }
        if round(&fee, 8) != round(&row.fee_eth, 8) {
            return Err(format!("{}: fee {} != table {}", row.hash, round(&fee, 8), round(&row.fee_eth, 8)));
        }
    }
    Ok(())
}

/// Delay statistics of the accelerated rows against the published summary
/// (1, 1, 2, 2, 3, mean 1.8).
pub fn check_delay_table() -> Result<(), String> {
    let f = btc_delay_fixture();
    let stats = delay_position_stats(&f.accelerated, f.first_seen.iter().copied(), &f.blocks);
    let s = stats.accelerated.delay.as_ref().ok_or("no accelerated timings")?;
    let int = |v: i64| BigRational::from_integer(v.into());
    let want = (10, int(1), int(1), int(2), int(2), int(3), BigRational::new(9.into(), 5.into()));
    let got = (s.count, s.min.clone(), s.p25.clone(), s.median.clone(), s.p75.clone(), s.max.clone(), s.mean.clone());
    if got != want {
        return Err(format!("delay summary {got:?} != {want:?}"));
    }
    if !stats.accelerated.unconfirmed.is_empty() || stats.non_accelerated.delay.is_some() {
        return Err("unexpected unconfirmed or non-accelerated timings".into());
    }
    Ok(())
}

/// Combined daily share of the listed pools.
pub fn check_pool_share_table() -> Result<BigRational, String> {
    let (blocks, registry) = pool_share_fixture();
    let shares = pool_shares(&blocks, &registry, Window::Day);
    let day = window_start(POOL_SHARE_DAY_START, Window::Day);
    if shares.counts.len() != 1 || shares.total(day) != POOL_SHARE_DAY_BLOCKS {
        return Err(format!("expected one day of {POOL_SHARE_DAY_BLOCKS} blocks"));
    }
    let rows = pool_share_rows();
    for (pool, pct) in &rows {
        if &shares.share(day, pool) != pct {
            return Err(format!("{pool}: {} != {pct}", shares.share(day, pool)));
        }
    }
    let names: Vec<&str> = rows.iter().map(|(p, _)| p.as_str()).collect();
    Ok(shares.subset_share(day, &names))
}

fn hex_set(ids: &[String]) -> BTreeSet<Hash32> {
    ids.iter().map(|s| s.parse().expect("manifest id")).collect()
}

fn diff(what: &str, got: &BTreeSet<Hash32>, want: &BTreeSet<Hash32>) -> Result<(), String> {
    let missed = want.difference(got).count();
    let extra = got.difference(want).count();
    if missed + extra == 0 {
        Ok(())
    } else {
        Err(format!("{what}: {missed} missed, {extra} false positives of {}", want.len()))
    }
}

/// A btc corpus with one planted acceleration per block and a private share.
pub fn btc_round_trip_spec(seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::btc(seed, 5, TxRange { min: 100, max: 300 });
    spec.planted_accelerations = 1;
    spec.private_share = 0.05;
    spec
}

/// Generates a corpus and checks that flagging at 99 and private detection
/// recover the manifest exactly.
pub fn check_btc_round_trip(spec: &SynthSpec) -> Result<(), String> {
    let corpus = gen_corpus(spec).map_err(|e| e.to_string())?;
    let mut flagged = BTreeSet::new();
    for b in &corpus.blocks {
        let r = analyze_block(b, corpus.pools.attribute(b)).map_err(|e| e.to_string())?;
        flagged.extend(flag_accelerated(&r.reports, Threshold::STRICT));
    }
    diff("accelerated", &flagged, &hex_set(&corpus.truth.accelerated))?;
    let found = detect_private_inclusions(&corpus.blocks, &corpus.snapshots, &corpus.pools);
    if !found.uncovered.is_empty() {
        return Err(format!("{} blocks without snapshot coverage", found.uncovered.len()));
    }
    let private: BTreeSet<Hash32> = found.blocks.iter().flat_map(|b| b.private.iter().copied()).collect();
    diff("private", &private, &hex_set(&corpus.truth.private))
}

/// An eth corpus with every kind of planted bundle.
pub fn eth_round_trip_spec(seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::eth(seed, 9, TxRange { min: 40, max: 80 });
    spec.planted_h2 = 9;
    spec.planted_h3 = 5;
    spec.noise_bundles = 6;
    spec.planted_liquidations = 4;
    spec.private_share = 0.1;
    spec
}

/// Generates an eth corpus and checks the heuristics, private detection,
/// pattern classes and update enablement against the manifest.
pub fn check_eth_round_trip(spec: &SynthSpec) -> Result<(), String> {
    let corpus = gen_corpus(spec).map_err(|e| e.to_string())?;
    let index = EthBlockIndex::from_chain_blocks(&corpus.blocks);
    let events = EventIndex::new(&corpus.updates, &corpus.liquidations);
    let (mut h2, mut h3, mut liq) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
    for b in &corpus.bundles {
        let block = index.block_for(b).map_err(|e| e.to_string())?;
        let id = b.id().to_string();
        if b.len() == 2 && detect_h2(b, block).map_err(|e| e.to_string())? {
            h2.insert(id.clone());
        }
        if b.len() == 3 && detect_h3_sandwich(b, block).map_err(|e| e.to_string())? {
            h3.insert(id.clone());
        }
        if classify_bundle_pattern(b, &events).class == PatternClass::UpdateThenLiquidation {
            liq.insert(id);
        }
    }
    let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<String>>();
    for (what, got, want) in [
        ("h2", h2, set(&corpus.truth.h2_bundles)),
        ("h3", h3, set(&corpus.truth.h3_bundles)),
        ("update-liquidation", liq, set(&corpus.truth.update_liquidation_bundles)),
    ] {
        if got != want {
            return Err(format!("{what} bundles {got:?} != manifest {want:?}"));
        }
    }

    let found = detect_private_inclusions(&corpus.blocks, &corpus.snapshots, &corpus.pools);
    let private: BTreeSet<Hash32> = found.blocks.iter().flat_map(|b| b.private.iter().copied()).collect();
    diff("private", &private, &hex_set(&corpus.truth.private))?;

    let mut prices = PriceStore::new();
    for p in &corpus.prices {
        prices.insert(p.clone()).map_err(|e| e.to_string())?;
    }
    let bundled = bundled_with_update(&corpus.bundles, &events);
    let thresholds = LiquidationThresholds::default();
    for l in &corpus.liquidations {
        let block = l.block_number.ok_or("liquidation without block")?;
        let e = enabled_by_update(l, &prices, block, &thresholds).map_err(|e| e.to_string())?;
        if e.enabled() != bundled.contains(&l.tx_hash) {
            return Err(format!("{}: enabled {} but bundled {}", l.tx_hash, e.enabled(), bundled.contains(&l.tx_hash)));
        }
    }
    Ok(())
}
