//! Seeded synthetic corpora with a ground-truth manifest.
//!
//! Randomness comes from xoshiro256** seeded through SplitMix64
//! (`seed_from_u64`). All sampling below is integer-only and draws from the
//! generator in a fixed order, so a spec always yields the same bytes on
//! every platform.
//!
//! Layout of a btc block: coinbase, then `k` planted accelerations paying
//! 1 sat/vB, then every other transaction sorted by fee rate (at least
//! 2 sat/vB). Layout of an eth block: planted bundles at the top, then
//! public transactions sorted by tip.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::chain::{
    Address, BtcBlock, BtcTx, BundleRecord, BundleTag, Chain, ChainBlock, EthBlock, EthTx, FeedPair, Hash32,
    LiquidationEvent, MempoolSnapshot, OracleUpdate, OutPoint, PricePoint, Protocol, Quote, TxStatus,
};
use crate::ingest::{self, ContractRegistry, PoolRegistry};
use crate::units::{FixedPoint, WEI_PER_GWEI};

pub const BTC_POOLS: [&str; 7] = ["F2Pool", "AntPool", "Binance", "Huobi", "ViaBTC", "Poolin", "SlushPool"];
pub const ETH_POOLS: [&str; 5] = ["Ethermine", "SparkPool", "F2Pool", "Hiveon", "Nanopool"];
const DEXES: [&str; 3] = ["Uniswap", "Sushiswap", "Balancer"];
const FEED_ASSETS: [&str; 4] = ["USDC", "DAI", "LINK", "UNI"];
const BLOCK_SUBSIDY_SAT: u64 = 625_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("infeasible spec: {0}")]
    InfeasibleSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub chain: Chain,
    pub blocks: u32,
    pub txs_per_block: TxRange,
    /// Log-uniform fee bounds: sat/vB for btc, tip in gwei for eth.
    #[serde(default = "default_fee_min")]
    pub fee_min: u64,
    #[serde(default = "default_fee_max")]
    pub fee_max: u64,
    /// Per block (btc only).
    #[serde(default)]
    pub planted_accelerations: u32,
    /// Corpus totals (eth only); bundle `j` goes to block `j mod blocks`.
    #[serde(default)]
    pub planted_h2: u32,
    #[serde(default)]
    pub planted_h3: u32,
    /// Bundles whose transactions all share one sender.
    #[serde(default)]
    pub noise_bundles: u32,
    /// Oracle-update plus liquidation bundles, each paired with an
    /// unbundled liquidation in the same block.
    #[serde(default)]
    pub planted_liquidations: u32,
    /// Fraction of each block's relayed transactions kept out of every
    /// snapshot.
    #[serde(default)]
    pub private_share: f64,
    #[serde(default = "default_start_height")]
    pub start_height: u64,
    #[serde(default = "default_start_timestamp")]
    pub start_timestamp: i64,
    #[serde(default = "default_interval")]
    pub block_interval: i64,
}

fn default_fee_min() -> u64 {
    2
}
fn default_fee_max() -> u64 {
    500
}
fn default_start_height() -> u64 {
    650_000
}
fn default_start_timestamp() -> i64 {
    1_606_780_800
}
fn default_interval() -> i64 {
    600
}

impl SynthSpec {
    /// A btc spec with defaults for everything but the essentials.
    pub fn btc(seed: u64, blocks: u32, txs: TxRange) -> Self {
        SynthSpec {
            seed,
            chain: Chain::Btc,
            blocks,
            txs_per_block: txs,
            fee_min: default_fee_min(),
            fee_max: default_fee_max(),
            planted_accelerations: 0,
            planted_h2: 0,
            planted_h3: 0,
            noise_bundles: 0,
            planted_liquidations: 0,
            private_share: 0.0,
            start_height: default_start_height(),
            start_timestamp: default_start_timestamp(),
            block_interval: default_interval(),
        }
    }

    pub fn eth(seed: u64, blocks: u32, txs: TxRange) -> Self {
        SynthSpec {
            chain: Chain::Eth,
            fee_min: 1,
            fee_max: 100,
            start_height: 13_000_000,
            start_timestamp: 1_630_000_000,
            block_interval: 13,
            ..Self::btc(seed, blocks, txs)
        }
    }

    fn per_block(total: u32, blocks: u32) -> u32 {
        total.div_ceil(blocks.max(1))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InfeasibleSpec(m));
        let TxRange { min, max } = self.txs_per_block;
        if self.blocks == 0 {
            return fail("blocks must be at least 1".into());
        }
        if min == 0 || min > max {
            return fail(format!("txs_per_block {min}..{max} is empty"));
        }
        if self.fee_min == 0 || self.fee_min > self.fee_max {
            return fail(format!("fee bounds {}..{} are empty", self.fee_min, self.fee_max));
        }
        if !(0.0..=1.0).contains(&self.private_share) {
            return fail(format!("private_share {} is outside [0, 1]", self.private_share));
        }
        if self.block_interval < 2 {
            return fail("block_interval must be at least 2 seconds".into());
        }
        let bundles = self.planted_h2 + self.planted_h3 + self.noise_bundles + self.planted_liquidations;
        match self.chain {
            Chain::Btc => {
                if bundles > 0 {
                    return fail("bundles can only be planted in eth corpora".into());
                }
                if self.fee_min < 2 {
                    return fail("btc fee_min must exceed the planted 1 sat/vB".into());
                }
                let k = self.planted_accelerations;
                if k > 0 && u64::from(min) < 100 * (2 * u64::from(k) - 1) {
                    return fail(format!(
                        "{k} accelerations per block need at least {} transactions per block",
                        100 * (2 * u64::from(k) - 1)
                    ));
                }
            }
            Chain::Eth => {
                if self.planted_accelerations > 0 {
                    return fail("accelerations can only be planted in btc corpora".into());
                }
                let b = self.blocks;
                let bundle_txs = 2 * Self::per_block(self.planted_h2, b)
                    + 3 * Self::per_block(self.planted_h3, b)
                    + 3 * Self::per_block(self.planted_liquidations, b)
                    + 4 * Self::per_block(self.noise_bundles, b);
                if bundle_txs > min {
                    return fail(format!("up to {bundle_txs} bundle transactions do not fit in {min}-tx blocks"));
                }
                if self.planted_liquidations > 0 && self.planted_liquidations > (b - 1) / 2 {
                    return fail(format!("{} liquidation bundles need at least {} blocks", self.planted_liquidations, 2 * self.planted_liquidations + 1));
                }
            }
        }
        Ok(())
    }
}

/// Everything a corpus plants, as hex ids and `block/index` bundle ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub accelerated: Vec<String>,
    pub private: Vec<String>,
    pub h2_bundles: Vec<String>,
    pub h3_bundles: Vec<String>,
    #[serde(default)]
    pub update_liquidation_bundles: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub blocks: Vec<ChainBlock>,
    pub bundles: Vec<BundleRecord>,
    pub snapshots: Vec<MempoolSnapshot>,
    pub pools: PoolRegistry,
    pub contracts: ContractRegistry,
    pub liquidations: Vec<LiquidationEvent>,
    pub updates: Vec<OracleUpdate>,
    pub prices: Vec<PricePoint>,
    pub truth: GroundTruth,
}

impl Corpus {
    /// File name and contents of every output, in a fixed order.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        let lines = |it: Vec<String>| it.into_iter().map(|l| l + "\n").collect::<String>();
        let mut out = vec![
            ("blocks.jsonl", lines(self.blocks.iter().map(ingest::block_line).collect())),
            ("snapshots.jsonl", lines(self.snapshots.iter().map(ingest::snapshot_line).collect())),
            ("pools.tsv", self.pools.to_tsv()),
        ];
        if self.spec.chain == Chain::Eth {
            out.push(("bundles.jsonl", lines(self.bundles.iter().map(ingest::bundle_line).collect())));
            let mut events: Vec<String> = self.updates.iter().map(ingest::oracle_line).collect();
            events.extend(self.liquidations.iter().map(ingest::liquidation_line));
            out.push(("events.jsonl", lines(events)));
            out.push(("prices.jsonl", lines(self.prices.iter().map(ingest::price_line).collect())));
            out.push((
                "contracts.tsv",
                self.contracts.iter().map(|(a, p)| format!("{a}\t{p}\n")).collect(),
            ));
        }
        let truth = serde_json::to_string_pretty(&self.truth).expect("manifest serializes") + "\n";
        out.push(("ground_truth.json", truth));
        out
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, contents) in self.files() {
            let mut f = fs::File::create(dir.join(name))?;
            f.write_all(contents.as_bytes())?;
        }
        Ok(())
    }
}

/// Deterministic generator state.
#[derive(Debug, Clone)]
pub struct SynthRng(Xoshiro256StarStar);

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        SynthRng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, n)` by rejection of the biased tail.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform in `[lo, hi]`.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    /// Integer in `[lo, hi]` with probability proportional to `1/v`: draw
    /// uniformly and accept `v` with probability `lo/v`.
    pub fn log_uniform(&mut self, lo: u64, hi: u64) -> u64 {
        loop {
            let v = self.range(lo, hi);
            if self.below(v) < lo {
                return v;
            }
        }
    }

    pub fn bytes<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        for chunk in out.chunks_mut(8) {
            let word = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&word[..chunk.len()]);
        }
        out
    }

    pub fn hash(&mut self) -> Hash32 {
        Hash32::from_bytes(self.bytes())
    }

    pub fn address(&mut self) -> Address {
        Address::from_bytes(self.bytes())
    }

    /// `k` distinct indices from `0..n`, ascending (partial Fisher-Yates).
    pub fn sample(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k.min(n) {
            let j = i + self.below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        let mut picked = idx[..k.min(n)].to_vec();
        picked.sort_unstable();
        picked
    }
}

pub fn gen_corpus(spec: &SynthSpec) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let mut rng = SynthRng::new(spec.seed);
    match spec.chain {
        Chain::Btc => Ok(gen_btc(spec, &mut rng)),
        Chain::Eth => Ok(gen_eth(spec, &mut rng)),
    }
}

fn private_count(spec: &SynthSpec, relayed: usize) -> usize {
    ((spec.private_share * relayed as f64) + 0.5).floor() as usize
}

fn hex_list(ids: impl IntoIterator<Item = Hash32>) -> Vec<String> {
    let set: BTreeSet<Hash32> = ids.into_iter().collect();
    set.into_iter().map(|h| h.to_string()).collect()
}

fn gen_btc(spec: &SynthSpec, rng: &mut SynthRng) -> Corpus {
    let mut pools = PoolRegistry::new();
    for p in BTC_POOLS {
        pools.push(format!("/{p}/"), p);
    }
    let mut blocks = Vec::new();
    let mut snapshots = Vec::new();
    let (mut accelerated, mut private) = (Vec::new(), Vec::new());
    let k = spec.planted_accelerations as usize;
    for b in 0..u64::from(spec.blocks) {
        let height = spec.start_height + b;
        let timestamp = spec.start_timestamp + b as i64 * spec.block_interval;
        let n = rng.range(u64::from(spec.txs_per_block.min), u64::from(spec.txs_per_block.max)) as usize;
        let pool = BTC_POOLS[rng.below(BTC_POOLS.len() as u64) as usize];

        let tx_with_rate = |rng: &mut SynthRng, rate: u64| {
            let vsize = rng.range(110, 1000);
            let inputs = (0..rng.range(1, 3))
                .map(|_| OutPoint { txid: rng.hash(), vout: rng.below(4) as u32 })
                .collect();
            BtcTx {
                txid: rng.hash(),
                vsize,
                fee: rate * vsize,
                inputs,
                total_output_value: rng.range(10_000, 1_000_000_000),
            }
        };
        let planted: Vec<BtcTx> = (0..k).map(|_| tx_with_rate(rng, 1)).collect();
        let mut normal: Vec<BtcTx> = (0..n - k)
            .map(|_| {
                let rate = rng.log_uniform(spec.fee_min, spec.fee_max);
                tx_with_rate(rng, rate)
            })
            .collect();
        normal.sort_by_key(|t| std::cmp::Reverse(t.fee_rate()));

        let fees: u64 = planted.iter().chain(&normal).map(|t| t.fee).sum();
        let coinbase = BtcTx {
            txid: rng.hash(),
            vsize: 150,
            fee: 0,
            inputs: Vec::new(),
            total_output_value: BLOCK_SUBSIDY_SAT + fees,
        };
        accelerated.extend(planted.iter().map(|t| t.txid));
        let mut txs = Vec::with_capacity(n + 1);
        txs.push(coinbase);
        txs.extend(planted);
        txs.extend(normal);

        let hidden: BTreeSet<usize> = rng.sample(n, private_count(spec, n)).into_iter().map(|i| i + 1).collect();
        private.extend(hidden.iter().map(|&i| txs[i].txid));
        snapshots.push(MempoolSnapshot {
            timestamp: timestamp - spec.block_interval / 2,
            pending: (1..txs.len()).filter(|i| !hidden.contains(i)).map(|i| txs[i].txid).collect(),
        });
        blocks.push(ChainBlock::Btc(BtcBlock {
            height,
            timestamp,
            coinbase_tag: format!("Mined by /{pool}/"),
            txs,
        }));
    }
    Corpus {
        spec: spec.clone(),
        blocks,
        bundles: Vec::new(),
        snapshots,
        pools,
        contracts: ContractRegistry::new(),
        liquidations: Vec::new(),
        updates: Vec::new(),
        prices: Vec::new(),
        truth: GroundTruth {
            accelerated: hex_list(accelerated),
            private: hex_list(private),
            ..GroundTruth::default()
        },
    }
}

struct EthCtx<'a> {
    rng: &'a mut SynthRng,
    base_fee: u128,
    dex: Vec<Address>,
}

impl EthCtx<'_> {
    fn tx(&mut self, from: Address, tip: u128, transfer: u128) -> EthTx {
        let headroom = u128::from(self.rng.below(50)) * WEI_PER_GWEI;
        let to = if self.rng.below(2) == 0 {
            Some(self.dex[self.rng.below(self.dex.len() as u64) as usize])
        } else {
            Some(self.rng.address())
        };
        EthTx {
            hash: self.rng.hash(),
            from,
            to,
            gas_used: self.rng.range(21_000, 250_000),
            max_fee_per_gas: self.base_fee + tip + headroom,
            max_priority_fee_per_gas: tip,
            coinbase_transfer: transfer,
            status: TxStatus::Success,
        }
    }

    fn tip(&mut self, spec: &SynthSpec) -> u128 {
        u128::from(self.rng.log_uniform(spec.fee_min, spec.fee_max)) * WEI_PER_GWEI
            + u128::from(self.rng.below(WEI_PER_GWEI as u64))
    }

    fn transfer(&mut self) -> u128 {
        u128::from(self.rng.range(1_000, 50_000_000)) * WEI_PER_GWEI
    }
}

fn gen_eth(spec: &SynthSpec, rng: &mut SynthRng) -> Corpus {
    let miners: Vec<Address> = ETH_POOLS.iter().map(|_| rng.address()).collect();
    let mut pools = PoolRegistry::new();
    for (a, p) in miners.iter().zip(ETH_POOLS) {
        pools.push(a.to_string(), p);
    }
    let dex: Vec<Address> = DEXES.iter().map(|_| rng.address()).collect();
    let contracts: ContractRegistry = dex.iter().zip(DEXES).map(|(a, p)| (*a, p.to_string())).collect();
    let oracle = rng.address();

    let mut blocks = Vec::new();
    let mut bundles = Vec::new();
    let mut snapshots = Vec::new();
    let mut liquidations = Vec::new();
    let mut updates = Vec::new();
    let mut prices = vec![PricePoint {
        block_number: spec.start_height,
        asset: "ETH".into(),
        quote: Quote::Usd,
        price: FixedPoint::new(u128::from(rng.range(150_000, 400_000)), 2),
    }];
    let mut truth = GroundTruth::default();
    let mut private = Vec::new();
    let nblocks = u64::from(spec.blocks);
    let assigned = |total: u32, b: u64| (0..u64::from(total)).filter(move |j| j % nblocks == b).count();

    for b in 0..nblocks {
        let number = spec.start_height + b;
        let timestamp = spec.start_timestamp + b as i64 * spec.block_interval;
        let n = rng.range(u64::from(spec.txs_per_block.min), u64::from(spec.txs_per_block.max)) as usize;
        let miner = miners[rng.below(miners.len() as u64) as usize];
        let base_fee = u128::from(rng.range(20, 120)) * WEI_PER_GWEI;
        let mut ctx = EthCtx { rng: &mut *rng, base_fee, dex: dex.clone() };

        let mut top: Vec<EthTx> = Vec::new();
        // Bundle transactions that never reach the public mempool.
        let mut hidden: BTreeSet<Hash32> = BTreeSet::new();
        let mut records: Vec<(Vec<Hash32>, &'static str)> = Vec::new();

        for _ in 0..assigned(spec.planted_h2, b) {
            let victim = ctx.rng.address();
            let searcher = ctx.rng.address();
            let tip = ctx.tip(spec);
            let public = ctx.tx(victim, tip, 0);
            let transfer = ctx.transfer();
            let pay = ctx.tx(searcher, 0, transfer);
            hidden.insert(pay.hash);
            records.push((vec![public.hash, pay.hash], "h2"));
            top.extend([public, pay]);
        }
        for _ in 0..assigned(spec.planted_h3, b) {
            let attacker = ctx.rng.address();
            let victim = ctx.rng.address();
            let front = ctx.tx(attacker, 0, 0);
            let tip = ctx.tip(spec);
            let public = ctx.tx(victim, tip, 0);
            let transfer = ctx.transfer();
            let back = ctx.tx(attacker, 0, transfer);
            hidden.extend([front.hash, back.hash]);
            records.push((vec![front.hash, public.hash, back.hash], "h3"));
            top.extend([front, public, back]);
        }
        // Liquidation bundles live in odd-offset blocks so the previous
        // block's prices never collide with another bundle's.
        let liq_slot = (b % 2 == 1 && b / 2 < u64::from(spec.planted_liquidations)).then_some(b / 2);
        if let Some(j) = liq_slot {
            let asset = FEED_ASSETS[j as usize % FEED_ASSETS.len()];
            // Token price in ETH with 8 decimals; it rises 5% in this block.
            let p0 = u128::from(ctx.rng.range(500, 50_000)) * 20;
            let p1 = p0 / 20 * 21;
            for (block_number, raw) in [(number - 1, p0), (number, p1)] {
                prices.push(PricePoint {
                    block_number,
                    asset: asset.into(),
                    quote: Quote::Eth,
                    price: FixedPoint::new(raw, 8),
                });
            }
            let keeper = ctx.rng.address();
            let mut update_tx = ctx.tx(keeper, 0, 0);
            update_tx.to = Some(oracle);
            let liquidator = ctx.rng.address();
            let transfer = ctx.transfer();
            let liq_tx = ctx.tx(liquidator, 0, transfer);
            let other = ctx.rng.address();
            let tip = ctx.tip(spec);
            let plain_liq = ctx.tx(other, tip, 0);
            updates.push(OracleUpdate {
                tx_hash: update_tx.hash,
                feed: FeedPair { base: asset.into(), quote: "ETH".into() },
                new_price: FixedPoint::new(p1, 8),
            });
            // Collateral ratio 1.45 after the update (1.5225 before); the
            // unbundled one sits at 1.05, already liquidatable.
            for (tx_hash, pct) in [(liq_tx.hash, 145u128), (plain_liq.hash, 105)] {
                let debt = u128::from(ctx.rng.range(100, 100_000));
                liquidations.push(LiquidationEvent {
                    protocol: Protocol::Aave,
                    tx_hash,
                    block_number: Some(number),
                    debt_asset: asset.into(),
                    debt_repaid: FixedPoint::new(debt, 0),
                    collateral_asset: "WETH".into(),
                    collateral_seized: FixedPoint::new(pct * debt * p1, 10),
                });
            }
            hidden.extend([update_tx.hash, liq_tx.hash]);
            records.push((vec![update_tx.hash, liq_tx.hash], "liq"));
            top.extend([update_tx, liq_tx, plain_liq]);
        }
        for _ in 0..assigned(spec.noise_bundles, b) {
            let sender = ctx.rng.address();
            let size = ctx.rng.range(1, 4);
            let mut ids = Vec::new();
            for _ in 0..size {
                let tip = if ctx.rng.below(2) == 0 { 0 } else { ctx.tip(spec) };
                let transfer = if ctx.rng.below(2) == 0 { 0 } else { ctx.transfer() };
                let tx = ctx.tx(sender, tip, transfer);
                hidden.insert(tx.hash);
                ids.push(tx.hash);
                top.push(tx);
            }
            records.push((ids, "noise"));
        }

        let mut public: Vec<EthTx> = (0..n.saturating_sub(top.len()))
            .map(|_| {
                let from = ctx.rng.address();
                let tip = ctx.tip(spec);
                ctx.tx(from, tip, 0)
            })
            .collect();
        public.sort_by_key(|t| std::cmp::Reverse(t.max_priority_fee_per_gas));

        let relayed: Vec<usize> = (0..public.len()).collect();
        let kept_out: BTreeSet<Hash32> = rng
            .sample(relayed.len(), private_count(spec, top.len() + public.len()).min(relayed.len()))
            .into_iter()
            .map(|i| public[i].hash)
            .collect();

        for (i, (ids, kind)) in records.into_iter().enumerate() {
            let record = BundleRecord {
                block_number: number,
                bundle_index: i as u32,
                tx_hashes: ids,
                tag: BundleTag::Flashbots,
            };
            let id = record.id().to_string();
            match kind {
                "h2" => truth.h2_bundles.push(id),
                "h3" => truth.h3_bundles.push(id),
                "liq" => truth.update_liquidation_bundles.push(id),
                _ => {}
            }
            bundles.push(record);
        }
        let mut txs = top;
        txs.extend(public);
        private.extend(hidden.iter().chain(&kept_out).copied());
        snapshots.push(MempoolSnapshot {
            timestamp: timestamp - spec.block_interval / 2,
            pending: txs
                .iter()
                .map(|t| t.hash)
                .filter(|h| !hidden.contains(h) && !kept_out.contains(h))
                .collect(),
        });
        blocks.push(ChainBlock::Eth(EthBlock { number, timestamp, miner, base_fee_per_gas: base_fee, txs }));
    }
    truth.private = hex_list(private);
    Corpus {
        spec: spec.clone(),
        blocks,
        bundles,
        snapshots,
        pools,
        contracts,
        liquidations,
        updates,
        prices,
        truth,
    }
}
