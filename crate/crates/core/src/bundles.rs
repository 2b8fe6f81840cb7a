//! Bundle economics and the two heuristics for public transactions that
//! ended up inside bundles.
//!
//! A bundle's actual priority fee is what the miner earns from it per unit
//! of gas: the sum of per-gas tips times gas, plus direct coinbase
//! transfers, divided by total gas.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::chain::{
    Address, BundleId, BundleRecord, BundleTag, ChainBlock, ChainError, EthBlock, EthTx, Hash32, TxStatus,
};
use crate::ingest::{ContractRegistry, PoolRegistry};
use crate::stats::{self, Summary};
use crate::units::{percent, Wei};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BundleError {
    #[error("bundle {bundle}: transaction {hash} not found in block")]
    UnresolvedTx { bundle: BundleId, hash: Hash32 },
    #[error("bundle {0}: block not in corpus")]
    MissingBlock(BundleId),
    #[error("bundle {0}: total gas is zero")]
    ZeroGas(BundleId),
    #[error("bundle {bundle}: expected {expected} transactions, found {actual}")]
    WrongSize { bundle: BundleId, expected: usize, actual: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Eth blocks by number.
#[derive(Debug, Clone, Default)]
pub struct EthBlockIndex<'a> {
    blocks: BTreeMap<u64, &'a EthBlock>,
}

impl<'a> EthBlockIndex<'a> {
    pub fn new(blocks: impl IntoIterator<Item = &'a EthBlock>) -> Self {
        EthBlockIndex { blocks: blocks.into_iter().map(|b| (b.number, b)).collect() }
    }

    pub fn from_chain_blocks(blocks: impl IntoIterator<Item = &'a ChainBlock>) -> Self {
        Self::new(blocks.into_iter().filter_map(|b| match b {
            ChainBlock::Eth(b) => Some(b),
            ChainBlock::Btc(_) => None,
        }))
    }

    pub fn get(&self, number: u64) -> Option<&'a EthBlock> {
        self.blocks.get(&number).copied()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a EthBlock> + '_ {
        self.blocks.values().copied()
    }

    pub fn block_for(&self, bundle: &BundleRecord) -> Result<&'a EthBlock, BundleError> {
        self.get(bundle.block_number).ok_or(BundleError::MissingBlock(bundle.id()))
    }
}

/// The bundle's transactions, looked up in its block, in bundle order.
pub fn resolve<'b>(bundle: &BundleRecord, block: &'b EthBlock) -> Result<Vec<&'b EthTx>, BundleError> {
    if block.number != bundle.block_number {
        return Err(BundleError::MissingBlock(bundle.id()));
    }
    bundle
        .tx_hashes
        .iter()
        .map(|h| {
            block
                .tx(h)
                .map(|(_, tx)| tx)
                .ok_or(BundleError::UnresolvedTx { bundle: bundle.id(), hash: *h })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleEconomics {
    pub bundle: BundleId,
    pub tag: BundleTag,
    pub tx_count: usize,
    pub total_gas: u128,
    pub total_reward: Wei,
}

impl BundleEconomics {
    /// Miner reward per unit of gas, in wei.
    pub fn actual_fee(&self) -> BigRational {
        BigRational::new(BigInt::from(self.total_reward), BigInt::from(self.total_gas))
    }
}

pub fn bundle_economics(bundle: &BundleRecord, block: &EthBlock) -> Result<BundleEconomics, BundleError> {
    let txs = resolve(bundle, block)?;
    let mut total_gas = 0u128;
    let mut total_reward: Wei = 0;
    for tx in &txs {
        total_gas += u128::from(tx.gas_used);
        total_reward = total_reward
            .checked_add(tx.miner_reward(block.base_fee_per_gas)?)
            .ok_or(ChainError::Overflow("bundle reward"))?;
    }
    if total_gas == 0 {
        return Err(BundleError::ZeroGas(bundle.id()));
    }
    Ok(BundleEconomics {
        bundle: bundle.id(),
        tag: bundle.tag,
        tx_count: txs.len(),
        total_gas,
        total_reward,
    })
}

/// What the heuristics look at in each bundle transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxView {
    pub issuer: Address,
    /// Declared max priority fee per gas.
    pub tip: Wei,
    pub transfer: Wei,
}

impl From<&EthTx> for TxView {
    fn from(tx: &EthTx) -> Self {
        TxView {
            issuer: tx.from,
            tip: tx.max_priority_fee_per_gas,
            transfer: tx.coinbase_transfer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Heuristic {
    /// A tipping public transaction followed by a different sender's
    /// zero-tip transaction that pays the miner directly.
    H2,
    /// Sandwich: same sender first and last around someone else's tipping
    /// transaction, paid for by the last one.
    H3,
}

impl Heuristic {
    pub const ALL: [Heuristic; 2] = [Heuristic::H2, Heuristic::H3];

    pub fn bundle_size(self) -> usize {
        match self {
            Heuristic::H2 => 2,
            Heuristic::H3 => 3,
        }
    }

    /// Index of the captured public transaction.
    pub fn public_index(self) -> usize {
        match self {
            Heuristic::H2 => 0,
            Heuristic::H3 => 1,
        }
    }

    /// `Err(actual_len)` when the bundle has the wrong size.
    pub fn matches(self, txs: &[TxView]) -> Result<bool, usize> {
        if txs.len() != self.bundle_size() {
            return Err(txs.len());
        }
        Ok(match self {
            Heuristic::H2 => {
                let (a, b) = (&txs[0], &txs[1]);
                a.issuer != b.issuer && a.tip > 0 && a.transfer == 0 && b.tip == 0 && b.transfer > 0
            }
            Heuristic::H3 => {
                let (a, v, c) = (&txs[0], &txs[1], &txs[2]);
                a.issuer == c.issuer && v.issuer != a.issuer && a.tip == 0 && c.tip == 0 && v.tip > 0 && c.transfer > 0
            }
        })
    }

    pub fn detect(self, bundle: &BundleRecord, block: &EthBlock) -> Result<bool, BundleError> {
        if bundle.len() != self.bundle_size() {
            return Err(BundleError::WrongSize {
                bundle: bundle.id(),
                expected: self.bundle_size(),
                actual: bundle.len(),
            });
        }
        let views: Vec<TxView> = resolve(bundle, block)?.into_iter().map(TxView::from).collect();
        Ok(self.matches(&views).expect("size checked"))
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heuristic::H2 => "h2",
            Heuristic::H3 => "h3",
        })
    }
}

impl FromStr for Heuristic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "h2" => Ok(Heuristic::H2),
            "h3" => Ok(Heuristic::H3),
            other => Err(format!("unknown heuristic {other:?}")),
        }
    }
}

pub fn detect_h2(bundle: &BundleRecord, block: &EthBlock) -> Result<bool, BundleError> {
    Heuristic::H2.detect(bundle, block)
}

pub fn detect_h3_sandwich(bundle: &BundleRecord, block: &EthBlock) -> Result<bool, BundleError> {
    Heuristic::H3.detect(bundle, block)
}

/// A bundle matched by a heuristic, with its fee gap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeuristicMatch {
    pub heuristic: Heuristic,
    pub economics: BundleEconomics,
    pub public_tx: Hash32,
    /// Per-gas tip the miner would have earned from the public transaction
    /// alone.
    pub public_tip: Wei,
}

impl HeuristicMatch {
    /// Actual bundle fee minus the public transaction's tip, wei per gas.
    pub fn gap(&self) -> BigRational {
        self.economics.actual_fee() - BigRational::from_integer(BigInt::from(self.public_tip))
    }
}

/// `Ok(None)` when the bundle has the right size but does not match.
pub fn match_heuristic(
    heuristic: Heuristic,
    bundle: &BundleRecord,
    block: &EthBlock,
) -> Result<Option<HeuristicMatch>, BundleError> {
    if bundle.len() != heuristic.bundle_size() || !heuristic.detect(bundle, block)? {
        return Ok(None);
    }
    let txs = resolve(bundle, block)?;
    let public = txs[heuristic.public_index()];
    Ok(Some(HeuristicMatch {
        heuristic,
        economics: bundle_economics(bundle, block)?,
        public_tx: public.hash,
        public_tip: public.miner_tip_per_gas(block.base_fee_per_gas)?,
    }))
}

/// CDF of fee gaps in wei per gas.
pub fn fee_gap_distribution<'a>(matches: impl IntoIterator<Item = &'a HeuristicMatch>) -> Vec<stats::CdfRow> {
    let gaps: Vec<BigRational> = matches.into_iter().map(HeuristicMatch::gap).collect();
    stats::empirical_cdf(&gaps)
}

/// Per-transaction fee breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxEconomics {
    pub block_number: u64,
    pub hash: Hash32,
    pub base_fee: Wei,
    pub max_priority_fee: Wei,
    pub max_fee: Wei,
    pub effective_gas_price: Wei,
    pub miner_tip: Wei,
    pub gas_used: u64,
    pub fee_paid: Wei,
    pub coinbase_transfer: Wei,
}

pub fn tx_economics(block: &EthBlock) -> Result<Vec<TxEconomics>, ChainError> {
    let base = block.base_fee_per_gas;
    block
        .txs
        .iter()
        .map(|tx| {
            Ok(TxEconomics {
                block_number: block.number,
                hash: tx.hash,
                base_fee: base,
                max_priority_fee: tx.max_priority_fee_per_gas,
                max_fee: tx.max_fee_per_gas,
                effective_gas_price: tx.effective_gas_price(base)?,
                miner_tip: tx.miner_tip_per_gas(base)?,
                gas_used: tx.gas_used,
                fee_paid: tx.fee_paid(base)?,
                coinbase_transfer: tx.coinbase_transfer,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleStats {
    pub bundles: usize,
    pub size: Option<Summary>,
    pub size_std: BigRational,
    /// Over every block in the corpus, including blocks without bundles.
    pub per_block: Option<Summary>,
    pub per_block_std: BigRational,
    pub blocks: usize,
    pub blocks_with_bundle: usize,
    pub pool_bundles: BTreeMap<String, usize>,
    /// Bundle transaction references per tag.
    pub tag_txs: BTreeMap<BundleTag, usize>,
    pub resolved_txs: usize,
    pub failed_txs: usize,
}

impl BundleStats {
    pub fn block_share(&self) -> BigRational {
        share(self.blocks_with_bundle, self.blocks)
    }

    pub fn pool_share(&self, pool: &str) -> BigRational {
        share(self.pool_bundles.get(pool).copied().unwrap_or(0), self.bundles)
    }

    pub fn tag_share(&self, tag: BundleTag) -> BigRational {
        let total: usize = self.tag_txs.values().sum();
        share(self.tag_txs.get(&tag).copied().unwrap_or(0), total)
    }

    /// Failed transactions among bundle transactions found in the corpus.
    pub fn failed_share(&self) -> BigRational {
        share(self.failed_txs, self.resolved_txs)
    }
}

fn share(part: usize, total: usize) -> BigRational {
    if total == 0 {
        return BigRational::zero();
    }
    percent(part as u128, total as u128)
}

fn int(v: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn bundle_stats(bundles: &[BundleRecord], blocks: &EthBlockIndex<'_>, registry: &PoolRegistry) -> BundleStats {
    let sizes: Vec<BigRational> = bundles.iter().map(|b| int(b.len())).collect();
    let mut per_block: BTreeMap<u64, usize> = blocks.iter().map(|b| (b.number, 0)).collect();
    let mut pool_bundles = BTreeMap::new();
    let mut tag_txs = BTreeMap::new();
    let (mut resolved_txs, mut failed_txs) = (0, 0);
    for b in bundles {
        *tag_txs.entry(b.tag).or_insert(0) += b.len();
        let block = blocks.get(b.block_number);
        if let Some(count) = per_block.get_mut(&b.block_number) {
            *count += 1;
        }
        let pool = block.map_or(crate::ingest::UNKNOWN_POOL, |blk| registry.attribute_address(&blk.miner));
        *pool_bundles.entry(pool.to_string()).or_insert(0) += 1;
        if let Some(block) = block {
            for h in &b.tx_hashes {
                if let Some((_, tx)) = block.tx(h) {
                    resolved_txs += 1;
                    if tx.status == TxStatus::Failed {
                        failed_txs += 1;
                    }
                }
            }
        }
    }
    let counts: Vec<BigRational> = per_block.values().map(|c| int(*c)).collect();
    BundleStats {
        bundles: bundles.len(),
        size: stats::summarize(&sizes),
        size_std: stats::std_dev(&sizes),
        per_block: stats::summarize(&counts),
        per_block_std: stats::std_dev(&counts),
        blocks: per_block.len(),
        blocks_with_bundle: per_block.values().filter(|c| **c > 0).count(),
        pool_bundles,
        tag_txs,
        resolved_txs,
        failed_txs,
    }
}

/// Distinct bundles and transactions calling each registered contract
/// owner. A bundle counts once per protocol it touches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DexCensus {
    pub protocols: BTreeMap<String, (BTreeSet<BundleId>, BTreeSet<Hash32>)>,
    pub any: (BTreeSet<BundleId>, BTreeSet<Hash32>),
}

impl DexCensus {
    pub fn add(&mut self, bundle: &BundleRecord, block: &EthBlock, registry: &ContractRegistry) {
        for h in &bundle.tx_hashes {
            let Some((_, tx)) = block.tx(h) else { continue };
            let Some(protocol) = tx.to.as_ref().and_then(|to| registry.get(to)) else {
                continue;
            };
            let entry = self.protocols.entry(protocol.clone()).or_default();
            entry.0.insert(bundle.id());
            entry.1.insert(tx.hash);
            self.any.0.insert(bundle.id());
            self.any.1.insert(tx.hash);
        }
    }

    pub fn merge(&mut self, other: DexCensus) {
        for (p, (b, t)) in other.protocols {
            let e = self.protocols.entry(p).or_default();
            e.0.extend(b);
            e.1.extend(t);
        }
        self.any.0.extend(other.any.0);
        self.any.1.extend(other.any.1);
    }

    /// `(protocol, bundles, txs)` per protocol, in name order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, usize, usize)> {
        self.protocols.iter().map(|(p, (b, t))| (p.as_str(), b.len(), t.len()))
    }
}

pub fn dex_call_census(bundles: &[BundleRecord], blocks: &EthBlockIndex<'_>, registry: &ContractRegistry) -> DexCensus {
    let mut census = DexCensus::default();
    for b in bundles {
        if let Some(block) = blocks.get(b.block_number) {
            census.add(b, block, registry);
        }
    }
    census
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::WEI_PER_GWEI;
    use proptest::prelude::*;

    const GWEI: u128 = WEI_PER_GWEI;

    fn h(n: u64) -> Hash32 {
        let mut b = [0u8; 32];
        b[24..].copy_from_slice(&n.to_be_bytes());
        Hash32::from_bytes(b)
    }

    fn addr(n: u8) -> Address {
        Address::from_bytes([n; 20])
    }

    fn etx(n: u64, from: u8, gas: u64, tip: u128, transfer: u128) -> EthTx {
        EthTx {
            hash: h(n),
            from: addr(from),
            to: Some(addr(200)),
            gas_used: gas,
            max_fee_per_gas: 1000 * GWEI,
            max_priority_fee_per_gas: tip,
            coinbase_transfer: transfer,
            status: TxStatus::Success,
        }
    }

    fn eblock(txs: Vec<EthTx>) -> EthBlock {
        EthBlock {
            number: 7,
            timestamp: 1_630_000_000,
            miner: addr(99),
            base_fee_per_gas: 50 * GWEI,
            txs,
        }
    }

    fn bundle(index: u32, ids: &[u64]) -> BundleRecord {
        BundleRecord {
            block_number: 7,
            bundle_index: index,
            tx_hashes: ids.iter().map(|n| h(*n)).collect(),
            tag: BundleTag::Flashbots,
        }
    }

    fn gwei(n: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(n) * BigInt::from(GWEI))
    }

    #[test]
    fn hand_computed_economics() {
        let block = eblock(vec![
            etx(1, 1, 100_000, 2 * GWEI, 0),
            etx(2, 2, 100_000, 0, 400_000 * GWEI),
        ]);
        let e = bundle_economics(&bundle(0, &[1, 2]), &block).unwrap();
        assert_eq!(e.total_reward, 600_000 * GWEI);
        assert_eq!(e.total_gas, 200_000);
        assert_eq!(e.actual_fee(), gwei(3));
        assert_eq!(crate::units::format_gwei(&e.actual_fee()), "3.000000000");

        let e = bundle_economics(&bundle(1, &[1]), &block).unwrap();
        assert_eq!(e.actual_fee(), gwei(2));

        let block = eblock(vec![etx(3, 1, 21_000, 0, 0)]);
        assert!(bundle_economics(&bundle(0, &[3]), &block).unwrap().actual_fee().is_zero());
    }

    #[test]
    fn economics_errors() {
        let block = eblock(vec![etx(1, 1, 0, GWEI, 0)]);
        assert!(matches!(bundle_economics(&bundle(0, &[2]), &block), Err(BundleError::UnresolvedTx { .. })));
        assert!(matches!(bundle_economics(&bundle(0, &[1]), &block), Err(BundleError::ZeroGas(_))));
    }

    #[test]
    fn h2_examples() {
        let block = eblock(vec![
            etx(1, 1, 21_000, GWEI, 0),
            etx(2, 2, 50_000, 0, GWEI),
            etx(3, 1, 50_000, 0, GWEI),
            etx(4, 1, 21_000, GWEI, 5),
        ]);
        assert!(detect_h2(&bundle(0, &[1, 2]), &block).unwrap());
        assert!(!detect_h2(&bundle(0, &[1, 3]), &block).unwrap());
        assert!(!detect_h2(&bundle(0, &[4, 2]), &block).unwrap());
        assert!(matches!(
            detect_h2(&bundle(0, &[1, 2, 3]), &block),
            Err(BundleError::WrongSize { expected: 2, actual: 3, .. })
        ));
    }

    #[test]
    fn h3_examples() {
        let block = eblock(vec![
            etx(1, 1, 90_000, 0, 0),
            etx(2, 2, 21_000, 3 * GWEI, 0),
            etx(3, 1, 90_000, 0, GWEI),
            etx(4, 3, 90_000, 0, GWEI),
            etx(5, 1, 90_000, GWEI, 0),
        ]);
        assert!(detect_h3_sandwich(&bundle(0, &[1, 2, 3]), &block).unwrap());
        assert!(!detect_h3_sandwich(&bundle(0, &[1, 2, 4]), &block).unwrap());
        assert!(!detect_h3_sandwich(&bundle(0, &[5, 2, 3]), &block).unwrap());
        assert!(matches!(detect_h3_sandwich(&bundle(0, &[1, 2]), &block), Err(BundleError::WrongSize { .. })));
    }

    #[test]
    fn fee_gap_examples() {
        // Base fee is 50 gwei and max fee 1000 gwei, so the public tip is
        // the declared one.
        let block = eblock(vec![
            etx(1, 1, 100_000, GWEI, 0),
            etx(2, 2, 100_000, 0, 500_000 * GWEI),
        ]);
        let m = match_heuristic(Heuristic::H2, &bundle(0, &[1, 2]), &block).unwrap().unwrap();
        assert_eq!(m.economics.actual_fee(), gwei(3));
        assert_eq!(m.public_tip, GWEI);
        assert_eq!(m.gap(), gwei(2));

        let block = eblock(vec![etx(1, 1, 100_000, GWEI, 0), etx(2, 2, 100_000, 0, 100_000 * GWEI)]);
        let m = match_heuristic(Heuristic::H2, &bundle(0, &[1, 2]), &block).unwrap().unwrap();
        assert!(m.gap().is_zero());

        let rows = fee_gap_distribution([&m]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].cum_pct, BigRational::from_integer(100.into()));

        assert!(match_heuristic(Heuristic::H3, &bundle(0, &[1, 2]), &block).unwrap().is_none());
    }

    #[test]
    fn stats_examples() {
        let mut blocks: Vec<EthBlock> = Vec::new();
        for n in 0..100u64 {
            let mut b = eblock(vec![etx(n * 10 + 1, 1, 21_000, GWEI, 0)]);
            b.number = n;
            blocks.push(b);
        }
        blocks[3].txs[0].status = TxStatus::Failed;
        let index = EthBlockIndex::new(&blocks);
        let bundles: Vec<BundleRecord> = (0..52u64)
            .map(|n| BundleRecord {
                block_number: n,
                bundle_index: 0,
                tx_hashes: vec![h(n * 10 + 1)],
                tag: if n < 13 { BundleTag::Rogue } else { BundleTag::Flashbots },
            })
            .collect();
        let mut reg = PoolRegistry::new();
        reg.push(addr(99).to_string(), "Ethermine");
        let s = bundle_stats(&bundles, &index, &reg);
        assert_eq!(s.block_share(), BigRational::from_integer(52.into()));
        assert_eq!(s.pool_share("Ethermine"), BigRational::from_integer(100.into()));
        assert_eq!(s.tag_share(BundleTag::Rogue), BigRational::from_integer(25.into()));
        let total: BigRational = BundleTag::ALL.iter().map(|t| s.tag_share(*t)).sum();
        assert_eq!(total, BigRational::from_integer(100.into()));
        assert_eq!(s.failed_share(), BigRational::new(100.into(), 52.into()));
        assert_eq!(s.per_block.as_ref().unwrap().max, BigRational::from_integer(1.into()));

        let single = bundle_stats(&bundles[..1], &index, &reg);
        let size = single.size.unwrap();
        assert_eq!((size.mean, size.max), (int(1), int(1)));
    }

    #[test]
    fn census_examples() {
        let mut a = etx(1, 1, 21_000, GWEI, 0);
        a.to = Some(addr(10));
        let mut b = etx(2, 1, 21_000, GWEI, 0);
        b.to = Some(addr(11));
        let mut c = etx(3, 2, 21_000, GWEI, 0);
        c.to = Some(addr(10));
        let d = etx(4, 2, 21_000, GWEI, 0);
        let block = eblock(vec![a, b, c, d]);
        let blocks = [block];
        let index = EthBlockIndex::new(&blocks);
        let reg: ContractRegistry = [(addr(10), "Uniswap".to_string()), (addr(11), "Sushiswap".to_string())].into();

        let census = dex_call_census(&[bundle(0, &[4])], &index, &reg);
        assert_eq!(census.rows().count(), 0);

        let census = dex_call_census(&[bundle(0, &[1, 2])], &index, &reg);
        assert_eq!(census.rows().collect::<Vec<_>>(), vec![("Sushiswap", 1, 1), ("Uniswap", 1, 1)]);
        assert_eq!(census.any.0.len(), 1);

        let one: ContractRegistry = [(addr(10), "Uniswap".to_string())].into();
        let mut c2 = etx(5, 3, 21_000, GWEI, 0);
        c2.to = Some(addr(10));
        let mut blk = blocks[0].clone();
        blk.txs.push(c2);
        let blocks = [blk];
        let index = EthBlockIndex::new(&blocks);
        let census = dex_call_census(&[bundle(0, &[1, 3]), bundle(1, &[5, 4])], &index, &one);
        assert_eq!(census.rows().collect::<Vec<_>>(), vec![("Uniswap", 2, 3)]);
    }

    /// Truth-table oracle for H2 written directly over condition bits.
    fn h2_oracle(same: bool, tip1: bool, tr1: bool, tip2: bool, tr2: bool) -> bool {
        !same && tip1 && !tr1 && !tip2 && tr2
    }

    /// Truth-table oracle for H3. `issuers` assigns a sender label to each
    /// of the three positions.
    fn h3_oracle(issuers: [u8; 3], tips: [bool; 3], trs: [bool; 3]) -> bool {
        issuers[0] == issuers[2] && issuers[1] != issuers[0] && !tips[0] && !tips[2] && tips[1] && trs[2]
    }

    fn bit(mask: u32, i: u32) -> bool {
        mask >> i & 1 == 1
    }

    fn view(issuer: u8, tip: bool, tr: bool) -> TxView {
        TxView {
            issuer: addr(issuer),
            tip: if tip { 7 } else { 0 },
            transfer: if tr { 11 } else { 0 },
        }
    }

    #[test]
    fn h2_truth_table() {
        let mut cases = 0;
        for mask in 0..32u32 {
            let same = bit(mask, 0);
            let views = [view(1, bit(mask, 1), bit(mask, 2)), view(if same { 1 } else { 2 }, bit(mask, 3), bit(mask, 4))];
            let want = h2_oracle(same, bit(mask, 1), bit(mask, 2), bit(mask, 3), bit(mask, 4));
            assert_eq!(Heuristic::H2.matches(&views), Ok(want), "case {mask:05b}");
            cases += 1;
        }
        assert_eq!(cases, 32);
    }

    #[test]
    fn h3_truth_table() {
        // Every partition of three positions into sender groups.
        let partitions = [[1, 1, 1], [1, 1, 2], [1, 2, 1], [1, 2, 2], [1, 2, 3]];
        let mut cases = 0;
        for issuers in partitions {
            for mask in 0..64u32 {
                let tips = [bit(mask, 0), bit(mask, 1), bit(mask, 2)];
                let trs = [bit(mask, 3), bit(mask, 4), bit(mask, 5)];
                let views: Vec<_> = (0..3).map(|i| view(issuers[i], tips[i], trs[i])).collect();
                assert_eq!(
                    Heuristic::H3.matches(&views),
                    Ok(h3_oracle(issuers, tips, trs)),
                    "issuers {issuers:?} case {mask:06b}"
                );
                cases += 1;
            }
        }
        assert_eq!(cases, 320);
    }

    proptest! {
        #[test]
        fn economics_are_additive_and_mediant(
            left in prop::collection::vec((1u64..500_000, 0u128..200, 0u128..1_000_000), 1..5),
            right in prop::collection::vec((1u64..500_000, 0u128..200, 0u128..1_000_000), 1..5),
        ) {
            let mut txs = Vec::new();
            let mut next = 1;
            let mut ids = |spec: &[(u64, u128, u128)], txs: &mut Vec<EthTx>| {
                spec.iter().map(|(gas, tip, tr)| {
                    txs.push(etx(next, 1, *gas, tip * GWEI / 10, tr * GWEI));
                    next += 1;
                    next - 1
                }).collect::<Vec<u64>>()
            };
            let l = ids(&left, &mut txs);
            let r = ids(&right, &mut txs);
            let block = eblock(txs);
            let both: Vec<u64> = l.iter().chain(&r).copied().collect();
            let a = bundle_economics(&bundle(0, &l), &block).unwrap();
            let b = bundle_economics(&bundle(1, &r), &block).unwrap();
            let ab = bundle_economics(&bundle(2, &both), &block).unwrap();
            prop_assert_eq!(ab.total_gas, a.total_gas + b.total_gas);
            prop_assert_eq!(ab.total_reward, a.total_reward + b.total_reward);
            let (lo, hi) = if a.actual_fee() <= b.actual_fee() { (a.actual_fee(), b.actual_fee()) } else { (b.actual_fee(), a.actual_fee()) };
            prop_assert!(lo <= ab.actual_fee() && ab.actual_fee() <= hi);
            prop_assert_eq!(
                ab.actual_fee() * BigRational::from_integer(BigInt::from(ab.total_gas)),
                BigRational::from_integer(BigInt::from(ab.total_reward))
            );
        }
    }
}
