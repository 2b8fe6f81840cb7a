//! Domain types shared by every analysis.
//!
//! All values are immutable after construction and every money field is an
//! integer in the chain's base unit. Fee-rate comparisons are done by
//! cross-multiplication so ties are detected exactly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use num_rational::BigRational;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::units::{FixedPoint, Sat, Wei};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("base fee {base_fee} wei exceeds max fee {max_fee} wei")]
    BaseFeeExceedsMaxFee { base_fee: Wei, max_fee: Wei },
    #[error("invalid transaction {id}: {reason}")]
    InvalidTx { id: String, reason: String },
    #[error("invalid block {height}: {reason}")]
    InvalidBlock { height: u64, reason: String },
    #[error("arithmetic overflow computing {0}")]
    Overflow(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected {expected} hex characters, got {got:?}")]
pub struct ParseHexError {
    expected: usize,
    got: String,
}

fn parse_hex<const N: usize>(s: &str) -> Result<[u8; N], ParseHexError> {
    let body = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    let mut out = [0u8; N];
    if body.len() != 2 * N {
        return Err(ParseHexError { expected: 2 * N, got: s.to_string() });
    }
    hex::decode_to_slice(body, &mut out)
        .map_err(|_| ParseHexError { expected: 2 * N, got: s.to_string() })?;
    Ok(out)
}

macro_rules! hex_id {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name([u8; $len]);

        impl $name {
            pub const fn from_bytes(bytes: [u8; $len]) -> Self {
                $name(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl FromStr for $name {
            type Err = ParseHexError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_hex::<$len>(s).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(
    /// 32-byte transaction identifier (txid or Ethereum tx hash), rendered
    /// as 64 lowercase hex characters.
    Hash32,
    32
);
hex_id!(
    /// 20-byte Ethereum account address.
    Address,
    20
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chain {
    Btc,
    Eth,
}

impl FromStr for Chain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "btc" => Ok(Chain::Btc),
            "eth" => Ok(Chain::Eth),
            other => Err(format!("unknown chain {other:?} (expected btc or eth)")),
        }
    }
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Chain::Btc => "btc",
            Chain::Eth => "eth",
        })
    }
}

/// Satoshi-per-vbyte fee rate kept as the exact pair `(fee, vsize)`.
#[derive(Debug, Clone, Copy)]
pub struct FeeRate {
    fee: Sat,
    vsize: u64,
}

impl FeeRate {
    /// Returns `None` for a zero vsize.
    pub fn new(fee: Sat, vsize: u64) -> Option<Self> {
        (vsize > 0).then_some(FeeRate { fee, vsize })
    }

    pub fn fee(&self) -> Sat {
        self.fee
    }

    pub fn vsize(&self) -> u64 {
        self.vsize
    }

    /// Same rate with the fee multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Option<Self> {
        self.fee.checked_mul(factor).map(|fee| FeeRate { fee, vsize: self.vsize })
    }
}

impl PartialEq for FeeRate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FeeRate {}

impl PartialOrd for FeeRate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FeeRate {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u128::from(self.fee) * u128::from(other.vsize);
        let rhs = u128::from(other.fee) * u128::from(self.vsize);
        lhs.cmp(&rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OutPoint {
    pub txid: Hash32,
    pub vout: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BtcTx {
    pub txid: Hash32,
    pub vsize: u64,
    pub fee: Sat,
    pub inputs: Vec<OutPoint>,
    pub total_output_value: Sat,
}

impl BtcTx {
    pub fn fee_rate(&self) -> FeeRate {
        FeeRate { fee: self.fee, vsize: self.vsize.max(1) }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.vsize == 0 {
            return Err(ChainError::InvalidTx {
                id: self.txid.to_string(),
                reason: "vsize must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxStatus {
    #[serde(rename = "ok")]
    Success,
    #[serde(rename = "fail")]
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthTx {
    pub hash: Hash32,
    pub from: Address,
    /// `None` for contract creation.
    pub to: Option<Address>,
    pub gas_used: u64,
    pub max_fee_per_gas: Wei,
    pub max_priority_fee_per_gas: Wei,
    pub coinbase_transfer: Wei,
    pub status: TxStatus,
}

impl EthTx {
    /// Folds a pre-London `gas_price` transaction into the dynamic-fee
    /// shape: both caps equal the legacy gas price.
    pub fn normalize_legacy(&mut self, gas_price: Wei) {
        self.max_fee_per_gas = gas_price;
        self.max_priority_fee_per_gas = gas_price;
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.gas_used == 0 {
            return Err(ChainError::InvalidTx {
                id: self.hash.to_string(),
                reason: "gas_used must be positive".into(),
            });
        }
        if self.max_priority_fee_per_gas > self.max_fee_per_gas {
            return Err(ChainError::InvalidTx {
                id: self.hash.to_string(),
                reason: "max priority fee exceeds max fee".into(),
            });
        }
        Ok(())
    }

    /// `min(max_fee, base_fee + max_priority_fee)`.
    pub fn effective_gas_price(&self, base_fee: Wei) -> Result<Wei, ChainError> {
        if base_fee > self.max_fee_per_gas {
            return Err(ChainError::BaseFeeExceedsMaxFee {
                base_fee,
                max_fee: self.max_fee_per_gas,
            });
        }
        let uncapped = base_fee.saturating_add(self.max_priority_fee_per_gas);
        Ok(uncapped.min(self.max_fee_per_gas))
    }

    /// Per-gas amount the block producer keeps (effective price minus the
    /// burned base fee).
    pub fn miner_tip_per_gas(&self, base_fee: Wei) -> Result<Wei, ChainError> {
        Ok(self.effective_gas_price(base_fee)? - base_fee)
    }

    /// Tip times gas used, plus any direct coinbase transfer.
    pub fn miner_reward(&self, base_fee: Wei) -> Result<Wei, ChainError> {
        self.miner_tip_per_gas(base_fee)?
            .checked_mul(u128::from(self.gas_used))
            .and_then(|tips| tips.checked_add(self.coinbase_transfer))
            .ok_or(ChainError::Overflow("miner reward"))
    }

    /// Total fee paid by the sender: effective gas price times gas used.
    pub fn fee_paid(&self, base_fee: Wei) -> Result<Wei, ChainError> {
        self.effective_gas_price(base_fee)?
            .checked_mul(u128::from(self.gas_used))
            .ok_or(ChainError::Overflow("fee paid"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BtcBlock {
    pub height: u64,
    pub timestamp: i64,
    pub coinbase_tag: String,
    /// Position 1 (index 0) is the coinbase transaction.
    pub txs: Vec<BtcTx>,
}

impl BtcBlock {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.txs.is_empty() {
            return Err(ChainError::InvalidBlock {
                height: self.height,
                reason: "block must contain a coinbase transaction".into(),
            });
        }
        let mut seen = HashSet::with_capacity(self.txs.len());
        for tx in &self.txs {
            tx.validate()?;
            if !seen.insert(tx.txid) {
                return Err(ChainError::InvalidBlock {
                    height: self.height,
                    reason: format!("duplicate txid {}", tx.txid),
                });
            }
        }
        Ok(())
    }

    /// Every transaction except the coinbase, in block order.
    pub fn non_coinbase(&self) -> &[BtcTx] {
        self.txs.get(1..).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthBlock {
    pub number: u64,
    pub timestamp: i64,
    pub miner: Address,
    pub base_fee_per_gas: Wei,
    pub txs: Vec<EthTx>,
}

impl EthBlock {
    pub fn validate(&self) -> Result<(), ChainError> {
        let mut seen = HashSet::with_capacity(self.txs.len());
        for tx in &self.txs {
            tx.validate()?;
            if tx.max_fee_per_gas < self.base_fee_per_gas {
                return Err(ChainError::InvalidBlock {
                    height: self.number,
                    reason: format!("tx {} max fee is below the block base fee", tx.hash),
                });
            }
            if !seen.insert(tx.hash) {
                return Err(ChainError::InvalidBlock {
                    height: self.number,
                    reason: format!("duplicate tx hash {}", tx.hash),
                });
            }
        }
        Ok(())
    }

    pub fn tx(&self, hash: &Hash32) -> Option<(usize, &EthTx)> {
        self.txs.iter().enumerate().find(|(_, tx)| tx.hash == *hash)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainBlock {
    Btc(BtcBlock),
    Eth(EthBlock),
}

impl ChainBlock {
    pub fn chain(&self) -> Chain {
        match self {
            ChainBlock::Btc(_) => Chain::Btc,
            ChainBlock::Eth(_) => Chain::Eth,
        }
    }

    pub fn height(&self) -> u64 {
        match self {
            ChainBlock::Btc(b) => b.height,
            ChainBlock::Eth(b) => b.number,
        }
    }

    pub fn timestamp(&self) -> i64 {
        match self {
            ChainBlock::Btc(b) => b.timestamp,
            ChainBlock::Eth(b) => b.timestamp,
        }
    }

    /// Raw coinbase tag (btc) or hex miner address (eth).
    pub fn miner_marker(&self) -> String {
        match self {
            ChainBlock::Btc(b) => b.coinbase_tag.clone(),
            ChainBlock::Eth(b) => b.miner.to_string(),
        }
    }

    pub fn base_fee_per_gas(&self) -> Option<Wei> {
        match self {
            ChainBlock::Btc(_) => None,
            ChainBlock::Eth(b) => Some(b.base_fee_per_gas),
        }
    }

    pub fn tx_count(&self) -> usize {
        match self {
            ChainBlock::Btc(b) => b.txs.len(),
            ChainBlock::Eth(b) => b.txs.len(),
        }
    }

    /// Transaction ids in block order. The btc coinbase is skipped because
    /// it never travels through a mempool.
    pub fn relayed_tx_ids(&self) -> Vec<Hash32> {
        match self {
            ChainBlock::Btc(b) => b.non_coinbase().iter().map(|t| t.txid).collect(),
            ChainBlock::Eth(b) => b.txs.iter().map(|t| t.hash).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        match self {
            ChainBlock::Btc(b) => b.validate(),
            ChainBlock::Eth(b) => b.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleTag {
    Flashbots,
    Rogue,
    MinerPayout,
}

impl BundleTag {
    pub const ALL: [BundleTag; 3] = [BundleTag::Flashbots, BundleTag::Rogue, BundleTag::MinerPayout];

    pub fn as_str(&self) -> &'static str {
        match self {
            BundleTag::Flashbots => "flashbots",
            BundleTag::Rogue => "rogue",
            BundleTag::MinerPayout => "miner_payout",
        }
    }
}

impl FromStr for BundleTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BundleTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

impl fmt::Display for BundleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered group of transactions mined atomically, as exported by a
/// private relay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleRecord {
    pub block_number: u64,
    pub bundle_index: u32,
    pub tx_hashes: Vec<Hash32>,
    pub tag: BundleTag,
}

impl BundleRecord {
    pub fn id(&self) -> BundleId {
        BundleId { block_number: self.block_number, bundle_index: self.bundle_index }
    }

    pub fn len(&self) -> usize {
        self.tx_hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx_hashes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BundleId {
    pub block_number: u64,
    pub bundle_index: u32,
}

impl fmt::Display for BundleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.block_number, self.bundle_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MempoolSnapshot {
    pub timestamp: i64,
    /// Ids pending at `timestamp`; order is kept for serialization only.
    pub pending: Vec<Hash32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Aave,
    Compound,
}

impl Protocol {
    /// Currency the protocol's oracle prices its assets in.
    pub fn reference_quote(&self) -> Quote {
        match self {
            Protocol::Aave => Quote::Eth,
            Protocol::Compound => Quote::Usd,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Aave => "aave",
            Protocol::Compound => "compound",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aave" => Ok(Protocol::Aave),
            "compound" => Ok(Protocol::Compound),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quote {
    #[serde(rename = "ETH")]
    Eth,
    #[serde(rename = "USD")]
    Usd,
}

impl fmt::Display for Quote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quote::Eth => "ETH",
            Quote::Usd => "USD",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiquidationEvent {
    pub protocol: Protocol,
    pub tx_hash: Hash32,
    /// Block the liquidation was mined in, when the export carries it.
    pub block_number: Option<u64>,
    pub debt_asset: String,
    pub debt_repaid: FixedPoint,
    pub collateral_asset: String,
    pub collateral_seized: FixedPoint,
}

impl LiquidationEvent {
    pub fn validate(&self) -> Result<(), String> {
        for (what, amount) in [("debt_repaid", &self.debt_repaid), ("collateral_seized", &self.collateral_seized)] {
            if amount.raw == 0 {
                return Err(format!("{what} must be positive"));
            }
            if !amount.is_valid() {
                return Err(format!("{what} decimals must be in [0, 36]"));
            }
        }
        if !is_symbol(&self.debt_asset) || !is_symbol(&self.collateral_asset) {
            return Err("asset symbols must be non-empty alphanumeric".into());
        }
        Ok(())
    }
}

pub(crate) fn is_symbol(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_')
}

/// Price-feed label of the form `BASE-QUOTE`, e.g. `USDC-ETH`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeedPair {
    pub base: String,
    pub quote: String,
}

impl FromStr for FeedPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('-') {
            Some((base, quote)) if is_symbol(base) && is_symbol(quote) => Ok(FeedPair {
                base: base.to_string(),
                quote: quote.to_string(),
            }),
            _ => Err(format!("feed label {s:?} is not of the form BASE-QUOTE")),
        }
    }
}

impl fmt::Display for FeedPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.base, self.quote)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleUpdate {
    pub tx_hash: Hash32,
    pub feed: FeedPair,
    pub new_price: FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PricePoint {
    pub block_number: u64,
    pub asset: String,
    pub quote: Quote,
    pub price: FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("duplicate price for {asset}/{quote} at block {block_number}")]
pub struct DuplicatePrice {
    pub block_number: u64,
    pub asset: String,
    pub quote: Quote,
}

/// Block-indexed oracle prices. A lookup at block `h` returns the latest
/// point at or before `h`, since an on-chain feed keeps its value until the
/// next update.
#[derive(Debug, Clone, Default)]
pub struct PriceStore {
    series: BTreeMap<(String, Quote), BTreeMap<u64, FixedPoint>>,
}

impl PriceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, point: PricePoint) -> Result<(), DuplicatePrice> {
        let series = self.series.entry((point.asset.clone(), point.quote)).or_default();
        if series.contains_key(&point.block_number) {
            return Err(DuplicatePrice {
                block_number: point.block_number,
                asset: point.asset,
                quote: point.quote,
            });
        }
        series.insert(point.block_number, point.price);
        Ok(())
    }

    pub fn price_at(&self, block: u64, asset: &str, quote: Quote) -> Option<BigRational> {
        if let Some(p) = self
            .series
            .get(&(asset.to_string(), quote))
            .and_then(|s| s.range(..=block).next_back())
        {
            return Some(p.1.to_rational());
        }
        // Ether and its wrapped token are the unit of an ETH quote.
        if quote == Quote::Eth && matches!(asset, "ETH" | "WETH") {
            return Some(FixedPoint::one().to_rational());
        }
        None
    }

    pub fn len(&self) -> usize {
        self.series.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> impl Iterator<Item = PricePoint> + '_ {
        self.series.iter().flat_map(|((asset, quote), s)| {
            s.iter().map(move |(block, price)| PricePoint {
                block_number: *block,
                asset: asset.clone(),
                quote: *quote,
                price: *price,
            })
        })
    }
}
