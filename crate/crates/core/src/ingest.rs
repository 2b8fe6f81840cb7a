//! Streaming readers for every input format, plus the canonical writers the
//! synthetic generator uses.
//!
//! All record files are JSON Lines. Registries are tab-separated. Readers
//! work line by line, so memory stays bounded by the largest single record.
//! Under [`BadInputPolicy::FailFast`] the first bad line is returned as an
//! error carrying its line number; under [`BadInputPolicy::SkipAndCount`]
//! bad lines are logged, counted, and skipped.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::marker::PhantomData;
use std::path::Path;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::chain::{
    Address, BtcBlock, BtcTx, BundleRecord, BundleTag, Chain, ChainBlock, EthBlock, EthTx,
    FeedPair, Hash32, LiquidationEvent, MempoolSnapshot, OracleUpdate, OutPoint, PricePoint,
    PriceStore, Protocol, Quote, TxStatus,
};
use crate::units::{parse_decimal, FixedPoint, Wei, MAX_DECIMALS};

/// Pool name used when no registry rule matches.
pub const UNKNOWN_POOL: &str = "Unknown";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{source_name}:{line}: {reason}")]
    MalformedLine { source_name: String, line: usize, reason: String },
    #[error("{source_name}:{line}: unknown bundle tag {value:?}")]
    UnknownTag { source_name: String, line: usize, value: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl IngestError {
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::MalformedLine { line, .. } | IngestError::UnknownTag { line, .. } => Some(*line),
            IngestError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BadInputPolicy {
    #[default]
    FailFast,
    SkipAndCount,
}

/// What went wrong on a single line, before the location is attached.
#[derive(Debug)]
pub enum LineError {
    Malformed(String),
    UnknownTag(String),
}

impl From<serde_json::Error> for LineError {
    fn from(e: serde_json::Error) -> Self {
        LineError::Malformed(e.to_string())
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Line-oriented reader applying `parse` to every non-blank line.
pub struct LineReader<R, T, F> {
    input: R,
    source_name: String,
    line_no: usize,
    buf: String,
    policy: BadInputPolicy,
    skipped: usize,
    parse: F,
    done: bool,
    _out: PhantomData<fn() -> T>,
}

impl<R, T, F> LineReader<R, T, F>
where
    R: BufRead,
    F: FnMut(&str) -> Result<T, LineError>,
{
    pub fn new(input: R, source_name: impl Into<String>, policy: BadInputPolicy, parse: F) -> Self {
        LineReader {
            input,
            source_name: source_name.into(),
            line_no: 0,
            buf: String::new(),
            policy,
            skipped: 0,
            parse,
            done: false,
            _out: PhantomData,
        }
    }

    /// Number of lines dropped under [`BadInputPolicy::SkipAndCount`].
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    fn locate(&self, err: LineError) -> IngestError {
        match err {
            LineError::Malformed(reason) => IngestError::MalformedLine {
                source_name: self.source_name.clone(),
                line: self.line_no,
                reason,
            },
            LineError::UnknownTag(value) => IngestError::UnknownTag {
                source_name: self.source_name.clone(),
                line: self.line_no,
                value,
            },
        }
    }
}

impl<R, T, F> Iterator for LineReader<R, T, F>
where
    R: BufRead,
    F: FnMut(&str) -> Result<T, LineError>,
{
    type Item = Result<T, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line_no += 1;
                    let line = self.buf.trim_end_matches(['\n', '\r']);
                    if line.trim().is_empty() {
                        continue;
                    }
                    match (self.parse)(line) {
                        Ok(item) => return Some(Ok(item)),
                        Err(e) => {
                            let err = self.locate(e);
                            if self.policy == BadInputPolicy::SkipAndCount {
                                log::warn!("skipping bad input: {err}");
                                self.skipped += 1;
                                continue;
                            }
                            self.done = true;
                            return Some(Err(err));
                        }
                    }
                }
                Err(source) => {
                    self.done = true;
                    return Some(Err(IngestError::Io { path: self.source_name.clone(), source }));
                }
            }
        }
        None
    }
}

type ParseFn<T> = Box<dyn FnMut(&str) -> Result<T, LineError>>;

/// Boxed reader used by the loader functions.
pub type RecordReader<R, T> = LineReader<R, T, ParseFn<T>>;

fn reader<R: BufRead, T: 'static>(
    input: R,
    source_name: &str,
    policy: BadInputPolicy,
    parse: impl FnMut(&str) -> Result<T, LineError> + 'static,
) -> RecordReader<R, T> {
    LineReader::new(input, source_name, policy, Box::new(parse) as ParseFn<T>)
}

// ---------------------------------------------------------------------------
// Wire formats. Field order here is the canonical output order.

#[derive(Serialize, Deserialize)]
struct OutPointLine {
    txid: Hash32,
    vout: u32,
}

#[derive(Serialize, Deserialize)]
struct BtcTxLine {
    txid: Hash32,
    vsize: u64,
    fee_sat: u64,
    inputs: Vec<OutPointLine>,
    out_sat: u64,
}

#[derive(Serialize, Deserialize)]
struct BtcBlockLine {
    chain: Chain,
    height: u64,
    timestamp: i64,
    coinbase_tag: String,
    txs: Vec<BtcTxLine>,
}

#[derive(Serialize, Deserialize)]
struct EthTxLine {
    hash: Hash32,
    from: Address,
    #[serde(with = "optional_address")]
    to: Option<Address>,
    gas_used: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_fee_per_gas_wei: Option<Wei>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_priority_fee_per_gas_wei: Option<Wei>,
    /// Pre-London transactions carry only a gas price.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gas_price_wei: Option<Wei>,
    coinbase_transfer_wei: Wei,
    status: TxStatus,
}

#[derive(Serialize, Deserialize)]
struct EthBlockLine {
    chain: Chain,
    number: u64,
    timestamp: i64,
    miner: Address,
    base_fee_per_gas_wei: Wei,
    txs: Vec<EthTxLine>,
}

mod optional_address {
    use super::Address;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Address>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(a) => s.collect_str(a),
            None => s.serialize_str(""),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Address>, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BundleLine {
    block_number: u64,
    bundle_index: u32,
    tx_hashes: Vec<Hash32>,
    tag: String,
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    timestamp: i64,
    pending: Vec<Hash32>,
}

#[derive(Serialize, Deserialize)]
struct PriceLine {
    block_number: u64,
    asset: String,
    quote: Quote,
    price: u128,
    decimals: u8,
}

#[derive(Serialize, Deserialize)]
struct LiquidationLine {
    protocol: Protocol,
    tx_hash: Hash32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_number: Option<u64>,
    debt_asset: String,
    debt_repaid: u128,
    debt_decimals: u8,
    collateral_asset: String,
    collateral_seized: u128,
    collateral_decimals: u8,
}

#[derive(Serialize, Deserialize)]
struct OracleLine {
    tx_hash: Hash32,
    feed: String,
    price: u128,
    decimals: u8,
}

// ---------------------------------------------------------------------------
// Blocks

fn parse_btc_block(line: &str) -> Result<BtcBlock, LineError> {
    let raw: BtcBlockLine = serde_json::from_str(line)?;
    if raw.chain != Chain::Btc {
        return Err(LineError::Malformed(format!("expected a btc block, found chain {}", raw.chain)));
    }
    let block = BtcBlock {
        height: raw.height,
        timestamp: raw.timestamp,
        coinbase_tag: raw.coinbase_tag,
        txs: raw
            .txs
            .into_iter()
            .map(|t| BtcTx {
                txid: t.txid,
                vsize: t.vsize,
                fee: t.fee_sat,
                inputs: t.inputs.into_iter().map(|i| OutPoint { txid: i.txid, vout: i.vout }).collect(),
                total_output_value: t.out_sat,
            })
            .collect(),
    };
    block.validate().map_err(|e| LineError::Malformed(e.to_string()))?;
    Ok(block)
}

fn parse_eth_block(line: &str) -> Result<EthBlock, LineError> {
    let raw: EthBlockLine = serde_json::from_str(line)?;
    if raw.chain != Chain::Eth {
        return Err(LineError::Malformed(format!("expected an eth block, found chain {}", raw.chain)));
    }
    let mut txs = Vec::with_capacity(raw.txs.len());
    for t in raw.txs {
        let (max_fee, max_priority) = match (t.max_fee_per_gas_wei, t.max_priority_fee_per_gas_wei, t.gas_price_wei) {
            (Some(f), Some(p), None) => (f, p),
            (None, None, Some(g)) => (g, g),
            _ => {
                return Err(LineError::Malformed(format!(
                    "tx {} needs either both max fee fields or a legacy gas_price_wei",
                    t.hash
                )))
            }
        };
        txs.push(EthTx {
            hash: t.hash,
            from: t.from,
            to: t.to,
            gas_used: t.gas_used,
            max_fee_per_gas: max_fee,
            max_priority_fee_per_gas: max_priority,
            coinbase_transfer: t.coinbase_transfer_wei,
            status: t.status,
        });
    }
    let block = EthBlock {
        number: raw.number,
        timestamp: raw.timestamp,
        miner: raw.miner,
        base_fee_per_gas: raw.base_fee_per_gas_wei,
        txs,
    };
    block.validate().map_err(|e| LineError::Malformed(e.to_string()))?;
    Ok(block)
}

pub fn read_btc_blocks<R: BufRead>(input: R, source_name: &str, policy: BadInputPolicy) -> RecordReader<R, BtcBlock> {
    reader(input, source_name, policy, parse_btc_block)
}

pub fn read_eth_blocks<R: BufRead>(input: R, source_name: &str, policy: BadInputPolicy) -> RecordReader<R, EthBlock> {
    reader(input, source_name, policy, parse_eth_block)
}

pub fn read_blocks<R: BufRead>(
    input: R,
    source_name: &str,
    chain: Chain,
    policy: BadInputPolicy,
) -> RecordReader<R, ChainBlock> {
    match chain {
        Chain::Btc => reader(input, source_name, policy, |l| parse_btc_block(l).map(ChainBlock::Btc)),
        Chain::Eth => reader(input, source_name, policy, |l| parse_eth_block(l).map(ChainBlock::Eth)),
    }
}

/// Stream the blocks of `path` in file order.
pub fn load_blocks(
    path: &Path,
    chain: Chain,
    policy: BadInputPolicy,
) -> Result<RecordReader<BufReader<File>, ChainBlock>, IngestError> {
    Ok(read_blocks(open(path)?, &path.display().to_string(), chain, policy))
}

pub fn btc_block_line(block: &BtcBlock) -> String {
    let line = BtcBlockLine {
        chain: Chain::Btc,
        height: block.height,
        timestamp: block.timestamp,
        coinbase_tag: block.coinbase_tag.clone(),
        txs: block
            .txs
            .iter()
            .map(|t| BtcTxLine {
                txid: t.txid,
                vsize: t.vsize,
                fee_sat: t.fee,
                inputs: t.inputs.iter().map(|i| OutPointLine { txid: i.txid, vout: i.vout }).collect(),
                out_sat: t.total_output_value,
            })
            .collect(),
    };
    to_line(&line)
}

pub fn eth_block_line(block: &EthBlock) -> String {
    let line = EthBlockLine {
        chain: Chain::Eth,
        number: block.number,
        timestamp: block.timestamp,
        miner: block.miner,
        base_fee_per_gas_wei: block.base_fee_per_gas,
        txs: block
            .txs
            .iter()
            .map(|t| EthTxLine {
                hash: t.hash,
                from: t.from,
                to: t.to,
                gas_used: t.gas_used,
                max_fee_per_gas_wei: Some(t.max_fee_per_gas),
                max_priority_fee_per_gas_wei: Some(t.max_priority_fee_per_gas),
                gas_price_wei: None,
                coinbase_transfer_wei: t.coinbase_transfer,
                status: t.status,
            })
            .collect(),
    };
    to_line(&line)
}

pub fn block_line(block: &ChainBlock) -> String {
    match block {
        ChainBlock::Btc(b) => btc_block_line(b),
        ChainBlock::Eth(b) => eth_block_line(b),
    }
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("wire records always serialize")
}

// ---------------------------------------------------------------------------
// Bundles

fn parse_bundle(line: &str) -> Result<BundleRecord, LineError> {
    let raw: BundleLine = serde_json::from_str(line)?;
    let tag: BundleTag = raw.tag.parse().map_err(LineError::UnknownTag)?;
    if raw.tx_hashes.is_empty() {
        return Err(LineError::Malformed("bundle has no transactions".into()));
    }
    Ok(BundleRecord {
        block_number: raw.block_number,
        bundle_index: raw.bundle_index,
        tx_hashes: raw.tx_hashes,
        tag,
    })
}

pub fn read_bundles<R: BufRead>(input: R, source_name: &str, policy: BadInputPolicy) -> RecordReader<R, BundleRecord> {
    let mut seen = HashSet::new();
    reader(input, source_name, policy, move |line| {
        let bundle = parse_bundle(line)?;
        if !seen.insert(bundle.id()) {
            return Err(LineError::Malformed(format!("duplicate bundle {}", bundle.id())));
        }
        Ok(bundle)
    })
}

/// Load every bundle, rejecting tags outside the three relay categories.
pub fn load_bundles(path: &Path, policy: BadInputPolicy) -> Result<Vec<BundleRecord>, IngestError> {
    read_bundles(open(path)?, &path.display().to_string(), policy).collect()
}

pub fn bundle_line(bundle: &BundleRecord) -> String {
    to_line(&BundleLine {
        block_number: bundle.block_number,
        bundle_index: bundle.bundle_index,
        tx_hashes: bundle.tx_hashes.clone(),
        tag: bundle.tag.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Mempool snapshots

pub fn read_snapshots<R: BufRead>(
    input: R,
    source_name: &str,
    policy: BadInputPolicy,
) -> RecordReader<R, MempoolSnapshot> {
    let mut last: Option<i64> = None;
    reader(input, source_name, policy, move |line| {
        let raw: SnapshotLine = serde_json::from_str(line)?;
        if let Some(prev) = last {
            if raw.timestamp <= prev {
                return Err(LineError::Malformed(format!(
                    "snapshot timestamp {} is not after the previous {prev}",
                    raw.timestamp
                )));
            }
        }
        last = Some(raw.timestamp);
        Ok(MempoolSnapshot { timestamp: raw.timestamp, pending: raw.pending })
    })
}

pub fn load_snapshots(path: &Path, policy: BadInputPolicy) -> Result<Vec<MempoolSnapshot>, IngestError> {
    read_snapshots(open(path)?, &path.display().to_string(), policy).collect()
}

pub fn snapshot_line(s: &MempoolSnapshot) -> String {
    to_line(&SnapshotLine { timestamp: s.timestamp, pending: s.pending.clone() })
}

// ---------------------------------------------------------------------------
// Prices

fn check_decimals(decimals: u8) -> Result<(), LineError> {
    if decimals > MAX_DECIMALS {
        return Err(LineError::Malformed(format!("decimals {decimals} outside [0, {MAX_DECIMALS}]")));
    }
    Ok(())
}

fn check_symbol(s: &str) -> Result<(), LineError> {
    if crate::chain::is_symbol(s) {
        Ok(())
    } else {
        Err(LineError::Malformed(format!("invalid asset symbol {s:?}")))
    }
}

pub fn read_prices<R: BufRead>(input: R, source_name: &str, policy: BadInputPolicy) -> RecordReader<R, PricePoint> {
    let mut seen = HashSet::new();
    reader(input, source_name, policy, move |line| {
        let raw: PriceLine = serde_json::from_str(line)?;
        check_decimals(raw.decimals)?;
        check_symbol(&raw.asset)?;
        if !seen.insert((raw.block_number, raw.asset.clone(), raw.quote)) {
            return Err(LineError::Malformed(format!(
                "duplicate price for {}/{} at block {}",
                raw.asset, raw.quote, raw.block_number
            )));
        }
        Ok(PricePoint {
            block_number: raw.block_number,
            asset: raw.asset,
            quote: raw.quote,
            price: FixedPoint::new(raw.price, raw.decimals),
        })
    })
}

pub fn load_prices(path: &Path, policy: BadInputPolicy) -> Result<PriceStore, IngestError> {
    let mut store = PriceStore::new();
    for point in read_prices(open(path)?, &path.display().to_string(), policy) {
        store
            .insert(point?)
            .expect("reader rejects duplicate (block, asset, quote) keys");
    }
    Ok(store)
}

pub fn price_line(p: &PricePoint) -> String {
    to_line(&PriceLine {
        block_number: p.block_number,
        asset: p.asset.clone(),
        quote: p.quote,
        price: p.price.raw,
        decimals: p.price.decimals,
    })
}

// ---------------------------------------------------------------------------
// DeFi events: liquidations and oracle updates share one file and are told
// apart by their keys.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DefiEvent {
    Liquidation(LiquidationEvent),
    OracleUpdate(OracleUpdate),
}

fn parse_event(line: &str) -> Result<DefiEvent, LineError> {
    let value: serde_json::Value = serde_json::from_str(line)?;
    let obj = value
        .as_object()
        .ok_or_else(|| LineError::Malformed("event line is not a JSON object".into()))?;
    if obj.contains_key("feed") {
        let raw: OracleLine = serde_json::from_value(value)?;
        check_decimals(raw.decimals)?;
        let feed: FeedPair = raw.feed.parse().map_err(LineError::Malformed)?;
        Ok(DefiEvent::OracleUpdate(OracleUpdate {
            tx_hash: raw.tx_hash,
            feed,
            new_price: FixedPoint::new(raw.price, raw.decimals),
        }))
    } else if obj.contains_key("protocol") {
        let raw: LiquidationLine = serde_json::from_value(value)?;
        check_decimals(raw.debt_decimals)?;
        check_decimals(raw.collateral_decimals)?;
        let event = LiquidationEvent {
            protocol: raw.protocol,
            tx_hash: raw.tx_hash,
            block_number: raw.block_number,
            debt_asset: raw.debt_asset,
            debt_repaid: FixedPoint::new(raw.debt_repaid, raw.debt_decimals),
            collateral_asset: raw.collateral_asset,
            collateral_seized: FixedPoint::new(raw.collateral_seized, raw.collateral_decimals),
        };
        event.validate().map_err(LineError::Malformed)?;
        Ok(DefiEvent::Liquidation(event))
    } else {
        Err(LineError::Malformed("event is neither a liquidation nor an oracle update".into()))
    }
}

pub fn read_events<R: BufRead>(input: R, source_name: &str, policy: BadInputPolicy) -> RecordReader<R, DefiEvent> {
    reader(input, source_name, policy, parse_event)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventSet {
    pub liquidations: Vec<LiquidationEvent>,
    pub updates: Vec<OracleUpdate>,
}

pub fn load_events(path: &Path, policy: BadInputPolicy) -> Result<EventSet, IngestError> {
    let mut set = EventSet::default();
    for event in read_events(open(path)?, &path.display().to_string(), policy) {
        match event? {
            DefiEvent::Liquidation(l) => set.liquidations.push(l),
            DefiEvent::OracleUpdate(u) => set.updates.push(u),
        }
    }
    Ok(set)
}

pub fn liquidation_line(e: &LiquidationEvent) -> String {
    to_line(&LiquidationLine {
        protocol: e.protocol,
        tx_hash: e.tx_hash,
        block_number: e.block_number,
        debt_asset: e.debt_asset.clone(),
        debt_repaid: e.debt_repaid.raw,
        debt_decimals: e.debt_repaid.decimals,
        collateral_asset: e.collateral_asset.clone(),
        collateral_seized: e.collateral_seized.raw,
        collateral_decimals: e.collateral_seized.decimals,
    })
}

pub fn oracle_line(u: &OracleUpdate) -> String {
    to_line(&OracleLine {
        tx_hash: u.tx_hash,
        feed: u.feed.to_string(),
        price: u.new_price.raw,
        decimals: u.new_price.decimals,
    })
}

// ---------------------------------------------------------------------------
// Tab-separated registries

fn tsv_rows<R: BufRead>(
    input: R,
    source_name: &str,
    columns: usize,
) -> impl Iterator<Item = Result<(usize, Vec<String>), IngestError>> {
    let source_name = source_name.to_string();
    input.lines().enumerate().filter_map(move |(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(source) => return Some(Err(IngestError::Io { path: source_name.clone(), source })),
        };
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            return None;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != columns || fields.iter().any(|f| f.is_empty()) {
            return Some(Err(IngestError::MalformedLine {
                source_name: source_name.clone(),
                line: line_no,
                reason: format!("expected {columns} non-empty tab-separated fields"),
            }));
        }
        Some(Ok((line_no, fields)))
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolRule {
    pub marker: String,
    pub pool: String,
    address: Option<Address>,
}

/// Ordered marker → pool rules; the first match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolRegistry {
    rules: Vec<PoolRule>,
}

impl PoolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, marker: impl Into<String>, pool: impl Into<String>) {
        let marker = marker.into();
        let address = marker.parse().ok();
        self.rules.push(PoolRule { marker, pool: pool.into(), address });
    }

    pub fn rules(&self) -> &[PoolRule] {
        &self.rules
    }

    pub fn from_tsv<R: BufRead>(input: R, source_name: &str) -> Result<Self, IngestError> {
        let mut reg = PoolRegistry::new();
        for row in tsv_rows(input, source_name, 2) {
            let (_, fields) = row?;
            reg.push(fields[0].clone(), fields[1].clone());
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Self::from_tsv(open(path)?, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        self.rules.iter().map(|r| format!("{}\t{}\n", r.marker, r.pool)).collect()
    }

    /// Case-sensitive byte-substring match on a coinbase tag.
    pub fn attribute_tag(&self, coinbase_tag: &str) -> &str {
        self.rules
            .iter()
            .find(|r| coinbase_tag.contains(r.marker.as_str()))
            .map_or(UNKNOWN_POOL, |r| r.pool.as_str())
    }

    /// Exact match on a miner address.
    pub fn attribute_address(&self, miner: &Address) -> &str {
        self.rules
            .iter()
            .find(|r| r.address.as_ref() == Some(miner))
            .map_or(UNKNOWN_POOL, |r| r.pool.as_str())
    }

    pub fn attribute(&self, block: &ChainBlock) -> &str {
        match block {
            ChainBlock::Btc(b) => self.attribute_tag(&b.coinbase_tag),
            ChainBlock::Eth(b) => self.attribute_address(&b.miner),
        }
    }
}

/// Contract address → protocol name, for DEX call census.
pub type ContractRegistry = BTreeMap<Address, String>;

pub fn read_contract_registry<R: BufRead>(input: R, source_name: &str) -> Result<ContractRegistry, IngestError> {
    let mut reg = ContractRegistry::new();
    for row in tsv_rows(input, source_name, 2) {
        let (line, fields) = row?;
        let malformed = |reason: String| IngestError::MalformedLine {
            source_name: source_name.to_string(),
            line,
            reason,
        };
        let address: Address = fields[0].parse().map_err(|e: crate::chain::ParseHexError| malformed(e.to_string()))?;
        if reg.insert(address, fields[1].clone()).is_some() {
            return Err(malformed(format!("duplicate contract address {address}")));
        }
    }
    Ok(reg)
}

pub fn load_contract_registry(path: &Path) -> Result<ContractRegistry, IngestError> {
    read_contract_registry(open(path)?, &path.display().to_string())
}

/// One `protocol\tasset\tthreshold` row; `*` as asset sets the protocol
/// default.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    pub protocol: Protocol,
    pub asset: Option<String>,
    pub threshold: BigRational,
}

pub fn read_threshold_rows<R: BufRead>(input: R, source_name: &str) -> Result<Vec<ThresholdRow>, IngestError> {
    let mut rows = Vec::new();
    for row in tsv_rows(input, source_name, 3) {
        let (line, fields) = row?;
        let malformed = |reason: String| IngestError::MalformedLine {
            source_name: source_name.to_string(),
            line,
            reason,
        };
        let protocol: Protocol = fields[0].parse().map_err(malformed)?;
        let threshold = parse_decimal(&fields[2]).map_err(|e| malformed(e.to_string()))?;
        if threshold <= BigRational::from_integer(0.into()) {
            return Err(malformed("threshold must be positive".into()));
        }
        let asset = (fields[1] != "*").then(|| fields[1].clone());
        rows.push(ThresholdRow { protocol, asset, threshold });
    }
    Ok(rows)
}

pub fn load_threshold_rows(path: &Path) -> Result<Vec<ThresholdRow>, IngestError> {
    read_threshold_rows(open(path)?, &path.display().to_string())
}

/// Transaction ids an external acceleration service reports as accelerated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccelLabelSet(pub BTreeSet<Hash32>);

impl AccelLabelSet {
    pub fn contains(&self, id: &Hash32) -> bool {
        self.0.contains(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Hash32> {
        self.0.iter()
    }
}

impl FromIterator<Hash32> for AccelLabelSet {
    fn from_iter<I: IntoIterator<Item = Hash32>>(iter: I) -> Self {
        AccelLabelSet(iter.into_iter().collect())
    }
}

pub fn read_accel_labels<R: BufRead>(
    input: R,
    source_name: &str,
    policy: BadInputPolicy,
) -> Result<AccelLabelSet, IngestError> {
    let parse = |line: &str| -> Result<Hash32, LineError> {
        let t = line.trim();
        if t.len() != 64 {
            return Err(LineError::Malformed(format!("expected a 64-hex-char txid, got {t:?}")));
        }
        t.parse().map_err(|e: crate::chain::ParseHexError| LineError::Malformed(e.to_string()))
    };
    LineReader::new(input, source_name, policy, parse).collect()
}

pub fn load_accel_labels(path: &Path, policy: BadInputPolicy) -> Result<AccelLabelSet, IngestError> {
    read_accel_labels(open(path)?, &path.display().to_string(), policy)
}
