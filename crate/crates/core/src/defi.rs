//! Oracle-update and liquidation bundles, liquidator profit, and whether a
//! liquidation only became possible through an update in its own block.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_rational::BigRational;
use num_traits::Zero;

use crate::bundles::EthBlockIndex;
use crate::chain::{BundleId, BundleRecord, FeedPair, Hash32, LiquidationEvent, OracleUpdate, PriceStore, Protocol, Quote};
use crate::ingest::ThresholdRow;
use crate::stats::{self, CdfRow};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DefiError {
    #[error("no {asset}/{quote} price at or before block {block}")]
    MissingPrice { asset: String, block: u64, quote: Quote },
    #[error("cannot tell which block liquidation {0} was mined in")]
    UnknownBlock(Hash32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventTag {
    Update,
    Liquidation,
    Other,
}

impl EventTag {
    fn letter(self) -> char {
        match self {
            EventTag::Update => 'U',
            EventTag::Liquidation => 'L',
            EventTag::Other => '-',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternClass {
    UpdateThenLiquidation,
    DoubleUpdateThenLiquidations,
    Other,
}

impl PatternClass {
    pub const ALL: [PatternClass; 3] = [
        PatternClass::UpdateThenLiquidation,
        PatternClass::DoubleUpdateThenLiquidations,
        PatternClass::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PatternClass::UpdateThenLiquidation => "update-then-liquidation",
            PatternClass::DoubleUpdateThenLiquidations => "double-update-then-liquidations",
            PatternClass::Other => "other",
        }
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Updates and liquidations keyed by transaction hash.
#[derive(Debug, Clone, Default)]
pub struct EventIndex<'a> {
    pub updates: HashMap<Hash32, &'a OracleUpdate>,
    pub liquidations: HashMap<Hash32, &'a LiquidationEvent>,
}

impl<'a> EventIndex<'a> {
    pub fn new(
        updates: impl IntoIterator<Item = &'a OracleUpdate>,
        liquidations: impl IntoIterator<Item = &'a LiquidationEvent>,
    ) -> Self {
        EventIndex {
            updates: updates.into_iter().map(|u| (u.tx_hash, u)).collect(),
            liquidations: liquidations.into_iter().map(|l| (l.tx_hash, l)).collect(),
        }
    }

    pub fn tag(&self, hash: &Hash32) -> EventTag {
        if self.updates.contains_key(hash) {
            EventTag::Update
        } else if self.liquidations.contains_key(hash) {
            EventTag::Liquidation
        } else {
            EventTag::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundlePattern {
    pub bundle: BundleId,
    pub tags: Vec<EventTag>,
    pub updates: usize,
    pub liquidations: usize,
    pub class: PatternClass,
    /// Feeds updated in the bundle, in bundle order.
    pub feeds: Vec<FeedPair>,
}

impl BundlePattern {
    /// Tags as a compact string, e.g. `UUL-`.
    pub fn tag_string(&self) -> String {
        self.tags.iter().map(|t| t.letter()).collect()
    }

    /// Sorted distinct feed labels joined with `+`.
    pub fn feed_label(&self) -> String {
        let labels: BTreeSet<String> = self.feeds.iter().map(FeedPair::to_string).collect();
        labels.into_iter().collect::<Vec<_>>().join("+")
    }
}

/// Classifies by the order of updates and liquidations only; other
/// transactions anywhere in the bundle are ignored.
pub fn classify_tags(tags: &[EventTag]) -> PatternClass {
    let seq: Vec<EventTag> = tags.iter().copied().filter(|t| *t != EventTag::Other).collect();
    let leading_updates = seq.iter().take_while(|t| **t == EventTag::Update).count();
    let rest = &seq[leading_updates..];
    if rest.is_empty() || !rest.iter().all(|t| *t == EventTag::Liquidation) {
        return PatternClass::Other;
    }
    match leading_updates {
        1 => PatternClass::UpdateThenLiquidation,
        2 => PatternClass::DoubleUpdateThenLiquidations,
        _ => PatternClass::Other,
    }
}

pub fn classify_bundle_pattern(bundle: &BundleRecord, events: &EventIndex<'_>) -> BundlePattern {
    let tags: Vec<EventTag> = bundle.tx_hashes.iter().map(|h| events.tag(h)).collect();
    let feeds = bundle
        .tx_hashes
        .iter()
        .filter_map(|h| events.updates.get(h).map(|u| u.feed.clone()))
        .collect();
    BundlePattern {
        bundle: bundle.id(),
        updates: tags.iter().filter(|t| **t == EventTag::Update).count(),
        liquidations: tags.iter().filter(|t| **t == EventTag::Liquidation).count(),
        class: classify_tags(&tags),
        tags,
        feeds,
    }
}

/// Bundle counts per pattern class and per feed label, over bundles that
/// contain at least one update and one liquidation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternSummary {
    pub classes: BTreeMap<PatternClass, usize>,
    pub feed_pairs: BTreeMap<String, usize>,
}

impl PatternSummary {
    pub fn add(&mut self, p: &BundlePattern) {
        if p.updates == 0 || p.liquidations == 0 {
            return;
        }
        *self.classes.entry(p.class).or_default() += 1;
        *self.feed_pairs.entry(p.feed_label()).or_default() += 1;
    }

    pub fn merge(&mut self, other: PatternSummary) {
        for (k, v) in other.classes {
            *self.classes.entry(k).or_default() += v;
        }
        for (k, v) in other.feed_pairs {
            *self.feed_pairs.entry(k).or_default() += v;
        }
    }

    pub fn total(&self) -> usize {
        self.classes.values().sum()
    }
}

// ---------------------------------------------------------------------------
// Profit

fn price(prices: &PriceStore, block: u64, asset: &str, quote: Quote) -> Result<BigRational, DefiError> {
    prices.price_at(block, asset, quote).ok_or_else(|| DefiError::MissingPrice {
        asset: asset.to_string(),
        block,
        quote,
    })
}

/// Seized collateral value minus repaid debt value, both priced in `quote`.
pub fn profit_in_quote(
    event: &LiquidationEvent,
    prices: &PriceStore,
    block: u64,
    quote: Quote,
) -> Result<BigRational, DefiError> {
    let (collateral, debt) = leg_values(event, prices, block, quote)?;
    Ok(collateral - debt)
}

fn leg_values(
    event: &LiquidationEvent,
    prices: &PriceStore,
    block: u64,
    quote: Quote,
) -> Result<(BigRational, BigRational), DefiError> {
    let collateral = event.collateral_seized.to_rational() * price(prices, block, &event.collateral_asset, quote)?;
    let debt = event.debt_repaid.to_rational() * price(prices, block, &event.debt_asset, quote)?;
    Ok((collateral, debt))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profit {
    /// Set for protocols whose oracle quotes in ETH.
    pub eth: Option<BigRational>,
    pub usd: BigRational,
}

/// Profit in the protocol's own quote currency, converted to USD through
/// the ETH-USD feed when that currency is ETH.
pub fn liquidation_profit(event: &LiquidationEvent, prices: &PriceStore, block: u64) -> Result<Profit, DefiError> {
    match event.protocol.reference_quote() {
        Quote::Eth => {
            let eth = profit_in_quote(event, prices, block, Quote::Eth)?;
            let usd = &eth * price(prices, block, "ETH", Quote::Usd)?;
            Ok(Profit { eth: Some(eth), usd })
        }
        Quote::Usd => Ok(Profit { eth: None, usd: profit_in_quote(event, prices, block, Quote::Usd)? }),
    }
}

// ---------------------------------------------------------------------------
// Update-enabled liquidations

/// Collateral-to-debt ratios below which a position can be liquidated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiquidationThresholds {
    pub default: BigRational,
    overrides: BTreeMap<(Protocol, Option<String>), BigRational>,
}

impl Default for LiquidationThresholds {
    fn default() -> Self {
        LiquidationThresholds {
            default: BigRational::new(3.into(), 2.into()),
            overrides: BTreeMap::new(),
        }
    }
}

impl LiquidationThresholds {
    pub fn with_default(default: BigRational) -> Self {
        LiquidationThresholds { default, overrides: BTreeMap::new() }
    }

    pub fn from_rows(rows: impl IntoIterator<Item = ThresholdRow>) -> Self {
        let mut t = Self::default();
        for row in rows {
            t.overrides.insert((row.protocol, row.asset), row.threshold);
        }
        t
    }

    pub fn set(&mut self, protocol: Protocol, asset: Option<String>, threshold: BigRational) {
        self.overrides.insert((protocol, asset), threshold);
    }

    /// Most specific match: protocol and collateral asset, then protocol,
    /// then the default.
    pub fn get(&self, protocol: Protocol, collateral_asset: &str) -> &BigRational {
        self.overrides
            .get(&(protocol, Some(collateral_asset.to_string())))
            .or_else(|| self.overrides.get(&(protocol, None)))
            .unwrap_or(&self.default)
    }
}

/// Collateral value over debt value in the protocol's quote; `None` when
/// the debt is worth nothing.
pub fn collateral_ratio(
    event: &LiquidationEvent,
    prices: &PriceStore,
    block: u64,
) -> Result<Option<BigRational>, DefiError> {
    let (collateral, debt) = leg_values(event, prices, block, event.protocol.reference_quote())?;
    Ok((!debt.is_zero()).then(|| collateral / debt))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enablement {
    pub block: u64,
    pub threshold: BigRational,
    pub ratio_before: Option<BigRational>,
    pub ratio_after: Option<BigRational>,
}

impl Enablement {
    fn below(ratio: &Option<BigRational>, threshold: &BigRational) -> bool {
        ratio.as_ref().is_some_and(|r| r < threshold)
    }

    /// Liquidatable with the prices of the previous block.
    pub fn liquidatable_before(&self) -> bool {
        Self::below(&self.ratio_before, &self.threshold)
    }

    pub fn liquidatable_after(&self) -> bool {
        Self::below(&self.ratio_after, &self.threshold)
    }

    pub fn enabled(&self) -> bool {
        self.liquidatable_after() && !self.liquidatable_before()
    }
}

/// Compares the position's health at block `block - 1` and `block`.
pub fn enabled_by_update(
    event: &LiquidationEvent,
    prices: &PriceStore,
    block: u64,
    thresholds: &LiquidationThresholds,
) -> Result<Enablement, DefiError> {
    let before = block.checked_sub(1).ok_or_else(|| DefiError::MissingPrice {
        asset: event.collateral_asset.clone(),
        block: 0,
        quote: event.protocol.reference_quote(),
    })?;
    Ok(Enablement {
        block,
        threshold: thresholds.get(event.protocol, &event.collateral_asset).clone(),
        ratio_before: collateral_ratio(event, prices, before)?,
        ratio_after: collateral_ratio(event, prices, block)?,
    })
}

/// Block of each liquidation: the event's own field, else the block of a
/// bundle containing it, else the block whose transactions include it.
pub fn resolve_liquidation_blocks(
    liquidations: &[LiquidationEvent],
    bundles: &[BundleRecord],
    blocks: &EthBlockIndex<'_>,
) -> HashMap<Hash32, u64> {
    let wanted: BTreeSet<Hash32> = liquidations.iter().map(|l| l.tx_hash).collect();
    let mut from_bundles = HashMap::new();
    for b in bundles {
        for h in &b.tx_hashes {
            if wanted.contains(h) {
                from_bundles.entry(*h).or_insert(b.block_number);
            }
        }
    }
    let mut from_blocks = HashMap::new();
    for block in blocks.iter() {
        for tx in &block.txs {
            if wanted.contains(&tx.hash) {
                from_blocks.entry(tx.hash).or_insert(block.number);
            }
        }
    }
    liquidations
        .iter()
        .filter_map(|l| {
            let block = l
                .block_number
                .or_else(|| from_bundles.get(&l.tx_hash).copied())
                .or_else(|| from_blocks.get(&l.tx_hash).copied())?;
            Some((l.tx_hash, block))
        })
        .collect()
}

/// Liquidations that share a bundle with at least one oracle update.
pub fn bundled_with_update(bundles: &[BundleRecord], events: &EventIndex<'_>) -> BTreeSet<Hash32> {
    let mut out = BTreeSet::new();
    for b in bundles {
        if b.tx_hashes.iter().any(|h| events.updates.contains_key(h)) {
            out.extend(b.tx_hashes.iter().filter(|h| events.liquidations.contains_key(*h)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfitRow {
    pub tx_hash: Hash32,
    pub protocol: Protocol,
    pub block: u64,
    pub bundled_with_update: bool,
    pub profit: Profit,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProfitClasses {
    pub rows: Vec<ProfitRow>,
    pub skipped: Vec<(Hash32, DefiError)>,
}

impl ProfitClasses {
    fn usd(&self, bundled: bool) -> Vec<BigRational> {
        self.rows
            .iter()
            .filter(|r| r.bundled_with_update == bundled)
            .map(|r| r.profit.usd.clone())
            .collect()
    }

    pub fn bundled_cdf(&self) -> Vec<CdfRow> {
        stats::empirical_cdf(&self.usd(true))
    }

    pub fn unbundled_cdf(&self) -> Vec<CdfRow> {
        stats::empirical_cdf(&self.usd(false))
    }
}

/// USD profit of every liquidation, split by whether it was bundled with an
/// oracle update. Rows keep event order.
pub fn profit_by_bundling_class(
    liquidations: &[LiquidationEvent],
    blocks_of: &HashMap<Hash32, u64>,
    bundled: &BTreeSet<Hash32>,
    prices: &PriceStore,
) -> ProfitClasses {
    let mut out = ProfitClasses::default();
    for l in liquidations {
        let Some(&block) = blocks_of.get(&l.tx_hash) else {
            out.skipped.push((l.tx_hash, DefiError::UnknownBlock(l.tx_hash)));
            continue;
        };
        match liquidation_profit(l, prices, block) {
            Ok(profit) => out.rows.push(ProfitRow {
                tx_hash: l.tx_hash,
                protocol: l.protocol,
                block,
                bundled_with_update: bundled.contains(&l.tx_hash),
                profit,
            }),
            Err(e) => out.skipped.push((l.tx_hash, e)),
        }
    }
    out
}
