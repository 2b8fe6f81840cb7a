use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use prioscope::bundles::{
    bundle_economics, bundle_stats, fee_gap_distribution, match_heuristic, tx_economics, BundleError, DexCensus,
    EthBlockIndex, Heuristic, HeuristicMatch,
};
use prioscope::chain::{BundleRecord, Chain, ChainBlock, Hash32, PriceStore};
use prioscope::defi::{
    bundled_with_update, classify_bundle_pattern, enabled_by_update, profit_by_bundling_class,
    resolve_liquidation_blocks, EventIndex, LiquidationThresholds, PatternSummary,
};
use prioscope::ingest::{
    load_accel_labels, load_blocks, load_bundles, load_contract_registry, load_events, load_prices, load_snapshots,
    load_threshold_rows, BadInputPolicy, ContractRegistry, PoolRegistry,
};
use prioscope::priometrics::{
    accel_label_crosscheck, accel_share_timeseries, analyze_block, delay_position_stats, flag_accelerated, private_txs,
    BlockReport, FirstSeen, MetricsError, PoolFlagSummary, PoolShareWindow, PrivateBlock, PrivateSummary, Threshold,
    ValueTransferred,
};
use prioscope::report;
use prioscope::synth::{gen_corpus, SynthSpec, TxRange};

use crate::output::Outputs;
use crate::{
    BundlesArgs, CliError, Command, Common, CrosscheckArgs, DefiArgs, DelayArgs, PoolsArgs, PrivateArgs, SppeArgs,
    SynthArgs,
};

type Result<T> = std::result::Result<T, CliError>;

/// Blocks handed to one worker at a time when aggregating.
const CHUNK: usize = 256;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Sppe(a) => sppe(a),
        Command::Pools(a) => pools(a),
        Command::Private(a) => private(a),
        Command::Bundles(a) => bundles(a),
        Command::Defi(a) => defi(a),
        Command::Delay(a) => delay(a),
        Command::Synth(a) => synth(a),
        Command::Crosscheck(a) => crosscheck(a),
    }
}

struct Ctx {
    pool: rayon::ThreadPool,
    policy: BadInputPolicy,
    out: Outputs,
}

impl Ctx {
    fn new(common: &Common, outputs: &[&str]) -> Result<Self> {
        let workers = common
            .workers
            .map(usize::from)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        let out = Outputs::new(&common.out, common.force)?;
        out.claim(outputs)?;
        log::debug!("{workers} workers, writing to {}", common.out.display());
        Ok(Ctx { pool, policy: common.policy(), out })
    }

    /// Ordered parallel map.
    fn map<T: Sync, U: Send>(&self, items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    fn skip_or_fail(&self, what: String) -> Result<()> {
        match self.policy {
            BadInputPolicy::FailFast => Err(CliError::Data(anyhow!(what))),
            BadInputPolicy::SkipAndCount => {
                log::warn!("skipping {what}");
                Ok(())
            }
        }
    }
}

fn read_blocks(path: &Path, chain: Chain, policy: BadInputPolicy) -> Result<Vec<ChainBlock>> {
    let mut reader = load_blocks(path, chain, policy)?;
    let blocks = reader.by_ref().collect::<std::result::Result<Vec<_>, _>>()?;
    if reader.skipped() > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), reader.skipped());
    }
    log::info!("{}: {} blocks", path.display(), blocks.len());
    Ok(blocks)
}

fn registry(path: &Option<std::path::PathBuf>) -> Result<PoolRegistry> {
    Ok(match path {
        Some(p) => PoolRegistry::load(p)?,
        None => PoolRegistry::new(),
    })
}

fn require_eth(chain: Chain, command: &str) -> Result<()> {
    if chain != Chain::Eth {
        return Err(CliError::Usage(format!("{command} only supports --chain eth")));
    }
    Ok(())
}

/// Per-block reports; blocks with nothing to rank are left out.
fn block_reports(ctx: &Ctx, blocks: &[ChainBlock], registry: &PoolRegistry) -> Result<Vec<BlockReport>> {
    let results = ctx.map(blocks, |b| analyze_block(b, registry.attribute(b)));
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(r) => reports.push(r),
            Err(MetricsError::EmptyBlock { height }) => log::debug!("block {height}: nothing to rank"),
            Err(e) => ctx.skip_or_fail(e.to_string())?,
        }
    }
    Ok(reports)
}

fn flagged_ids(reports: &[BlockReport], threshold: Threshold) -> BTreeSet<Hash32> {
    flag_accelerated(reports.iter().flat_map(|r| &r.reports), threshold)
}

fn sppe(a: SppeArgs) -> Result<()> {
    let mut names = vec!["sppe.csv", "block_ppe.csv", "flagged.csv", "pool_flags.csv"];
    if a.chain == Chain::Btc {
        names.push("value.csv");
    }
    let mut ctx = Ctx::new(&a.common, &names)?;
    let reg = registry(&a.pools)?;
    let blocks = read_blocks(&a.blocks, a.chain, ctx.policy)?;
    let reports = block_reports(&ctx, &blocks, &reg)?;

    let mut summary = PoolFlagSummary::default();
    for r in &reports {
        summary.add_block(r, a.threshold);
    }
    ctx.out.write("sppe.csv", |w| report::write_sppe(w, &reports))?;
    ctx.out.write("block_ppe.csv", |w| report::write_block_ppe(w, &reports))?;
    ctx.out.write("flagged.csv", |w| report::write_flagged(w, &reports, a.threshold))?;
    ctx.out.write("pool_flags.csv", |w| report::write_pool_flags(w, &summary))?;
    if a.chain == Chain::Btc {
        let flagged = flagged_ids(&reports, a.threshold);
        let parts = ctx.map(&blocks.chunks(CHUNK).collect::<Vec<_>>(), |chunk| {
            let mut v = ValueTransferred::default();
            for b in chunk.iter() {
                if let ChainBlock::Btc(b) = b {
                    v.add_block(b, &flagged);
                }
            }
            v
        });
        let mut value = ValueTransferred::default();
        for p in parts {
            value.merge(p);
        }
        ctx.out.write("value.csv", |w| report::write_value(w, &value))?;
    }
    ctx.out.commit()?;
    Ok(())
}

fn windowed(ctx: &Ctx, blocks: &[ChainBlock], f: impl Fn(&[ChainBlock]) -> PoolShareWindow + Sync + Send, window: prioscope::priometrics::Window) -> PoolShareWindow {
    let parts = ctx.map(&blocks.chunks(CHUNK).collect::<Vec<_>>(), |c| f(c));
    let mut all = PoolShareWindow::new(window);
    for p in parts {
        all.merge(p);
    }
    all
}

fn pools(a: PoolsArgs) -> Result<()> {
    let mut names = vec!["pool_shares.csv"];
    if !a.subset.is_empty() {
        names.push("subset_shares.csv");
    }
    let mut ctx = Ctx::new(&a.common, &names)?;
    let reg = registry(&a.pools)?;
    let blocks = read_blocks(&a.blocks, a.chain, ctx.policy)?;
    let shares = windowed(&ctx, &blocks, |c| prioscope::priometrics::pool_shares(c, &reg, a.window), a.window);
    ctx.out.write("pool_shares.csv", |w| report::write_pool_shares(w, &shares))?;
    if !a.subset.is_empty() {
        ctx.out.write("subset_shares.csv", |w| report::write_subset_shares(w, &shares, &a.subset))?;
    }
    ctx.out.commit()?;
    Ok(())
}

fn private(a: PrivateArgs) -> Result<()> {
    let mut ctx = Ctx::new(&a.common, &["private.csv", "private_pools.csv"])?;
    let reg = registry(&a.pools)?;
    let blocks = read_blocks(&a.blocks, a.chain, ctx.policy)?;
    let snapshots = load_snapshots(&a.snapshots, ctx.policy)?;
    let seen = FirstSeen::from_snapshots(&snapshots);
    let results = ctx.map(&blocks, |b| {
        private_txs(b, &seen).map(|private| PrivateBlock {
            height: b.height(),
            pool: reg.attribute(b).to_string(),
            tx_count: b.relayed_tx_ids().len(),
            private,
        })
    });
    let mut summary = PrivateSummary::default();
    let mut found = Vec::new();
    for r in results {
        match r {
            Ok(pb) => {
                summary.add(&pb);
                found.push(pb);
            }
            Err(e) => {
                log::info!("{e}");
                summary.uncovered_blocks += 1;
            }
        }
    }
    if summary.uncovered_blocks > 0 {
        log::warn!("{} blocks precede every snapshot and were not classified", summary.uncovered_blocks);
    }
    ctx.out.write("private.csv", |w| report::write_private(w, &found))?;
    ctx.out.write("private_pools.csv", |w| report::write_private_pools(w, &summary))?;
    ctx.out.commit()?;
    Ok(())
}

fn collect_bundle_results<T>(ctx: &Ctx, results: Vec<std::result::Result<T, BundleError>>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => ctx.skip_or_fail(e.to_string())?,
        }
    }
    Ok(out)
}

fn bundles(a: BundlesArgs) -> Result<()> {
    require_eth(a.chain, "bundles")?;
    let mut names = Vec::new();
    if a.bundles.is_some() {
        names.extend(["bundle_econ.csv", "h2.csv", "h3.csv", "fee_gap_cdf.csv", "dex_census.csv", "bundle_stats.csv"]);
    }
    if a.economics {
        names.push("tx_econ.csv");
    }
    let mut ctx = Ctx::new(&a.common, &names)?;
    let blocks = read_blocks(&a.blocks, a.chain, ctx.policy)?;
    let index = EthBlockIndex::from_chain_blocks(&blocks);

    if let Some(path) = &a.bundles {
        let reg = registry(&a.pools)?;
        let contracts = match &a.contracts {
            Some(p) => load_contract_registry(p)?,
            None => ContractRegistry::new(),
        };
        let records = load_bundles(path, ctx.policy)?;
        let econ = ctx.map(&records, |b| index.block_for(b).and_then(|blk| bundle_economics(b, blk)));
        let econ = collect_bundle_results(&ctx, econ)?;
        let matches = |h: Heuristic| -> Result<Vec<HeuristicMatch>> {
            let found = ctx.map(&records, |b| index.block_for(b).and_then(|blk| match_heuristic(h, b, blk)));
            Ok(collect_bundle_results(&ctx, found)?.into_iter().flatten().collect())
        };
        let h2 = matches(Heuristic::H2)?;
        let h3 = matches(Heuristic::H3)?;
        let gaps = fee_gap_distribution(h2.iter().chain(&h3));
        let stats = bundle_stats(&records, &index, &reg);
        let parts = ctx.map(&records.chunks(CHUNK).collect::<Vec<&[BundleRecord]>>(), |chunk| {
            let mut c = DexCensus::default();
            for b in chunk.iter() {
                if let Some(block) = index.get(b.block_number) {
                    c.add(b, block, &contracts);
                }
            }
            c
        });
        let mut census = DexCensus::default();
        for p in parts {
            census.merge(p);
        }
        log::info!("{} bundles, {} h2 and {} h3 matches", records.len(), h2.len(), h3.len());
        ctx.out.write("bundle_econ.csv", |w| report::write_bundle_econ(w, &econ))?;
        ctx.out.write("h2.csv", |w| report::write_heuristic_matches(w, &h2))?;
        ctx.out.write("h3.csv", |w| report::write_heuristic_matches(w, &h3))?;
        ctx.out.write("fee_gap_cdf.csv", |w| report::write_fee_gap_cdf(w, &gaps))?;
        ctx.out.write("dex_census.csv", |w| report::write_dex_census(w, &census))?;
        ctx.out.write("bundle_stats.csv", |w| report::write_bundle_stats(w, &stats))?;
    }
    if a.economics {
        let eth: Vec<_> = index.iter().collect();
        let rows = ctx.map(&eth, |b| tx_economics(b));
        let mut all = Vec::new();
        for r in rows {
            match r {
                Ok(r) => all.extend(r),
                Err(e) => ctx.skip_or_fail(e.to_string())?,
            }
        }
        ctx.out.write("tx_econ.csv", |w| report::write_tx_econ(w, &all))?;
    }
    ctx.out.commit()?;
    Ok(())
}

fn defi(a: DefiArgs) -> Result<()> {
    require_eth(a.chain, "defi")?;
    let names = ["patterns.csv", "feed_pairs.csv", "profits.csv", "profit_cdf.csv", "enabled.csv"];
    let mut ctx = Ctx::new(&a.common, &names)?;
    let events = load_events(&a.events, ctx.policy)?;
    let prices: PriceStore = load_prices(&a.prices, ctx.policy)?;
    let records = match &a.bundles {
        Some(p) => load_bundles(p, ctx.policy)?,
        None => Vec::new(),
    };
    let blocks = match &a.blocks {
        Some(p) => read_blocks(p, Chain::Eth, ctx.policy)?,
        None => Vec::new(),
    };
    let thresholds = match &a.liq_thresholds {
        Some(p) => LiquidationThresholds::from_rows(load_threshold_rows(p)?),
        None => LiquidationThresholds::default(),
    };
    let index = EthBlockIndex::from_chain_blocks(&blocks);
    let ev = EventIndex::new(&events.updates, &events.liquidations);

    let patterns: Vec<_> = ctx
        .map(&records, |b| classify_bundle_pattern(b, &ev))
        .into_iter()
        .filter(|p| p.updates + p.liquidations > 0)
        .collect();
    let mut summary = PatternSummary::default();
    for p in &patterns {
        summary.add(p);
    }

    let blocks_of: HashMap<Hash32, u64> = resolve_liquidation_blocks(&events.liquidations, &records, &index);
    let bundled = bundled_with_update(&records, &ev);
    let classes = profit_by_bundling_class(&events.liquidations, &blocks_of, &bundled, &prices);
    for (hash, e) in &classes.skipped {
        ctx.skip_or_fail(format!("liquidation {hash}: {e}"))?;
    }

    let placed: Vec<_> = events
        .liquidations
        .iter()
        .filter_map(|l| blocks_of.get(&l.tx_hash).map(|b| (l, *b)))
        .collect();
    let enabled = ctx.map(&placed, |(l, b)| enabled_by_update(l, &prices, *b, &thresholds));
    let mut rows = Vec::new();
    for ((l, _), e) in placed.iter().zip(enabled) {
        match e {
            Ok(e) => rows.push((l.tx_hash, l.protocol.to_string(), e)),
            Err(e) => ctx.skip_or_fail(format!("liquidation {}: {e}", l.tx_hash))?,
        }
    }
    let possible_before = rows.iter().filter(|(_, _, e)| e.liquidatable_before()).count();
    log::info!(
        "{} liquidations, {} enabled by an update, {} already possible a block earlier",
        rows.len(),
        rows.iter().filter(|(_, _, e)| e.enabled()).count(),
        possible_before
    );

    ctx.out.write("patterns.csv", |w| report::write_patterns(w, &patterns))?;
    ctx.out.write("feed_pairs.csv", |w| report::write_feed_pairs(w, &summary))?;
    ctx.out.write("profits.csv", |w| report::write_profits(w, &classes))?;
    ctx.out.write("profit_cdf.csv", |w| report::write_profit_cdf(w, &classes))?;
    ctx.out.write("enabled.csv", |w| {
        report::write_enabled(w, rows.iter().map(|(h, p, e)| (h, p.as_str(), e)))
    })?;
    ctx.out.commit()?;
    Ok(())
}

fn delay(a: DelayArgs) -> Result<()> {
    let mut ctx = Ctx::new(&a.common, &["delay_stats.csv", "unconfirmed.csv"])?;
    let blocks = read_blocks(&a.blocks, a.chain, ctx.policy)?;
    let snapshots = load_snapshots(&a.snapshots, ctx.policy)?;
    let accelerated: BTreeSet<Hash32> = match &a.labels {
        Some(p) => load_accel_labels(p, ctx.policy)?.0,
        None => flagged_ids(&block_reports(&ctx, &blocks, &PoolRegistry::new())?, a.threshold),
    };
    let seen = FirstSeen::from_snapshots(&snapshots);
    let first_seen: Vec<(Hash32, i64)> = {
        let mut v: Vec<_> = seen.iter().map(|(id, ts)| (*id, *ts)).collect();
        v.sort();
        v
    };
    let stats = delay_position_stats(&accelerated, first_seen, &blocks);
    ctx.out.write("delay_stats.csv", |w| report::write_delay_stats(w, &stats))?;
    ctx.out.write("unconfirmed.csv", |w| report::write_unconfirmed(w, &stats))?;
    ctx.out.commit()?;
    Ok(())
}

/// The corpus `synth` builds when no spec file is given.
pub fn default_spec(chain: Chain, seed: u64) -> SynthSpec {
    match chain {
        Chain::Btc => {
            let mut s = SynthSpec::btc(seed, 20, TxRange { min: 100, max: 400 });
            s.planted_accelerations = 1;
            s.private_share = 0.02;
            s
        }
        Chain::Eth => {
            let mut s = SynthSpec::eth(seed, 20, TxRange { min: 40, max: 120 });
            s.planted_h2 = 12;
            s.planted_h3 = 8;
            s.noise_bundles = 10;
            s.planted_liquidations = 6;
            s.private_share = 0.05;
            s
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str::<SynthSpec>(&text).with_context(|| format!("{}: invalid spec", p.display()))?
        }
        None => default_spec(a.chain, 0),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let corpus = gen_corpus(&spec)?;
    let files = corpus.files();
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
    let mut ctx = Ctx::new(&a.common, &names)?;
    for (name, contents) in &files {
        ctx.out.write(name, |w| w.write_all(contents.as_bytes()))?;
    }
    ctx.out.commit()?;
    Ok(())
}

fn crosscheck(a: CrosscheckArgs) -> Result<()> {
    let mut ctx = Ctx::new(&a.common, &["crosscheck.csv", "accel_shares.csv"])?;
    let reg = registry(&a.pools)?;
    let blocks = read_blocks(&a.blocks, a.chain, ctx.policy)?;
    let labels = load_accel_labels(&a.labels, ctx.policy)?;
    let flagged = flagged_ids(&block_reports(&ctx, &blocks, &reg)?, a.threshold);
    let confusion = accel_label_crosscheck(&flagged, &labels);
    let series = windowed(&ctx, &blocks, |c| accel_share_timeseries(&labels, c, &reg, a.window), a.window);
    ctx.out.write("crosscheck.csv", |w| report::write_crosscheck(w, &confusion))?;
    ctx.out.write("accel_shares.csv", |w| report::write_accel_shares(w, &series))?;
    ctx.out.commit()?;
    Ok(())
}
