pub mod bundles;
pub mod chain;
pub mod defi;
pub mod ingest;
pub mod priometrics;
pub mod report;
pub mod stats;
pub mod synth;
pub mod units;
