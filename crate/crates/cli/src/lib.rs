//! File formats, configuration files and subcommands of the `ucl` runner.
//!
//! A dataset bundle is a directory holding `records.jsonl` (one message per
//! line), `split.json` (class count and split indices) and `graphs.json`
//! (the cached view graphs). Training writes `checkpoint.json` and
//! `epochs.jsonl`; evaluation writes `metrics.json` and `metrics.csv`.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod export;
pub mod jsonl;
