//! A demand-driven, multi-tier runtime that executes a
//! pattern-recognition pipeline (sample loading, preprocessing,
//! feature extraction, training/classification) as demands flowing
//! over Generator / Store / Worker / Manager tiers.
//!
//! Computation is eductive: a stage runs only when its result is
//! demanded, and every computed value is memoized in the store's value
//! warehouse under a content signature. Durability comes from a
//! write-ahead log with snapshot checkpoints; replication ships the
//! log to another host. A deterministic single-process simulator
//! drives the same tier code under a virtual clock with scripted fault
//! injection.

pub mod clock;
pub mod demand;
pub mod frame;
pub mod manager;
pub mod pipeline;
pub mod runtime;
pub mod sim;
pub mod store;
pub mod tiers;
pub mod util;
pub mod wal;
