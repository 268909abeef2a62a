//! Discrete-time simulation and analysis toolkit for trace-shaped traffic
//! tunnels.
//!
//! A shaped tunnel transmits packets only according to fixed emission
//! patterns ("traces"): whenever a trace demands an emission and no user
//! packet is buffered, a dummy packet is sent instead, so an observer sees
//! nothing but a superposition of traces. This crate provides:
//!
//! * [`trace`] — the trace abstraction and active-instance bookkeeping,
//! * [`workload`] — seeded per-slot arrival generators (CBR, Poisson,
//!   on/off fetch bursts, replay from CSV),
//! * [`scheduler`] — the trace-activation policies (synchronized bang-bang,
//!   synchronized incremental, unsynchronized baseline, and the enhanced
//!   unsynchronized variant with wake and hysteresis heuristics),
//! * [`engine`] — the slot loop that ties them together and measures dummy
//!   overhead and queueing delay, plus parameter sweeps and step-response
//!   probes,
//! * [`indist`] — combinatorial indistinguishability analysis: packing an
//!   observed trace sequence by catalog sequences and computing per-page
//!   fetch probabilities.
//!
//! Sweeps and per-sequence analysis run data-parallel via rayon when the
//! default `parallel` feature is enabled; build with
//! `--no-default-features` for a fully sequential library.

pub mod engine;
pub mod indist;
pub mod scheduler;
pub mod trace;
pub mod workload;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
