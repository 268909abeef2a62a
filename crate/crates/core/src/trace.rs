//! The trace abstraction: a fixed per-slot emission pattern that all link
//! output follows, plus bookkeeping for the instances currently running.
//!
//! A trace prescribes `emissions[j]` packet transmissions at the `j`-th slot
//! after activation, for `n` slots, `P` packets in total. Traces are
//! non-preemptive: once started, an instance runs its full window and then
//! simply expires.

use std::sync::Arc;

use crate::{Error, Result};

/// A fixed emission pattern. Immutable once built; share via [`Arc`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trace {
    emissions: Vec<u32>,
    total: u32,
    max_slot: u32,
}

impl Trace {
    /// Builds the uniform trace of `total` packets spread over `n` slots by
    /// the deterministic floor accumulator:
    /// `emissions[j-1] = floor(j*P/n) - floor((j-1)*P/n)`.
    ///
    /// The packet count in any prefix of `j` slots is `floor(j*P/n)`, so it
    /// never strays a full packet from the ideal straight line `j*P/n`.
    /// Identical inputs give bit-identical patterns.
    pub fn uniform(n: u32, total: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "trace duration n must be at least 1 slot".into(),
            ));
        }
        if total == 0 {
            return Err(Error::InvalidParameter(
                "trace packet count P must be at least 1".into(),
            ));
        }
        let n64 = u64::from(n);
        let p64 = u64::from(total);
        let emissions: Vec<u32> = (1..=n64)
            .map(|j| ((j * p64 / n64) - ((j - 1) * p64 / n64)) as u32)
            .collect();
        Ok(Self::from_parts(emissions, total))
    }

    /// Builds a trace from an explicit emission sequence (non-uniform
    /// patterns are allowed). Rejects empty sequences and all-zero totals.
    pub fn from_emissions(emissions: Vec<u32>) -> Result<Self> {
        if emissions.is_empty() {
            return Err(Error::InvalidParameter(
                "trace emission sequence must not be empty".into(),
            ));
        }
        let total: u64 = emissions.iter().map(|&p| u64::from(p)).sum();
        if total == 0 {
            return Err(Error::InvalidParameter(
                "trace must emit at least one packet".into(),
            ));
        }
        let total = u32::try_from(total).map_err(|_| {
            Error::InvalidParameter("trace packet total overflows u32".into())
        })?;
        Ok(Self::from_parts(emissions, total))
    }

    fn from_parts(emissions: Vec<u32>, total: u32) -> Self {
        let max_slot = emissions.iter().copied().max().unwrap_or(0);
        Trace {
            emissions,
            total,
            max_slot,
        }
    }

    /// Duration in slots (`n`).
    pub fn n(&self) -> u32 {
        self.emissions.len() as u32
    }

    /// Total packets per instance (`P`).
    pub fn total_packets(&self) -> u32 {
        self.total
    }

    /// Per-slot emission pattern.
    pub fn emissions(&self) -> &[u32] {
        &self.emissions
    }

    /// Largest single-slot emission; bounds per-slot link usage.
    pub fn max_slot_emission(&self) -> u32 {
        self.max_slot
    }

    /// Packets emitted in the first slot of the window.
    pub fn first_slot_emission(&self) -> u32 {
        self.emissions[0]
    }

    /// Average rate in packets per slot (`P/n`).
    pub fn rate(&self) -> f64 {
        f64::from(self.total) / f64::from(self.n())
    }
}

/// A running instance of a trace. Active on slots `start_slot..start_slot+n`
/// (half-open), so the instance covers exactly `n` slots and emits exactly
/// `P` packets.
#[derive(Debug, Clone)]
pub struct ActiveTrace {
    trace: Arc<Trace>,
    start_slot: u64,
    id: u64,
}

impl ActiveTrace {
    pub fn new(trace: Arc<Trace>, start_slot: u64, id: u64) -> Self {
        ActiveTrace {
            trace,
            start_slot,
            id,
        }
    }

    pub fn trace(&self) -> &Arc<Trace> {
        &self.trace
    }

    pub fn start_slot(&self) -> u64 {
        self.start_slot
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Packets this instance emits at slot `k`; zero outside the active
    /// window.
    pub fn emission_at(&self, k: u64) -> u32 {
        if k < self.start_slot {
            return 0;
        }
        let offset = k - self.start_slot;
        if offset >= u64::from(self.trace.n()) {
            return 0;
        }
        self.trace.emissions[offset as usize]
    }

    /// True while the instance still has emissions at or after slot `k`.
    pub fn is_active_at(&self, k: u64) -> bool {
        k >= self.start_slot && k < self.start_slot + u64::from(self.trace.n())
    }

    /// First slot the instance no longer covers.
    pub fn expiry_slot(&self) -> u64 {
        self.start_slot + u64::from(self.trace.n())
    }
}

/// The set of currently running trace instances.
#[derive(Debug, Default, Clone)]
pub struct ActiveTraceSet {
    active: Vec<ActiveTrace>,
    next_id: u64,
    started_total: u64,
}

impl ActiveTraceSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a new instance at `slot` and returns its id.
    pub fn start(&mut self, trace: &Arc<Trace>, slot: u64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.started_total += 1;
        self.active.push(ActiveTrace::new(Arc::clone(trace), slot, id));
        id
    }

    /// Drops instances whose window ended at or before slot `k`.
    pub fn expire(&mut self, k: u64) {
        self.active.retain(|t| t.expiry_slot() > k);
    }

    /// Total emission demanded at slot `k` by all active instances.
    /// Linear in the set: the sum over singletons.
    pub fn required_emission(&self, k: u64) -> u32 {
        self.active.iter().map(|t| t.emission_at(k)).sum()
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn instances(&self) -> &[ActiveTrace] {
        &self.active
    }

    /// Count of instances ever started.
    pub fn started_total(&self) -> u64 {
        self.started_total
    }
}
