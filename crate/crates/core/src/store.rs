//! The Demand Store Tier (DST): middleware and cache between
//! generators and workers. Holds pending, in-process and computed
//! demands; the value warehouse memoizes results by content signature.
//!
//! A signature lives in at most one of {pending, in-process,
//! warehouse} at any instant, and warehouse entries are write-once
//! (first writer wins).

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::demand::{Demand, DemandSignature, DemandState};
use crate::wal::{Wal, WalError, Warehouse};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("demand not pending on put: {0:?}")]
    NotPending(DemandState),
    #[error("wal failure: {0}")]
    Wal(#[from] WalError),
    #[error("store transport failure: {0}")]
    Transport(String),
    #[error("store protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PutOutcome {
    Enqueued,
    AlreadyComputed(Vec<u8>),
    AlreadyInFlight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigLocation {
    Absent,
    Pending,
    InProcess,
    Computed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub puts: u64,
    pub claims: u64,
    pub hits: u64,
    pub misses: u64,
    pub stores: u64,
    pub requeues: u64,
    /// Warehouse consultations (lookup calls plus the check inside
    /// put); hits + misses == lookups.
    pub lookups: u64,
}

/// The store surface shared by the in-process store and the TCP
/// client, so tiers run unchanged in live and simulated topologies.
pub trait StoreApi: Send + Sync {
    fn put_demand(&self, d: Demand) -> Result<PutOutcome, StoreError>;
    fn claim_pending(
        &self,
        tier_id: &str,
        pool: &BTreeSet<String>,
        now: u64,
    ) -> Result<Option<Demand>, StoreError>;
    fn store_result(
        &self,
        sig: DemandSignature,
        result: Vec<u8>,
        tier_id: &str,
        now: u64,
    ) -> Result<StoreOutcome, StoreError>;
    fn lookup(&self, sig: DemandSignature) -> Result<Option<Vec<u8>>, StoreError>;
    fn requeue_expired(&self, now: u64, lease: u64) -> Result<Vec<DemandSignature>, StoreError>;
    fn locate(&self, sig: DemandSignature) -> Result<SigLocation, StoreError>;
    fn stats(&self) -> Result<StoreStats, StoreError>;
}

struct StoreInner {
    pending: VecDeque<Demand>,
    pending_sigs: HashSet<DemandSignature>,
    in_process: BTreeMap<DemandSignature, (Demand, String, u64)>,
    warehouse: Warehouse,
    stats: StoreStats,
    wal: Option<Wal>,
}

impl StoreInner {
    fn location(&self, sig: &DemandSignature) -> SigLocation {
        if self.warehouse.contains_key(sig) {
            SigLocation::Computed
        } else if self.in_process.contains_key(sig) {
            SigLocation::InProcess
        } else if self.pending_sigs.contains(sig) {
            SigLocation::Pending
        } else {
            SigLocation::Absent
        }
    }

    /// O(1) slice of the partition invariant for one signature.
    fn audit_sig(&self, sig: &DemandSignature) {
        let n = self.pending_sigs.contains(sig) as u8
            + self.in_process.contains_key(sig) as u8
            + self.warehouse.contains_key(sig) as u8;
        debug_assert!(n <= 1, "partition invariant violated for {sig:?}");
    }

    fn audit_full(&self) -> Result<(), String> {
        if self.pending.len() != self.pending_sigs.len() {
            return Err("pending queue and signature set out of sync".into());
        }
        for d in &self.pending {
            if !self.pending_sigs.contains(&d.signature) {
                return Err(format!("queued demand missing from set: {:?}", d.signature));
            }
            if d.state != DemandState::Pending {
                return Err(format!("non-pending demand in queue: {:?}", d.signature));
            }
        }
        for sig in &self.pending_sigs {
            if self.in_process.contains_key(sig) || self.warehouse.contains_key(sig) {
                return Err(format!("signature in multiple sets: {sig:?}"));
            }
        }
        for sig in self.in_process.keys() {
            if self.warehouse.contains_key(sig) {
                return Err(format!("signature in-process and computed: {sig:?}"));
            }
        }
        Ok(())
    }
}

/// Shared handle to one store instance. Cloning shares state; all
/// operations are atomic under concurrent callers from any tier.
#[derive(Clone)]
pub struct DemandStore {
    inner: Arc<Mutex<StoreInner>>,
}

impl Default for DemandStore {
    fn default() -> Self {
        Self::new()
    }
}

impl DemandStore {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(Mutex::new(StoreInner {
                pending: VecDeque::new(),
                pending_sigs: HashSet::new(),
                in_process: BTreeMap::new(),
                warehouse: Warehouse::new(),
                stats: StoreStats::default(),
                wal: None,
            })),
        }
    }

    /// Attaches a WAL; every store_result is appended (and durable)
    /// before it is acknowledged.
    pub fn attach_wal(&self, wal: Wal) {
        self.inner.lock().unwrap().wal = Some(wal);
    }

    /// Rebuilds a fresh store from a WAL (checkpoint + surviving
    /// records), as after a crash. Pending and in-process demands are
    /// lost; generators re-issue them.
    pub fn recover_from_wal(path: impl AsRef<std::path::Path>) -> Result<(Self, usize), StoreError> {
        let store = Self::new();
        let mut warehouse = Warehouse::new();
        let n = Wal::replay_into(path, &mut warehouse)?;
        store.inner.lock().unwrap().warehouse = warehouse;
        Ok((store, n))
    }

    pub fn with_wal<R>(&self, f: impl FnOnce(&mut Wal) -> R) -> Option<R> {
        self.inner.lock().unwrap().wal.as_mut().map(f)
    }

    pub fn warehouse_snapshot(&self) -> Warehouse {
        self.inner.lock().unwrap().warehouse.clone()
    }

    /// SHA-256 over the sorted warehouse contents; the simulator's
    /// ledger digest building block.
    pub fn warehouse_digest(&self) -> String {
        let inner = self.inner.lock().unwrap();
        let mut buf = Vec::new();
        for (sig, bytes) in &inner.warehouse {
            buf.extend_from_slice(sig.as_bytes());
            buf.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
            buf.extend_from_slice(bytes);
        }
        crate::util::to_hex(&crate::util::sha256(&buf))
    }

    pub fn warehouse_len(&self) -> usize {
        self.inner.lock().unwrap().warehouse.len()
    }

    pub fn pending_len(&self) -> usize {
        self.inner.lock().unwrap().pending.len()
    }

    pub fn in_process_len(&self) -> usize {
        self.inner.lock().unwrap().in_process.len()
    }

    /// Full partition-invariant audit over all three sets.
    pub fn audit(&self) -> Result<(), String> {
        self.inner.lock().unwrap().audit_full()
    }

    /// Simulates a crash of this store process: pending and
    /// in-process demands vanish; the warehouse is rebuilt from the
    /// attached WAL (or lost entirely without one). Returns the number
    /// of log records replayed.
    pub fn crash_and_recover(&self) -> Result<usize, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        inner.pending.clear();
        inner.pending_sigs.clear();
        inner.in_process.clear();
        inner.warehouse.clear();
        let replayed = match inner.wal.as_ref().map(|w| w.path().to_path_buf()) {
            Some(path) => {
                let mut warehouse = Warehouse::new();
                let n = Wal::replay_into(&path, &mut warehouse)?;
                inner.warehouse = warehouse;
                n
            }
            None => 0,
        };
        Ok(replayed)
    }

    /// True when `tier_id` holds any claim whose lease has not yet
    /// expired. The manager uses this to veto crash presumptions.
    pub fn has_live_claims(&self, tier_id: &str, now: u64, lease: u64) -> bool {
        let inner = self.inner.lock().unwrap();
        inner
            .in_process
            .values()
            .any(|(_, holder, claimed)| holder == tier_id && now.saturating_sub(*claimed) <= lease)
    }

    /// Installs a recovered result directly (replication/replay path);
    /// bypasses the WAL and the stats counters.
    pub fn install_recovered(&self, sig: DemandSignature, bytes: Vec<u8>) {
        let mut inner = self.inner.lock().unwrap();
        inner.pending.retain(|d| d.signature != sig);
        inner.pending_sigs.remove(&sig);
        inner.in_process.remove(&sig);
        inner.warehouse.entry(sig).or_insert(bytes);
    }
}

impl StoreApi for DemandStore {
    fn put_demand(&self, d: Demand) -> Result<PutOutcome, StoreError> {
        if d.state != DemandState::Pending {
            return Err(StoreError::NotPending(d.state));
        }
        let mut inner = self.inner.lock().unwrap();
        inner.stats.lookups += 1;
        if let Some(bytes) = inner.warehouse.get(&d.signature) {
            let bytes = bytes.clone();
            inner.stats.hits += 1;
            return Ok(PutOutcome::AlreadyComputed(bytes));
        }
        inner.stats.misses += 1;
        if inner.pending_sigs.contains(&d.signature) || inner.in_process.contains_key(&d.signature)
        {
            return Ok(PutOutcome::AlreadyInFlight);
        }
        let sig = d.signature;
        inner.pending_sigs.insert(sig);
        inner.pending.push_back(d);
        inner.stats.puts += 1;
        inner.audit_sig(&sig);
        Ok(PutOutcome::Enqueued)
    }

    fn claim_pending(
        &self,
        tier_id: &str,
        pool: &BTreeSet<String>,
        now: u64,
    ) -> Result<Option<Demand>, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let idx = match inner.pending.iter().position(|d| pool.contains(&d.operation)) {
            Some(i) => i,
            None => return Ok(None),
        };
        let mut d = inner.pending.remove(idx).expect("index valid under lock");
        inner.pending_sigs.remove(&d.signature);
        d.bump_access();
        let d = d
            .transition(DemandState::InProcess, tier_id, now)
            .expect("pending demand claims are legal");
        let sig = d.signature;
        inner.in_process.insert(sig, (d.clone(), tier_id.to_string(), now));
        inner.stats.claims += 1;
        inner.audit_sig(&sig);
        Ok(Some(d))
    }

    fn store_result(
        &self,
        sig: DemandSignature,
        result: Vec<u8>,
        tier_id: &str,
        now: u64,
    ) -> Result<StoreOutcome, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.warehouse.contains_key(&sig) {
            return Ok(StoreOutcome::Duplicate);
        }
        // Write-ahead ordering: durable in the log before the
        // warehouse write is acknowledged.
        if let Some(wal) = inner.wal.as_mut() {
            wal.append(sig, None, result.clone())?;
        }
        if let Some((d, _, _)) = inner.in_process.remove(&sig) {
            let _ = d.complete(result.clone(), tier_id, now);
        }
        inner.pending.retain(|d| d.signature != sig);
        inner.pending_sigs.remove(&sig);
        inner.warehouse.insert(sig, result);
        inner.stats.stores += 1;
        inner.audit_sig(&sig);
        if inner.wal.as_ref().is_some_and(Wal::wants_checkpoint) {
            let snapshot = inner.warehouse.clone();
            if let Some(wal) = inner.wal.as_mut() {
                wal.checkpoint(&snapshot)?;
            }
        }
        Ok(StoreOutcome::Stored)
    }

    fn lookup(&self, sig: DemandSignature) -> Result<Option<Vec<u8>>, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        inner.stats.lookups += 1;
        match inner.warehouse.get(&sig).cloned() {
            Some(bytes) => {
                inner.stats.hits += 1;
                Ok(Some(bytes))
            }
            None => {
                inner.stats.misses += 1;
                Ok(None)
            }
        }
    }

    fn requeue_expired(&self, now: u64, lease: u64) -> Result<Vec<DemandSignature>, StoreError> {
        assert!(lease > 0, "lease must be positive");
        let mut inner = self.inner.lock().unwrap();
        let mut expired: Vec<(u64, DemandSignature)> = inner
            .in_process
            .iter()
            .filter(|(_, (_, _, claimed))| now.saturating_sub(*claimed) > lease)
            .map(|(sig, (_, _, claimed))| (*claimed, *sig))
            .collect();
        // Earliest claim ends up at the front of the queue.
        expired.sort();
        let mut out = Vec::with_capacity(expired.len());
        for (_, sig) in expired.iter().rev() {
            let (d, _, _) = inner.in_process.remove(sig).expect("present under lock");
            let d = d
                .transition(DemandState::Pending, "store-requeue", now)
                .expect("in-process demands may requeue");
            inner.pending_sigs.insert(*sig);
            inner.pending.push_front(d);
            inner.stats.requeues += 1;
            inner.audit_sig(sig);
        }
        for (_, sig) in expired {
            out.push(sig);
        }
        Ok(out)
    }

    fn locate(&self, sig: DemandSignature) -> Result<SigLocation, StoreError> {
        Ok(self.inner.lock().unwrap().location(&sig))
    }

    fn stats(&self) -> Result<StoreStats, StoreError> {
        Ok(self.inner.lock().unwrap().stats.clone())
    }
}
