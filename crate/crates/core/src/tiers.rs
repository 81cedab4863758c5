//! Demand Generator Tier (DGT) and Demand Worker Tier (DWT) wrappers,
//! their controllers, and the executor registry workers dispatch into.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::Clock;
use crate::demand::{Demand, DemandId, DemandSignature, DemandType, Params};
use crate::store::{PutOutcome, StoreApi, StoreError};

pub const DEFAULT_LEASE_LIVE_MS: u64 = 10_000;
pub const DEFAULT_LEASE_SIM_TICKS: u64 = 5;
pub const DEFAULT_AWAIT_POLL_MS: u64 = 10;

#[derive(Debug, Error)]
pub enum TierError {
    #[error("bad tier configuration: {0}")]
    BadConfig(String),
    #[error("store unreachable: {0}")]
    StoreUnreachable(#[from] StoreError),
    #[error("timed out awaiting {0}")]
    Timeout(DemandSignature),
    #[error("executor failed for {sig}: {message}")]
    ExecutorFailure { sig: DemandSignature, message: String },
    #[error("no executor registered for operation {0:?}")]
    UnknownOperation(String),
    #[error("unknown tier instance {0}")]
    UnknownTier(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TierKind {
    Dgt,
    Dwt,
    Dst,
    Gmt,
}

impl TierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TierKind::Dgt => "DGT",
            TierKind::Dwt => "DWT",
            TierKind::Dst => "DST",
            TierKind::Gmt => "GMT",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().as_str() {
            "DGT" => TierKind::Dgt,
            "DWT" => TierKind::Dwt,
            "DST" => TierKind::Dst,
            "GMT" => TierKind::Gmt,
            _ => return None,
        })
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    SampleLoading,
    Preprocessing,
    FeatureExtraction,
    TrainingClassification,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::SampleLoading,
        Stage::Preprocessing,
        Stage::FeatureExtraction,
        Stage::TrainingClassification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SampleLoading => "SL",
            Stage::Preprocessing => "P",
            Stage::FeatureExtraction => "FE",
            Stage::TrainingClassification => "TC",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().as_str() {
            "SL" => Stage::SampleLoading,
            "P" => Stage::Preprocessing,
            "FE" => Stage::FeatureExtraction,
            "TC" => Stage::TrainingClassification,
            _ => return None,
        })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unique tier identity within a run: node, kind, and the
/// controller's monotone instance counter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TierId {
    pub node_id: String,
    pub kind: TierKind,
    pub instance: u64,
}

impl fmt::Display for TierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}-{}", self.node_id, self.kind.as_str(), self.instance)
    }
}

/// String-keyed property map with prototype semantics: cloning yields
/// an independent, equal copy.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Configuration {
    settings: BTreeMap<String, String>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.settings.insert(key.to_string(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.settings.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, TierError> {
        self.get(key)
            .ok_or_else(|| TierError::BadConfig(format!("missing key {key:?}")))
    }

    pub fn settings(&self) -> &BTreeMap<String, String> {
        &self.settings
    }
}

/// One pipeline stage of a planned job: the operation a generator
/// demands and the pool a worker must advertise to serve it.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage: Stage,
    pub operation: String,
    pub params: Params,
    pub pool: BTreeSet<String>,
}

impl StagePlan {
    pub fn new(stage: Stage, operation: &str, params: Params) -> Self {
        let mut pool = BTreeSet::new();
        pool.insert(operation.to_string());
        Self { stage, operation: operation.to_string(), params, pool }
    }
}

pub type ExecutorFn = dyn Fn(&Params, &[u8]) -> Result<Vec<u8>, String> + Send + Sync;

/// Operation-name to executor dispatch. Executors are compiled in and
/// selected by name; no dynamic code loading.
#[derive(Default)]
pub struct ExecutorRegistry {
    executors: BTreeMap<String, Arc<ExecutorFn>>,
}

impl ExecutorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        operation: &str,
        f: impl Fn(&Params, &[u8]) -> Result<Vec<u8>, String> + Send + Sync + 'static,
    ) {
        self.executors.insert(operation.to_string(), Arc::new(f));
    }

    pub fn operations(&self) -> impl Iterator<Item = &str> {
        self.executors.keys().map(String::as_str)
    }

    pub fn execute(&self, operation: &str, params: &Params, payload: &[u8]) -> Result<Vec<u8>, TierError> {
        let f = self
            .executors
            .get(operation)
            .ok_or_else(|| TierError::UnknownOperation(operation.to_string()))?;
        f(params, payload).map_err(|message| TierError::ExecutorFailure {
            sig: crate::demand::compute_signature("", operation, params, payload),
            message,
        })
    }
}

/// Per-run execution bookkeeping shared by workers and the driver.
#[derive(Debug, Default, Clone)]
pub struct ExecLedger {
    /// Local executor runs per tier id.
    pub executed_by_tier: BTreeMap<String, u64>,
    /// Local executor runs per stage.
    pub executed_by_stage: BTreeMap<String, u64>,
    /// Results adopted from a peer instead of computed locally.
    pub adopted: u64,
    /// Claim history per signature, in claim order.
    pub claims: BTreeMap<String, Vec<String>>,
}

impl ExecLedger {
    pub fn total_executed(&self) -> u64 {
        self.executed_by_tier.values().sum()
    }
}

pub type SharedLedger = Arc<Mutex<ExecLedger>>;

/// A peer that may already hold a computed result (another store or a
/// replica); the broadcast-before-compute protocol queries these.
pub trait ResultPeer: Send + Sync {
    fn fetch_result(&self, sig: DemandSignature) -> Option<Vec<u8>>;
}

impl ResultPeer for crate::store::DemandStore {
    fn fetch_result(&self, sig: DemandSignature) -> Option<Vec<u8>> {
        self.lookup(sig).ok().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BroadcastOutcome {
    Adopted(Vec<u8>),
    ComputeLocally,
}

/// Queries peers for an existing result before computing. The first
/// response wins; no response (or no peers) means compute locally.
pub fn broadcast_before_compute(
    sig: DemandSignature,
    peers: &[Arc<dyn ResultPeer>],
) -> BroadcastOutcome {
    for peer in peers {
        if let Some(bytes) = peer.fetch_result(sig) {
            return BroadcastOutcome::Adopted(bytes);
        }
    }
    BroadcastOutcome::ComputeLocally
}

/// Demand Generator Tier instance: encapsulates pipeline work as
/// procedural demands and deposits them in the store.
pub struct DemandGenerator {
    id: TierId,
    store: Arc<dyn StoreApi>,
    rng: Mutex<ChaCha8Rng>,
}

impl DemandGenerator {
    pub fn new(id: TierId, store: Arc<dyn StoreApi>, seed: u64) -> Self {
        Self { id, store, rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn id(&self) -> &TierId {
        &self.id
    }

    /// Builds a procedural demand from the plan and the input payload
    /// and puts it. The signature identifies the work whether it was
    /// enqueued, already in flight, or already computed.
    pub fn generate(
        &self,
        plan: &StagePlan,
        payload: Vec<u8>,
    ) -> Result<(DemandSignature, PutOutcome), TierError> {
        let demand = self.build_demand(plan, payload);
        let sig = demand.signature;
        let outcome = self.store.put_demand(demand)?;
        Ok((sig, outcome))
    }

    pub fn build_demand(&self, plan: &StagePlan, payload: Vec<u8>) -> Demand {
        let id = DemandId::generate(&mut *self.rng.lock().unwrap());
        Demand::new(
            id,
            DemandType::Procedural,
            plan.stage.as_str(),
            &plan.operation,
            plan.params.clone(),
            payload,
        )
    }

    /// Polls the warehouse until the result arrives. `pump` runs once
    /// per poll round: a sleep in live mode, one scheduler tick in
    /// simulation.
    pub fn await_result(
        &self,
        sig: DemandSignature,
        timeout: u64,
        clock: &dyn Clock,
        mut pump: impl FnMut() -> Result<(), TierError>,
    ) -> Result<Vec<u8>, TierError> {
        let deadline = clock.now().saturating_add(timeout);
        loop {
            if let Some(bytes) = self.store.lookup(sig)? {
                return Ok(bytes);
            }
            if clock.now() >= deadline {
                return Err(TierError::Timeout(sig));
            }
            pump()?;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerStep {
    Executed(DemandSignature),
    Idle,
}

/// Demand Worker Tier instance: claims pending demands whose
/// operation is in its pool, executes them, stores the results.
pub struct DemandWorker {
    id: TierId,
    store: Arc<dyn StoreApi>,
    pool: BTreeSet<String>,
    registry: Arc<ExecutorRegistry>,
    peers: Vec<Arc<dyn ResultPeer>>,
    ledger: Option<SharedLedger>,
}

impl DemandWorker {
    pub fn new(
        id: TierId,
        store: Arc<dyn StoreApi>,
        pool: BTreeSet<String>,
        registry: Arc<ExecutorRegistry>,
    ) -> Self {
        assert!(!pool.is_empty(), "worker pool must be nonempty");
        Self { id, store, pool, registry, peers: Vec::new(), ledger: None }
    }

    pub fn with_peers(mut self, peers: Vec<Arc<dyn ResultPeer>>) -> Self {
        self.peers = peers;
        self
    }

    pub fn with_ledger(mut self, ledger: SharedLedger) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn id(&self) -> &TierId {
        &self.id
    }

    pub fn pool(&self) -> &BTreeSet<String> {
        &self.pool
    }

    /// Claims and executes at most one demand. An executor failure
    /// leaves the claim to lease expiry; a healthy worker picks the
    /// demand up again later.
    pub fn run_once(&self, now: u64) -> Result<WorkerStep, TierError> {
        let tier = self.id.to_string();
        let demand = match self.store.claim_pending(&tier, &self.pool, now)? {
            Some(d) => d,
            None => return Ok(WorkerStep::Idle),
        };
        let sig = demand.signature;
        if let Some(ledger) = &self.ledger {
            ledger
                .lock()
                .unwrap()
                .claims
                .entry(sig.to_hex())
                .or_default()
                .push(tier.clone());
        }
        if !self.peers.is_empty() {
            if let BroadcastOutcome::Adopted(bytes) = broadcast_before_compute(sig, &self.peers) {
                self.store.store_result(sig, bytes, &tier, now)?;
                if let Some(ledger) = &self.ledger {
                    ledger.lock().unwrap().adopted += 1;
                }
                return Ok(WorkerStep::Executed(sig));
            }
        }
        let result = self
            .registry
            .execute(&demand.operation, &demand.params, &demand.payload)
            .map_err(|e| match e {
                TierError::ExecutorFailure { message, .. } => {
                    TierError::ExecutorFailure { sig, message }
                }
                other => other,
            })?;
        self.store.store_result(sig, result, &tier, now)?;
        if let Some(ledger) = &self.ledger {
            let mut ledger = ledger.lock().unwrap();
            *ledger.executed_by_tier.entry(tier).or_default() += 1;
            *ledger
                .executed_by_stage
                .entry(demand.stage.clone())
                .or_default() += 1;
        }
        Ok(WorkerStep::Executed(sig))
    }
}

pub enum TierHandle {
    Generator(Arc<DemandGenerator>),
    Worker(Arc<DemandWorker>),
}

impl TierHandle {
    pub fn id(&self) -> &TierId {
        match self {
            TierHandle::Generator(g) => g.id(),
            TierHandle::Worker(w) => w.id(),
        }
    }
}

/// Factory-style controller hosting tier instances on one node.
/// Instance counters never repeat within a controller.
pub struct TierController {
    node_id: String,
    store: Arc<dyn StoreApi>,
    registry: Arc<ExecutorRegistry>,
    counter: u64,
    active: BTreeMap<u64, TierHandle>,
    seed: u64,
}

impl TierController {
    pub fn new(node_id: &str, store: Arc<dyn StoreApi>, registry: Arc<ExecutorRegistry>, seed: u64) -> Self {
        Self {
            node_id: node_id.to_string(),
            store,
            registry,
            counter: 0,
            active: BTreeMap::new(),
            seed,
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn active_tiers(&self) -> impl Iterator<Item = &TierHandle> {
        self.active.values()
    }

    /// Spawns a tier from its configuration. Required keys: `kind`,
    /// `node_id`; workers additionally take `pool` (comma-separated
    /// operation names).
    pub fn add_tier(&mut self, cfg: &Configuration) -> Result<TierId, TierError> {
        let kind = TierKind::from_str(cfg.require("kind")?)
            .ok_or_else(|| TierError::BadConfig("unknown kind".into()))?;
        let node_id = cfg.require("node_id")?.to_string();
        let instance = self.counter;
        self.counter += 1;
        let id = TierId { node_id, kind, instance };
        let handle = match kind {
            TierKind::Dgt => TierHandle::Generator(Arc::new(DemandGenerator::new(
                id.clone(),
                Arc::clone(&self.store),
                self.seed ^ instance,
            ))),
            TierKind::Dwt => {
                let pool: BTreeSet<String> = cfg
                    .require("pool")?
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
                if pool.is_empty() {
                    return Err(TierError::BadConfig("empty worker pool".into()));
                }
                TierHandle::Worker(Arc::new(DemandWorker::new(
                    id.clone(),
                    Arc::clone(&self.store),
                    pool,
                    Arc::clone(&self.registry),
                )))
            }
            other => {
                return Err(TierError::BadConfig(format!(
                    "controller cannot host {} tiers",
                    other.as_str()
                )))
            }
        };
        self.active.insert(instance, handle);
        Ok(id)
    }

    /// Stops and removes a tier instance. Tiers are removable at
    /// runtime; in-flight claims recover via lease expiry.
    pub fn remove_tier(&mut self, instance: u64) -> Result<(), TierError> {
        self.active
            .remove(&instance)
            .map(|_| ())
            .ok_or(TierError::UnknownTier(instance))
    }
}
