//! Deterministic fault-injection simulator. One virtual-clock tick
//! runs every alive worker once, delivers heartbeats, applies the
//! recovery policy, and expires leases; scripted events kill tiers and
//! nodes, crash the store, checkpoint, and ship the log to a standby.
//! The same scenario and seed always produce the same ledger digest.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use configparser::ini::Ini;
use thiserror::Error;

use crate::clock::{Clock, VirtualClock};
use crate::demand::Params;
use crate::manager::{GlobalManager, ManagerError, RecoveryAction, RecoveryPolicy, HEARTBEAT_SIM_TICKS};
use crate::pipeline::classify::TrainingSet;
use crate::runtime::{
    build_registry, run_job, JobInput, JobMode, JobReport, JobSpec, RunContext, RuntimeError,
};
use crate::store::{DemandStore, StoreApi, StoreError};
use crate::tiers::{
    DemandGenerator, DemandWorker, ExecLedger, ExecutorRegistry, ResultPeer, SharedLedger,
    TierError, TierId, TierKind, DEFAULT_LEASE_SIM_TICKS,
};
use crate::util::{sha256, to_hex};
use crate::wal::{Wal, WalError};

pub const DEFAULT_SIM_TIMEOUT: u64 = 2_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Manager(#[from] ManagerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Wal(#[from] WalError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEventKind {
    /// Kill the nth spawned worker (spawn order, counting recovery
    /// respawns).
    KillWorker { index: usize },
    /// Take a whole node down, with every worker on it.
    KillNode { node: usize },
    /// Crash the store process; it recovers from its WAL, losing
    /// whatever was not yet committed there.
    CrashStore,
    /// Write a warehouse checkpoint and restart the log.
    Checkpoint,
    /// Replicate logged results to the standby store.
    ShipWal,
    /// Bring up an extra worker on a node.
    SpawnWorker { node: usize },
}

/// Event times are ticks since the start of the recognition phase;
/// the training phase always runs fault-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub at: u64,
    pub kind: SimEventKind,
}

/// The pipeline shape shared by every job in a scenario.
#[derive(Debug, Clone)]
pub struct PipelineChoice {
    pub loader: String,
    pub preprocessor: String,
    pub preprocessor_params: Params,
    pub extractor: String,
    pub extractor_params: Params,
    pub metric: String,
}

impl Default for PipelineChoice {
    fn default() -> Self {
        Self {
            loader: "sine".into(),
            preprocessor: "normalize".into(),
            preprocessor_params: Params::new(),
            extractor: "fft_features".into(),
            extractor_params: Params::new(),
            metric: "euclidean".into(),
        }
    }
}

impl PipelineChoice {
    pub fn to_spec(&self, mode: JobMode, inputs: Vec<JobInput>) -> JobSpec {
        JobSpec {
            mode,
            loader: self.loader.clone(),
            preprocessor: self.preprocessor.clone(),
            preprocessor_params: self.preprocessor_params.clone(),
            extractor: self.extractor.clone(),
            extractor_params: self.extractor_params.clone(),
            metric: self.metric.clone(),
            inputs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainPhase {
    pub subject: u32,
    pub inputs: Vec<JobInput>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    /// Worker count per node; one entry per node.
    pub workers_per_node: Vec<usize>,
    pub policy: RecoveryPolicy,
    pub lease: u64,
    pub timeout: u64,
    pub wal: bool,
    pub broadcast: bool,
    pub events: Vec<SimEvent>,
    pub pipeline: PipelineChoice,
    pub train: Vec<TrainPhase>,
    pub recognize: Vec<JobInput>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            workers_per_node: vec![2],
            policy: RecoveryPolicy::LetItBe,
            lease: DEFAULT_LEASE_SIM_TICKS,
            timeout: DEFAULT_SIM_TIMEOUT,
            wal: false,
            broadcast: false,
            events: Vec::new(),
            pipeline: PipelineChoice::default(),
            train: Vec::new(),
            recognize: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedOutcome {
    Completed,
    Stalled,
}

/// Assertions a scenario file can attach to its run.
#[derive(Debug, Clone, Default)]
pub struct Expectations {
    pub outcome: Option<ExpectedOutcome>,
    pub subjects: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub enum SimOutcome {
    Completed(JobReport),
    Stalled { input: String, stage: String },
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub outcome: SimOutcome,
    pub train_reports: Vec<JobReport>,
    pub warehouse_digest: String,
    pub standby_digest: String,
    pub exec_ledger: ExecLedger,
    pub ticks: u64,
}

impl SimReport {
    pub fn completed(&self) -> Option<&JobReport> {
        match &self.outcome {
            SimOutcome::Completed(r) => Some(r),
            SimOutcome::Stalled { .. } => None,
        }
    }

    /// Digest of everything the run decided: claims, executions,
    /// warehouse contents and the job outcome. Two runs of the same
    /// scenario must agree on it bit for bit.
    pub fn ledger_digest(&self) -> String {
        let mut buf = Vec::new();
        buf.extend_from_slice(self.warehouse_digest.as_bytes());
        buf.extend_from_slice(self.standby_digest.as_bytes());
        match &self.outcome {
            SimOutcome::Completed(r) => buf.extend_from_slice(r.digest().as_bytes()),
            SimOutcome::Stalled { input, stage } => {
                buf.extend_from_slice(input.as_bytes());
                buf.extend_from_slice(stage.as_bytes());
            }
        }
        for r in &self.train_reports {
            buf.extend_from_slice(r.digest().as_bytes());
        }
        for (sig, tiers) in &self.exec_ledger.claims {
            buf.extend_from_slice(sig.as_bytes());
            for t in tiers {
                buf.push(0);
                buf.extend_from_slice(t.as_bytes());
            }
        }
        for (stage, n) in &self.exec_ledger.executed_by_stage {
            buf.extend_from_slice(stage.as_bytes());
            buf.extend_from_slice(&n.to_be_bytes());
        }
        buf.extend_from_slice(&self.ticks.to_be_bytes());
        to_hex(&sha256(&buf))
    }

    pub fn matches(&self, expect: &Expectations) -> Result<(), String> {
        if let Some(want) = expect.outcome {
            let got = match self.outcome {
                SimOutcome::Completed(_) => ExpectedOutcome::Completed,
                SimOutcome::Stalled { .. } => ExpectedOutcome::Stalled,
            };
            if got != want {
                return Err(format!("expected outcome {want:?}, got {got:?}"));
            }
        }
        if let Some(subjects) = &expect.subjects {
            let report = self
                .completed()
                .ok_or_else(|| "expected subjects but the run stalled".to_string())?;
            let got: Vec<Option<u32>> = report.outcomes.iter().map(|o| o.subject).collect();
            let want: Vec<Option<u32>> = subjects.iter().map(|&s| Some(s)).collect();
            if got != want {
                return Err(format!("expected subjects {want:?}, got {got:?}"));
            }
        }
        Ok(())
    }
}

struct World {
    manager: GlobalManager,
    workers: BTreeMap<u64, DemandWorker>,
    spawn_order: Vec<u64>,
    next_event: usize,
    event_base: Option<u64>,
    fault: Option<String>,
}

/// A fully wired simulated deployment.
pub struct Simulation {
    clock: VirtualClock,
    store: Arc<DemandStore>,
    standby: Arc<DemandStore>,
    registry: Arc<ExecutorRegistry>,
    ts: Arc<Mutex<TrainingSet>>,
    dgt: DemandGenerator,
    ledger: SharedLedger,
    policy: RecoveryPolicy,
    lease: u64,
    timeout: u64,
    broadcast: bool,
    events: Vec<SimEvent>,
    world: RefCell<World>,
    _wal_dir: Option<tempfile::TempDir>,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let clock = VirtualClock::new();
        let store = Arc::new(DemandStore::new());
        let mut wal_dir = None;
        if scenario.wal {
            let dir = tempfile::tempdir()?;
            store.attach_wal(Wal::create(dir.path().join("store.wal"))?);
            wal_dir = Some(dir);
        }
        let standby = Arc::new(DemandStore::new());
        let ts = Arc::new(Mutex::new(TrainingSet::new(&scenario.pipeline.extractor)));
        let registry = Arc::new(build_registry(Arc::clone(&ts)));
        let mut manager = GlobalManager::new(
            Arc::clone(&store) as Arc<dyn StoreApi>,
            HEARTBEAT_SIM_TICKS,
            scenario.seed,
        );
        for i in 0..scenario.workers_per_node.len() {
            manager.register_node(&format!("host-{i}"), 0)?;
        }
        let dgt_id = manager.allocate_tier("node-0", TierKind::Dgt, 0)?;
        let dgt = DemandGenerator::new(
            dgt_id,
            Arc::clone(&store) as Arc<dyn StoreApi>,
            scenario.seed,
        );
        let mut events = scenario.events.clone();
        events.sort_by_key(|e| e.at);
        let sim = Self {
            clock,
            store,
            standby,
            registry,
            ts,
            dgt,
            ledger: Arc::default(),
            policy: scenario.policy,
            lease: scenario.lease,
            timeout: scenario.timeout,
            broadcast: scenario.broadcast,
            events,
            world: RefCell::new(World {
                manager,
                workers: BTreeMap::new(),
                spawn_order: Vec::new(),
                next_event: 0,
                event_base: None,
                fault: None,
            }),
            _wal_dir: wal_dir,
        };
        {
            let mut world = sim.world.borrow_mut();
            for (i, &count) in scenario.workers_per_node.iter().enumerate() {
                for _ in 0..count {
                    sim.spawn_worker(&mut world, &format!("node-{i}"))?;
                }
            }
        }
        Ok(sim)
    }

    pub fn store(&self) -> &Arc<DemandStore> {
        &self.store
    }

    pub fn standby(&self) -> &Arc<DemandStore> {
        &self.standby
    }

    pub fn training_set(&self) -> &Arc<Mutex<TrainingSet>> {
        &self.ts
    }

    fn spawn_worker(&self, world: &mut World, node_id: &str) -> Result<u64, SimError> {
        let tier = world
            .manager
            .allocate_tier(node_id, TierKind::Dwt, self.clock.now())?;
        let instance = tier.instance;
        let pool = self.registry.operations().map(String::from).collect();
        let mut worker = DemandWorker::new(
            tier,
            Arc::clone(&self.store) as Arc<dyn StoreApi>,
            pool,
            Arc::clone(&self.registry),
        )
        .with_ledger(Arc::clone(&self.ledger));
        if self.broadcast {
            worker = worker
                .with_peers(vec![Arc::clone(&self.standby) as Arc<dyn ResultPeer>]);
        }
        world.workers.insert(instance, worker);
        world.spawn_order.push(instance);
        Ok(instance)
    }

    fn kill_worker(&self, world: &mut World, instance: u64) {
        world.workers.remove(&instance);
    }

    fn apply_event(&self, world: &mut World, kind: &SimEventKind) -> Result<(), SimError> {
        match kind {
            SimEventKind::KillWorker { index } => {
                if let Some(&instance) = world.spawn_order.get(*index) {
                    self.kill_worker(world, instance);
                }
            }
            SimEventKind::KillNode { node } => {
                let node_id = format!("node-{node}");
                world.manager.mark_node_down(&node_id)?;
                let doomed: Vec<u64> = world
                    .workers
                    .iter()
                    .filter(|(_, w)| w.id().node_id == node_id)
                    .map(|(&i, _)| i)
                    .collect();
                for instance in doomed {
                    self.kill_worker(world, instance);
                }
            }
            SimEventKind::CrashStore => {
                self.store.crash_and_recover()?;
            }
            SimEventKind::Checkpoint => {
                let warehouse = self.store.warehouse_snapshot();
                if let Some(res) = self.store.with_wal(|w| w.checkpoint(&warehouse)) {
                    res?;
                }
            }
            SimEventKind::ShipWal => {
                let logged: Option<Vec<_>> = self
                    .store
                    .with_wal(|w| w.records().map(|r| (r.signature, r.after.clone())).collect());
                // Without a log the standby gets a warehouse copy.
                let entries = logged.unwrap_or_else(|| {
                    self.store.warehouse_snapshot().into_iter().collect()
                });
                for (sig, bytes) in entries {
                    self.standby.install_recovered(sig, bytes);
                }
            }
            SimEventKind::SpawnWorker { node } => {
                self.spawn_worker(world, &format!("node-{node}"))?;
            }
        }
        Ok(())
    }

    /// One scheduler round: scripted events, worker steps, heartbeats,
    /// lease expiry, recovery, clock advance.
    fn tick(&self, events_enabled: bool) -> Result<(), SimError> {
        let now = self.clock.now();
        let mut world = self.world.borrow_mut();
        let world = &mut *world;

        if events_enabled {
            let base = *world.event_base.get_or_insert(now);
            while world.next_event < self.events.len()
                && self.events[world.next_event].at <= now - base
            {
                let kind = self.events[world.next_event].kind.clone();
                world.next_event += 1;
                self.apply_event(world, &kind)?;
            }
        }

        for worker in world.workers.values() {
            // An executor failure leaves the claim to lease expiry.
            let _ = worker.run_once(now);
        }

        world.manager.record_heartbeat(self.dgt.id(), now)?;
        let alive: Vec<TierId> = world.workers.values().map(|w| w.id().clone()).collect();
        for id in &alive {
            world.manager.record_heartbeat(id, now)?;
        }

        self.store.requeue_expired(now, self.lease)?;

        let dead: Vec<TierId> = world
            .manager
            .monitored_tiers()
            .filter(|t| t.kind == TierKind::Dwt && !world.workers.contains_key(&t.instance))
            .cloned()
            .collect();
        for tier in dead {
            if world.manager.missed_heartbeats(&tier, now)? == 0 {
                continue;
            }
            let live = self.store.has_live_claims(&tier.to_string(), now, self.lease);
            match world.manager.on_heartbeat_missed(&tier, self.policy, now, live) {
                Ok(RecoveryAction::None) => {}
                Ok(RecoveryAction::Reassign { node_id })
                | Ok(RecoveryAction::Restart { node_id }) => {
                    world.manager.deallocate_tier(&tier, now)?;
                    self.spawn_worker(world, &node_id)?;
                }
                // Recovery is out of options; the run may stall.
                Err(ManagerError::NoCandidateNode) => {
                    world.manager.deallocate_tier(&tier, now)?;
                }
                Err(e) => return Err(e.into()),
            }
        }

        self.clock.advance(1);
        Ok(())
    }

    /// Drives one job over this deployment; scripted events fire only
    /// when `events` is set.
    pub fn run_phase(&self, spec: &JobSpec, events: bool) -> Result<JobReport, RuntimeError> {
        let ctx = RunContext {
            dgt: &self.dgt,
            store: self.store.as_ref(),
            clock: &self.clock,
            timeout: self.timeout,
        };
        let result = run_job(spec, &self.ts, &ctx, || {
            self.tick(events).map_err(|e| {
                let msg = e.to_string();
                self.world.borrow_mut().fault = Some(msg.clone());
                TierError::BadConfig(msg)
            })
        });
        if let Some(fault) = self.world.borrow_mut().fault.take() {
            return Err(RuntimeError::BadSpec(format!("simulation fault: {fault}")));
        }
        result
    }

    pub fn exec_ledger(&self) -> ExecLedger {
        self.ledger.lock().unwrap().clone()
    }
}

/// Runs a scenario end to end: the training phases fault-free, then
/// the recognition job with scripted events enabled.
pub fn simulate(scenario: &Scenario) -> Result<SimReport, SimError> {
    let sim = Simulation::new(scenario)?;
    let mut train_reports = Vec::new();
    for phase in &scenario.train {
        let inputs = phase.inputs.clone();
        let spec = scenario
            .pipeline
            .to_spec(JobMode::Train { subject_id: phase.subject }, inputs);
        train_reports.push(sim.run_phase(&spec, false)?);
    }
    let rec_spec = scenario
        .pipeline
        .to_spec(JobMode::Recognize, scenario.recognize.clone());
    let outcome = match sim.run_phase(&rec_spec, true) {
        Ok(report) => SimOutcome::Completed(report),
        Err(RuntimeError::Timeout { input, stage }) => {
            SimOutcome::Stalled { input, stage: stage.as_str().to_string() }
        }
        Err(e) => return Err(e.into()),
    };
    Ok(SimReport {
        outcome,
        train_reports,
        warehouse_digest: sim.store.warehouse_digest(),
        standby_digest: sim.standby.warehouse_digest(),
        exec_ledger: sim.exec_ledger(),
        ticks: sim.clock.now(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashSweep {
    pub acknowledged: usize,
    pub crash_points: usize,
    pub lost: usize,
}

/// Stores `results` demand results, then replays the log truncated at
/// every byte offset, checking that results acknowledged before each
/// crash point survive. Without a WAL this is the negative control:
/// everything acknowledged is lost.
pub fn crash_point_sweep(results: usize, with_wal: bool) -> Result<CrashSweep, SimError> {
    use crate::demand::{Demand, DemandId, DemandType, ParamValue};

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("sweep.wal");
    let store = DemandStore::new();
    if with_wal {
        store.attach_wal(Wal::create_with(&path, 4096, 0)?);
    }
    let pool = ["sweep".to_string()].into();
    let mut sigs = Vec::with_capacity(results);
    for i in 0..results {
        let mut params = Params::new();
        params.insert("i".into(), ParamValue::Int(i as i64));
        let d = Demand::new(
            DemandId([i as u8; 16]),
            DemandType::Procedural,
            "SW",
            "sweep",
            params,
            Vec::new(),
        );
        let sig = d.signature;
        store.put_demand(d)?;
        store.claim_pending("sweeper", &pool, i as u64)?;
        store.store_result(sig, vec![i as u8; 16], "sweeper", i as u64)?;
        sigs.push(sig);
    }

    if !with_wal {
        // Crash without a log: the in-memory warehouse is all there is.
        store.crash_and_recover()?;
        let lost = sigs
            .iter()
            .filter(|s| store.lookup(**s).unwrap_or(None).is_none())
            .count();
        return Ok(CrashSweep { acknowledged: results, crash_points: 1, lost });
    }

    let offsets = store
        .with_wal(|w| w.append_offsets().to_vec())
        .expect("wal attached");
    let full = std::fs::read(&path)?;
    let mut crash_points = 0usize;
    let mut lost = 0usize;
    for cut in 5..=full.len() {
        crash_points += 1;
        let torn_path = dir.path().join("torn.wal");
        std::fs::write(&torn_path, &full[..cut])?;
        let (recovered, _) = DemandStore::recover_from_wal(&torn_path)?;
        let acked = offsets.partition_point(|&o| o as usize <= cut);
        let survived = sigs
            .iter()
            .take(acked)
            .filter(|s| recovered.lookup(**s).unwrap_or(None).is_some())
            .count();
        lost += acked - survived;
    }
    Ok(CrashSweep { acknowledged: results, crash_points, lost })
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_at_arg(entry: &str, key: &str) -> Result<(u64, usize), SimError> {
    let (at, arg) = entry
        .split_once(':')
        .ok_or_else(|| SimError::Parse(format!("{key}: expected tick:arg, got {entry:?}")))?;
    let at = at
        .trim()
        .parse()
        .map_err(|_| SimError::Parse(format!("{key}: bad tick in {entry:?}")))?;
    let arg = arg
        .trim()
        .parse()
        .map_err(|_| SimError::Parse(format!("{key}: bad argument in {entry:?}")))?;
    Ok((at, arg))
}

fn parse_inputs(prefix: &str, value: &str) -> Vec<JobInput> {
    value
        .split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .enumerate()
        .map(|(i, spec)| JobInput {
            name: format!("{prefix}{i}"),
            bytes: spec.as_bytes().to_vec(),
        })
        .collect()
}

/// Parses a scenario file. Sections: `[topology]` (seed, workers,
/// policy, lease, timeout, wal, broadcast), `[job]` (loader,
/// preprocessor, extractor, metric, `train.<subject>` and `recognize`
/// input lists separated by `|`), `[events]` (`kill_worker`,
/// `kill_node`, `spawn_worker` as `tick:index` lists; `crash_store`,
/// `checkpoint`, `ship_wal` as tick lists), `[expect]` (outcome,
/// subjects).
pub fn parse_scenario(text: &str) -> Result<(Scenario, Expectations), SimError> {
    let mut ini = Ini::new();
    // Sine specs legitimately contain ';'.
    ini.set_inline_comment_symbols(Some(&[]));
    ini.read(text.to_string()).map_err(SimError::Parse)?;

    let mut scenario = Scenario::default();
    let get = |section: &str, key: &str| ini.get(section, key);

    if let Some(v) = get("topology", "seed") {
        scenario.seed = v.parse().map_err(|_| SimError::Parse("bad seed".into()))?;
    }
    if let Some(v) = get("topology", "workers") {
        scenario.workers_per_node = parse_list(&v)
            .iter()
            .map(|s| s.parse().map_err(|_| SimError::Parse(format!("bad worker count {s:?}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = get("topology", "policy") {
        let code = v.parse().map_err(|_| SimError::Parse("bad policy".into()))?;
        scenario.policy = RecoveryPolicy::from_code(code)
            .ok_or_else(|| SimError::Parse(format!("unknown policy {code}")))?;
    }
    if let Some(v) = get("topology", "lease") {
        scenario.lease = v.parse().map_err(|_| SimError::Parse("bad lease".into()))?;
    }
    if let Some(v) = get("topology", "timeout") {
        scenario.timeout = v.parse().map_err(|_| SimError::Parse("bad timeout".into()))?;
    }
    if let Some(v) = get("topology", "wal") {
        scenario.wal = v.parse().map_err(|_| SimError::Parse("bad wal flag".into()))?;
    }
    if let Some(v) = get("topology", "broadcast") {
        scenario.broadcast = v.parse().map_err(|_| SimError::Parse("bad broadcast flag".into()))?;
    }

    if let Some(v) = get("job", "loader") {
        scenario.pipeline.loader = v;
    }
    if let Some(v) = get("job", "preprocessor") {
        scenario.pipeline.preprocessor = v;
    }
    if let Some(v) = get("job", "extractor") {
        scenario.pipeline.extractor = v;
    }
    if let Some(v) = get("job", "metric") {
        scenario.pipeline.metric = v;
    }
    if let Some(job_keys) = ini.get_map_ref().get("job") {
        let mut train: Vec<TrainPhase> = Vec::new();
        for (key, value) in job_keys {
            if let Some(subject) = key.strip_prefix("train.") {
                let subject: u32 = subject
                    .parse()
                    .map_err(|_| SimError::Parse(format!("bad subject in key {key:?}")))?;
                let value = value
                    .clone()
                    .ok_or_else(|| SimError::Parse(format!("empty value for {key:?}")))?;
                train.push(TrainPhase {
                    subject,
                    inputs: parse_inputs(&format!("t{subject}-"), &value),
                });
            }
        }
        train.sort_by_key(|p| p.subject);
        scenario.train = train;
    }
    if let Some(v) = get("job", "recognize") {
        scenario.recognize = parse_inputs("r", &v);
    }

    for (key, make) in [
        ("kill_worker", &(|_at, arg| SimEventKind::KillWorker { index: arg })
            as &dyn Fn(u64, usize) -> SimEventKind),
        ("kill_node", &|_at, arg| SimEventKind::KillNode { node: arg }),
        ("spawn_worker", &|_at, arg| SimEventKind::SpawnWorker { node: arg }),
    ] {
        if let Some(v) = get("events", key) {
            for entry in parse_list(&v) {
                let (at, arg) = parse_at_arg(&entry, key)?;
                scenario.events.push(SimEvent { at, kind: make(at, arg) });
            }
        }
    }
    for (key, kind) in [
        ("crash_store", SimEventKind::CrashStore),
        ("checkpoint", SimEventKind::Checkpoint),
        ("ship_wal", SimEventKind::ShipWal),
    ] {
        if let Some(v) = get("events", key) {
            for entry in parse_list(&v) {
                let at = entry
                    .parse()
                    .map_err(|_| SimError::Parse(format!("{key}: bad tick {entry:?}")))?;
                scenario.events.push(SimEvent { at, kind: kind.clone() });
            }
        }
    }

    let mut expect = Expectations::default();
    if let Some(v) = get("expect", "outcome") {
        expect.outcome = Some(match v.as_str() {
            "completed" => ExpectedOutcome::Completed,
            "stalled" => ExpectedOutcome::Stalled,
            other => return Err(SimError::Parse(format!("unknown outcome {other:?}"))),
        });
    }
    if let Some(v) = get("expect", "subjects") {
        expect.subjects = Some(
            parse_list(&v)
                .iter()
                .map(|s| s.parse().map_err(|_| SimError::Parse(format!("bad subject {s:?}"))))
                .collect::<Result<_, _>>()?,
        );
    }
    Ok((scenario, expect))
}
