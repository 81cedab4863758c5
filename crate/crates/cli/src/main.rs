//! `edupipe`: command-line driver for the eductive runtime. Train on a
//! corpus, recognize a single input, replay a simulation scenario, or
//! inspect a write-ahead log.
//!
//! Exit codes: 0 success; 1 pipeline failure; 2 bad invocation or
//! malformed input files; 3 scenario expectation failure.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use configparser::ini::Ini;

use eductive::clock::{Clock, WallClock};
use eductive::demand::DemandSignature;
use eductive::manager::RecoveryPolicy;
use eductive::pipeline::classify::{ResultSet, TrainingSet};
use eductive::pipeline::distance::Metric;
use eductive::pipeline::{feature_op_for_id, preprocessing_op_for_id};
use eductive::runtime::{
    build_registry, run_job, JobInput, JobMode, JobReport, JobSpec, RunContext, RuntimeError,
    DEFAULT_JOB_TIMEOUT,
};
use eductive::sim::{parse_scenario, simulate, SimOutcome};
use eductive::store::{DemandStore, StoreApi};
use eductive::tiers::{DemandGenerator, DemandWorker, TierId, TierKind, WorkerStep};
use eductive::wal::Wal;

const TRAINING_SET_FILE: &str = "trainingset.dtsf";
const REPORT_FILE: &str = "report.json";

#[derive(Parser)]
#[command(name = "edupipe", version, about = "Demand-driven pattern-recognition pipeline")]
struct Cli {
    /// INI config file; falls back to $EDU_PIPE_CONFIG.
    /// Precedence: built-in defaults, then file, then flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Job mode (train | recognize); must agree with the subcommand.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Sample loader: wav, sine, text, or raw.
    #[arg(long, global = true)]
    loader: Option<String>,
    /// Preprocessing operation, by name or numeric module ID.
    #[arg(long, global = true)]
    preproc: Option<String>,
    /// Feature extractor, by name or numeric module ID.
    #[arg(long, global = true)]
    fe: Option<String>,
    /// Distance metric, by name or numeric module ID.
    #[arg(long, global = true)]
    metric: Option<String>,
    /// Recovery policy code 0..=4 (simulate only).
    #[arg(long, global = true)]
    policy: Option<u8>,
    /// Artifact directory for the training set and reports.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Write-ahead log file backing the demand store.
    #[arg(long, global = true)]
    wal: Option<PathBuf>,
    /// Seed for demand IDs and scenario randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads to spawn.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a corpus laid out as <dir>/<subject_id>/<files>.
    Train { corpus: PathBuf },
    /// Classify one input against a training set file.
    Recognize { input: PathBuf, trainingset: PathBuf },
    /// Run a scenario file and check its expectations.
    Simulate { scenario: PathBuf },
    /// Dump a write-ahead log and its recovered warehouse.
    StoreInspect { path: PathBuf },
}

/// Settings after merging defaults, the config file, and flags.
struct Settings {
    loader: String,
    preproc: String,
    fe: String,
    metric: String,
    policy: Option<u8>,
    store_dir: PathBuf,
    wal: Option<PathBuf>,
    seed: u64,
    workers: usize,
    low_hz: f64,
    high_hz: f64,
}

fn usage_error(message: impl AsRef<str>) -> ExitCode {
    eprintln!("error: {}", message.as_ref());
    ExitCode::from(2)
}

fn load_settings(cli: &Cli) -> Result<Settings, String> {
    let mut s = Settings {
        loader: "wav".into(),
        preproc: "normalize".into(),
        fe: "fft_features".into(),
        metric: "euclidean".into(),
        policy: None,
        store_dir: PathBuf::from("."),
        wal: None,
        seed: 0,
        workers: 2,
        low_hz: 1000.0,
        high_hz: 2800.0,
    };

    let config_path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("EDU_PIPE_CONFIG").map(PathBuf::from));
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("config {}: {e}", path.display()))?;
        let mut ini = Ini::new();
        ini.set_inline_comment_symbols(Some(&[]));
        ini.read(text).map_err(|e| format!("config {}: {e}", path.display()))?;
        let get = |key: &str| ini.get("pipeline", key).or_else(|| ini.get("default", key));
        if let Some(v) = get("loader") {
            s.loader = v;
        }
        if let Some(v) = get("preproc") {
            s.preproc = v;
        }
        if let Some(v) = get("fe") {
            s.fe = v;
        }
        if let Some(v) = get("metric") {
            s.metric = v;
        }
        if let Some(v) = get("policy") {
            s.policy = Some(v.parse().map_err(|_| format!("config: bad policy {v:?}"))?);
        }
        if let Some(v) = get("store") {
            s.store_dir = PathBuf::from(v);
        }
        if let Some(v) = get("wal") {
            s.wal = Some(PathBuf::from(v));
        }
        if let Some(v) = get("seed") {
            s.seed = v.parse().map_err(|_| format!("config: bad seed {v:?}"))?;
        }
        if let Some(v) = get("workers") {
            s.workers = v.parse().map_err(|_| format!("config: bad workers {v:?}"))?;
        }
        if let Some(v) = get("low_hz") {
            s.low_hz = v.parse().map_err(|_| format!("config: bad low_hz {v:?}"))?;
        }
        if let Some(v) = get("high_hz") {
            s.high_hz = v.parse().map_err(|_| format!("config: bad high_hz {v:?}"))?;
        }
    }

    if let Some(v) = &cli.loader {
        s.loader = v.clone();
    }
    if let Some(v) = &cli.preproc {
        s.preproc = v.clone();
    }
    if let Some(v) = &cli.fe {
        s.fe = v.clone();
    }
    if let Some(v) = &cli.metric {
        s.metric = v.clone();
    }
    if cli.policy.is_some() {
        s.policy = cli.policy;
    }
    if let Some(v) = &cli.store {
        s.store_dir = v.clone();
    }
    if let Some(v) = &cli.wal {
        s.wal = Some(v.clone());
    }
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    if let Some(v) = cli.workers {
        s.workers = v.max(1);
    }

    // Numeric module IDs are an alternate selection scheme.
    if let Ok(id) = s.preproc.parse::<i64>() {
        s.preproc = preprocessing_op_for_id(id).map_err(|e| e.to_string())?.to_string();
    }
    if let Ok(id) = s.fe.parse::<i64>() {
        s.fe = feature_op_for_id(id).map_err(|e| e.to_string())?.to_string();
    }
    if let Ok(id) = s.metric.parse::<i64>() {
        s.metric = Metric::from_id(id).map_err(|e| e.to_string())?.name().to_string();
    }
    Ok(s)
}

fn check_mode(cli: &Cli) -> Result<(), String> {
    let Some(mode) = &cli.mode else { return Ok(()) };
    let expected = match &cli.command {
        Command::Train { .. } => "train",
        Command::Recognize { .. } => "recognize",
        _ => return Err(format!("--mode {mode} does not apply to this subcommand")),
    };
    if mode != expected {
        return Err(format!("--mode {mode} conflicts with the {expected} subcommand"));
    }
    Ok(())
}

/// An in-process topology: one store, one generator, worker threads.
struct Live {
    store: Arc<DemandStore>,
    ts: Arc<Mutex<TrainingSet>>,
    dgt: DemandGenerator,
    clock: Arc<WallClock>,
    shutdown: Arc<AtomicBool>,
    failure: Arc<Mutex<Option<eductive::tiers::TierError>>>,
    threads: Vec<std::thread::JoinHandle<()>>,
}

impl Live {
    fn start(settings: &Settings) -> Result<Self, String> {
        let store = Arc::new(DemandStore::new());
        if let Some(path) = &settings.wal {
            if path.exists() {
                let (recovered, n) = DemandStore::recover_from_wal(path)
                    .map_err(|e| format!("wal {}: {e}", path.display()))?;
                for (sig, bytes) in recovered.warehouse_snapshot() {
                    store.install_recovered(sig, bytes);
                }
                if n > 0 {
                    eprintln!("recovered {n} results from {}", path.display());
                }
            }
            // Creating the log truncates it, so fold everything just
            // recovered into an immediate checkpoint.
            let mut wal =
                Wal::create(path).map_err(|e| format!("wal {}: {e}", path.display()))?;
            wal.checkpoint(&store.warehouse_snapshot())
                .map_err(|e| format!("wal {}: {e}", path.display()))?;
            store.attach_wal(wal);
        }

        let ts = Arc::new(Mutex::new(TrainingSet::new(&settings.fe)));
        let registry = Arc::new(build_registry(Arc::clone(&ts)));
        let pool: BTreeSet<String> = registry.operations().map(String::from).collect();
        let clock = Arc::new(WallClock::new());
        let shutdown = Arc::new(AtomicBool::new(false));
        let failure: Arc<Mutex<Option<eductive::tiers::TierError>>> = Arc::default();
        let dgt = DemandGenerator::new(
            TierId { node_id: "node-0".into(), kind: TierKind::Dgt, instance: 0 },
            Arc::clone(&store) as Arc<dyn StoreApi>,
            settings.seed,
        );
        let threads = (0..settings.workers)
            .map(|i| {
                let worker = DemandWorker::new(
                    TierId {
                        node_id: "node-0".into(),
                        kind: TierKind::Dwt,
                        instance: 1 + i as u64,
                    },
                    Arc::clone(&store) as Arc<dyn StoreApi>,
                    pool.clone(),
                    Arc::clone(&registry),
                );
                let clock = Arc::clone(&clock);
                let shutdown = Arc::clone(&shutdown);
                let failure = Arc::clone(&failure);
                std::thread::spawn(move || {
                    while !shutdown.load(Ordering::Relaxed) {
                        match worker.run_once(clock.now()) {
                            Ok(WorkerStep::Executed(_)) => {}
                            Ok(WorkerStep::Idle) => {
                                std::thread::sleep(std::time::Duration::from_millis(1))
                            }
                            Err(e) => {
                                let mut slot = failure.lock().unwrap();
                                if slot.is_none() {
                                    *slot = Some(e);
                                }
                                drop(slot);
                                std::thread::sleep(std::time::Duration::from_millis(1));
                            }
                        }
                    }
                })
            })
            .collect();
        Ok(Self { store, ts, dgt, clock, shutdown, failure, threads })
    }

    fn run(&self, spec: &JobSpec) -> Result<JobReport, RuntimeError> {
        let ctx = RunContext {
            dgt: &self.dgt,
            store: self.store.as_ref(),
            clock: self.clock.as_ref(),
            timeout: DEFAULT_JOB_TIMEOUT,
        };
        run_job(spec, &self.ts, &ctx, || {
            if let Some(e) = self.failure.lock().unwrap().take() {
                return Err(e);
            }
            std::thread::sleep(std::time::Duration::from_millis(1));
            Ok(())
        })
    }
}

impl Drop for Live {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn base_spec(settings: &Settings, mode: JobMode, inputs: Vec<JobInput>) -> JobSpec {
    let mut preprocessor_params = eductive::demand::Params::new();
    // The filters need cutoffs; the other preprocessors ignore these.
    if matches!(
        settings.preproc.as_str(),
        "low_pass" | "high_pass" | "hf_boost" | "band_pass" | "band_stop"
    ) {
        preprocessor_params.insert(
            "low_hz".into(),
            eductive::demand::ParamValue::Float(settings.low_hz),
        );
        preprocessor_params.insert(
            "high_hz".into(),
            eductive::demand::ParamValue::Float(settings.high_hz),
        );
    }
    JobSpec {
        mode,
        loader: settings.loader.clone(),
        preprocessor: settings.preproc.clone(),
        preprocessor_params,
        extractor: settings.fe.clone(),
        extractor_params: Default::default(),
        metric: settings.metric.clone(),
        inputs,
    }
}

fn write_report(settings: &Settings, reports: &[JobReport]) -> Result<(), String> {
    let path = settings.store_dir.join(REPORT_FILE);
    let joined: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::from_str(&r.to_json()).expect("report serializes"))
        .collect();
    let text = serde_json::to_string_pretty(&joined).expect("report array serializes");
    std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_train(cli: &Cli, corpus: &Path) -> ExitCode {
    let settings = match load_settings(cli) {
        Ok(s) => s,
        Err(e) => return usage_error(e),
    };
    let mut subjects: Vec<(u32, Vec<PathBuf>)> = Vec::new();
    let entries = match std::fs::read_dir(corpus) {
        Ok(e) => e,
        Err(e) => return usage_error(format!("corpus {}: {e}", corpus.display())),
    };
    for entry in entries {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => return usage_error(format!("corpus {}: {e}", corpus.display())),
        };
        if !entry.path().is_dir() {
            return usage_error(format!(
                "corpus {}: stray file {:?}; expected <subject_id>/ directories",
                corpus.display(),
                entry.file_name()
            ));
        }
        let name = entry.file_name();
        let subject: u32 = match name.to_string_lossy().parse() {
            Ok(s) => s,
            Err(_) => {
                return usage_error(format!(
                    "corpus {}: directory {name:?} is not a numeric subject id",
                    corpus.display()
                ))
            }
        };
        let mut files: Vec<PathBuf> = match std::fs::read_dir(entry.path()) {
            Ok(d) => d.filter_map(|f| f.ok().map(|f| f.path())).collect(),
            Err(e) => return usage_error(format!("corpus subject {subject}: {e}")),
        };
        files.sort();
        if files.is_empty() {
            return usage_error(format!("corpus subject {subject} has no files"));
        }
        subjects.push((subject, files));
    }
    subjects.sort_by_key(|(s, _)| *s);
    if subjects.is_empty() {
        return usage_error(format!("corpus {} is empty", corpus.display()));
    }

    let live = match Live::start(&settings) {
        Ok(l) => l,
        Err(e) => return usage_error(e),
    };
    let mut reports = Vec::new();
    let mut failures = 0usize;
    for (subject, files) in &subjects {
        for file in files {
            let bytes = match std::fs::read(file) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    failures += 1;
                    continue;
                }
            };
            let input = JobInput { name: file.display().to_string(), bytes };
            let spec =
                base_spec(&settings, JobMode::Train { subject_id: *subject }, vec![input]);
            match live.run(&spec) {
                Ok(report) => reports.push(report),
                Err(RuntimeError::BadSpec(e)) => return usage_error(e),
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    failures += 1;
                }
            }
        }
    }

    let ts = live.ts.lock().unwrap();
    if let Err(e) = std::fs::create_dir_all(&settings.store_dir) {
        return usage_error(format!("{}: {e}", settings.store_dir.display()));
    }
    let ts_path = settings.store_dir.join(TRAINING_SET_FILE);
    if let Err(e) = std::fs::write(&ts_path, ts.encode()) {
        return usage_error(format!("{}: {e}", ts_path.display()));
    }
    if let Err(e) = write_report(&settings, &reports) {
        return usage_error(e);
    }
    println!(
        "trained {} subjects from {} files ({} failed); training set: {}",
        ts.entries.len(),
        reports.len() + failures,
        failures,
        ts_path.display()
    );
    if failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn parse_hex_sig(hex: &str) -> Option<DemandSignature> {
    if hex.len() != 64 {
        return None;
    }
    let mut sig = [0u8; 32];
    for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
        let s = std::str::from_utf8(chunk).ok()?;
        sig[i] = u8::from_str_radix(s, 16).ok()?;
    }
    Some(DemandSignature(sig))
}

fn cmd_recognize(cli: &Cli, input: &Path, trainingset: &Path) -> ExitCode {
    let mut settings = match load_settings(cli) {
        Ok(s) => s,
        Err(e) => return usage_error(e),
    };
    let ts_bytes = match std::fs::read(trainingset) {
        Ok(b) => b,
        Err(e) => return usage_error(format!("{}: {e}", trainingset.display())),
    };
    let ts = match TrainingSet::decode(&ts_bytes) {
        Ok(ts) => ts,
        Err(e) => return usage_error(format!("{}: {e}", trainingset.display())),
    };
    // The stored extractor tag wins over the configured one: features
    // must match the space the set was trained in.
    settings.fe = ts.extractor_tag.clone();
    let input_bytes = match std::fs::read(input) {
        Ok(b) => b,
        Err(e) => return usage_error(format!("{}: {e}", input.display())),
    };

    let live = match Live::start(&settings) {
        Ok(l) => l,
        Err(e) => return usage_error(e),
    };
    *live.ts.lock().unwrap() = ts;
    let spec = base_spec(
        &settings,
        JobMode::Recognize,
        vec![JobInput { name: input.display().to_string(), bytes: input_bytes }],
    );
    let report = match live.run(&spec) {
        Ok(r) => r,
        Err(RuntimeError::BadSpec(e)) => return usage_error(e),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let outcome = &report.outcomes[0];
    match (outcome.subject, outcome.distance) {
        (Some(subject), Some(d)) => {
            println!("{}: subject {subject} (distance {d:.6})", outcome.name)
        }
        _ => println!("{}: no classification", outcome.name),
    }
    if let Some(sig) = parse_hex_sig(&outcome.final_sig) {
        if let Ok(Some(bytes)) = live.store.lookup(sig) {
            if let Ok(rs) = ResultSet::decode(&bytes) {
                for (rank, r) in rs.results().iter().enumerate() {
                    println!("  {}. subject {} distance {:.6}", rank + 1, r.id, r.outcome);
                }
            }
        }
    }
    if let Err(e) = write_report(&settings, std::slice::from_ref(&report)) {
        return usage_error(e);
    }
    ExitCode::SUCCESS
}

fn cmd_simulate(cli: &Cli, path: &Path) -> ExitCode {
    let settings = match load_settings(cli) {
        Ok(s) => s,
        Err(e) => return usage_error(e),
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage_error(format!("{}: {e}", path.display())),
    };
    let (mut scenario, expect) = match parse_scenario(&text) {
        Ok(parsed) => parsed,
        Err(e) => return usage_error(format!("{}: {e}", path.display())),
    };
    if let Some(code) = settings.policy {
        match RecoveryPolicy::from_code(code as i64) {
            Some(p) => scenario.policy = p,
            None => return usage_error(format!("unknown policy code {code}")),
        }
    }
    if cli.seed.is_some() {
        scenario.seed = settings.seed;
    }

    let report = match simulate(&scenario) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match &report.outcome {
        SimOutcome::Completed(job) => {
            println!("outcome: completed in {} ticks", report.ticks);
            for o in &job.outcomes {
                match (o.subject, o.distance) {
                    (Some(s), Some(d)) => {
                        println!("  {}: subject {s} (distance {d:.6})", o.name)
                    }
                    _ => println!("  {}: no classification", o.name),
                }
            }
        }
        SimOutcome::Stalled { input, stage } => {
            println!(
                "outcome: stalled on input {input:?} in stage {stage} after {} ticks",
                report.ticks
            );
        }
    }
    println!("warehouse digest: {}", report.warehouse_digest);
    for (stage, n) in &report.exec_ledger.executed_by_stage {
        println!("  executed[{stage}] = {n}");
    }
    for (tier, n) in &report.exec_ledger.executed_by_tier {
        println!("  executed[{tier}] = {n}");
    }
    println!("ledger digest: {}", report.ledger_digest());

    if let Err(e) = report.matches(&expect) {
        eprintln!("expectation failed: {e}");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}

fn cmd_store_inspect(path: &Path) -> ExitCode {
    if !path.exists() && !path.with_extension("ckp").exists() {
        return usage_error(format!("{}: no such log or checkpoint", path.display()));
    }
    let (warehouse, records) = match Wal::recover(path) {
        Ok(r) => r,
        Err(e) => return usage_error(format!("{}: {e}", path.display())),
    };
    println!("{}: {} live records, {} warehouse entries", path.display(), records.len(), warehouse.len());
    for r in &records {
        println!(
            "  seq {:>6}  sig {}  {} bytes{}",
            r.seq,
            r.signature.to_hex(),
            r.after.len(),
            if r.before.is_some() { "  (overwrite)" } else { "" }
        );
    }
    for (sig, bytes) in &warehouse {
        println!("  warehouse {}  {} bytes", sig.to_hex(), bytes.len());
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = check_mode(&cli) {
        return usage_error(e);
    }
    match &cli.command {
        Command::Train { corpus } => cmd_train(&cli, corpus),
        Command::Recognize { input, trainingset } => cmd_recognize(&cli, input, trainingset),
        Command::Simulate { scenario } => cmd_simulate(&cli, scenario),
        Command::StoreInspect { path } => cmd_store_inspect(path),
    }
}
