//! Job planning and the demand-driven pipeline driver. A job turns
//! each input into a chain of four demands (load, preprocess, extract,
//! train-or-classify); the driver issues them, chains results by
//! prefixing the upstream signature, and assembles a report.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::clock::Clock;
use crate::demand::{DemandSignature, ParamValue, Params};
use crate::pipeline::classify::TrainingSet;
use crate::pipeline::distance::Metric;
use crate::pipeline::dsp::{fft_filter, FilterKind, FilterSpec, DEFAULT_BOOST_GAIN};
use crate::pipeline::features::{
    extract_fft_features, extract_lpc_features, extract_minmax_features, FeatureVector,
    DEFAULT_FFT_FEATURES, DEFAULT_LPC_ORDER,
};
use crate::pipeline::sample::{
    load_sample, normalize, remove_silence, endpoint, Sample, SampleSource,
    DEFAULT_SILENCE_THRESHOLD,
};
use crate::store::{PutOutcome, SigLocation, StoreApi};
use crate::tiers::{DemandGenerator, ExecutorRegistry, Stage, StagePlan, TierError};
use crate::util::{sha256, to_hex};

/// Stage results travel prefixed by the 32-byte signature of the
/// demand that produced them, so downstream demand signatures encode
/// their full upstream lineage.
pub const STAGE_HEADER_LEN: usize = 32;

pub const DEFAULT_JOB_TIMEOUT: u64 = 60_000;

pub const PREPROCESSORS: &[&str] = &[
    "normalize",
    "remove_silence",
    "endpoint",
    "raw",
    "low_pass",
    "high_pass",
    "band_pass",
    "band_stop",
    "hf_boost",
    "remove_noise",
];

pub const EXTRACTORS: &[&str] = &["fft_features", "lpc_features", "minmax_features"];

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("bad job spec: {0}")]
    BadSpec(String),
    #[error("tier failure: {0}")]
    Tier(#[from] TierError),
    #[error("store failure: {0}")]
    Store(#[from] crate::store::StoreError),
    #[error("pipeline failure: {0}")]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error("input {input:?} timed out in stage {stage}")]
    Timeout { input: String, stage: Stage },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobMode {
    Train { subject_id: u32 },
    Recognize,
}

#[derive(Debug, Clone)]
pub struct JobInput {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct JobSpec {
    pub mode: JobMode,
    pub loader: String,
    pub preprocessor: String,
    pub preprocessor_params: Params,
    pub extractor: String,
    pub extractor_params: Params,
    pub metric: String,
    pub inputs: Vec<JobInput>,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        SampleSource::from_name(&self.loader)
            .map_err(|e| RuntimeError::BadSpec(e.to_string()))?;
        if !PREPROCESSORS.contains(&self.preprocessor.as_str()) {
            return Err(RuntimeError::BadSpec(format!(
                "unknown preprocessor {:?}",
                self.preprocessor
            )));
        }
        if !EXTRACTORS.contains(&self.extractor.as_str()) {
            return Err(RuntimeError::BadSpec(format!(
                "unknown extractor {:?}",
                self.extractor
            )));
        }
        Metric::from_name(&self.metric).map_err(|e| RuntimeError::BadSpec(e.to_string()))?;
        if self.inputs.is_empty() {
            return Err(RuntimeError::BadSpec("no inputs".into()));
        }
        Ok(())
    }
}

/// Expands a job spec into its four stage plans. `ts_hash` is the
/// current training set content hash; folding it into classification
/// demands keeps stale cached results from surviving retraining.
pub fn plan_job(spec: &JobSpec, ts_hash: &str) -> Result<Vec<StagePlan>, RuntimeError> {
    spec.validate()?;
    let mut sl_params = Params::new();
    sl_params.insert("loader".into(), ParamValue::Str(spec.loader.clone()));
    let tc = match &spec.mode {
        JobMode::Train { subject_id } => {
            let mut p = Params::new();
            p.insert("subject".into(), ParamValue::Int(*subject_id as i64));
            StagePlan::new(Stage::TrainingClassification, "train", p)
        }
        JobMode::Recognize => {
            let mut p = Params::new();
            p.insert("metric".into(), ParamValue::Str(spec.metric.clone()));
            p.insert("ts".into(), ParamValue::Str(ts_hash.to_string()));
            StagePlan::new(Stage::TrainingClassification, "classify", p)
        }
    };
    Ok(vec![
        StagePlan::new(Stage::SampleLoading, "load", sl_params),
        StagePlan::new(
            Stage::Preprocessing,
            &spec.preprocessor,
            spec.preprocessor_params.clone(),
        ),
        StagePlan::new(Stage::FeatureExtraction, &spec.extractor, spec.extractor_params.clone()),
        tc,
    ])
}

fn body(payload: &[u8]) -> Result<&[u8], String> {
    if payload.len() < STAGE_HEADER_LEN {
        return Err("payload missing stage header".into());
    }
    Ok(&payload[STAGE_HEADER_LEN..])
}

fn upstream_sig(payload: &[u8]) -> Result<DemandSignature, String> {
    if payload.len() < STAGE_HEADER_LEN {
        return Err("payload missing stage header".into());
    }
    let mut b = [0u8; 32];
    b.copy_from_slice(&payload[..STAGE_HEADER_LEN]);
    Ok(DemandSignature(b))
}

fn param_f64(params: &Params, key: &str, default: f64) -> f64 {
    match params.get(key) {
        Some(ParamValue::Float(v)) => *v,
        Some(ParamValue::Int(v)) => *v as f64,
        _ => default,
    }
}

fn param_usize(params: &Params, key: &str, default: usize) -> usize {
    match params.get(key) {
        Some(ParamValue::Int(v)) if *v > 0 => *v as usize,
        _ => default,
    }
}

fn param_str<'a>(params: &'a Params, key: &str) -> Result<&'a str, String> {
    match params.get(key) {
        Some(ParamValue::Str(s)) => Ok(s),
        _ => Err(format!("missing parameter {key:?}")),
    }
}

fn filter_executor(kind: FilterKind) -> impl Fn(&Params, &[u8]) -> Result<Vec<u8>, String> {
    move |params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        let mut spec = FilterSpec::new(
            kind,
            param_f64(params, "low_hz", 0.0),
            param_f64(params, "high_hz", 0.0),
        );
        spec.boost_gain = param_f64(params, "boost_gain", DEFAULT_BOOST_GAIN);
        let data = fft_filter(&s.data, s.rate_hz, &spec).map_err(|e| e.to_string())?;
        Ok(Sample { rate_hz: s.rate_hz, data, source: s.source }.encode())
    }
}

/// Builds the full executor registry for the audio pipeline. The
/// training set is shared: train executors fold into it, classify
/// executors read it.
pub fn build_registry(ts: Arc<Mutex<TrainingSet>>) -> ExecutorRegistry {
    let mut reg = ExecutorRegistry::new();

    reg.register("load", |params, payload| {
        let source = SampleSource::from_name(param_str(params, "loader")?)
            .map_err(|e| e.to_string())?;
        let s = load_sample(source, payload).map_err(|e| e.to_string())?;
        Ok(s.encode())
    });

    reg.register("normalize", |_params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        Ok(normalize(&s).map_err(|e| e.to_string())?.encode())
    });
    reg.register("remove_silence", |params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        let t = param_f64(params, "threshold", DEFAULT_SILENCE_THRESHOLD);
        Ok(remove_silence(&s, t).map_err(|e| e.to_string())?.encode())
    });
    reg.register("endpoint", |params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        let t = param_f64(params, "threshold", DEFAULT_SILENCE_THRESHOLD);
        Ok(endpoint(&s, t).map_err(|e| e.to_string())?.encode())
    });
    reg.register("raw", |_params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        Ok(s.encode())
    });
    reg.register("low_pass", filter_executor(FilterKind::LowPass));
    reg.register("high_pass", filter_executor(FilterKind::HighPass));
    reg.register("band_pass", filter_executor(FilterKind::BandPass));
    reg.register("band_stop", filter_executor(FilterKind::BandStop));
    reg.register("hf_boost", filter_executor(FilterKind::HighFrequencyBoost));
    reg.register("remove_noise", |_params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        let spec = FilterSpec::new(FilterKind::LowPass, s.rate_hz as f64 / 4.0, 0.0);
        let data = fft_filter(&s.data, s.rate_hz, &spec).map_err(|e| e.to_string())?;
        Ok(Sample { rate_hz: s.rate_hz, data, source: s.source }.encode())
    });

    reg.register("fft_features", |params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        let len = param_usize(params, "len", DEFAULT_FFT_FEATURES);
        Ok(extract_fft_features(&s, len).map_err(|e| e.to_string())?.encode())
    });
    reg.register("lpc_features", |params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        let order = param_usize(params, "order", DEFAULT_LPC_ORDER);
        Ok(extract_lpc_features(&s, order).map_err(|e| e.to_string())?.encode())
    });
    reg.register("minmax_features", |params, payload| {
        let s = Sample::decode(body(payload)?).map_err(|e| e.to_string())?;
        let len = param_usize(params, "len", DEFAULT_FFT_FEATURES);
        Ok(extract_minmax_features(&s, len).map_err(|e| e.to_string())?.encode())
    });

    let train_ts = Arc::clone(&ts);
    reg.register("train", move |params, payload| {
        let fv_sig = upstream_sig(payload)?;
        let fv = FeatureVector::decode(body(payload)?).map_err(|e| e.to_string())?;
        let subject = match params.get("subject") {
            Some(ParamValue::Int(v)) if *v >= 0 => *v as u32,
            _ => return Err("missing subject".into()),
        };
        train_ts
            .lock()
            .unwrap()
            .train_once(fv_sig, subject, &fv)
            .map_err(|e| e.to_string())?;
        // Result bytes depend only on the demand, not on training
        // order, so re-executions stay byte-identical.
        let mut out = subject.to_be_bytes().to_vec();
        out.extend_from_slice(&fv_sig.0);
        Ok(out)
    });

    let classify_ts = ts;
    reg.register("classify", move |params, payload| {
        let fv = FeatureVector::decode(body(payload)?).map_err(|e| e.to_string())?;
        let metric = Metric::from_name(param_str(params, "metric")?).map_err(|e| e.to_string())?;
        let mut rs = classify_ts
            .lock()
            .unwrap()
            .classify(&fv, &metric)
            .map_err(|e| e.to_string())?;
        rs.sort();
        Ok(rs.encode())
    });

    reg
}

#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct StageLedger {
    /// Demands issued, counting re-issues after a store loss.
    pub generated: u64,
    /// Served from the warehouse or already in flight.
    pub cache_hit: u64,
    /// Freshly enqueued for execution.
    pub executed: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct InputOutcome {
    pub name: String,
    pub final_sig: String,
    pub subject: Option<u32>,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct JobReport {
    pub mode: String,
    pub outcomes: Vec<InputOutcome>,
    pub ledger: BTreeMap<String, StageLedger>,
    pub training_set_hash: Option<String>,
}

impl JobReport {
    /// Digest over the semantic outcome only. Ledger counters can
    /// legitimately differ between runs that recover from faults;
    /// outcomes and the trained state must not.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        buf.extend_from_slice(self.mode.as_bytes());
        for o in &self.outcomes {
            buf.push(0);
            buf.extend_from_slice(o.name.as_bytes());
            buf.push(0);
            buf.extend_from_slice(o.final_sig.as_bytes());
            if let Some(s) = o.subject {
                buf.extend_from_slice(&s.to_be_bytes());
            }
            if let Some(d) = o.distance {
                buf.extend_from_slice(&d.to_bits().to_be_bytes());
            }
        }
        if let Some(h) = &self.training_set_hash {
            buf.push(0);
            buf.extend_from_slice(h.as_bytes());
        }
        to_hex(&sha256(&buf))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct InputState {
    stage: usize,
    sig: Option<DemandSignature>,
    last_sig: Option<DemandSignature>,
    carry: Vec<u8>,
    result: Option<Vec<u8>>,
}

/// Everything the driver needs besides the job itself.
pub struct RunContext<'a> {
    pub dgt: &'a DemandGenerator,
    pub store: &'a dyn StoreApi,
    pub clock: &'a dyn Clock,
    pub timeout: u64,
}

/// Drives a job to completion. `pump` runs once per polling round and
/// is where workers make progress (a scheduler tick in simulation, a
/// short sleep in live mode).
pub fn run_job(
    spec: &JobSpec,
    ts: &Arc<Mutex<TrainingSet>>,
    ctx: &RunContext,
    mut pump: impl FnMut() -> Result<(), TierError>,
) -> Result<JobReport, RuntimeError> {
    let ts_hash = ts.lock().unwrap().content_hash();
    let plans = plan_job(spec, &ts_hash)?;
    let is_train = matches!(spec.mode, JobMode::Train { .. });
    let mut ledger: BTreeMap<String, StageLedger> = Stage::ALL
        .iter()
        .map(|s| (s.as_str().to_string(), StageLedger::default()))
        .collect();
    let mut states: Vec<InputState> = spec
        .inputs
        .iter()
        .map(|i| InputState {
            stage: 0,
            sig: None,
            last_sig: None,
            carry: i.bytes.clone(),
            result: None,
        })
        .collect();
    let deadline = ctx.clock.now().saturating_add(ctx.timeout);

    loop {
        let mut all_done = true;
        for idx in 0..states.len() {
            if states[idx].stage >= plans.len() {
                continue;
            }
            all_done = false;
            // Training mutates shared state; apply inputs strictly in
            // order so the trained set is independent of worker timing.
            let gate = is_train
                && states[idx].stage == plans.len() - 1
                && states[..idx].iter().any(|s| s.stage < plans.len());
            if gate {
                continue;
            }
            if states[idx].sig.is_none() {
                let plan = &plans[states[idx].stage];
                let (sig, outcome) = ctx.dgt.generate(plan, states[idx].carry.clone())?;
                let entry = ledger.get_mut(plan.stage.as_str()).unwrap();
                entry.generated += 1;
                match outcome {
                    PutOutcome::Enqueued => {
                        entry.executed += 1;
                        states[idx].sig = Some(sig);
                    }
                    PutOutcome::AlreadyInFlight => {
                        entry.cache_hit += 1;
                        states[idx].sig = Some(sig);
                    }
                    PutOutcome::AlreadyComputed(bytes) => {
                        entry.cache_hit += 1;
                        advance(&mut states[idx], sig, bytes);
                        continue;
                    }
                }
            }
            let sig = states[idx].sig.unwrap();
            match ctx.store.lookup(sig)? {
                Some(bytes) => advance(&mut states[idx], sig, bytes),
                None => {
                    // A store that crashed and recovered may have lost
                    // the pending record entirely; reissue.
                    if ctx.store.locate(sig)? == SigLocation::Absent {
                        states[idx].sig = None;
                    }
                }
            }
        }
        if all_done {
            break;
        }
        if ctx.clock.now() >= deadline {
            let stuck = states.iter().position(|s| s.stage < plans.len()).unwrap();
            return Err(RuntimeError::Timeout {
                input: spec.inputs[stuck].name.clone(),
                stage: plans[states[stuck].stage].stage,
            });
        }
        pump()?;
    }

    let mut outcomes = Vec::with_capacity(states.len());
    for (input, st) in spec.inputs.iter().zip(&states) {
        let bytes = st.result.as_ref().expect("completed input has a result");
        let final_sig = st.last_sig.expect("completed input has a signature");
        let (subject, distance) = match spec.mode {
            JobMode::Train { subject_id } => (Some(subject_id), None),
            JobMode::Recognize => {
                let rs = crate::pipeline::classify::ResultSet::decode(bytes)?;
                let winner = rs.minimum_id()?;
                let best = rs
                    .results()
                    .iter()
                    .find(|r| r.id == winner)
                    .map(|r| r.outcome);
                (Some(winner), best)
            }
        };
        outcomes.push(InputOutcome {
            name: input.name.clone(),
            final_sig: final_sig.to_hex(),
            subject,
            distance,
        });
    }
    let training_set_hash = if is_train {
        Some(ts.lock().unwrap().content_hash())
    } else {
        Some(ts_hash)
    };
    Ok(JobReport {
        mode: match spec.mode {
            JobMode::Train { .. } => "train".into(),
            JobMode::Recognize => "recognize".into(),
        },
        outcomes,
        ledger,
        training_set_hash,
    })
}

fn advance(st: &mut InputState, sig: DemandSignature, bytes: Vec<u8>) {
    st.stage += 1;
    st.sig = None;
    st.last_sig = Some(sig);
    let mut carry = sig.0.to_vec();
    carry.extend_from_slice(&bytes);
    st.carry = carry;
    if st.stage == 4 {
        st.result = Some(bytes);
    }
}
