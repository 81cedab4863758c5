//! Acceptance gate: ten end-to-end properties, one pass/fail line
//! each. Run with `cargo test --test acceptance -- --nocapture` to see
//! the lines as they complete.

use std::collections::BTreeSet;
use std::panic::AssertUnwindSafe;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eductive::clock::{Clock, VirtualClock};
use eductive::demand::{Demand, DemandId, DemandType, ParamValue, Params};
use eductive::manager::RecoveryPolicy;
use eductive::pipeline::classify::TrainingSet;
use eductive::pipeline::distance::{distance, Metric, DEFAULT_MINKOWSKI_P};
use eductive::pipeline::dsp::{fft, ifft};
use eductive::pipeline::features::{autocorrelation, levinson_durbin, FeatureVector};
use eductive::pipeline::nnet::{encode_id, interpret_as_binary, NeuralNetwork};
use eductive::runtime::{
    build_registry, run_job, JobInput, JobMode, JobReport, JobSpec, RunContext,
};
use eductive::sim::{
    crash_point_sweep, simulate, PipelineChoice, Scenario, SimEvent, SimEventKind, SimOutcome,
    Simulation, TrainPhase,
};
use eductive::store::{DemandStore, StoreApi};
use eductive::tiers::{DemandGenerator, DemandWorker, SharedLedger, TierId, TierKind};
use eductive::wal::{ship_wal, Wal, Warehouse};

fn criterion(n: u32, name: &str, f: impl FnOnce()) {
    let result = std::panic::catch_unwind(AssertUnwindSafe(f));
    let status = if result.is_ok() { "pass" } else { "FAIL" };
    println!("acceptance {n:02} {name}: {status}");
    if let Err(panic) = result {
        std::panic::resume_unwind(panic);
    }
}

#[test]
fn acceptance_01_claim_once() {
    criterion(1, "demand-store claim-once under contention", || {
        const PRODUCERS: usize = 8;
        const WORKERS: usize = 8;
        const DEMANDS: usize = 10_000;
        let start = Instant::now();
        let store = Arc::new(DemandStore::new());
        let ledger: SharedLedger = Arc::default();
        let registry = {
            let mut r = eductive::tiers::ExecutorRegistry::new();
            r.register("echo", |_p, payload| Ok(payload.to_vec()));
            Arc::new(r)
        };

        let mut handles = Vec::new();
        for p in 0..PRODUCERS {
            let store = Arc::clone(&store);
            handles.push(std::thread::spawn(move || {
                let per = DEMANDS / PRODUCERS;
                for k in 0..per {
                    let n = p * per + k;
                    let mut params = Params::new();
                    params.insert("n".into(), ParamValue::Int(n as i64));
                    let d = Demand::new(
                        DemandId([(n % 251) as u8; 16]),
                        DemandType::Procedural,
                        "A",
                        "echo",
                        params,
                        n.to_be_bytes().to_vec(),
                    );
                    store.put_demand(d).unwrap();
                }
            }));
        }
        for w in 0..WORKERS {
            let store = Arc::clone(&store);
            let registry = Arc::clone(&registry);
            let ledger = Arc::clone(&ledger);
            handles.push(std::thread::spawn(move || {
                let worker = DemandWorker::new(
                    TierId {
                        node_id: "node-0".into(),
                        kind: TierKind::Dwt,
                        instance: w as u64,
                    },
                    store.clone() as Arc<dyn StoreApi>,
                    ["echo".to_string()].into(),
                    registry,
                )
                .with_ledger(ledger);
                while store.warehouse_len() < DEMANDS {
                    worker.run_once(0).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }

        assert_eq!(store.warehouse_len(), DEMANDS);
        store.audit().unwrap();
        let ledger = ledger.lock().unwrap();
        assert_eq!(ledger.claims.len(), DEMANDS);
        for (sig, claimers) in &ledger.claims {
            assert_eq!(claimers.len(), 1, "{sig} claimed more than once");
        }
        assert_eq!(ledger.total_executed(), DEMANDS as u64);
        let stats = store.stats().unwrap();
        assert_eq!(stats.claims, DEMANDS as u64);
        assert_eq!(stats.stores, DEMANDS as u64);
        assert!(start.elapsed() < Duration::from_secs(30), "{:?}", start.elapsed());
    });
}

struct Rig {
    store: Arc<DemandStore>,
    dgt: DemandGenerator,
    workers: Vec<DemandWorker>,
    ts: Arc<Mutex<TrainingSet>>,
    clock: VirtualClock,
}

fn rig(n_workers: usize) -> Rig {
    let store = Arc::new(DemandStore::new());
    let ts = Arc::new(Mutex::new(TrainingSet::new("fft_features")));
    let registry = Arc::new(build_registry(Arc::clone(&ts)));
    let pool: BTreeSet<String> = registry.operations().map(String::from).collect();
    let dgt = DemandGenerator::new(
        TierId { node_id: "node-0".into(), kind: TierKind::Dgt, instance: 0 },
        Arc::clone(&store) as Arc<dyn StoreApi>,
        1,
    );
    let workers = (0..n_workers)
        .map(|i| {
            DemandWorker::new(
                TierId {
                    node_id: "node-0".into(),
                    kind: TierKind::Dwt,
                    instance: 1 + i as u64,
                },
                Arc::clone(&store) as Arc<dyn StoreApi>,
                pool.clone(),
                Arc::clone(&registry),
            )
        })
        .collect();
    Rig { store, dgt, workers, ts, clock: VirtualClock::new() }
}

fn drive(r: &Rig, spec: &JobSpec) -> JobReport {
    let ctx = RunContext {
        dgt: &r.dgt,
        store: r.store.as_ref(),
        clock: &r.clock,
        timeout: 10_000,
    };
    let clock = r.clock.clone();
    let workers = &r.workers;
    run_job(spec, &r.ts, &ctx, move || {
        for w in workers {
            let _ = w.run_once(clock.now());
        }
        clock.advance(1);
        Ok(())
    })
    .unwrap()
}

#[test]
fn acceptance_02_memoization() {
    criterion(2, "warm-store rerun is fully memoized", || {
        let r = rig(2);
        r.ts
            .lock()
            .unwrap()
            .train(5, &FeatureVector::new(vec![0.4; 128]))
            .unwrap();
        let job = JobSpec {
            mode: JobMode::Recognize,
            loader: "sine".into(),
            preprocessor: "normalize".into(),
            preprocessor_params: Params::new(),
            extractor: "fft_features".into(),
            extractor_params: Params::new(),
            metric: "euclidean".into(),
            inputs: vec![
                JobInput { name: "a".into(), bytes: b"rate=8000;dur=1;tones=500".to_vec() },
                JobInput { name: "b".into(), bytes: b"rate=8000;dur=1;tones=900".to_vec() },
            ],
        };
        let cold = drive(&r, &job);
        let warm = drive(&r, &job);
        for stage in ["SL", "P", "FE", "TC"] {
            let l = &warm.ledger[stage];
            assert_eq!(l.executed, 0, "{stage} executed on warm store");
            assert_eq!(l.cache_hit, l.generated, "{stage} cache hits != generated");
            assert!(l.generated > 0, "{stage} generated nothing");
        }
        assert_eq!(cold.digest(), warm.digest());
    });
}

fn healing_scenario(policy: RecoveryPolicy, events: Vec<SimEvent>) -> Scenario {
    Scenario {
        seed: 11,
        workers_per_node: vec![1, 0],
        policy,
        events,
        pipeline: PipelineChoice::default(),
        train: vec![
            TrainPhase {
                subject: 1,
                inputs: vec![JobInput {
                    name: "t1".into(),
                    bytes: b"rate=8000;dur=0.25;tones=440".to_vec(),
                }],
            },
            TrainPhase {
                subject: 2,
                inputs: vec![JobInput {
                    name: "t2".into(),
                    bytes: b"rate=8000;dur=0.25;tones=1400".to_vec(),
                }],
            },
        ],
        recognize: vec![
            JobInput { name: "r0".into(), bytes: b"rate=8000;dur=0.25;tones=445".to_vec() },
            JobInput { name: "r1".into(), bytes: b"rate=8000;dur=0.25;tones=1390".to_vec() },
        ],
        ..Scenario::default()
    }
}

#[test]
fn acceptance_03_self_healing_equivalence() {
    criterion(3, "recovery policies preserve the fault-free report", || {
        let start = Instant::now();
        let clean = simulate(&healing_scenario(RecoveryPolicy::TryNextUntilTheEnd, vec![]))
            .unwrap();
        let clean_report = clean.completed().expect("fault-free run completes").clone();

        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE55);
        for policy in [
            RecoveryPolicy::TryNextUntilTheEnd,
            RecoveryPolicy::TryNextAndWrapAround,
            RecoveryPolicy::IfCrashThenTryNextUntilTheEnd,
            RecoveryPolicy::IfCrashThenRestart,
        ] {
            for round in 0..20 {
                let at = rng.gen_range(1..=25);
                let events =
                    vec![SimEvent { at, kind: SimEventKind::KillWorker { index: 0 } }];
                let report = simulate(&healing_scenario(policy, events)).unwrap();
                let report = report
                    .completed()
                    .unwrap_or_else(|| panic!("{policy:?} round {round} (kill at {at}) stalled"));
                assert_eq!(report.outcomes, clean_report.outcomes, "{policy:?} at {at}");
                assert_eq!(report.digest(), clean_report.digest(), "{policy:?} at {at}");
            }
        }

        // Negative control: the only worker dies and nobody heals.
        let mut stall = healing_scenario(
            RecoveryPolicy::LetItBe,
            vec![SimEvent { at: 1, kind: SimEventKind::KillWorker { index: 0 } }],
        );
        stall.timeout = 80;
        let stalled = simulate(&stall).unwrap();
        assert!(matches!(stalled.outcome, SimOutcome::Stalled { .. }));
        assert!(start.elapsed() < Duration::from_secs(60), "{:?}", start.elapsed());
    });
}

#[test]
fn acceptance_04_durability_sweep() {
    criterion(4, "crash-point sweep over fifty logged results", || {
        let swept = crash_point_sweep(50, true).unwrap();
        assert_eq!(swept.acknowledged, 50);
        assert!(swept.crash_points > 50);
        assert_eq!(swept.lost, 0, "acknowledged results lost with a WAL");

        let control = crash_point_sweep(50, false).unwrap();
        assert_eq!(control.lost, 50, "negative control: no WAL, everything lost");
    });
}

#[test]
fn acceptance_05_replication_and_broadcast() {
    criterion(5, "log shipping and broadcast-before-compute", || {
        let dir = tempfile::tempdir().unwrap();
        let mut src = Wal::create(dir.path().join("src.wal")).unwrap();
        for i in 0..20u8 {
            let sig = eductive::demand::compute_signature(
                "R",
                "rep",
                &Params::new(),
                &[i],
            );
            src.append(sig, None, vec![i; 4]).unwrap();
        }
        let mut dst = Wal::create(dir.path().join("dst.wal")).unwrap();
        assert_eq!(ship_wal(&src, &mut dst).unwrap(), 20);
        assert_eq!(ship_wal(&src, &mut dst).unwrap(), 0, "ship is idempotent");
        drop((src, dst));
        let mut primary = Warehouse::new();
        let mut replica = Warehouse::new();
        Wal::replay_into(dir.path().join("src.wal"), &mut primary).unwrap();
        Wal::replay_into(dir.path().join("dst.wal"), &mut replica).unwrap();
        assert_eq!(primary, replica);
        assert_eq!(primary.len(), 20);

        let scenario = healing_scenario(RecoveryPolicy::LetItBe, vec![]);
        let train_all = |sim: &Simulation, s: &Scenario| {
            for phase in &s.train {
                let spec = s
                    .pipeline
                    .to_spec(JobMode::Train { subject_id: phase.subject }, phase.inputs.clone());
                sim.run_phase(&spec, false).unwrap();
            }
        };
        let recognize = |sim: &Simulation, s: &Scenario| -> JobReport {
            let spec = s.pipeline.to_spec(JobMode::Recognize, s.recognize.clone());
            sim.run_phase(&spec, false).unwrap()
        };

        let mut off = scenario.clone();
        off.workers_per_node = vec![2];
        let sim_off = Simulation::new(&off).unwrap();
        train_all(&sim_off, &off);
        recognize(&sim_off, &off);
        let exec_off = sim_off.exec_ledger().total_executed();

        let mut on = off.clone();
        on.broadcast = true;
        let sim_on = Simulation::new(&on).unwrap();
        train_all(&sim_on, &on);
        // The standby holds every result of the first run before the
        // recognize phase starts; workers should adopt, not recompute.
        for (sig, bytes) in sim_off.store().warehouse_snapshot() {
            sim_on.standby().install_recovered(sig, bytes);
        }
        recognize(&sim_on, &on);
        let ledger_on = sim_on.exec_ledger();
        assert!(ledger_on.adopted > 0, "no results adopted from the standby");
        assert!(
            ledger_on.total_executed() <= exec_off,
            "broadcast increased executions: {} > {exec_off}",
            ledger_on.total_executed()
        );
        assert_eq!(
            sim_on.store().warehouse_digest(),
            sim_off.store().warehouse_digest(),
            "warehouses diverge with broadcast on"
        );
    });
}

#[test]
fn acceptance_06_dsp_oracles() {
    criterion(6, "FFT and Levinson-Durbin against direct solvers", || {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        // FFT vs naive DFT.
        for _ in 0..20 {
            let n = 1usize << rng.gen_range(1..7);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = fft(&x);
            for k in 0..n {
                let mut re = 0.0;
                let mut im = 0.0;
                for (t, &v) in x.iter().enumerate() {
                    let angle = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += v * angle.cos();
                    im += v * angle.sin();
                }
                assert!((fast[k].re - re).abs() < 1e-9);
                assert!((fast[k].im - im).abs() < 1e-9);
            }
            // Parseval.
            let time_energy: f64 = x.iter().map(|v| v * v).sum();
            let freq_energy: f64 =
                fast.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            assert!((time_energy - freq_energy).abs() / time_energy.max(1e-12) < 1e-9);
            // Round trip.
            let back = ifft(&fast);
            for (orig, got) in x.iter().zip(&back) {
                assert!((orig - got.re).abs() < 1e-9);
            }
        }

        // Levinson-Durbin vs Gaussian elimination on the Toeplitz
        // normal equations.
        let mut x = vec![0.0f64; 4096];
        for t in 2..x.len() {
            x[t] = 0.6 * x[t - 1] - 0.2 * x[t - 2] + rng.gen_range(-0.5..0.5);
        }
        for order in 1..=8 {
            let r = autocorrelation(&x, order);
            let fast = levinson_durbin(&r).unwrap();
            let direct = toeplitz_solve(&r, order);
            for (a, b) in fast.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-8, "order {order}: {a} vs {b}");
            }
        }

        // AR(1) recovery.
        let mut y = vec![0.0f64; 10_000];
        for t in 1..y.len() {
            y[t] = 0.9 * y[t - 1] + rng.gen_range(-0.5..0.5);
        }
        let r = autocorrelation(&y, 1);
        let a = levinson_durbin(&r).unwrap();
        assert!((a[0] - 0.9).abs() < 0.05, "AR(1) estimate {}", a[0]);
    });
}

fn toeplitz_solve(r: &[f64], order: usize) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..order)
        .map(|i| {
            let mut row: Vec<f64> =
                (0..order).map(|j| r[(i as isize - j as isize).unsigned_abs()]).collect();
            row.push(r[i + 1]);
            row
        })
        .collect();
    for col in 0..order {
        let pivot = (col..order)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for row in col + 1..order {
            let factor = m[row][col] / p;
            for k in col..=order {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut a = vec![0.0f64; order];
    for row in (0..order).rev() {
        let mut acc = m[row][order];
        for k in row + 1..order {
            acc -= m[row][k] * a[k];
        }
        a[row] = acc / m[row][row];
    }
    a
}

#[test]
fn acceptance_07_metric_oracles() {
    criterion(7, "seven distance metrics against direct formulas", || {
        let d = distance(
            &Metric::Euclidean,
            &FeatureVector::new(vec![0.0, 0.0]),
            &FeatureVector::new(vec![3.0, 4.0]),
        )
        .unwrap();
        assert_eq!(d, 25.0, "squared-sum convention");

        let metrics = [
            Metric::Euclidean,
            Metric::Chebyshev,
            Metric::Minkowski { p: DEFAULT_MINKOWSKI_P },
            Metric::Mahalanobis { covariance: None },
            Metric::Hamming { tolerance: 0.0 },
            Metric::Diff { tolerance: 0.0 },
            Metric::Cosine,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let n = rng.gen_range(1..16);
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            for metric in &metrics {
                let got = distance(
                    metric,
                    &FeatureVector::new(u.clone()),
                    &FeatureVector::new(v.clone()),
                )
                .unwrap();
                let want = metric_oracle(metric, &u, &v);
                assert!((got - want).abs() < 1e-12, "{}: {got} vs {want}", metric.name());
            }
        }
    });
}

fn metric_oracle(metric: &Metric, u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    match metric {
        Metric::Euclidean | Metric::Mahalanobis { covariance: None } => {
            (0..n).map(|i| (u[i] - v[i]) * (u[i] - v[i])).sum()
        }
        Metric::Chebyshev => (0..n).map(|i| (u[i] - v[i]).abs()).fold(0.0, f64::max),
        Metric::Minkowski { p } => (0..n)
            .map(|i| (u[i] - v[i]).abs().powf(*p))
            .sum::<f64>()
            .powf(1.0 / p),
        Metric::Hamming { tolerance } => {
            (0..n).filter(|&i| (u[i] - v[i]).abs() > *tolerance).count() as f64
        }
        Metric::Diff { tolerance } => (0..n)
            .map(|i| (u[i] - v[i]).abs())
            .filter(|d| d > tolerance)
            .sum(),
        Metric::Cosine => {
            let dot: f64 = (0..n).map(|i| u[i] * v[i]).sum();
            let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            1.0 - dot / (nu * nv)
        }
        Metric::Mahalanobis { .. } => unreachable!("oracle covers the identity fallback"),
    }
}

#[test]
fn acceptance_08_neural_net() {
    criterion(8, "backprop gradients, XOR convergence, id codec", || {
        // Gradient check against central finite differences.
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let net = NeuralNetwork::generate(3, &[4], 2, &mut rng);
        let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = vec![1.0, 0.0];
        let (_, grads_w, grads_b) = net.gradients(&input, &target);
        let eps = 1e-6;
        let loss = |n: &NeuralNetwork| -> f64 {
            let out = n.evaluate(&input);
            0.5 * out
                .iter()
                .zip(&target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
        };
        let mut checked = 0usize;
        for l in 0..grads_w.len() {
            for j in 0..grads_w[l].len() {
                for i in 0..grads_w[l][j].len() {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    plus.nudge_weight(l, j, i, eps);
                    minus.nudge_weight(l, j, i, -eps);
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                    let analytic = grads_w[l][j][i];
                    let scale = numeric.abs().max(analytic.abs()).max(1e-4);
                    assert!(
                        (numeric - analytic).abs() / scale < 1e-5,
                        "weight [{l}][{j}][{i}]: {analytic} vs {numeric}"
                    );
                    checked += 1;
                }
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.nudge_bias(l, j, eps);
                minus.nudge_bias(l, j, -eps);
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let analytic = grads_b[l][j];
                let scale = numeric.abs().max(analytic.abs()).max(1e-4);
                assert!((numeric - analytic).abs() / scale < 1e-5);
            }
        }
        assert!(checked > 0);

        // XOR below the canonical min_error within 1e4 epochs.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = NeuralNetwork::generate(2, &[4], 1, &mut rng);
        let dataset = vec![
            (vec![0.0, 0.0], vec![0.0]),
            (vec![0.0, 1.0], vec![1.0]),
            (vec![1.0, 0.0], vec![1.0]),
            (vec![1.0, 1.0], vec![0.0]),
        ];
        let outcome = net.train(&dataset, 10_000, 1.0, 0.1);
        assert!(outcome.converged, "XOR stuck at error {}", outcome.final_error);

        // 32-bit binary id codec.
        for id in 0..=1000u32 {
            let encoded = encode_id(id, 32);
            assert_eq!(interpret_as_binary(&encoded), id);
        }
    });
}

#[test]
fn acceptance_09_toy_speaker_id() {
    criterion(9, "four-subject corpus end to end on one and two nodes", || {
        let subjects: [(u32, (f64, f64)); 4] = [
            (1, (400.0, 900.0)),
            (2, (700.0, 1500.0)),
            (3, (1000.0, 2200.0)),
            (4, (1300.0, 2900.0)),
        ];
        let sample = |tones: (f64, f64), detune: f64, seed: u64| {
            format!(
                "rate=8000;dur=0.5;tones={}:1,{}:0.6;noise=0.02;seed={seed}",
                tones.0 + detune,
                tones.1 + detune
            )
        };
        let mut train = Vec::new();
        let mut recognize = Vec::new();
        for &(id, tones) in &subjects {
            let inputs = (0..5)
                .map(|k| JobInput {
                    name: format!("t{id}-{k}"),
                    bytes: sample(tones, 0.0, k).into_bytes(),
                })
                .collect();
            train.push(TrainPhase { subject: id, inputs });
            for k in 0..5u64 {
                recognize.push(JobInput {
                    name: format!("train-{id}-{k}"),
                    bytes: sample(tones, 0.0, k).into_bytes(),
                });
                recognize.push(JobInput {
                    name: format!("held-{id}-{k}"),
                    bytes: sample(tones, 1.0, 100 + k).into_bytes(),
                });
            }
        }
        let scenario = Scenario {
            seed: 9,
            workers_per_node: vec![2],
            timeout: 20_000,
            train,
            recognize,
            ..Scenario::default()
        };

        let one_node = simulate(&scenario).unwrap();
        let report = one_node.completed().expect("one-node run completes");
        let mut train_hits = 0usize;
        let mut held_hits = 0usize;
        for outcome in &report.outcomes {
            let mut parts = outcome.name.split('-');
            let kind = parts.next().unwrap();
            let expected: u32 = parts.next().unwrap().parse().unwrap();
            let hit = outcome.subject == Some(expected);
            match kind {
                "train" => {
                    assert!(hit, "training input {} misclassified", outcome.name);
                    train_hits += 1;
                }
                _ => held_hits += hit as usize,
            }
        }
        assert_eq!(train_hits, 20);
        assert!(held_hits >= 18, "held-out accuracy {held_hits}/20 below 90%");

        let mut two = scenario.clone();
        two.workers_per_node = vec![1, 1];
        let two_node = simulate(&two).unwrap();
        assert_eq!(
            two_node.completed().expect("two-node run completes").digest(),
            report.digest(),
            "topology changed the result"
        );
    });
}

#[test]
fn acceptance_10_ledger_determinism() {
    criterion(10, "seeded scenarios replay to identical ledger digests", || {
        let mut scenario = healing_scenario(
            RecoveryPolicy::IfCrashThenTryNextUntilTheEnd,
            vec![
                SimEvent { at: 2, kind: SimEventKind::KillWorker { index: 0 } },
                SimEvent { at: 4, kind: SimEventKind::CrashStore },
                SimEvent { at: 6, kind: SimEventKind::ShipWal },
            ],
        );
        scenario.wal = true;
        let a = simulate(&scenario).unwrap();
        let b = simulate(&scenario).unwrap();
        assert_eq!(a.ledger_digest(), b.ledger_digest());

        let mut reseeded = scenario.clone();
        reseeded.seed = 999;
        let c = simulate(&reseeded).unwrap();
        // Different seed still completes; outcome digest (not the
        // claim history) stays the same.
        assert_eq!(
            c.completed().unwrap().digest(),
            a.completed().unwrap().digest()
        );
    });
}
