//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines and the measured values.

use std::collections::{BTreeMap, HashMap};
use std::process::Command;

use filfl_core::config::{ExperimentConfig, FilterModeConfig};
use filfl_core::data::make_availability;
use filfl_core::dataset::{Dataset, Label, LabeledExample};
use filfl_core::error::Result;
use filfl_core::filtering::{
    chi_gf, FilterMode, FilterTrace, RewardOracle, SetValue, EmptySetValue,
};
use filfl_core::model::{gradient, local_sgd, loss, LocalTrainConfig, ModelSpec};
use filfl_core::orchestrator::{distance_to_optimum, run_experiment, run_on_task, RunOutput};
use filfl_core::rng::RngStream;
use filfl_core::selection::{select_rs, RsVariant};
use filfl_core::vector::{simple_average, ParamVector};
use filfl_core::ClientId;

struct Criterion(&'static str, &'static str);

impl Criterion {
    fn pass(&self, detail: String) {
        println!("ACCEPTANCE {} {}: PASS ({detail})", self.0, self.1);
    }
}

fn ids(n: u32) -> Vec<ClientId> {
    (0..n).map(ClientId).collect()
}

/// Injected oracle: a full table of subset values.
struct TableOracle {
    table: HashMap<Vec<ClientId>, f64>,
}

impl TableOracle {
    fn random(n: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Self {
        use rand::Rng;
        let mut table = HashMap::new();
        for mask in 0u32..(1 << n) {
            let subset: Vec<ClientId> = (0..n)
                .filter(|bit| mask & (1 << bit) != 0)
                .map(|bit| ClientId(bit as u32))
                .collect();
            table.insert(subset, rng.random_range(-2.0..2.0));
        }
        TableOracle { table }
    }

    fn lookup(&self, subset: &[ClientId]) -> f64 {
        self.table[subset]
    }
}

impl SetValue for TableOracle {
    fn value(&mut self, subset: &[ClientId]) -> Result<f64> {
        Ok(self.table[subset])
    }
}

/// Step-by-step reference trace computed directly from the table, with no
/// memoization and no shared code with the greedy implementation.
struct ReferenceStep {
    client: ClientId,
    a: f64,
    b: f64,
    p: f64,
    decided: Option<bool>, // Some for the deterministic rule
}

fn reference_trace(
    oracle: &TableOracle,
    pool: &[ClientId],
    deterministic: bool,
    recorded: &FilterTrace,
) -> Vec<ReferenceStep> {
    let mut x: Vec<ClientId> = Vec::new();
    let mut y: Vec<ClientId> = pool.to_vec();
    let mut steps = Vec::new();
    for (i, &u) in pool.iter().enumerate() {
        let mut x_plus = x.clone();
        x_plus.push(u);
        x_plus.sort_unstable();
        let mut y_minus = y.clone();
        y_minus.retain(|&v| v != u);
        let a = oracle.lookup(&x_plus) - oracle.lookup(&x);
        let b = oracle.lookup(&y_minus) - oracle.lookup(&y);
        let a_clip = if a > 0.0 { a } else { 0.0 };
        let b_clip = if b > 0.0 { b } else { 0.0 };
        let (p, decided) = if deterministic {
            let accept = a > b;
            (if accept { 1.0 } else { 0.0 }, Some(accept))
        } else {
            let p = if a_clip == 0.0 && b_clip == 0.0 {
                1.0
            } else {
                a_clip / (a_clip + b_clip)
            };
            (p, None)
        };
        // Advance along the recorded decision (for the deterministic rule
        // the recorded decision must equal ours; asserted by the caller).
        let accepted = recorded.steps[i].accepted;
        if accepted {
            x = x_plus;
        } else {
            y = y_minus;
        }
        steps.push(ReferenceStep {
            client: u,
            a,
            b,
            p,
            decided,
        });
    }
    assert_eq!(x, y, "reference X_n != Y_n");
    steps
}

#[test]
fn a01_greedy_filter_conformance() {
    let c = Criterion("a01", "greedy filter conformance on injected tables");
    let started = std::time::Instant::now();
    let mut table_rng = RngStream::root(1001).child("tables").rng();
    use rand::Rng;
    for case in 0..200u64 {
        let n = 1 + (case as usize % 8);
        let pool = ids(n as u32);
        let mut oracle = TableOracle::random(n, &mut table_rng);
        let deterministic = case % 2 == 0;
        let mode = if deterministic {
            FilterMode::Deterministic
        } else {
            FilterMode::Randomized
        };
        let mut rng = RngStream::root(2000 + case).child("filter").rng();
        let (set, trace) = chi_gf(&mut oracle, &pool, mode, &mut rng).unwrap();
        let reference = reference_trace(&oracle, &pool, deterministic, &trace);
        for (step, reference_step) in trace.steps.iter().zip(&reference) {
            assert_eq!(step.client, reference_step.client);
            assert!((step.gain_add - reference_step.a).abs() <= 1e-12);
            assert!((step.gain_drop - reference_step.b).abs() <= 1e-12);
            assert!(
                (step.p - reference_step.p).abs() <= 1e-12,
                "p {} vs reference {}",
                step.p,
                reference_step.p
            );
            if let Some(decision) = reference_step.decided {
                assert_eq!(step.accepted, decision, "deterministic decision mismatch");
            }
        }
        let (x, y) = trace.reconstruct_sets();
        assert_eq!(x, y, "X_n != Y_n");
        assert_eq!(x, set);
        let _ = rng.random::<u64>();
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    c.pass(format!("200 tables, both modes, {elapsed:?}"));
}

/// Small convex task used by the direct filtering criteria.
fn filtering_fixture(
    n: u32,
    seed: u64,
) -> (ModelSpec, Dataset, BTreeMap<ClientId, ParamVector>, ParamVector) {
    use rand::Rng;
    let spec = ModelSpec::linear_regression(3, 0.2);
    let mut rng = RngStream::root(seed).child("fixture").rng();
    let public = Dataset::new(
        (0..30)
            .map(|_| LabeledExample {
                features: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: Label::Real(rng.random_range(-1.0..1.0)),
            })
            .collect(),
    );
    let weights: BTreeMap<ClientId, ParamVector> = (0..n)
        .map(|k| {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            (ClientId(k), ParamVector::new(v).unwrap())
        })
        .collect();
    let global = ParamVector::zeros(3);
    (spec, public, weights, global)
}

#[test]
fn a02_reward_constant_invariance() {
    let c = Criterion("a02", "filtered sets and traces invariant to the reward constant");
    let started = std::time::Instant::now();
    let (spec, public, weights, global) = filtering_fixture(12, 77);
    let pool = ids(12);
    for mode in [FilterMode::Deterministic, FilterMode::Randomized] {
        let mut outputs = Vec::new();
        for constant in [0.0, 10.0, 1e6] {
            let mut oracle = RewardOracle::new(
                &spec,
                &public,
                &weights,
                &global,
                constant,
                EmptySetValue::GlobalModel,
            );
            let mut rng = RngStream::root(42).child("filter").child_idx(1).rng();
            let out = chi_gf(&mut oracle, &pool, mode, &mut rng).unwrap();
            // The constant must still shift the reported reward itself.
            let reward = oracle.reward(&pool).unwrap();
            assert!((reward - constant - oracle.value(&pool).unwrap()).abs() < 1e-9);
            outputs.push(out);
        }
        assert_eq!(outputs[0], outputs[1], "{mode:?}");
        assert_eq!(outputs[0], outputs[2], "{mode:?}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    c.pass(format!("C in {{0, 10, 1e6}}, exact equality, {elapsed:?}"));
}

#[test]
fn a03_oracle_call_budget() {
    let c = Criterion("a03", "filter oracle budget <= 2n + 2");
    let mut details = Vec::new();
    for &n in &[1u32, 5, 10, 50, 200] {
        let (spec, public, weights, global) = filtering_fixture(n, 300 + n as u64);
        let pool = ids(n);
        for mode in [FilterMode::Deterministic, FilterMode::Randomized] {
            let mut oracle = RewardOracle::new(
                &spec,
                &public,
                &weights,
                &global,
                0.0,
                EmptySetValue::GlobalModel,
            );
            let mut rng = RngStream::root(7).child("filter").child_idx(n as u64).rng();
            let (_, trace) = chi_gf(&mut oracle, &pool, mode, &mut rng).unwrap();
            assert!(
                oracle.evals() <= 2 * n as u64 + 2,
                "n={n} mode {mode:?}: {} evals",
                oracle.evals()
            );
            assert_eq!(oracle.evals(), trace.oracle_calls);
        }
        details.push(format!("n={n} ok"));
    }
    c.pass(details.join(", "));
}

fn ratio_config(mode: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "seed": {seed},
            "rounds": 20,
            "model": {{"kind": "logistic_regression", "input_dim": 3, "classes": 3, "l2": 0.1}},
            "task": {{"kind": "synthetic", "clients": 50, "per_client": 30,
                     "heterogeneity": 1.0, "public_size": 40, "test_size": 60, "noise": 1.0}},
            "availability": {{"available": 8, "resample_period": 5}},
            "filter": {{"mode": "{mode}", "period": 1, "reward_c": 5.0}},
            "selection": {{"kind": "rs_weighted", "k": 3}},
            "local": {{"epochs": 1, "batch_size": 15, "learning_rate": 0.1}},
            "diagnostics": {{"opt_ratio": true}}
        }}"#
    ))
    .unwrap()
}

#[test]
fn a04_approximation_ratio_floor() {
    let c = Criterion("a04", "greedy reward within 0.90 of the exhaustive optimum");
    let started = std::time::Instant::now();
    let mut details = Vec::new();
    for mode in ["d", "r"] {
        let out = run_experiment(&ratio_config(mode, 404)).unwrap();
        let ratios: Vec<f64> = out.records.iter().filter_map(|r| r.opt_ratio).collect();
        assert_eq!(ratios.len(), 20, "expected 20 filtering rounds");
        for ratio in &ratios {
            assert!(*ratio <= 1.0 + 1e-12, "ratio {ratio} above 1");
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(mean >= 0.90, "mode {mode}: mean ratio {mean}");
        details.push(format!("{mode}: mean {mean:.4}"));
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    c.pass(format!("{} ({elapsed:?})", details.join(", ")));
}

fn asymmetry_config(mode: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "seed": {seed},
            "rounds": 100,
            "model": {{"kind": "logistic_regression", "input_dim": 3, "classes": 3, "l2": 0.1}},
            "task": {{"kind": "synthetic", "clients": 40, "per_client": 25,
                     "heterogeneity": 1.0, "public_size": 30, "test_size": 40, "noise": 1.0}},
            "availability": {{"available": 30, "resample_period": 5}},
            "filter": {{"mode": "{mode}", "period": 1}},
            "selection": {{"kind": "rs_weighted", "k": 5}},
            "local": {{"epochs": 1, "batch_size": 25, "learning_rate": 0.1}}
        }}"#
    ))
    .unwrap()
}

#[test]
fn a05_rejection_asymmetry() {
    let c = Criterion("a05", "deterministic filtering keeps no more clients than randomized");
    let mut mean_sizes = (0.0, 0.0);
    for seed in [1u64, 2, 3] {
        let d_out = run_experiment(&asymmetry_config("d", seed)).unwrap();
        let r_out = run_experiment(&asymmetry_config("r", seed)).unwrap();
        let mean = |out: &RunOutput| -> f64 {
            out.records.iter().map(|r| r.filtered.len() as f64).sum::<f64>()
                / out.records.len() as f64
        };
        let (d_mean, r_mean) = (mean(&d_out), mean(&r_out));
        assert!(
            d_mean <= r_mean,
            "seed {seed}: deterministic mean {d_mean} > randomized mean {r_mean}"
        );
        mean_sizes.0 += d_mean / 3.0;
        mean_sizes.1 += r_mean / 3.0;
        // Deterministic sub-claim: doubly non-positive gains are always
        // accepted by the randomized rule.
        let mut doubly_negative = 0usize;
        for row in &r_out.filter_rows {
            if row.a <= 0.0 && row.b <= 0.0 {
                doubly_negative += 1;
                assert_eq!(row.p, 1.0, "round {} client {}", row.round, row.client_id);
                assert!(row.accepted, "round {} client {}", row.round, row.client_id);
            }
        }
        assert!(doubly_negative > 0, "no doubly-negative steps observed");
    }
    c.pass(format!(
        "mean filtered size: deterministic {:.2} <= randomized {:.2}",
        mean_sizes.0, mean_sizes.1
    ));
}

#[test]
fn a06_weak_submodularity_table() {
    let c = Criterion("a06", "weak-submodularity table shape and monotonicity");
    let cfg = ExperimentConfig::from_json(
        r#"{
            "seed": 606,
            "rounds": 5,
            "model": {"kind": "logistic_regression", "input_dim": 3, "classes": 3, "l2": 0.1},
            "task": {"kind": "synthetic", "clients": 25, "per_client": 25,
                     "heterogeneity": 1.0, "public_size": 30, "test_size": 40, "noise": 1.0},
            "availability": {"available": 25, "resample_period": 1000},
            "filter": {"mode": "r", "period": 1},
            "selection": {"kind": "rs_weighted", "k": 8},
            "local": {"epochs": 1, "batch_size": 25, "learning_rate": 0.2},
            "diagnostics": {"submod_check": true},
            "submod": {"samples": 100}
        }"#,
    )
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.submod_rounds.len(), 5, "expected 5 measured rounds");
    let gammas = &out.submod_rounds[0].table.gammas;
    assert_eq!(gammas, &vec![0.001, 0.2, 0.4, 0.6, 0.8, 1.0]);
    for round in &out.submod_rounds {
        for pct in &round.table.verified_pct {
            assert!((0.0..=100.0).contains(pct));
        }
        for pair in round.table.verified_pct.windows(2) {
            assert!(
                pair[0] >= pair[1],
                "round {}: {:?} not non-increasing",
                round.round,
                round.table.verified_pct
            );
        }
    }
    let averaged: Vec<f64> = (0..gammas.len())
        .map(|col| {
            out.submod_rounds
                .iter()
                .map(|r| r.table.verified_pct[col])
                .sum::<f64>()
                / out.submod_rounds.len() as f64
        })
        .collect();
    for value in &averaged {
        assert!(
            (40.0..=100.0).contains(value),
            "averaged row {averaged:?} outside [40, 100]"
        );
    }
    c.pass(format!("averaged row {averaged:?}"));
}

#[test]
fn a07_convergence_neighborhood() {
    let c = Criterion("a07", "inverse-time schedule converges to a plateau");
    let started = std::time::Instant::now();
    // l2 = 1.0 certifies the convexity modulus, so beta = 2/mu = 2.
    let cfg = ExperimentConfig::from_json(
        r#"{
            "seed": 707,
            "rounds": 300,
            "model": {"kind": "linear_regression", "input_dim": 4, "l2": 1.0},
            "task": {"kind": "synthetic", "clients": 20, "per_client": 200,
                     "heterogeneity": 0.02, "public_size": 30, "test_size": 40, "noise": 0.01,
                     "feature_scale": 2.0},
            "availability": {"available": 10, "resample_period": 5},
            "filter": {"mode": "r", "period": 5},
            "selection": {"kind": "rs_weighted", "k": 3},
            "local": {"epochs": 2, "batch_size": 200, "learning_rate": 1.0,
                      "schedule": {"kind": "inverse", "beta": 2.0}}
        }"#,
    )
    .unwrap();
    let (spec, task) = filfl_core::config::build_task(&cfg).unwrap();
    let out = run_on_task(&cfg, &spec, &task).unwrap();
    let distances: Vec<f64> = out
        .records
        .iter()
        .map(|r| distance_to_optimum(&r.global_params, &spec, &task).unwrap())
        .collect();
    let at_10 = distances[9];
    let at_t = distances[299];
    assert!(
        at_t <= 0.05 * at_10,
        "distance at T {at_t} vs 5% of round-10 distance {}",
        0.05 * at_10
    );
    let mean = |slice: &[f64]| slice.iter().sum::<f64>() / slice.len() as f64;
    let last_50 = mean(&distances[250..300]);
    let last_100 = mean(&distances[200..300]);
    assert!(
        last_50 <= 2.0 * last_100,
        "last-50 mean {last_50} vs last-100 mean {last_100}"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    c.pass(format!(
        "dist(10) {at_10:.3e} -> dist(300) {at_t:.3e}, plateau ratio {:.2} ({elapsed:?})",
        last_50 / last_100
    ))
}

fn identity_config(mode: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "seed": 808,
            "rounds": 50,
            "model": {{"kind": "linear_regression", "input_dim": 3, "l2": 0.3}},
            "task": {{"kind": "synthetic", "clients": 15, "per_client": 20,
                     "heterogeneity": 0.7, "public_size": 20, "test_size": 30}},
            "availability": {{"available": 8, "resample_period": 4}},
            "filter": {{"mode": "{mode}", "period": 3}},
            "selection": {{"kind": "rs_weighted", "k": 3}},
            "local": {{"epochs": 2, "batch_size": 10, "learning_rate": 0.05}}
        }}"#
    ))
    .unwrap()
}

/// Plain federated averaging with no filtering code path: the reference
/// loop for the generalization identity.
fn reference_fedavg(cfg: &ExperimentConfig) -> Vec<ParamVector> {
    let (spec, task) = filfl_core::config::build_task(cfg).unwrap();
    let root = RngStream::root(cfg.seed);
    let active = task.active_clients();
    let schedule = make_availability(
        &active,
        cfg.availability.available,
        cfg.availability.resample_period,
        cfg.rounds,
        &root,
    )
    .unwrap();
    let mut w = ParamVector::zeros(spec.param_dim());
    let mut trajectory = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let available = schedule.available_at(t - 1).to_vec();
        let selected = if available.len() > cfg.selection.k {
            let mut rng = root.child("select").child_idx(t as u64).rng();
            select_rs(
                &available,
                task.weights(),
                cfg.selection.k,
                RsVariant::WeightedWithReplacement,
                &mut rng,
            )
            .unwrap()
        } else {
            available
        };
        let train_cfg = LocalTrainConfig {
            epochs: cfg.local.epochs,
            batch_size: cfg.local.batch_size,
            learning_rate: cfg.local.learning_rate,
            proximal_mu: 0.0,
        };
        let mut unique = selected.clone();
        unique.dedup();
        let mut trained: BTreeMap<ClientId, ParamVector> = BTreeMap::new();
        for &k in &unique {
            let mut rng = root
                .child("local")
                .child_idx(t as u64)
                .child_idx(k.0 as u64)
                .rng();
            let params = local_sgd(
                &spec,
                &w,
                &task.clients()[&k],
                &train_cfg,
                &w,
                &mut rng,
            )
            .unwrap();
            trained.insert(k, params);
        }
        let members: Vec<&ParamVector> = selected.iter().map(|id| &trained[id]).collect();
        w = simple_average(members).unwrap();
        trajectory.push(w.clone());
    }
    trajectory
}

#[test]
fn a08_filter_off_is_plain_fedavg() {
    let c = Criterion("a08", "filter off reproduces a filtering-free loop bit for bit");
    let cfg = identity_config("off");
    let out = run_experiment(&cfg).unwrap();
    let reference = reference_fedavg(&cfg);
    assert_eq!(out.records.len(), reference.len());
    for (record, expected) in out.records.iter().zip(&reference) {
        assert_eq!(
            record.global_params, *expected,
            "round {} diverged",
            record.round
        );
        assert_eq!(record.filtered, record.available);
    }
    assert!(out.filter_rows.is_empty());
    c.pass("50 rounds bit-identical".to_string());
}

fn baseline_config(mode: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "seed": {seed},
            "rounds": 200,
            "model": {{"kind": "linear_regression", "input_dim": 4, "l2": 0.1}},
            "task": {{"kind": "synthetic", "clients": 50, "per_client": 30,
                     "heterogeneity": 1.0, "public_size": 50, "test_size": 100, "noise": 0.1}},
            "availability": {{"available": 20, "resample_period": 5}},
            "filter": {{"mode": "{mode}", "period": 5}},
            "selection": {{"kind": "rs_weighted", "k": 4}},
            "local": {{"epochs": 1, "batch_size": 30, "learning_rate": 0.1}}
        }}"#
    ))
    .unwrap()
}

#[test]
fn a09_filtering_beats_plain_fedavg() {
    let c = Criterion("a09", "filtering reaches the baseline loss faster");
    let mut wins = 0;
    let mut details = Vec::new();
    for seed in [11u64, 12, 13] {
        let filtered = run_experiment(&baseline_config("r", seed)).unwrap();
        let plain = run_experiment(&baseline_config("off", seed)).unwrap();
        let plain_final = plain.records.last().unwrap().public_loss;
        let filtered_final = filtered.records.last().unwrap().public_loss;
        let reach = filtered
            .records
            .iter()
            .position(|r| r.public_loss <= plain_final)
            .map(|idx| idx + 1);
        let budget = (0.8 * plain.records.len() as f64) as usize;
        let win = filtered_final <= plain_final && reach.is_some_and(|r| r <= budget);
        if win {
            wins += 1;
        }
        details.push(format!(
            "seed {seed}: final {filtered_final:.4} vs {plain_final:.4}, reached at {reach:?} (budget {budget})"
        ));
    }
    assert!(wins >= 2, "only {wins}/3 seeds won: {details:?}");
    c.pass(format!("{wins}/3 seeds; {}", details.join("; ")));
}

#[test]
fn a10_gradient_correctness() {
    let c = Criterion("a10", "analytic gradients match finite differences");
    use rand::Rng;
    let specs = [
        ModelSpec::linear_regression(4, 0.2),
        ModelSpec::logistic_regression(4, 3, 0.1),
        ModelSpec::mlp(4, 5, 3, 0.05),
    ];
    let mut max_err: f64 = 0.0;
    let mut probes = 0;
    let mut rng = RngStream::root(1010).child("probes").rng();
    'outer: for round in 0.. {
        for spec in &specs {
            if probes >= 100 {
                break 'outer;
            }
            probes += 1;
            let data = Dataset::new(
                (0..10)
                    .map(|_| LabeledExample {
                        features: (0..spec.input_dim)
                            .map(|_| rng.random_range(-1.5..1.5))
                            .collect(),
                        label: if spec.is_classification() {
                            Label::Class(rng.random_range(0..spec.classes))
                        } else {
                            Label::Real(rng.random_range(-2.0..2.0))
                        },
                    })
                    .collect(),
            );
            let params = ParamVector::new(
                (0..spec.param_dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
            let analytic = gradient(spec, &params, &data).unwrap();
            let h = 1e-6;
            for i in 0..params.dim() {
                let mut plus = params.as_slice().to_vec();
                let mut minus = params.as_slice().to_vec();
                plus[i] += h;
                minus[i] -= h;
                let fd = (loss(spec, &ParamVector::new(plus).unwrap(), &data).unwrap()
                    - loss(spec, &ParamVector::new(minus).unwrap(), &data).unwrap())
                    / (2.0 * h);
                let a = analytic[i];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                max_err = max_err.max(err);
                assert!(err <= 1e-5, "round {round} coord {i}: {a} vs {fd}");
            }
        }
    }
    c.pass(format!("{probes} probes, max relative error {max_err:.2e}"));
}

#[test]
fn a11_cli_determinism() {
    let c = Criterion("a11", "byte-identical CSV across repeated runs with parallel training");
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("cfg.json");
    std::fs::write(
        &config_path,
        r#"{
            "seed": 1111,
            "rounds": 12,
            "parallel": true,
            "model": {"kind": "logistic_regression", "input_dim": 3, "classes": 3, "l2": 0.2},
            "task": {"kind": "synthetic", "clients": 16, "per_client": 24,
                     "heterogeneity": 0.8, "public_size": 24, "test_size": 48},
            "availability": {"available": 10, "resample_period": 4},
            "filter": {"mode": "r", "period": 2},
            "selection": {"kind": "rs_weighted", "k": 3},
            "local": {"epochs": 1, "batch_size": 8, "learning_rate": 0.1}
        }"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("run{run}"));
        let result = Command::new(env!("CARGO_BIN_EXE_filfl"))
            .args([
                "run",
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(result.status.success(), "{result:?}");
        outputs.push((
            std::fs::read(out_dir.join("run.csv")).unwrap(),
            std::fs::read(out_dir.join("filter_trace.jsonl")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "run.csv differs");
    assert_eq!(outputs[0].1, outputs[1].1, "filter_trace.jsonl differs");
    c.pass("two cmd_run executions, parallel clients, identical bytes".to_string());
}
