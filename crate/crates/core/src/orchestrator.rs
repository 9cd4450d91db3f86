//! The round loop: availability, periodic filtering, selection, local
//! training, aggregation, and per-round metrics.
//!
//! Rounds are 1-based (round t reads availability slot t-1). The filtered
//! pool is recomputed when `t` hits the filtering period or the available
//! set changed; otherwise the previous filtered pool is reused verbatim.
//! With filtering off the loop degenerates to plain federated averaging:
//! the filtered pool is the available set and no filtering state exists in
//! the trajectory.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{
    ExperimentConfig, SelectionKindConfig, WeightSourceConfig,
};
use crate::data::{make_availability, AvailabilitySchedule, FederatedTask};
use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::filtering::{
    approximation_ratio, brute_force_opt, chi_gf, weak_submodularity_check, RewardOracle,
    SubmodTable,
};
use crate::model::{accuracy, gradient, local_sgd, loss, LocalTrainConfig, ModelKind, ModelSpec};
use crate::rng::RngStream;
use crate::selection::{select_divfl, select_poc, select_rs};
use crate::vector::{simple_average, ParamVector};
use crate::ClientId;

/// Per-round metrics and bookkeeping.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: usize,
    pub available: Vec<ClientId>,
    pub filtered: Vec<ClientId>,
    /// Selected multiset (weighted sampling may repeat a client).
    pub selected: Vec<ClientId>,
    /// Whether the filter actually ran this round.
    pub refiltered: bool,
    /// Global objective (client-weighted training loss) after aggregation.
    pub train_loss: f64,
    pub public_loss: f64,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
    /// Reward of the filtered pool, including the reporting constant.
    pub reward: f64,
    pub delta_gap: Option<f64>,
    pub opt_ratio: Option<f64>,
    /// Loss evaluations consumed by filtering this round (0 when reused).
    pub oracle_calls: u64,
    pub wall_ms: Option<f64>,
    /// Post-aggregation global model.
    pub global_params: ParamVector,
}

/// One greedy-filter decision, flattened for the JSONL trace export.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct FilterRow {
    pub round: usize,
    pub i: usize,
    pub client_id: ClientId,
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct SubmodRound {
    pub round: usize,
    pub table: SubmodTable,
}

/// Everything a run produces, in memory.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub filter_rows: Vec<FilterRow>,
    pub submod_rounds: Vec<SubmodRound>,
}

/// Client-weighted global training loss `sum_k p_k F_k(w)`.
pub fn global_train_loss(
    spec: &ModelSpec,
    task: &FederatedTask,
    params: &ParamVector,
) -> Result<f64> {
    let mut total = 0.0;
    for (id, &p) in task.weights() {
        if p == 0.0 {
            continue;
        }
        total += p * loss(spec, params, &task.clients()[id])?;
    }
    Ok(total)
}

/// Loss gap between the client-weighted average of this round's virtual
/// parameters and the filtered pool's simple average, both scored on the
/// global objective. Positive values mean the filtered average sits lower.
pub fn delta_gap(
    spec: &ModelSpec,
    task: &FederatedTask,
    virtual_params: &BTreeMap<ClientId, ParamVector>,
    filtered: &[ClientId],
) -> Result<f64> {
    if filtered.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut weighted: BTreeMap<ClientId, ParamVector> = BTreeMap::new();
    let mut coeffs: BTreeMap<ClientId, f64> = BTreeMap::new();
    for (&id, &p) in task.weights() {
        if p == 0.0 {
            continue;
        }
        let params = virtual_params.get(&id).ok_or(Error::MissingWeight(id))?;
        weighted.insert(id, params.clone());
        coeffs.insert(id, p);
    }
    let full_avg = crate::vector::weighted_average(&weighted, &coeffs)?;
    let members: Vec<&ParamVector> = filtered
        .iter()
        .map(|id| virtual_params.get(id).ok_or(Error::MissingWeight(*id)))
        .collect::<Result<_>>()?;
    let filtered_avg = simple_average(members)?;
    Ok(global_train_loss(spec, task, &full_avg)? - global_train_loss(spec, task, &filtered_avg)?)
}

/// Solve the normal equations of a weighted least-squares objective
/// `sum_j coeff_j (1/2 m_j) ||X_j w - y_j||^2 + (l2/2)||w||^2`.
pub fn weighted_least_squares(
    spec: &ModelSpec,
    parts: &[(f64, &Dataset)],
) -> Result<ParamVector> {
    if spec.kind != ModelKind::LinearRegression {
        return Err(Error::NoClosedFormOptimum);
    }
    let d = spec.input_dim;
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for &(coeff, data) in parts {
        if coeff == 0.0 {
            continue;
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let inv_m = coeff / data.len() as f64;
        for example in data.examples() {
            let y = match example.label {
                Label::Real(y) => y,
                Label::Class(_) => {
                    return Err(Error::LabelKind("least squares needs real labels"))
                }
            };
            let x = &example.features;
            for i in 0..d {
                b[i] += inv_m * y * x[i];
                for j in 0..d {
                    a[(i, j)] += inv_m * x[i] * x[j];
                }
            }
        }
    }
    for i in 0..d {
        a[(i, i)] += spec.l2;
    }
    let solution = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidParam("singular normal equations".into()))?;
    ParamVector::new(solution.iter().copied().collect())
}

/// Closed-form optimum of the global objective for linear-regression tasks.
pub fn global_optimum(spec: &ModelSpec, task: &FederatedTask) -> Result<ParamVector> {
    let parts: Vec<(f64, &Dataset)> = task
        .weights()
        .iter()
        .filter(|(_, &p)| p > 0.0)
        .map(|(id, &p)| (p, &task.clients()[id]))
        .collect();
    weighted_least_squares(spec, &parts)
}

/// Squared distance of `params` to the closed-form global optimum.
pub fn distance_to_optimum(
    params: &ParamVector,
    spec: &ModelSpec,
    task: &FederatedTask,
) -> Result<f64> {
    let optimum = global_optimum(spec, task)?;
    params.distance_sq(&optimum)
}

struct RunState<'a> {
    cfg: &'a ExperimentConfig,
    spec: &'a ModelSpec,
    task: &'a FederatedTask,
    root: RngStream,
    schedule: AvailabilitySchedule,
    active: Vec<ClientId>,
    global: ParamVector,
    latest: BTreeMap<ClientId, ParamVector>,
    prev_available: Vec<ClientId>,
    prev_filtered: Vec<ClientId>,
    out: RunOutput,
}

/// Run the full experiment described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (spec, task) = crate::config::build_task(cfg)?;
    run_on_task(cfg, &spec, &task)
}

/// Run on an already-built task (callers that need the task afterwards can
/// rebuild it deterministically or pass it here themselves).
pub fn run_on_task(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    task: &FederatedTask,
) -> Result<RunOutput> {
    let root = RngStream::root(cfg.seed);
    let active = task.active_clients();
    if active.is_empty() {
        return Err(Error::EmptySet);
    }
    let schedule = make_availability(
        &active,
        cfg.availability.available,
        cfg.availability.resample_period,
        cfg.rounds,
        &root,
    )?;
    let global = initial_params(cfg, spec, &root)?;
    let prev_available = schedule.available_at(0).to_vec();
    let mut state = RunState {
        cfg,
        spec,
        task,
        root,
        schedule,
        active,
        global,
        latest: BTreeMap::new(),
        prev_filtered: prev_available.clone(),
        prev_available,
        out: RunOutput::default(),
    };
    for t in 1..=cfg.rounds {
        state.execute_round(t).map_err(|e| e.at_round(t))?;
    }
    Ok(state.out)
}

fn initial_params(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    root: &RngStream,
) -> Result<ParamVector> {
    let dim = spec.param_dim();
    if cfg.model.init_scale == 0.0 {
        return Ok(ParamVector::zeros(dim));
    }
    use rand::Rng;
    let mut rng = root.child("init").rng();
    ParamVector::new(
        (0..dim)
            .map(|_| cfg.model.init_scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect(),
    )
}

impl RunState<'_> {
    /// Parameter snapshot representing each pool client inside the reward.
    fn filter_weights(
        &self,
        pool: &[ClientId],
        lr: f64,
    ) -> Result<BTreeMap<ClientId, ParamVector>> {
        let mut weights = BTreeMap::new();
        for &id in pool {
            let params = match self.cfg.filter.weight_source {
                WeightSourceConfig::Latest => self
                    .latest
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| self.global.clone()),
                WeightSourceConfig::ProbeStep => {
                    let data = self.task.client_data(id).ok_or(Error::MissingWeight(id))?;
                    let g = gradient(self.spec, &self.global, data)?;
                    ParamVector::new(
                        self.global
                            .as_slice()
                            .iter()
                            .zip(g.as_slice())
                            .map(|(w, gi)| w - lr * gi)
                            .collect(),
                    )?
                }
            };
            weights.insert(id, params);
        }
        Ok(weights)
    }

    fn execute_round(&mut self, t: usize) -> Result<()> {
        let started = Instant::now();
        let available = self.schedule.available_at(t - 1).to_vec();
        let mode = self.cfg.filter.mode.to_mode();
        let trigger = mode.is_some()
            && (t % self.cfg.filter.period == 0 || available != self.prev_available);
        let lr = self
            .cfg
            .local
            .schedule
            .to_schedule()
            .rate_at(self.cfg.local.learning_rate, t);

        let filter_weights = self.filter_weights(&available, lr)?;
        let empty_set = self.cfg.filter.empty_set.to_value();

        let mut refiltered = false;
        let mut oracle_calls = 0;
        let filtered = match mode {
            None => available.clone(),
            Some(filter_mode) => {
                if trigger {
                    let mut oracle = RewardOracle::new(
                        self.spec,
                        self.task.public(),
                        &filter_weights,
                        &self.global,
                        0.0,
                        empty_set,
                    );
                    let mut rng = self.root.child("filter").child_idx(t as u64).rng();
                    let (set, trace) = chi_gf(&mut oracle, &available, filter_mode, &mut rng)?;
                    refiltered = true;
                    oracle_calls = trace.oracle_calls;
                    for (i, step) in trace.steps.iter().enumerate() {
                        self.out.filter_rows.push(FilterRow {
                            round: t,
                            i: i + 1,
                            client_id: step.client,
                            a: step.gain_add,
                            b: step.gain_drop,
                            p: step.p,
                            accepted: step.accepted,
                        });
                    }
                    if set.is_empty() {
                        log::warn!(
                            "round {t}: filter rejected every client, using the available set"
                        );
                        available.clone()
                    } else {
                        set
                    }
                } else {
                    self.prev_filtered.clone()
                }
            }
        };

        let reward = {
            let mut oracle = RewardOracle::new(
                self.spec,
                self.task.public(),
                &filter_weights,
                &self.global,
                self.cfg.filter.reward_c,
                empty_set,
            );
            oracle.reward(&filtered)?
        };

        let opt_ratio = if self.cfg.diagnostics.opt_ratio && refiltered {
            let mut oracle = RewardOracle::new(
                self.spec,
                self.task.public(),
                &filter_weights,
                &self.global,
                0.0,
                empty_set,
            );
            let (_, opt_value) = brute_force_opt(&mut oracle, &available)?;
            Some(approximation_ratio(
                reward,
                self.cfg.filter.reward_c + opt_value,
            )?)
        } else {
            None
        };

        if self.cfg.diagnostics.submod_check
            && (refiltered || mode.is_none())
            && available.len() >= 2
        {
            let mut oracle = RewardOracle::new(
                self.spec,
                self.task.public(),
                &filter_weights,
                &self.global,
                0.0,
                empty_set,
            );
            let mut rng = self.root.child("submod").child_idx(t as u64).rng();
            let table = weak_submodularity_check(
                &mut oracle,
                &available,
                &self.cfg.submod.gammas,
                self.cfg.submod.samples,
                &mut rng,
            )?;
            self.out.submod_rounds.push(SubmodRound { round: t, table });
        }

        let selected = self.select(&filtered, t)?;

        let train_cfg = LocalTrainConfig {
            epochs: self.cfg.local.epochs,
            batch_size: self.cfg.local.batch_size,
            learning_rate: lr,
            proximal_mu: self.cfg.local.proximal_mu,
        };
        let mut unique = selected.clone();
        unique.dedup();
        let trained = self.train_clients(&unique, &train_cfg, t, "local")?;
        for (id, params) in &trained {
            self.latest.insert(*id, params.clone());
        }
        let by_id: BTreeMap<ClientId, &ParamVector> =
            trained.iter().map(|(id, p)| (*id, p)).collect();
        let members: Vec<&ParamVector> = selected.iter().map(|id| by_id[id]).collect();
        let new_global = simple_average(members)?;

        let train_loss = global_train_loss(self.spec, self.task, &new_global)?;
        let public_loss = loss(self.spec, &new_global, self.task.public())?;
        let test_loss = loss(self.spec, &new_global, self.task.global_test())?;
        let test_acc = if self.spec.is_classification() {
            Some(accuracy(self.spec, &new_global, self.task.global_test())?)
        } else {
            None
        };

        let delta = if self.cfg.diagnostics.delta_gap {
            let active = self.active.clone();
            let virt: BTreeMap<ClientId, ParamVector> = self
                .train_clients(&active, &train_cfg, t, "virtual")?
                .into_iter()
                .collect();
            Some(delta_gap(self.spec, self.task, &virt, &filtered)?)
        } else {
            None
        };

        let wall_ms = self
            .cfg
            .diagnostics
            .wall_clock
            .then(|| started.elapsed().as_secs_f64() * 1e3);

        self.out.records.push(RoundRecord {
            round: t,
            available: available.clone(),
            filtered: filtered.clone(),
            selected,
            refiltered,
            train_loss,
            public_loss,
            test_loss,
            test_acc,
            reward,
            delta_gap: delta,
            opt_ratio,
            oracle_calls,
            wall_ms,
            global_params: new_global.clone(),
        });
        self.global = new_global;
        self.prev_available = available;
        self.prev_filtered = filtered;
        Ok(())
    }

    /// Pick the active participants from the filtered pool; pools of at
    /// most K skip selection entirely.
    fn select(&self, filtered: &[ClientId], t: usize) -> Result<Vec<ClientId>> {
        let k = self.cfg.selection.k;
        if filtered.len() <= k {
            return Ok(filtered.to_vec());
        }
        let mut rng = self.root.child("select").child_idx(t as u64).rng();
        match self.cfg.selection.kind {
            SelectionKindConfig::RsWeighted | SelectionKindConfig::RsUniform => {
                let variant = self.cfg.selection.kind.rs_variant().expect("rs kind");
                select_rs(filtered, self.task.weights(), k, variant, &mut rng)
            }
            SelectionKindConfig::Poc => {
                let d = self
                    .cfg
                    .selection
                    .poc_candidates
                    .unwrap_or(2 * k)
                    .min(filtered.len());
                let mut losses = BTreeMap::new();
                for &id in filtered {
                    let data = self.task.client_data(id).ok_or(Error::MissingWeight(id))?;
                    losses.insert(id, loss(self.spec, &self.global, data)?);
                }
                select_poc(filtered, self.task.weights(), k, d, &losses, &mut rng)
            }
            SelectionKindConfig::Divfl => {
                let mut grads = BTreeMap::new();
                for &id in filtered {
                    let data = self.task.client_data(id).ok_or(Error::MissingWeight(id))?;
                    grads.insert(id, gradient(self.spec, &self.global, data)?);
                }
                Ok(select_divfl(filtered, k, &grads)?.selected)
            }
        }
    }

    /// Train a set of clients from the current global model. `purpose`
    /// separates the real per-round streams from the virtual ones used by
    /// diagnostics, so enabling a diagnostic never changes the trajectory.
    fn train_clients(
        &self,
        clients: &[ClientId],
        train_cfg: &LocalTrainConfig,
        t: usize,
        purpose: &'static str,
    ) -> Result<Vec<(ClientId, ParamVector)>> {
        let run_one = |&id: &ClientId| -> Result<(ClientId, ParamVector)> {
            let data = self.task.client_data(id).ok_or(Error::MissingWeight(id))?;
            let mut rng = self
                .root
                .child(purpose)
                .child_idx(t as u64)
                .child_idx(id.0 as u64)
                .rng();
            let params = local_sgd(self.spec, &self.global, data, train_cfg, &self.global, &mut rng)?;
            Ok((id, params))
        };
        if self.cfg.parallel {
            clients.par_iter().map(run_one).collect()
        } else {
            clients.iter().map(run_one).collect()
        }
    }
}
