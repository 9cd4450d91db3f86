//! Client filtering: the public-dataset reward, the double-greedy filter,
//! the exhaustive reference optimum, and the weak-submodularity probe.
//!
//! The filter maximizes a set function over the available clients. Two sets
//! are threaded through the pass: `X` starts empty and accumulates accepted
//! clients, `Y` starts as the full pool and sheds rejected ones. At step `i`
//! the marginal gain of adding client `u_i` to `X` is weighed against the
//! marginal gain of dropping it from `Y`; after the last step the two sets
//! coincide and form the filtered-in pool.
//!
//! Decisions depend only on reward *differences*, so the additive constant
//! that keeps reported rewards positive never reaches this module: oracles
//! expose the raw set value (negated public loss) and reporting code adds
//! the constant where positivity matters.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{loss, ModelSpec};
use crate::vector::{simple_average, ParamVector};
use crate::ClientId;

/// A set function over client subsets. Implementors must accept the empty
/// set and treat the additive reward constant as external.
pub trait SetValue {
    /// Value of a subset, given sorted and duplicate-free ids.
    fn value(&mut self, subset: &[ClientId]) -> Result<f64>;
}

/// Convention for valuing the empty set, which the greedy pass evaluates at
/// its first step even though the reward's inner average is undefined there.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmptySetValue {
    /// Score the current global model (the "no update" aggregate).
    #[default]
    GlobalModel,
    /// Score the zero parameter vector, for sensitivity checks.
    ZeroVector,
}

/// The filtering reward: `C - F_P(mean of member parameters)` where `F_P`
/// is the loss on the server-held public dataset. `value` returns the
/// C-free part; `reward` adds the configured constant.
pub struct RewardOracle<'a> {
    spec: &'a ModelSpec,
    public: &'a Dataset,
    weights: &'a BTreeMap<ClientId, ParamVector>,
    fallback: ParamVector,
    c: f64,
    evals: u64,
}

impl<'a> RewardOracle<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        public: &'a Dataset,
        weights: &'a BTreeMap<ClientId, ParamVector>,
        global_model: &ParamVector,
        c: f64,
        empty_set: EmptySetValue,
    ) -> Self {
        let fallback = match empty_set {
            EmptySetValue::GlobalModel => global_model.clone(),
            EmptySetValue::ZeroVector => ParamVector::zeros(global_model.dim()),
        };
        RewardOracle {
            spec,
            public,
            weights,
            fallback,
            c,
            evals: 0,
        }
    }

    /// Loss evaluations performed so far. Memoized lookups above this oracle
    /// never reach it, so repeats do not increment the counter.
    pub fn evals(&self) -> u64 {
        self.evals
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Full reward including the additive constant.
    pub fn reward(&mut self, subset: &[ClientId]) -> Result<f64> {
        Ok(self.c + self.value(subset)?)
    }
}

impl SetValue for RewardOracle<'_> {
    fn value(&mut self, subset: &[ClientId]) -> Result<f64> {
        let averaged;
        let scored = if subset.is_empty() {
            &self.fallback
        } else {
            let members: Vec<&ParamVector> = subset
                .iter()
                .map(|id| self.weights.get(id).ok_or(Error::MissingWeight(*id)))
                .collect::<Result<_>>()?;
            averaged = simple_average(members)?;
            &averaged
        };
        self.evals += 1;
        let public_loss = loss(self.spec, scored, self.public)?;
        Ok(-public_loss)
    }
}

/// Which decision rule the greedy filter runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterMode {
    /// Accept exactly when the add-gain strictly beats the drop-gain.
    Deterministic,
    /// Accept with probability `a'/(a'+b')` over the clipped gains,
    /// accepting outright when both clip to zero.
    Randomized,
}

/// One decision of the greedy pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep {
    pub client: ClientId,
    /// Marginal gain of adding the client to the accepted set.
    pub gain_add: f64,
    /// Marginal gain of dropping the client from the surviving set.
    pub gain_drop: f64,
    pub p: f64,
    pub accepted: bool,
}

/// Full record of a filtering pass: one step per pool client, plus how many
/// oracle evaluations the pass consumed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterTrace {
    pub steps: Vec<TraceStep>,
    pub oracle_calls: u64,
}

impl FilterTrace {
    pub fn accepted(&self) -> Vec<ClientId> {
        self.steps
            .iter()
            .filter(|s| s.accepted)
            .map(|s| s.client)
            .collect()
    }

    /// Replay the recorded decisions from scratch, returning the final
    /// `(X, Y)` pair. By construction the two must be equal, and equal to
    /// the accepted set.
    pub fn reconstruct_sets(&self) -> (Vec<ClientId>, Vec<ClientId>) {
        let mut x: Vec<ClientId> = Vec::new();
        let mut y: Vec<ClientId> = self.steps.iter().map(|s| s.client).collect();
        y.sort_unstable();
        for step in &self.steps {
            if step.accepted {
                insert_sorted(&mut x, step.client);
            } else {
                remove_sorted(&mut y, step.client);
            }
        }
        (x, y)
    }
}

/// Acceptance probability for one greedy step.
pub fn acceptance_probability(mode: FilterMode, gain_add: f64, gain_drop: f64) -> f64 {
    match mode {
        FilterMode::Deterministic => {
            if gain_add > gain_drop {
                1.0
            } else {
                0.0
            }
        }
        FilterMode::Randomized => {
            let a = gain_add.max(0.0);
            let b = gain_drop.max(0.0);
            if a == 0.0 && b == 0.0 {
                1.0
            } else {
                a / (a + b)
            }
        }
    }
}

fn insert_sorted(set: &mut Vec<ClientId>, id: ClientId) {
    if let Err(pos) = set.binary_search(&id) {
        set.insert(pos, id);
    }
}

fn remove_sorted(set: &mut Vec<ClientId>, id: ClientId) {
    if let Ok(pos) = set.binary_search(&id) {
        set.remove(pos);
    }
}

fn sorted_pool(pool: &[ClientId]) -> Result<Vec<ClientId>> {
    if pool.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut sorted = pool.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::DuplicateClient(pair[0]));
        }
    }
    Ok(sorted)
}

/// Memoizing wrapper: subset values are cached for the duration of one
/// filtering call (client parameters change between rounds, so caches never
/// outlive a call).
struct MemoValue<'o, O: SetValue> {
    oracle: &'o mut O,
    cache: HashMap<Vec<ClientId>, f64>,
    calls: u64,
}

impl<'o, O: SetValue> MemoValue<'o, O> {
    fn new(oracle: &'o mut O) -> Self {
        MemoValue {
            oracle,
            cache: HashMap::new(),
            calls: 0,
        }
    }

    fn value(&mut self, subset: &[ClientId]) -> Result<f64> {
        if let Some(&v) = self.cache.get(subset) {
            return Ok(v);
        }
        let v = self.oracle.value(subset)?;
        if !v.is_finite() {
            return Err(Error::NonFinite { context: "reward" });
        }
        self.calls += 1;
        self.cache.insert(subset.to_vec(), v);
        Ok(v)
    }
}

/// Run the greedy filter over a pool of clients.
///
/// The pool is processed in ascending client-id order (the greedy outcome
/// depends on order, so it is pinned). The randomized mode consumes exactly
/// one uniform draw per step; the deterministic mode consumes none. At most
/// `2n + 2` oracle evaluations are performed for a pool of `n` thanks to
/// carrying the running values of `X` and `Y` between steps.
pub fn chi_gf<O: SetValue>(
    oracle: &mut O,
    pool: &[ClientId],
    mode: FilterMode,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<ClientId>, FilterTrace)> {
    let pool = sorted_pool(pool)?;
    let mut ev = MemoValue::new(oracle);

    let mut x: Vec<ClientId> = Vec::new();
    let mut y: Vec<ClientId> = pool.clone();
    let mut value_x = ev.value(&x)?;
    let mut value_y = ev.value(&y)?;

    let mut steps = Vec::with_capacity(pool.len());
    for &client in &pool {
        let mut x_plus = x.clone();
        insert_sorted(&mut x_plus, client);
        let mut y_minus = y.clone();
        remove_sorted(&mut y_minus, client);

        let value_x_plus = ev.value(&x_plus)?;
        let value_y_minus = ev.value(&y_minus)?;
        let gain_add = value_x_plus - value_x;
        let gain_drop = value_y_minus - value_y;

        let p = acceptance_probability(mode, gain_add, gain_drop);
        let accepted = match mode {
            FilterMode::Deterministic => p == 1.0,
            FilterMode::Randomized => rng.random_range(0.0..1.0) < p,
        };
        steps.push(TraceStep {
            client,
            gain_add,
            gain_drop,
            p,
            accepted,
        });
        if accepted {
            x = x_plus;
            value_x = value_x_plus;
        } else {
            y = y_minus;
            value_y = value_y_minus;
        }
    }
    debug_assert_eq!(x, y, "X and Y must coincide after the final step");
    let trace = FilterTrace {
        steps,
        oracle_calls: ev.calls,
    };
    Ok((x, trace))
}

/// Hard cap on exhaustive search (2^n - 1 subsets).
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Exhaustive argmax of the set value over all non-empty subsets.
///
/// Ties break to the smaller cardinality, then to the lexicographically
/// smaller id sequence, so the result is independent of enumeration order.
/// Returns the oracle's raw value; add the reward constant where positivity
/// matters.
pub fn brute_force_opt<O: SetValue>(
    oracle: &mut O,
    pool: &[ClientId],
) -> Result<(Vec<ClientId>, f64)> {
    let pool = sorted_pool(pool)?;
    let n = pool.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::PoolTooLarge(n, BRUTE_FORCE_LIMIT));
    }
    let mut best: Option<(Vec<ClientId>, f64)> = None;
    for mask in 1u32..(1u32 << n) {
        let subset: Vec<ClientId> = (0..n)
            .filter(|bit| mask & (1 << bit) != 0)
            .map(|bit| pool[bit])
            .collect();
        let value = oracle.value(&subset)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { context: "reward" });
        }
        let better = match &best {
            None => true,
            Some((set, v)) => {
                value > *v
                    || (value == *v
                        && (subset.len() < set.len()
                            || (subset.len() == set.len() && subset < *set)))
            }
        };
        if better {
            best = Some((subset, value));
        }
    }
    Ok(best.expect("at least one subset"))
}

/// Ratio of the greedy reward to the exhaustive optimum. Both rewards must
/// include the additive constant; the optimum must be positive for the
/// ratio to be meaningful.
pub fn approximation_ratio(greedy_reward: f64, opt_reward: f64) -> Result<f64> {
    if opt_reward <= 0.0 {
        return Err(Error::NonPositiveOptReward(opt_reward));
    }
    Ok(greedy_reward / opt_reward)
}

/// Result of the weak-submodularity probe: one verified percentage per
/// gamma, all measured on the same sample set.
#[derive(Clone, Debug)]
pub struct SubmodTable {
    pub gammas: Vec<f64>,
    pub verified_pct: Vec<f64>,
    pub samples: usize,
}

/// Empirically test the relaxed diminishing-returns inequality
/// `sum_{e in B} (f(A+e) - f(A)) >= min(g*(f(A+B) - f(A)), (f(A+B) - f(A))/g)`
/// on randomly drawn disjoint pairs `(A, B)`.
///
/// Set sizes are uniform on `[1, n/2]` and elements are drawn without
/// replacement, so both sets are always non-empty and disjoint. Every gamma
/// is evaluated against the same samples, which makes the verified
/// percentage exactly non-increasing in gamma.
pub fn weak_submodularity_check<O: SetValue>(
    oracle: &mut O,
    pool: &[ClientId],
    gammas: &[f64],
    samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<SubmodTable> {
    let pool = sorted_pool(pool)?;
    let n = pool.len();
    if n < 2 {
        return Err(Error::InvalidParam(
            "submodularity check needs at least 2 clients".into(),
        ));
    }
    if samples == 0 {
        return Err(Error::InvalidParam("samples must be >= 1".into()));
    }
    for &g in gammas {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::InvalidParam(format!("gamma {g} outside (0, 1]")));
        }
    }
    let mut ev = MemoValue::new(oracle);
    let half = n / 2;
    let mut verified = vec![0usize; gammas.len()];
    for _ in 0..samples {
        let size_a = rng.random_range(1..=half);
        let size_b = rng.random_range(1..=half);
        let mut shuffled = pool.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(rng);
        let mut a: Vec<ClientId> = shuffled[..size_a].to_vec();
        let mut b: Vec<ClientId> = shuffled[size_a..size_a + size_b].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        let mut union = a.clone();
        for &e in &b {
            insert_sorted(&mut union, e);
        }

        let f_a = ev.value(&a)?;
        let base = ev.value(&union)? - f_a;
        let mut lhs = 0.0;
        for &e in &b {
            let mut a_plus = a.clone();
            insert_sorted(&mut a_plus, e);
            lhs += ev.value(&a_plus)? - f_a;
        }
        for (slot, &gamma) in gammas.iter().enumerate() {
            let threshold = (gamma * base).min(base / gamma);
            if lhs >= threshold {
                verified[slot] += 1;
            }
        }
    }
    Ok(SubmodTable {
        gammas: gammas.to_vec(),
        verified_pct: verified
            .iter()
            .map(|&v| 100.0 * v as f64 / samples as f64)
            .collect(),
        samples,
    })
}
