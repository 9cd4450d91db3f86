//! Client selection over the filtered-in pool: random sampling (weighted
//! with replacement or uniform without), power-of-choice, and
//! gradient-diversity selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::vector::ParamVector;
use crate::ClientId;

/// Random-sampling flavor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RsVariant {
    /// K i.i.d. draws proportional to the client weights; duplicates
    /// possible, aggregation averages over the multiset.
    WeightedWithReplacement,
    /// min(K, pool) distinct clients, uniformly.
    UniformWithoutReplacement,
}

fn renormalized_weights(
    pool: &[ClientId],
    weights: &BTreeMap<ClientId, f64>,
) -> Result<Vec<f64>> {
    let raw: Vec<f64> = pool
        .iter()
        .map(|id| weights.get(id).copied().unwrap_or(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::InvalidParam(
            "pool weights must have a positive finite sum".into(),
        ));
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// One weighted draw from the cumulative distribution over `pool`.
fn weighted_draw(probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Random-sampling selection. The returned multiset is sorted by client id.
pub fn select_rs(
    pool: &[ClientId],
    weights: &BTreeMap<ClientId, f64>,
    k: usize,
    variant: RsVariant,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<ClientId>> {
    if pool.is_empty() {
        return Err(Error::EmptySet);
    }
    if k == 0 {
        return Err(Error::InvalidParam("selection size must be >= 1".into()));
    }
    let mut chosen = match variant {
        RsVariant::WeightedWithReplacement => {
            let probs = renormalized_weights(pool, weights)?;
            (0..k).map(|_| pool[weighted_draw(&probs, rng)]).collect()
        }
        RsVariant::UniformWithoutReplacement => {
            let mut ids = pool.to_vec();
            ids.shuffle(rng);
            ids.truncate(k.min(pool.len()));
            ids
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Weighted sampling without replacement: successive draws with the chosen
/// client removed and the remainder renormalized.
fn weighted_sample_without_replacement(
    pool: &[ClientId],
    weights: &BTreeMap<ClientId, f64>,
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<ClientId>> {
    let mut remaining: Vec<ClientId> = pool.to_vec();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count.min(pool.len()) {
        let probs = renormalized_weights(&remaining, weights)?;
        let idx = weighted_draw(&probs, rng);
        chosen.push(remaining.remove(idx));
    }
    Ok(chosen)
}

/// Power-of-choice: sample a biased candidate set, then keep the K
/// candidates with the highest local loss at the broadcast model. Loss ties
/// resolve to the lower client id.
pub fn select_poc(
    pool: &[ClientId],
    weights: &BTreeMap<ClientId, f64>,
    k: usize,
    candidate_d: usize,
    losses: &BTreeMap<ClientId, f64>,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<ClientId>> {
    if pool.is_empty() {
        return Err(Error::EmptySet);
    }
    if k == 0 || candidate_d < k {
        return Err(Error::InvalidParam(
            "power-of-choice needs candidate_d >= k >= 1".into(),
        ));
    }
    let d = candidate_d.min(pool.len());
    let mut candidates = weighted_sample_without_replacement(pool, weights, d, rng)?;
    for id in &candidates {
        if !losses.contains_key(id) {
            return Err(Error::MissingLoss(*id));
        }
    }
    candidates.sort_by(|a, b| {
        losses[b]
            .partial_cmp(&losses[a])
            .expect("finite losses")
            .then(a.cmp(b))
    });
    let mut selected: Vec<ClientId> = candidates.into_iter().take(k).collect();
    selected.sort_unstable();
    Ok(selected)
}

/// Outcome of gradient-diversity selection.
#[derive(Clone, Debug)]
pub struct DivflSelection {
    /// Chosen clients, ascending.
    pub selected: Vec<ClientId>,
    /// Final facility-location objective `sum_i min_{j in S} ||g_i - g_j||`.
    pub objective: f64,
    /// Objective evaluations performed: exactly `|pool| * K`, one scan per
    /// pool member per greedy step.
    pub scans: u64,
    /// Objective value after each greedy step.
    pub objective_path: Vec<f64>,
}

/// Greedy facility-location selection over client gradients: each of the K
/// steps adds the client that most reduces the summed distance from every
/// pool gradient to its nearest selected gradient. Ties resolve to the
/// lower client id. Selection is rng-free.
pub fn select_divfl(
    pool: &[ClientId],
    k: usize,
    gradients: &BTreeMap<ClientId, ParamVector>,
) -> Result<DivflSelection> {
    if pool.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = pool.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParam(
            "diversity selection needs 1 <= k <= pool size".into(),
        ));
    }
    let vectors: Vec<&ParamVector> = pool
        .iter()
        .map(|id| gradients.get(id).ok_or(Error::MissingGradient(*id)))
        .collect::<Result<_>>()?;
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = vectors[i].distance_sq(vectors[j])?.sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let mut min_dist = vec![f64::INFINITY; n];
    let mut selected_idx: Vec<usize> = Vec::with_capacity(k);
    let mut scans = 0u64;
    let mut objective_path = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            scans += 1;
            if selected_idx.contains(&j) {
                continue;
            }
            let objective: f64 = (0..n).map(|i| min_dist[i].min(dist[i][j])).sum();
            let better = match best {
                None => true,
                Some((bj, bv)) => objective < bv || (objective == bv && pool[j] < pool[bj]),
            };
            if better {
                best = Some((j, objective));
            }
        }
        let (j_star, objective) = best.expect("at least one unselected candidate");
        for i in 0..n {
            min_dist[i] = min_dist[i].min(dist[i][j_star]);
        }
        selected_idx.push(j_star);
        objective_path.push(objective);
    }
    let objective = *objective_path.last().expect("k >= 1");
    let mut selected: Vec<ClientId> = selected_idx.iter().map(|&j| pool[j]).collect();
    selected.sort_unstable();
    Ok(DivflSelection {
        selected,
        objective,
        scans,
        objective_path,
    })
}
