//! Task construction: synthetic federated tasks, non-IID partitioning,
//! public-set splits, and availability schedules.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::dataset::{Dataset, Label, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::rng::RngStream;
use crate::ClientId;

/// One federated problem instance: client datasets, the server-held public
/// set, a global test set, and the client weights of the global objective.
#[derive(Clone, Debug)]
pub struct FederatedTask {
    clients: BTreeMap<ClientId, Dataset>,
    public: Dataset,
    global_test: Dataset,
    weights: BTreeMap<ClientId, f64>,
}

impl FederatedTask {
    /// Build a task with `p_k = m_k / sum(m_j)`. Clients left empty by an
    /// extreme partition get weight 0 and are excluded from availability.
    pub fn from_sizes(
        clients: BTreeMap<ClientId, Dataset>,
        public: Dataset,
        global_test: Dataset,
    ) -> Result<Self> {
        let total: usize = clients.values().map(Dataset::len).sum();
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        let weights = clients
            .iter()
            .map(|(&id, data)| (id, data.len() as f64 / total as f64))
            .collect();
        FederatedTask::new(clients, public, global_test, weights)
    }

    /// Build a task with explicit client weights (must sum to 1).
    pub fn new(
        clients: BTreeMap<ClientId, Dataset>,
        public: Dataset,
        global_test: Dataset,
        weight_overrides: BTreeMap<ClientId, f64>,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::EmptySet);
        }
        if !clients.keys().eq(weight_overrides.keys()) {
            return Err(Error::KeyMismatch);
        }
        if public.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (&id, &p) in &weight_overrides {
            if p < 0.0 || !p.is_finite() {
                return Err(Error::NegativeCoefficient {
                    client: id,
                    value: p,
                });
            }
            if p > 0.0 && clients[&id].is_empty() {
                return Err(Error::InvalidParam(format!(
                    "client {id} has positive weight but no data"
                )));
            }
        }
        let sum: f64 = weight_overrides.values().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::CoefficientSum { sum });
        }
        Ok(FederatedTask {
            clients,
            public,
            global_test,
            weights: weight_overrides,
        })
    }

    pub fn clients(&self) -> &BTreeMap<ClientId, Dataset> {
        &self.clients
    }

    pub fn client_data(&self, id: ClientId) -> Option<&Dataset> {
        self.clients.get(&id)
    }

    pub fn public(&self) -> &Dataset {
        &self.public
    }

    pub fn global_test(&self) -> &Dataset {
        &self.global_test
    }

    pub fn weights(&self) -> &BTreeMap<ClientId, f64> {
        &self.weights
    }

    pub fn weight(&self, id: ClientId) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }

    /// Clients eligible for availability: positive weight and data to train
    /// on.
    pub fn active_clients(&self) -> Vec<ClientId> {
        self.weights
            .iter()
            .filter(|(id, &p)| p > 0.0 && !self.clients[id].is_empty())
            .map(|(&id, _)| id)
            .collect()
    }
}

/// Piecewise-constant availability: the available set changes only at
/// multiples of `period` (slots are 0-based round indices).
#[derive(Clone, Debug)]
pub struct AvailabilitySchedule {
    blocks: Vec<Vec<ClientId>>,
    period: usize,
}

impl AvailabilitySchedule {
    /// Custom schedules for stress tests; each block must be non-empty,
    /// sorted, and free of duplicates.
    pub fn from_blocks(blocks: Vec<Vec<ClientId>>, period: usize) -> Result<Self> {
        if blocks.is_empty() || period == 0 {
            return Err(Error::InvalidParam(
                "schedule needs at least one block and period >= 1".into(),
            ));
        }
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::EmptySet);
            }
            if block.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParam(
                    "schedule blocks must be sorted and duplicate-free".into(),
                ));
            }
        }
        Ok(AvailabilitySchedule { blocks, period })
    }

    pub fn available_at(&self, slot: usize) -> &[ClientId] {
        let block = (slot / self.period).min(self.blocks.len() - 1);
        &self.blocks[block]
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn blocks(&self) -> &[Vec<ClientId>] {
        &self.blocks
    }
}

/// Sample an availability schedule covering `rounds` slots: every
/// `resample_period` slots, draw `min(n, pool)` distinct clients without
/// replacement.
pub fn make_availability(
    pool: &[ClientId],
    n: usize,
    resample_period: usize,
    rounds: usize,
    stream: &RngStream,
) -> Result<AvailabilitySchedule> {
    if pool.is_empty() {
        return Err(Error::EmptySet);
    }
    if n == 0 || resample_period == 0 || rounds == 0 {
        return Err(Error::InvalidParam(
            "availability needs n >= 1, period >= 1, rounds >= 1".into(),
        ));
    }
    let take = n.min(pool.len());
    let block_count = rounds.div_ceil(resample_period);
    let mut blocks = Vec::with_capacity(block_count);
    for b in 0..block_count {
        let mut rng = stream.child("avail").child_idx(b as u64).rng();
        let mut ids = pool.to_vec();
        let (chosen, _) = ids.partial_shuffle(&mut rng, take);
        let mut block = chosen.to_vec();
        block.sort_unstable();
        blocks.push(block);
    }
    AvailabilitySchedule::from_blocks(blocks, resample_period)
}

/// Knobs for the synthetic task generator.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticTaskParams {
    pub clients: usize,
    pub per_client: usize,
    /// Scale of the per-client optimum offsets; 0 makes all clients IID.
    pub heterogeneity: f64,
    pub public_size: usize,
    pub test_size: usize,
    pub feature_scale: f64,
    /// Regression: label noise standard deviation. Classification: softmax
    /// temperature for label sampling (0 gives noiseless argmax labels).
    pub noise: f64,
}

impl SyntheticTaskParams {
    fn validate(&self) -> Result<()> {
        if self.clients == 0
            || self.per_client == 0
            || self.public_size == 0
            || self.test_size == 0
        {
            return Err(Error::InvalidParam(
                "synthetic task counts must be >= 1".into(),
            ));
        }
        if self.heterogeneity < 0.0 || self.noise < 0.0 || self.feature_scale <= 0.0 {
            return Err(Error::InvalidParam(
                "synthetic task scales must be non-negative (feature_scale > 0)".into(),
            ));
        }
        Ok(())
    }
}

fn draw_example(
    spec: &ModelSpec,
    teacher: &[f64],
    params: &SyntheticTaskParams,
    rng: &mut ChaCha12Rng,
) -> LabeledExample {
    let d = spec.input_dim;
    let features: Vec<f64> = (0..d)
        .map(|_| params.feature_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let label = match spec.kind {
        ModelKind::LinearRegression => {
            let mean: f64 = teacher.iter().zip(&features).map(|(w, x)| w * x).sum();
            Label::Real(mean + params.noise * rng.sample::<f64, _>(StandardNormal))
        }
        ModelKind::LogisticRegression | ModelKind::MlpOneHidden => {
            let logits: Vec<f64> = (0..spec.classes)
                .map(|c| {
                    teacher[c * d..(c + 1) * d]
                        .iter()
                        .zip(&features)
                        .map(|(w, x)| w * x)
                        .sum()
                })
                .collect();
            Label::Class(sample_class(&logits, params.noise, rng))
        }
    };
    LabeledExample { features, label }
}

/// Draw a class from softmax(logits / temperature); temperature 0 collapses
/// to the argmax.
fn sample_class(logits: &[f64], temperature: f64, rng: &mut ChaCha12Rng) -> usize {
    if temperature <= 0.0 {
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        return best;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..1.0) * total;
    for (c, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return c;
        }
    }
    logits.len() - 1
}

/// Teacher parameter vector per client, drawn as a shared optimum plus a
/// heterogeneity-scaled offset.
fn draw_teachers(
    teacher_dim: usize,
    params: &SyntheticTaskParams,
    stream: &RngStream,
) -> Vec<Vec<f64>> {
    let mut rng = stream.child("teacher").rng();
    let center: Vec<f64> = (0..teacher_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    (0..params.clients)
        .map(|_| {
            center
                .iter()
                .map(|w| w + params.heterogeneity * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Generate a synthetic federated task matching the model spec: per-client
/// data comes from per-client linear teachers, while the public and global
/// test sets are drawn from the uniform mixture over clients.
pub fn make_synthetic_task(
    spec: &ModelSpec,
    params: &SyntheticTaskParams,
    stream: &RngStream,
) -> Result<FederatedTask> {
    spec.validate()?;
    params.validate()?;
    let teacher_dim = match spec.kind {
        ModelKind::LinearRegression => spec.input_dim,
        _ => spec.classes * spec.input_dim,
    };
    let teachers = draw_teachers(teacher_dim, params, stream);
    let mut clients = BTreeMap::new();
    for (k, teacher) in teachers.iter().enumerate() {
        let mut rng = stream.child("client").child_idx(k as u64).rng();
        let examples = (0..params.per_client)
            .map(|_| draw_example(spec, teacher, params, &mut rng))
            .collect();
        clients.insert(ClientId(k as u32), Dataset::new(examples));
    }
    let mixture = |label: &'static str, count: usize| -> Dataset {
        let mut rng = stream.child(label).rng();
        let examples = (0..count)
            .map(|_| {
                let k = rng.random_range(0..params.clients);
                draw_example(spec, &teachers[k], params, &mut rng)
            })
            .collect();
        Dataset::new(examples)
    };
    let public = mixture("public", params.public_size);
    let global_test = mixture("test", params.test_size);
    FederatedTask::from_sizes(clients, public, global_test)
}

/// One Dirichlet draw over `n` cells via normalized Gamma samples.
fn dirichlet_proportions(alpha: f64, n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        // All draws underflowed (tiny alpha): put the mass on one cell.
        let winner = rng.random_range(0..n);
        draws.iter_mut().for_each(|v| *v = 0.0);
        draws[winner] = 1.0;
        return draws;
    }
    draws.iter_mut().for_each(|v| *v /= total);
    draws
}

/// Integer counts from proportions by largest-remainder rounding; preserves
/// the total exactly. Remainder ties resolve to the lower index.
fn apportion(total: usize, proportions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = proportions
        .iter()
        .map(|p| (p * total as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = proportions[a] * total as f64 - counts[a] as f64;
        let fb = proportions[b] * total as f64 - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..total.saturating_sub(assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Split a labeled source across `n` clients with per-class proportions
/// drawn from Dir(alpha): smaller alpha concentrates each class on fewer
/// clients. The outputs are disjoint and their union is the source.
pub fn dirichlet_partition(
    source: &Dataset,
    n: usize,
    alpha: f64,
    stream: &RngStream,
) -> Result<BTreeMap<ClientId, Dataset>> {
    if source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n == 0 {
        return Err(Error::InvalidParam("need at least one client".into()));
    }
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParam("alpha must be > 0".into()));
    }
    let classes = source.class_count();
    if classes == 0 {
        return Err(Error::LabelKind("dirichlet partition needs class labels"));
    }
    let mut partitions: BTreeMap<ClientId, Dataset> = (0..n)
        .map(|k| (ClientId(k as u32), Dataset::default()))
        .collect();
    for class in 0..classes {
        let members: Vec<&LabeledExample> = source
            .examples()
            .iter()
            .filter(|e| e.label == Label::Class(class))
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = stream.child("dirichlet").child_idx(class as u64).rng();
        let proportions = dirichlet_proportions(alpha, n, &mut rng);
        let counts = apportion(members.len(), &proportions);
        let mut cursor = 0usize;
        for (k, &count) in counts.iter().enumerate() {
            let part = partitions.get_mut(&ClientId(k as u32)).expect("client");
            for example in &members[cursor..cursor + count] {
                part.push((*example).clone());
            }
            cursor += count;
        }
    }
    Ok(partitions)
}

/// How much data the public split takes.
#[derive(Clone, Copy, Debug)]
pub enum PublicAmount {
    Fraction(f64),
    Size(usize),
}

impl PublicAmount {
    fn resolve(&self, available: usize) -> Result<usize> {
        let size = match *self {
            PublicAmount::Fraction(f) => {
                if !(0.0..1.0).contains(&f) || f <= 0.0 {
                    return Err(Error::InvalidParam("public fraction must be in (0,1)".into()));
                }
                (f * available as f64).round() as usize
            }
            PublicAmount::Size(s) => s,
        };
        if size > available {
            return Err(Error::InvalidParam(format!(
                "public split of {size} exceeds the {available} available examples"
            )));
        }
        Ok(size)
    }
}

/// Hold out a public set from a global source; returns `(public,
/// remainder)`. Selection is a seeded draw without replacement; both halves
/// keep source order.
pub fn split_public_global(
    source: &Dataset,
    amount: PublicAmount,
    stream: &RngStream,
) -> Result<(Dataset, Dataset)> {
    if source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let size = amount.resolve(source.len())?;
    let mut rng = stream.child("public_split").rng();
    let mut indices: Vec<usize> = (0..source.len()).collect();
    let (chosen, _) = indices.partial_shuffle(&mut rng, size);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    let mut take = chosen.iter().copied().peekable();
    let mut public = Dataset::default();
    let mut remainder = Dataset::default();
    for (i, example) in source.examples().iter().enumerate() {
        if take.peek() == Some(&i) {
            take.next();
            public.push(example.clone());
        } else {
            remainder.push(example.clone());
        }
    }
    Ok((public, remainder))
}

/// Slice a fraction of every client's data into a shared public set
/// (concatenated in ascending client order); returns the public set and the
/// reduced client map.
pub fn split_public_per_client(
    clients: &BTreeMap<ClientId, Dataset>,
    fraction: f64,
    stream: &RngStream,
) -> Result<(Dataset, BTreeMap<ClientId, Dataset>)> {
    if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(Error::InvalidParam("public fraction must be in (0,1)".into()));
    }
    let mut public = Dataset::default();
    let mut remainder = BTreeMap::new();
    for (&id, data) in clients {
        let slice_stream = stream.child("public_slice").child_idx(id.0 as u64);
        let take = (fraction * data.len() as f64).round() as usize;
        let (part, rest) = split_public_global(data, PublicAmount::Size(take.min(data.len())), &slice_stream)?;
        public.extend(part);
        remainder.insert(id, rest);
    }
    if public.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((public, remainder))
}
