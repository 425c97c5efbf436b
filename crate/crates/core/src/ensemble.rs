//! Mixtures of trained GANs: independent ensembles, class-wise bagging,
//! AdaGAN-style boosting, mixture sampling and cached sample pools.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{GridSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::gan::{train_gan, GanConfig, GanMember, WeightedDataset};
use crate::nn::{Checkpoint, Tensor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Independent,
    Boosted,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Independent => "independent",
            Method::Boosted => "boosted",
        }
    }
}

/// Seed of the member trained at ensemble iteration `t` for class `k`.
pub fn member_seed(master_seed: u64, t: usize, k: usize) -> u64 {
    rng::stream(master_seed, "member", rng::member_index(t, k)).next_u64()
}

#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub member: Arc<GanMember>,
    /// Weight within the component's class; sums to 1 per class.
    pub weight: f64,
    pub class: usize,
    pub iteration: usize,
}

/// `Ĝ = (1/K) Σ_k Σ_t p_t G_{t,k}`.
#[derive(Debug, Clone)]
pub struct EnsembleMixture {
    pub components: Vec<MixtureComponent>,
    pub iterations: usize,
    pub class_count: usize,
    pub method: Method,
    pub master_seed: u64,
}

impl EnsembleMixture {
    pub fn validate(&self) -> Result<()> {
        if self.components.len() != self.iterations * self.class_count {
            return Err(Error::Config(format!(
                "mixture has {} members, expected T·K = {}",
                self.components.len(),
                self.iterations * self.class_count
            )));
        }
        for k in 0..self.class_count {
            let total: f64 = self
                .components
                .iter()
                .filter(|c| c.class == k)
                .map(|c| c.weight)
                .sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("class {k} weights sum to {total}")));
            }
        }
        if self.components.iter().any(|c| c.weight < 0.0) {
            return Err(Error::Config("negative mixture weight".into()));
        }
        Ok(())
    }

    /// Overall sampling probability of each component, `p_t / K`.
    pub fn global_weights(&self) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight / self.class_count as f64)
            .collect()
    }

    /// Equal-weight mixture of already-trained members (`members[k][t]`).
    pub fn from_members(
        members: Vec<Vec<Arc<GanMember>>>,
        method: Method,
        master_seed: u64,
    ) -> Result<Self> {
        let class_count = members.len();
        let iterations = members.first().map_or(0, Vec::len);
        if class_count == 0 || iterations == 0 || members.iter().any(|m| m.len() != iterations) {
            return Err(Error::Config(
                "every class needs the same, non-zero member count".into(),
            ));
        }
        let components = members
            .into_iter()
            .enumerate()
            .flat_map(|(k, ms)| {
                ms.into_iter()
                    .enumerate()
                    .map(move |(t, member)| MixtureComponent {
                        member,
                        weight: 1.0 / iterations as f64,
                        class: k,
                        iteration: t,
                    })
            })
            .collect();
        let mix = Self {
            components,
            iterations,
            class_count,
            method,
            master_seed,
        };
        mix.validate()?;
        Ok(mix)
    }
}

fn check_class_sizes(data: &LabeledDataset, config: &GanConfig) -> Result<()> {
    for (k, &n) in data.class_counts().iter().enumerate() {
        if n < config.batch_size {
            return Err(Error::InsufficientData(format!(
                "class {k} has {n} points, fewer than batch size {}",
                config.batch_size
            )));
        }
    }
    Ok(())
}

/// Trains one member for `(t, k)` on the class-`k` points with the given weights.
pub fn train_member(
    data: &WeightedDataset,
    config: &GanConfig,
    master_seed: u64,
    t: usize,
    k: usize,
) -> Result<GanMember> {
    let cfg = GanConfig {
        seed: member_seed(master_seed, t, k),
        ..config.clone()
    };
    train_gan(data, &cfg)
}

/// `T` members per class, each trained in isolation on uniformly weighted
/// class data; `p_t = 1/T`.
pub fn train_independent(
    data: &LabeledDataset,
    iterations: usize,
    config: &GanConfig,
    master_seed: u64,
) -> Result<EnsembleMixture> {
    if iterations == 0 {
        return Err(Error::Config("ensemble size T must be at least 1".into()));
    }
    check_class_sizes(data, config)?;
    let mut members = Vec::with_capacity(data.class_count);
    for k in 0..data.class_count {
        let weighted = WeightedDataset::uniform(data.class_points(k));
        let class_members = (0..iterations)
            .map(|t| train_member(&weighted, config, master_seed, t, k).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        members.push(class_members);
    }
    EnsembleMixture::from_members(members, Method::Independent, master_seed)
}

/// Mixing coefficients `β_t` used while boosting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSchedule {
    /// `β_t = 1/t`: the running mixture is the uniform average of members.
    Harmonic,
    /// `β_1 = 1`, then a constant.
    Constant(f64),
    /// Explicit `β_1 .. β_T`.
    Explicit(Vec<f64>),
}

impl BetaSchedule {
    /// `β_t` for the 1-based iteration `t`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        let b = match self {
            _ if t == 1 => 1.0,
            BetaSchedule::Harmonic => 1.0 / t as f64,
            BetaSchedule::Constant(b) => *b,
            BetaSchedule::Explicit(v) => *v.get(t - 1).ok_or_else(|| {
                Error::Config(format!("beta schedule has {} entries, need {t}", v.len()))
            })?,
        };
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::Config(format!("beta_{t} = {b} outside (0, 1]")));
        }
        Ok(b)
    }
}

/// Mixture weights of the first `betas.len()` boosted members:
/// `p_t = β_t · Π_{j>t} (1 − β_j)`. Harmonic betas give exactly `1/T`.
pub fn boosted_mixture_weights(betas: &[f64]) -> Vec<f64> {
    let n = betas.len();
    if n > 0
        && betas
            .iter()
            .enumerate()
            .all(|(i, &b)| b == 1.0 / (i + 1) as f64)
    {
        return vec![1.0 / n as f64; n];
    }
    let mut weights = vec![0.0; n];
    let mut tail = 1.0;
    for t in (0..n).rev() {
        weights[t] = betas[t] * tail;
        tail *= 1.0 - betas[t];
    }
    weights
}

/// Divides by the total, returning exact `1/N` when all entries are equal.
fn normalize(values: Vec<f64>) -> Vec<f64> {
    let n = values.len();
    if values.iter().all(|&v| v == values[0]) {
        return vec![1.0 / n as f64; n];
    }
    let total: f64 = values.iter().sum();
    values.into_iter().map(|v| v / total).collect()
}

/// Projected AdaGAN reweighting: `w_i = (1/N)·max(0, λ − c·h_i)` with
/// `c = (1 − β)/β` and `λ` the unique value making the weights sum to one.
///
/// `ratio[i]` estimates `dP_mixture / dP_data` at training point `i`.
pub fn adagan_weights(ratio: &[f64], beta: f64) -> Vec<f64> {
    let n = ratio.len();
    let c = (1.0 - beta) / beta;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ratio[a].total_cmp(&ratio[b]).then(a.cmp(&b)));
    // With the k smallest ratios active: λ = (N + c·Σ h) / k, valid when
    // λ ≤ c·h_{k+1}.
    let mut prefix = 0.0;
    let mut lambda = f64::INFINITY;
    for (k, &i) in order.iter().enumerate() {
        prefix += ratio[i];
        let candidate = (n as f64 + c * prefix) / (k + 1) as f64;
        lambda = candidate;
        if let Some(&next) = order.get(k + 1) {
            if candidate <= c * ratio[next] {
                break;
            }
        }
    }
    normalize(ratio.iter().map(|&h| (lambda - c * h).max(0.0)).collect())
}

/// Estimated `dP_member / dP_data` at each training point from the member's
/// discriminator: the logistic link gives `D/(1−D) = e^s` for the ratio of the
/// weighted data density to the generator density, and the weighted data
/// density is `N·w_i` times the empirical one.
pub fn density_ratio(scores: &Tensor, weights_used: &[f64]) -> Vec<f64> {
    let n = weights_used.len() as f64;
    scores
        .data()
        .iter()
        .zip(weights_used)
        .map(|(&s, &w)| (-s).exp() * n * w)
        .collect()
}

/// Boosting state for one class, persisted between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostState {
    /// Iterations completed.
    pub iteration: usize,
    /// Weights the next member trains on.
    pub weights: Vec<f64>,
    /// Running estimate of `dP_mixture / dP_data`.
    pub ratio: Vec<f64>,
    /// `β_1 ..= β_iteration`.
    pub betas: Vec<f64>,
    /// Weights each completed member was trained on.
    pub history: Vec<Vec<f64>>,
}

impl BoostState {
    pub fn new(n: usize) -> Self {
        Self {
            iteration: 0,
            weights: vec![1.0 / n as f64; n],
            ratio: vec![0.0; n],
            betas: Vec::new(),
            history: Vec::new(),
        }
    }

    /// Folds the newest member's scores into the mixture estimate and
    /// computes the weights for the next member.
    pub fn absorb(
        &mut self,
        scores: &Tensor,
        schedule: &BetaSchedule,
        min_support: usize,
    ) -> Result<()> {
        let t = self.iteration + 1;
        let beta = schedule.beta(t)?;
        let member_ratio = density_ratio(scores, &self.weights);
        if member_ratio.iter().any(|h| !h.is_finite()) {
            return Err(Error::DegenerateWeights {
                iteration: t,
                reason: "non-finite density ratio from discriminator scores".into(),
            });
        }
        for (r, h) in self.ratio.iter_mut().zip(&member_ratio) {
            *r = (1.0 - beta) * *r + beta * h;
        }
        self.history.push(std::mem::take(&mut self.weights));
        self.betas.push(beta);
        self.iteration = t;
        let next_beta = schedule.beta(t + 1).unwrap_or(1.0 / (t + 1) as f64);
        let weights = adagan_weights(&self.ratio, next_beta);
        let support = weights.iter().filter(|&&w| w > 0.0).count();
        if support < min_support {
            return Err(Error::DegenerateWeights {
                iteration: t,
                reason: format!("weights supported on {support} points, batch size {min_support}"),
            });
        }
        self.weights = weights;
        Ok(())
    }
}

pub struct BoostOutcome {
    pub mixture: EnsembleMixture,
    /// `states[k]`; `states[k].history[t]` is what member `t` trained on.
    pub states: Vec<BoostState>,
}

/// Scores training points for the reweighting step.
pub type Scorer<'a> = dyn Fn(&GanMember, &Tensor) -> Result<Tensor> + 'a;

pub fn discriminator_scorer(member: &GanMember, points: &Tensor) -> Result<Tensor> {
    member.discriminator_scores(points)
}

/// AdaGAN-style boosting, per class. Final mixture weights are `1/T`.
pub fn train_boosted(
    data: &LabeledDataset,
    iterations: usize,
    config: &GanConfig,
    schedule: &BetaSchedule,
    master_seed: u64,
) -> Result<BoostOutcome> {
    train_boosted_with(
        data,
        iterations,
        config,
        schedule,
        master_seed,
        &discriminator_scorer,
    )
}

/// [`train_boosted`] with a replaceable scoring function.
pub fn train_boosted_with(
    data: &LabeledDataset,
    iterations: usize,
    config: &GanConfig,
    schedule: &BetaSchedule,
    master_seed: u64,
    scorer: &Scorer<'_>,
) -> Result<BoostOutcome> {
    if iterations == 0 {
        return Err(Error::Config("ensemble size T must be at least 1".into()));
    }
    check_class_sizes(data, config)?;
    let mut members = Vec::with_capacity(data.class_count);
    let mut states = Vec::with_capacity(data.class_count);
    for k in 0..data.class_count {
        let points = data.class_points(k);
        let mut state = BoostState::new(points.rows());
        let mut class_members = Vec::with_capacity(iterations);
        for t in 0..iterations {
            let member = boost_iteration(
                &points,
                &mut state,
                config,
                schedule,
                master_seed,
                k,
                scorer,
                t + 1 < iterations,
            )?;
            class_members.push(Arc::new(member));
        }
        members.push(class_members);
        states.push(state);
    }
    let mut mixture = EnsembleMixture::from_members(members, Method::Boosted, master_seed)?;
    for c in &mut mixture.components {
        c.weight = boosted_mixture_weights(&states[c.class].betas)[c.iteration];
    }
    mixture.validate()?;
    Ok(BoostOutcome { mixture, states })
}

/// Trains the next boosted member of class `k` from `state` and, when
/// `reweight` is set, advances the state with its scores.
#[allow(clippy::too_many_arguments)]
pub fn boost_iteration(
    points: &Tensor,
    state: &mut BoostState,
    config: &GanConfig,
    schedule: &BetaSchedule,
    master_seed: u64,
    k: usize,
    scorer: &Scorer<'_>,
    reweight: bool,
) -> Result<GanMember> {
    let t = state.iteration;
    let weighted = WeightedDataset::new(points.clone(), state.weights.clone())?;
    let member = train_member(&weighted, config, master_seed, t, k)?;
    if reweight {
        let scores = scorer(&member, points)?;
        state.absorb(&scores, schedule, config.batch_size)?;
    } else {
        state.history.push(state.weights.clone());
        state.betas.push(schedule.beta(t + 1)?);
        state.iteration = t + 1;
    }
    Ok(member)
}

/// Largest-remainder split of `n` according to `weights`; ties go to the
/// lower index.
pub fn quotas(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Each sample picks a component independently with probability `p_t/K`.
    Proportional,
    /// Exactly the largest-remainder quota from each component.
    ExactQuota,
}

/// Per-component sample counts for `n_total` draws.
pub fn allocate(
    mix: &EnsembleMixture,
    n_total: usize,
    seed: u64,
    allocation: Allocation,
) -> Result<Vec<usize>> {
    if n_total == 0 {
        return Err(Error::Config("n_total must be positive".into()));
    }
    match allocation {
        Allocation::ExactQuota => {
            if n_total < mix.components.len() {
                return Err(Error::Config(format!(
                    "exact quotas need n_total ≥ {} members",
                    mix.components.len()
                )));
            }
            let per_class = quotas(&vec![1.0; mix.class_count], n_total);
            let mut counts = vec![0; mix.components.len()];
            for (k, &nk) in per_class.iter().enumerate() {
                let idx: Vec<usize> = (0..mix.components.len())
                    .filter(|&i| mix.components[i].class == k)
                    .collect();
                let w: Vec<f64> = idx.iter().map(|&i| mix.components[i].weight).collect();
                for (&i, q) in idx.iter().zip(quotas(&w, nk)) {
                    counts[i] = q;
                }
            }
            Ok(counts)
        }
        Allocation::Proportional => {
            let global = mix.global_weights();
            let pick = rand::distr::weighted::WeightedIndex::new(&global)
                .map_err(|e| Error::Config(e.to_string()))?;
            let mut r = rng::stream(seed, "mixture-allocation", 0);
            let mut counts = vec![0; global.len()];
            for _ in 0..n_total {
                counts[r.sample(&pick)] += 1;
            }
            Ok(counts)
        }
    }
}

/// Draws a labeled synthetic dataset; labels are the components' classes.
/// Rows are grouped by component in mixture order.
pub fn sample_mixture(
    mix: &EnsembleMixture,
    n_total: usize,
    seed: u64,
    allocation: Allocation,
    spec: &GridSpec,
) -> Result<LabeledDataset> {
    let counts = allocate(mix, n_total, seed, allocation)?;
    let mut parts = Vec::with_capacity(counts.len());
    let mut labels = Vec::with_capacity(n_total);
    for (j, (c, &count)) in mix.components.iter().zip(&counts).enumerate() {
        let member_seed = rng::stream(seed, "mixture-sample", j as u64).next_u64();
        parts.push(c.member.generate(count, member_seed)?);
        labels.extend(std::iter::repeat_n(c.class, count));
    }
    Ok(LabeledDataset {
        points: Tensor::vstack(&parts.iter().collect::<Vec<_>>())?,
        labels,
        class_count: mix.class_count,
        spec: *spec,
        seed,
    })
}

/// Cached generator samples of one pooled member.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub member_index: usize,
    pub member_seed: u64,
    pub class: usize,
    pub points: Tensor,
}

impl PoolEntry {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new(self.member_seed, self.member_index as u64);
        ck.scalars.insert("class".into(), self.class as f64);
        ck.arrays.insert("points".into(), self.points.clone());
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let points = ck
            .arrays
            .get("points")
            .cloned()
            .ok_or_else(|| Error::Format(format!("{} holds no points", path.display())))?;
        Ok(Self {
            member_index: ck.step_count as usize,
            member_seed: ck.rng_seed,
            class: ck.scalar("class")? as usize,
            points,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplePool {
    pub entries: Vec<PoolEntry>,
}

impl SamplePool {
    pub fn total_points(&self) -> usize {
        self.entries.iter().map(|e| e.points.rows()).sum()
    }

    pub fn for_class(&self, class: usize) -> SamplePool {
        SamplePool {
            entries: self
                .entries
                .iter()
                .filter(|e| e.class == class)
                .cloned()
                .collect(),
        }
    }
}

/// Seed used to draw the cache of pooled member `index`.
pub fn pool_sample_seed(seed: u64, index: usize) -> u64 {
    rng::stream(seed, "pool-sample", index as u64).next_u64()
}

pub fn pool_entry(
    member: &GanMember,
    index: usize,
    class: usize,
    samples: usize,
    seed: u64,
) -> Result<PoolEntry> {
    Ok(PoolEntry {
        member_index: index,
        member_seed: member.seed,
        class,
        points: member.generate(samples, pool_sample_seed(seed, index))?,
    })
}

/// `samples_per_member` generated points from each member, tagged with the
/// member's index and seed.
pub fn bootstrap_pool(
    members: &[(&GanMember, usize)],
    samples_per_member: usize,
    seed: u64,
) -> Result<SamplePool> {
    let entries = members
        .iter()
        .enumerate()
        .map(|(i, (m, class))| pool_entry(m, i, *class, samples_per_member, seed))
        .collect::<Result<_>>()?;
    Ok(SamplePool { entries })
}

/// On-disk description of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureManifest {
    pub method: Method,
    pub iterations: usize,
    pub class_count: usize,
    pub master_seed: u64,
    pub members: Vec<ManifestMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMember {
    /// Relative to the manifest's directory.
    pub checkpoint: PathBuf,
    pub weight: f64,
    pub class: usize,
    pub iteration: usize,
}

impl MixtureManifest {
    pub fn describe(mix: &EnsembleMixture, checkpoints: Vec<PathBuf>) -> Self {
        Self {
            method: mix.method,
            iterations: mix.iterations,
            class_count: mix.class_count,
            master_seed: mix.master_seed,
            members: mix
                .components
                .iter()
                .zip(checkpoints)
                .map(|(c, checkpoint)| ManifestMember {
                    checkpoint,
                    weight: c.weight,
                    class: c.class,
                    iteration: c.iteration,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Loads every member checkpoint and rebuilds the mixture.
    pub fn load_mixture(&self, manifest_dir: &Path) -> Result<EnsembleMixture> {
        let components = self
            .members
            .iter()
            .map(|m| {
                Ok(MixtureComponent {
                    member: Arc::new(GanMember::load(&manifest_dir.join(&m.checkpoint))?),
                    weight: m.weight,
                    class: m.class,
                    iteration: m.iteration,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mix = EnsembleMixture {
            components,
            iterations: self.iterations,
            class_count: self.class_count,
            method: self.method,
            master_seed: self.master_seed,
        };
        mix.validate()?;
        Ok(mix)
    }
}
