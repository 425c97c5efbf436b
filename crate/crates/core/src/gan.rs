//! One GAN member on 2D points: generator `[dense → BN → ReLU] × 4 → dense`,
//! maxout discriminator `[dense → maxout] × 3 → dense` emitting raw scores,
//! trained by alternating Adam updates on the softplus losses.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    discriminator_score_grads, gan_losses, generator_score_grad, AdamConfig, AdamState,
    BatchNormLayer, Checkpoint, DenseLayer, Layer, MaxoutLayer, MlpModel, Mode, ReluLayer, Tensor,
};
use crate::rng;

/// Rows evaluated at once by `generate` / `discriminator_scores`.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub gen_widths: Vec<usize>,
    pub disc_widths: Vec<usize>,
    pub maxout_pool: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    pub optimizer: AdamConfig,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            gen_widths: vec![400; 4],
            disc_widths: vec![200; 3],
            maxout_pool: 5,
            epochs: 400,
            batch_size: 100,
            d_steps_per_g_step: 1,
            optimizer: AdamConfig::default(),
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            seed: 0,
        }
    }
}

impl GanConfig {
    /// Full schedule: 400 epochs.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Reduced schedule for fast runs: 40 epochs.
    pub fn ci() -> Self {
        Self {
            epochs: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self
            .gen_widths
            .iter()
            .chain(&self.disc_widths)
            .any(|&w| w == 0)
        {
            return bad("layer widths must be positive".into());
        }
        if self.maxout_pool == 0 {
            return bad("maxout_pool must be positive".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.d_steps_per_g_step == 0 {
            return bad("epochs, batch_size and d_steps_per_g_step must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) || self.bn_epsilon <= 0.0 {
            return bad("bn_momentum must be in (0,1) and bn_epsilon positive".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.epsilon > 0.0)
        {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        Ok(())
    }
}

pub fn build_generator(config: &GanConfig) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "gan-init", 0);
    let mut layers = Vec::new();
    let mut width = config.latent_dim;
    for &w in &config.gen_widths {
        layers.push(Layer::Dense(DenseLayer::glorot(width, w, &mut rng)));
        layers.push(Layer::BatchNorm(BatchNormLayer::new(
            w,
            config.bn_epsilon,
            config.bn_momentum,
        )));
        layers.push(Layer::Relu(ReluLayer::default()));
        width = w;
    }
    layers.push(Layer::Dense(DenseLayer::glorot(width, 2, &mut rng)));
    MlpModel::new(config.latent_dim, layers)
}

pub fn build_discriminator(config: &GanConfig) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "gan-init", 1);
    let mut layers = Vec::new();
    let mut width = 2;
    for &w in &config.disc_widths {
        let pre = w * config.maxout_pool;
        layers.push(Layer::Dense(DenseLayer::glorot(width, pre, &mut rng)));
        layers.push(Layer::Maxout(MaxoutLayer::new(config.maxout_pool)));
        width = w;
    }
    layers.push(Layer::Dense(DenseLayer::glorot(width, 1, &mut rng)));
    MlpModel::new(2, layers)
}

/// Points with a sampling distribution over them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    pub points: Tensor,
    pub weights: Vec<f64>,
}

impl WeightedDataset {
    pub fn uniform(points: Tensor) -> Self {
        let n = points.rows();
        Self {
            points,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes `weights` to sum to one.
    pub fn new(points: Tensor, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != points.rows() || points.cols() != 2 {
            return Err(Error::shape(
                "WeightedDataset",
                &[points.rows(), 2],
                &[weights.len()],
            ));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("weights sum to zero".into()));
        }
        Ok(Self {
            points,
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Draws row indices i.i.d. according to the dataset weights.
pub struct WeightedSampler {
    index: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(data: &WeightedDataset) -> Result<Self> {
        let index = WeightedIndex::new(&data.weights)
            .map_err(|e| Error::Config(format!("cannot sample from weights: {e}")))?;
        Ok(Self { index })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    pub fn draw_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.index.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub generator: f64,
    pub discriminator: f64,
}

#[derive(Debug, Clone)]
pub struct GanMember {
    pub generator: MlpModel,
    pub discriminator: MlpModel,
    pub gen_optimizer: AdamState,
    pub disc_optimizer: AdamState,
    pub config: GanConfig,
    pub loss_log: Vec<EpochLoss>,
    pub seed: u64,
}

fn latent_batch<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Tensor::from_vec(&[rows, dim], data).expect("extents match")
}

/// Epoch-at-a-time training driver; [`train_gan`] runs it to completion.
pub struct GanTrainer<'a> {
    data: &'a WeightedDataset,
    sampler: WeightedSampler,
    member: GanMember,
    rng: rng::Rng,
    epoch: usize,
}

impl<'a> GanTrainer<'a> {
    pub fn new(data: &'a WeightedDataset, config: &GanConfig) -> Result<Self> {
        config.validate()?;
        if data.len() < config.batch_size {
            return Err(Error::InsufficientData(format!(
                "{} training points, batch size {}",
                data.len(),
                config.batch_size
            )));
        }
        data.points.ensure_finite("training points")?;
        let mut generator = build_generator(config)?;
        let mut discriminator = build_discriminator(config)?;
        let gen_optimizer = AdamState::for_params(config.optimizer, &generator.params_mut());
        let disc_optimizer = AdamState::for_params(config.optimizer, &discriminator.params_mut());
        Ok(Self {
            data,
            sampler: WeightedSampler::new(data)?,
            member: GanMember {
                generator,
                discriminator,
                gen_optimizer,
                disc_optimizer,
                config: config.clone(),
                loss_log: Vec::with_capacity(config.epochs),
                seed: config.seed,
            },
            rng: rng::stream(config.seed, "gan-train", 0),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.member.config.epochs
    }

    pub fn member(&self) -> &GanMember {
        &self.member
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len() / self.member.config.batch_size
    }

    /// One epoch of `N / batch_size` minibatches.
    pub fn run_epoch(&mut self) -> Result<EpochLoss> {
        let steps = self.steps_per_epoch();
        let mut sum = EpochLoss {
            generator: 0.0,
            discriminator: 0.0,
        };
        for step in 0..steps {
            let l = self.train_step().map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!(
                    "{what}; epoch {}, step {step}, seed {}, generator opt step {}, \
                     last epoch losses {:?}",
                    self.epoch,
                    self.member.seed,
                    self.member.gen_optimizer.step_count,
                    self.member.loss_log.last()
                )),
                other => other,
            })?;
            sum.generator += l.generator;
            sum.discriminator += l.discriminator;
        }
        let mean = EpochLoss {
            generator: sum.generator / steps as f64,
            discriminator: sum.discriminator / steps as f64,
        };
        self.member.loss_log.push(mean);
        self.epoch += 1;
        Ok(mean)
    }

    fn train_step(&mut self) -> Result<EpochLoss> {
        let b = self.member.config.batch_size;
        let latent = self.member.config.latent_dim;
        let m = &mut self.member;
        m.generator.set_mode(Mode::Training);
        let mut fake = Tensor::zeros(&[0, 2]);
        let mut losses = None;
        for _ in 0..m.config.d_steps_per_g_step {
            let idx = self.sampler.draw_batch(b, &mut self.rng);
            let real = self.data.points.select_rows(&idx);
            let z = latent_batch(b, latent, &mut self.rng);
            fake = m.generator.forward(&z)?;
            fake.ensure_finite("generator output")?;
            let scores = m.discriminator.forward(&Tensor::vstack(&[&real, &fake])?)?;
            let (s_real, s_fake) = (scores.slice_rows(0, b), scores.slice_rows(b, 2 * b));
            let l = gan_losses(&s_real, &s_fake)?;
            if !(l.generator.is_finite() && l.discriminator.is_finite()) {
                return Err(Error::NonFinite(format!("losses {l:?}")));
            }
            let (g_real, g_fake) = discriminator_score_grads(&s_real, &s_fake)?;
            m.discriminator
                .backward(&Tensor::vstack(&[&g_real, &g_fake])?)?;
            m.disc_optimizer.step(&mut m.discriminator.params_mut())?;
            losses = Some(l);
        }
        // Generator update on the last fake batch, scored by the updated D.
        let s_fake = m.discriminator.forward(&fake)?;
        let grad_fake = m
            .discriminator
            .backward_input(&generator_score_grad(&s_fake)?)?;
        m.generator.backward(&grad_fake)?;
        m.gen_optimizer.step(&mut m.generator.params_mut())?;
        let l = losses.expect("at least one discriminator step");
        Ok(EpochLoss {
            generator: l.generator,
            discriminator: l.discriminator,
        })
    }

    pub fn finish(mut self) -> GanMember {
        self.member.generator.set_mode(Mode::Inference);
        self.member
    }
}

/// Trains one member on `data` for `config.epochs` epochs.
pub fn train_gan(data: &WeightedDataset, config: &GanConfig) -> Result<GanMember> {
    let mut trainer = GanTrainer::new(data, config)?;
    while !trainer.is_done() {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

impl GanMember {
    /// Untrained member with freshly initialized networks.
    pub fn untrained(config: &GanConfig) -> Result<Self> {
        let mut generator = build_generator(config)?;
        let mut discriminator = build_discriminator(config)?;
        generator.set_mode(Mode::Inference);
        let gen_optimizer = AdamState::for_params(config.optimizer, &generator.params_mut());
        let disc_optimizer = AdamState::for_params(config.optimizer, &discriminator.params_mut());
        Ok(Self {
            generator,
            discriminator,
            gen_optimizer,
            disc_optimizer,
            config: config.clone(),
            loss_log: Vec::new(),
            seed: config.seed,
        })
    }

    /// `n` samples from `z ~ N(0, I)` pushed through the generator with
    /// batch normalization in inference mode.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Tensor> {
        let mut rng = rng::stream(seed, "latent", 0);
        let z = latent_batch(n, self.config.latent_dim, &mut rng);
        chunked_predict(&self.generator, &z)
    }

    pub fn discriminator_scores(&self, points: &Tensor) -> Result<Tensor> {
        chunked_predict(&self.discriminator, points)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new(self.seed, self.gen_optimizer.step_count);
        ck.insert_model("generator", &self.generator);
        ck.insert_model("discriminator", &self.discriminator);
        ck.insert_adam("generator", &self.gen_optimizer);
        ck.insert_adam("discriminator", &self.disc_optimizer);
        ck.save(path)?;
        let meta = MemberMeta {
            config: self.config.clone(),
            seed: self.seed,
            loss_log: self.loss_log.clone(),
        };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(crate::data::meta_path(path), json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: MemberMeta =
            serde_json::from_str(&fs::read_to_string(crate::data::meta_path(path))?)
                .map_err(|e| Error::Format(e.to_string()))?;
        let ck = Checkpoint::load(path)?;
        let mut member = GanMember::untrained(&meta.config)?;
        ck.restore_model("generator", &mut member.generator)?;
        ck.restore_model("discriminator", &mut member.discriminator)?;
        ck.restore_adam("generator", &mut member.gen_optimizer)?;
        ck.restore_adam("discriminator", &mut member.disc_optimizer)?;
        member.loss_log = meta.loss_log;
        member.seed = ck.rng_seed;
        Ok(member)
    }
}

/// Metadata sidecar stored next to a member checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberMeta {
    pub config: GanConfig,
    pub seed: u64,
    pub loss_log: Vec<EpochLoss>,
}

fn chunked_predict(model: &MlpModel, input: &Tensor) -> Result<Tensor> {
    let n = input.rows();
    if n <= EVAL_CHUNK {
        return model.predict(input);
    }
    let mut parts = Vec::with_capacity(n.div_ceil(EVAL_CHUNK));
    for start in (0..n).step_by(EVAL_CHUNK) {
        parts.push(model.predict(&input.slice_rows(start, (start + EVAL_CHUNK).min(n)))?);
    }
    Tensor::vstack(&parts.iter().collect::<Vec<_>>())
}
