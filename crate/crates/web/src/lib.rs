//! Browser demo: train small GANs on the 2D grid one epoch at a time and
//! watch mode coverage grow as members join an equal-weight mixture.
//!
//! [`Session`] holds the logic and runs natively; [`Demo`] wraps it for
//! JavaScript. Point arrays cross the boundary flat, `[x0, y0, x1, y1, …]`.

use std::sync::Arc;

use ensgan_core::data::{sample_real, GridSpec, LabelScheme};
use ensgan_core::ensemble::{
    member_seed, sample_mixture, Allocation, EnsembleMixture, Method, MixtureComponent,
};
use ensgan_core::gan::{GanConfig, GanMember, GanTrainer, WeightedDataset};
use ensgan_core::metrics::mode_report;
use ensgan_core::nn::Tensor;
use ensgan_core::Result;
use wasm_bindgen::prelude::*;

pub struct Session {
    spec: GridSpec,
    seed: u64,
    config: GanConfig,
    // Leaked once per session so the trainer can borrow it for 'static.
    data: &'static WeightedDataset,
    trainer: Option<GanTrainer<'static>>,
    members: Vec<Arc<GanMember>>,
    losses: [f64; 2],
}

impl Session {
    pub fn new(seed: u64, points: usize, width: usize, epochs: usize) -> Result<Self> {
        let spec = GridSpec::default();
        let config = GanConfig {
            gen_widths: vec![width; 3],
            disc_widths: vec![width.div_ceil(2); 2],
            epochs,
            batch_size: 100.min(points),
            ..GanConfig::ci()
        };
        config.validate()?;
        let data = Box::leak(Box::new(WeightedDataset::uniform(sample_real(
            &spec, points, seed,
        ))));
        Ok(Self {
            spec,
            seed,
            config,
            data,
            trainer: None,
            members: Vec::new(),
            losses: [f64::NAN; 2],
        })
    }

    pub fn real_points(&self) -> &Tensor {
        &self.data.points
    }

    /// Runs one epoch of the member in training, starting one if needed.
    /// Returns true when that member finished and joined the mixture.
    pub fn step(&mut self) -> Result<bool> {
        if self.trainer.is_none() {
            let config = GanConfig {
                seed: member_seed(self.seed, self.members.len(), 0),
                ..self.config.clone()
            };
            self.trainer = Some(GanTrainer::new(self.data, &config)?);
        }
        let trainer = self.trainer.as_mut().expect("just set");
        let l = trainer.run_epoch()?;
        self.losses = [l.generator, l.discriminator];
        if trainer.is_done() {
            let member = self.trainer.take().expect("present").finish();
            self.members.push(Arc::new(member));
            return Ok(true);
        }
        Ok(false)
    }

    pub fn epoch(&self) -> usize {
        self.trainer.as_ref().map_or(0, GanTrainer::epoch)
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn losses(&self) -> [f64; 2] {
        self.losses
    }

    /// Samples of the member in training, or of the newest finished one.
    pub fn preview(&self, n: usize, seed: u64) -> Result<Option<Tensor>> {
        match (&self.trainer, self.members.last()) {
            (Some(t), _) => t.member().generate(n, seed).map(Some),
            (None, Some(m)) => m.generate(n, seed).map(Some),
            (None, None) => Ok(None),
        }
    }

    /// `n` points from the equal-weight mixture of the first `t` members.
    pub fn mixture(&self, t: usize, n: usize, seed: u64) -> Result<Tensor> {
        if self.members.is_empty() {
            return Err(ensgan_core::Error::Config("no finished members yet".into()));
        }
        let t = t.clamp(1, self.members.len());
        let components = self.members[..t]
            .iter()
            .enumerate()
            .map(|(i, m)| MixtureComponent {
                member: m.clone(),
                weight: 1.0 / t as f64,
                class: 0,
                iteration: i,
            })
            .collect();
        let mix = EnsembleMixture {
            components,
            iterations: t,
            class_count: LabelScheme::Single.class_count(),
            method: Method::Independent,
            master_seed: self.seed,
        };
        Ok(sample_mixture(&mix, n, seed, Allocation::ExactQuota, &self.spec)?.points)
    }
}

/// `[modes recovered, high-quality fraction]` for flat points.
pub fn stats(xy: &[f64]) -> Result<[f64; 2]> {
    let pts = Tensor::from_vec(&[xy.len() / 2, 2], xy[..xy.len() / 2 * 2].to_vec())?;
    let r = mode_report(&pts, &GridSpec::default());
    Ok([r.modes_recovered as f64, r.hq_fraction])
}

fn js(e: ensgan_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u32,
        points: usize,
        width: usize,
        epochs: usize,
    ) -> std::result::Result<Demo, JsError> {
        Session::new(seed.into(), points, width, epochs)
            .map(Demo)
            .map_err(js)
    }

    pub fn real_points(&self) -> Vec<f64> {
        flat(self.0.real_points())
    }

    pub fn step(&mut self) -> std::result::Result<bool, JsError> {
        self.0.step().map_err(js)
    }

    pub fn epoch(&self) -> usize {
        self.0.epoch()
    }

    pub fn member_count(&self) -> usize {
        self.0.member_count()
    }

    /// `[generator loss, discriminator loss]` of the last epoch.
    pub fn losses(&self) -> Vec<f64> {
        self.0.losses().to_vec()
    }

    pub fn preview(&self, n: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
        Ok(self
            .0
            .preview(n, seed.into())
            .map_err(js)?
            .map_or_else(Vec::new, |t| flat(&t)))
    }

    pub fn mixture(&self, t: usize, n: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
        self.0
            .mixture(t, n, seed.into())
            .map(|p| flat(&p))
            .map_err(js)
    }
}

#[wasm_bindgen]
pub fn mode_stats(xy: &[f64]) -> std::result::Result<Vec<f64>, JsError> {
    stats(xy).map(|s| s.to_vec()).map_err(js)
}

#[wasm_bindgen]
pub fn grid_centers() -> Vec<f64> {
    let spec = GridSpec::default();
    (0..spec.mode_count())
        .flat_map(|m| spec.center(m))
        .collect()
}
