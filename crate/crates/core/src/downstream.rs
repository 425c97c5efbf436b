//! Train-on-synthetic / test-on-real classification.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::mean_std;
use crate::nn::{AdamConfig, AdamState, DenseLayer, Layer, MlpModel, ReluLayer, Tensor};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Optimizer steps between test evaluations.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 20,
            batch_size: 100,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            eval_every: 50,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        if self.eval_every == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "eval_every, epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    /// `(optimizer step, test accuracy)`, steps strictly increasing.
    pub points: Vec<(usize, f64)>,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
}

impl AccuracyCurve {
    pub fn from_points(points: Vec<(usize, f64)>) -> Self {
        let best_accuracy = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let final_accuracy = points.last().map_or(f64::NAN, |p| p.1);
        Self {
            points,
            best_accuracy,
            final_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutcome {
    pub curve: AccuracyCurve,
    /// Classes with no synthetic examples (a mode-collapse symptom).
    pub missing_classes: Vec<usize>,
}

fn build_classifier(config: &ClassifierConfig, classes: usize) -> Result<MlpModel> {
    let mut r = rng::stream(config.seed, "classifier-init", 0);
    let mut layers = Vec::new();
    let mut width = 2;
    for &w in &config.hidden {
        layers.push(Layer::Dense(DenseLayer::glorot(width, w, &mut r)));
        layers.push(Layer::Relu(ReluLayer::default()));
        width = w;
    }
    layers.push(Layer::Dense(DenseLayer::glorot(width, classes, &mut r)));
    MlpModel::new(2, layers)
}

/// Per-feature standardization fitted on the training inputs.
struct Standardizer {
    mean: [f64; 2],
    scale: [f64; 2],
}

impl Standardizer {
    fn fit(points: &Tensor) -> Self {
        let n = points.rows().max(1) as f64;
        let mut mean = [0.0; 2];
        let mut sq = [0.0; 2];
        for r in 0..points.rows() {
            for (m, v) in mean.iter_mut().zip(points.row(r)) {
                *m += v / n;
            }
        }
        for r in 0..points.rows() {
            for ((s, v), m) in sq.iter_mut().zip(points.row(r)).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = sq.map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 });
        Self { mean, scale }
    }

    fn apply(&self, points: &Tensor) -> Tensor {
        let mut out = points.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

/// Softmax cross-entropy: mean loss and gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let (b, k) = (logits.rows(), logits.cols());
    let mut grad = Tensor::zeros(&[b, k]);
    let mut loss = 0.0;
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[labels[r]];
        let g = grad.row_mut(r);
        for c in 0..k {
            g[c] = ((row[c] - max).exp() / z - f64::from(u8::from(c == labels[r]))) / b as f64;
        }
    }
    (loss / b as f64, grad)
}

pub fn accuracy(model: &MlpModel, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = model.predict(inputs)?;
    let correct = (0..labels.len())
        .filter(|&r| {
            let row = logits.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best == labels[r]
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Trains an MLP classifier on `synthetic` only and records accuracy on
/// `real_test` every `eval_every` steps (and after the last step).
///
/// The real test set doubles as the validation set: `best_accuracy` is the
/// maximum over the curve.
pub fn train_classifier(
    synthetic: &LabeledDataset,
    real_test: &LabeledDataset,
    config: &ClassifierConfig,
) -> Result<ClassifierOutcome> {
    config.validate()?;
    if synthetic.class_count != real_test.class_count {
        return Err(Error::Config(format!(
            "synthetic data has {} classes, test data {}",
            synthetic.class_count, real_test.class_count
        )));
    }
    if synthetic.is_empty() || real_test.is_empty() {
        return Err(Error::InsufficientData("empty training or test set".into()));
    }
    synthetic.validate()?;
    real_test.validate()?;
    let missing_classes = synthetic
        .class_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(k, _)| k)
        .collect();
    let scaler = Standardizer::fit(&synthetic.points);
    let train_x = scaler.apply(&synthetic.points);
    let test_x = scaler.apply(&real_test.points);
    let mut model = build_classifier(config, synthetic.class_count)?;
    let mut adam = AdamState::for_params(config.optimizer, &model.params_mut());
    let mut r = rng::stream(config.seed, "classifier-batches", 0);
    let mut order: Vec<usize> = (0..synthetic.len()).collect();
    let mut points = Vec::new();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut r);
        for batch in order.chunks(config.batch_size) {
            let x = train_x.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| synthetic.labels[i]).collect();
            let logits = model.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("classifier loss at step {step}")));
            }
            model.backward(&grad)?;
            adam.step(&mut model.params_mut())?;
            step += 1;
            if step % config.eval_every == 0 {
                points.push((step, accuracy(&model, &test_x, &real_test.labels)?));
            }
        }
    }
    if points.last().is_none_or(|p| p.0 != step) {
        points.push((step, accuracy(&model, &test_x, &real_test.labels)?));
    }
    Ok(ClassifierOutcome {
        curve: AccuracyCurve::from_points(points),
        missing_classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStability {
    pub tail_mean: f64,
    pub tail_std: f64,
    pub best_minus_final: f64,
}

/// Statistics over the last `ceil(tail_fraction · len)` evaluations.
pub fn curve_stability(curve: &AccuracyCurve, tail_fraction: f64) -> Result<CurveStability> {
    if curve.points.is_empty() {
        return Err(Error::InsufficientData("empty accuracy curve".into()));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "tail_fraction {tail_fraction} outside (0, 1]"
        )));
    }
    let n = curve.points.len();
    let take = ((tail_fraction * n as f64).ceil() as usize).clamp(1, n);
    let tail: Vec<f64> = curve.points[n - take..].iter().map(|p| p.1).collect();
    let (tail_mean, tail_std) = mean_std(&tail);
    Ok(CurveStability {
        tail_mean,
        tail_std,
        best_minus_final: curve.best_accuracy - curve.final_accuracy,
    })
}

/// One-sided Welch t-test of `mean(a) > mean(b)`; returns `(t, p)`.
pub fn welch_greater(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(
            "t-test needs two samples per group".into(),
        ));
    }
    let var = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let (sa, sb) = (var(a) / na, var(b) / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let p = if ma > mb { 0.0 } else { 1.0 };
        return Ok((if ma > mb { f64::INFINITY } else { 0.0 }, p));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(e.to_string()))?;
    Ok((t, 1.0 - dist.cdf(t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: &[f64]) -> AccuracyCurve {
        AccuracyCurve::from_points(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| ((i + 1) * 10, v))
                .collect(),
        )
    }

    #[test]
    fn stability_of_constant_curve() {
        let s = curve_stability(&curve(&[0.8; 6]), 0.5).unwrap();
        assert_eq!(s.tail_std, 0.0);
        assert_eq!(s.best_minus_final, 0.0);
    }

    #[test]
    fn stability_arithmetic() {
        let s = curve_stability(&curve(&[0.5, 0.9, 0.6]), 1.0).unwrap();
        assert!((s.tail_mean - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.best_minus_final - 0.3).abs() < 1e-12);
        assert!(curve_stability(&curve(&[]), 1.0).is_err());
        assert!(curve_stability(&curve(&[0.1]), 0.0).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_difference() {
        let logits = Tensor::from_rows(&[&[0.3, -1.0, 2.0], &[0.0, 0.5, -0.5]]).unwrap();
        let labels = [2, 0];
        let (_, g) = softmax_cross_entropy(&logits, &labels);
        let h = 1e-6;
        for i in 0..6 {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let fd = (softmax_cross_entropy(&p, &labels).0 - softmax_cross_entropy(&m, &labels).0)
                / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn welch_detects_shift() {
        let a = [0.9, 0.92, 0.91, 0.95, 0.93];
        let b = [0.8, 0.82, 0.79, 0.85, 0.81];
        let (t, p) = welch_greater(&a, &b).unwrap();
        assert!(t > 0.0 && p < 0.001);
        let (_, p) = welch_greater(&b, &a).unwrap();
        assert!(p > 0.99);
    }
}
