mod support;

use std::sync::{Arc, OnceLock};

use ensgan_core::data::{sample_real, GridSpec};
use ensgan_core::ensemble::{BetaSchedule, BoostState};
use ensgan_core::gan::{
    train_gan, GanConfig, GanMember, GanTrainer, WeightedDataset, WeightedSampler,
};
use ensgan_core::metrics::{is_high_quality, mode_disk_scores, mode_report, nearest_center};
use ensgan_core::nn::{discriminator_score_grads, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn small_config(seed: u64, epochs: usize) -> GanConfig {
    GanConfig {
        gen_widths: vec![64, 64],
        disc_widths: vec![32, 32],
        epochs,
        seed,
        ..GanConfig::ci()
    }
}

#[test]
fn weighted_sampler_follows_weights() {
    let weights: Vec<f64> = (1..=10).map(f64::from).collect();
    let data = WeightedDataset::new(Tensor::zeros(&[10, 2]), weights.clone()).unwrap();
    let sampler = WeightedSampler::new(&data).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let n = 1_000_000;
    let mut counts = [0usize; 10];
    for i in sampler.draw_batch(n, &mut r) {
        counts[i] += 1;
    }
    let total: f64 = weights.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&c, w)| {
            let e = n as f64 * w / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new(9.0).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "chi2 {chi2} ≥ {critical}");
}

#[test]
fn zero_weight_points_are_never_drawn() {
    let data = WeightedDataset::new(Tensor::zeros(&[4, 2]), vec![0.0, 1.0, 0.0, 3.0]).unwrap();
    let sampler = WeightedSampler::new(&data).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    assert!(sampler
        .draw_batch(10_000, &mut r)
        .iter()
        .all(|&i| i == 1 || i == 3));
    assert_eq!(data.support_size(), 2);
}

#[test]
fn invalid_weights_are_rejected() {
    assert!(WeightedDataset::new(Tensor::zeros(&[2, 2]), vec![0.0, 0.0]).is_err());
    assert!(WeightedDataset::new(Tensor::zeros(&[2, 2]), vec![1.0, -1.0]).is_err());
    assert!(WeightedDataset::new(Tensor::zeros(&[2, 2]), vec![1.0]).is_err());
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = WeightedDataset::uniform(sample_real(&GridSpec::default(), 400, 3));
    let a = train_gan(&data, &small_config(4, 2)).unwrap();
    let b = train_gan(&data, &small_config(4, 2)).unwrap();
    let c = train_gan(&data, &small_config(5, 2)).unwrap();
    assert_eq!(a.generator.flat_params(), b.generator.flat_params());
    assert_eq!(a.loss_log, b.loss_log);
    assert_ne!(a.generator.flat_params(), c.generator.flat_params());
}

#[test]
fn trainer_epochs_match_one_shot_training() {
    let data = WeightedDataset::uniform(sample_real(&GridSpec::default(), 300, 6));
    let cfg = small_config(7, 3);
    let mut trainer = GanTrainer::new(&data, &cfg).unwrap();
    assert_eq!(trainer.steps_per_epoch(), 3);
    while !trainer.is_done() {
        trainer.run_epoch().unwrap();
    }
    let stepped = trainer.finish();
    let direct = train_gan(&data, &cfg).unwrap();
    assert_eq!(
        stepped.generator.flat_params(),
        direct.generator.flat_params()
    );
    assert_eq!(stepped.gen_optimizer.step_count, 9);
}

#[test]
fn batch_larger_than_data_is_rejected() {
    let data = WeightedDataset::uniform(sample_real(&GridSpec::default(), 50, 1));
    assert!(GanTrainer::new(&data, &small_config(0, 1)).is_err());
}

/// Generator trained only on the points of the center mode (index 12).
fn single_mode_member() -> &'static GanMember {
    static MEMBER: OnceLock<GanMember> = OnceLock::new();
    MEMBER.get_or_init(|| {
        let spec = GridSpec::default();
        let pts = sample_real(&spec, 4000, 8);
        let weights: Vec<f64> = (0..pts.rows())
            .map(|r| {
                let p = pts.row(r);
                f64::from(u8::from(spec.nearest_mode([p[0], p[1]]).0 == 12))
            })
            .collect();
        let data = WeightedDataset::new(pts, weights).unwrap();
        let mut cfg = small_config(9, 100);
        cfg.optimizer.learning_rate = 2e-4;
        train_gan(&data, &cfg).unwrap()
    })
}

/// The collapsed generator paired with a discriminator trained against it
/// on the full grid, with the generator frozen.
fn collapsed_member() -> &'static GanMember {
    static MEMBER: OnceLock<GanMember> = OnceLock::new();
    MEMBER.get_or_init(|| {
        let mut m = single_mode_member().clone();
        let real = sample_real(&GridSpec::default(), 4000, 30);
        let mut r = ChaCha8Rng::seed_from_u64(31);
        for step in 0..1500u64 {
            let idx = rand::seq::index::sample(&mut r, real.rows(), 100).into_vec();
            let fake = m.generate(100, 1000 + step).unwrap();
            let s = m
                .discriminator
                .forward(&Tensor::vstack(&[&real.select_rows(&idx), &fake]).unwrap())
                .unwrap();
            let (gr, gf) =
                discriminator_score_grads(&s.slice_rows(0, 100), &s.slice_rows(100, 200)).unwrap();
            m.discriminator
                .backward(&Tensor::vstack(&[&gr, &gf]).unwrap())
                .unwrap();
            m.disc_optimizer
                .step(&mut m.discriminator.params_mut())
                .unwrap();
        }
        m
    })
}

#[test]
fn single_mode_weights_concentrate_the_generator() {
    let spec = GridSpec::default();
    let samples = single_mode_member().generate(2000, 10).unwrap();
    let c = spec.center(12);
    let near = (0..samples.rows())
        .filter(|&r| {
            let p = samples.row(r);
            (p[0] - c[0]).hypot(p[1] - c[1]) <= 10.0 * spec.sigma
        })
        .count();
    assert!(near as f64 >= 0.95 * 2000.0, "{near} of 2000 near the mode");
}

#[test]
fn missed_modes_score_higher_than_covered_ones() {
    let spec = GridSpec::default();
    let member = collapsed_member();
    let covered = mode_report(&member.generate(2500, 32).unwrap(), &spec).covered_modes();
    assert!(
        covered.contains(&12) && covered.len() < 25,
        "covered {covered:?}"
    );
    let disk = mode_disk_scores(member, &spec, 200, 33).unwrap();
    let mean = |hit: bool| {
        let v: Vec<f64> = (0..25)
            .filter(|m| covered.contains(m) == hit)
            .map(|m| disk[m])
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(
        mean(false) > mean(true),
        "missed {} vs covered {}",
        mean(false),
        mean(true)
    );
}

#[test]
fn boosting_moves_weight_off_covered_modes() {
    let spec = GridSpec::default();
    let member = collapsed_member();
    let covered = mode_report(&member.generate(2500, 34).unwrap(), &spec).covered_modes();
    let pts = sample_real(&spec, 4000, 35);
    let mut state = BoostState::new(pts.rows());
    state
        .absorb(
            &member.discriminator_scores(&pts).unwrap(),
            &BetaSchedule::Harmonic,
            100,
        )
        .unwrap();
    let on_covered: Vec<usize> = (0..pts.rows())
        .filter(|&r| {
            let p = pts.row(r);
            let (m, d) = nearest_center([p[0], p[1]], &spec);
            covered.contains(&m) && is_high_quality(d, &spec)
        })
        .collect();
    let mass: f64 = on_covered.iter().map(|&r| state.weights[r]).sum();
    let uniform = on_covered.len() as f64 / pts.rows() as f64;
    assert!(mass < uniform, "mass {mass} vs uniform {uniform}");
}

#[test]
fn discriminator_prefers_real_points() {
    let spec = GridSpec::default();
    let data = WeightedDataset::uniform(sample_real(&spec, 4000, 11));
    let member = train_gan(&data, &small_config(12, 10)).unwrap();
    let real = sample_real(&spec, 2000, 13);
    let uniform = support::probe_points(4000, 14);
    let uniform = uniform.select_rows(&(0..4000).step_by(2).collect::<Vec<_>>());
    let mean = |t: &Tensor| member.discriminator_scores(t).unwrap().sum() / t.rows() as f64;
    assert!(
        mean(&real) > mean(&uniform),
        "{} vs {}",
        mean(&real),
        mean(&uniform)
    );
}

#[test]
fn generated_samples_are_seeded() {
    let member = Arc::new(GanMember::untrained(&small_config(1, 1)).unwrap());
    assert_eq!(
        member.generate(100, 1).unwrap(),
        member.generate(100, 1).unwrap()
    );
    assert_ne!(
        member.generate(100, 1).unwrap(),
        member.generate(100, 2).unwrap()
    );
    assert_eq!(member.generate(10_000, 3).unwrap().rows(), 10_000);
}
