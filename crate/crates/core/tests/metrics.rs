mod support;

use ensgan_core::data::{sample_real, GridSpec};
use ensgan_core::ensemble::{PoolEntry, SamplePool};
use ensgan_core::gan::{GanConfig, GanMember};
use ensgan_core::metrics::{
    bootstrap_metrics, fit_gaussian, frechet_2d, frechet_gaussians, mode_report, nn_audit,
    score_heatmap,
};
use ensgan_core::nn::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{
    brute_mode_report, default_centers, frechet_eigen, moments, normal_tensor, probe_points,
    quadratic_nn,
};

#[test]
fn mode_report_matches_brute_force() {
    let spec = GridSpec::default();
    for seed in 0..5 {
        let pts = probe_points(10_000, seed);
        let fast = mode_report(&pts, &spec);
        let slow = brute_mode_report(&pts, &default_centers(), 0.15);
        assert_eq!(fast.per_mode_hq, slow.per_mode);
        assert_eq!(fast.hq_count, slow.hq_count);
        assert_eq!(fast.modes_recovered, slow.modes_recovered);
        assert_eq!(fast.total, 10_000);
    }
}

#[test]
fn boundary_at_three_sigma_is_inclusive() {
    let spec = GridSpec::default();
    let on = Tensor::from_rows(&[&[4.15, 4.0], &[4.0, 4.0 - 0.15]]).unwrap();
    assert_eq!(mode_report(&on, &spec).hq_count, 2);
    let off = Tensor::from_rows(&[&[4.1500001, 4.0]]).unwrap();
    assert_eq!(mode_report(&off, &spec).hq_count, 0);
}

#[test]
fn real_samples_cover_every_mode() {
    let spec = GridSpec::default();
    let rep = mode_report(&sample_real(&spec, 10_000, 1), &spec);
    assert_eq!(rep.modes_recovered, 25);
    // P(|N(0, I₂)| ≤ 3) = 1 − e^{−4.5}
    let p = 1.0 - (-4.5f64).exp();
    let sd = (p * (1.0 - p) / 10_000.0).sqrt();
    assert!(
        (rep.hq_fraction - p).abs() <= 5.0 * sd,
        "hq {}",
        rep.hq_fraction
    );
}

#[test]
fn frechet_matches_eigendecomposition() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let a = normal_tensor(200, 2, r.random_range(0.1..3.0), 1000 + case);
        let mut b = normal_tensor(150, 2, r.random_range(0.1..3.0), 2000 + case);
        let shear: f64 = r.random_range(-1.0..1.0);
        let shift = [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
        for row in 0..b.rows() {
            let p = b.row_mut(row);
            p[0] += shear * p[1] + shift[0];
            p[1] += shift[1];
        }
        let (ma, mut ca) = moments(&a);
        let (mb, mut cb) = moments(&b);
        for c in [&mut ca, &mut cb] {
            c[0][0] += 1e-10;
            c[1][1] += 1e-10;
        }
        let want = frechet_eigen(ma, ca, mb, cb);
        let got = frechet_2d(&a, &b).unwrap();
        assert!((got - want).abs() <= 1e-8, "case {case}: {got} vs {want}");
    }
}

#[test]
fn frechet_of_identical_sets_is_zero() {
    let a = sample_real(&GridSpec::default(), 2000, 3);
    assert!(frechet_2d(&a, &a).unwrap().abs() <= 1e-8);
}

#[test]
fn frechet_of_shifted_set_is_squared_shift() {
    let a = normal_tensor(500, 2, 1.0, 4);
    let mut b = a.clone();
    b.data_mut().iter_mut().for_each(|v| *v += 1.0);
    assert!((frechet_2d(&a, &b).unwrap() - 2.0).abs() <= 1e-8);
}

#[test]
fn nn_audit_matches_quadratic_loop() {
    let real = probe_points(1000, 8);
    let synth = probe_points(1000, 9);
    let got = nn_audit(&real, &synth, 1000).unwrap();
    let want = quadratic_nn(&real, &synth);
    assert_eq!(got.len(), want.len());
    for (g, (s, r, d)) in got.iter().zip(want) {
        assert_eq!((g.synth_index, g.real_index), (s, r));
        assert_eq!(g.distance.to_bits(), d.to_bits());
    }
}

#[test]
fn nn_audit_flags_copies() {
    let real = probe_points(300, 10);
    let pairs = nn_audit(&real, &real, 300).unwrap();
    assert!(pairs.iter().all(|p| p.distance == 0.0));
}

#[test]
fn nn_audit_uses_mean_squared_convention() {
    let real = Tensor::from_rows(&[&[4.0, 4.0]]).unwrap();
    let synth = Tensor::from_rows(&[&[5.0, 5.0], &[7.0, 5.0]]).unwrap();
    let pairs = nn_audit(&real, &synth, 1).unwrap();
    assert_eq!(pairs[0].distance, 1.0);
}

#[test]
fn single_cell_heatmap_scores_bounds_center() {
    let cfg = GanConfig {
        gen_widths: vec![4],
        disc_widths: vec![4],
        ..GanConfig::ci()
    };
    let member = GanMember::untrained(&cfg).unwrap();
    let h = score_heatmap(&member, [0.0, 2.0, 10.0, 20.0], 1, 1).unwrap();
    let direct = member
        .discriminator_scores(&Tensor::from_rows(&[&[1.0, 15.0]]).unwrap())
        .unwrap();
    assert_eq!(h.scores, direct.into_data());
}

#[test]
fn heatmap_is_row_major_over_y() {
    let cfg = GanConfig {
        gen_widths: vec![4],
        disc_widths: vec![4],
        ..GanConfig::ci()
    };
    let member = GanMember::untrained(&cfg).unwrap();
    let h = score_heatmap(&member, [0.0, 3.0, 0.0, 2.0], 3, 2).unwrap();
    let at = |x: f64, y: f64| {
        member
            .discriminator_scores(&Tensor::from_rows(&[&[x, y]]).unwrap())
            .unwrap()
            .data()[0]
    };
    assert_eq!(h.scores[1], at(1.5, 0.5));
    assert_eq!(h.scores[3], at(0.5, 1.5));
}

fn entry(index: usize, class: usize, points: Tensor) -> PoolEntry {
    PoolEntry {
        member_index: index,
        member_seed: index as u64,
        class,
        points,
    }
}

#[test]
fn bootstrap_on_identical_full_coverage_caches_is_constant() {
    let spec = GridSpec::default();
    // Drawing 2500 of 2500 rows takes the whole cache every time.
    let mut rows = Vec::new();
    for c in default_centers() {
        for _ in 0..100 {
            rows.extend(c);
        }
    }
    let cache = Tensor::from_vec(&[2500, 2], rows).unwrap();
    let pool = SamplePool {
        entries: (0..5).map(|i| entry(i, 0, cache.clone())).collect(),
    };
    let s = bootstrap_metrics(&pool, &[1], 2500, 50, 3, &spec).unwrap();
    let row = s.row(1).unwrap();
    assert_eq!((row.modes_mean, row.modes_std), (25.0, 0.0));
    assert_eq!((row.hq_mean, row.hq_std), (1.0, 0.0));
}

#[test]
fn bootstrap_rejects_oversized_ensembles() {
    let pool = SamplePool {
        entries: (0..3)
            .map(|i| entry(i, 0, probe_points(100, i as u64)))
            .collect(),
    };
    assert!(bootstrap_metrics(&pool, &[4], 90, 2, 0, &GridSpec::default()).is_err());
    assert!(bootstrap_metrics(&pool, &[1], 101, 2, 0, &GridSpec::default()).is_err());
}

#[test]
fn bootstrap_is_seeded_and_order_independent() {
    let spec = GridSpec::default();
    let pool = SamplePool {
        entries: (0..6)
            .map(|i| entry(i, 0, probe_points(600, 20 + i as u64)))
            .collect(),
    };
    let a = bootstrap_metrics(&pool, &[1, 3, 5], 500, 20, 9, &spec).unwrap();
    let b = bootstrap_metrics(&pool, &[5, 1], 500, 20, 9, &spec).unwrap();
    assert_eq!(a.row(5), b.row(5));
    assert_eq!(a.row(1), b.row(1));
}

#[test]
fn bootstrap_splits_draws_across_classes() {
    let spec = GridSpec::default();
    let left = Tensor::from_vec(&[100, 2], [4.0, 4.0].repeat(100)).unwrap();
    let right = Tensor::from_vec(&[100, 2], [12.0, 12.0].repeat(100)).unwrap();
    let pool = SamplePool {
        entries: vec![
            entry(0, 0, left.clone()),
            entry(1, 1, right.clone()),
            entry(2, 0, left),
            entry(3, 1, right),
        ],
    };
    let s = bootstrap_metrics(&pool, &[1, 2], 150, 10, 4, &spec).unwrap();
    assert_eq!(s.row(1).unwrap().modes_mean, 2.0);
    assert_eq!(s.row(2).unwrap().modes_mean, 2.0);
}

#[test]
fn fit_gaussian_needs_two_points() {
    assert!(fit_gaussian(&Tensor::from_rows(&[&[1.0, 2.0]]).unwrap()).is_err());
}

fn arb_points() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(
        (2.0f64..14.0, 2.0f64..14.0).prop_map(|(x, y)| [x, y]),
        1..200,
    )
}

fn tensor(points: &[[f64; 2]]) -> Tensor {
    Tensor::from_vec(
        &[points.len(), 2],
        points.iter().flatten().copied().collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mode_report_is_permutation_invariant(points in arb_points(), seed in any::<u64>()) {
        let spec = GridSpec::default();
        let mut shuffled = points.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(mode_report(&tensor(&points), &spec), mode_report(&tensor(&shuffled), &spec));
    }

    #[test]
    fn recovered_modes_grow_with_points(points in arb_points(), extra in arb_points()) {
        let spec = GridSpec::default();
        let before = mode_report(&tensor(&points), &spec).modes_recovered;
        let mut all = points.clone();
        all.extend(extra);
        prop_assert!(mode_report(&tensor(&all), &spec).modes_recovered >= before);
    }

    #[test]
    fn frechet_is_symmetric(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
        let cov = |v: &[f64]| [v[2] * v[2] + 0.1, v[2] * v[3], v[3] * v[3] + v[4] * v[4] + 0.1];
        let d1 = frechet_gaussians([a[0], a[1]], cov(&a), [b[0], b[1]], cov(&b));
        let d2 = frechet_gaussians([b[0], b[1]], cov(&b), [a[0], a[1]], cov(&a));
        prop_assert!((d1 - d2).abs() <= 1e-12 * (1.0 + d1.abs()));
        prop_assert!(d1 >= 0.0);
    }

    #[test]
    fn nn_audit_is_sorted_and_non_negative(real in arb_points(), synth in arb_points()) {
        let pairs = nn_audit(&tensor(&real), &tensor(&synth), 50).unwrap();
        prop_assert!(pairs.len() == synth.len().min(50));
        prop_assert!(pairs.iter().all(|p| p.distance >= 0.0));
        prop_assert!(pairs.windows(2).all(|w| w[0].distance <= w[1].distance));
    }
}
