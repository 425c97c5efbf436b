//! Independent reference implementations shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use ensgan_core::nn::{generator_score_grad, softplus, MlpModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub fn normal_tensor(rows: usize, cols: usize, scale: f64, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| scale * r.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(&[rows, cols], data).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    Param { param: usize, elem: usize },
    Input { elem: usize },
}

#[derive(Debug)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates whose difference window straddles a ReLU / maxout kink.
    pub kinks: usize,
    pub worst: f64,
    pub worst_coord: Option<Coord>,
}

/// One-sided slopes that disagree this much mark a non-differentiable
/// point inside `[x − h, x + h]`.
pub const KINK_TOL: f64 = 1e-3;

impl GradReport {
    fn new() -> Self {
        Self {
            checked: 0,
            kinks: 0,
            worst: 0.0,
            worst_coord: None,
        }
    }

    fn record(&mut self, coord: Coord, analytic: f64, [up, mid, down]: [f64; 3]) {
        let (fwd, bwd) = ((up - mid) / FD_STEP, (mid - down) / FD_STEP);
        if rel_err(fwd, bwd) > KINK_TOL {
            self.kinks += 1;
            return;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let e = rel_err(analytic, numeric);
        self.checked += 1;
        if e > self.worst {
            self.worst = e;
            self.worst_coord = Some(coord);
        }
    }
}

fn projected(model: &mut MlpModel, input: &Tensor, proj: &Tensor) -> f64 {
    let out = model.forward(input).unwrap();
    out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}

fn sample_coords(model: &mut MlpModel, input_len: usize, n: usize, seed: u64) -> Vec<Coord> {
    let sizes: Vec<usize> = model.params_mut().iter().map(|p| p.value.len()).collect();
    let total: usize = sizes.iter().sum::<usize>() + input_len;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut r, total, n.min(total));
    picks
        .into_iter()
        .map(|mut flat| {
            for (param, &s) in sizes.iter().enumerate() {
                if flat < s {
                    return Coord::Param { param, elem: flat };
                }
                flat -= s;
            }
            Coord::Input { elem: flat }
        })
        .collect()
}

/// Central differences of `Σ model(x) ⊙ proj` against `backward`, over
/// randomly chosen parameter and input coordinates.
pub fn check_model(model: &mut MlpModel, input: &Tensor, n_coords: usize, seed: u64) -> GradReport {
    let out = model.forward(input).unwrap();
    let proj = normal_tensor(out.rows(), out.cols(), 1.0, seed ^ 0x5eed);
    let base: f64 = out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
    let dx = model.backward(&proj).unwrap();
    let grads: Vec<Tensor> = model.params_mut().iter().map(|p| p.grad.clone()).collect();
    let mut report = GradReport::new();
    for coord in sample_coords(model, input.len(), n_coords, seed) {
        let (analytic, samples) = match coord {
            Coord::Param { param, elem } => {
                let orig = model.params_mut()[param].value.data()[elem];
                model.params_mut()[param].value.data_mut()[elem] = orig + FD_STEP;
                let up = projected(model, input, &proj);
                model.params_mut()[param].value.data_mut()[elem] = orig - FD_STEP;
                let down = projected(model, input, &proj);
                model.params_mut()[param].value.data_mut()[elem] = orig;
                (grads[param].data()[elem], [up, base, down])
            }
            Coord::Input { elem } => {
                let mut x = input.clone();
                x.data_mut()[elem] += FD_STEP;
                let up = projected(model, &x, &proj);
                x.data_mut()[elem] -= 2.0 * FD_STEP;
                let down = projected(model, &x, &proj);
                (dx.data()[elem], [up, base, down])
            }
        };
        report.record(coord, analytic, samples);
    }
    report
}

fn generator_loss(g: &mut MlpModel, d: &mut MlpModel, z: &Tensor) -> f64 {
    let s = d.forward(&g.forward(z).unwrap()).unwrap();
    s.data().iter().map(|&v| softplus(-v)).sum::<f64>() / s.rows() as f64
}

/// Generator loss through `D ∘ G`: checks the generator's parameters
/// (gradient routed through the discriminator's input) and the
/// discriminator's parameters, half the coordinates each.
pub fn check_composition(
    g: &mut MlpModel,
    d: &mut MlpModel,
    z: &Tensor,
    n_coords: usize,
    seed: u64,
) -> GradReport {
    let x = g.forward(z).unwrap();
    let s = d.forward(&x).unwrap();
    let base = s.data().iter().map(|&v| softplus(-v)).sum::<f64>() / s.rows() as f64;
    let ds = generator_score_grad(&s).unwrap();
    let dx = d.backward(&ds).unwrap();
    g.backward(&dx).unwrap();
    let g_grads: Vec<Tensor> = g.params_mut().iter().map(|p| p.grad.clone()).collect();
    let d_grads: Vec<Tensor> = d.params_mut().iter().map(|p| p.grad.clone()).collect();
    let mut report = GradReport::new();
    let half = n_coords.div_ceil(2);
    let g_coords = sample_coords(g, 0, half, seed);
    let d_coords = sample_coords(d, 0, half, seed + 1);
    for (which, coords) in [(0, g_coords), (1, d_coords)] {
        for coord in coords {
            let Coord::Param { param, elem } = coord else {
                continue;
            };
            let model = if which == 0 { &mut *g } else { &mut *d };
            let orig = model.params_mut()[param].value.data()[elem];
            model.params_mut()[param].value.data_mut()[elem] = orig + FD_STEP;
            let up = generator_loss(g, d, z);
            let model = if which == 0 { &mut *g } else { &mut *d };
            model.params_mut()[param].value.data_mut()[elem] = orig - FD_STEP;
            let down = generator_loss(g, d, z);
            let model = if which == 0 { &mut *g } else { &mut *d };
            model.params_mut()[param].value.data_mut()[elem] = orig;
            let analytic = if which == 0 {
                g_grads[param].data()[elem]
            } else {
                d_grads[param].data()[elem]
            };
            report.record(coord, analytic, [up, base, down]);
        }
    }
    report
}

/// `log(1 + e^x)` from its alternating series in `e^{-|x|}` (for
/// `|x| ≥ 0.5`) or directly (for `|x| < 0.5`, where nothing cancels).
pub fn softplus_series(x: f64) -> f64 {
    if x.abs() < 0.5 {
        return (1.0 + x.exp()).ln();
    }
    let q = (-x.abs()).exp();
    let mut sum = 0.0;
    let mut term = q;
    let mut n = 1.0;
    while term > 0.0 && n < 400.0 {
        let signed = if (n as u64) % 2 == 1 {
            term / n
        } else {
            -term / n
        };
        sum += signed;
        term *= q;
        n += 1.0;
    }
    if x > 0.0 {
        x + sum
    } else {
        sum
    }
}

/// Mode coverage by exhaustive distance to every center.
pub struct BruteModes {
    pub modes_recovered: usize,
    pub hq_count: usize,
    pub per_mode: Vec<usize>,
}

pub fn brute_mode_report(points: &Tensor, centers: &[[f64; 2]], radius: f64) -> BruteModes {
    let mut per_mode = vec![0; centers.len()];
    for r in 0..points.rows() {
        let p = points.row(r);
        let mut best = (usize::MAX, f64::INFINITY);
        for (m, c) in centers.iter().enumerate() {
            let d = (p[0] - c[0]).hypot(p[1] - c[1]);
            if d < best.1 {
                best = (m, d);
            }
        }
        if best.1 <= radius {
            per_mode[best.0] += 1;
        }
    }
    BruteModes {
        modes_recovered: per_mode.iter().filter(|&&c| c > 0).count(),
        hq_count: per_mode.iter().sum(),
        per_mode,
    }
}

/// Eigenvalues of the symmetric matrix `[[a, b], [b, c]]`, ascending.
pub fn sym_eigen(a: f64, b: f64, c: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let vals = [mid - rad, mid + rad];
    let vecs = if b.abs() < 1e-300 {
        if a <= c {
            [[1.0, 0.0], [0.0, 1.0]]
        } else {
            [[0.0, 1.0], [1.0, 0.0]]
        }
    } else {
        let v = |l: f64| {
            let (x, y) = (b, l - a);
            let n = x.hypot(y);
            [x / n, y / n]
        };
        [v(vals[0]), v(vals[1])]
    };
    (vals, vecs)
}

type Mat = [[f64; 2]; 2];

fn matmul(x: Mat, y: Mat) -> Mat {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
        }
    }
    out
}

fn sqrt_psd(m: Mat) -> Mat {
    let (vals, vecs) = sym_eigen(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        let s = vals[k].max(0.0).sqrt();
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += s * vecs[k][i] * vecs[k][j];
            }
        }
    }
    out
}

/// `‖μ1−μ2‖² + Tr(A + B − 2 (√A B √A)^{1/2})` through explicit
/// eigendecompositions.
pub fn frechet_eigen(m1: [f64; 2], a: Mat, m2: [f64; 2], b: Mat) -> f64 {
    let ra = sqrt_psd(a);
    let inner = matmul(matmul(ra, b), ra);
    let (vals, _) = sym_eigen(inner[0][0], 0.5 * (inner[0][1] + inner[1][0]), inner[1][1]);
    let tr_sqrt: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dm = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    dm + a[0][0] + a[1][1] + b[0][0] + b[1][1] - 2.0 * tr_sqrt
}

pub fn moments(points: &Tensor) -> ([f64; 2], Mat) {
    let n = points.rows() as f64;
    let mut mu = [0.0; 2];
    for r in 0..points.rows() {
        mu[0] += points.row(r)[0] / n;
        mu[1] += points.row(r)[1] / n;
    }
    let mut cov = [[0.0; 2]; 2];
    for r in 0..points.rows() {
        let d = [points.row(r)[0] - mu[0], points.row(r)[1] - mu[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += d[i] * d[j] / (n - 1.0);
            }
        }
    }
    (mu, cov)
}

/// Every synthetic point's nearest real neighbour by a plain double loop,
/// sorted by (distance, synthetic index).
pub fn quadratic_nn(real: &Tensor, synth: &Tensor) -> Vec<(usize, usize, f64)> {
    let dims = real.cols() as f64;
    let mut out = Vec::with_capacity(synth.rows());
    for s in 0..synth.rows() {
        let mut best = (0, f64::INFINITY);
        for r in 0..real.rows() {
            let mut acc = 0.0;
            for c in 0..real.cols() {
                let d = synth.row(s)[c] - real.row(r)[c];
                acc += d * d;
            }
            let d = acc / dims;
            if d < best.1 {
                best = (r, d);
            }
        }
        out.push((s, best.0, best.1));
    }
    out.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    out
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Grid centers written out by hand: `(4 + 2i, 4 + 2j)`, `i`-major.
pub fn default_centers() -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            out.push([4.0 + 2.0 * i as f64, 4.0 + 2.0 * j as f64]);
        }
    }
    out
}

/// Half uniform over `[2, 14]²`, half within 0.3 of a random center, so
/// both sides of the 3σ boundary are well populated.
pub fn probe_points(n: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let centers = default_centers();
    let mut data = Vec::with_capacity(2 * n);
    for k in 0..n {
        if k % 2 == 0 {
            data.push(r.random_range(2.0..14.0));
            data.push(r.random_range(2.0..14.0));
        } else {
            let c = centers[r.random_range(0..centers.len())];
            let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
            let radius: f64 = r.random_range(0.0..0.3);
            data.push(c[0] + radius * angle.cos());
            data.push(c[1] + radius * angle.sin());
        }
    }
    Tensor::from_vec(&[n, 2], data).unwrap()
}
