//! Mode coverage, sample quality, bootstrap estimates, a 2D Fréchet distance
//! and nearest-neighbour memorization audits.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::GridSpec;
use crate::ensemble::{quotas, SamplePool};
use crate::error::{Error, Result};
use crate::gan::GanMember;
use crate::nn::Tensor;
use crate::rng;

/// Absolute slack on the inclusive `3σ` boundary so that points written in
/// decimal exactly on the boundary (e.g. `4.15` for a center at `4` and
/// `σ = 0.05`) count as high quality despite binary rounding.
pub const BOUNDARY_SLACK: f64 = 1e-12;

/// Number of standard deviations defining a high-quality point.
pub const HQ_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub modes_recovered: usize,
    pub hq_fraction: f64,
    pub hq_count: usize,
    pub total: usize,
    /// High-quality points attributed to each mode, row-major mode order.
    pub per_mode_hq: Vec<usize>,
}

impl ModeReport {
    pub fn covered_modes(&self) -> Vec<usize> {
        (0..self.per_mode_hq.len())
            .filter(|&m| self.per_mode_hq[m] > 0)
            .collect()
    }
}

/// Nearest lattice index along one axis; exact midpoints go to the lower index.
fn nearest_axis(coord: f64, spec: &GridSpec) -> usize {
    let t = (coord - spec.origin) / spec.spacing;
    let last = spec.grid_side - 1;
    if t <= 0.0 {
        return 0;
    }
    let lo = (t.floor() as usize).min(last);
    if lo == last {
        return last;
    }
    // compare actual distances so rounding in `t` cannot flip the choice
    let c_lo = spec.origin + spec.spacing * lo as f64;
    let c_hi = spec.origin + spec.spacing * (lo + 1) as f64;
    if (coord - c_hi).abs() < (coord - c_lo).abs() {
        lo + 1
    } else {
        lo
    }
}

/// Nearest center (row-major index) and the distance to it. The lattice is
/// axis-separable, so the nearest center is found per coordinate.
pub fn nearest_center(p: [f64; 2], spec: &GridSpec) -> (usize, f64) {
    let i = nearest_axis(p[0], spec);
    let j = nearest_axis(p[1], spec);
    let m = i * spec.grid_side + j;
    let c = spec.center(m);
    let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
    (m, d)
}

pub fn is_high_quality(distance: f64, spec: &GridSpec) -> bool {
    distance <= HQ_SIGMAS * spec.sigma + BOUNDARY_SLACK
}

/// A point is high quality iff it lies within `3σ` of its nearest center
/// (inclusive); a mode is recovered iff at least one high-quality point is
/// attributed to it.
pub fn mode_report(points: &Tensor, spec: &GridSpec) -> ModeReport {
    let mut per_mode_hq = vec![0; spec.mode_count()];
    for r in 0..points.rows() {
        let p = points.row(r);
        let (m, d) = nearest_center([p[0], p[1]], spec);
        if is_high_quality(d, spec) {
            per_mode_hq[m] += 1;
        }
    }
    let hq_count: usize = per_mode_hq.iter().sum();
    let total = points.rows();
    ModeReport {
        modes_recovered: per_mode_hq.iter().filter(|&&c| c > 0).count(),
        hq_fraction: if total == 0 {
            0.0
        } else {
            hq_count as f64 / total as f64
        },
        hq_count,
        total,
        per_mode_hq,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub t: usize,
    pub modes_mean: f64,
    pub modes_std: f64,
    pub hq_mean: f64,
    pub hq_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub rows: Vec<BootstrapRow>,
    pub iterations: usize,
    pub n_eval: usize,
    pub seed: u64,
    /// Per-iteration `(t, iteration, modes, hq_fraction)`.
    #[serde(skip)]
    pub samples: Vec<(usize, usize, usize, f64)>,
}

impl BootstrapSummary {
    pub fn row(&self, t: usize) -> Option<&BootstrapRow> {
        self.rows.iter().find(|r| r.t == t)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// For each `t`: `iterations` times pick `t` distinct cached members per
/// class, draw their share of `n_eval` points without replacement
/// (largest-remainder quotas, classes mixed equally), and score the union
/// with [`mode_report`].
///
/// Each `(t, iteration)` pair has its own random stream, so results do not
/// depend on evaluation order.
pub fn bootstrap_metrics(
    pool: &SamplePool,
    ts: &[usize],
    n_eval: usize,
    iterations: usize,
    seed: u64,
    spec: &GridSpec,
) -> Result<BootstrapSummary> {
    let class_count = pool.entries.iter().map(|e| e.class + 1).max().unwrap_or(0);
    let by_class: Vec<Vec<usize>> = (0..class_count)
        .map(|k| {
            (0..pool.entries.len())
                .filter(|&i| pool.entries[i].class == k)
                .collect()
        })
        .collect();
    let class_shares = quotas(&vec![1.0; class_count.max(1)], n_eval);
    let mut rows = Vec::with_capacity(ts.len());
    let mut samples = Vec::new();
    for &t in ts {
        let members = by_class.iter().map(Vec::len).min().unwrap_or(0);
        if t == 0 || t > members {
            return Err(Error::InsufficientData(format!(
                "ensemble size {t} needs 1..={members} pooled members per class"
            )));
        }
        let shares: Vec<Vec<usize>> = class_shares
            .iter()
            .map(|&nk| quotas(&vec![1.0; t], nk))
            .collect();
        let smallest = pool
            .entries
            .iter()
            .map(|e| e.points.rows())
            .min()
            .unwrap_or(0);
        let largest_share = shares.iter().flatten().copied().max().unwrap_or(0);
        if largest_share > smallest {
            return Err(Error::InsufficientData(format!(
                "T={t} draws {largest_share} points per member but a cache holds only {smallest}"
            )));
        }
        let mut modes = Vec::with_capacity(iterations);
        let mut hq = Vec::with_capacity(iterations);
        for it in 0..iterations {
            let mut r = rng::stream(seed, "bootstrap", ((t as u64) << 32) | it as u64);
            let mut data = Vec::with_capacity(2 * n_eval);
            for (class_members, class_shares) in by_class.iter().zip(&shares) {
                let chosen = index::sample(&mut r, class_members.len(), t).into_vec();
                for (&c, &share) in chosen.iter().zip(class_shares) {
                    let cache = &pool.entries[class_members[c]].points;
                    for row in index::sample(&mut r, cache.rows(), share) {
                        data.extend_from_slice(cache.row(row));
                    }
                }
            }
            let pts = Tensor::from_vec(&[n_eval, 2], data)?;
            let rep = mode_report(&pts, spec);
            modes.push(rep.modes_recovered as f64);
            hq.push(rep.hq_fraction);
            samples.push((t, it, rep.modes_recovered, rep.hq_fraction));
        }
        let (modes_mean, modes_std) = mean_std(&modes);
        let (hq_mean, hq_std) = mean_std(&hq);
        rows.push(BootstrapRow {
            t,
            modes_mean,
            modes_std,
            hq_mean,
            hq_std,
        });
    }
    Ok(BootstrapSummary {
        rows,
        iterations,
        n_eval,
        seed,
        samples,
    })
}

/// Sample mean and unbiased covariance `[sxx, sxy, syy]` of 2D points.
pub fn fit_gaussian(points: &Tensor) -> Result<([f64; 2], [f64; 3])> {
    let n = points.rows();
    if n < 2 || points.cols() != 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 two-dimensional points, got shape {:?}",
            points.shape()
        )));
    }
    let mut mean = [0.0; 2];
    for r in 0..n {
        let p = points.row(r);
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean[0] /= n as f64;
    mean[1] /= n as f64;
    let mut cov = [0.0; 3];
    for r in 0..n {
        let p = points.row(r);
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        cov[0] += dx * dx;
        cov[1] += dx * dy;
        cov[2] += dy * dy;
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    Ok((mean, cov))
}

/// Diagonal jitter added to both covariances before the square root.
pub const COV_JITTER: f64 = 1e-10;

/// Fréchet distance between two 2D Gaussians given as mean and `[sxx, sxy, syy]`.
///
/// For 2×2 PSD `A`, `B` the product `AB` has non-negative real eigenvalues
/// `λ1, λ2`, so `Tr (AB)^{1/2} = √λ1 + √λ2 = sqrt(Tr(AB) + 2·sqrt(det A · det B))`.
pub fn frechet_gaussians(m1: [f64; 2], c1: [f64; 3], m2: [f64; 2], c2: [f64; 3]) -> f64 {
    let a = [c1[0] + COV_JITTER, c1[1], c1[2] + COV_JITTER];
    let b = [c2[0] + COV_JITTER, c2[1], c2[2] + COV_JITTER];
    let tr_ab = a[0] * b[0] + 2.0 * a[1] * b[1] + a[2] * b[2];
    let det_a = (a[0] * a[2] - a[1] * a[1]).max(0.0);
    let det_b = (b[0] * b[2] - b[1] * b[1]).max(0.0);
    let tr_sqrt = (tr_ab + 2.0 * (det_a * det_b).sqrt()).max(0.0).sqrt();
    let dm = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    let value = dm + (a[0] + a[2]) + (b[0] + b[2]) - 2.0 * tr_sqrt;
    value.max(0.0)
}

/// Fréchet distance between Gaussians fitted to the two point sets.
pub fn frechet_2d(real: &Tensor, synth: &Tensor) -> Result<f64> {
    let (m1, c1) = fit_gaussian(real)?;
    let (m2, c2) = fit_gaussian(synth)?;
    Ok(frechet_gaussians(m1, c1, m2, c2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnPair {
    pub synth_index: usize,
    pub real_index: usize,
    /// Mean over coordinates of the squared difference.
    pub distance: f64,
}

/// Mean squared per-coordinate difference.
pub fn mean_sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Exhaustive nearest real neighbour for every synthetic point; returns the
/// `top_m` closest pairs sorted by distance (ties by synthetic index). The
/// lowest real index wins ties between neighbours.
pub fn nn_audit(real: &Tensor, synth: &Tensor, top_m: usize) -> Result<Vec<NnPair>> {
    if real.rows() == 0 || synth.rows() == 0 {
        return Err(Error::InsufficientData(
            "nn_audit needs non-empty sets".into(),
        ));
    }
    if real.cols() != synth.cols() {
        return Err(Error::shape("nn_audit", real.shape(), synth.shape()));
    }
    let mut pairs: Vec<NnPair> = (0..synth.rows())
        .map(|s| {
            let sp = synth.row(s);
            let mut best = NnPair {
                synth_index: s,
                real_index: 0,
                distance: f64::INFINITY,
            };
            for r in 0..real.rows() {
                let d = mean_sq_distance(sp, real.row(r));
                if d < best.distance {
                    best.real_index = r;
                    best.distance = d;
                }
            }
            best
        })
        .collect();
    pairs.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.synth_index.cmp(&b.synth_index))
    });
    pairs.truncate(top_m);
    Ok(pairs)
}

/// Discriminator scores on a regular lattice of cell centers.
///
/// `scores[row * nx + col]` is the score at
/// `x = x_min + (col + 0.5)·(x_max − x_min)/nx`,
/// `y = y_min + (row + 0.5)·(y_max − y_min)/ny`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// `[x_min, x_max, y_min, y_max]`
    pub bounds: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    pub scores: Vec<f64>,
}

impl Heatmap {
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        lattice_point(self.bounds, self.nx, self.ny, row, col)
    }
}

fn lattice_point(bounds: [f64; 4], nx: usize, ny: usize, row: usize, col: usize) -> [f64; 2] {
    let [x0, x1, y0, y1] = bounds;
    [
        x0 + (col as f64 + 0.5) * (x1 - x0) / nx as f64,
        y0 + (row as f64 + 0.5) * (y1 - y0) / ny as f64,
    ]
}

pub fn score_heatmap(
    member: &GanMember,
    bounds: [f64; 4],
    nx: usize,
    ny: usize,
) -> Result<Heatmap> {
    if nx == 0 || ny == 0 {
        return Err(Error::Config("heatmap resolution must be positive".into()));
    }
    let mut data = Vec::with_capacity(2 * nx * ny);
    for row in 0..ny {
        for col in 0..nx {
            data.extend(lattice_point(bounds, nx, ny, row, col));
        }
    }
    let scores = member
        .discriminator_scores(&Tensor::from_vec(&[nx * ny, 2], data)?)?
        .into_data();
    Ok(Heatmap {
        bounds,
        nx,
        ny,
        scores,
    })
}

/// Mean discriminator score over points drawn uniformly in each mode's
/// `3σ` disk.
pub fn mode_disk_scores(
    member: &GanMember,
    spec: &GridSpec,
    points_per_mode: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut r = rng::stream(seed, "disk-scores", 0);
    let radius = HQ_SIGMAS * spec.sigma;
    let mut data = Vec::with_capacity(2 * points_per_mode * spec.mode_count());
    for m in 0..spec.mode_count() {
        let c = spec.center(m);
        for _ in 0..points_per_mode {
            let rho = radius * r.random::<f64>().sqrt();
            let phi = std::f64::consts::TAU * r.random::<f64>();
            data.push(c[0] + rho * phi.cos());
            data.push(c[1] + rho * phi.sin());
        }
    }
    let pts = Tensor::from_vec(&[points_per_mode * spec.mode_count(), 2], data)?;
    let scores = member.discriminator_scores(&pts)?;
    Ok(scores
        .data()
        .chunks(points_per_mode)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect())
}
