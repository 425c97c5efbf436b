//! The 2D-grid dataset: an equal-weight mixture of isotropic Gaussians whose
//! means sit on a square lattice, plus labeled variants and CSV persistence.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub grid_side: usize,
    pub spacing: f64,
    pub origin: f64,
    pub sigma: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            grid_side: 5,
            spacing: 2.0,
            origin: 4.0,
            sigma: 0.05,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_side == 0 {
            return Err(Error::Config("grid_side must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.spacing.is_finite() && self.origin.is_finite()) {
            return Err(Error::Config("spacing and origin must be finite".into()));
        }
        Ok(())
    }

    pub fn mode_count(&self) -> usize {
        self.grid_side * self.grid_side
    }

    /// Lattice coordinates `(i, j)` of mode `m` in row-major order.
    pub fn lattice(&self, m: usize) -> (usize, usize) {
        (m / self.grid_side, m % self.grid_side)
    }

    pub fn center(&self, m: usize) -> [f64; 2] {
        let (i, j) = self.lattice(m);
        [
            self.origin + self.spacing * i as f64,
            self.origin + self.spacing * j as f64,
        ]
    }

    /// Center of mass of the mode centers.
    pub fn mixture_mean(&self) -> [f64; 2] {
        let c = self.origin + self.spacing * (self.grid_side as f64 - 1.0) / 2.0;
        [c, c]
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn nearest_mode(&self, p: [f64; 2]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for m in 0..self.mode_count() {
            let c = self.center(m);
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d2 < best.1 {
                best = (m, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    /// Axis-aligned box containing every center with `margin` around it.
    pub fn bounds(&self, margin: f64) -> [f64; 4] {
        let lo = self.origin - margin;
        let hi = self.origin + self.spacing * (self.grid_side as f64 - 1.0) + margin;
        [lo, hi, lo, hi]
    }
}

/// `[M × 2]` centers, `(origin + spacing·i, origin + spacing·j)`, i-major.
pub fn mode_centers(spec: &GridSpec) -> Tensor {
    let data = (0..spec.mode_count())
        .flat_map(|m| spec.center(m))
        .collect();
    Tensor::from_vec(&[spec.mode_count(), 2], data).expect("two coordinates per mode")
}

/// Uniform mode choice, then isotropic Gaussian noise with std `sigma`.
pub fn sample_real(spec: &GridSpec, n: usize, seed: u64) -> Tensor {
    let mut rng = rng::stream(seed, "real-data", 0);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let c = spec.center(rng.random_range(0..spec.mode_count()));
        for coord in c {
            let z: f64 = rng.sample(StandardNormal);
            data.push(coord + spec.sigma * z);
        }
    }
    Tensor::from_vec(&[n, 2], data).expect("two coordinates per point")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// Every point in class 0.
    Single,
    /// `(i + j) mod 2` of the nearest center.
    Checkerboard,
    /// Class 0 for the first `ceil(side / 2)` columns, 1 for the rest.
    Halves,
}

impl LabelScheme {
    pub fn class_count(self) -> usize {
        match self {
            LabelScheme::Single => 1,
            LabelScheme::Checkerboard | LabelScheme::Halves => 2,
        }
    }

    pub fn class_of_mode(self, spec: &GridSpec, m: usize) -> usize {
        let (i, j) = spec.lattice(m);
        match self {
            LabelScheme::Single => 0,
            LabelScheme::Checkerboard => (i + j) % 2,
            LabelScheme::Halves => usize::from(2 * i >= spec.grid_side),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub spec: GridSpec,
    pub seed: u64,
}

/// Sidecar metadata stored next to a dataset CSV as `<file>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub spec: GridSpec,
    pub seed: u64,
    pub scheme: Option<LabelScheme>,
    pub class_count: usize,
    pub len: usize,
    /// Free-form provenance, e.g. the mixture manifest a synthetic set came from.
    #[serde(default)]
    pub provenance: Option<String>,
}

/// Attributes each point to its nearest center and labels it by `scheme`.
pub fn assign_labels(
    points: &Tensor,
    spec: &GridSpec,
    scheme: LabelScheme,
    seed: u64,
) -> LabeledDataset {
    let labels = (0..points.rows())
        .map(|r| {
            let p = points.row(r);
            let (m, _) = spec.nearest_mode([p[0], p[1]]);
            scheme.class_of_mode(spec, m)
        })
        .collect();
    LabeledDataset {
        points: points.clone(),
        labels,
        class_count: scheme.class_count(),
        spec: *spec,
        seed,
    }
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.shape() != [self.labels.len(), 2] {
            return Err(Error::shape(
                "LabeledDataset points",
                &[self.labels.len(), 2],
                self.points.shape(),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::Format(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        self.points.ensure_finite("dataset points")
    }

    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }

    pub fn class_points(&self, class: usize) -> Tensor {
        self.points.select_rows(&self.class_indices(class))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn meta(&self, scheme: Option<LabelScheme>, provenance: Option<String>) -> DatasetMeta {
        DatasetMeta {
            spec: self.spec,
            seed: self.seed,
            scheme,
            class_count: self.class_count,
            len: self.len(),
            provenance,
        }
    }

    /// Writes `x,y,label` rows and the metadata sidecar.
    pub fn save_csv(&self, path: &Path, meta: &DatasetMeta) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x,y,label")?;
        for (r, label) in self.labels.iter().enumerate() {
            let p = self.points.row(r);
            writeln!(w, "{},{},{}", p[0], p[1], label)?;
        }
        w.flush()?;
        let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(meta_path(path), json + "\n")?;
        Ok(())
    }

    /// Reads a CSV written by [`LabeledDataset::save_csv`] and checks it
    /// against its sidecar.
    pub fn load_csv(path: &Path) -> Result<(Self, DatasetMeta)> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)
            .map_err(|e| Error::Format(format!("{}: {e}", meta_path(path).display())))?;
        meta.spec.validate()?;
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "x,y,label" => {}
            _ => return Err(Error::Format("missing x,y,label header".into())),
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("line {}: malformed row {line:?}", n + 2));
            if fields.len() != 3 {
                return Err(bad());
            }
            data.push(fields[0].trim().parse::<f64>().map_err(|_| bad())?);
            data.push(fields[1].trim().parse::<f64>().map_err(|_| bad())?);
            labels.push(fields[2].trim().parse::<usize>().map_err(|_| bad())?);
        }
        if labels.len() != meta.len {
            return Err(Error::Format(format!(
                "sidecar declares {} rows, file has {}",
                meta.len,
                labels.len()
            )));
        }
        let ds = LabeledDataset {
            points: Tensor::from_vec(&[labels.len(), 2], data)?,
            labels,
            class_count: meta.class_count,
            spec: meta.spec,
            seed: meta.seed,
        };
        ds.validate()?;
        Ok((ds, meta))
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}
