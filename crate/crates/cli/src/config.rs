//! Experiment configuration: a TOML file layered over profile defaults.
//!
//! Every table and key is optional; anything not given falls back to the
//! profile (`ci` or `paper`). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use ensgan_core::data::{GridSpec, LabelScheme};
use ensgan_core::downstream::ClassifierConfig;
use ensgan_core::ensemble::{BetaSchedule, Method};
use ensgan_core::gan::GanConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Ci,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    /// Points cached per pooled member.
    pub samples_per_member: usize,
    /// Points scored per bootstrap iteration.
    pub eval_points: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostSettings {
    pub beta_schedule: BetaSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamSettings {
    pub ts: Vec<usize>,
    /// Classifier seeds per ensemble size.
    pub seeds: usize,
    /// Off: every seed trains on the same mixture of the first `T` members.
    /// On: seed `s` uses members `s, s+1, …, s+T−1` (mod pool size).
    pub rotate_members: bool,
    pub tail_fraction: f64,
    pub classifier: ClassifierConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSettings {
    pub top_m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSettings {
    /// Pool (or boosting) member indices within class 0.
    pub members: Vec<usize>,
    pub nx: usize,
    pub ny: usize,
    /// Added around the outermost centers.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub method: Method,
    pub labels: LabelScheme,
    /// Members trained per class.
    pub pool_size: usize,
    pub ts: Vec<usize>,
    pub train_size: usize,
    pub test_size: usize,
    pub grid: GridSpec,
    /// `gan.seed` is ignored: member seeds derive from `seed`.
    pub gan: GanConfig,
    pub boost: BoostSettings,
    pub bootstrap: BootstrapSettings,
    pub downstream: DownstreamSettings,
    pub audit: AuditSettings,
    pub heatmap: HeatmapSettings,
}

impl ExperimentConfig {
    pub fn profile_defaults(profile: Profile) -> Self {
        let (gan, train_size, pool_size) = match profile {
            Profile::Ci => (GanConfig::ci(), 10_000, 10),
            Profile::Paper => (GanConfig::paper(), 100_000, 25),
        };
        Self {
            profile,
            seed: 0,
            out: PathBuf::from(format!("runs/{}", profile_name(profile))),
            workers: 1,
            method: Method::Independent,
            labels: LabelScheme::Single,
            pool_size,
            ts: vec![1, 2, 3, 4, 5],
            train_size,
            test_size: 2_000,
            grid: GridSpec::default(),
            gan,
            boost: BoostSettings {
                beta_schedule: BetaSchedule::Harmonic,
            },
            bootstrap: BootstrapSettings {
                samples_per_member: 2_500,
                eval_points: 2_500,
                iterations: 1_000,
            },
            downstream: DownstreamSettings {
                ts: vec![1, 5],
                seeds: 10,
                rotate_members: false,
                tail_fraction: 0.5,
                classifier: ClassifierConfig::default(),
            },
            audit: AuditSettings { top_m: 20 },
            heatmap: HeatmapSettings {
                members: vec![0],
                nx: 64,
                ny: 64,
                margin: 2.0,
            },
        }
    }

    /// Parses `text` over the defaults of its `profile` key (or
    /// `profile_override`, which wins).
    pub fn from_toml(text: &str, profile_override: Option<Profile>) -> CliResult<Self> {
        let user: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        let profile = match (profile_override, user.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::Config(format!("profile: {e}")))?,
            (None, None) => Profile::Ci,
        };
        let defaults = toml::Table::try_from(Self::profile_defaults(profile))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut merged = defaults;
        merge(&mut merged, user);
        merged.insert(
            "profile".into(),
            toml::Value::String(profile_name(profile).into()),
        );
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| CliError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile_override: Option<Profile>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, profile_override)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.grid.validate()?;
        self.gan.validate()?;
        self.downstream.classifier.validate()?;
        if self.pool_size == 0 {
            return bad("pool_size must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.ts.is_empty() || self.ts.contains(&0) {
            return bad("ts must list ensemble sizes ≥ 1".into());
        }
        if self.downstream.ts.contains(&0) {
            return bad("downstream.ts must list ensemble sizes ≥ 1".into());
        }
        if self.method == Method::Independent && self.max_t() > self.pool_size {
            return bad(format!(
                "ensemble size T={} exceeds pool_size {}",
                self.max_t(),
                self.pool_size
            ));
        }
        if self.train_size == 0 || self.test_size < 2 {
            return bad("train_size must be positive and test_size at least 2".into());
        }
        if !(self.downstream.tail_fraction > 0.0 && self.downstream.tail_fraction <= 1.0) {
            return bad("downstream.tail_fraction must lie in (0, 1]".into());
        }
        if self.bootstrap.eval_points == 0 || self.bootstrap.iterations == 0 {
            return bad("bootstrap.eval_points and bootstrap.iterations must be positive".into());
        }
        if self.heatmap.nx == 0 || self.heatmap.ny == 0 {
            return bad("heatmap resolution must be positive".into());
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.labels.class_count()
    }

    pub fn max_t(&self) -> usize {
        self.ts
            .iter()
            .chain(&self.downstream.ts)
            .copied()
            .max()
            .unwrap_or(1)
    }

    /// SHA-256 over the settings that determine results (`out` and
    /// `workers` excluded).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        canon.workers = 0;
        let json = serde_json::to_string(&canon).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Ci => "ci",
        Profile::Paper => "paper",
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
