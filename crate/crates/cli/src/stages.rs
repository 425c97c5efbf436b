//! Pipeline stages. Each stage reads its inputs from the run directory,
//! writes its outputs there and records them in the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Instant;

use ensgan_core::data::{assign_labels, sample_real, LabeledDataset};
use ensgan_core::downstream::{curve_stability, train_classifier, welch_greater, ClassifierConfig};
use ensgan_core::ensemble::{
    boost_iteration, boosted_mixture_weights, discriminator_scorer, pool_entry, sample_mixture,
    train_member, Allocation, BoostState, EnsembleMixture, ManifestMember, Method,
    MixtureComponent, MixtureManifest, PoolEntry, SamplePool,
};
use ensgan_core::gan::{GanMember, WeightedDataset};
use ensgan_core::metrics::{
    bootstrap_metrics, frechet_2d, mean_std, mode_report, nn_audit, score_heatmap, BootstrapRow,
};
use ensgan_core::rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const TRAIN_DATA: &str = "data/train.csv";
pub const TEST_DATA: &str = "data/test.csv";

pub fn pool_checkpoint(k: usize, i: usize) -> String {
    format!("pool/k{k}/m{i:03}.ckpt")
}

pub fn pool_cache(k: usize, i: usize) -> String {
    format!("pool/k{k}/m{i:03}.samples")
}

pub fn boost_checkpoint(k: usize, t: usize) -> String {
    format!("boost/k{k}/t{t:02}.ckpt")
}

pub fn boost_weights(k: usize, t: usize) -> String {
    format!("boost/k{k}/weights_t{t:02}.csv")
}

pub fn boost_state(k: usize) -> String {
    format!("boost/k{k}/state.json")
}

pub fn mixture_manifest(method: Method, t: usize) -> String {
    format!("mixtures/{}_T{t}.json", method.as_str())
}

pub fn synthetic_data(method: Method, t: usize) -> String {
    format!("synthetic/{}_T{t}.csv", method.as_str())
}

fn sidecar(rel: &str) -> String {
    format!("{rel}.meta.json")
}

fn derived(seed: u64, purpose: &str, index: u64) -> u64 {
    rng::derive_seed(seed, purpose, index)
}

/// An open run directory.
pub struct Run {
    pub config: ExperimentConfig,
    pub manifest: RunManifest,
    pub resume: bool,
    pub verbose: bool,
}

impl Run {
    pub fn open(config: ExperimentConfig, resume: bool) -> CliResult<Self> {
        let manifest = RunManifest::open(&config)?;
        Ok(Self {
            config,
            manifest,
            resume,
            verbose: false,
        })
    }

    pub fn out(&self) -> &Path {
        &self.config.out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.config.out.join(rel)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn record(&mut self, rel: &str, kind: &str) -> CliResult<()> {
        let out = self.config.out.clone();
        self.manifest.record(&out, rel, kind)
    }

    fn save(&self) -> CliResult<()> {
        self.manifest.save(&self.config.out)
    }

    fn finish(&mut self, stage: &str) -> CliResult<()> {
        self.manifest.mark_completed(stage);
        self.save()
    }

    fn write_text(&mut self, rel: &str, kind: &str, text: &str) -> CliResult<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, text)?;
        self.record(rel, kind)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, kind: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
        self.write_text(rel, kind, &text)
    }

    fn mkdir_for(&self, rel: &str) -> CliResult<()> {
        if let Some(dir) = self.path(rel).parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(())
    }

    fn require(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(CliError::MissingArtifact(format!(
                "{} (run the stage that produces it first)",
                p.display()
            )));
        }
        Ok(p)
    }

    /// Real training and test sets, generated on first use.
    pub fn datasets(&mut self) -> CliResult<(LabeledDataset, LabeledDataset)> {
        let mut sets = Vec::new();
        for (i, rel, n) in [
            (0, TRAIN_DATA, self.config.train_size),
            (1, TEST_DATA, self.config.test_size),
        ] {
            if self.manifest.is_current(self.out(), rel)
                && self.manifest.is_current(self.out(), &sidecar(rel))
            {
                sets.push(LabeledDataset::load_csv(&self.path(rel))?.0);
                continue;
            }
            let seed = derived(self.config.seed, "dataset", i);
            let spec = self.config.grid;
            let ds = assign_labels(
                &sample_real(&spec, n, seed),
                &spec,
                self.config.labels,
                seed,
            );
            self.mkdir_for(rel)?;
            ds.save_csv(&self.path(rel), &ds.meta(Some(self.config.labels), None))?;
            self.record(rel, "dataset")?;
            self.record(&sidecar(rel), "dataset-meta")?;
            self.manifest.seeds.insert(rel.into(), seed);
            sets.push(ds);
        }
        self.save()?;
        let test = sets.pop().expect("two sets");
        let train = sets.pop().expect("two sets");
        Ok((train, test))
    }

    fn check_partial(&self, stage: &str, done: usize, total: usize) -> CliResult<()> {
        if done > 0 && done < total && !self.resume {
            return Err(CliError::Config(format!(
                "{stage}: {done} of {total} units already present in {}; rerun with --resume to complete them",
                self.out().display()
            )));
        }
        Ok(())
    }

    /// Trains `pool_size` members per class and caches their samples.
    pub fn train_pool(&mut self) -> CliResult<()> {
        let (train, _) = self.datasets()?;
        let k_count = self.config.class_count();
        let p = self.config.pool_size;
        let all: Vec<(usize, usize)> = (0..k_count)
            .flat_map(|k| (0..p).map(move |i| (k, i)))
            .collect();
        let todo: Vec<(usize, usize)> = all
            .iter()
            .copied()
            .filter(|&(k, i)| {
                ![
                    pool_checkpoint(k, i),
                    sidecar(&pool_checkpoint(k, i)),
                    pool_cache(k, i),
                ]
                .iter()
                .all(|rel| self.manifest.is_current(self.out(), rel))
            })
            .collect();
        self.check_partial("train-pool", all.len() - todo.len(), all.len())?;
        if todo.is_empty() {
            self.log("train-pool: up to date");
            return self.finish("train-pool");
        }
        for (k, n) in train.class_counts().iter().enumerate() {
            if *n < self.config.gan.batch_size {
                return Err(CliError::Config(format!(
                    "class {k} has {n} training points, fewer than batch size {}",
                    self.config.gan.batch_size
                )));
            }
        }
        let classes: Vec<WeightedDataset> = (0..k_count)
            .map(|k| WeightedDataset::uniform(train.class_points(k)))
            .collect();
        let out = self.config.out.clone();
        for k in 0..k_count {
            fs::create_dir_all(out.join(format!("pool/k{k}")))?;
        }
        let (gan, seed, samples) = (
            self.config.gan.clone(),
            self.config.seed,
            self.config.bootstrap.samples_per_member,
        );
        let verbose = self.verbose;
        run_jobs(
            self.config.workers,
            todo,
            |(k, i), tx| {
                let start = Instant::now();
                let member = train_member(&classes[k], &gan, seed, i, k)?;
                member.save(&out.join(pool_checkpoint(k, i)))?;
                pool_entry(&member, i, k, samples, seed)?.save(&out.join(pool_cache(k, i)))?;
                if verbose {
                    eprintln!(
                        "train-pool: class {k} member {i} done in {:.1} s",
                        start.elapsed().as_secs_f64()
                    );
                }
                tx.send(Ok((k, i, member.seed))).ok();
                Ok(())
            },
            |(k, i, member_seed)| {
                self.record(&pool_checkpoint(k, i), "checkpoint")?;
                self.record(&sidecar(&pool_checkpoint(k, i)), "checkpoint-meta")?;
                self.record(&pool_cache(k, i), "sample-cache")?;
                self.manifest
                    .seeds
                    .insert(format!("pool/k{k}/m{i:03}"), member_seed);
                self.save()
            },
        )?;
        self.finish("train-pool")
    }

    /// Boosted training, `max T` members per class, resumable at iteration
    /// boundaries.
    pub fn boost(&mut self) -> CliResult<()> {
        let (train, _) = self.datasets()?;
        let k_count = self.config.class_count();
        let target = self.config.max_t();
        let mut states = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let rel = boost_state(k);
            let state = if self.manifest.is_current(self.out(), &rel) {
                let s: BoostState = serde_json::from_str(&fs::read_to_string(self.path(&rel))?)
                    .map_err(|e| CliError::MissingArtifact(format!("{rel}: {e}")))?;
                let members_ok = (0..s.iteration).all(|t| {
                    self.manifest
                        .is_current(self.out(), &boost_checkpoint(k, t))
                });
                if members_ok {
                    s
                } else {
                    BoostState::new(train.class_counts()[k])
                }
            } else {
                BoostState::new(train.class_counts()[k])
            };
            states.push(state);
        }
        let done: usize = states.iter().map(|s| s.iteration.min(target)).sum();
        self.check_partial("boost", done, target * k_count)?;
        let schedule = self.config.boost.beta_schedule.clone();
        for (k, mut state) in states.into_iter().enumerate() {
            let points = train.class_points(k);
            if points.rows() < self.config.gan.batch_size {
                return Err(CliError::Config(format!(
                    "class {k} has {} training points, fewer than batch size {}",
                    points.rows(),
                    self.config.gan.batch_size
                )));
            }
            self.mkdir_for(&boost_state(k))?;
            while state.iteration < target {
                let t = state.iteration;
                let start = Instant::now();
                let member = boost_iteration(
                    &points,
                    &mut state,
                    &self.config.gan,
                    &schedule,
                    self.config.seed,
                    k,
                    &discriminator_scorer,
                    t + 1 < target,
                )?;
                member.save(&self.path(&boost_checkpoint(k, t)))?;
                self.record(&boost_checkpoint(k, t), "checkpoint")?;
                self.record(&sidecar(&boost_checkpoint(k, t)), "checkpoint-meta")?;
                let mut csv = String::from("index,weight\n");
                for (i, w) in state.history[t].iter().enumerate() {
                    writeln!(csv, "{i},{w}").expect("string write");
                }
                self.write_text(&boost_weights(k, t), "boost-weights", &csv)?;
                let json = serde_json::to_string(&state).expect("state serializes") + "\n";
                self.write_text(&boost_state(k), "boost-state", &json)?;
                self.manifest
                    .seeds
                    .insert(format!("boost/k{k}/t{t:02}"), member.seed);
                self.save()?;
                self.log(format!(
                    "boost: class {k} iteration {t} done in {:.1} s",
                    start.elapsed().as_secs_f64()
                ));
            }
        }
        self.finish("boost")
    }

    fn members_for(&self, k: usize, t: usize) -> CliResult<Vec<(String, f64)>> {
        match self.config.method {
            Method::Independent => {
                if t > self.config.pool_size {
                    return Err(CliError::Config(format!(
                        "ensemble size T={t} exceeds pool_size {}",
                        self.config.pool_size
                    )));
                }
                Ok((0..t)
                    .map(|i| (pool_checkpoint(k, i), 1.0 / t as f64))
                    .collect())
            }
            Method::Boosted => {
                let rel = boost_state(k);
                self.require(&rel)?;
                let state: BoostState = serde_json::from_str(&fs::read_to_string(self.path(&rel))?)
                    .map_err(|e| CliError::MissingArtifact(format!("{rel}: {e}")))?;
                if t > state.iteration {
                    return Err(CliError::Config(format!(
                        "ensemble size T={t} exceeds the {} boosting iterations run for class {k}",
                        state.iteration
                    )));
                }
                let w = boosted_mixture_weights(&state.betas[..t]);
                Ok((0..t).map(|i| (boost_checkpoint(k, i), w[i])).collect())
            }
        }
    }

    /// Writes one mixture manifest per `T`.
    pub fn assemble(&mut self) -> CliResult<()> {
        for &t in &self.config.ts.clone() {
            let mut members = Vec::new();
            for k in 0..self.config.class_count() {
                for (iteration, (rel, weight)) in self.members_for(k, t)?.into_iter().enumerate() {
                    self.require(&rel)?;
                    members.push(ManifestMember {
                        checkpoint: PathBuf::from("..").join(&rel),
                        weight,
                        class: k,
                        iteration,
                    });
                }
            }
            let m = MixtureManifest {
                method: self.config.method,
                iterations: t,
                class_count: self.config.class_count(),
                master_seed: self.config.seed,
                members,
            };
            self.write_json(&mixture_manifest(self.config.method, t), "mixture", &m)?;
        }
        self.finish("assemble")
    }

    fn load_mixture(&self, t: usize) -> CliResult<EnsembleMixture> {
        let rel = mixture_manifest(self.config.method, t);
        let path = self.require(&rel)?;
        let m = MixtureManifest::load(&path)?;
        Ok(m.load_mixture(path.parent().expect("inside the run"))?)
    }

    /// Draws a synthetic training set of the real set's size from each mixture.
    pub fn sample(&mut self) -> CliResult<()> {
        for &t in &self.config.ts.clone() {
            let mix = self.load_mixture(t)?;
            let seed = derived(self.config.seed, "synthetic", t as u64);
            let ds = sample_mixture(
                &mix,
                self.config.train_size,
                seed,
                Allocation::ExactQuota,
                &self.config.grid,
            )?;
            let rel = synthetic_data(self.config.method, t);
            self.mkdir_for(&rel)?;
            let provenance = mixture_manifest(self.config.method, t);
            ds.save_csv(
                &self.path(&rel),
                &ds.meta(Some(self.config.labels), Some(provenance)),
            )?;
            self.record(&rel, "synthetic")?;
            self.record(&sidecar(&rel), "synthetic-meta")?;
            self.manifest.seeds.insert(rel, seed);
        }
        self.finish("sample")
    }

    fn load_pool(&self) -> CliResult<SamplePool> {
        let mut entries = Vec::new();
        for k in 0..self.config.class_count() {
            for i in 0..self.config.pool_size {
                entries.push(PoolEntry::load(&self.require(&pool_cache(k, i))?)?);
            }
        }
        Ok(SamplePool { entries })
    }

    /// Mode coverage per `T`: bootstrap over the pool for independent runs,
    /// repeated mixture draws for boosted ones.
    pub fn eval_modes(&mut self) -> CliResult<()> {
        let seed = derived(self.config.seed, "eval-modes", 0);
        let b = self.config.bootstrap.clone();
        let ts = self.config.ts.clone();
        let (rows, samples) = match self.config.method {
            Method::Independent => {
                let s = bootstrap_metrics(
                    &self.load_pool()?,
                    &ts,
                    b.eval_points,
                    b.iterations,
                    seed,
                    &self.config.grid,
                )?;
                (s.rows, s.samples)
            }
            Method::Boosted => {
                let mut rows = Vec::new();
                let mut samples = Vec::new();
                for &t in &ts {
                    let mix = self.load_mixture(t)?;
                    let mut modes = Vec::with_capacity(b.iterations);
                    let mut hq = Vec::with_capacity(b.iterations);
                    for it in 0..b.iterations {
                        let s = derived(seed, "boosted-draw", ((t as u64) << 32) | it as u64);
                        let ds = sample_mixture(
                            &mix,
                            b.eval_points,
                            s,
                            Allocation::ExactQuota,
                            &self.config.grid,
                        )?;
                        let rep = mode_report(&ds.points, &self.config.grid);
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
                (rows, samples)
            }
        };
        let mut csv = String::from("t,modes_mean,modes_std,hq_mean,hq_std\n");
        for r in &rows {
            writeln!(
                csv,
                "{},{},{},{},{}",
                r.t, r.modes_mean, r.modes_std, r.hq_mean, r.hq_std
            )
            .expect("string write");
        }
        self.write_text("reports/modes.csv", "report", &csv)?;
        let mut per = String::from("t,iteration,modes,hq_fraction\n");
        for (t, it, m, h) in &samples {
            writeln!(per, "{t},{it},{m},{h}").expect("string write");
        }
        self.write_text("reports/modes_iterations.csv", "report", &per)?;
        let summary = ModesSummary {
            method: self.config.method,
            eval_points: b.eval_points,
            iterations: b.iterations,
            rows,
        };
        self.write_json("reports/modes.json", "report", &summary)?;
        self.finish("eval-modes")
    }

    fn synthetic(&self, t: usize) -> CliResult<LabeledDataset> {
        Ok(LabeledDataset::load_csv(&self.require(&synthetic_data(self.config.method, t))?)?.0)
    }

    /// Fréchet distance between the real test set and each synthetic set.
    pub fn eval_frechet(&mut self) -> CliResult<()> {
        let (train, test) = self.datasets()?;
        let mut rows = vec![FrechetRow {
            source: "real_train".into(),
            t: 0,
            frechet: frechet_2d(&test.points, &train.points)?,
        }];
        for &t in &self.config.ts.clone() {
            rows.push(FrechetRow {
                source: self.config.method.as_str().into(),
                t,
                frechet: frechet_2d(&test.points, &self.synthetic(t)?.points)?,
            });
        }
        let mut csv = String::from("source,t,frechet\n");
        for r in &rows {
            writeln!(csv, "{},{},{}", r.source, r.t, r.frechet).expect("string write");
        }
        self.write_text("reports/frechet.csv", "report", &csv)?;
        self.write_json("reports/frechet.json", "report", &rows)?;
        self.finish("eval-frechet")
    }

    /// Closest synthetic–real training pairs for each `T`.
    pub fn nn_audit(&mut self) -> CliResult<()> {
        let (train, _) = self.datasets()?;
        let mut csv = String::from("t,rank,synth_index,real_index,distance\n");
        let mut minima = Vec::new();
        for &t in &self.config.ts.clone() {
            let pairs = nn_audit(
                &train.points,
                &self.synthetic(t)?.points,
                self.config.audit.top_m,
            )?;
            for (rank, p) in pairs.iter().enumerate() {
                writeln!(
                    csv,
                    "{t},{rank},{},{},{}",
                    p.synth_index, p.real_index, p.distance
                )
                .expect("string write");
            }
            minima.push(AuditRow {
                t,
                min_distance: pairs.first().map_or(f64::NAN, |p| p.distance),
            });
        }
        self.write_text("reports/nn_audit.csv", "report", &csv)?;
        self.write_json("reports/nn_audit.json", "report", &minima)?;
        self.finish("nn-audit")
    }

    /// Discriminator score grids for the configured class-0 members.
    pub fn heatmap(&mut self) -> CliResult<()> {
        let h = self.config.heatmap.clone();
        let bounds = self.config.grid.bounds(h.margin);
        for &m in &h.members {
            let rel = match self.config.method {
                Method::Independent => pool_checkpoint(0, m),
                Method::Boosted => boost_checkpoint(0, m),
            };
            let member = GanMember::load(&self.require(&rel)?)?;
            let map = score_heatmap(&member, bounds, h.nx, h.ny)?;
            let mut text = String::new();
            writeln!(text, "# discriminator scores at cell centers of {rel}")
                .expect("string write");
            writeln!(
                text,
                "# bounds x_min={} x_max={} y_min={} y_max={} nx={} ny={}",
                bounds[0], bounds[1], bounds[2], bounds[3], h.nx, h.ny
            )
            .expect("string write");
            writeln!(
                text,
                "# line r holds y = y_min + (r + 0.5)(y_max - y_min)/ny; column c holds x = x_min + (c + 0.5)(x_max - x_min)/nx"
            )
            .expect("string write");
            for row in map.scores.chunks(h.nx) {
                let line: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(text, "{}", line.join(",")).expect("string write");
            }
            let out = format!(
                "reports/heatmap_{}_k0_m{m:03}.csv",
                self.config.method.as_str()
            );
            self.write_text(&out, "report", &text)?;
        }
        self.finish("heatmap")
    }

    /// Train-on-synthetic, test-on-real curves for each `(T, seed)`.
    pub fn downstream(&mut self) -> CliResult<()> {
        let (_, test) = self.datasets()?;
        let d = self.config.downstream.clone();
        let k_count = self.config.class_count();
        let method = self.config.method;
        let mut cache: BTreeMap<String, Arc<GanMember>> = BTreeMap::new();
        let mut jobs = Vec::new();
        for &t in &d.ts {
            for s in 0..d.seeds {
                let mut components = Vec::new();
                for k in 0..k_count {
                    let chosen = self.members_for(k, t)?;
                    let chosen: Vec<(String, f64)> = match method {
                        Method::Independent if d.rotate_members => (0..t)
                            .map(|j| {
                                (
                                    pool_checkpoint(k, (s + j) % self.config.pool_size),
                                    1.0 / t as f64,
                                )
                            })
                            .collect(),
                        _ => chosen,
                    };
                    for (iteration, (rel, weight)) in chosen.into_iter().enumerate() {
                        let member = match cache.get(&rel) {
                            Some(m) => m.clone(),
                            None => {
                                let m = Arc::new(GanMember::load(&self.require(&rel)?)?);
                                cache.insert(rel.clone(), m.clone());
                                m
                            }
                        };
                        components.push(MixtureComponent {
                            member,
                            weight,
                            class: k,
                            iteration,
                        });
                    }
                }
                let mix = EnsembleMixture {
                    components,
                    iterations: t,
                    class_count: k_count,
                    method,
                    master_seed: self.config.seed,
                };
                mix.validate()?;
                jobs.push((t, s, mix));
            }
        }
        let (n, grid, seed) = (self.config.train_size, self.config.grid, self.config.seed);
        let classifier = d.classifier.clone();
        let verbose = self.verbose;
        let mut results: BTreeMap<(usize, usize), DownstreamRun> = BTreeMap::new();
        run_jobs(
            self.config.workers,
            jobs,
            |(t, s, mix), tx| {
                let sample_seed = derived(seed, "downstream-sample", ((t as u64) << 32) | s as u64);
                let synthetic =
                    sample_mixture(&mix, n, sample_seed, Allocation::ExactQuota, &grid)?;
                let cfg = ClassifierConfig {
                    seed: derived(seed, "classifier", s as u64),
                    ..classifier.clone()
                };
                let outcome = train_classifier(&synthetic, &test, &cfg)?;
                let stability = curve_stability(&outcome.curve, d.tail_fraction)?;
                if verbose {
                    eprintln!(
                        "downstream: T={t} seed {s} best {:.4}",
                        outcome.curve.best_accuracy
                    );
                }
                tx.send(Ok(DownstreamRun {
                    t,
                    seed: s,
                    best_accuracy: outcome.curve.best_accuracy,
                    final_accuracy: outcome.curve.final_accuracy,
                    tail_mean: stability.tail_mean,
                    tail_std: stability.tail_std,
                    best_minus_final: stability.best_minus_final,
                    missing_classes: outcome.missing_classes,
                    curve: outcome.curve.points,
                }))
                .ok();
                Ok(())
            },
            |r| {
                results.insert((r.t, r.seed), r);
                Ok(())
            },
        )?;
        let m = method.as_str();
        let mut summary =
            String::from("method,t,seed,best_accuracy,final_accuracy,tail_mean,tail_std,best_minus_final,missing_classes\n");
        for r in results.values() {
            let mut curve = String::from("step,accuracy\n");
            for (step, acc) in &r.curve {
                writeln!(curve, "{step},{acc}").expect("string write");
            }
            self.write_text(
                &format!("reports/downstream/{m}_T{}_s{:02}.csv", r.t, r.seed),
                "report",
                &curve,
            )?;
            let missing: Vec<String> = r.missing_classes.iter().map(usize::to_string).collect();
            writeln!(
                summary,
                "{m},{},{},{},{},{},{},{},{}",
                r.t,
                r.seed,
                r.best_accuracy,
                r.final_accuracy,
                r.tail_mean,
                r.tail_std,
                r.best_minus_final,
                missing.join(" ")
            )
            .expect("string write");
        }
        self.write_text("reports/downstream_summary.csv", "report", &summary)?;
        let aggregate = DownstreamAggregate::from_runs(method, &d.ts, &results)?;
        self.write_json("reports/downstream.json", "report", &aggregate)?;
        self.finish("downstream")
    }

    /// Merges the stage reports into `reports/summary.json` after checking
    /// every recorded artifact.
    pub fn report(&mut self) -> CliResult<Summary> {
        self.manifest.verify(self.out())?;
        let read = |rel: &str| -> CliResult<Option<serde_json::Value>> {
            let p = self.path(rel);
            if !p.exists() {
                return Ok(None);
            }
            serde_json::from_str(&fs::read_to_string(&p)?)
                .map(Some)
                .map_err(|e| CliError::MissingArtifact(format!("{rel}: {e}")))
        };
        let summary = Summary {
            config_hash: self.manifest.config_hash.clone(),
            method: self.config.method,
            profile: crate::config::profile_name(self.config.profile).into(),
            modes: read("reports/modes.json")?,
            frechet: read("reports/frechet.json")?,
            nn_audit: read("reports/nn_audit.json")?,
            downstream: read("reports/downstream.json")?,
        };
        self.write_json("reports/summary.json", "report", &summary)?;
        let orphans = self.manifest.orphans(self.out())?;
        if !orphans.is_empty() {
            self.log(format!(
                "report: files not listed in the manifest: {orphans:?}"
            ));
        }
        self.finish("report")?;
        Ok(summary)
    }

    /// Every stage for the configured method, in order.
    pub fn run_all(&mut self) -> CliResult<Summary> {
        match self.config.method {
            Method::Independent => self.train_pool()?,
            Method::Boosted => self.boost()?,
        }
        self.assemble()?;
        self.sample()?;
        self.eval_modes()?;
        self.eval_frechet()?;
        self.nn_audit()?;
        self.heatmap()?;
        self.downstream()?;
        self.report()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModesSummary {
    pub method: Method,
    pub eval_points: usize,
    pub iterations: usize,
    pub rows: Vec<BootstrapRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrechetRow {
    pub source: String,
    pub t: usize,
    pub frechet: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditRow {
    pub t: usize,
    pub min_distance: f64,
}

#[derive(Debug, Clone)]
struct DownstreamRun {
    t: usize,
    seed: usize,
    best_accuracy: f64,
    final_accuracy: f64,
    tail_mean: f64,
    tail_std: f64,
    best_minus_final: f64,
    missing_classes: Vec<usize>,
    curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct DownstreamRow {
    pub t: usize,
    pub runs: usize,
    pub best_mean: f64,
    pub best_std: f64,
    pub tail_std_mean: f64,
    pub best_accuracies: Vec<f64>,
    pub tail_stds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct DownstreamAggregate {
    pub method: Method,
    pub rows: Vec<DownstreamRow>,
    /// One-sided Welch test that the largest `T` beats the smallest on best
    /// accuracy; absent with fewer than two sizes or seeds.
    pub welch_t: Option<f64>,
    pub welch_p: Option<f64>,
}

impl DownstreamAggregate {
    fn from_runs(
        method: Method,
        ts: &[usize],
        runs: &BTreeMap<(usize, usize), DownstreamRun>,
    ) -> CliResult<Self> {
        let mut sizes = ts.to_vec();
        sizes.sort_unstable();
        sizes.dedup();
        let rows: Vec<DownstreamRow> = sizes
            .iter()
            .map(|&t| {
                let mine: Vec<&DownstreamRun> = runs.values().filter(|r| r.t == t).collect();
                let best: Vec<f64> = mine.iter().map(|r| r.best_accuracy).collect();
                let tails: Vec<f64> = mine.iter().map(|r| r.tail_std).collect();
                let (best_mean, best_std) = mean_std(&best);
                DownstreamRow {
                    t,
                    runs: mine.len(),
                    best_mean,
                    best_std,
                    tail_std_mean: mean_std(&tails).0,
                    best_accuracies: best,
                    tail_stds: tails,
                }
            })
            .collect();
        let (mut welch_t, mut welch_p) = (None, None);
        if let (Some(lo), Some(hi)) = (rows.first(), rows.last()) {
            if rows.len() > 1 && lo.runs > 1 && hi.runs > 1 {
                let (t, p) = welch_greater(&hi.best_accuracies, &lo.best_accuracies)?;
                welch_t = Some(t);
                welch_p = Some(p);
            }
        }
        Ok(Self {
            method,
            rows,
            welch_t,
            welch_p,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub method: Method,
    pub profile: String,
    pub modes: Option<serde_json::Value>,
    pub frechet: Option<serde_json::Value>,
    pub nn_audit: Option<serde_json::Value>,
    pub downstream: Option<serde_json::Value>,
}

/// Runs `work` over `jobs` on up to `workers` threads; messages the workers
/// send are handed to `done` on the calling thread, in arrival order. The
/// first error stops the remaining jobs from starting.
fn run_jobs<J, M, W, D>(workers: usize, jobs: Vec<J>, work: W, mut done: D) -> CliResult<()>
where
    J: Send,
    M: Send,
    W: Fn(J, &mpsc::Sender<CliResult<M>>) -> CliResult<()> + Sync,
    D: FnMut(M) -> CliResult<()>,
{
    let threads = workers.clamp(1, jobs.len().max(1));
    let queue = Mutex::new(jobs.into_iter());
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            let tx = tx.clone();
            let (queue, work) = (&queue, &work);
            scope.spawn(move || loop {
                let job = queue.lock().expect("queue lock").next();
                let Some(job) = job else { break };
                if let Err(e) = work(job, &tx) {
                    tx.send(Err(e)).ok();
                    break;
                }
            });
        }
        drop(tx);
        let mut first_err = None;
        for msg in rx {
            if let Err(e) = msg.and_then(&mut done) {
                queue.lock().expect("queue lock").by_ref().for_each(drop);
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    })
}
