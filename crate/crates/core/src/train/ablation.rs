//! Four-arm comparison over shared cross-validation folds.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{EnsembleMode, ModelKind, TrainConfig};
use super::trainer::{evaluate, train};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{kfold_split, mean_std, split_hash, FoldSummary, MetricsReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// One U-Net on the raw image.
    Baseline,
    /// Both networks, no ensemble term.
    None,
    /// Both networks, frozen unit weights.
    Fixed,
    /// Both networks, learned weights.
    Automated,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::None, Arm::Fixed, Arm::Automated];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::None => "none",
            Arm::Fixed => "fixed",
            Arm::Automated => "automated",
        }
    }

    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        let (model, ensemble_mode) = match self {
            Arm::Baseline => (ModelKind::Baseline, base.ensemble_mode),
            Arm::None => (ModelKind::Pipeline, EnsembleMode::None),
            Arm::Fixed => (ModelKind::Pipeline, EnsembleMode::Fixed),
            Arm::Automated => (ModelKind::Pipeline, EnsembleMode::Automated),
        };
        TrainConfig {
            model,
            ensemble_mode,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub folds: usize,
    /// Validation images drawn from each fold's non-test part.
    pub val: usize,
    /// One full set of folds and arms per seed; the seed drives the split,
    /// initialization and shuffling.
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            folds: 3,
            val: 20,
            seeds: vec![1, 2, 3],
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub arm: Arm,
    pub seed: u64,
    pub fold: usize,
    pub split_hash: u64,
    pub best_epoch: u64,
    pub test: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub class_names: Vec<String>,
    pub seeds: Vec<u64>,
    /// Ordered by seed, then arm, then fold.
    pub runs: Vec<RunResult>,
}

struct Job {
    arm: Arm,
    seed: u64,
    fold: usize,
    hash: u64,
}

/// Trains every arm on every fold for every seed and scores the
/// best-validation checkpoint on the fold's test images.
pub fn ablate(
    base: &TrainConfig,
    ab: &AblationConfig,
    samples: &[Sample],
    class_names: &[String],
    on_run: impl Fn(&RunResult) + Sync,
) -> Result<AblationReport> {
    if ab.seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "ablation needs at least one seed".into(),
        ));
    }
    let mut splits = Vec::new();
    let mut jobs = Vec::new();
    for &seed in &ab.seeds {
        let folds = kfold_split(samples.len(), ab.folds, ab.val, seed)?;
        let hash = split_hash(&folds);
        for arm in Arm::ALL {
            for fold in 0..folds.len() {
                jobs.push(Job {
                    arm,
                    seed,
                    fold,
                    hash,
                });
            }
        }
        splits.push(folds);
    }
    for a in Arm::ALL {
        a.config(base).validate()?;
    }

    let threads = match ab.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunResult>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(job) = jobs.get(i) else { break };
        let si = ab
            .seeds
            .iter()
            .position(|&s| s == job.seed)
            .expect("job seed is listed");
        let f = &splits[si][job.fold];
        let cfg = TrainConfig {
            seed: job.seed,
            ..job.arm.config(base)
        };
        let res = train(&cfg, samples, &f.train, &f.val, |_| {}).and_then(|out| {
            Ok(RunResult {
                arm: job.arm,
                seed: job.seed,
                fold: job.fold,
                split_hash: job.hash,
                best_epoch: out.best.epoch,
                test: evaluate(&out.best.model, samples, &f.test, cfg.batch)?,
            })
        });
        if let Ok(r) = &res {
            on_run(r);
        }
        let failed = res.is_err();
        results
            .lock()
            .expect("no worker panics while holding the lock")[i] = Some(res);
        if failed {
            next.store(jobs.len(), Ordering::Relaxed);
        }
    };
    std::thread::scope(|s| {
        for _ in 1..threads {
            s.spawn(work);
        }
        work();
    });

    let mut runs = Vec::with_capacity(jobs.len());
    for r in results.into_inner().expect("workers joined") {
        match r {
            Some(r) => runs.push(r?),
            None => {
                return Err(Error::InvalidArgument(
                    "ablation stopped after a failed run".into(),
                ))
            }
        }
    }
    let report = AblationReport {
        class_names: class_names.to_vec(),
        seeds: ab.seeds.clone(),
        runs,
    };
    report.check_splits()?;
    Ok(report)
}

impl AblationReport {
    pub fn arm_runs(&self, arm: Arm) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.arm == arm)
    }

    /// Every arm saw the same folds for each seed.
    pub fn check_splits(&self) -> Result<()> {
        for &seed in &self.seeds {
            let mut hashes = self
                .runs
                .iter()
                .filter(|r| r.seed == seed)
                .map(|r| r.split_hash);
            if let Some(first) = hashes.next() {
                if hashes.any(|h| h != first) {
                    return Err(Error::InvalidArgument(format!(
                        "arms used different splits for seed {seed}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Test reports of every fold and seed for `arm`.
    pub fn summary(&self, arm: Arm) -> FoldSummary {
        FoldSummary {
            folds: self.arm_runs(arm).map(|r| r.test.clone()).collect(),
        }
    }

    /// Fold-mean mIoU for each seed, in seed order.
    pub fn seed_mious(&self, arm: Arm) -> Vec<f64> {
        self.seeds
            .iter()
            .map(|&s| {
                let v: Vec<f64> = self
                    .arm_runs(arm)
                    .filter(|r| r.seed == s)
                    .map(|r| r.test.miou)
                    .collect();
                mean_std(&v).0
            })
            .collect()
    }

    pub fn median_miou(&self, arm: Arm) -> f64 {
        let mut v = self.seed_mious(arm);
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }

    /// `arm,miou_mean,miou_std,<class>_iou_mean,<class>_iou_std,...,median_seed_miou`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,miou_mean,miou_std");
        for n in &self.class_names {
            let _ = write!(s, ",{n}_iou_mean,{n}_iou_std");
        }
        s.push_str(",median_seed_miou\n");
        for arm in Arm::ALL {
            let sum = self.summary(arm);
            let (m, sd) = sum.miou();
            let _ = write!(s, "{},{m},{sd}", arm.name());
            for c in 0..self.class_names.len() {
                let (m, sd) = sum.class_iou(c);
                let _ = write!(s, ",{m},{sd}");
            }
            let _ = writeln!(s, ",{}", self.median_miou(arm));
        }
        s
    }

    /// Fixed-width table in percentage points, `mean (±std)`.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:>16}", "arm", "mIoU");
        for n in &self.class_names {
            let _ = write!(s, " {n:>16}");
        }
        s.push('\n');
        let cell = |(m, sd): (f64, f64)| format!("{:.2} (±{:.2})", 100.0 * m, 100.0 * sd);
        for arm in Arm::ALL {
            let sum = self.summary(arm);
            let _ = write!(s, "{:<10} {:>16}", arm.name(), cell(sum.miou()));
            for c in 0..self.class_names.len() {
                let _ = write!(s, " {:>16}", cell(sum.class_iou(c)));
            }
            s.push('\n');
        }
        s
    }
}
