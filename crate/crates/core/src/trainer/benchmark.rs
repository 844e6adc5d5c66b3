//! The standard drifting benchmark and multi-run suites (ablations, sweeps, seeds).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stream::{ClassSpec, Drift, TaskSchedule};

use super::{run_experiment, ExperimentConfig, RunRecord, TrainConfig, Variant};

/// Six classes in a four-dimensional raw space over four steps. Even classes
/// drift linearly, odd classes oscillate.
pub fn standard_benchmark() -> TaskSchedule {
    let base: [[f64; 4]; 6] = [
        [2.5, 0.0, 0.0, 0.0],
        [-2.5, 0.0, 0.0, 0.0],
        [0.0, 2.5, 0.0, 0.0],
        [0.0, -2.5, 0.0, 0.0],
        [0.0, 0.0, 2.5, 0.0],
        [0.0, 0.0, -2.5, 0.0],
    ];
    let linear: [[f64; 4]; 3] = [[0.0, 0.3, 0.0, 0.2], [0.3, 0.0, 0.0, -0.2], [0.2, -0.2, 0.0, 0.2]];
    let amplitude: [[f64; 4]; 3] = [[0.0, 0.0, 0.5, 0.4], [0.5, 0.0, 0.0, 0.4], [0.0, 0.5, 0.0, -0.4]];
    let classes = (0..6)
        .map(|c| ClassSpec {
            id: c,
            base_mean: base[c].to_vec(),
            drift: if c % 2 == 0 {
                Drift::Linear { vector: linear[c / 2].to_vec() }
            } else {
                Drift::Sinusoidal { amplitude: amplitude[c / 2].to_vec(), period: 4.0 }
            },
        })
        .collect();
    TaskSchedule {
        class_sets: vec![vec![0, 1], vec![2, 3], vec![4], vec![5]],
        timestamps: vec![0.0, 1.0, 2.0, 3.0],
        classes,
        noise: 1.0,
        samples_per_step: 400,
        rho_old: 0.005,
    }
}

pub fn standard_config(seed: u64, variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig {
            seed,
            variant,
            ..TrainConfig::default()
        },
        schedule: standard_benchmark(),
    }
}

/// Runs `cfg` once per seed, in parallel, returning records in seed order.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.train.seed = s;
            run_experiment(&c)
        })
        .collect()
}

pub const ABLATION_VARIANTS: [Variant; 6] = [
    Variant::Full,
    Variant::NoField,
    Variant::NoCurve,
    Variant::NoSep,
    Variant::NoTime,
    Variant::NoNorm,
];

/// Seed-averaged summary of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: usize,
    pub miou_all: f64,
    pub miou_old: f64,
    pub miou_new: f64,
    pub forgetting: f64,
    pub min_cosine_margin: f64,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl AblationRow {
    pub fn from_runs(variant: Variant, runs: &[RunRecord]) -> Self {
        Self {
            variant,
            seeds: runs.len(),
            miou_all: mean(runs.iter().map(|r| r.metrics.miou_all)),
            miou_old: mean(runs.iter().map(|r| r.metrics.miou_old)),
            miou_new: mean(runs.iter().map(|r| r.metrics.miou_new)),
            forgetting: mean(runs.iter().map(|r| r.metrics.forgetting)),
            min_cosine_margin: mean(runs.iter().map(|r| r.metrics.min_cosine_margin)),
        }
    }
}

pub type RunsByVariant = BTreeMap<Variant, Vec<RunRecord>>;

/// Runs every listed variant on the same seeds and stream.
pub fn run_ablation_suite(
    base: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<(RunsByVariant, Vec<AblationRow>)> {
    let jobs: Vec<(Variant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let runs: Vec<(Variant, RunRecord)> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let mut c = base.clone();
            c.train.variant = v;
            c.train.seed = s;
            Ok((v, run_experiment(&c)?))
        })
        .collect::<Result<_>>()?;
    let mut by_variant: BTreeMap<Variant, Vec<RunRecord>> = BTreeMap::new();
    for (v, r) in runs {
        by_variant.entry(v).or_default().push(r);
    }
    let rows = variants.iter().map(|v| AblationRow::from_runs(*v, &by_variant[v])).collect();
    Ok((by_variant, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub curve: f64,
    pub sep: f64,
    pub seeds: usize,
    pub miou_all: f64,
    pub forgetting: f64,
}

/// Grid over curvature and separation weights, seed-averaged per cell.
pub fn run_sweep(base: &ExperimentConfig, curve: &[f64], sep: &[f64], seeds: &[u64]) -> Result<Vec<SweepCell>> {
    if curve.is_empty() || sep.is_empty() || seeds.is_empty() {
        return Err(crate::Error::Argument("sweep grids and seed list must be non-empty".into()));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..curve.len())
        .flat_map(|i| (0..sep.len()).flat_map(move |j| seeds.iter().map(move |&s| (i, j, s))))
        .collect();
    let runs: Vec<((usize, usize), RunRecord)> = jobs
        .par_iter()
        .map(|&(i, j, s)| {
            let mut c = base.clone();
            c.train.weights.curve = curve[i];
            c.train.weights.sep = sep[j];
            c.train.seed = s;
            Ok(((i, j), run_experiment(&c)?))
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (i, &cw) in curve.iter().enumerate() {
        for (j, &sw) in sep.iter().enumerate() {
            let rs: Vec<&RunRecord> = runs.iter().filter(|(k, _)| *k == (i, j)).map(|(_, r)| r).collect();
            cells.push(SweepCell {
                curve: cw,
                sep: sw,
                seeds: rs.len(),
                miou_all: mean(rs.iter().map(|r| r.metrics.miou_all)),
                forgetting: mean(rs.iter().map(|r| r.metrics.forgetting)),
            });
        }
    }
    Ok(cells)
}
