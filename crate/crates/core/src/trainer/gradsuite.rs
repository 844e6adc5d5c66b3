//! Finite-difference verification of the joint objective on random small instances.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flowfield::{FlowField, TimeEncodingConfig};
use crate::losses::LossWeights;
use crate::model::{freeze_teacher, Encoder, Head, HeadInit};
use crate::numkit::gradcheck::{finite_diff_grad, max_relative_error};
use crate::numkit::linalg::RealVector;
use crate::numkit::rng::Rng;
use crate::protobank::{PrototypeBank, PrototypeTrajectory, Snapshot, Trajectories};
use crate::stream::{ClassId, Sample};

use super::objective::{joint_objective, ModelState, ObjectiveContext};
use super::Variant;

pub const FD_EPS: f64 = 1e-5;
/// Coordinates whose analytic and numeric magnitudes are both below this are skipped.
pub const FD_FLOOR: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub seed: u64,
    pub name: String,
    pub feature_dim: usize,
    pub classes: usize,
    pub params: usize,
    pub loss: f64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub tolerance: f64,
    pub cases: Vec<GradCase>,
}

impl GradSuiteReport {
    pub fn worst(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.cases.iter().all(|c| c.max_rel_error <= self.tolerance)
    }
}

struct Instance {
    model: ModelState,
    teacher: crate::model::TeacherSnapshot,
    old_rows: usize,
    first_steps: BTreeMap<ClassId, usize>,
    trajectories: Trajectories,
    bank: PrototypeBank,
    learned: Vec<ClassId>,
    timestamps: Vec<f64>,
    batch: Vec<Sample>,
}

fn random_vec(n: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal()).collect()
}

/// Step-2 instance: `k − 1` old classes with two snapshots each, one new class,
/// and the last old class absent from the batch so its banked value is used.
fn instance(rng: &mut Rng) -> Result<Instance> {
    let d = 2 + rng.below(7);
    let k = 2 + rng.below(4);
    let p = 2 + rng.below(4);
    let d_tau = 4;
    let time = TimeEncodingConfig { d_tau, ..Default::default() };
    let encoder = Encoder::new(p, 6, d, rng)?;
    let mut head = Head::empty(d);
    let old: Vec<ClassId> = (0..k - 1).collect();
    head.grow(&old, HeadInit::Random(0.5), rng)?;
    let teacher_enc = Encoder::new(p, 6, d, rng)?;
    let teacher = freeze_teacher(&teacher_enc, &head);
    head.grow(&[k - 1], HeadInit::Random(0.5), rng)?;
    for b in head.bias.iter_mut() {
        *b = 0.1 * rng.normal();
    }
    let mut field = FlowField::new(d, 8, time, true, rng)?;
    for w in field.params.w2.as_mut_slice() {
        *w *= 10.0;
    }
    for b in field.params.b1.iter_mut() {
        *b = 0.3 * rng.normal();
    }

    let timestamps = vec![0.0, 1.0, 2.5];
    let mut first_steps = BTreeMap::new();
    let mut trajectories = Trajectories::new();
    let mut bank = PrototypeBank::new(0.1)?;
    for &c in &old {
        first_steps.insert(c, 0);
        let snaps = (0..2)
            .map(|s| Snapshot { step: s, tau: timestamps[s], proto: random_vec(d, 1.0, rng).into() })
            .collect();
        trajectories.insert(c, PrototypeTrajectory { class: c, first_step: 0, snapshots: snaps });
        bank.update(c, &random_vec(d, 1.0, rng))?;
    }
    first_steps.insert(k - 1, 2);
    let learned: Vec<ClassId> = (0..k).collect();
    let present: Vec<ClassId> = if k > 2 { (0..k).filter(|&c| c != k - 2).collect() } else { learned.clone() };
    let mut batch = Vec::new();
    for (i, &c) in present.iter().cycle().take(2 * present.len() + 1).enumerate() {
        batch.push(Sample {
            x: RealVector::from(random_vec(p, 1.0, rng)),
            y: c,
            step: if i % 3 == 0 { 1 } else { 2 },
            timestamp: if i % 3 == 0 { 1.0 } else { 2.5 },
        });
    }
    Ok(Instance {
        model: ModelState { encoder, head, field: Some(field) },
        teacher,
        old_rows: k - 1,
        first_steps,
        trajectories,
        bank,
        learned,
        timestamps,
        batch,
    })
}

fn cases() -> Vec<(&'static str, Variant, LossWeights)> {
    let base = LossWeights::default();
    let only = |dist: f64, flow: f64, curve: f64, sep: f64| LossWeights { dist, flow, curve, sep, ..base.clone() };
    vec![
        ("cross_entropy", Variant::Full, only(0.0, 0.0, 0.0, 0.0)),
        ("distillation", Variant::Full, only(1.0, 0.0, 0.0, 0.0)),
        ("flow", Variant::Full, only(0.0, 1.0, 0.0, 0.0)),
        ("curvature", Variant::Full, only(0.0, 0.0, 1.0, 0.0)),
        ("separation", Variant::Full, LossWeights { margin: 1.5, ..only(0.0, 0.0, 0.0, 1.0) }),
        ("joint", Variant::Full, LossWeights { margin: 1.5, ..base.clone() }),
        ("joint_raw", Variant::NoNorm, LossWeights { margin: 1.5, ..base }),
    ]
}

fn check_case(seed: u64, name: &str, variant: Variant, weights: &LossWeights) -> Result<GradCase> {
    let root = Rng::new(seed);
    for attempt in 0.. {
        let mut rng = root.split(attempt);
        let inst = instance(&mut rng)?;
        let batch: Vec<&Sample> = inst.batch.iter().collect();
        let ctx = ObjectiveContext {
            step: 2,
            variant,
            weights,
            teacher: Some(&inst.teacher),
            old_rows: inst.old_rows,
            first_steps: &inst.first_steps,
            trajectories: &inst.trajectories,
            bank: &inst.bank,
            learned: &inst.learned,
            timestamps: &inst.timestamps,
        };
        let eval = joint_objective(&inst.model, &ctx, &batch)?;
        if eval.min_kink < KINK_MARGIN {
            continue;
        }
        let flat = inst.model.to_flat();
        let mut probe = inst.model.clone();
        let numeric = finite_diff_grad(
            |x| {
                probe.set_flat(x).expect("same layout");
                joint_objective(&probe, &ctx, &batch).map_or(f64::NAN, |e| e.breakdown.total)
            },
            &flat,
            FD_EPS,
        )?;
        return Ok(GradCase {
            seed,
            name: name.to_string(),
            feature_dim: inst.model.encoder.feature_dim(),
            classes: inst.learned.len(),
            params: flat.len(),
            loss: eval.breakdown.total,
            max_rel_error: max_relative_error(&eval.grads.to_flat(), &numeric, FD_FLOOR),
        });
    }
    unreachable!()
}

/// Checks every loss term and the joint objective on `seeds` random instances.
pub fn gradient_suite(seeds: &[u64], tolerance: f64) -> Result<GradSuiteReport> {
    let jobs: Vec<(u64, &'static str, Variant, LossWeights)> = seeds
        .iter()
        .flat_map(|&s| cases().into_iter().map(move |(n, v, w)| (s, n, v, w)))
        .collect();
    let cases = jobs
        .par_iter()
        .map(|(s, n, v, w)| check_case(*s, n, *v, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradSuiteReport { tolerance, cases })
}
