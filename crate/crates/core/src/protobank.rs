//! Prototype estimation, the EMA prototype bank, trajectory storage and
//! discrete trajectory geometry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::linalg::{dot, norm, norm_sq, sub, RealVector};
use crate::stream::ClassId;

/// Norms at or below this are rejected by [`normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Mean feature of the samples labelled `class`, or `None` when the class is absent.
///
/// The gradient of any loss w.r.t. each contributing feature is the loss
/// gradient w.r.t. the prototype divided by the class count.
pub fn batch_prototype<F: AsRef<[f64]>>(features: &[F], labels: &[ClassId], class: ClassId) -> Option<RealVector> {
    let mut count = 0usize;
    let mut acc: Option<Vec<f64>> = None;
    for (f, &y) in features.iter().zip(labels) {
        if y != class {
            continue;
        }
        let f = f.as_ref();
        let a = acc.get_or_insert_with(|| vec![0.0; f.len()]);
        for (ai, fi) in a.iter_mut().zip(f) {
            *ai += fi;
        }
        count += 1;
    }
    acc.map(|a| a.into_iter().map(|v| v / count as f64).collect::<Vec<_>>().into())
}

/// `v / ‖v‖`.
pub fn normalize(v: &[f64]) -> Result<RealVector> {
    let n = norm(v);
    if !(n > NORM_EPS) {
        return Err(Error::DegeneratePrototype(n));
    }
    Ok(v.iter().map(|x| x / n).collect::<Vec<_>>().into())
}

/// Pulls a gradient w.r.t. `v / ‖v‖` back to `v`: `(g − n (n·g)) / ‖v‖`.
pub fn normalize_backward(v: &[f64], grad_unit: &[f64]) -> Vec<f64> {
    let n = norm(v);
    let unit: Vec<f64> = v.iter().map(|x| x / n).collect();
    let proj = dot(&unit, grad_unit);
    grad_unit
        .iter()
        .zip(&unit)
        .map(|(g, u)| (g - u * proj) / n)
        .collect()
}

/// Running EMA prototype per learned class. Stored values carry no gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub alpha: f64,
    protos: BTreeMap<ClassId, RealVector>,
}

impl PrototypeBank {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha, protos: BTreeMap::new() })
    }

    pub fn get(&self, class: ClassId) -> Option<&RealVector> {
        self.protos.get(&class)
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.protos.contains_key(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.protos.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.protos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protos.is_empty()
    }

    /// EMA update with the bank's own `alpha`.
    pub fn update(&mut self, class: ClassId, batch_proto: &[f64]) -> Result<()> {
        let alpha = self.alpha;
        ema_update(self, class, batch_proto, alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("EMA alpha must lie in (0, 1], got {alpha}")))
    }
}

/// `μ ← (1 − α) μ + α μ̃`; an unregistered class starts at `μ̃`.
pub fn ema_update(bank: &mut PrototypeBank, class: ClassId, batch_proto: &[f64], alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    if batch_proto.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("batch prototype of class {class}")));
    }
    match bank.protos.get_mut(&class) {
        Some(mu) => {
            if mu.dim() != batch_proto.len() {
                return Err(Error::Shape("prototype dimension changed".into()));
            }
            for (m, b) in mu.iter_mut().zip(batch_proto) {
                *m = (1.0 - alpha) * *m + alpha * b;
            }
        }
        None => {
            bank.protos.insert(class, batch_proto.into());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub tau: f64,
    pub proto: RealVector,
}

/// Ordered end-of-step prototypes of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTrajectory {
    pub class: ClassId,
    pub first_step: usize,
    pub snapshots: Vec<Snapshot>,
}

impl PrototypeTrajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn at_step(&self, step: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.step == step)
    }

    pub fn points(&self) -> Vec<RealVector> {
        self.snapshots.iter().map(|s| s.proto.clone()).collect()
    }

    pub fn unit_points(&self) -> Result<Vec<RealVector>> {
        self.snapshots.iter().map(|s| normalize(&s.proto)).collect()
    }
}

pub type Trajectories = BTreeMap<ClassId, PrototypeTrajectory>;

/// Appends every banked prototype as the step-`t` snapshot of its class.
pub fn snapshot(bank: &PrototypeBank, t: usize, tau: f64, trajectories: &mut Trajectories) -> Result<()> {
    for (&c, mu) in &bank.protos {
        let traj = trajectories.entry(c).or_insert_with(|| PrototypeTrajectory {
            class: c,
            first_step: t,
            snapshots: Vec::new(),
        });
        if traj.snapshots.last().is_some_and(|s| s.step >= t) {
            return Err(Error::State(format!("class {c} already has a snapshot at step {t}")));
        }
        traj.snapshots.push(Snapshot { step: t, tau, proto: mu.clone() });
    }
    Ok(())
}

/// First and second differences of a trajectory and the quantities built on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGeometry {
    /// `v^{(t)} = μ^{(t)} − μ^{(t−1)}`
    pub velocities: Vec<Vec<f64>>,
    /// `κ^{(t)} = μ^{(t+1)} − 2μ^{(t)} + μ^{(t−1)}`
    pub curvatures: Vec<Vec<f64>>,
    pub curvature_norms: Vec<f64>,
    /// `S = Σ ‖v^{(t)}‖`
    pub path_length: f64,
    /// `‖v^{(1)}‖² + Σ ‖κ^{(t)}‖²`; `None` for a single point.
    pub curvature_energy: Option<f64>,
    /// Mean curvature magnitude; `None` with fewer than three points.
    pub mean_curvature: Option<f64>,
}

impl TrajectoryGeometry {
    pub fn sum_sq_velocity(&self) -> f64 {
        self.velocities.iter().map(|v| norm_sq(v)).sum()
    }

    /// Number of velocity terms `T`.
    pub fn horizon(&self) -> usize {
        self.velocities.len()
    }
}

pub fn geometry<P: AsRef<[f64]>>(points: &[P]) -> TrajectoryGeometry {
    let velocities: Vec<Vec<f64>> = points
        .windows(2)
        .map(|w| sub(w[1].as_ref(), w[0].as_ref()))
        .collect();
    let curvatures: Vec<Vec<f64>> = velocities.windows(2).map(|w| sub(&w[1], &w[0])).collect();
    let curvature_norms: Vec<f64> = curvatures.iter().map(|k| norm(k)).collect();
    let path_length = velocities.iter().map(|v| norm(v)).sum();
    let curvature_energy = velocities
        .first()
        .map(|v1| norm_sq(v1) + curvatures.iter().map(|k| norm_sq(k)).sum::<f64>());
    let mean_curvature = (!curvature_norms.is_empty())
        .then(|| curvature_norms.iter().sum::<f64>() / curvature_norms.len() as f64);
    TrajectoryGeometry {
        velocities,
        curvatures,
        curvature_norms,
        path_length,
        curvature_energy,
        mean_curvature,
    }
}
