//! Synthetic non-stationary class-incremental streams.
//!
//! Each sample stands for one labelled pixel: a raw vector drawn from an
//! isotropic Gaussian around its class mean, where the mean drifts with the
//! acquisition time of the step that produced it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::linalg::{dist, RealVector};
use crate::numkit::rng::{sample_normal, Rng};

pub type ClassId = usize;

/// How a class mean moves with acquisition time `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    Static,
    /// `base + τ · vector`
    Linear { vector: Vec<f64> },
    /// `base + amplitude · sin(2πτ / period)`
    Sinusoidal { amplitude: Vec<f64>, period: f64 },
    /// `base + offsets[i]` where `i` counts the breakpoints `≤ τ`.
    Piecewise {
        breakpoints: Vec<f64>,
        offsets: Vec<Vec<f64>>,
    },
}

/// Per-class generator: base mean plus its drift law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub id: ClassId,
    pub base_mean: Vec<f64>,
    pub drift: Drift,
}

impl ClassSpec {
    pub fn mean_at(&self, tau: f64) -> RealVector {
        let base = &self.base_mean;
        let out: Vec<f64> = match &self.drift {
            Drift::Static => base.clone(),
            Drift::Linear { vector } => base.iter().zip(vector).map(|(b, v)| b + tau * v).collect(),
            Drift::Sinusoidal { amplitude, period } => {
                let s = (2.0 * std::f64::consts::PI * tau / period).sin();
                base.iter().zip(amplitude).map(|(b, a)| b + a * s).collect()
            }
            Drift::Piecewise { breakpoints, offsets } => {
                let seg = breakpoints.iter().filter(|&&b| b <= tau).count();
                base.iter().zip(&offsets[seg]).map(|(b, o)| b + o).collect()
            }
        };
        out.into()
    }

    fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.base_mean.len() != p {
            return bad(format!("base mean has dim {} (raw dim {p})", self.base_mean.len()));
        }
        if self.base_mean.iter().any(|v| !v.is_finite()) {
            return bad("base mean not finite".into());
        }
        match &self.drift {
            Drift::Static => {}
            Drift::Linear { vector } => {
                if vector.len() != p || vector.iter().any(|v| !v.is_finite()) {
                    return bad("linear drift vector must be finite with raw dim".into());
                }
            }
            Drift::Sinusoidal { amplitude, period } => {
                if amplitude.len() != p || amplitude.iter().any(|v| !v.is_finite()) {
                    return bad("sinusoidal amplitude must be finite with raw dim".into());
                }
                if !(*period > 0.0) || !period.is_finite() {
                    return bad(format!("sinusoidal period must be positive, got {period}"));
                }
            }
            Drift::Piecewise { breakpoints, offsets } => {
                if offsets.len() != breakpoints.len() + 1 {
                    return bad("piecewise drift needs one more offset than breakpoints".into());
                }
                if breakpoints.windows(2).any(|w| !(w[0] < w[1])) || breakpoints.iter().any(|b| !b.is_finite()) {
                    return bad("piecewise breakpoints must be finite and increasing".into());
                }
                if offsets.iter().any(|o| o.len() != p || o.iter().any(|v| !v.is_finite())) {
                    return bad("piecewise offsets must be finite with raw dim".into());
                }
            }
        }
        Ok(())
    }
}

/// Step layout of a class-incremental protocol plus the generator of `p_t(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSchedule {
    /// New classes introduced at each step `0..=T`.
    pub class_sets: Vec<Vec<ClassId>>,
    /// Acquisition time `τ_t` of each step.
    pub timestamps: Vec<f64>,
    pub classes: Vec<ClassSpec>,
    /// Raw-space noise standard deviation.
    pub noise: f64,
    pub samples_per_step: usize,
    /// Relative sampling rate of already-learned classes in new-step data.
    #[serde(default)]
    pub rho_old: f64,
}

impl TaskSchedule {
    pub fn num_steps(&self) -> usize {
        self.class_sets.len()
    }

    /// Index `T` of the final step.
    pub fn last_step(&self) -> usize {
        self.num_steps().saturating_sub(1)
    }

    pub fn raw_dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.base_mean.len())
    }

    pub fn num_classes(&self) -> usize {
        self.class_sets.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.class_sets.is_empty() {
            return bad("schedule has no steps".into());
        }
        if self.timestamps.len() != self.class_sets.len() {
            return bad(format!(
                "{} timestamps for {} steps",
                self.timestamps.len(),
                self.class_sets.len()
            ));
        }
        if self.timestamps.iter().any(|t| !t.is_finite()) {
            return bad("timestamps must be finite".into());
        }
        let mut seen = BTreeSet::new();
        for (t, set) in self.class_sets.iter().enumerate() {
            if set.is_empty() {
                return bad(format!("step {t} introduces no classes"));
            }
            for &c in set {
                if !seen.insert(c) {
                    return bad(format!("class {c} appears in more than one step"));
                }
            }
        }
        let specs: BTreeSet<ClassId> = self.classes.iter().map(|c| c.id).collect();
        if specs.len() != self.classes.len() {
            return bad("duplicate class specs".into());
        }
        if specs != seen {
            return bad("class specs and step class sets disagree".into());
        }
        let p = self.raw_dim();
        if p == 0 {
            return bad("raw dimension must be positive".into());
        }
        for c in &self.classes {
            c.validate(p)?;
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.rho_old) {
            return bad(format!("rho_old must lie in [0, 1], got {}", self.rho_old));
        }
        if self.samples_per_step == 0 {
            return bad("samples_per_step must be positive".into());
        }
        Ok(())
    }

    /// First step `t_c` at which `class` appears.
    pub fn first_step(&self, class: ClassId) -> Result<usize> {
        self.class_sets
            .iter()
            .position(|s| s.contains(&class))
            .ok_or(Error::Lookup { kind: "class", id: class })
    }

    /// All classes of `C^{≤t}` in introduction order.
    pub fn classes_upto(&self, t: usize) -> Vec<ClassId> {
        self.class_sets.iter().take(t + 1).flatten().copied().collect()
    }

    /// All classes in introduction order.
    pub fn all_classes(&self) -> Vec<ClassId> {
        self.classes_upto(self.last_step())
    }

    pub fn spec(&self, class: ClassId) -> Result<&ClassSpec> {
        self.classes
            .iter()
            .find(|c| c.id == class)
            .ok_or(Error::Lookup { kind: "class", id: class })
    }

    /// Step-to-step time increments `Δτ_k = τ_{k+1} − τ_k`.
    pub fn dtau(&self, k: usize) -> f64 {
        self.timestamps[k + 1] - self.timestamps[k]
    }
}

/// Drifted raw-space mean of `class` at step `t`.
pub fn class_mean_at(schedule: &TaskSchedule, class: ClassId, t: usize) -> Result<RealVector> {
    let tau = *schedule
        .timestamps
        .get(t)
        .ok_or(Error::Lookup { kind: "step", id: t })?;
    Ok(schedule.spec(class)?.mean_at(tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: RealVector,
    pub y: ClassId,
    pub step: usize,
    pub timestamp: f64,
}

/// Draws `n` samples of step `t`. New classes have weight 1, old classes weight `rho_old`.
pub fn sample_step(schedule: &TaskSchedule, t: usize, n: usize, rng: &mut Rng) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Argument("sample count must be positive".into()));
    }
    if t >= schedule.num_steps() {
        return Err(Error::Lookup { kind: "step", id: t });
    }
    let mut weighted: Vec<(ClassId, f64)> = Vec::new();
    for (s, set) in schedule.class_sets.iter().enumerate().take(t + 1) {
        let w = if s == t { 1.0 } else { schedule.rho_old };
        weighted.extend(set.iter().filter(|_| w > 0.0).map(|&c| (c, w)));
    }
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    let means: BTreeMap<ClassId, RealVector> = weighted
        .iter()
        .map(|&(c, _)| Ok((c, class_mean_at(schedule, c, t)?)))
        .collect::<Result<_>>()?;
    let tau = schedule.timestamps[t];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.uniform() * total;
        let mut y = weighted[weighted.len() - 1].0;
        for &(c, w) in &weighted {
            if u < w {
                y = c;
                break;
            }
            u -= w;
        }
        let x = sample_normal(rng, &means[&y], schedule.noise, 1).pop().expect("one sample");
        out.push(Sample { x, y, step: t, timestamp: tau });
    }
    Ok(out)
}

/// Draws `n_per_class` samples for every class of `C^{≤t}` from the step-`t`
/// distribution (or from each class's introduction step when `at_intro`).
pub fn sample_eval(
    schedule: &TaskSchedule,
    t: usize,
    n_per_class: usize,
    at_intro: bool,
    rng: &mut Rng,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for c in schedule.classes_upto(t) {
        let s = if at_intro { schedule.first_step(c)? } else { t };
        let mean = class_mean_at(schedule, c, s)?;
        for x in sample_normal(rng, &mean, schedule.noise, n_per_class) {
            out.push(Sample { x, y: c, step: t, timestamp: schedule.timestamps[s] });
        }
    }
    Ok(out)
}

/// Permutes the timestamps of `floor(alpha · n)` uniformly chosen samples among themselves.
/// Returns the selected indices (ascending).
pub fn time_shuffle(samples: &mut [Sample], alpha: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    let mut taus: Vec<f64> = samples.iter().map(|s| s.timestamp).collect();
    let idx = shuffle_fraction(&mut taus, alpha, rng)?;
    for &i in &idx {
        samples[i].timestamp = taus[i];
    }
    Ok(idx)
}

/// Permutes the values at a random subset of `floor(alpha · n)` positions among
/// themselves and returns those positions in ascending order.
pub fn shuffle_fraction(values: &mut [f64], alpha: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let k = (alpha * values.len() as f64).floor() as usize;
    let idx = rng.choose_indices(values.len(), k);
    let mut picked: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    rng.shuffle(&mut picked);
    for (&i, v) in idx.iter().zip(picked) {
        values[i] = v;
    }
    Ok(idx)
}

/// Reorders incremental steps `1..=T`; `order[k-1]` is the old step placed at position `k`.
/// Timestamps stay canonical and the base step is fixed.
pub fn permute_tasks(schedule: &TaskSchedule, order: &[usize]) -> Result<TaskSchedule> {
    let t_max = schedule.last_step();
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (1..=t_max).collect::<Vec<_>>() {
        return Err(Error::Argument(format!(
            "order {order:?} is not a permutation of 1..={t_max}"
        )));
    }
    let mut out = schedule.clone();
    for (k, &old) in order.iter().enumerate() {
        out.class_sets[k + 1] = schedule.class_sets[old].clone();
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryStrategy {
    Herding,
    Random,
}

/// Per-class replay memory `M^t` under a fixed budget.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    pub budget_per_class: usize,
    pub strategy: MemoryStrategy,
    per_class: BTreeMap<ClassId, Vec<Sample>>,
    seen: BTreeMap<ClassId, usize>,
}

impl MemoryBuffer {
    pub fn new(budget_per_class: usize, strategy: MemoryStrategy) -> Self {
        Self {
            budget_per_class,
            strategy,
            per_class: BTreeMap::new(),
            seen: BTreeMap::new(),
        }
    }

    pub fn class_samples(&self, class: ClassId) -> &[Sample] {
        self.per_class.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_class_count(&self) -> usize {
        self.per_class.values().map(Vec::len).max().unwrap_or(0)
    }

    /// All stored samples, ordered by class id.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.per_class.values().flatten()
    }

    /// Stored samples of the classes occurring in `new`, followed by `new`.
    /// Herding re-selects from this pool.
    pub fn herding_pool(&self, new: &[Sample]) -> Vec<Sample> {
        let classes: BTreeSet<ClassId> = new.iter().map(|s| s.y).collect();
        classes
            .iter()
            .flat_map(|c| self.class_samples(*c).iter().cloned())
            .chain(new.iter().cloned())
            .collect()
    }

    /// Updates the buffer with candidate samples.
    ///
    /// `Random` reservoir-samples each class. `Herding` replaces each class's
    /// entries with a greedy herding selection over the given candidates,
    /// whose features must be supplied in the same order.
    pub fn update(&mut self, samples: &[Sample], features: Option<&[RealVector]>, rng: &mut Rng) -> Result<()> {
        match self.strategy {
            MemoryStrategy::Random => {
                for s in samples {
                    let seen = self.seen.entry(s.y).or_insert(0);
                    *seen += 1;
                    let slot = self.per_class.entry(s.y).or_default();
                    if slot.len() < self.budget_per_class {
                        slot.push(s.clone());
                    } else {
                        let j = rng.below(*seen);
                        if j < self.budget_per_class {
                            slot[j] = s.clone();
                        }
                    }
                }
            }
            MemoryStrategy::Herding => {
                let feats = features.ok_or_else(|| Error::Argument("herding needs features".into()))?;
                if feats.len() != samples.len() {
                    return Err(Error::Shape(format!(
                        "{} features for {} samples",
                        feats.len(),
                        samples.len()
                    )));
                }
                let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
                for (i, s) in samples.iter().enumerate() {
                    by_class.entry(s.y).or_default().push(i);
                }
                for (c, idx) in by_class {
                    let class_feats: Vec<&[f64]> = idx.iter().map(|&i| feats[i].as_slice()).collect();
                    let chosen = herding_select(&class_feats, self.budget_per_class);
                    self.per_class
                        .insert(c, chosen.into_iter().map(|j| samples[idx[j]].clone()).collect());
                    *self.seen.entry(c).or_insert(0) += idx.len();
                }
            }
        }
        Ok(())
    }
}

/// Greedy herding: repeatedly add the candidate that brings the selected-set
/// mean closest to the full mean. Returns indices in selection order.
pub fn herding_select(features: &[&[f64]], budget: usize) -> Vec<usize> {
    let n = features.len();
    if n == 0 {
        return Vec::new();
    }
    let d = features[0].len();
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f.iter()) {
            *m += v / n as f64;
        }
    }
    let mut chosen = Vec::with_capacity(budget.min(n));
    let mut used = vec![false; n];
    let mut acc = vec![0.0; d];
    let mut cand = vec![0.0; d];
    while chosen.len() < budget.min(n) {
        let k = (chosen.len() + 1) as f64;
        let mut best = (f64::INFINITY, 0);
        for (i, f) in features.iter().enumerate() {
            if used[i] {
                continue;
            }
            for ((c, a), v) in cand.iter_mut().zip(&acc).zip(f.iter()) {
                *c = (a + v) / k;
            }
            let dd = dist(&cand, &mean);
            if dd < best.0 {
                best = (dd, i);
            }
        }
        used[best.1] = true;
        chosen.push(best.1);
        for (a, v) in acc.iter_mut().zip(features[best.1].iter()) {
            *a += v;
        }
    }
    chosen
}
