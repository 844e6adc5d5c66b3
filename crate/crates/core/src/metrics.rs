//! Evaluation measures: confusion-based IoU/OA/F1, forgetting, dynamic regret,
//! correlation, prototype angles and per-class deltas between runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numkit::linalg::{dot, norm};
use crate::stream::ClassId;

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return shape_err("confusion matrix must be square");
        }
        Ok(Self { k, counts: rows.concat() })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Argument(format!("index outside {}-class confusion matrix", self.k)));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        (0..self.k).map(|c| self.get(r, c)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    /// `TP / (TP + FP + FN)` per class; `None` where the denominator is 0.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.get(c, c);
                let den = self.row_sum(c) + self.col_sum(c) - tp;
                (den > 0).then(|| tp as f64 / den as f64)
            })
            .collect()
    }

    /// Per-class recall; `None` for classes with no ground truth.
    pub fn recall(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let n = self.row_sum(c);
                (n > 0).then(|| self.get(c, c) as f64 / n as f64)
            })
            .collect()
    }
}

/// Mean of the defined entries, or `None` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.into_iter().flatten() {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouSplits {
    pub per_class: Vec<Option<f64>>,
    pub all: Option<f64>,
    pub old: Option<f64>,
    pub new: Option<f64>,
}

/// IoU per class plus means over all, `old` and `new` index sets.
pub fn iou_from_confusion(cm: &ConfusionMatrix, old: &[usize], new: &[usize]) -> IouSplits {
    let per_class = cm.iou();
    let pick = |idx: &[usize]| mean_defined(idx.iter().map(|&i| per_class.get(i).copied().flatten()));
    IouSplits {
        all: mean_defined(per_class.iter().copied()),
        old: pick(old),
        new: pick(new),
        per_class,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OaF1 {
    pub oa: f64,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
}

pub fn oa_f1(cm: &ConfusionMatrix) -> OaF1 {
    let total = cm.total();
    let trace: u64 = (0..cm.size()).map(|c| cm.get(c, c)).sum();
    let f1: Vec<f64> = (0..cm.size())
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let (pp, ap) = (cm.col_sum(c) as f64, cm.row_sum(c) as f64);
            let prec = if pp > 0.0 { tp / pp } else { 0.0 };
            let rec = if ap > 0.0 { tp / ap } else { 0.0 };
            if prec + rec > 0.0 {
                2.0 * prec * rec / (prec + rec)
            } else {
                0.0
            }
        })
        .collect();
    let mean_f1 = if f1.is_empty() { 0.0 } else { f1.iter().sum::<f64>() / f1.len() as f64 };
    OaF1 {
        oa: if total > 0 { trace as f64 / total as f64 } else { 0.0 },
        f1,
        mean_f1,
    }
}

/// Per-class values indexed by step; `None` before the class exists.
pub type StepHistory = BTreeMap<ClassId, Vec<Option<f64>>>;

fn group_curve(history: &StepHistory, group: &[ClassId], from: usize, last: usize) -> Result<Vec<f64>> {
    (from..=last)
        .map(|s| {
            let mut vals = Vec::with_capacity(group.len());
            for c in group {
                let v = history
                    .get(c)
                    .and_then(|h| h.get(s).copied().flatten())
                    .ok_or_else(|| Error::Argument(format!("history lacks class {c} at step {s}")))?;
                vals.push(v);
            }
            Ok(vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

fn group_forgetting(history: &StepHistory, groups: &[Vec<ClassId>], range: std::ops::RangeInclusive<usize>) -> Result<Option<f64>> {
    let last = groups.len().saturating_sub(1);
    let mut terms = Vec::new();
    for t in range {
        if groups[t].is_empty() {
            continue;
        }
        let curve = group_curve(history, &groups[t], t, last)?;
        let max = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        terms.push(max - curve[curve.len() - 1]);
    }
    Ok((!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64))
}

/// Mean over intermediate groups `t = 1..T−1` of the best minus the final group mIoU.
/// `groups[t]` lists the classes introduced at step `t`; `None` when `T < 2`.
pub fn forgetting_score(history: &StepHistory, groups: &[Vec<ClassId>]) -> Result<Option<f64>> {
    if groups.len() < 3 {
        return Ok(None);
    }
    group_forgetting(history, groups, 1..=groups.len() - 2)
}

/// Like [`forgetting_score`] but over groups `t = 1..T`.
pub fn forgetting_score_all(history: &StepHistory, groups: &[Vec<ClassId>]) -> Result<Option<f64>> {
    if groups.len() < 2 {
        return Ok(None);
    }
    group_forgetting(history, groups, 1..=groups.len() - 1)
}

/// Best value over the observed steps minus the final one.
pub fn per_class_forgetting(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().copied().flatten().collect();
    let last = *defined.last()?;
    Some(defined.iter().copied().fold(f64::NEG_INFINITY, f64::max) - last)
}

/// `Σ_t (R_t − min_s R_s)`.
pub fn dynamic_regret(risks: &[f64]) -> Result<f64> {
    if risks.is_empty() {
        return Err(Error::Argument("dynamic regret of an empty risk sequence".into()));
    }
    let best = risks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(risks.iter().map(|r| r - best).sum())
}

/// Sample correlation; `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return shape_err("pearson inputs differ in length");
    }
    let n = xs.len();
    if n < 2 {
        return Ok(None);
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnglePair {
    pub a: ClassId,
    pub b: ClassId,
    pub degrees: f64,
    /// `1 − cos θ`
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub pairs: Vec<AnglePair>,
    pub min_margin: Option<f64>,
    pub mean_degrees: Option<f64>,
}

/// Angles and cosine margins between every unordered pair of unit prototypes.
pub fn prototype_angles<P: AsRef<[f64]>>(protos: &[(ClassId, P)]) -> Result<AngleReport> {
    for (c, p) in protos {
        let n = norm(p.as_ref());
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!("prototype of class {c} has norm {n}")));
        }
    }
    let mut pairs = Vec::new();
    for i in 0..protos.len() {
        for j in (i + 1)..protos.len() {
            let cos = dot(protos[i].1.as_ref(), protos[j].1.as_ref()).clamp(-1.0, 1.0);
            pairs.push(AnglePair {
                a: protos[i].0,
                b: protos[j].0,
                degrees: cos.acos().to_degrees(),
                margin: 1.0 - cos,
            });
        }
    }
    let min_margin = pairs.iter().map(|p| p.margin).reduce(f64::min);
    let mean_degrees = (!pairs.is_empty()).then(|| pairs.iter().map(|p| p.degrees).sum::<f64>() / pairs.len() as f64);
    Ok(AngleReport { pairs, min_margin, mean_degrees })
}

/// Per-class figures compared by [`delta_analysis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: ClassId,
    pub first_step: usize,
    pub mean_curvature: Option<f64>,
    pub forgetting: f64,
    pub final_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: ClassId,
    pub curvature: Option<f64>,
    pub forgetting: f64,
    pub iou: f64,
    /// Both curvature and forgetting strictly lower in the first run.
    pub favorable: bool,
}

/// `a − b` per class.
pub fn delta_analysis(a: &[ClassSummary], b: &[ClassSummary]) -> Result<Vec<ClassDelta>> {
    let key = |s: &[ClassSummary]| s.iter().map(|c| (c.class, c.first_step)).collect::<Vec<_>>();
    if key(a) != key(b) {
        return Err(Error::Argument("runs cover different classes or schedules".into()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| {
            let curvature = x.mean_curvature.zip(y.mean_curvature).map(|(p, q)| p - q);
            let forgetting = x.forgetting - y.forgetting;
            ClassDelta {
                class: x.class,
                curvature,
                forgetting,
                iou: x.final_iou - y.final_iou,
                favorable: curvature.is_some_and(|k| k < 0.0) && forgetting < 0.0,
            }
        })
        .collect())
}

/// Final-step figures of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub per_class_iou: BTreeMap<ClassId, Option<f64>>,
    pub miou_all: Option<f64>,
    pub miou_old: Option<f64>,
    pub miou_new: Option<f64>,
    pub oa: f64,
    pub mean_f1: f64,
    pub forgetting: Option<f64>,
    pub forgetting_all: Option<f64>,
    pub per_class_forgetting: BTreeMap<ClassId, f64>,
    pub per_class_regret: BTreeMap<ClassId, f64>,
    pub per_class_curvature: BTreeMap<ClassId, Option<f64>>,
    pub curvature_forgetting_corr: Option<f64>,
    pub min_cosine_margin: Option<f64>,
    pub mean_angle: Option<f64>,
    pub angles: Vec<AnglePair>,
}

impl MetricsBundle {
    pub fn class_summaries(&self, first_steps: &BTreeMap<ClassId, usize>) -> Vec<ClassSummary> {
        self.per_class_forgetting
            .iter()
            .map(|(&c, &f)| ClassSummary {
                class: c,
                first_step: first_steps.get(&c).copied().unwrap_or(0),
                mean_curvature: self.per_class_curvature.get(&c).copied().flatten(),
                forgetting: f,
                final_iou: self.per_class_iou.get(&c).copied().flatten().unwrap_or(0.0),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm2() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[vec![5, 5], vec![0, 10]]).unwrap()
    }

    #[test]
    fn iou_cases() {
        let diag = ConfusionMatrix::from_rows(&[vec![3, 0], vec![0, 4]]).unwrap();
        assert_eq!(diag.iou(), vec![Some(1.0), Some(1.0)]);
        let s = iou_from_confusion(&cm2(), &[0], &[1]);
        assert_eq!(s.per_class[0], Some(0.5));
        assert!((s.per_class[1].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.old, Some(0.5));

        let empty = ConfusionMatrix::from_rows(&[vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 0]]).unwrap();
        let s = iou_from_confusion(&empty, &[0, 1], &[2]);
        assert_eq!(s.per_class[2], None);
        assert_eq!(s.all, Some(1.0));
        assert_eq!(s.new, None);
    }

    #[test]
    fn oa_f1_cases() {
        let diag = ConfusionMatrix::from_rows(&[vec![3, 0], vec![0, 4]]).unwrap();
        let r = oa_f1(&diag);
        assert_eq!((r.oa, r.f1.clone()), (1.0, vec![1.0, 1.0]));
        assert_eq!(oa_f1(&cm2()).oa, 0.75);
        let empty = ConfusionMatrix::from_rows(&[vec![2, 0], vec![0, 0]]).unwrap();
        assert_eq!(oa_f1(&empty).f1[1], 0.0);
    }

    fn history(rows: &[(ClassId, Vec<Option<f64>>)]) -> StepHistory {
        rows.iter().cloned().collect()
    }

    #[test]
    fn forgetting_score_cases() {
        let groups = vec![vec![0], vec![1], vec![2]];
        let mono = history(&[
            (0, vec![Some(0.1), Some(0.2), Some(0.3)]),
            (1, vec![None, Some(0.5), Some(0.6)]),
            (2, vec![None, None, Some(0.9)]),
        ]);
        assert_eq!(forgetting_score(&mono, &groups).unwrap(), Some(0.0));

        let one = history(&[
            (0, vec![Some(0.9), Some(0.2), Some(0.1)]),
            (1, vec![None, Some(0.8), Some(0.7)]),
            (2, vec![None, None, Some(0.5)]),
        ]);
        assert!((forgetting_score(&one, &groups).unwrap().unwrap() - 0.1).abs() < 1e-12);
        let mut base_changed = one.clone();
        base_changed.insert(0, vec![Some(0.0), Some(0.5), Some(0.5)]);
        assert_eq!(forgetting_score(&one, &groups).unwrap(), forgetting_score(&base_changed, &groups).unwrap());

        assert_eq!(forgetting_score(&one, &groups[..1]).unwrap(), None);
        let mut holes = one.clone();
        holes.insert(1, vec![None, Some(0.8), None]);
        assert!(forgetting_score(&holes, &groups).is_err());
    }

    #[test]
    fn per_class_forgetting_cases() {
        let h = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
        assert!((per_class_forgetting(&h(&[0.6, 0.8, 0.7])).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(per_class_forgetting(&h(&[0.4, 0.4])), Some(0.0));
        assert_eq!(per_class_forgetting(&h(&[0.1, 0.4])), Some(0.0));
        assert_eq!(per_class_forgetting(&[None, None]), None);
    }

    #[test]
    fn regret_cases() {
        assert!((dynamic_regret(&[0.2, 0.1, 0.3]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(dynamic_regret(&[0.4; 3]).unwrap(), 0.0);
        assert!(dynamic_regret(&[]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]).unwrap(), None);
    }

    #[test]
    fn angle_cases() {
        let r = prototype_angles(&[(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0])]).unwrap();
        assert!((r.pairs[0].degrees - 90.0).abs() < 1e-12 && (r.pairs[0].margin - 1.0).abs() < 1e-15);
        let r = prototype_angles(&[(0, vec![1.0, 0.0]), (1, vec![1.0, 0.0])]).unwrap();
        assert_eq!((r.pairs[0].degrees, r.pairs[0].margin), (0.0, 0.0));
        let r = prototype_angles(&[(0, vec![1.0, 0.0]), (1, vec![-1.0, 0.0])]).unwrap();
        assert_eq!((r.pairs[0].degrees, r.pairs[0].margin), (180.0, 2.0));
        assert!(prototype_angles(&[(0, vec![2.0, 0.0])]).is_err());
    }

    fn summary(class: ClassId, k: Option<f64>, f: f64, iou: f64) -> ClassSummary {
        ClassSummary { class, first_step: 0, mean_curvature: k, forgetting: f, final_iou: iou }
    }

    #[test]
    fn delta_cases() {
        let a = vec![summary(0, Some(0.1), 0.05, 0.8), summary(1, None, 0.0, 0.9)];
        let b = vec![summary(0, Some(0.3), 0.2, 0.6), summary(1, None, 0.1, 0.7)];
        assert!(delta_analysis(&a, &a).unwrap().iter().all(|d| d.forgetting == 0.0 && d.iou == 0.0 && !d.favorable));
        let ab = delta_analysis(&a, &b).unwrap();
        let ba = delta_analysis(&b, &a).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            assert_eq!(x.forgetting, -y.forgetting);
            assert_eq!(x.curvature.map(|v| -v), y.curvature);
        }
        assert!(ab[0].favorable && !ab[1].favorable);
        assert!(delta_analysis(&a, &b[..1]).is_err());
    }

    proptest! {
        #[test]
        fn regret_within_horizon_times_max_excess(r in prop::collection::vec(0.0f64..1.0, 1..12)) {
            let best = r.iter().copied().fold(f64::INFINITY, f64::min);
            let worst = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let reg = dynamic_regret(&r).unwrap();
            prop_assert!(reg >= 0.0);
            prop_assert!(reg <= r.len() as f64 * (worst - best) + 1e-12);
        }

        #[test]
        fn scores_in_unit_range(rows in prop::collection::vec(prop::collection::vec(0u64..20, 4), 4)) {
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            let s = iou_from_confusion(&cm, &[0, 1], &[2, 3]);
            for v in s.per_class.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(v));
            }
            let r = oa_f1(&cm);
            prop_assert!((0.0..=1.0).contains(&r.oa));
            prop_assert!(r.f1.iter().all(|f| (0.0..=1.0).contains(f)));
        }

        #[test]
        fn pearson_bounded(xs in prop::collection::vec(-10.0f64..10.0, 2..20), seed in any::<u64>()) {
            let mut ys = xs.clone();
            crate::numkit::rng::Rng::new(seed).shuffle(&mut ys);
            if let Some(r) = pearson(&xs, &ys).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
