//! Training objectives with analytic gradients: cross-entropy, temperature
//! distillation, trajectory curvature, prototype separation and their weighted total.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numkit::linalg::{norm, norm_sq, sub};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub dist: f64,
    pub flow: f64,
    pub curve: f64,
    pub sep: f64,
    pub margin: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dist: 1.0,
            flow: 1.0,
            curve: 0.5,
            sep: 0.1,
            margin: 0.5,
            temperature: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.dist, self.flow, self.curve, self.sep, self.margin, self.temperature];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Argument("loss weights must be finite and non-negative".into()));
        }
        if self.margin <= 0.0 || self.temperature <= 0.0 {
            return Err(Error::Argument("margin and temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub seg: f64,
    pub dist: f64,
    pub flow: f64,
    pub curve: f64,
    pub sep: f64,
    pub total: f64,
}

pub fn total_loss(seg: f64, dist: f64, flow: f64, curve: f64, sep: f64, w: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [("seg", seg), ("dist", dist), ("flow", flow), ("curve", curve), ("sep", sep)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} loss is {v}")));
        }
    }
    Ok(LossBreakdown {
        seg,
        dist,
        flow,
        curve,
        sep,
        total: seg + w.dist * dist + w.flow * flow + w.curve * curve + w.sep * sep,
    })
}

/// Loss value with the gradient w.r.t. each input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowsLoss {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Mean negative log-softmax of the labelled entry; `labels` index into each logit row.
pub fn ce_loss<L: AsRef<[f64]>>(logits: &[L], labels: &[usize]) -> Result<RowsLoss> {
    if logits.len() != labels.len() {
        return shape_err("one label per logit row");
    }
    if logits.is_empty() {
        return Ok(RowsLoss { value: 0.0, grads: Vec::new() });
    }
    let n = logits.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        let z = z.as_ref();
        if y >= z.len() {
            return Err(Error::Argument(format!("label {y} outside {} logits", z.len())));
        }
        value -= log_softmax(z)[y];
        let mut g = softmax(z);
        g[y] -= 1.0;
        grads.push(g.into_iter().map(|v| v / n).collect());
    }
    Ok(RowsLoss { value: value / n, grads })
}

/// Mean over rows of `KL(softmax(teacher/T) ‖ softmax(student/T))` restricted to the
/// columns in `old`. Gradients are w.r.t. the full student rows.
pub fn kl_distill<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    teacher: &[A],
    student: &[B],
    temperature: f64,
    old: &[usize],
) -> Result<RowsLoss> {
    if teacher.len() != student.len() {
        return shape_err("teacher and student batches differ in size");
    }
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {temperature}")));
    }
    let zero = || RowsLoss {
        value: 0.0,
        grads: student.iter().map(|s| vec![0.0; s.as_ref().len()]).collect(),
    };
    if old.is_empty() || student.is_empty() {
        return Ok(zero());
    }
    let n = student.len() as f64;
    let mut out = zero();
    for ((t, s), g) in teacher.iter().zip(student).zip(out.grads.iter_mut()) {
        let (t, s) = (t.as_ref(), s.as_ref());
        if old.iter().any(|&k| k >= t.len() || k >= s.len()) {
            return Err(Error::Argument("old class column outside logits".into()));
        }
        let tz: Vec<f64> = old.iter().map(|&k| t[k] / temperature).collect();
        let sz: Vec<f64> = old.iter().map(|&k| s[k] / temperature).collect();
        let q = softmax(&tz);
        let (lq, lp) = (log_softmax(&tz), log_softmax(&sz));
        let p = softmax(&sz);
        out.value += q.iter().zip(lq.iter().zip(&lp)).map(|(qi, (a, b))| qi * (a - b)).sum::<f64>();
        for (j, &k) in old.iter().enumerate() {
            g[k] = (p[j] - q[j]) / (temperature * n);
        }
    }
    out.value /= n;
    Ok(out)
}

/// One class's three most recent trajectory points; only `current` receives gradient.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureTriple<'a> {
    pub older: &'a [f64],
    pub previous: &'a [f64],
    pub current: &'a [f64],
}

/// `Σ ‖current − 2·previous + older‖²` with gradients w.r.t. each `current`.
pub fn curvature_loss(triples: &[CurvatureTriple<'_>]) -> Result<RowsLoss> {
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(triples.len());
    for tr in triples {
        let d = tr.current.len();
        if tr.previous.len() != d || tr.older.len() != d {
            return shape_err("curvature triple dimension mismatch");
        }
        let k: Vec<f64> = (0..d).map(|j| tr.current[j] - 2.0 * tr.previous[j] + tr.older[j]).collect();
        value += norm_sq(&k);
        grads.push(k.into_iter().map(|v| 2.0 * v).collect());
    }
    Ok(RowsLoss { value, grads })
}

/// `Σ_{c≠c'} [m − ‖μ_c − μ_c'‖]₊²` over ordered pairs.
pub fn separation_loss<P: AsRef<[f64]>>(protos: &[P], margin: f64) -> Result<RowsLoss> {
    let k = protos.len();
    let d = protos.first().map_or(0, |p| p.as_ref().len());
    if protos.iter().any(|p| p.as_ref().len() != d) {
        return shape_err("prototypes differ in dimension");
    }
    let mut value = 0.0;
    let mut grads = vec![vec![0.0; d]; k];
    for a in 0..k {
        for b in (a + 1)..k {
            let diff = sub(protos[a].as_ref(), protos[b].as_ref());
            let dist = norm(&diff);
            let h = margin - dist;
            if h <= 0.0 {
                continue;
            }
            value += 2.0 * h * h;
            // d/dμ_a of 2h² is −4h·diff/dist; undefined at coincidence, taken as 0
            if dist > 0.0 {
                let s = -4.0 * h / dist;
                for j in 0..d {
                    grads[a][j] += s * diff[j];
                    grads[b][j] -= s * diff[j];
                }
            }
        }
    }
    Ok(RowsLoss { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::{finite_diff_grad, max_relative_error};
    use crate::numkit::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn ce_cases() {
        let l = ce_loss(&[vec![100.0, 0.0]], &[0]).unwrap();
        assert!(l.value < 1e-40);
        let l = ce_loss(&[vec![0.3; 5]], &[2]).unwrap();
        assert!((l.value - 5f64.ln()).abs() < 1e-14);
        assert!(ce_loss(&[vec![0.0; 3]], &[3]).is_err());
    }

    #[test]
    fn ce_gradient_matches_fd() {
        let z = [0.2, -1.1, 0.7, 0.05, 1.3, -0.4];
        let y = [2, 0];
        let l = ce_loss(&z.chunks(3).collect::<Vec<_>>(), &y).unwrap();
        let fd = finite_diff_grad(|x| ce_loss(&x.chunks(3).collect::<Vec<_>>(), &y).unwrap().value, &z, 1e-5).unwrap();
        assert!(max_relative_error(&l.grads.concat(), &fd, 1e-8) < 1e-6);
    }

    #[test]
    fn kl_cases() {
        let t = [vec![0.4, -0.2, 1.0]];
        assert!(kl_distill(&t, &t, 2.0, &[0, 1, 2]).unwrap().value.abs() < 1e-15);
        let l = kl_distill(&[vec![3f64.ln(), 0.0]], &[vec![0.0, 0.0]], 1.0, &[0, 1]).unwrap();
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((l.value - expected).abs() < 1e-12);
        assert!((l.value - 0.1308).abs() < 1e-4);
        let shifted = kl_distill(&[vec![3f64.ln() + 7.0, 7.0]], &[vec![-2.0, -2.0]], 1.0, &[0, 1]).unwrap();
        assert!((shifted.value - l.value).abs() < 1e-12);
        assert_eq!(kl_distill(&t, &t, 2.0, &[]).unwrap().value, 0.0);
    }

    #[test]
    fn kl_gradient_matches_fd_and_ignores_new_columns() {
        let t = [0.5, 1.2, -0.3, 2.0, -0.7, 0.1, 0.9, 0.4];
        let s = [0.1, -0.6, 0.8, 0.3, 0.2, 1.5, -1.0, 0.0];
        let old = [0, 1, 3];
        let rows = |v: &[f64]| v.chunks(4).map(|c| c.to_vec()).collect::<Vec<_>>();
        let l = kl_distill(&rows(&t), &rows(&s), 2.0, &old).unwrap();
        let fd = finite_diff_grad(|x| kl_distill(&rows(&t), &rows(x), 2.0, &old).unwrap().value, &s, 1e-5).unwrap();
        assert!(max_relative_error(&l.grads.concat(), &fd, 1e-9) < 1e-6);
        assert!(l.grads.iter().all(|g| g[2] == 0.0));
    }

    #[test]
    fn curvature_cases() {
        let straight = CurvatureTriple { older: &[0.0, 0.0], previous: &[1.0, 0.0], current: &[2.0, 0.0] };
        assert_eq!(curvature_loss(&[straight]).unwrap().value, 0.0);
        let bent = CurvatureTriple { older: &[0.0, 0.0], previous: &[1.0, 0.0], current: &[1.0, 1.0] };
        assert_eq!(curvature_loss(&[bent]).unwrap().value, 2.0);
        assert_eq!(curvature_loss(&[]).unwrap().value, 0.0);

        let older = [0.3, -0.2, 0.5];
        let prev = [0.1, 0.4, 0.6];
        let cur = [0.7, 0.0, -0.2];
        let l = curvature_loss(&[CurvatureTriple { older: &older, previous: &prev, current: &cur }]).unwrap();
        let fd = finite_diff_grad(
            |x| curvature_loss(&[CurvatureTriple { older: &older, previous: &prev, current: x }]).unwrap().value,
            &cur,
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(&l.grads[0], &fd, 1e-9) < 1e-6);
    }

    #[test]
    fn separation_cases() {
        assert_eq!(separation_loss(&[vec![0.0, 0.0], vec![1.0, 0.0]], 0.5).unwrap().value, 0.0);
        let l = separation_loss(&[vec![0.0, 0.0], vec![0.3, 0.0]], 0.5).unwrap();
        assert!((l.value - 0.08).abs() < 1e-15);
        let l = separation_loss(&vec![vec![1.0, 0.0]; 3], 0.5).unwrap();
        assert!((l.value - 1.5).abs() < 1e-15);
        assert_eq!(separation_loss(&[vec![1.0, 0.0]], 0.5).unwrap().value, 0.0);
    }

    #[test]
    fn separation_gradient_matches_fd() {
        let mut rng = Rng::new(4);
        let p: Vec<f64> = (0..12).map(|_| 0.3 * rng.normal()).collect();
        let rows = |v: &[f64]| v.chunks(3).map(|c| c.to_vec()).collect::<Vec<_>>();
        for a in 0..4 {
            for b in (a + 1)..4 {
                let d = norm(&sub(&p[3 * a..3 * a + 3], &p[3 * b..3 * b + 3]));
                assert!((d - 0.8).abs() > 1e-3);
            }
        }
        let l = separation_loss(&rows(&p), 0.8).unwrap();
        assert!(l.value > 0.0);
        let fd = finite_diff_grad(|x| separation_loss(&rows(x), 0.8).unwrap().value, &p, 1e-5).unwrap();
        assert!(max_relative_error(&l.grads.concat(), &fd, 1e-9) < 1e-6);
    }

    #[test]
    fn total_cases() {
        let zero = LossWeights { dist: 0.0, flow: 0.0, curve: 0.0, sep: 0.0, ..Default::default() };
        assert_eq!(total_loss(1.5, 2.0, 3.0, 4.0, 5.0, &zero).unwrap().total, 1.5);
        let b = total_loss(1.0, 0.5, 0.2, 0.4, 0.1, &LossWeights::default()).unwrap();
        assert!((b.total - 1.91).abs() < 1e-12);
        assert!(matches!(total_loss(1.0, f64::NAN, 0.0, 0.0, 0.0, &zero), Err(Error::Numeric(m)) if m.contains("dist")));
    }

    fn protos() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..6)
    }

    proptest! {
        #[test]
        fn separation_relabel_symmetric(p in protos(), seed in any::<u64>()) {
            let mut q = p.clone();
            Rng::new(seed).shuffle(&mut q);
            let (a, b) = (separation_loss(&p, 0.5).unwrap().value, separation_loss(&q, 0.5).unwrap().value);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn separation_rotation_invariant(p in protos(), theta in 0.0f64..6.3) {
            let (c, s) = (theta.cos(), theta.sin());
            let rotated: Vec<Vec<f64>> = p.iter().map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]).collect();
            let (a, b) = (separation_loss(&p, 0.5).unwrap().value, separation_loss(&rotated, 0.5).unwrap().value);
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn curvature_translation_invariant(v in prop::collection::vec(-2.0f64..2.0, 9), shift in -3.0f64..3.0) {
            let t = |o: f64| -> f64 {
                let w: Vec<f64> = v.iter().map(|x| x + o).collect();
                curvature_loss(&[CurvatureTriple { older: &w[0..3], previous: &w[3..6], current: &w[6..9] }]).unwrap().value
            };
            prop_assert!((t(0.0) - t(shift)).abs() < 1e-9);
        }

        #[test]
        fn losses_nonnegative(z in prop::collection::vec(-5.0f64..5.0, 8), y in 0usize..4) {
            let rows: Vec<&[f64]> = z.chunks(4).collect();
            prop_assert!(ce_loss(&rows, &[y, 3 - y]).unwrap().value >= 0.0);
            prop_assert!(kl_distill(&rows, &[&z[4..8], &z[0..4]], 2.0, &[0, 1, 2]).unwrap().value >= -1e-15);
        }
    }
}
