//! The per-batch joint objective and its analytic gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{encode_time, flow_loss, FlowField};
use crate::losses::{ce_loss, curvature_loss, kl_distill, separation_loss, total_loss, CurvatureTriple, LossBreakdown, LossWeights};
use crate::model::{Encoder, Head, TeacherSnapshot};
use crate::numkit::linalg::{dist, Matrix, RealVector};
use crate::numkit::mlp::Mlp2Params;
use crate::protobank::{batch_prototype, normalize, normalize_backward, PrototypeBank, Trajectories};
use crate::stream::{ClassId, Sample};

use super::Variant;

/// Trainable parameters: encoder, head and (unless ablated) the flow field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub encoder: Encoder,
    pub head: Head,
    pub field: Option<FlowField>,
}

impl ModelState {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.encoder.params.tensors().to_vec();
        out.push(self.head.weights.as_slice());
        out.push(&self.head.bias);
        if let Some(f) = &self.field {
            out.extend(f.params.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.encoder.params.tensors_mut().into_iter().collect();
        out.push(self.head.weights.as_mut_slice());
        out.push(&mut self.head.bias);
        if let Some(f) = &mut self.field {
            out.extend(f.params.tensors_mut());
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors().iter().map(|t| t.len()).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!("{} values for {total} parameters", flat.len())));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> ModelGrads {
        let e = &self.encoder.params;
        ModelGrads {
            encoder: Mlp2Params::zeros(e.input_dim(), e.hidden_dim(), e.output_dim()),
            head_weights: Matrix::zeros(self.head.len(), self.head.feature_dim()),
            head_bias: vec![0.0; self.head.len()],
            field: self
                .field
                .as_ref()
                .map(|f| Mlp2Params::zeros(f.params.input_dim(), f.params.hidden_dim(), f.params.output_dim())),
        }
    }
}

/// Gradient laid out like [`ModelState`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Mlp2Params,
    pub head_weights: Matrix,
    pub head_bias: Vec<f64>,
    pub field: Option<Mlp2Params>,
}

impl ModelGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.encoder.tensors().to_vec();
        out.push(self.head_weights.as_slice());
        out.push(&self.head_bias);
        if let Some(f) = &self.field {
            out.extend(f.tensors());
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

/// Everything the objective needs beyond the model and the batch.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    pub step: usize,
    pub variant: Variant,
    /// Weights after the variant's switches are applied.
    pub weights: &'a LossWeights,
    pub teacher: Option<&'a TeacherSnapshot>,
    /// Head rows `0..old_rows` belong to classes learned before this step.
    pub old_rows: usize,
    pub first_steps: &'a BTreeMap<ClassId, usize>,
    pub trajectories: &'a Trajectories,
    pub bank: &'a PrototypeBank,
    /// Classes learned up to and including this step.
    pub learned: &'a [ClassId],
    pub timestamps: &'a [f64],
}

/// Loss, gradient and the detached batch prototypes of one mini-batch.
#[derive(Debug, Clone)]
pub struct JointEval {
    pub breakdown: LossBreakdown,
    pub grads: ModelGrads,
    pub batch_prototypes: BTreeMap<ClassId, RealVector>,
    /// Smallest distance of any ReLU pre-activation or hinge argument from its kink.
    pub min_kink: f64,
    pub degenerate_time: usize,
}

fn project(v: &[f64], normalized: bool) -> Result<Vec<f64>> {
    if normalized {
        Ok(normalize(v)?.into_vec())
    } else {
        Ok(v.to_vec())
    }
}

fn unproject(v: &[f64], grad: &[f64], normalized: bool) -> Vec<f64> {
    if normalized {
        normalize_backward(v, grad)
    } else {
        grad.to_vec()
    }
}

/// Time used for Euler sources in this batch: the mean timestamp of the batch's
/// current-step samples, or the step timestamp when there are none.
pub fn batch_time(batch: &[&Sample], step: usize, timestamps: &[f64]) -> f64 {
    let current: Vec<f64> = batch.iter().filter(|s| s.step == step).map(|s| s.timestamp).collect();
    if current.is_empty() {
        timestamps[step]
    } else {
        current.iter().sum::<f64>() / current.len() as f64
    }
}

pub fn joint_objective(model: &ModelState, ctx: &ObjectiveContext<'_>, batch: &[&Sample]) -> Result<JointEval> {
    let w = ctx.weights;
    let normalized = ctx.variant.normalizes();
    let mut grads = model.zero_grads();
    let mut min_kink = f64::INFINITY;
    let mut degenerate_time = 0;

    let mut feats = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    let mut rows = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for s in batch {
        let (f, cache) = model.encoder.encode_with_cache(&s.x)?;
        min_kink = min_kink.min(cache.pre.iter().map(|p| p.abs()).fold(f64::INFINITY, f64::min));
        logits.push(model.head.logits(&f)?);
        rows.push(model.head.row_of(s.y).ok_or(Error::Lookup { kind: "head class", id: s.y })?);
        labels.push(s.y);
        feats.push(f);
        caches.push(cache);
    }

    let ce = ce_loss(&logits, &rows)?;
    let mut g_logits = ce.grads;
    let mut dist_value = 0.0;
    if let (Some(teacher), true) = (ctx.teacher, ctx.variant.distills() && ctx.old_rows > 0) {
        let t_logits: Vec<Vec<f64>> = batch.iter().map(|s| teacher.logits(&s.x)).collect::<Result<_>>()?;
        let old: Vec<usize> = (0..ctx.old_rows).collect();
        let kl = kl_distill(&t_logits, &logits, w.temperature, &old)?;
        dist_value = kl.value;
        for (g, k) in g_logits.iter_mut().zip(&kl.grads) {
            for (gi, ki) in g.iter_mut().zip(k) {
                *gi += w.dist * ki;
            }
        }
    }

    let mut g_feats: Vec<Vec<f64>> = vec![vec![0.0; model.encoder.feature_dim()]; batch.len()];
    for (i, g) in g_logits.iter().enumerate() {
        grads.head_weights.add_outer(1.0, g, &feats[i]);
        for (b, gi) in grads.head_bias.iter_mut().zip(g) {
            *b += gi;
        }
        model.head.weights.matvec_t_acc(g, &mut g_feats[i]);
    }

    // batch prototypes, in the projected space used by the prototype losses
    let mut protos: BTreeMap<ClassId, RealVector> = BTreeMap::new();
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for &y in &labels {
        *counts.entry(y).or_insert(0) += 1;
    }
    for &c in counts.keys() {
        protos.insert(c, batch_prototype(&feats, &labels, c).expect("class present"));
    }
    let mut projected: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for (&c, p) in &protos {
        projected.insert(c, project(p, normalized)?);
    }
    let mut g_proj: BTreeMap<ClassId, Vec<f64>> = projected.keys().map(|&c| (c, vec![0.0; model.encoder.feature_dim()])).collect();

    let prev = |c: ClassId, back: usize| -> Option<&RealVector> {
        let s = ctx.step.checked_sub(back)?;
        ctx.trajectories.get(&c)?.at_step(s).map(|snap| &snap.proto)
    };
    let is_old = |c: ClassId| ctx.first_steps.get(&c).is_some_and(|&f| f < ctx.step);

    let mut flow_value = 0.0;
    if let (Some(field), true) = (&model.field, ctx.step > 0 && w.flow > 0.0) {
        let dtau = ctx.timestamps[ctx.step] - ctx.timestamps[ctx.step - 1];
        let source_time = batch_time(batch, ctx.step, ctx.timestamps) - dtau;
        let last_time = *ctx.timestamps.last().expect("non-empty schedule");
        let mut grad_field = grads.field.take().expect("field gradients");
        for (&c, target) in &projected {
            let Some(src_raw) = prev(c, 1).filter(|_| is_old(c)) else { continue };
            let src = project(src_raw, normalized)?;
            let class_time = ctx.timestamps[ctx.first_steps[&c]];
            let enc = encode_time(&field.time, source_time, class_time, last_time)?;
            if enc.degenerate {
                degenerate_time += 1;
            }
            let (v, cache) = field.forward(&src, &enc.values)?;
            min_kink = min_kink.min(cache.pre.iter().map(|p| p.abs()).fold(f64::INFINITY, f64::min));
            let raw_pred: Vec<f64> = src.iter().zip(v.iter()).map(|(s, vi)| s + dtau * vi).collect();
            let pred = project(&raw_pred, normalized)?;
            let l = flow_loss(&[&pred], &[target])?;
            flow_value += l.value;
            let g_raw = unproject(&raw_pred, &l.grad_pred[0], normalized);
            let g_v: Vec<f64> = g_raw.iter().map(|g| w.flow * dtau * g).collect();
            field.backward_acc(&cache, &g_v, &mut grad_field)?;
            for (a, b) in g_proj.get_mut(&c).expect("present").iter_mut().zip(&l.grad_obs[0]) {
                *a += w.flow * b;
            }
        }
        grads.field = Some(grad_field);
    }

    let mut curve_value = 0.0;
    if w.curve > 0.0 {
        for (&c, cur) in &projected {
            let (Some(p1), Some(p2)) = (prev(c, 1), prev(c, 2)) else { continue };
            let (p1, p2) = (project(p1, normalized)?, project(p2, normalized)?);
            let l = curvature_loss(&[CurvatureTriple { older: &p2, previous: &p1, current: cur }])?;
            curve_value += l.value;
            for (a, b) in g_proj.get_mut(&c).expect("present").iter_mut().zip(&l.grads[0]) {
                *a += w.curve * b;
            }
        }
    }

    let mut sep_value = 0.0;
    if w.sep > 0.0 {
        let mut members: Vec<(ClassId, Vec<f64>, bool)> = Vec::new();
        for &c in ctx.learned {
            if let Some(p) = projected.get(&c) {
                members.push((c, p.clone(), true));
            } else if let Some(ema) = ctx.bank.get(c) {
                members.push((c, project(ema, normalized)?, false));
            }
        }
        let vecs: Vec<&[f64]> = members.iter().map(|m| m.1.as_slice()).collect();
        for i in 0..vecs.len() {
            for j in (i + 1)..vecs.len() {
                min_kink = min_kink.min((w.margin - dist(vecs[i], vecs[j])).abs());
            }
        }
        let l = separation_loss(&vecs, w.margin)?;
        sep_value = l.value;
        for (m, g) in members.iter().zip(&l.grads) {
            if m.2 {
                for (a, b) in g_proj.get_mut(&m.0).expect("present").iter_mut().zip(g) {
                    *a += w.sep * b;
                }
            }
        }
    }

    for (&c, g) in &g_proj {
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let g_mean = unproject(&protos[&c], g, normalized);
        let share = 1.0 / counts[&c] as f64;
        for (i, &y) in labels.iter().enumerate() {
            if y == c {
                for (a, b) in g_feats[i].iter_mut().zip(&g_mean) {
                    *a += share * b;
                }
            }
        }
    }

    for (cache, g) in caches.iter().zip(&g_feats) {
        model.encoder.params.backward_acc(cache, g, &mut grads.encoder)?;
    }

    let breakdown = total_loss(ce.value, dist_value, flow_value, curve_value, sep_value, w)?;
    Ok(JointEval {
        breakdown,
        grads,
        batch_prototypes: protos,
        min_kink,
        degenerate_time,
    })
}
