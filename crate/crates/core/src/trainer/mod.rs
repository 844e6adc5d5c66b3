//! The incremental training loop, its variants, and suites of runs.

mod benchmark;
mod gradsuite;
mod objective;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{FlowField, TimeEncodingConfig};
use crate::losses::{LossBreakdown, LossWeights};
use crate::metrics::{
    dynamic_regret, forgetting_score, forgetting_score_all, iou_from_confusion, oa_f1, pearson, per_class_forgetting,
    prototype_angles, ConfusionMatrix, MetricsBundle, StepHistory,
};
use crate::model::{freeze_teacher, Encoder, Head, HeadInit};
use crate::numkit::linalg::RealVector;
use crate::numkit::optim::{sgd_step, SgdConfig, SgdState};
use crate::numkit::rng::Rng;
use crate::protobank::{geometry, normalize, snapshot, PrototypeBank, Trajectories};
use crate::stream::{sample_eval, sample_step, time_shuffle, ClassId, MemoryBuffer, MemoryStrategy, Sample, TaskSchedule};

pub use benchmark::{
    run_ablation_suite, run_seeds, run_sweep, standard_benchmark, standard_config, AblationRow, RunsByVariant, SweepCell, ABLATION_VARIANTS,
};
pub use gradsuite::{gradient_suite, GradCase, GradSuiteReport};
pub use objective::{batch_time, joint_objective, JointEval, ModelGrads, ModelState, ObjectiveContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoField,
    NoCurve,
    NoSep,
    NoTime,
    NoNorm,
    FineTune,
    JointOracle,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoField,
        Variant::NoCurve,
        Variant::NoSep,
        Variant::NoTime,
        Variant::NoNorm,
        Variant::FineTune,
        Variant::JointOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoField => "no_field",
            Variant::NoCurve => "no_curve",
            Variant::NoSep => "no_sep",
            Variant::NoTime => "no_time",
            Variant::NoNorm => "no_norm",
            Variant::FineTune => "fine_tune",
            Variant::JointOracle => "joint_oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    fn baseline(self) -> bool {
        matches!(self, Variant::FineTune | Variant::JointOracle)
    }

    pub fn uses_field(self) -> bool {
        !self.baseline() && self != Variant::NoField
    }

    pub fn time_conditioned(self) -> bool {
        self != Variant::NoTime
    }

    pub fn normalizes(self) -> bool {
        self != Variant::NoNorm
    }

    pub fn distills(self) -> bool {
        !self.baseline()
    }

    /// Whether exemplar memory is replayed alongside the current step's data.
    pub fn replays(self) -> bool {
        self != Variant::FineTune
    }

    /// Loss weights with this variant's switches applied.
    pub fn effective_weights(self, w: &LossWeights) -> LossWeights {
        let mut out = w.clone();
        if self.baseline() {
            out.dist = 0.0;
            out.flow = 0.0;
            out.curve = 0.0;
            out.sep = 0.0;
        }
        match self {
            Variant::NoField => out.flow = 0.0,
            Variant::NoCurve => out.curve = 0.0,
            Variant::NoSep => out.sep = 0.0,
            _ => {}
        }
        out
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub iterations: usize,
    pub warmup: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub variant: Variant,
    pub memory_per_class: usize,
    pub memory_strategy: MemoryStrategy,
    pub ema_alpha: f64,
    pub encoder_hidden: usize,
    pub feature_dim: usize,
    pub field_hidden: usize,
    pub time: TimeEncodingConfig,
    pub head_init: HeadInit,
    pub eval_per_class: usize,
    /// Evaluate old classes at their introduction-time distribution instead of the current one.
    pub eval_at_intro: bool,
    /// Fraction of training samples whose timestamps are permuted.
    pub time_shuffle: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            iterations: 2000,
            warmup: 100,
            batch: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            poly_power: 0.9,
            clip_norm: 1.0,
            seed: 0,
            variant: Variant::Full,
            memory_per_class: 20,
            memory_strategy: MemoryStrategy::Herding,
            ema_alpha: 0.1,
            encoder_hidden: 32,
            feature_dim: 8,
            field_hidden: 256,
            time: TimeEncodingConfig::default(),
            head_init: HeadInit::Zero,
            eval_per_class: 500,
            eval_at_intro: false,
            time_shuffle: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.time.validate()?;
        if self.iterations == 0 || self.warmup > self.iterations {
            return Err(Error::Argument("need 0 < warmup <= iterations".into()));
        }
        if self.batch == 0 || self.eval_per_class == 0 {
            return Err(Error::Argument("batch and evaluation sizes must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || !(self.clip_norm > 0.0) {
            return Err(Error::Argument("invalid optimizer settings".into()));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::Argument("ema_alpha must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.time_shuffle) {
            return Err(Error::Argument("time_shuffle must lie in [0, 1]".into()));
        }
        if self.feature_dim < 2 || self.encoder_hidden == 0 || self.field_hidden == 0 {
            return Err(Error::Argument("network sizes too small".into()));
        }
        Ok(())
    }
}

/// A training configuration together with the stream it runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub train: TrainConfig,
    pub schedule: TaskSchedule,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.schedule.validate()
    }
}

/// Linear warmup from `1e-4` to the decayed rate at `warmup`, then `η₀ (1 − i/I)^power`.
pub fn poly_lr(i: usize, iterations: usize, eta0: f64, warmup: usize, power: f64) -> f64 {
    let decayed = |k: usize| eta0 * (1.0 - (k.min(iterations) as f64) / iterations as f64).max(0.0).powf(power);
    if i < warmup {
        let start = 1e-4;
        start + (decayed(warmup) - start) * i as f64 / warmup as f64
    } else {
        decayed(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub step: usize,
    pub iteration: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Everything produced by one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub variant: Variant,
    pub iou_history: StepHistory,
    pub accuracy_history: StepHistory,
    pub losses: Vec<IterationLog>,
    pub trajectories: Trajectories,
    pub final_classes: Vec<ClassId>,
    pub final_confusion: ConfusionMatrix,
    pub metrics: MetricsBundle,
    pub checkpoints: Vec<ModelState>,
    pub memory_max_per_class: Vec<usize>,
    pub degenerate_time_encodings: usize,
}

impl RunRecord {
    pub fn first_steps(&self) -> BTreeMap<ClassId, usize> {
        first_steps(&self.config.schedule)
    }
}

fn first_steps(schedule: &TaskSchedule) -> BTreeMap<ClassId, usize> {
    schedule
        .class_sets
        .iter()
        .enumerate()
        .flat_map(|(t, set)| set.iter().map(move |&c| (c, t)))
        .collect()
}

/// Mutable training state carried across steps.
pub struct TrainerState {
    pub model: ModelState,
    pub bank: PrototypeBank,
    pub trajectories: Trajectories,
    pub memory: MemoryBuffer,
    pub iou_history: StepHistory,
    pub accuracy_history: StepHistory,
    pub losses: Vec<IterationLog>,
    pub checkpoints: Vec<ModelState>,
    pub memory_max_per_class: Vec<usize>,
    pub degenerate_time: usize,
    pub last_confusion: Option<(Vec<ClassId>, ConfusionMatrix)>,
    next_step: usize,
    step_data: Vec<Vec<Sample>>,
    root: Rng,
}

const DATA_STREAM: u64 = 1;
const ENCODER_STREAM: u64 = 2;
const HEAD_STREAM: u64 = 3;
const FIELD_STREAM: u64 = 4;
const BATCH_STREAM: u64 = 5;
const MEMORY_STREAM: u64 = 6;
const SHUFFLE_STREAM: u64 = 7;
const EVAL_STREAM: u64 = 1000;

impl TrainerState {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let tc = &cfg.train;
        let s = &cfg.schedule;
        let root = Rng::new(tc.seed);
        let encoder = Encoder::new(s.raw_dim(), tc.encoder_hidden, tc.feature_dim, &mut root.split(ENCODER_STREAM))?;
        let field = if tc.variant.uses_field() {
            Some(FlowField::new(
                tc.feature_dim,
                tc.field_hidden,
                tc.time.clone(),
                tc.variant.time_conditioned(),
                &mut root.split(FIELD_STREAM),
            )?)
        } else {
            None
        };
        let mut data_rng = root.split(DATA_STREAM);
        let mut all: Vec<Sample> = Vec::new();
        for t in 0..s.num_steps() {
            all.extend(sample_step(s, t, s.samples_per_step, &mut data_rng)?);
        }
        if tc.time_shuffle > 0.0 {
            time_shuffle(&mut all, tc.time_shuffle, &mut root.split(SHUFFLE_STREAM))?;
        }
        let mut step_data = vec![Vec::new(); s.num_steps()];
        for x in all {
            step_data[x.step].push(x);
        }
        Ok(Self {
            model: ModelState {
                encoder,
                head: Head::empty(tc.feature_dim),
                field,
            },
            bank: PrototypeBank::new(tc.ema_alpha)?,
            trajectories: Trajectories::new(),
            memory: MemoryBuffer::new(tc.memory_per_class, tc.memory_strategy),
            iou_history: BTreeMap::new(),
            accuracy_history: BTreeMap::new(),
            losses: Vec::new(),
            checkpoints: Vec::new(),
            memory_max_per_class: Vec::new(),
            degenerate_time: 0,
            last_confusion: None,
            next_step: 0,
            step_data,
            root,
        })
    }
}

/// Trains step `t` (which must be the next one) and evaluates at its end.
pub fn run_step(state: &mut TrainerState, cfg: &ExperimentConfig, t: usize) -> Result<()> {
    if t != state.next_step {
        return Err(Error::State(format!("expected step {}, got {t}", state.next_step)));
    }
    let tc = &cfg.train;
    let s = &cfg.schedule;
    let weights = tc.variant.effective_weights(&tc.weights);
    let firsts = first_steps(s);
    let learned = s.classes_upto(t);
    let old_rows = state.model.head.len();
    let teacher = (t > 0).then(|| freeze_teacher(&state.model.encoder, &state.model.head));
    state
        .model
        .head
        .grow(&s.class_sets[t], tc.head_init, &mut state.root.split(HEAD_STREAM + 16 * t as u64))?;

    let pool: Vec<Sample> = if tc.variant == Variant::JointOracle {
        state.step_data[..=t].concat()
    } else if tc.variant.replays() {
        state.step_data[t].iter().cloned().chain(state.memory.samples().cloned()).collect()
    } else {
        state.step_data[t].clone()
    };
    let shapes: Vec<usize> = state.model.tensors().iter().map(|x| x.len()).collect();
    let mut opt = SgdState::new(&shapes);
    let mut batch_rng = state.root.split(BATCH_STREAM + 16 * t as u64);

    for i in 0..tc.iterations {
        let lr = poly_lr(i, tc.iterations, tc.lr, tc.warmup, tc.poly_power);
        let batch: Vec<&Sample> = (0..tc.batch).map(|_| &pool[batch_rng.below(pool.len())]).collect();
        let ctx = ObjectiveContext {
            step: t,
            variant: tc.variant,
            weights: &weights,
            teacher: teacher.as_ref(),
            old_rows,
            first_steps: &firsts,
            trajectories: &state.trajectories,
            bank: &state.bank,
            learned: &learned,
            timestamps: &s.timestamps,
        };
        let eval = joint_objective(&state.model, &ctx, &batch)
            .map_err(|e| Error::Numeric(format!("step {t} iteration {i}: {e}")))?;
        if !eval.breakdown.total.is_finite() {
            return Err(Error::Numeric(format!("step {t} iteration {i}: loss {:?}", eval.breakdown)));
        }
        state.degenerate_time += eval.degenerate_time;
        for (c, p) in &eval.batch_prototypes {
            state.bank.update(*c, p)?;
        }
        let sgd = SgdConfig {
            lr,
            momentum: tc.momentum,
            weight_decay: tc.weight_decay,
            clip_norm: tc.clip_norm,
        };
        let gt = eval.grads.tensors();
        let mut pt = state.model.tensors_mut();
        sgd_step(&mut pt, &gt, &mut opt, &sgd).map_err(|e| Error::Numeric(format!("step {t} iteration {i}: {e}")))?;
        state.losses.push(IterationLog {
            step: t,
            iteration: i,
            lr,
            loss: eval.breakdown,
        });
    }

    snapshot(&state.bank, t, s.timestamps[t], &mut state.trajectories)?;
    evaluate_step(state, cfg, t, &learned)?;

    let mut mem_rng = state.root.split(MEMORY_STREAM + 16 * t as u64);
    match tc.memory_strategy {
        MemoryStrategy::Herding => {
            let candidates = state.memory.herding_pool(&state.step_data[t]);
            let feats: Vec<RealVector> = candidates
                .iter()
                .map(|x| state.model.encoder.encode(&x.x))
                .collect::<Result<_>>()?;
            state.memory.update(&candidates, Some(&feats), &mut mem_rng)?;
        }
        MemoryStrategy::Random => {
            let new = state.step_data[t].clone();
            state.memory.update(&new, None, &mut mem_rng)?;
        }
    }
    state.memory_max_per_class.push(state.memory.max_class_count());
    state.checkpoints.push(state.model.clone());
    state.next_step += 1;
    Ok(())
}

fn evaluate_step(state: &mut TrainerState, cfg: &ExperimentConfig, t: usize, learned: &[ClassId]) -> Result<()> {
    let s = &cfg.schedule;
    let head = &state.model.head;
    let mut rng = Rng::new(cfg.train.seed).split(EVAL_STREAM + t as u64);
    let eval = sample_eval(s, t, cfg.train.eval_per_class, cfg.train.eval_at_intro, &mut rng)?;
    let mut cm = ConfusionMatrix::new(head.len());
    for x in &eval {
        let logits = head.logits(&state.model.encoder.encode(&x.x)?)?;
        let pred = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
            .0;
        let truth = head.row_of(x.y).ok_or(Error::Lookup { kind: "head class", id: x.y })?;
        cm.add(truth, pred)?;
    }
    let iou = cm.iou();
    let recall = cm.recall();
    let steps = s.num_steps();
    for &c in learned {
        let r = head.row_of(c).expect("learned class in head");
        state.iou_history.entry(c).or_insert_with(|| vec![None; steps])[t] = iou[r];
        state.accuracy_history.entry(c).or_insert_with(|| vec![None; steps])[t] = recall[r];
    }
    state.last_confusion = Some((head.classes().to_vec(), cm));
    Ok(())
}

/// Final-step metrics from a finished state.
pub fn final_metrics(state: &TrainerState, cfg: &ExperimentConfig) -> Result<MetricsBundle> {
    let s = &cfg.schedule;
    let last = s.last_step();
    let firsts = first_steps(s);
    let (classes, cm) = state
        .last_confusion
        .as_ref()
        .ok_or_else(|| Error::State("no evaluation has run".into()))?;
    let old: Vec<usize> = (0..classes.len()).filter(|&r| firsts[&classes[r]] < last).collect();
    let new: Vec<usize> = (0..classes.len()).filter(|&r| firsts[&classes[r]] == last).collect();
    let splits = iou_from_confusion(cm, &old, &new);
    let scores = oa_f1(cm);

    let mut per_class_iou = BTreeMap::new();
    let mut per_class_forget = BTreeMap::new();
    let mut per_class_regret = BTreeMap::new();
    let mut per_class_curv = BTreeMap::new();
    for (r, &c) in classes.iter().enumerate() {
        per_class_iou.insert(c, splits.per_class[r]);
        if let Some(f) = per_class_forgetting(&state.iou_history[&c]) {
            per_class_forget.insert(c, f);
        }
        let risks: Vec<f64> = state.accuracy_history[&c].iter().flatten().map(|a| 1.0 - a).collect();
        if !risks.is_empty() {
            per_class_regret.insert(c, dynamic_regret(&risks)?);
        }
        let curv = match state.trajectories.get(&c) {
            Some(tr) => geometry(&tr.unit_points()?).mean_curvature,
            None => None,
        };
        per_class_curv.insert(c, curv);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = per_class_curv
        .iter()
        .filter_map(|(c, k)| Some((((*k)?), *per_class_forget.get(c)?)))
        .unzip();
    let finals: Vec<(ClassId, RealVector)> = classes
        .iter()
        .filter_map(|&c| state.bank.get(c).map(|p| (c, p)))
        .map(|(c, p)| Ok((c, normalize(p)?)))
        .collect::<Result<_>>()?;
    let angles = prototype_angles(&finals)?;
    Ok(MetricsBundle {
        per_class_iou,
        miou_all: splits.all,
        miou_old: splits.old,
        miou_new: splits.new,
        oa: scores.oa,
        mean_f1: scores.mean_f1,
        forgetting: forgetting_score(&state.iou_history, &s.class_sets)?,
        forgetting_all: forgetting_score_all(&state.iou_history, &s.class_sets)?,
        per_class_forgetting: per_class_forget,
        per_class_regret,
        per_class_curvature: per_class_curv,
        curvature_forgetting_corr: pearson(&xs, &ys)?,
        min_cosine_margin: angles.min_margin,
        mean_angle: angles.mean_degrees,
        angles: angles.pairs,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut state = TrainerState::new(cfg)?;
    for t in 0..cfg.schedule.num_steps() {
        run_step(&mut state, cfg, t)?;
    }
    let metrics = final_metrics(&state, cfg)?;
    let (final_classes, final_confusion) = state.last_confusion.clone().expect("evaluated");
    Ok(RunRecord {
        config: cfg.clone(),
        seed: cfg.train.seed,
        variant: cfg.train.variant,
        iou_history: state.iou_history,
        accuracy_history: state.accuracy_history,
        losses: state.losses,
        trajectories: state.trajectories,
        final_classes,
        final_confusion,
        metrics,
        checkpoints: state.checkpoints,
        memory_max_per_class: state.memory_max_per_class,
        degenerate_time_encodings: state.degenerate_time,
    })
}
