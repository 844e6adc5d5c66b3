//! Time-conditioned velocity field over prototypes, forward-Euler prediction
//! and the flow-consistency loss.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numkit::linalg::{norm_sq, sub, RealVector};
use crate::numkit::mlp::{Mlp2Cache, Mlp2Params};
use crate::numkit::optim::{sgd_step, SgdConfig, SgdState};
use crate::numkit::rng::Rng;
use crate::stream::{shuffle_fraction, ClassId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeNormalization {
    /// `(t − t_c) / (T − t_c)`
    PerClass,
    /// `t / T`
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeEncodingConfig {
    pub d_tau: usize,
    /// Frequency of the first sin/cos pair.
    pub omega0: f64,
    /// Ratio between consecutive pair frequencies.
    pub omega_base: f64,
    pub normalization: TimeNormalization,
}

impl Default for TimeEncodingConfig {
    fn default() -> Self {
        Self {
            d_tau: 16,
            omega0: std::f64::consts::PI,
            omega_base: 2.0,
            normalization: TimeNormalization::PerClass,
        }
    }
}

impl TimeEncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_tau == 0 || !self.d_tau.is_multiple_of(2) {
            return Err(Error::Argument(format!("d_tau must be even and positive, got {}", self.d_tau)));
        }
        if !(self.omega0 > 0.0 && self.omega_base > 1.0 && self.omega0.is_finite() && self.omega_base.is_finite()) {
            return Err(Error::Argument("time frequencies must be positive and increasing".into()));
        }
        Ok(())
    }

    /// `ω` of the pair holding component `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        self.omega0 * self.omega_base.powi((k / 2) as i32)
    }

    /// Interleaved `sin(ω τ̃), cos(ω τ̃)` pairs.
    pub fn encode_scaled(&self, scaled_time: f64) -> RealVector {
        (0..self.d_tau)
            .map(|k| {
                let a = self.frequency(k) * scaled_time;
                if k % 2 == 0 {
                    a.sin()
                } else {
                    a.cos()
                }
            })
            .collect::<Vec<_>>()
            .into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncoding {
    pub values: RealVector,
    pub scaled_time: f64,
    /// Set when the normalization span was empty and `τ̃` fell back to 0.
    pub degenerate: bool,
}

/// Encodes time `t` for a class first seen at `t_first`, with `t_last` the end of the horizon.
pub fn encode_time(cfg: &TimeEncodingConfig, t: f64, t_first: f64, t_last: f64) -> Result<TimeEncoding> {
    cfg.validate()?;
    if !(t.is_finite() && t_first.is_finite() && t_last.is_finite()) {
        return Err(Error::Numeric("time encoding input".into()));
    }
    let (num, den) = match cfg.normalization {
        TimeNormalization::PerClass => (t - t_first, t_last - t_first),
        TimeNormalization::Global => (t, t_last),
    };
    let degenerate = den.abs() <= f64::EPSILON;
    let scaled_time = if degenerate { 0.0 } else { num / den };
    Ok(TimeEncoding {
        values: cfg.encode_scaled(scaled_time),
        scaled_time,
        degenerate,
    })
}

/// Two-layer field `v = F([μ; e(τ)])`, or `F(μ)` when time conditioning is off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub params: Mlp2Params,
    pub time_conditioned: bool,
    pub time: TimeEncodingConfig,
}

impl FlowField {
    pub fn new(
        feature_dim: usize,
        hidden: usize,
        time: TimeEncodingConfig,
        time_conditioned: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        time.validate()?;
        let input = feature_dim + if time_conditioned { time.d_tau } else { 0 };
        let mut params = Mlp2Params::kaiming(input, hidden, feature_dim, rng);
        for w in params.w2.as_mut_slice() {
            *w *= 0.1;
        }
        Ok(Self { params, time_conditioned, time })
    }

    pub fn feature_dim(&self) -> usize {
        self.params.output_dim()
    }

    fn input(&self, mu: &[f64], time_enc: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.feature_dim() {
            return shape_err(format!("prototype of dim {} for field of dim {}", mu.len(), self.feature_dim()));
        }
        if !self.time_conditioned {
            return Ok(mu.to_vec());
        }
        if time_enc.len() != self.time.d_tau {
            return shape_err(format!("time encoding of dim {} for d_tau {}", time_enc.len(), self.time.d_tau));
        }
        Ok([mu, time_enc].concat())
    }

    pub fn forward(&self, mu: &[f64], time_enc: &[f64]) -> Result<(RealVector, Mlp2Cache)> {
        self.params.forward(&self.input(mu, time_enc)?)
    }

    pub fn predict_velocity(&self, mu: &[f64], time_enc: &[f64]) -> Result<RealVector> {
        Ok(self.forward(mu, time_enc)?.0)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `μ`.
    pub fn backward_acc(&self, cache: &Mlp2Cache, grad_velocity: &[f64], grads: &mut Mlp2Params) -> Result<Vec<f64>> {
        let gin = self.params.backward_acc(cache, grad_velocity, grads)?;
        Ok(gin[..self.feature_dim()].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedPrototype {
    pub class: ClassId,
    pub step: usize,
    pub proto: RealVector,
}

/// `μ̂ = μ + Δτ · F(μ, τ)`.
pub fn euler_step(
    field: &FlowField,
    class: ClassId,
    target_step: usize,
    mu: &[f64],
    time_enc: &[f64],
    dtau: f64,
) -> Result<PredictedPrototype> {
    let v = field.predict_velocity(mu, time_enc)?;
    let proto: Vec<f64> = mu.iter().zip(v.iter()).map(|(m, vi)| m + dtau * vi).collect();
    Ok(PredictedPrototype {
        class,
        step: target_step,
        proto: proto.into(),
    })
}

/// Value and gradients of a loss over paired vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_pred: Vec<Vec<f64>>,
    pub grad_obs: Vec<Vec<f64>>,
}

/// `Σ_c ‖μ̂_c − μ_c‖²`.
pub fn flow_loss<P: AsRef<[f64]>, O: AsRef<[f64]>>(predictions: &[P], observed: &[O]) -> Result<PairLoss> {
    if predictions.len() != observed.len() {
        return shape_err("flow loss needs one observation per prediction");
    }
    let mut value = 0.0;
    let mut grad_pred = Vec::with_capacity(predictions.len());
    let mut grad_obs = Vec::with_capacity(predictions.len());
    for (p, o) in predictions.iter().zip(observed) {
        let (p, o) = (p.as_ref(), o.as_ref());
        if p.len() != o.len() {
            return shape_err("flow loss pair dimension mismatch");
        }
        let r = sub(p, o);
        value += norm_sq(&r);
        grad_obs.push(r.iter().map(|x| -2.0 * x).collect());
        grad_pred.push(r.iter().map(|x| 2.0 * x).collect());
    }
    Ok(PairLoss { value, grad_pred, grad_obs })
}

/// Synthetic dynamics `μ^{k+1} = μ^k + A μ^k + b(τ_k)` used to probe whether a
/// trained field exploits its time input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSignalConfig {
    pub dim: usize,
    pub steps: usize,
    pub train_trajectories: usize,
    pub test_trajectories: usize,
    pub hidden: usize,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    /// Size of the time-dependent forcing `b(τ)`.
    pub forcing: f64,
    pub time: TimeEncodingConfig,
}

impl Default for TimeSignalConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            steps: 8,
            train_trajectories: 64,
            test_trajectories: 32,
            hidden: 64,
            iterations: 2000,
            batch: 32,
            lr: 0.01,
            forcing: 1.0,
            time: TimeEncodingConfig {
                d_tau: 8,
                normalization: TimeNormalization::Global,
                ..TimeEncodingConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSignalReport {
    pub alpha: f64,
    pub seed: u64,
    pub untrained_mse: f64,
    pub trained_mse: f64,
}

struct Transition {
    from: Vec<f64>,
    tau: f64,
    to: Vec<f64>,
}

fn forcing(cfg: &TimeSignalConfig, tau: f64) -> Vec<f64> {
    let phase = std::f64::consts::TAU * tau / cfg.steps as f64;
    (0..cfg.dim)
        .map(|j| cfg.forcing * (phase + j as f64 * std::f64::consts::FRAC_PI_2).sin())
        .collect()
}

fn transitions(cfg: &TimeSignalConfig, count: usize, rng: &mut Rng) -> Vec<Transition> {
    let mut out = Vec::with_capacity(count * cfg.steps);
    for _ in 0..count {
        let mut mu: Vec<f64> = (0..cfg.dim).map(|_| rng.normal()).collect();
        for k in 0..cfg.steps {
            let tau = k as f64;
            let b = forcing(cfg, tau);
            let next: Vec<f64> = (0..cfg.dim)
                .map(|j| {
                    let rot = if j % 2 == 0 { mu.get(j + 1) } else { Some(&mu[j - 1]) };
                    let coupling = rot.map_or(0.0, |r| if j % 2 == 0 { 0.2 * r } else { -0.2 * r });
                    mu[j] - 0.1 * mu[j] + coupling + b[j]
                })
                .collect();
            out.push(Transition { from: mu.clone(), tau, to: next.clone() });
            mu = next;
        }
    }
    out
}

fn prediction_mse(field: &FlowField, cfg: &TimeSignalConfig, data: &[Transition]) -> Result<f64> {
    let mut total = 0.0;
    for tr in data {
        let enc = encode_time(&cfg.time, tr.tau, 0.0, cfg.steps as f64)?;
        let pred = euler_step(field, 0, 0, &tr.from, &enc.values, 1.0)?;
        total += norm_sq(&sub(&pred.proto, &tr.to));
    }
    Ok(total / (data.len() * cfg.dim) as f64)
}

/// Trains a field on transitions whose timestamps are shuffled at rate `alpha`
/// and reports one-step prediction MSE on held-out transitions with true timestamps.
pub fn time_signal_experiment(cfg: &TimeSignalConfig, alpha: f64, seed: u64) -> Result<TimeSignalReport> {
    let root = Rng::new(seed);
    let mut data_rng = root.split(1);
    let train = transitions(cfg, cfg.train_trajectories, &mut data_rng);
    let test = transitions(cfg, cfg.test_trajectories, &mut root.split(2));
    let mut taus: Vec<f64> = train.iter().map(|t| t.tau).collect();
    shuffle_fraction(&mut taus, alpha, &mut root.split(3))?;

    let mut field = FlowField::new(cfg.dim, cfg.hidden, cfg.time.clone(), true, &mut root.split(4))?;
    let untrained_mse = prediction_mse(&field, cfg, &test)?;

    let sgd = SgdConfig {
        lr: cfg.lr,
        momentum: 0.9,
        weight_decay: 0.0,
        clip_norm: 1.0,
    };
    let shapes: Vec<usize> = field.params.tensors().iter().map(|t| t.len()).collect();
    let mut state = SgdState::new(&shapes);
    let mut batch_rng = root.split(5);
    for _ in 0..cfg.iterations {
        let mut grads = Mlp2Params::zeros(field.params.input_dim(), cfg.hidden, cfg.dim);
        for _ in 0..cfg.batch {
            let i = batch_rng.below(train.len());
            let enc = encode_time(&cfg.time, taus[i], 0.0, cfg.steps as f64)?;
            let (v, cache) = field.forward(&train[i].from, &enc.values)?;
            let pred: Vec<f64> = train[i].from.iter().zip(v.iter()).map(|(m, vi)| m + vi).collect();
            let loss = flow_loss(&[pred], &[&train[i].to])?;
            let g: Vec<f64> = loss.grad_pred[0].iter().map(|x| x / cfg.batch as f64).collect();
            field.backward_acc(&cache, &g, &mut grads)?;
        }
        let gt = grads.tensors();
        let mut pt = field.params.tensors_mut();
        let mut refs: Vec<&mut [f64]> = pt.iter_mut().map(|t| &mut **t).collect();
        sgd_step(&mut refs, &gt, &mut state, &sgd)?;
    }
    Ok(TimeSignalReport {
        alpha,
        seed,
        untrained_mse,
        trained_mse: prediction_mse(&field, cfg, &test)?,
    })
}
