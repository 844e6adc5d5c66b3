//! Two-layer perceptron `out = W2 · ReLU(W1 · x + b1) + b2` with analytic gradients.

use serde::{Deserialize, Serialize};

use super::linalg::{Matrix, RealVector};
use super::rng::Rng;
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp2Params {
    /// hidden × in
    pub w1: Matrix,
    pub b1: RealVector,
    /// out × hidden
    pub w2: Matrix,
    pub b2: RealVector,
}

/// Activations retained by [`Mlp2Params::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Mlp2Cache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl Mlp2Params {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, input),
            b1: RealVector::zeros(hidden),
            w2: Matrix::zeros(output, hidden),
            b2: RealVector::zeros(output),
        }
    }

    /// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn kaiming(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input, hidden, output);
        let s1 = (2.0 / input as f64).sqrt();
        let s2 = (2.0 / hidden as f64).sqrt();
        for w in p.w1.as_mut_slice() {
            *w = s1 * rng.normal();
        }
        for w in p.w2.as_mut_slice() {
            *w = s2 * rng.normal();
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.hidden_dim();
        if self.b1.dim() != h || self.w2.cols() != h || self.b2.dim() != self.output_dim() {
            return shape_err("inconsistent two-layer perceptron shapes");
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(RealVector, Mlp2Cache)> {
        self.check_shapes()?;
        if input.len() != self.input_dim() {
            return shape_err(format!(
                "input of dim {} for {} input units",
                input.len(),
                self.input_dim()
            ));
        }
        let mut pre = self.w1.matvec(input);
        for (p, b) in pre.iter_mut().zip(self.b1.iter()) {
            *p += b;
        }
        let hidden: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let mut out = self.w2.matvec(&hidden);
        for (o, b) in out.iter_mut().zip(self.b2.iter()) {
            *o += b;
        }
        Ok((
            RealVector::from(out),
            Mlp2Cache {
                input: input.to_vec(),
                pre,
                hidden,
            },
        ))
    }

    /// Gradients of `output · grad_output` w.r.t. parameters and input.
    pub fn backward(&self, cache: &Mlp2Cache, grad_output: &[f64]) -> Result<(Mlp2Params, RealVector)> {
        let mut grads = Self::zeros(self.input_dim(), self.hidden_dim(), self.output_dim());
        let gin = self.backward_acc(cache, grad_output, &mut grads)?;
        Ok((grads, gin))
    }

    /// Like [`backward`](Self::backward) but accumulates parameter gradients into `grads`.
    pub fn backward_acc(
        &self,
        cache: &Mlp2Cache,
        grad_output: &[f64],
        grads: &mut Mlp2Params,
    ) -> Result<RealVector> {
        if grad_output.len() != self.output_dim()
            || cache.hidden.len() != self.hidden_dim()
            || cache.input.len() != self.input_dim()
        {
            return shape_err("backward called with mismatched cache or gradient");
        }
        grads.w2.add_outer(1.0, grad_output, &cache.hidden);
        for (g, d) in grads.b2.iter_mut().zip(grad_output) {
            *g += d;
        }
        let mut grad_hidden = vec![0.0; self.hidden_dim()];
        self.w2.matvec_t_acc(grad_output, &mut grad_hidden);
        // ReLU subgradient at 0 is 0
        for (g, &p) in grad_hidden.iter_mut().zip(&cache.pre) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        grads.w1.add_outer(1.0, &grad_hidden, &cache.input);
        for (g, d) in grads.b1.iter_mut().zip(&grad_hidden) {
            *g += d;
        }
        let mut grad_input = vec![0.0; self.input_dim()];
        self.w1.matvec_t_acc(&grad_hidden, &mut grad_input);
        Ok(RealVector::from(grad_input))
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites all parameters from a flat vector laid out as in [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return shape_err(format!("{} values for {} parameters", flat.len(), self.num_params()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
