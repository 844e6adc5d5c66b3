//! Encoder `E_θ`, growing linear head `g_θ` and frozen teacher snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numkit::linalg::{dot, Matrix, RealVector};
use crate::numkit::mlp::{Mlp2Cache, Mlp2Params};
use crate::numkit::rng::Rng;
use crate::stream::ClassId;

/// Raw space `ℝ^p` to feature space `ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub params: Mlp2Params,
}

impl Encoder {
    pub fn new(raw_dim: usize, hidden: usize, feature_dim: usize, rng: &mut Rng) -> Result<Self> {
        if feature_dim < 2 {
            return Err(Error::Argument(format!("feature dim must be at least 2, got {feature_dim}")));
        }
        Ok(Self {
            params: Mlp2Params::kaiming(raw_dim, hidden, feature_dim, rng),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.params.output_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<RealVector> {
        Ok(self.params.forward(x)?.0)
    }

    pub fn encode_with_cache(&self, x: &[f64]) -> Result<(RealVector, Mlp2Cache)> {
        self.params.forward(x)
    }
}

/// How new head rows start out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    #[default]
    Zero,
    /// Gaussian entries with the given standard deviation.
    Random(f64),
}

/// One weight row and bias per learned class, in introduction order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    classes: Vec<ClassId>,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn empty(feature_dim: usize) -> Self {
        Self {
            classes: Vec::new(),
            weights: Matrix::zeros(0, feature_dim),
            bias: Vec::new(),
        }
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn row_of(&self, class: ClassId) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// `logit_c = w_c · feature + b_c` for every row.
    pub fn logits(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::State("head has no classes".into()));
        }
        if feature.len() != self.feature_dim() {
            return shape_err(format!(
                "feature of dim {} for head of dim {}",
                feature.len(),
                self.feature_dim()
            ));
        }
        Ok((0..self.len())
            .map(|r| dot(self.weights.row(r), feature) + self.bias[r])
            .collect())
    }

    /// Appends rows for `new_classes`; existing rows are untouched.
    pub fn grow(&mut self, new_classes: &[ClassId], init: HeadInit, rng: &mut Rng) -> Result<()> {
        for (i, &c) in new_classes.iter().enumerate() {
            if self.classes.contains(&c) || new_classes[..i].contains(&c) {
                return Err(Error::Argument(format!("class {c} already in head")));
            }
        }
        let d = self.feature_dim();
        for &c in new_classes {
            let row: Vec<f64> = match init {
                HeadInit::Zero => vec![0.0; d],
                HeadInit::Random(std) => (0..d).map(|_| std * rng.normal()).collect(),
            };
            self.weights.push_row(&row)?;
            self.bias.push(0.0);
            self.classes.push(c);
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        [self.weights.as_slice(), &self.bias].concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let nw = self.weights.as_slice().len();
        if flat.len() != nw + self.bias.len() {
            return shape_err("flat head vector has wrong length");
        }
        self.weights.as_mut_slice().copy_from_slice(&flat[..nw]);
        self.bias.copy_from_slice(&flat[nw..]);
        Ok(())
    }

    pub fn from_parts(classes: Vec<ClassId>, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != classes.len() || bias.len() != classes.len() {
            return shape_err("head parts disagree on class count");
        }
        Ok(Self { classes, weights, bias })
    }
}

pub fn grow_head(head: &Head, new_classes: &[ClassId], init: HeadInit, rng: &mut Rng) -> Result<Head> {
    let mut h = head.clone();
    h.grow(new_classes, init, rng)?;
    Ok(h)
}

/// Frozen copy of the model from the end of the previous step.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSnapshot {
    encoder: Encoder,
    head: Head,
}

impl TeacherSnapshot {
    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.logits(&self.encoder.encode(x)?)
    }
}

pub fn freeze_teacher(encoder: &Encoder, head: &Head) -> TeacherSnapshot {
    TeacherSnapshot {
        encoder: encoder.clone(),
        head: head.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_encoder_gives_zero_feature() {
        let enc = Encoder { params: Mlp2Params::zeros(4, 8, 3) };
        assert!(enc.encode(&[1.0, 2.0, 3.0, 4.0]).unwrap().iter().all(|&v| v == 0.0));
        assert!(Encoder::new(4, 8, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn identity_encoder_passthrough() {
        let mut p = Mlp2Params::zeros(3, 3, 3);
        p.w1 = Matrix::identity(3);
        p.w2 = Matrix::identity(3);
        let enc = Encoder { params: p };
        assert_eq!(enc.encode(&[1.0, 0.0, 2.5]).unwrap().as_slice(), &[1.0, 0.0, 2.5]);
    }

    #[test]
    fn logits_basic_cases() {
        let mut rng = Rng::new(0);
        let mut head = Head::empty(3);
        assert!(matches!(head.logits(&[0.0; 3]), Err(Error::State(_))));
        head.grow(&[0, 1, 2], HeadInit::Zero, &mut rng).unwrap();
        assert_eq!(head.logits(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);

        head.weights = Matrix::identity(3);
        head.bias = vec![0.5, -1.0, 2.0];
        let l = head.logits(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l, vec![0.5, 0.0, 2.0]);
    }

    #[test]
    fn growth_preserves_rows() {
        let mut rng = Rng::new(1);
        let mut head = Head::empty(4);
        head.grow(&[0, 1, 2], HeadInit::Random(0.01), &mut rng).unwrap();
        let before = head.clone();
        let f = [0.3, -0.1, 0.7, 1.2];
        let l0 = head.logits(&f).unwrap();
        assert_eq!(grow_head(&head, &[], HeadInit::Zero, &mut rng).unwrap(), head);
        head.grow(&[3, 4], HeadInit::Zero, &mut rng).unwrap();
        assert_eq!(head.len(), 5);
        for r in 0..3 {
            assert_eq!(head.weights.row(r), before.weights.row(r));
        }
        let l1 = head.logits(&f).unwrap();
        assert_eq!(&l1[..3], &l0[..]);
        assert_eq!(&l1[3..], &[0.0, 0.0]);
        assert!(head.grow(&[1], HeadInit::Zero, &mut rng).is_err());
        assert!(head.grow(&[7, 7], HeadInit::Zero, &mut rng).is_err());
    }

    #[test]
    fn teacher_is_isolated_from_student_updates() {
        let mut rng = Rng::new(2);
        let mut enc = Encoder::new(4, 8, 3, &mut rng).unwrap();
        let mut head = Head::empty(3);
        head.grow(&[0, 1], HeadInit::Random(0.1), &mut rng).unwrap();
        let teacher = freeze_teacher(&enc, &head);
        let x = [0.2, 0.4, -0.3, 1.0];
        let before = teacher.logits(&x).unwrap();
        assert_eq!(freeze_teacher(&enc, &head), teacher);
        for _ in 0..100 {
            for w in enc.params.w1.as_mut_slice() {
                *w += 0.01;
            }
            head.bias[0] -= 0.01;
        }
        assert_eq!(teacher.logits(&x).unwrap(), before);
        assert_ne!(head.logits(&enc.encode(&x).unwrap()).unwrap(), before);
    }
}
