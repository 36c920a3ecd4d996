//! Dense parameter storage shared by every trainable model, plus the
//! two optimizers used to fit them.
//!
//! A model is a list of named [`ParamGroup`]s, each a row-major tensor.
//! Gradients come either dense (one `Vec<f64>` per group) or sparse as a
//! [`Gradient`] bundle of row slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamGroup {
    pub fn zeros(name: &'static str, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        ParamGroup {
            name,
            shape,
            values: vec![0.0; len],
        }
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng>(name: &'static str, shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let mut group = Self::zeros(name, shape);
        if bound > 0.0 {
            for v in &mut group.values {
                *v = rng.random_range(-bound..=bound);
            }
        }
        group
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of scalars in one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Anything whose parameters live in a list of [`ParamGroup`]s.
pub trait Parameterized {
    fn groups(&self) -> &[ParamGroup];
    fn groups_mut(&mut self) -> &mut [ParamGroup];

    fn all_finite(&self) -> bool {
        self.groups().iter().all(ParamGroup::is_finite)
    }

    fn num_parameters(&self) -> usize {
        self.groups().iter().map(ParamGroup::len).sum()
    }

    /// Zero-filled dense gradient buffers matching the group layout.
    fn zero_gradients(&self) -> Vec<Vec<f64>> {
        self.groups().iter().map(|g| vec![0.0; g.len()]).collect()
    }
}

/// One contiguous slice of a gradient: `values` belongs at
/// `groups[group].values[offset..offset + values.len()]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSlice {
    pub group: usize,
    pub offset: usize,
    pub values: Vec<f64>,
}

/// Sparse gradient bundle. Slices may overlap (e.g. when subject and object
/// are the same entity); they are summed on accumulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub slices: Vec<GradSlice>,
}

impl Gradient {
    pub fn push(&mut self, group: usize, offset: usize, values: Vec<f64>) {
        self.slices.push(GradSlice {
            group,
            offset,
            values,
        });
    }

    /// Adds `scale * self` into dense per-group buffers.
    pub fn accumulate_into(&self, dense: &mut [Vec<f64>], scale: f64) {
        for slice in &self.slices {
            let target = &mut dense[slice.group][slice.offset..slice.offset + slice.values.len()];
            for (t, v) in target.iter_mut().zip(&slice.values) {
                *t += scale * v;
            }
        }
    }

    pub fn to_dense<P: Parameterized + ?Sized>(&self, model: &P) -> Vec<Vec<f64>> {
        let mut dense = model.zero_gradients();
        self.accumulate_into(&mut dense, 1.0);
        dense
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    /// Adaptive moment estimation.
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state over a fixed group layout.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    steps: i32,
}

impl Optimizer {
    pub fn new<P: Parameterized + ?Sized>(
        kind: OptimizerKind,
        learning_rate: f64,
        model: &P,
    ) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let (first_moment, second_moment) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (model.zero_gradients(), model.zero_gradients()),
        };
        Ok(Optimizer {
            kind,
            learning_rate,
            first_moment,
            second_moment,
            steps: 0,
        })
    }

    pub fn step<P: Parameterized + ?Sized>(&mut self, model: &mut P, grads: &[Vec<f64>]) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (group, grad) in model.groups_mut().iter_mut().zip(grads) {
                    for (w, g) in group.values.iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bias1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let bias2 = 1.0 - ADAM_BETA2.powi(self.steps);
                for (gi, group) in model.groups_mut().iter_mut().enumerate() {
                    let m = &mut self.first_moment[gi];
                    let v = &mut self.second_moment[gi];
                    for (i, w) in group.values.iter_mut().enumerate() {
                        let g = grads[gi][i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Left-to-right dot product.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
