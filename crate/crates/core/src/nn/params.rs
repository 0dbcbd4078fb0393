use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name, shape and kind of each parameter tensor, in storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Biases are excluded from the L1 penalty.
    pub is_bias: bool,
}

/// All trainable tensors of a network. Biases are stored as 1×n matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn zeros(layout: &[TensorSpec]) -> ParamSet {
        ParamSet {
            tensors: layout.iter().map(|s| Array2::zeros((s.rows, s.cols))).collect(),
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn check_layout(&self, layout: &[TensorSpec], what: &str) -> Result<()> {
        if self.tensors.len() != layout.len() {
            return Err(Error::Shape {
                field: what.to_string(),
                message: format!("expected {} tensors, found {}", layout.len(), self.tensors.len()),
            });
        }
        for (t, s) in self.tensors.iter().zip(layout) {
            if t.dim() != (s.rows, s.cols) {
                return Err(Error::Shape {
                    field: format!("{what}.{}", s.name),
                    message: format!("expected shape [{}, {}], found {:?}", s.rows, s.cols, t.shape()),
                });
            }
        }
        Ok(())
    }
}

/// Serialized tensor: declared shape plus row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDoc {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl TensorDoc {
    pub fn from_set(set: &ParamSet, layout: &[TensorSpec]) -> Vec<TensorDoc> {
        set.tensors
            .iter()
            .zip(layout)
            .map(|(t, s)| TensorDoc {
                name: s.name.clone(),
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect()
    }

    pub fn to_set(docs: &[TensorDoc], layout: &[TensorSpec], what: &str) -> Result<ParamSet> {
        if docs.len() != layout.len() {
            return Err(Error::Shape {
                field: what.to_string(),
                message: format!("expected {} tensors, found {}", layout.len(), docs.len()),
            });
        }
        let mut tensors = Vec::with_capacity(docs.len());
        for (d, s) in docs.iter().zip(layout) {
            let field = format!("{what}.{}", s.name);
            if d.name != s.name || d.shape != [s.rows, s.cols] {
                return Err(Error::Shape {
                    field,
                    message: format!(
                        "expected {} [{}, {}], found {} {:?}",
                        s.name, s.rows, s.cols, d.name, d.shape
                    ),
                });
            }
            if d.data.len() != s.rows * s.cols {
                return Err(Error::Shape {
                    field,
                    message: format!("declared {} values, found {}", s.rows * s.cols, d.data.len()),
                });
            }
            tensors.push(Array2::from_shape_vec((s.rows, s.cols), d.data.clone()).expect("length checked"));
        }
        Ok(ParamSet { tensors })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn new(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over flat slices. `step` is the 1-based
/// step number after incrementing.
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, h: &AdamHyper) {
    let c1 = 1.0 - h.beta1.powf(step as f64);
    let c2 = 1.0 - h.beta2.powf(step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
    }
}

/// Adam accumulators for a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ParamSet,
    pub second_moment: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }

    /// Applies `grads` to `params`. Rejects non-finite gradients before
    /// touching any state, naming the offending tensor.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, layout: &[TensorSpec], hyper: &AdamHyper) -> Result<()> {
        for (g, s) in grads.tensors.iter().zip(layout) {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: s.name.clone() });
            }
        }
        self.step += 1;
        for (k, p) in params.tensors.iter_mut().enumerate() {
            let p = p.as_slice_mut().expect("standard layout");
            let g = grads.tensors[k].as_slice().expect("standard layout");
            let m = self.first_moment.tensors[k].as_slice_mut().expect("standard layout");
            let v = self.second_moment.tensors[k].as_slice_mut().expect("standard layout");
            adam_update(p, g, m, v, self.step, hyper);
        }
        Ok(())
    }
}
