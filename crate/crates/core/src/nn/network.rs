//! Forward and backward passes.
//!
//! Dense path: `hidden_layers` rectifier layers with inverted dropout, then a
//! linear output layer and softmax. Recurrent path: an LSTM cell runs over
//! (previous occasion, current occasion) from a zero state and its final
//! hidden state feeds the same dense stack.

use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::NetConfig;
use super::params::{ParamSet, TensorSpec};

pub const PROB_FLOOR: f64 = 1e-12;

static CLAMP_LOGGED: AtomicBool = AtomicBool::new(false);

/// Inputs and class labels for one mini-batch. Rows are examples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub current: Array2<f64>,
    /// Previous-occasion inputs; required by the recurrent path.
    pub previous: Option<Array2<f64>>,
    pub labels: Vec<usize>,
}

pub fn layout(config: &NetConfig) -> Vec<TensorSpec> {
    let d = config.dense();
    let mut specs = Vec::new();
    let spec = |name: String, rows, cols, is_bias| TensorSpec { name, rows, cols, is_bias };
    let mut width = d.input_dim;
    if let Some(h) = config.cell_width() {
        specs.push(spec("lstm.input_weight".into(), d.input_dim, 4 * h, false));
        specs.push(spec("lstm.recurrent_weight".into(), h, 4 * h, false));
        specs.push(spec("lstm.bias".into(), 1, 4 * h, true));
        width = h;
    }
    for l in 0..d.hidden_layers {
        specs.push(spec(format!("dense{l}.weight"), width, d.units_per_layer, false));
        specs.push(spec(format!("dense{l}.bias"), 1, d.units_per_layer, true));
        width = d.units_per_layer;
    }
    specs.push(spec("output.weight".into(), width, d.output_classes, false));
    specs.push(spec("output.bias".into(), 1, d.output_classes, true));
    specs
}

/// Scaled-normal initialization: fan-in variance scaling (factor 2 for
/// rectifier layers), zero biases, LSTM forget-gate bias 1.
pub fn init_params<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> ParamSet {
    let specs = layout(config);
    let mut set = ParamSet::zeros(&specs);
    for (t, s) in set.tensors.iter_mut().zip(&specs) {
        if s.is_bias {
            if s.name == "lstm.bias" {
                let h = s.cols / 4;
                t.slice_mut(s![.., h..2 * h]).fill(1.0);
            }
            continue;
        }
        let scale = if s.name.starts_with("lstm") {
            (1.0 / (config.dense().input_dim + config.cell_width().unwrap_or(0)) as f64).sqrt()
        } else if s.name.starts_with("dense") {
            (2.0 / s.rows as f64).sqrt()
        } else {
            (1.0 / s.rows as f64).sqrt()
        };
        let normal = Normal::new(0.0, scale).expect("finite scale");
        t.iter_mut().for_each(|x| *x = normal.sample(rng));
    }
    set
}

struct LstmStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    lstm: Vec<LstmStep>,
    /// Input of each dense layer, including the output layer.
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    pub probabilities: Array2<f64>,
}

impl ForwardCache {
    /// Pre-activation of hidden layer `layer`.
    pub fn pre_activation(&self, layer: usize) -> &Array2<f64> {
        &self.pre_activations[layer]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

fn row_sums(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Offset of the first dense tensor in the layout.
fn dense_offset(config: &NetConfig) -> usize {
    if config.cell_width().is_some() {
        3
    } else {
        0
    }
}

pub fn forward<R: Rng + ?Sized>(config: &NetConfig, params: &ParamSet, batch: &Batch, mut dropout: Option<&mut R>) -> ForwardCache {
    let d = config.dense();
    let t = &params.tensors;
    let mut lstm = Vec::new();

    let mut a = if let Some(h) = config.cell_width() {
        let previous = batch
            .previous
            .as_ref()
            .expect("recurrent network needs previous-occasion inputs");
        let b = batch.current.nrows();
        let mut h_prev = Array2::<f64>::zeros((b, h));
        let mut c_prev = Array2::<f64>::zeros((b, h));
        for x in [previous, &batch.current] {
            let mut gates = x.dot(&t[0]) + h_prev.dot(&t[1]);
            gates += &t[2];
            let i = gates.slice(s![.., 0..h]).mapv(sigmoid);
            let f = gates.slice(s![.., h..2 * h]).mapv(sigmoid);
            let g = gates.slice(s![.., 2 * h..3 * h]).mapv(f64::tanh);
            let o = gates.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);
            let c = &f * &c_prev + &i * &g;
            let tanh_c = c.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            lstm.push(LstmStep {
                x: x.clone(),
                h_prev,
                c_prev,
                i,
                f,
                g,
                o,
                tanh_c,
            });
            h_prev = h_new;
            c_prev = c;
        }
        h_prev
    } else {
        batch.current.clone()
    };

    let off = dense_offset(config);
    let mut layer_inputs = Vec::with_capacity(d.hidden_layers + 1);
    let mut pre_activations = Vec::with_capacity(d.hidden_layers);
    let mut masks = Vec::with_capacity(d.hidden_layers);
    for l in 0..d.hidden_layers {
        let mut z = a.dot(&t[off + 2 * l]);
        z += &t[off + 2 * l + 1];
        let mut act = z.mapv(|v| v.max(0.0));
        let mask = match dropout.as_deref_mut() {
            Some(rng) if d.dropout_rate > 0.0 => {
                let keep = 1.0 - d.dropout_rate;
                let m = Array2::from_shape_simple_fn(act.raw_dim(), || {
                    if rng.gen::<f64>() < d.dropout_rate {
                        0.0
                    } else {
                        1.0 / keep
                    }
                });
                act *= &m;
                Some(m)
            }
            _ => None,
        };
        layer_inputs.push(a);
        pre_activations.push(z);
        masks.push(mask);
        a = act;
    }
    let out = off + 2 * d.hidden_layers;
    let mut logits = a.dot(&t[out]);
    logits += &t[out + 1];
    layer_inputs.push(a);
    softmax_rows(&mut logits);
    ForwardCache {
        lstm,
        layer_inputs,
        pre_activations,
        masks,
        probabilities: logits,
    }
}

pub fn forward_infer(config: &NetConfig, params: &ParamSet, batch: &Batch) -> ForwardCache {
    forward::<rand_chacha::ChaCha8Rng>(config, params, batch, None)
}

/// Mean class-weighted negative log-likelihood of the labels.
pub fn data_loss(probabilities: &Array2<f64>, labels: &[usize], class_weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in probabilities.rows().into_iter().zip(labels) {
        let p = row[y];
        if p < PROB_FLOOR && !CLAMP_LOGGED.swap(true, Ordering::Relaxed) {
            warn!("predicted probability {p:e} clamped to {PROB_FLOOR:e} before log");
        }
        total += class_weights[y] * -p.max(PROB_FLOOR).ln();
    }
    total / labels.len() as f64
}

pub fn l1_penalty(params: &ParamSet, layout: &[TensorSpec], coefficient: f64) -> f64 {
    if coefficient == 0.0 {
        return 0.0;
    }
    let sum: f64 = params
        .tensors
        .iter()
        .zip(layout)
        .filter(|(_, s)| !s.is_bias)
        .map(|(t, _)| t.iter().map(|x| x.abs()).sum::<f64>())
        .sum();
    coefficient * sum
}

/// Full objective (data term plus L1) with dropout off.
pub fn loss(config: &NetConfig, params: &ParamSet, batch: &Batch, class_weights: &[f64]) -> f64 {
    let cache = forward_infer(config, params, batch);
    data_loss(&cache.probabilities, &batch.labels, class_weights)
        + l1_penalty(params, &layout(config), config.dense().l1_coefficient)
}

/// Objective value of `cache` and the gradient of the objective.
pub fn backward(config: &NetConfig, params: &ParamSet, batch: &Batch, cache: &ForwardCache, class_weights: &[f64]) -> (f64, ParamSet) {
    let d = config.dense();
    let specs = layout(config);
    let t = &params.tensors;
    let mut grads = params.zeros_like();
    let n = batch.labels.len() as f64;

    let loss = data_loss(&cache.probabilities, &batch.labels, class_weights) + l1_penalty(params, &specs, d.l1_coefficient);

    // d loss / d logits = w_y / n * (p - onehot(y))
    let mut delta = cache.probabilities.clone();
    for (mut row, &y) in delta.rows_mut().into_iter().zip(&batch.labels) {
        row[y] -= 1.0;
        row *= class_weights[y] / n;
    }

    let off = dense_offset(config);
    let out = off + 2 * d.hidden_layers;
    grads.tensors[out] = cache.layer_inputs[d.hidden_layers].t().dot(&delta);
    grads.tensors[out + 1] = row_sums(&delta);
    let mut upstream = delta.dot(&t[out].t());

    for l in (0..d.hidden_layers).rev() {
        if let Some(mask) = &cache.masks[l] {
            upstream *= mask;
        }
        Zip::from(&mut upstream)
            .and(&cache.pre_activations[l])
            .for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
        grads.tensors[off + 2 * l] = cache.layer_inputs[l].t().dot(&upstream);
        grads.tensors[off + 2 * l + 1] = row_sums(&upstream);
        upstream = upstream.dot(&t[off + 2 * l].t());
    }

    if let Some(h) = config.cell_width() {
        let mut dh = upstream;
        let mut dc = Array2::<f64>::zeros(dh.raw_dim());
        let mut d_wx = Array2::<f64>::zeros(t[0].raw_dim());
        let mut d_wh = Array2::<f64>::zeros(t[1].raw_dim());
        let mut d_b = Array2::<f64>::zeros(t[2].raw_dim());
        for step in cache.lstm.iter().rev() {
            let b = dh.nrows();
            let mut d_gates = Array2::<f64>::zeros((b, 4 * h));
            // dc += dh * o * (1 - tanh(c)^2)
            Zip::from(&mut dc)
                .and(&dh)
                .and(&step.o)
                .and(&step.tanh_c)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
            Zip::from(d_gates.slice_mut(s![.., 0..h]))
                .and(&dc)
                .and(&step.g)
                .and(&step.i)
                .for_each(|r, &dc, &g, &i| *r = dc * g * i * (1.0 - i));
            Zip::from(d_gates.slice_mut(s![.., h..2 * h]))
                .and(&dc)
                .and(&step.c_prev)
                .and(&step.f)
                .for_each(|r, &dc, &cp, &f| *r = dc * cp * f * (1.0 - f));
            Zip::from(d_gates.slice_mut(s![.., 2 * h..3 * h]))
                .and(&dc)
                .and(&step.i)
                .and(&step.g)
                .for_each(|r, &dc, &i, &g| *r = dc * i * (1.0 - g * g));
            Zip::from(d_gates.slice_mut(s![.., 3 * h..4 * h]))
                .and(&dh)
                .and(&step.tanh_c)
                .and(&step.o)
                .for_each(|r, &dh, &tc, &o| *r = dh * tc * o * (1.0 - o));
            d_wx += &step.x.t().dot(&d_gates);
            d_wh += &step.h_prev.t().dot(&d_gates);
            d_b += &row_sums(&d_gates);
            dh = d_gates.dot(&t[1].t());
            dc *= &step.f;
        }
        grads.tensors[0] = d_wx;
        grads.tensors[1] = d_wh;
        grads.tensors[2] = d_b;
    }

    if d.l1_coefficient > 0.0 {
        for (g, (p, s)) in grads.tensors.iter_mut().zip(t.iter().zip(&specs)) {
            if s.is_bias {
                continue;
            }
            Zip::from(g).and(p).for_each(|g, &w| {
                *g += d.l1_coefficient * if w > 0.0 { 1.0 } else if w < 0.0 { -1.0 } else { 0.0 };
            });
        }
    }
    (loss, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::config::{DenseNetConfig, RecurrentNetConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_dense(l1: f64) -> NetConfig {
        NetConfig::Dense(DenseNetConfig {
            input_dim: 5,
            hidden_layers: 2,
            units_per_layer: 7,
            dropout_rate: 0.0,
            l1_coefficient: l1,
            output_classes: 3,
            ..DenseNetConfig::default()
        })
    }

    fn toy_batch(rng: &mut ChaCha8Rng, dim: usize, n: usize, classes: usize, recurrent: bool) -> Batch {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut m = || Array2::from_shape_simple_fn((n, dim), || normal.sample(rng));
        let current = m();
        let previous = if recurrent { Some(m()) } else { None };
        Batch {
            current,
            previous,
            labels: (0..n).map(|i| i % classes).collect(),
        }
    }

    #[test]
    fn layout_shapes() {
        let l = layout(&NetConfig::for_medication(crate::domain::Medication::Iron));
        assert_eq!(l[0].rows, 16);
        assert_eq!(l[0].cols, 4 * 512);
        assert_eq!(l.last().unwrap().cols, 2);
        assert_eq!(l.len(), 3 + 2 * 10 + 2);
    }

    #[test]
    fn zero_output_layer_gives_uniform() {
        let cfg = toy_dense(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = init_params(&cfg, &mut rng);
        let n = p.tensors.len();
        p.tensors[n - 2].fill(0.0);
        let b = toy_batch(&mut rng, 5, 4, 3, false);
        let c = forward_infer(&cfg, &p, &b);
        for x in c.probabilities.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        // ln 3 with unit weights
        let l = data_loss(&c.probabilities, &b.labels, &[1.0; 3]);
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn doubling_a_class_weight_doubles_its_contribution() {
        let cfg = toy_dense(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = init_params(&cfg, &mut rng);
        let b = toy_batch(&mut rng, 5, 9, 3, false);
        let probs = forward_infer(&cfg, &p, &b).probabilities;
        let base = data_loss(&probs, &b.labels, &[1.0, 1.0, 1.0]);
        let without_up = data_loss(&probs, &b.labels, &[0.0, 1.0, 1.0]);
        let doubled = data_loss(&probs, &b.labels, &[2.0, 1.0, 1.0]);
        let up_part = base - without_up;
        assert!((doubled - without_up - 2.0 * up_part).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let probs = Array2::from_shape_vec((2, 3), vec![1.0 - 2e-15, 1e-15, 1e-15, 0.0, 1.0, 0.0]).unwrap();
        assert!(data_loss(&probs, &[0, 1], &[1.0; 3]) < 1e-14);
    }

    #[test]
    fn zero_weight_class_exerts_no_gradient() {
        let cfg = toy_dense(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = init_params(&cfg, &mut rng);
        let mut b = toy_batch(&mut rng, 5, 9, 3, false);
        let w = [0.0, 1.0, 2.0];
        let (l1, g1) = backward(&cfg, &p, &b, &forward_infer(&cfg, &p, &b), &w);
        for (i, &y) in b.labels.clone().iter().enumerate() {
            if y == 0 {
                b.current.row_mut(i).mapv_inplace(|x| x * -3.0 + 1.0);
            }
        }
        let (l2, g2) = backward(&cfg, &p, &b, &forward_infer(&cfg, &p, &b), &w);
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    fn finite_difference_check(cfg: &NetConfig, batch: &Batch, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = init_params(cfg, &mut rng);
        // Zero biases put a unit exactly on the ReLU kink whenever its whole
        // input row is zero; random biases keep the check at a smooth point.
        let normal = Normal::new(0.0, 0.1).unwrap();
        for (t, s) in p.tensors.iter_mut().zip(layout(cfg)) {
            if s.is_bias {
                t.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
            }
        }
        let w = vec![1.3, 0.7, 2.1][..cfg.dense().output_classes].to_vec();
        let (_, grads) = backward(cfg, &p, batch, &forward_infer(cfg, &p, batch), &w);
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..p.tensors.len() {
            for idx in 0..p.tensors[k].len() {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus.tensors[k].as_slice_mut().unwrap()[idx] += eps;
                minus.tensors[k].as_slice_mut().unwrap()[idx] -= eps;
                let numeric = (loss(cfg, &plus, batch, &w) - loss(cfg, &minus, batch, &w)) / (2.0 * eps);
                let analytic = grads.tensors[k].as_slice().unwrap()[idx];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn dense_gradient_matches_finite_differences() {
        let cfg = toy_dense(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = toy_batch(&mut rng, 5, 6, 3, false);
        finite_difference_check(&cfg, &b, 12);
    }

    #[test]
    fn recurrent_gradient_matches_finite_differences() {
        let cfg = NetConfig::Recurrent(RecurrentNetConfig {
            dense: DenseNetConfig {
                input_dim: 4,
                hidden_layers: 1,
                units_per_layer: 5,
                dropout_rate: 0.0,
                l1_coefficient: 0.0,
                output_classes: 2,
                ..DenseNetConfig::default()
            },
            sequence_len: 2,
            cell_width: 3,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = toy_batch(&mut rng, 4, 5, 2, true);
        finite_difference_check(&cfg, &b, 22);
    }

    #[test]
    fn l1_subgradient_included() {
        // weights are almost surely nonzero, so the penalty is differentiable here
        let cfg = toy_dense(0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let b = toy_batch(&mut rng, 5, 6, 3, false);
        finite_difference_check(&cfg, &b, 32);
    }

    #[test]
    fn inverted_dropout_preserves_expected_preactivation() {
        let cfg = NetConfig::Dense(DenseNetConfig {
            input_dim: 4,
            hidden_layers: 2,
            units_per_layer: 6,
            dropout_rate: 0.2,
            l1_coefficient: 0.0,
            output_classes: 3,
            ..DenseNetConfig::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = init_params(&cfg, &mut rng);
        let b = toy_batch(&mut rng, 4, 1, 3, false);
        let reference = forward_infer(&cfg, &p, &b).pre_activation(1).clone();
        let draws = 20_000;
        let units = reference.ncols();
        let mut sum = vec![0.0; units];
        let mut sum_sq = vec![0.0; units];
        for _ in 0..draws {
            let c = forward(&cfg, &p, &b, Some(&mut rng));
            for (j, &z) in c.pre_activation(1).row(0).iter().enumerate() {
                sum[j] += z;
                sum_sq[j] += z * z;
            }
        }
        for j in 0..units {
            let mean = sum[j] / draws as f64;
            let var = sum_sq[j] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!(
                (mean - reference[[0, j]]).abs() <= 3.0 * se + 1e-12,
                "unit {j}: mc mean {mean}, reference {}, se {se}",
                reference[[0, j]]
            );
        }
    }
}
