//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::graph::{Graph, Var};
use super::layers::{
    add_positional_encoding, bilstm_forward, encoder_layer, linear, lstm_cell,
    multi_head_attention, AttentionParams, EncoderLayerParams, LayerNormParams, LinearParams,
    LstmParams,
};
use super::model::{forward_on_graph, init_params, BoundParams, ModelSpec, Variant};
use super::tensor::Tensor;

/// Finite-difference step used at double precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error: entries whose gradient
/// magnitude is below this are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, floor)`
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Number of scalar entries compared.
    pub entries: usize,
    /// `(input, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Reduces any tensor to a scalar through fixed pseudo-random weights so that
/// every output entry contributes a distinct sensitivity.
pub fn random_projection(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.value(out).len();
    let w = Tensor::new(vec![n], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    g.weighted_sum(out, w)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with the given `step`, over every entry of every input.
pub fn gradient_check<F>(inputs: &[Tensor<f64>], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.value(root).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        entries: 0,
        worst: None,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*v).unwrap_or(&zeros);
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            work[i].data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.entries += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((i, k));
            }
        }
    }
    Ok(report)
}

/// Layer-level gradient checks over fixed small random inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCase {
    Linear,
    LstmCell,
    BidirectionalStack,
    PositionalEncoding,
    MultiHeadAttention,
    /// One encoder layer, 2 steps, width 8, 2 heads.
    EncoderLayer,
    /// Encoder layer on a batch of two 3-step windows.
    BatchedEncoderLayer,
    FullBirnn,
    FullTransformer,
}

impl LayerCase {
    pub const ALL: [LayerCase; 9] = [
        LayerCase::Linear,
        LayerCase::LstmCell,
        LayerCase::BidirectionalStack,
        LayerCase::PositionalEncoding,
        LayerCase::MultiHeadAttention,
        LayerCase::EncoderLayer,
        LayerCase::BatchedEncoderLayer,
        LayerCase::FullBirnn,
        LayerCase::FullTransformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerCase::Linear => "linear",
            LayerCase::LstmCell => "lstm cell",
            LayerCase::BidirectionalStack => "bidirectional lstm stack",
            LayerCase::PositionalEncoding => "positional encoding path",
            LayerCase::MultiHeadAttention => "multi-head attention",
            LayerCase::EncoderLayer => "encoder layer",
            LayerCase::BatchedEncoderLayer => "batched encoder layer",
            LayerCase::FullBirnn => "full birnn model",
            LayerCase::FullTransformer => "full transformer model",
        }
    }

    /// Runs the check with inputs drawn from `seed`.
    pub fn check(self, seed: u64) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand = |shape: &[usize]| -> Tensor<f64> {
            let n = shape.iter().product();
            Tensor::new(
                shape.to_vec(),
                (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            )
            .expect("shape matches data")
        };
        let proj = seed.wrapping_add(100);
        match self {
            LayerCase::Linear => {
                let inputs = [rand(&[3, 4]), rand(&[4, 5]), rand(&[5])];
                gradient_check(
                    &inputs,
                    |g, v| {
                        let y = linear(g, v[0], &lin(v, 1))?;
                        random_projection(g, y, proj)
                    },
                    DEFAULT_STEP,
                )
            }
            LayerCase::LstmCell => {
                let h = 3;
                let inputs = [
                    rand(&[2, 4 * h]),
                    rand(&[2, h]),
                    rand(&[2, h]),
                    rand(&[h, 4 * h]),
                ];
                gradient_check(
                    &inputs,
                    |g, v| {
                        let (hh, c) = lstm_cell(g, v[0], Some((v[1], v[2])), v[3], h)?;
                        let both = g.concat_cols(&[hh, c])?;
                        random_projection(g, both, proj)
                    },
                    DEFAULT_STEP,
                )
            }
            LayerCase::BidirectionalStack => {
                let (batch, steps, width, h) = (2, 3, 4, 3);
                let mut inputs = vec![rand(&[batch * steps, width])];
                for layer in 0..2 {
                    let in_w = if layer == 0 { width } else { 2 * h };
                    for _ in 0..2 {
                        inputs.push(rand(&[in_w, 4 * h]));
                        inputs.push(rand(&[h, 4 * h]));
                        inputs.push(rand(&[4 * h]));
                    }
                }
                gradient_check(
                    &inputs,
                    |g, v| {
                        let layers = [(lstm(v, 1), lstm(v, 4)), (lstm(v, 7), lstm(v, 10))];
                        let y = bilstm_forward(g, v[0], &layers, batch, steps)?;
                        random_projection(g, y, proj)
                    },
                    DEFAULT_STEP,
                )
            }
            LayerCase::PositionalEncoding => {
                let (batch, steps, d) = (2, 3, 8);
                let inputs = [rand(&[batch * steps, 5]), rand(&[5, d]), rand(&[d])];
                gradient_check(
                    &inputs,
                    |g, v| {
                        let h = linear(g, v[0], &lin(v, 1))?;
                        let h = add_positional_encoding(g, h, batch, steps)?;
                        let h = g.tanh(h);
                        random_projection(g, h, proj)
                    },
                    DEFAULT_STEP,
                )
            }
            LayerCase::MultiHeadAttention => {
                let (batch, steps, d, heads) = (2, 3, 8, 2);
                let mut inputs = vec![rand(&[batch * steps, d])];
                for _ in 0..4 {
                    inputs.push(rand(&[d, d]));
                    inputs.push(rand(&[d]));
                }
                gradient_check(
                    &inputs,
                    |g, v| {
                        let y = multi_head_attention(g, v[0], &attn(v, 1), heads, batch, steps)?;
                        random_projection(g, y.out, proj)
                    },
                    DEFAULT_STEP,
                )
            }
            LayerCase::EncoderLayer | LayerCase::BatchedEncoderLayer => {
                let (batch, steps, ffn) = if self == LayerCase::EncoderLayer {
                    (1, 2, 16)
                } else {
                    (2, 3, 12)
                };
                let d = 8;
                let mut inputs = vec![rand(&[batch * steps, d])];
                for _ in 0..4 {
                    inputs.push(rand(&[d, d]));
                    inputs.push(rand(&[d]));
                }
                let gamma: Vec<f64> = rand(&[d]).data().iter().map(|v| 1.0 + v).collect();
                let gamma = Tensor::new(vec![d], gamma)?;
                inputs.push(gamma.clone());
                inputs.push(rand(&[d]));
                inputs.push(rand(&[d, ffn]));
                inputs.push(rand(&[ffn]));
                inputs.push(rand(&[ffn, d]));
                inputs.push(rand(&[d]));
                inputs.push(gamma);
                inputs.push(rand(&[d]));
                gradient_check(
                    &inputs,
                    |g, v| {
                        let p = EncoderLayerParams {
                            attn: attn(v, 1),
                            norm1: LayerNormParams {
                                gamma: v[9],
                                beta: v[10],
                            },
                            ff1: lin(v, 11),
                            ff2: lin(v, 13),
                            norm2: LayerNormParams {
                                gamma: v[15],
                                beta: v[16],
                            },
                        };
                        let y = encoder_layer(g, v[0], &p, 2, batch, steps)?;
                        random_projection(g, y, proj)
                    },
                    DEFAULT_STEP,
                )
            }
            LayerCase::FullBirnn | LayerCase::FullTransformer => {
                let variant = if self == LayerCase::FullBirnn {
                    Variant::Birnn
                } else {
                    Variant::Transformer
                };
                let spec = ModelSpec {
                    variant,
                    n_sensors: 1,
                    hidden: 4,
                    layers: 1,
                    heads: 2,
                    ffn_hidden: 6,
                    accel_scale: 30.0,
                    seed,
                };
                let params = init_params::<f64>(&spec)?;
                let names: Vec<String> = params.keys().cloned().collect();
                let mut inputs = vec![rand(&[2 * 3, spec.input_dim()])];
                inputs.extend(params.into_values());
                gradient_check(
                    &inputs,
                    |g, v| {
                        let bound = BoundParams::from_vars(
                            names.iter().cloned().zip(v[1..].iter().copied()),
                        );
                        let y = forward_on_graph(g, &spec, &bound, v[0], 2, 3)?;
                        random_projection(g, y, proj)
                    },
                    DEFAULT_STEP,
                )
            }
        }
    }
}

fn lin(v: &[Var], i: usize) -> LinearParams {
    LinearParams {
        weight: v[i],
        bias: v[i + 1],
    }
}

fn lstm(v: &[Var], i: usize) -> LstmParams {
    LstmParams {
        w_ih: v[i],
        w_hh: v[i + 1],
        bias: v[i + 2],
    }
}

fn attn(v: &[Var], i: usize) -> AttentionParams {
    AttentionParams {
        q: lin(v, i),
        k: lin(v, i + 2),
        v: lin(v, i + 4),
        out: lin(v, i + 6),
    }
}
