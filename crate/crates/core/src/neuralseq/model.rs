//! Pose regressors: a bidirectional LSTM stack and a transformer encoder,
//! both mapping `[T, N·12]` IMU features to `[T, 216]` raw rotation entries.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imusynth::FEATURES_PER_SENSOR;
use crate::kinematics::NUM_JOINTS;
use crate::scalar::Real;

use super::graph::{Graph, Var};
use super::layers::{
    add_positional_encoding, bilstm_forward, encoder_layer, linear, AttentionParams,
    EncoderLayerParams, LayerNormParams, LinearParams, LstmParams,
};
use super::tensor::Tensor;

/// Default divisor applied to acceleration inputs (m/s²) before the first
/// layer, bringing them to the same order as the orientation entries.
pub const DEFAULT_ACCEL_SCALE: f64 = 30.0;

fn default_accel_scale() -> f64 {
    DEFAULT_ACCEL_SCALE
}

/// Width of the regression target: 24 joints × 9 rotation entries.
pub const OUTPUT_DIM: usize = NUM_JOINTS * 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Birnn,
    Transformer,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "birnn" => Ok(Variant::Birnn),
            "transformer" => Ok(Variant::Transformer),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub n_sensors: usize,
    /// LSTM hidden size, or transformer model width.
    pub hidden: usize,
    /// Recurrent layers or encoder layers.
    pub layers: usize,
    /// Attention heads (transformer only).
    pub heads: usize,
    /// Feedforward width inside each encoder layer (transformer only).
    pub ffn_hidden: usize,
    /// Acceleration features are divided by this fixed value on input.
    #[serde(default = "default_accel_scale")]
    pub accel_scale: f64,
    pub seed: u64,
}

impl ModelSpec {
    /// Full-size bidirectional LSTM: width 1024, 2 layers.
    pub fn birnn(n_sensors: usize) -> Self {
        Self {
            variant: Variant::Birnn,
            n_sensors,
            hidden: 1024,
            layers: 2,
            heads: 1,
            ffn_hidden: 0,
            accel_scale: DEFAULT_ACCEL_SCALE,
            seed: 0,
        }
    }

    /// Full-size encoder: width 512, 6 layers, 4 heads.
    pub fn transformer(n_sensors: usize) -> Self {
        Self {
            variant: Variant::Transformer,
            n_sensors,
            hidden: 512,
            layers: 6,
            heads: 4,
            ffn_hidden: 2048,
            accel_scale: DEFAULT_ACCEL_SCALE,
            seed: 0,
        }
    }

    /// Small configuration used for desk-scale runs: width 64, 2 layers.
    pub fn desk(variant: Variant, n_sensors: usize) -> Self {
        Self {
            variant,
            n_sensors,
            hidden: 64,
            layers: 2,
            heads: if variant == Variant::Transformer {
                4
            } else {
                1
            },
            ffn_hidden: if variant == Variant::Transformer {
                128
            } else {
                0
            },
            accel_scale: DEFAULT_ACCEL_SCALE,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.n_sensors * FEATURES_PER_SENSOR
    }

    pub fn output_dim(&self) -> usize {
        OUTPUT_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 || self.n_sensors > NUM_JOINTS {
            return Err(Error::Config(format!(
                "n_sensors must be in 1..=24, got {}",
                self.n_sensors
            )));
        }
        if !(self.accel_scale > 0.0) || !self.accel_scale.is_finite() {
            return Err(Error::Config(format!(
                "accel_scale must be positive, got {}",
                self.accel_scale
            )));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("hidden and layers must be positive".into()));
        }
        if self.variant == Variant::Transformer {
            if self.heads == 0 || self.hidden % self.heads != 0 {
                return Err(Error::Config(format!(
                    "hidden {} not divisible by heads {}",
                    self.hidden, self.heads
                )));
            }
            if self.hidden % 2 != 0 {
                return Err(Error::Config("transformer width must be even".into()));
            }
            if self.ffn_hidden == 0 {
                return Err(Error::Config("ffn_hidden must be positive".into()));
            }
        }
        Ok(())
    }

    /// Declared parameters in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let mut out = vec![
            ("input.weight".to_string(), vec![self.input_dim(), h]),
            ("input.bias".to_string(), vec![h]),
        ];
        match self.variant {
            Variant::Birnn => {
                for l in 0..self.layers {
                    let input = if l == 0 { h } else { 2 * h };
                    for dir in ["fwd", "bwd"] {
                        let p = format!("lstm.l{l}.{dir}");
                        out.push((format!("{p}.w_ih"), vec![input, 4 * h]));
                        out.push((format!("{p}.w_hh"), vec![h, 4 * h]));
                        out.push((format!("{p}.bias"), vec![4 * h]));
                    }
                }
                out.push(("output.weight".into(), vec![2 * h, OUTPUT_DIM]));
            }
            Variant::Transformer => {
                for l in 0..self.layers {
                    let p = format!("encoder.l{l}");
                    for m in ["q", "k", "v", "out"] {
                        out.push((format!("{p}.attn.{m}.weight"), vec![h, h]));
                        out.push((format!("{p}.attn.{m}.bias"), vec![h]));
                    }
                    out.push((format!("{p}.norm1.gamma"), vec![h]));
                    out.push((format!("{p}.norm1.beta"), vec![h]));
                    out.push((format!("{p}.ff1.weight"), vec![h, self.ffn_hidden]));
                    out.push((format!("{p}.ff1.bias"), vec![self.ffn_hidden]));
                    out.push((format!("{p}.ff2.weight"), vec![self.ffn_hidden, h]));
                    out.push((format!("{p}.ff2.bias"), vec![h]));
                    out.push((format!("{p}.norm2.gamma"), vec![h]));
                    out.push((format!("{p}.norm2.beta"), vec![h]));
                }
                out.push(("output.weight".into(), vec![h, OUTPUT_DIM]));
            }
        }
        out.push(("output.bias".into(), vec![OUTPUT_DIM]));
        out
    }
}

/// Named parameter tensors, ordered by name.
pub type ParamStore<T> = BTreeMap<String, Tensor<T>>;

/// Seeded initialization: weights `U(−1/√fan_in, 1/√fan_in)`, biases zero
/// (LSTM forget-gate bias one), layer-norm gain one.
pub fn init_params<T: Real>(spec: &ModelSpec) -> Result<ParamStore<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut store = ParamStore::new();
    for (name, shape) in spec.param_shapes() {
        let n: usize = shape.iter().product();
        let data: Vec<T> = if name.ends_with(".gamma") {
            vec![T::one(); n]
        } else if name.ends_with(".beta") || name.ends_with("bias") {
            let mut v = vec![T::zero(); n];
            if name.starts_with("lstm.") {
                let h = n / 4;
                for x in &mut v[h..2 * h] {
                    *x = T::one();
                }
            }
            v
        } else {
            let bound = 1.0 / (shape[0] as f64).sqrt();
            (0..n)
                .map(|_| T::lit(rng.gen_range(-bound..bound)))
                .collect()
        };
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

/// Checks that `params` holds exactly the declared names with matching shapes.
pub fn check_params<T: Real>(spec: &ModelSpec, params: &ParamStore<T>) -> Result<()> {
    let declared = spec.param_shapes();
    if declared.len() != params.len() {
        return Err(Error::Validation(format!(
            "expected {} parameters, found {}",
            declared.len(),
            params.len()
        )));
    }
    for (name, shape) in declared {
        match params.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(Error::shape(
                    "parameter",
                    format!("{name} {shape:?}"),
                    format!("{:?}", t.shape()),
                ))
            }
            None => return Err(Error::Validation(format!("missing parameter {name}"))),
        }
    }
    Ok(())
}

/// Parameters placed on a graph as leaves.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, requires_grad: bool) -> Self {
        let vars = store
            .iter()
            .map(|(k, v)| (k.clone(), g.leaf(v.clone(), requires_grad)))
            .collect();
        Self { vars }
    }

    /// Wraps vars that already live on a graph.
    pub fn from_vars<I: IntoIterator<Item = (String, Var)>>(vars: I) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Validation(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    fn linear(&self, prefix: &str) -> Result<LinearParams> {
        Ok(LinearParams {
            weight: self.get(&format!("{prefix}.weight"))?,
            bias: self.get(&format!("{prefix}.bias"))?,
        })
    }

    fn lstm(&self, prefix: &str) -> Result<LstmParams> {
        Ok(LstmParams {
            w_ih: self.get(&format!("{prefix}.w_ih"))?,
            w_hh: self.get(&format!("{prefix}.w_hh"))?,
            bias: self.get(&format!("{prefix}.bias"))?,
        })
    }

    fn norm(&self, prefix: &str) -> Result<LayerNormParams> {
        Ok(LayerNormParams {
            gamma: self.get(&format!("{prefix}.gamma"))?,
            beta: self.get(&format!("{prefix}.beta"))?,
        })
    }

    pub fn encoder_layer(&self, l: usize) -> Result<EncoderLayerParams> {
        let p = format!("encoder.l{l}");
        Ok(EncoderLayerParams {
            attn: AttentionParams {
                q: self.linear(&format!("{p}.attn.q"))?,
                k: self.linear(&format!("{p}.attn.k"))?,
                v: self.linear(&format!("{p}.attn.v"))?,
                out: self.linear(&format!("{p}.attn.out"))?,
            },
            norm1: self.norm(&format!("{p}.norm1"))?,
            ff1: self.linear(&format!("{p}.ff1"))?,
            ff2: self.linear(&format!("{p}.ff2"))?,
            norm2: self.norm(&format!("{p}.norm2"))?,
        })
    }
}

/// Batched forward on a graph. `x` is `[B·T, input_dim]`, window-major.
pub fn forward_on_graph<T: Real>(
    g: &mut Graph<T>,
    spec: &ModelSpec,
    params: &BoundParams,
    x: Var,
    batch: usize,
    steps: usize,
) -> Result<Var> {
    let (rows, width) = g.value(x).dims2();
    if width != spec.input_dim() {
        return Err(Error::shape("model input width", spec.input_dim(), width));
    }
    if rows != batch * steps || steps == 0 {
        return Err(Error::shape("model input rows", batch * steps, rows));
    }
    let x = if spec.accel_scale == 1.0 {
        x
    } else {
        let inv = T::lit(1.0 / spec.accel_scale);
        let row: Vec<T> = (0..width)
            .map(|c| {
                if c % FEATURES_PER_SENSOR >= 9 {
                    inv
                } else {
                    T::one()
                }
            })
            .collect();
        let row = g.constant(Tensor::new(vec![1, width], row)?);
        g.mul_row(x, row)?
    };
    let h = linear(g, x, &params.linear("input")?)?;
    let h = match spec.variant {
        Variant::Birnn => {
            let layers = (0..spec.layers)
                .map(|l| {
                    Ok((
                        params.lstm(&format!("lstm.l{l}.fwd"))?,
                        params.lstm(&format!("lstm.l{l}.bwd"))?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            bilstm_forward(g, h, &layers, batch, steps)?
        }
        Variant::Transformer => {
            let h = g.scale(h, T::lit((spec.hidden as f64).sqrt()));
            let mut h = add_positional_encoding(g, h, batch, steps)?;
            for l in 0..spec.layers {
                h = encoder_layer(g, h, &params.encoder_layer(l)?, spec.heads, batch, steps)?;
            }
            h
        }
    };
    linear(g, h, &params.linear("output")?)
}

/// Inference on one sequence: `[T, input_dim]` to `[T, 216]`.
pub fn model_forward<T: Real>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (steps, _) = x.dims2();
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let xv = g.constant(x.clone());
    let out = forward_on_graph(&mut g, spec, &bound, xv, 1, steps)?;
    let value = g.value(out).clone();
    if !value.is_finite() {
        return Err(Error::Validation("model produced non-finite output".into()));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(steps: usize, width: usize) -> Tensor<f64> {
        Tensor::new(
            vec![steps, width],
            (0..steps * width)
                .map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn full_scale_specs_validate() {
        let t = ModelSpec::transformer(24);
        t.validate().unwrap();
        assert_eq!(t.input_dim(), 288);
        assert_eq!(t.hidden % t.heads, 0);
        let b = ModelSpec::birnn(6);
        b.validate().unwrap();
        assert_eq!(b.input_dim(), 72);
        assert_eq!(b.output_dim(), 216);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = ModelSpec::desk(Variant::Transformer, 24);
        s.heads = 5;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::desk(Variant::Birnn, 0);
        assert!(s.validate().is_err());
        s.n_sensors = 25;
        assert!(s.validate().is_err());
    }

    #[test]
    fn output_width_is_216_for_any_sensor_count() {
        for variant in [Variant::Birnn, Variant::Transformer] {
            for n in [1, 6, 24] {
                let mut spec = ModelSpec::desk(variant, n);
                spec.hidden = 8;
                spec.heads = if variant == Variant::Transformer {
                    2
                } else {
                    1
                };
                spec.ffn_hidden = 16;
                let p = init_params::<f64>(&spec).unwrap();
                let y = model_forward(&spec, &p, &input(4, n * 12)).unwrap();
                assert_eq!(y.shape(), &[4, 216]);
            }
        }
    }

    #[test]
    fn default_transformer_shapes() {
        // Full width 512 with a single layer keeps the check fast; per-layer
        // shapes are identical across the stack.
        let mut spec = ModelSpec::transformer(24);
        spec.layers = 1;
        let p = init_params::<f32>(&spec).unwrap();
        let x = input(4, 288).cast::<f32>();
        let y = model_forward(&spec, &p, &x).unwrap();
        assert_eq!(y.shape(), &[4, 216]);
    }

    #[test]
    fn birnn_six_sensor_shapes() {
        let spec = ModelSpec::desk(Variant::Birnn, 6);
        let p = init_params::<f64>(&spec).unwrap();
        let y = model_forward(&spec, &p, &input(5, 72)).unwrap();
        assert_eq!(y.shape(), &[5, 216]);
        assert!(model_forward(&spec, &p, &input(5, 71)).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = ModelSpec::desk(Variant::Transformer, 6).with_seed(9);
        let a = init_params::<f64>(&spec).unwrap();
        let b = init_params::<f64>(&spec).unwrap();
        assert_eq!(a, b);
        let x = input(6, 72);
        assert_eq!(
            model_forward(&spec, &a, &x).unwrap(),
            model_forward(&spec, &b, &x).unwrap()
        );
    }

    #[test]
    fn parameter_name_sets_differ_by_variant() {
        let b = init_params::<f64>(&ModelSpec::desk(Variant::Birnn, 6)).unwrap();
        let t = init_params::<f64>(&ModelSpec::desk(Variant::Transformer, 6)).unwrap();
        assert!(b.keys().any(|k| k.starts_with("lstm.l1.bwd")));
        assert!(t.keys().any(|k| k.starts_with("encoder.l1.attn")));
        assert!(!b.keys().any(|k| k.starts_with("encoder")));
        check_params(&ModelSpec::desk(Variant::Birnn, 6), &b).unwrap();
        assert!(check_params(&ModelSpec::desk(Variant::Transformer, 6), &b).is_err());
    }

    #[test]
    fn forget_gate_bias_starts_at_one() {
        let spec = ModelSpec::desk(Variant::Birnn, 2);
        let p = init_params::<f64>(&spec).unwrap();
        let bias = &p["lstm.l0.fwd.bias"];
        let h = spec.hidden;
        assert!(bias.data()[..h].iter().all(|v| *v == 0.0));
        assert!(bias.data()[h..2 * h].iter().all(|v| *v == 1.0));
    }
}
