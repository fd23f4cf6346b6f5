//! Differentiable building blocks.
//!
//! Batched sequence tensors are laid out window-major: a batch of `B` windows
//! of `T` steps is a `[B·T, width]` matrix whose row `b·T + t` is step `t` of
//! window `b`.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    /// `[in, out]`
    pub weight: Var,
    /// `[out]`
    pub bias: Var,
}

/// `x · W + b`
pub fn linear<T: Real>(g: &mut Graph<T>, x: Var, p: &LinearParams) -> Result<Var> {
    let xw = g.matmul(x, p.weight)?;
    g.add_row(xw, p.bias)
}

/// One direction of one LSTM layer. Gate blocks are ordered input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// `[in, 4H]`
    pub w_ih: Var,
    /// `[H, 4H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

/// Single LSTM step. `gates_x` is the precomputed `x·W_ih + b` for this step,
/// `[B, 4H]`. A missing previous state is treated as zeros.
pub fn lstm_cell<T: Real>(
    g: &mut Graph<T>,
    gates_x: Var,
    prev: Option<(Var, Var)>,
    w_hh: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let z = match prev {
        Some((h, _)) => {
            let hh = g.matmul(h, w_hh)?;
            g.add(gates_x, hh)?
        }
        None => gates_x,
    };
    let (rows, _) = g.value(z).dims2();
    let zi = g.block(z, 0, rows, 0, hidden)?;
    let zf = g.block(z, 0, rows, hidden, hidden)?;
    let zg = g.block(z, 0, rows, 2 * hidden, hidden)?;
    let zo = g.block(z, 0, rows, 3 * hidden, hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let ic = g.mul(i, cand)?;
    let c = match prev {
        Some((_, c_prev)) => {
            let fc = g.mul(f, c_prev)?;
            g.add(fc, ic)?
        }
        None => ic,
    };
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Runs one direction over all steps; returns hidden states `[B·T, H]` in
/// window-major order (aligned with the input rows, whatever the direction).
pub fn lstm_direction<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    p: &LstmParams,
    batch: usize,
    steps: usize,
    reverse: bool,
) -> Result<Var> {
    let (rows, _) = g.value(x).dims2();
    if rows != batch * steps || steps == 0 {
        return Err(Error::shape("lstm", batch * steps, rows));
    }
    let hidden = g.value(p.w_hh).dims2().0;
    let gates = linear(
        g,
        x,
        &LinearParams {
            weight: p.w_ih,
            bias: p.bias,
        },
    )?;
    let mut state: Option<(Var, Var)> = None;
    let mut per_step: Vec<Option<Var>> = vec![None; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let idx = (0..batch).map(|b| b * steps + t).collect();
        let gx = g.gather_rows(gates, idx)?;
        let (h, c) = lstm_cell(g, gx, state, p.w_hh, hidden)?;
        state = Some((h, c));
        per_step[t] = Some(h);
    }
    let parts: Vec<Var> = per_step
        .into_iter()
        .map(|h| h.expect("every step visited"))
        .collect();
    // time-major [T·B, H] -> window-major [B·T, H]
    let stacked = g.concat_rows(&parts)?;
    let perm = (0..batch * steps)
        .map(|r| {
            let (b, t) = (r / steps, r % steps);
            t * batch + b
        })
        .collect();
    g.gather_rows(stacked, perm)
}

/// Bidirectional layer: per-step concatenation `[forward | backward]`.
pub fn bilstm_layer<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    fwd: &LstmParams,
    bwd: &LstmParams,
    batch: usize,
    steps: usize,
) -> Result<Var> {
    let f = lstm_direction(g, x, fwd, batch, steps, false)?;
    let b = lstm_direction(g, x, bwd, batch, steps, true)?;
    g.concat_cols(&[f, b])
}

/// Stacked bidirectional LSTM; output width `2H`.
pub fn bilstm_forward<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    layers: &[(LstmParams, LstmParams)],
    batch: usize,
    steps: usize,
) -> Result<Var> {
    let mut h = x;
    for (fwd, bwd) in layers {
        h = bilstm_layer(g, h, fwd, bwd, batch, steps)?;
    }
    Ok(h)
}

/// Sinusoidal table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding<T: Real>(steps: usize, d: usize) -> Result<Tensor<T>> {
    if d % 2 != 0 || d == 0 {
        return Err(Error::Config(format!(
            "positional encoding width must be even and positive, got {d}"
        )));
    }
    let mut data = Vec::with_capacity(steps * d);
    for pos in 0..steps {
        for i in 0..d / 2 {
            let freq = 10000f64.powf(2.0 * i as f64 / d as f64);
            let angle = pos as f64 / freq;
            data.push(T::lit(angle.sin()));
            data.push(T::lit(angle.cos()));
        }
    }
    Tensor::new(vec![steps, d], data)
}

/// Adds the positional table to every window of a `[B·T, d]` input.
pub fn add_positional_encoding<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    batch: usize,
    steps: usize,
) -> Result<Var> {
    let (rows, d) = g.value(x).dims2();
    if rows != batch * steps {
        return Err(Error::shape("positional encoding", batch * steps, rows));
    }
    let pe = positional_encoding::<T>(steps, d)?;
    let mut tiled = Vec::with_capacity(rows * d);
    for _ in 0..batch {
        tiled.extend_from_slice(pe.data());
    }
    let pe = g.constant(Tensor::new(vec![rows, d], tiled)?);
    g.add(x, pe)
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
    pub out: LinearParams,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `[B·T, d]`
    pub out: Var,
    /// Softmax weights `[T, T]`, ordered by window then head.
    pub weights: Vec<Var>,
}

/// Full (non-causal) multi-head self-attention within each window.
pub fn multi_head_attention<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    p: &AttentionParams,
    heads: usize,
    batch: usize,
    steps: usize,
) -> Result<AttentionOutput> {
    let (rows, d) = g.value(x).dims2();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "width {d} not divisible by {heads} heads"
        )));
    }
    if rows != batch * steps {
        return Err(Error::shape("attention", batch * steps, rows));
    }
    let dh = d / heads;
    let q = linear(g, x, &p.q)?;
    let k = linear(g, x, &p.k)?;
    let v = linear(g, x, &p.v)?;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut weights = Vec::with_capacity(batch * heads);
    let mut windows = Vec::with_capacity(batch);
    for b in 0..batch {
        let r0 = b * steps;
        let mut head_out = Vec::with_capacity(heads);
        for h in 0..heads {
            let c0 = h * dh;
            let qh = g.block(q, r0, steps, c0, dh)?;
            let kh = g.block(k, r0, steps, c0, dh)?;
            let vh = g.block(v, r0, steps, c0, dh)?;
            let scores = g.matmul_t(qh, kh, false, true)?;
            let scores = g.scale(scores, scale);
            let w = g.softmax_rows(scores);
            weights.push(w);
            head_out.push(g.matmul(w, vh)?);
        }
        windows.push(if heads == 1 {
            head_out[0]
        } else {
            g.concat_cols(&head_out)?
        });
    }
    let cat = if batch == 1 {
        windows[0]
    } else {
        g.concat_rows(&windows)?
    };
    let out = linear(g, cat, &p.out)?;
    Ok(AttentionOutput { out, weights })
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: Var,
    pub beta: Var,
}

pub fn layer_norm<T: Real>(g: &mut Graph<T>, x: Var, p: &LayerNormParams) -> Result<Var> {
    let n = g.layer_norm_rows(x, T::lit(LAYER_NORM_EPS));
    let s = g.mul_row(n, p.gamma)?;
    g.add_row(s, p.beta)
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub norm1: LayerNormParams,
    pub ff1: LinearParams,
    pub ff2: LinearParams,
    pub norm2: LayerNormParams,
}

/// Post-norm encoder block:
/// `y = LN(x + MHA(x))`, `out = LN(y + W₂·relu(W₁·y))`.
pub fn encoder_layer<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    p: &EncoderLayerParams,
    heads: usize,
    batch: usize,
    steps: usize,
) -> Result<Var> {
    let attn = multi_head_attention(g, x, &p.attn, heads, batch, steps)?;
    let res1 = g.add(x, attn.out)?;
    let y = layer_norm(g, res1, &p.norm1)?;
    let h = linear(g, y, &p.ff1)?;
    let h = g.relu(h);
    let h = linear(g, h, &p.ff2)?;
    let res2 = g.add(y, h)?;
    layer_norm(g, res2, &p.norm2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
        )
        .unwrap()
    }

    fn eye(n: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let xt = rand_tensor(&mut rng, &[3, 4], 1.0);
        let x = g.constant(xt.clone());
        let p = LinearParams {
            weight: g.param(eye(4)),
            bias: g.param(Tensor::zeros(&[4])),
        };
        let y = linear(&mut g, x, &p).unwrap();
        assert_eq!(g.value(y).data(), xt.data());

        let zero = g.constant(Tensor::zeros(&[2, 4]));
        let b = rand_tensor(&mut rng, &[3], 1.0);
        let p = LinearParams {
            weight: g.param(rand_tensor(&mut rng, &[4, 3], 1.0)),
            bias: g.param(b.clone()),
        };
        let y = linear(&mut g, zero, &p).unwrap();
        for r in 0..2 {
            assert_eq!(g.value(y).row(r), b.data());
        }
    }

    #[test]
    fn lstm_cell_zero_input_matches_hand_computation() {
        // All-zero pre-activations: gates are sigmoid(0) = 0.5, candidate
        // tanh(0) = 0, so c = 0.5·c_prev and h = 0.5·tanh(c).
        let hidden = 3;
        let mut g = Graph::new();
        let gx = g.constant(Tensor::zeros(&[1, 4 * hidden]));
        let w_hh = g.param(Tensor::zeros(&[hidden, 4 * hidden]));
        let h0 = g.constant(Tensor::new(vec![1, hidden], vec![0.3, -0.2, 0.9]).unwrap());
        let c0 = g.constant(Tensor::new(vec![1, hidden], vec![0.8, -1.5, 0.1]).unwrap());
        let (h, c) = lstm_cell(&mut g, gx, Some((h0, c0)), w_hh, hidden).unwrap();
        for (k, c_prev) in [0.8f64, -1.5, 0.1].iter().enumerate() {
            let want_c = 0.5 * c_prev;
            let want_h = 0.5 * want_c.tanh();
            assert!((g.value(c).data()[k] - want_c).abs() < 1e-15);
            assert!((g.value(h).data()[k] - want_h).abs() < 1e-15);
            assert!(g.value(h).data()[k].abs() < 1.0);
        }
    }

    fn random_lstm(
        g: &mut Graph<f64>,
        rng: &mut impl Rng,
        input: usize,
        hidden: usize,
    ) -> LstmParams {
        LstmParams {
            w_ih: g.param(rand_tensor(rng, &[input, 4 * hidden], 0.5)),
            w_hh: g.param(rand_tensor(rng, &[hidden, 4 * hidden], 0.5)),
            bias: g.param(rand_tensor(rng, &[4 * hidden], 0.5)),
        }
    }

    #[test]
    fn single_step_bilstm_is_finite_with_both_halves_populated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut rng, &[1, 5], 1.0));
        let f = random_lstm(&mut g, &mut rng, 5, 4);
        let out = bilstm_layer(&mut g, x, &f, &f, 1, 1).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 8]);
        assert!(g.value(out).is_finite());
        // Same weights both ways on a single element: halves coincide.
        let row = g.value(out).row(0);
        for k in 0..4 {
            assert!((row[k] - row[k + 4]).abs() < 1e-15);
        }
    }

    #[test]
    fn reversing_input_swaps_direction_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let steps = 3;
        let hidden = 4;
        let xt = rand_tensor(&mut rng, &[steps, 2], 1.0);
        let mut rev_rows: Vec<Vec<f64>> = (0..steps).map(|t| xt.row(t).to_vec()).collect();
        rev_rows.reverse();
        let xr = Tensor::from_rows(&rev_rows).unwrap();

        let mut g = Graph::new();
        let p = random_lstm(&mut g, &mut rng, 2, hidden);
        let x = g.constant(xt);
        let x_rev = g.constant(xr);
        let a = bilstm_layer(&mut g, x, &p, &p, 1, steps).unwrap();
        let b = bilstm_layer(&mut g, x_rev, &p, &p, 1, steps).unwrap();
        for t in 0..steps {
            let ra = g.value(a).row(t);
            let rb = g.value(b).row(steps - 1 - t);
            for k in 0..hidden {
                assert!((ra[k] - rb[k + hidden]).abs() < 1e-14);
                assert!((ra[k + hidden] - rb[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batched_lstm_matches_per_window_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (batch, steps) = (3, 4);
        let xt = rand_tensor(&mut rng, &[batch * steps, 2], 1.0);
        let mut g = Graph::new();
        let p = random_lstm(&mut g, &mut rng, 2, 3);
        let x = g.constant(xt.clone());
        let all = bilstm_layer(&mut g, x, &p, &p, batch, steps).unwrap();
        for b in 0..batch {
            let rows: Vec<Vec<f64>> = (0..steps).map(|t| xt.row(b * steps + t).to_vec()).collect();
            let xb = g.constant(Tensor::from_rows(&rows).unwrap());
            let one = bilstm_layer(&mut g, xb, &p, &p, 1, steps).unwrap();
            for t in 0..steps {
                let d: f64 = g
                    .value(one)
                    .row(t)
                    .iter()
                    .zip(g.value(all).row(b * steps + t))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(d < 1e-14);
            }
        }
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding::<f64>(5, 8).unwrap();
        for i in 0..4 {
            assert_eq!(pe.get2(0, 2 * i), 0.0);
            assert_eq!(pe.get2(0, 2 * i + 1), 1.0);
        }
        assert!((pe.get2(1, 0) - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(
            positional_encoding::<f64>(3, 7),
            Err(Error::Config(_))
        ));
    }

    fn random_attention(g: &mut Graph<f64>, rng: &mut impl Rng, d: usize) -> AttentionParams {
        let mut lp = |g: &mut Graph<f64>| LinearParams {
            weight: g.param(rand_tensor(rng, &[d, d], 0.5)),
            bias: g.param(rand_tensor(rng, &[d], 0.1)),
        };
        AttentionParams {
            q: lp(g),
            k: lp(g),
            v: lp(g),
            out: lp(g),
        }
    }

    #[test]
    fn attention_weights_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let p = random_attention(&mut g, &mut rng, 8);
        let x = g.constant(rand_tensor(&mut rng, &[10, 8], 1.0));
        let out = multi_head_attention(&mut g, x, &p, 2, 2, 5).unwrap();
        assert_eq!(out.weights.len(), 4);
        for w in &out.weights {
            for r in 0..5 {
                let s: f64 = g.value(*w).row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut g = Graph::new();
        let p = random_attention(&mut g, &mut rng, 4);
        // Identical rows give identical keys at every position.
        let row: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = g.constant(Tensor::from_rows(&vec![row; 6]).unwrap());
        let out = multi_head_attention(&mut g, x, &p, 2, 1, 6).unwrap();
        for w in &out.weights {
            for v in g.value(*w).data() {
                assert!((v - 1.0 / 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_attention_returns_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new();
        let p = random_attention(&mut g, &mut rng, 4);
        let x = g.constant(rand_tensor(&mut rng, &[1, 4], 1.0));
        let out = multi_head_attention(&mut g, x, &p, 2, 1, 1).unwrap();
        for w in &out.weights {
            assert_eq!(g.value(*w).data(), &[1.0]);
        }
        let v = linear(&mut g, x, &p.v).unwrap();
        let want = linear(&mut g, v, &p.out).unwrap();
        assert!(g.value(out.out).max_abs_diff(g.value(want)) < 1e-14);
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Graph::new();
        let p = random_attention(&mut g, &mut rng, 6);
        let x = g.constant(rand_tensor(&mut rng, &[2, 6], 1.0));
        assert!(multi_head_attention(&mut g, x, &p, 4, 1, 2).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut rng, &[4, 16], 3.0));
        let n = g.layer_norm_rows(x, LAYER_NORM_EPS);
        for r in 0..4 {
            let row = g.value(n).row(r);
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }
}
