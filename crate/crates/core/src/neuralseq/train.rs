//! Mini-batch MSE training with no regularization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::checkpoint::Checkpoint;
use super::graph::Graph;
use super::model::{
    check_params, forward_on_graph, init_params, BoundParams, ModelSpec, ParamStore, OUTPUT_DIM,
};
use super::optim::{Adam, Optimizer, OptimizerKind, Sgd};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub window_len: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop after the first epoch whose mean loss falls below this value.
    pub stop_below: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 16,
            window_len: 120,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            stop_below: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.window_len < 3 {
            return Err(Error::Config("window_len must be at least 3".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One training example: aligned IMU features and pose targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    /// `[L, N·12]`
    pub features: Tensor<T>,
    /// `[L, 216]`
    pub targets: Tensor<T>,
}

impl<T: Real> Window<T> {
    pub fn len(&self) -> usize {
        self.features.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits aligned per-frame rows into consecutive windows of `window_len`;
/// a shorter trailing remainder becomes its own window.
pub fn make_windows<T: Real>(
    features: &[Vec<T>],
    targets: &[Vec<T>],
    window_len: usize,
) -> Result<Vec<Window<T>>> {
    if features.len() != targets.len() {
        return Err(Error::shape("windows", features.len(), targets.len()));
    }
    if window_len == 0 {
        return Err(Error::Config("window_len must be positive".into()));
    }
    features
        .chunks(window_len)
        .zip(targets.chunks(window_len))
        .map(|(f, t)| {
            Ok(Window {
                features: Tensor::from_rows(f)?,
                targets: Tensor::from_rows(t)?,
            })
        })
        .collect()
}

fn stack<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let cols = parts[0].dims2().1;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    let mut rows = 0;
    for p in parts {
        rows += p.dims2().0;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, cols], data)
}

/// Groups window indices into batches of equal window length, visiting
/// windows in `order`. Full batches are emitted as they fill; partial batches
/// follow in order of first appearance.
fn batches<T: Real>(windows: &[Window<T>], order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut pending: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in order {
        let len = windows[i].len();
        let slot = match pending.iter().position(|(l, _)| *l == len) {
            Some(s) => s,
            None => {
                pending.push((len, Vec::new()));
                pending.len() - 1
            }
        };
        pending[slot].1.push(i);
        if pending[slot].1.len() == batch_size {
            out.push(std::mem::take(&mut pending[slot].1));
        }
    }
    out.extend(
        pending
            .into_iter()
            .map(|(_, b)| b)
            .filter(|b| !b.is_empty()),
    );
    out
}

fn check_windows<T: Real>(spec: &ModelSpec, windows: &[Window<T>]) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    for (i, w) in windows.iter().enumerate() {
        let (fl, fw) = w.features.dims2();
        let (tl, tw) = w.targets.dims2();
        if fw != spec.input_dim() {
            return Err(Error::shape("window features", spec.input_dim(), fw));
        }
        if tw != OUTPUT_DIM {
            return Err(Error::shape("window targets", OUTPUT_DIM, tw));
        }
        if fl != tl || fl == 0 {
            return Err(Error::Validation(format!(
                "window {i} has {fl} feature rows and {tl} target rows"
            )));
        }
    }
    Ok(())
}

/// Model outputs for every window, in input order. Windows of equal length
/// are stacked into one forward pass.
pub fn predict_windows<T: Real>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    windows: &[Window<T>],
) -> Result<Vec<Tensor<T>>> {
    let order: Vec<usize> = (0..windows.len()).collect();
    let mut out: Vec<Option<Tensor<T>>> = vec![None; windows.len()];
    for batch in batches(windows, &order, 64) {
        let steps = windows[batch[0]].len();
        let feats: Vec<&Tensor<T>> = batch.iter().map(|&i| &windows[i].features).collect();
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, params, false);
        let x = g.constant(stack(&feats)?);
        let y = forward_on_graph(&mut g, spec, &bound, x, batch.len(), steps)?;
        let y = g.value(y);
        let rows = steps * OUTPUT_DIM;
        for (k, &i) in batch.iter().enumerate() {
            out[i] = Some(Tensor::new(
                vec![steps, OUTPUT_DIM],
                y.data()[k * rows..(k + 1) * rows].to_vec(),
            )?);
        }
    }
    Ok(out
        .into_iter()
        .map(|t| t.expect("every window is batched"))
        .collect())
}

/// Sum of squared errors and element count of `params` over `windows`.
pub fn sse_over<T: Real>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    windows: &[Window<T>],
) -> Result<(f64, usize)> {
    let preds = predict_windows(spec, params, windows)?;
    let mut sse = 0.0;
    let mut count = 0;
    for (p, w) in preds.iter().zip(windows) {
        for (a, b) in p.data().iter().zip(w.targets.data()) {
            let d = (*a - *b).to_f64_lossy();
            sse += d * d;
        }
        count += p.len();
    }
    Ok((sse, count))
}

/// Trains a freshly initialized model.
pub fn train<T: Real>(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    windows: &[Window<T>],
) -> Result<Checkpoint<T>> {
    let params = init_params(spec)?;
    train_from(spec, params, cfg, windows)
}

/// Trains starting from the given parameters.
pub fn train_from<T: Real>(
    spec: &ModelSpec,
    mut params: ParamStore<T>,
    cfg: &TrainConfig,
    windows: &[Window<T>],
) -> Result<Checkpoint<T>> {
    cfg.validate()?;
    spec.validate()?;
    check_params(spec, &params)?;
    check_windows(spec, windows)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lr = T::lit(cfg.learning_rate);
    let mut opt: Box<dyn Optimizer<T>> = match cfg.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd { lr }),
        OptimizerKind::Adam => Box::new(Adam::new(lr)),
    };
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sse = 0.0;
        let mut epoch_count = 0usize;
        for batch in batches(windows, &order, cfg.batch_size) {
            let steps = windows[batch[0]].len();
            let feats: Vec<&Tensor<T>> = batch.iter().map(|&i| &windows[i].features).collect();
            let targs: Vec<&Tensor<T>> = batch.iter().map(|&i| &windows[i].targets).collect();
            let target = stack(&targs)?;
            let n = target.len();

            let mut g = Graph::new();
            let bound = BoundParams::bind(&mut g, &params, true);
            let x = g.constant(stack(&feats)?);
            let y = forward_on_graph(&mut g, spec, &bound, x, batch.len(), steps)?;
            let loss = g.mse(y, target)?;
            let loss_value = g.value(loss).data()[0].to_f64_lossy();
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: loss_value,
                });
            }
            let mut grads = g.backward(loss)?;
            let grad_map: BTreeMap<String, Tensor<T>> = bound
                .iter()
                .filter_map(|(name, v)| grads.take(*v).map(|t| (name.clone(), t)))
                .collect();
            opt.step(&mut params, &grad_map);
            step += 1;
            epoch_sse += loss_value * n as f64;
            epoch_count += n;
        }
        let epoch_loss = epoch_sse / epoch_count as f64;
        epoch_losses.push(epoch_loss);
        if cfg.stop_below.is_some_and(|t| epoch_loss < t) {
            break;
        }
    }

    if params.values().any(|p| !p.is_finite()) {
        return Err(Error::Diverged {
            step,
            loss: f64::NAN,
        });
    }
    let (sse, count) = sse_over(spec, &params, windows)?;
    let final_loss = sse / count as f64;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step,
            loss: final_loss,
        });
    }
    Ok(Checkpoint {
        spec: spec.clone(),
        params,
        sensors: None,
        trained_epochs: epoch_losses.len(),
        trained_steps: step,
        final_train_loss: Some(final_loss),
        window_len: cfg.window_len,
        epoch_losses,
    })
}
