use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

use super::model::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(crate::Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

pub trait Optimizer<T: Real> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>);
}

pub struct Sgd<T> {
    pub lr: T,
}

impl<T: Real> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) {
        for (name, p) in params.iter_mut() {
            if let Some(g) = grads.get(name) {
                for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= self.lr * *d;
                }
            }
        }
    }
}

/// Adam with bias correction; no weight decay.
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: i32,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            for (((w, d), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (T::one() - self.beta1) * *d;
                *v = self.beta2 * *v + (T::one() - self.beta2) * *d * *d;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
