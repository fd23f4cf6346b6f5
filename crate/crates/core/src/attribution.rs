//! Feature ablation over joint-grouped IMU features.
//!
//! A group is one sensor's 12 features over every frame of a window. Each
//! joint is ablated independently by substituting a baseline, and its score
//! is the resulting increase in MSE over the evaluation set.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imusynth::{SensorSet, FEATURES_PER_SENSOR};
use crate::kinematics::{joint_index, JOINT_NAMES, NUM_JOINTS};
use crate::neuralseq::{predict_windows, Checkpoint, Tensor, Window};
use crate::scalar::Real;

/// Anything that maps feature windows to 216-wide outputs.
pub trait Predictor<T>: Sync {
    fn input_width(&self) -> usize;
    fn predict(&self, windows: &[Window<T>]) -> Result<Vec<Tensor<T>>>;
}

impl<T: Real> Predictor<T> for Checkpoint<T> {
    fn input_width(&self) -> usize {
        self.spec.input_dim()
    }

    fn predict(&self, windows: &[Window<T>]) -> Result<Vec<Tensor<T>>> {
        predict_windows(&self.spec, &self.params, windows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    Zero,
    DatasetMean,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "dataset_mean" => Ok(Self::DatasetMean),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Baseline<T> {
    Zero,
    /// One value per feature column.
    DatasetMean(Vec<T>),
}

impl<T: Real> Baseline<T> {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Self::Zero => BaselineKind::Zero,
            Self::DatasetMean(_) => BaselineKind::DatasetMean,
        }
    }

    /// Per-column mean over every frame of `windows`.
    pub fn dataset_mean(windows: &[Window<T>]) -> Result<Self> {
        let width = windows
            .first()
            .map(|w| w.features.dims2().1)
            .ok_or_else(|| Error::Validation("cannot average an empty dataset".into()))?;
        let mut sum = vec![0.0f64; width];
        let mut rows = 0usize;
        for w in windows {
            let (r, c) = w.features.dims2();
            if c != width {
                return Err(Error::shape("baseline width", width, c));
            }
            for i in 0..r {
                for (s, v) in sum.iter_mut().zip(w.features.row(i)) {
                    *s += v.to_f64_lossy();
                }
            }
            rows += r;
        }
        Ok(Self::DatasetMean(
            sum.into_iter().map(|s| T::lit(s / rows as f64)).collect(),
        ))
    }

    pub fn for_kind(kind: BaselineKind, windows: &[Window<T>]) -> Result<Self> {
        match kind {
            BaselineKind::Zero => Ok(Self::Zero),
            BaselineKind::DatasetMean => Self::dataset_mean(windows),
        }
    }

    fn check_width(&self, width: usize) -> Result<()> {
        match self {
            Self::DatasetMean(v) if v.len() != width => {
                Err(Error::shape("baseline values", width, v.len()))
            }
            _ => Ok(()),
        }
    }

    fn value(&self, col: usize) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::DatasetMean(v) => v[col],
        }
    }
}

/// Replaces the 12 features of `slot` with the baseline in every frame.
pub fn ablate_joint<T: Real>(
    features: &[Vec<T>],
    slot: usize,
    baseline: &Baseline<T>,
) -> Result<Vec<Vec<T>>> {
    let width = features.first().map_or(0, Vec::len);
    if (slot + 1) * FEATURES_PER_SENSOR > width {
        return Err(Error::Validation(format!(
            "sensor slot {slot} out of range for {width} features"
        )));
    }
    baseline.check_width(width)?;
    features
        .iter()
        .map(|row| {
            if row.len() != width {
                return Err(Error::shape("ablation row", width, row.len()));
            }
            let mut row = row.clone();
            for c in slot * FEATURES_PER_SENSOR..(slot + 1) * FEATURES_PER_SENSOR {
                row[c] = baseline.value(c);
            }
            Ok(row)
        })
        .collect()
}

fn ablate_window<T: Real>(w: &Window<T>, slot: usize, baseline: &Baseline<T>) -> Window<T> {
    let (rows, width) = w.features.dims2();
    let mut features = w.features.clone();
    let data = features.data_mut();
    for r in 0..rows {
        for c in slot * FEATURES_PER_SENSOR..(slot + 1) * FEATURES_PER_SENSOR {
            data[r * width + c] = baseline.value(c);
        }
    }
    Window {
        features,
        targets: w.targets.clone(),
    }
}

fn mse_of<T: Real, P: Predictor<T> + ?Sized>(model: &P, windows: &[Window<T>]) -> Result<f64> {
    let preds = model.predict(windows)?;
    let mut sse = 0.0;
    let mut count = 0usize;
    for (p, w) in preds.iter().zip(windows) {
        for (a, b) in p.data().iter().zip(w.targets.data()) {
            let d = (*a - *b).to_f64_lossy();
            sse += d * d;
        }
        count += p.len();
    }
    Ok(sse / count as f64)
}

fn check_eval_set<T: Real, P: Predictor<T> + ?Sized>(
    model: &P,
    windows: &[Window<T>],
) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    for w in windows {
        let width = w.features.dims2().1;
        if width != model.input_width() {
            return Err(Error::shape(
                "ablation input width",
                model.input_width(),
                width,
            ));
        }
    }
    Ok(())
}

/// Unablated loss and the loss increase for each listed slot, computed in
/// parallel and returned in the order of `slots`.
pub fn ablation_scores<T: Real, P: Predictor<T> + ?Sized>(
    model: &P,
    windows: &[Window<T>],
    baseline: &Baseline<T>,
    slots: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_eval_set(model, windows)?;
    let width = model.input_width();
    baseline.check_width(width)?;
    if let Some(&bad) = slots
        .iter()
        .find(|&&s| (s + 1) * FEATURES_PER_SENSOR > width)
    {
        return Err(Error::Validation(format!("sensor slot {bad} out of range")));
    }
    let base = mse_of(model, windows)?;
    let scores = slots
        .par_iter()
        .map(|&slot| {
            let ablated: Vec<Window<T>> = windows
                .iter()
                .map(|w| ablate_window(w, slot, baseline))
                .collect();
            Ok(mse_of(model, &ablated)? - base)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((base, scores))
}

/// Per-joint importance scores, indexed by joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub model_id: String,
    pub dataset_id: String,
    pub baseline: BaselineKind,
    pub base_loss: f64,
    #[serde(
        serialize_with = "scores_to_names",
        deserialize_with = "scores_from_names"
    )]
    pub scores: Vec<f64>,
}

fn scores_to_names<S: Serializer>(scores: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(scores.len()))?;
    for (name, v) in JOINT_NAMES.iter().zip(scores) {
        map.serialize_entry(name, v)?;
    }
    map.end()
}

fn scores_from_names<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    use serde::de::Error as _;
    let named = BTreeMap::<String, f64>::deserialize(d)?;
    let mut scores = vec![None; NUM_JOINTS];
    for (name, v) in named {
        let j = joint_index(&name)
            .ok_or_else(|| D::Error::custom(format!("unknown joint name {name:?}")))?;
        scores[j] = Some(v);
    }
    scores
        .into_iter()
        .enumerate()
        .map(|(j, v)| {
            v.ok_or_else(|| D::Error::custom(format!("missing score for {}", JOINT_NAMES[j])))
        })
        .collect()
}

/// Ablates each of the 24 joints of a model whose input carries every joint,
/// laid out in `sensors` order.
pub fn feature_ablation<T: Real, P: Predictor<T> + ?Sized>(
    model: &P,
    eval_set: &[Window<T>],
    sensors: &SensorSet,
    baseline: &Baseline<T>,
    model_id: &str,
    dataset_id: &str,
) -> Result<AttributionReport> {
    if sensors.len() != NUM_JOINTS {
        return Err(Error::Validation(format!(
            "feature ablation needs all {NUM_JOINTS} sensors, got {}",
            sensors.len()
        )));
    }
    let slots: Vec<usize> = (0..NUM_JOINTS)
        .map(|j| sensors.slot_of(j).expect("all joints present"))
        .collect();
    let (base_loss, scores) = ablation_scores(model, eval_set, baseline, &slots)?;
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite score for {}",
            JOINT_NAMES[bad]
        )));
    }
    Ok(AttributionReport {
        model_id: model_id.into(),
        dataset_id: dataset_id.into(),
        baseline: baseline.kind(),
        base_loss,
        scores,
    })
}

/// Runs [`feature_ablation`] once per labelled evaluation set. Dataset-mean
/// baselines are computed per label.
pub fn per_dataset_ablation<T: Real, P: Predictor<T> + ?Sized>(
    model: &P,
    datasets: &BTreeMap<String, Vec<Window<T>>>,
    sensors: &SensorSet,
    baseline: BaselineKind,
    model_id: &str,
) -> Result<BTreeMap<String, AttributionReport>> {
    datasets
        .iter()
        .map(|(label, windows)| {
            if windows.is_empty() {
                return Err(Error::Validation(format!("dataset {label:?} is empty")));
            }
            let b = Baseline::for_kind(baseline, windows)?;
            Ok((
                label.clone(),
                feature_ablation(model, windows, sensors, &b, model_id, label)?,
            ))
        })
        .collect()
}

fn ranked(report: &AttributionReport) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..report.scores.len()).collect();
    idx.sort_by(|&a, &b| {
        report.scores[b]
            .total_cmp(&report.scores[a])
            .then(a.cmp(&b))
    });
    idx
}

/// The `k` highest-scoring joints in descending score order; equal scores
/// go to the lower joint index first.
pub fn rank_sensors(report: &AttributionReport, k: usize) -> Result<SensorSet> {
    if k == 0 || k > NUM_JOINTS {
        return Err(Error::Validation(format!(
            "k must be in 1..={NUM_JOINTS}, got {k}"
        )));
    }
    SensorSet::new(ranked(report)[..k].to_vec())
}

/// The `k` lowest-scoring joints, least important first.
pub fn lowest_sensors(report: &AttributionReport, k: usize) -> Result<SensorSet> {
    if k == 0 || k > NUM_JOINTS {
        return Err(Error::Validation(format!(
            "k must be in 1..={NUM_JOINTS}, got {k}"
        )));
    }
    let r = ranked(report);
    SensorSet::new(r.iter().rev().take(k).copied().collect())
}
