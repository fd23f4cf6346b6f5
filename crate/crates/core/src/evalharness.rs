//! The four evaluation metrics and the synthetic dataset fixtures.
//!
//! Rotation metrics project each raw 3×3 output block onto SO(3) first.
//! Every metric is a mean over all joints of all evaluated frames; padded
//! synthesis frames never reach the metrics because windows are built from
//! the computable frames only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imusynth::{
    ImuSequence, SensorSet, FEATURES_PER_SENSOR, MIN_SYNTH_FRAMES, PADDED_TAIL_FRAMES,
};
use crate::kinematics::{
    forward_kinematics, geodesic_angle_deg, project_to_rotation, rot_axis_angle, PoseFrame,
    PoseSequence, Skeleton, NUM_JOINTS,
};
use crate::neuralseq::{make_windows, predict_windows, Checkpoint, Tensor, Window};
use crate::scalar::Real;

pub const CRIT_TYPE: &str = "MSE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub crit_type: String,
    /// MSE on the raw 216-wide outputs.
    pub crit_score: f64,
    /// Mean joint position error, meters.
    pub pos_err: f64,
    /// Mean local rotation error, degrees.
    pub loc_rot_err: f64,
    /// Mean global rotation error, degrees.
    pub global_rot_err: f64,
    pub model_id: String,
    pub dataset_id: String,
}

/// Projects each 3×3 block of a `[frames, 9·J]` raw output onto SO(3).
pub fn project_raw<T: Real>(raw: &Tensor<T>) -> Result<Vec<PoseFrame<T>>> {
    let (frames, width) = raw.dims2();
    if width % 9 != 0 {
        return Err(Error::shape("raw pose width", "multiple of 9", width));
    }
    (0..frames)
        .map(|f| {
            let local_rot = raw
                .row(f)
                .chunks_exact(9)
                .map(|b| {
                    project_to_rotation(&[
                        [b[0], b[1], b[2]],
                        [b[3], b[4], b[5]],
                        [b[6], b[7], b[8]],
                    ])
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PoseFrame { local_rot })
        })
        .collect()
}

fn check_pair<T: Real>(pred: &[PoseFrame<T>], truth: &[PoseFrame<T>]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metric frame count", truth.len(), pred.len()));
    }
    for (p, t) in pred.iter().zip(truth) {
        if p.local_rot.len() != t.local_rot.len() {
            return Err(Error::shape(
                "metric joint count",
                t.local_rot.len(),
                p.local_rot.len(),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
struct MetricSums {
    loc: f64,
    global: f64,
    pos: f64,
    joints: usize,
}

impl MetricSums {
    fn add<T: Real>(
        &mut self,
        pred: &[PoseFrame<T>],
        truth: &[PoseFrame<T>],
        skel: &Skeleton<T>,
    ) -> Result<()> {
        check_pair(pred, truth)?;
        for (p, t) in pred.iter().zip(truth) {
            let fp = forward_kinematics(p, skel)?;
            let ft = forward_kinematics(t, skel)?;
            for j in 0..t.local_rot.len() {
                self.loc += geodesic_angle_deg(&p.local_rot[j], &t.local_rot[j]).to_f64_lossy();
                self.global +=
                    geodesic_angle_deg(&fp.global_rot[j], &ft.global_rot[j]).to_f64_lossy();
                let d: f64 = (0..3)
                    .map(|k| {
                        (fp.positions[j][k] - ft.positions[j][k])
                            .to_f64_lossy()
                            .powi(2)
                    })
                    .sum();
                self.pos += d.sqrt();
            }
            self.joints += t.local_rot.len();
        }
        Ok(())
    }

    fn mean(total: f64, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}

/// Mean geodesic angle between projected predicted and true local rotations.
pub fn local_rotation_error<T: Real>(pred: &Tensor<T>, truth: &[PoseFrame<T>]) -> Result<T> {
    let pred = project_raw(pred)?;
    check_pair(&pred, truth)?;
    let mut total = 0.0;
    let mut n = 0;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.local_rot.iter().zip(&t.local_rot) {
            total += geodesic_angle_deg(a, b).to_f64_lossy();
            n += 1;
        }
    }
    Ok(T::lit(MetricSums::mean(total, n)))
}

/// Mean geodesic angle between global rotations after forward kinematics.
pub fn global_rotation_error<T: Real>(
    pred: &Tensor<T>,
    truth: &[PoseFrame<T>],
    skel: &Skeleton<T>,
) -> Result<T> {
    let mut s = MetricSums::default();
    s.add(&project_raw(pred)?, truth, skel)?;
    Ok(T::lit(MetricSums::mean(s.global, s.joints)))
}

/// Mean Euclidean joint position error in meters, root pinned at the origin.
pub fn position_error<T: Real>(
    pred: &Tensor<T>,
    truth: &[PoseFrame<T>],
    skel: &Skeleton<T>,
) -> Result<T> {
    let mut s = MetricSums::default();
    s.add(&project_raw(pred)?, truth, skel)?;
    Ok(T::lit(MetricSums::mean(s.pos, s.joints)))
}

/// One recorded sequence: poses and the IMU features synthesized from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub pose: PoseSequence<T>,
    pub imu: ImuSequence<T>,
}

impl<T: Real> Sample<T> {
    pub fn new(pose: PoseSequence<T>, imu: ImuSequence<T>) -> Result<Self> {
        if pose.len() != imu.len() {
            return Err(Error::shape("sample frame count", pose.len(), imu.len()));
        }
        if pose.len() < MIN_SYNTH_FRAMES {
            return Err(Error::SequenceTooShort {
                len: pose.len(),
                min: MIN_SYNTH_FRAMES,
            });
        }
        Ok(Self { pose, imu })
    }

    /// Synthesizes IMU features for `sensors` from `pose`.
    pub fn synthesize(
        pose: PoseSequence<T>,
        skel: &Skeleton<T>,
        sensors: &SensorSet,
    ) -> Result<Self> {
        let imu = ImuSequence::synthesize(&pose, skel, sensors)?;
        Self::new(pose, imu)
    }

    /// Frames whose acceleration is a real second difference.
    pub fn usable_frames(&self) -> usize {
        self.pose.len().saturating_sub(PADDED_TAIL_FRAMES)
    }

    /// Keeps only the features of `subset`.
    pub fn select(&self, subset: &SensorSet) -> Result<Self> {
        Ok(Self {
            pose: self.pose.clone(),
            imu: self.imu.select(subset)?,
        })
    }
}

/// Cuts every sample into training/evaluation windows, dropping the padded
/// tail frames first.
pub fn windows_from_samples<T: Real>(
    samples: &[Sample<T>],
    window_len: usize,
) -> Result<Vec<Window<T>>> {
    let mut out = Vec::new();
    for s in samples {
        let n = s.usable_frames();
        let targets: Vec<Vec<T>> = s.pose.frames[..n].iter().map(PoseFrame::flatten).collect();
        out.extend(make_windows(&s.imu.features[..n], &targets, window_len)?);
    }
    Ok(out)
}

/// Evens for training, odds for evaluation.
pub fn train_eval_split<T: Clone>(items: &[T]) -> (Vec<T>, Vec<T>) {
    let train = items.iter().step_by(2).cloned().collect();
    let eval = items.iter().skip(1).step_by(2).cloned().collect();
    (train, eval)
}

fn truth_frames<T: Real>(targets: &Tensor<T>) -> Result<Vec<PoseFrame<T>>> {
    (0..targets.dims2().0)
        .map(|r| PoseFrame::from_flat(targets.row(r)))
        .collect()
}

/// Metrics of already computed per-window predictions.
pub fn evaluate_predictions<T: Real>(
    preds: &[Tensor<T>],
    windows: &[Window<T>],
    skel: &Skeleton<T>,
) -> Result<MetricsReport> {
    if preds.len() != windows.len() {
        return Err(Error::shape(
            "prediction windows",
            windows.len(),
            preds.len(),
        ));
    }
    if windows.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    let mut sums = MetricSums::default();
    for (p, w) in preds.iter().zip(windows) {
        if p.shape() != w.targets.shape() {
            return Err(Error::shape(
                "prediction",
                format!("{:?}", w.targets.shape()),
                format!("{:?}", p.shape()),
            ));
        }
        for (a, b) in p.data().iter().zip(w.targets.data()) {
            let d = (*a - *b).to_f64_lossy();
            sse += d * d;
        }
        count += p.len();
        sums.add(&project_raw(p)?, &truth_frames(&w.targets)?, skel)?;
    }
    Ok(MetricsReport {
        crit_type: CRIT_TYPE.into(),
        crit_score: sse / count as f64,
        pos_err: MetricSums::mean(sums.pos, sums.joints),
        loc_rot_err: MetricSums::mean(sums.loc, sums.joints),
        global_rot_err: MetricSums::mean(sums.global, sums.joints),
        model_id: String::new(),
        dataset_id: String::new(),
    })
}

/// Runs `model` over every sample (in chunks of its training window length)
/// and computes all four metrics.
pub fn evaluate<T: Real>(
    model: &Checkpoint<T>,
    data: &[Sample<T>],
    skel: &Skeleton<T>,
    model_id: &str,
    dataset_id: &str,
) -> Result<MetricsReport> {
    for s in data {
        let width = s.imu.sensors.feature_width();
        if width != model.spec.input_dim() {
            return Err(Error::shape(
                "model input width",
                model.spec.input_dim(),
                width,
            ));
        }
        if let Some(expected) = &model.sensors {
            if expected != &s.imu.sensors {
                return Err(Error::Validation(format!(
                    "model expects sensors {:?}, data has {:?}",
                    expected.joints(),
                    s.imu.sensors.joints()
                )));
            }
        }
    }
    let windows = windows_from_samples(data, model.window_len)?;
    let preds = predict_windows(&model.spec, &model.params, &windows)?;
    let mut report = evaluate_predictions(&preds, &windows, skel)?;
    report.model_id = model_id.into();
    report.dataset_id = dataset_id.into();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Procedural,
    PlantedSignal,
    File,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procedural" => Ok(Self::Procedural),
            "planted_signal" => Ok(Self::PlantedSignal),
            "file" => Ok(Self::File),
            other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_sequences: usize,
    pub seq_len: usize,
    pub fps: f64,
    pub seed: u64,
    pub planted_joints: Option<SensorSet>,
    /// Upper bound on each joint's rotation angle, degrees.
    pub max_amplitude_deg: f64,
    /// Upper bound on the sine component frequencies, Hz.
    pub max_freq_hz: f64,
    /// Directory of pose/IMU files for `kind = "file"`.
    pub path: Option<String>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Procedural,
            n_sequences: 8,
            seq_len: 240,
            fps: 60.0,
            seed: 0,
            planted_joints: None,
            max_amplitude_deg: 45.0,
            max_freq_hz: 2.0,
            path: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DatasetKind::PlantedSignal if self.planted_joints.is_none() => {
                return Err(Error::Config(
                    "planted_signal datasets need planted_joints".into(),
                ))
            }
            DatasetKind::File if self.path.is_none() => {
                return Err(Error::Config("file datasets need a path".into()))
            }
            DatasetKind::File => return Ok(()),
            _ => {}
        }
        if self.n_sequences == 0 {
            return Err(Error::Config("n_sequences must be at least 1".into()));
        }
        if self.seq_len < MIN_SYNTH_FRAMES {
            return Err(Error::SequenceTooShort {
                len: self.seq_len,
                min: MIN_SYNTH_FRAMES,
            });
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::Config(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if !(0.0..=180.0).contains(&self.max_amplitude_deg) {
            return Err(Error::Config(
                "max_amplitude_deg must lie in [0, 180]".into(),
            ));
        }
        if !(self.max_freq_hz > 0.0) || !self.max_freq_hz.is_finite() {
            return Err(Error::Config("max_freq_hz must be positive".into()));
        }
        Ok(())
    }
}

fn random_unit_axis(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Number of sine components shared by the joints of one sequence.
pub const MOTION_COMPONENTS: usize = 3;

/// Per-joint mixing weights of the shared sine components, in degrees.
fn joint_amplitudes(rng: &mut ChaCha8Rng, max_amp: f64) -> [f64; MOTION_COMPONENTS] {
    let budget = max_amp * rng.gen_range(0.25..=1.0);
    let w: [f64; MOTION_COMPONENTS] = std::array::from_fn(|_| rng.gen_range(0.2..=1.0));
    let total: f64 = w.iter().sum();
    w.map(|x| budget * x / total)
}

fn sequence_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Procedural stand-in for recorded motion:
/// `θⱼ(t) = Σₖ Aⱼₖ sin(2π fₖ t + φₖ)` about a fixed axis per joint.
///
/// Axes and amplitudes `Aⱼₖ` are drawn once per dataset; every sequence
/// draws its own frequencies and phases, shared by all of its joints. Joint
/// motion is therefore coordinated through a few latent signals, as in real
/// movement, and a handful of sensors can in principle explain the full pose.
pub fn procedural_pose_dataset<T: Real>(spec: &DatasetSpec) -> Result<Vec<PoseSequence<T>>> {
    spec.validate()?;
    let mut body_rng = sequence_rng(spec.seed, 0);
    let axes: Vec<[T; 3]> = (0..NUM_JOINTS)
        .map(|_| random_unit_axis(&mut body_rng).map(T::lit))
        .collect();
    let amps: Vec<[f64; MOTION_COMPONENTS]> = (0..NUM_JOINTS)
        .map(|_| joint_amplitudes(&mut body_rng, spec.max_amplitude_deg))
        .collect();
    (0..spec.n_sequences)
        .map(|s| {
            let mut rng = sequence_rng(spec.seed, 1 + s as u64);
            let freq: [f64; MOTION_COMPONENTS] =
                std::array::from_fn(|_| rng.gen_range(0.1 * spec.max_freq_hz..=spec.max_freq_hz));
            let phase: [f64; MOTION_COMPONENTS] =
                std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
            let frames = (0..spec.seq_len)
                .map(|i| {
                    let t = i as f64 / spec.fps;
                    let wave: [f64; MOTION_COMPONENTS] = std::array::from_fn(|k| {
                        (std::f64::consts::TAU * freq[k] * t + phase[k]).sin()
                    });
                    let local_rot = axes
                        .iter()
                        .zip(&amps)
                        .map(|(axis, a)| {
                            let deg: f64 = a.iter().zip(&wave).map(|(a, w)| a * w).sum();
                            rot_axis_angle(*axis, T::lit(deg))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(PoseFrame { local_rot })
                })
                .collect::<Result<Vec<_>>>()?;
            PoseSequence::new(frames, T::lit(spec.fps))
        })
        .collect()
}

/// Procedural poses with IMU features for all 24 joints.
pub fn procedural_samples<T: Real>(
    spec: &DatasetSpec,
    skel: &Skeleton<T>,
) -> Result<Vec<Sample<T>>> {
    let all = SensorSet::all();
    procedural_pose_dataset(spec)?
        .into_iter()
        .map(|p| Sample::synthesize(p, skel, &all))
        .collect()
}

/// Procedural samples in which only the planted joints carry signal: every
/// other joint's 12 features are replaced by seeded N(0, 1) noise that is
/// independent of the pose.
pub fn planted_signal_dataset<T: Real>(
    spec: &DatasetSpec,
    skel: &Skeleton<T>,
) -> Result<Vec<Sample<T>>> {
    let planted = spec
        .planted_joints
        .as_ref()
        .ok_or_else(|| Error::Config("planted_signal datasets need planted_joints".into()))?;
    let mut samples = procedural_samples(spec, skel)?;
    let noisy: Vec<usize> = (0..NUM_JOINTS)
        .filter(|j| planted.slot_of(*j).is_none())
        .collect();
    for (s, sample) in samples.iter_mut().enumerate() {
        let mut rng = sequence_rng(spec.seed, (1 << 32) + s as u64);
        for row in sample.imu.features.iter_mut() {
            for &j in &noisy {
                let slot = sample.imu.sensors.slot_of(j).expect("all joints present");
                for v in &mut row[slot * FEATURES_PER_SENSOR..(slot + 1) * FEATURES_PER_SENSOR] {
                    *v = T::lit(rng.sample(StandardNormal));
                }
            }
        }
    }
    Ok(samples)
}

/// Builds the samples a generated (non-file) spec describes.
pub fn generate_samples<T: Real>(spec: &DatasetSpec, skel: &Skeleton<T>) -> Result<Vec<Sample<T>>> {
    match spec.kind {
        DatasetKind::Procedural => procedural_samples(spec, skel),
        DatasetKind::PlantedSignal => planted_signal_dataset(spec, skel),
        DatasetKind::File => Err(Error::Config(
            "file datasets are read from disk, not generated".into(),
        )),
    }
}
