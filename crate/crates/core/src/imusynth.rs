//! Synthetic IMU readings from pose sequences.
//!
//! Each virtual sensor sits on a joint: its orientation is the joint's global
//! rotation and its acceleration is the second finite difference of the
//! joint position trajectory, scaled by `fps²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, PoseSequence, RotationMatrix, Skeleton, Vec3, NUM_JOINTS,
};
use crate::scalar::Real;

/// Scalars per sensor sample: 9 orientation entries then 3 acceleration.
pub const FEATURES_PER_SENSOR: usize = 12;

/// Smallest sequence length for which an acceleration can be computed.
pub const MIN_SYNTH_FRAMES: usize = 3;

/// Number of trailing frames whose acceleration is padding rather than a
/// computed second difference.
pub const PADDED_TAIL_FRAMES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuFrame<T> {
    pub accel: Vec3<T>,
    pub orient: RotationMatrix<T>,
}

impl<T: Real> ImuFrame<T> {
    pub fn flatten(&self) -> [T; FEATURES_PER_SENSOR] {
        let mut out = [T::zero(); FEATURES_PER_SENSOR];
        out[..9].copy_from_slice(&self.orient.to_row_major());
        out[9..].copy_from_slice(&self.accel);
        out
    }
}

/// Ordered, duplicate-free list of sensor joints. Order fixes feature layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SensorSet(Vec<usize>);

impl SensorSet {
    pub fn new(joints: Vec<usize>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Validation("sensor set is empty".into()));
        }
        let mut seen = [false; NUM_JOINTS];
        for &j in &joints {
            if j >= NUM_JOINTS {
                return Err(Error::Validation(format!("sensor joint {j} out of range")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::Validation(format!("duplicate sensor joint {j}")));
            }
        }
        Ok(Self(joints))
    }

    pub fn all() -> Self {
        Self((0..NUM_JOINTS).collect())
    }

    pub fn joints(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.0.len() * FEATURES_PER_SENSOR
    }

    /// Position of `joint` within this set.
    pub fn slot_of(&self, joint: usize) -> Option<usize> {
        self.0.iter().position(|&j| j == joint)
    }
}

impl TryFrom<Vec<usize>> for SensorSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        SensorSet::new(v)
    }
}

impl From<SensorSet> for Vec<usize> {
    fn from(s: SensorSet) -> Self {
        s.0
    }
}

/// Non-negative `joints × vertices` weight matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeightMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> SkinWeightMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation("weight matrix is empty".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::shape("skin weights", rows * cols, data.len()));
        }
        if data.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::Validation(
                "weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Validation("ragged weight rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[T] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }
}

/// Column of the largest weight in each row; ties go to the lowest column.
pub fn argmax_vertex_per_joint<T: Real>(w: &SkinWeightMatrix<T>) -> Vec<usize> {
    (0..w.rows())
        .map(|j| {
            let row = w.row(j);
            let mut best = 0;
            for (v, &x) in row.iter().enumerate().skip(1) {
                if x > row[best] {
                    best = v;
                }
            }
            best
        })
        .collect()
}

/// `a[i] = (v[i] + v[i+2] − 2·v[i+1]) · fps²` for `i ≤ T−3`; the last two
/// frames repeat `a[T−3]` so the output has one entry per input frame.
pub fn acceleration_from_positions<T: Real>(v: &[Vec3<T>], fps: T) -> Result<Vec<Vec3<T>>> {
    if v.len() < MIN_SYNTH_FRAMES {
        return Err(Error::SequenceTooShort {
            len: v.len(),
            min: MIN_SYNTH_FRAMES,
        });
    }
    if !(fps > T::zero()) {
        return Err(Error::Validation(format!(
            "fps must be positive, got {fps}"
        )));
    }
    let scale = fps * fps;
    let two = T::lit(2.0);
    let mut out: Vec<Vec3<T>> = v
        .windows(3)
        .map(|w| {
            let mut a = [T::zero(); 3];
            for (k, ak) in a.iter_mut().enumerate() {
                *ak = (w[0][k] + w[2][k] - two * w[1][k]) * scale;
            }
            a
        })
        .collect();
    let last = *out.last().expect("at least one window");
    out.extend(std::iter::repeat(last).take(PADDED_TAIL_FRAMES));
    Ok(out)
}

/// Per-frame IMU readings, one [`ImuFrame`] per sensor in `sensors` order.
pub fn synthesize_imu<T: Real>(
    seq: &PoseSequence<T>,
    skel: &Skeleton<T>,
    sensors: &SensorSet,
) -> Result<Vec<Vec<ImuFrame<T>>>> {
    if seq.len() < MIN_SYNTH_FRAMES {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            min: MIN_SYNTH_FRAMES,
        });
    }
    if let Some(&bad) = sensors.joints().iter().find(|&&j| j >= skel.len()) {
        return Err(Error::Validation(format!(
            "sensor joint {bad} not in a {}-joint skeleton",
            skel.len()
        )));
    }
    let fk = seq
        .frames
        .iter()
        .map(|f| forward_kinematics(f, skel))
        .collect::<Result<Vec<_>>>()?;
    let accel_per_sensor = sensors
        .joints()
        .iter()
        .map(|&j| {
            let traj: Vec<Vec3<T>> = fk.iter().map(|r| r.positions[j]).collect();
            acceleration_from_positions(&traj, seq.fps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fk
        .iter()
        .enumerate()
        .map(|(t, r)| {
            sensors
                .joints()
                .iter()
                .zip(&accel_per_sensor)
                .map(|(&j, acc)| ImuFrame {
                    accel: acc[t],
                    orient: r.global_rot[j],
                })
                .collect()
        })
        .collect())
}

/// Flattens each frame to `|sensors|·12` scalars: per sensor, 9 orientation
/// entries (row-major) followed by 3 acceleration components.
pub fn flatten_features<T: Real>(frames: &[Vec<ImuFrame<T>>]) -> Result<Vec<Vec<T>>> {
    let width = frames.first().map_or(0, Vec::len);
    frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            if f.len() != width {
                return Err(Error::Validation(format!(
                    "frame {t} has {} sensors, expected {width}",
                    f.len()
                )));
            }
            Ok(f.iter().flat_map(|s| s.flatten()).collect())
        })
        .collect()
}

/// Flattened IMU features for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSequence<T> {
    pub fps: T,
    pub sensors: SensorSet,
    /// One row of `sensors.feature_width()` values per frame.
    pub features: Vec<Vec<T>>,
}

impl<T: Real> ImuSequence<T> {
    pub fn synthesize(
        seq: &PoseSequence<T>,
        skel: &Skeleton<T>,
        sensors: &SensorSet,
    ) -> Result<Self> {
        let frames = synthesize_imu(seq, skel, sensors)?;
        Ok(Self {
            fps: seq.fps,
            sensors: sensors.clone(),
            features: flatten_features(&frames)?,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Column-selects the blocks of `subset`, which must be drawn from the
    /// sensors already present.
    pub fn select(&self, subset: &SensorSet) -> Result<Self> {
        let slots = subset
            .joints()
            .iter()
            .map(|&j| {
                self.sensors.slot_of(j).ok_or_else(|| {
                    Error::Validation(format!("sensor {j} not present in IMU sequence"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let features = self
            .features
            .iter()
            .map(|row| {
                slots
                    .iter()
                    .flat_map(|&s| {
                        row[s * FEATURES_PER_SENSOR..(s + 1) * FEATURES_PER_SENSOR]
                            .iter()
                            .copied()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            fps: self.fps,
            sensors: subset.clone(),
            features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{rot_z, PoseFrame};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn constant_and_linear_positions_have_zero_acceleration() {
        let still = vec![[1.0, 2.0, 3.0]; 6];
        for a in acceleration_from_positions(&still, 60.0).unwrap() {
            assert_eq!(a, [0.0; 3]);
        }
        let linear: Vec<_> = (0..8)
            .map(|i| [0.5 + i as f64 * 0.25, -1.0 + i as f64 * 0.5, 2.0 - i as f64])
            .collect();
        for a in acceleration_from_positions(&linear, 60.0).unwrap() {
            for c in a {
                assert_abs_diff_eq!(c, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn free_fall_recovers_gravity() {
        let g = 9.81;
        let v: Vec<_> = (0..20)
            .map(|i| {
                let t = i as f64 / 60.0;
                [0.0, 0.0, 0.5 * g * t * t]
            })
            .collect();
        let a = acceleration_from_positions(&v, 60.0).unwrap();
        assert_eq!(a.len(), 20);
        for ai in &a[..18] {
            assert_abs_diff_eq!(ai[2], g, epsilon = 1e-9);
        }
    }

    #[test]
    fn padding_repeats_last_computable_value() {
        let v: Vec<_> = (0..5).map(|i| [(i * i * i) as f64, 0.0, 0.0]).collect();
        let a = acceleration_from_positions(&v, 1.0).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a[3], a[2]);
        assert_eq!(a[4], a[2]);
    }

    #[test]
    fn short_sequences_are_rejected() {
        let v = vec![[0.0; 3]; 2];
        assert!(matches!(
            acceleration_from_positions(&v, 60.0),
            Err(Error::SequenceTooShort { len: 2, min: 3 })
        ));
    }

    #[test]
    fn argmax_examples() {
        let w = SkinWeightMatrix::from_rows(&[vec![0.1, 0.8, 0.1], vec![0.7, 0.2, 0.1]]).unwrap();
        assert_eq!(argmax_vertex_per_joint(&w), vec![1, 0]);

        let n = 5;
        let eye: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let w = SkinWeightMatrix::from_rows(&eye).unwrap();
        assert_eq!(argmax_vertex_per_joint(&w), (0..n).collect::<Vec<_>>());

        let tie = SkinWeightMatrix::from_rows(&[vec![0.5, 0.5, 0.0]]).unwrap();
        assert_eq!(argmax_vertex_per_joint(&tie), vec![0]);
    }

    #[test]
    fn empty_or_negative_weights_are_rejected() {
        assert!(SkinWeightMatrix::<f64>::new(0, 0, vec![]).is_err());
        assert!(SkinWeightMatrix::from_rows(&[vec![0.1, -0.2]]).is_err());
    }

    #[test]
    fn sensor_set_validation() {
        assert!(SensorSet::new(vec![0, 3, 3]).is_err());
        assert!(SensorSet::new(vec![24]).is_err());
        assert!(SensorSet::new(vec![]).is_err());
        let s = SensorSet::new(vec![5, 0]).unwrap();
        assert_eq!(s.slot_of(0), Some(1));
        assert_eq!(s.feature_width(), 24);
    }

    #[test]
    fn static_identity_pose_reads_zero_acceleration() {
        let skel = Skeleton::<f64>::smpl();
        let seq = PoseSequence::new(vec![PoseFrame::identity(24); 5], 60.0).unwrap();
        let frames = synthesize_imu(&seq, &skel, &SensorSet::all()).unwrap();
        assert_eq!(frames.len(), 5);
        for f in &frames {
            for s in f {
                assert_eq!(s.accel, [0.0; 3]);
                assert_eq!(s.orient, RotationMatrix::identity());
            }
        }
    }

    #[test]
    fn spinning_root_orientation_traces_spin() {
        let skel = Skeleton::<f64>::smpl();
        let frames: Vec<_> = (0..6)
            .map(|t| {
                let mut f = PoseFrame::identity(24);
                f.local_rot[0] = rot_z(10.0 * t as f64);
                f
            })
            .collect();
        let seq = PoseSequence::new(frames, 60.0).unwrap();
        let imu = synthesize_imu(&seq, &skel, &SensorSet::new(vec![0]).unwrap()).unwrap();
        for (t, f) in imu.iter().enumerate() {
            assert_eq!(f[0].accel, [0.0; 3]);
            assert_eq!(f[0].orient, rot_z(10.0 * t as f64));
        }
    }

    #[test]
    fn flatten_layout() {
        let f = ImuFrame {
            accel: [0.0; 3],
            orient: RotationMatrix::<f64>::identity(),
        };
        let flat = flatten_features(&[vec![f]]).unwrap();
        assert_eq!(
            flat[0],
            vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0.]
        );
        assert_eq!(flatten_features(&[vec![f; 6]]).unwrap()[0].len(), 72);
        assert_eq!(flatten_features(&[vec![f; 24]]).unwrap()[0].len(), 288);
        assert!(flatten_features(&[vec![f; 2], vec![f; 3]]).is_err());
    }

    proptest! {
        #[test]
        fn second_difference_is_linear(
            v in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 3..30),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let u: Vec<Vec3<f64>> = v.iter().map(|p| [p[1], p[2] * 0.5, -p[0]]).collect();
            let combo: Vec<Vec3<f64>> = v
                .iter()
                .zip(&u)
                .map(|(a, b)| [alpha * a[0] + beta * b[0], alpha * a[1] + beta * b[1], alpha * a[2] + beta * b[2]])
                .collect();
            let av = acceleration_from_positions(&v, 60.0).unwrap();
            let au = acceleration_from_positions(&u, 60.0).unwrap();
            let ac = acceleration_from_positions(&combo, 60.0).unwrap();
            for i in 0..v.len() - 2 {
                for k in 0..3 {
                    let want = alpha * av[i][k] + beta * au[i][k];
                    prop_assert!((ac[i][k] - want).abs() <= 1e-8 * (1.0 + want.abs()));
                }
            }
            prop_assert_eq!(ac.len(), v.len());
        }
    }
}
