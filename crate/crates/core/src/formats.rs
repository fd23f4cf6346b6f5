//! Newline-delimited JSON files for pose and IMU sequences, and the sensor
//! set file written by ranking.
//!
//! Values are written as `f64` with shortest round-trip formatting, so the
//! same data always produces the same bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imusynth::{ImuSequence, SensorSet, FEATURES_PER_SENSOR};
use crate::kinematics::{PoseFrame, PoseSequence, RotationMatrix, JOINT_NAMES, NUM_JOINTS};
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PoseHeader {
    version: u32,
    fps: f64,
    joints: usize,
}

#[derive(Serialize, Deserialize)]
struct PoseLine {
    rot: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ImuHeader {
    version: u32,
    fps: f64,
    sensors: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ImuLine {
    feat: Vec<f64>,
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {v}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn push_line<S: Serialize>(out: &mut String, v: &S) -> Result<()> {
    out.push_str(&serde_json::to_string(v)?);
    out.push('\n');
    Ok(())
}

/// Non-empty lines, numbered from 1 for error messages.
fn lines(s: &str) -> impl Iterator<Item = (usize, &str)> {
    s.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_line<'a, D: Deserialize<'a>>(n: usize, line: &'a str) -> Result<D> {
    serde_json::from_str(line).map_err(|e| Error::Format(format!("line {n}: {e}")))
}

pub fn pose_to_ndjson<T: Real>(seq: &PoseSequence<T>) -> Result<String> {
    let joints = seq.frames.first().map_or(NUM_JOINTS, |f| f.local_rot.len());
    if joints != NUM_JOINTS {
        return Err(Error::shape("pose file joints", NUM_JOINTS, joints));
    }
    let mut out = String::new();
    push_line(
        &mut out,
        &PoseHeader {
            version: FORMAT_VERSION,
            fps: seq.fps.to_f64_lossy(),
            joints,
        },
    )?;
    for frame in &seq.frames {
        let rot = frame
            .local_rot
            .iter()
            .flat_map(|r| {
                r.matrix()
                    .iter()
                    .flatten()
                    .map(|v| v.to_f64_lossy())
                    .collect::<Vec<_>>()
            })
            .collect();
        push_line(&mut out, &PoseLine { rot })?;
    }
    Ok(out)
}

pub fn pose_from_ndjson<T: Real>(s: &str) -> Result<PoseSequence<T>> {
    let mut it = lines(s);
    let (n, head) = it
        .next()
        .ok_or_else(|| Error::Format("empty pose file".into()))?;
    let header: PoseHeader = parse_line(n, head)?;
    check_version(header.version)?;
    if header.joints != NUM_JOINTS {
        return Err(Error::Format(format!(
            "pose file has {} joints, expected {NUM_JOINTS}",
            header.joints
        )));
    }
    let mut frames = Vec::new();
    for (n, line) in it {
        let l: PoseLine = parse_line(n, line)?;
        if l.rot.len() != NUM_JOINTS * 9 {
            return Err(Error::Format(format!(
                "line {n}: {} rotation values, expected {}",
                l.rot.len(),
                NUM_JOINTS * 9
            )));
        }
        let local_rot = l
            .rot
            .chunks(9)
            .map(|c| {
                let m = [
                    [T::lit(c[0]), T::lit(c[1]), T::lit(c[2])],
                    [T::lit(c[3]), T::lit(c[4]), T::lit(c[5])],
                    [T::lit(c[6]), T::lit(c[7]), T::lit(c[8])],
                ];
                RotationMatrix::new(m)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(format!("line {n}: {e}")))?;
        frames.push(PoseFrame { local_rot });
    }
    PoseSequence::new(frames, T::lit(header.fps))
}

pub fn imu_to_ndjson<T: Real>(seq: &ImuSequence<T>) -> Result<String> {
    let mut out = String::new();
    push_line(
        &mut out,
        &ImuHeader {
            version: FORMAT_VERSION,
            fps: seq.fps.to_f64_lossy(),
            sensors: seq.sensors.joints().to_vec(),
        },
    )?;
    for row in &seq.features {
        push_line(
            &mut out,
            &ImuLine {
                feat: row.iter().map(|v| v.to_f64_lossy()).collect(),
            },
        )?;
    }
    Ok(out)
}

pub fn imu_from_ndjson<T: Real>(s: &str) -> Result<ImuSequence<T>> {
    let mut it = lines(s);
    let (n, head) = it
        .next()
        .ok_or_else(|| Error::Format("empty IMU file".into()))?;
    let header: ImuHeader = parse_line(n, head)?;
    check_version(header.version)?;
    let sensors = SensorSet::new(header.sensors)?;
    if !(header.fps > 0.0) {
        return Err(Error::Format(format!(
            "fps must be positive, got {}",
            header.fps
        )));
    }
    let width = sensors.len() * FEATURES_PER_SENSOR;
    let mut features = Vec::new();
    for (n, line) in it {
        let l: ImuLine = parse_line(n, line)?;
        if l.feat.len() != width {
            return Err(Error::Format(format!(
                "line {n}: {} feature values, expected {width}",
                l.feat.len()
            )));
        }
        features.push(l.feat.into_iter().map(T::lit).collect());
    }
    Ok(ImuSequence {
        fps: T::lit(header.fps),
        sensors,
        features,
    })
}

#[derive(Serialize, Deserialize)]
struct SensorSetFile {
    sensors: Vec<usize>,
    names: Vec<String>,
}

/// `{"sensors":[...],"names":[...]}`, in the set's own order.
pub fn sensor_set_to_json(set: &SensorSet) -> Result<String> {
    let file = SensorSetFile {
        sensors: set.joints().to_vec(),
        names: set
            .joints()
            .iter()
            .map(|&j| JOINT_NAMES[j].to_string())
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Reads a sensor set file. `names` may be omitted; when present it must
/// agree with the indices.
pub fn sensor_set_from_json(s: &str) -> Result<SensorSet> {
    #[derive(Deserialize)]
    struct Loose {
        sensors: Vec<usize>,
        #[serde(default)]
        names: Option<Vec<String>>,
    }
    let file: Loose = serde_json::from_str(s)?;
    let set = SensorSet::new(file.sensors)?;
    if let Some(names) = file.names {
        let expected: Vec<&str> = set.joints().iter().map(|&j| JOINT_NAMES[j]).collect();
        if names.len() != expected.len() || names.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(Error::Format(format!(
                "sensor names {names:?} do not match indices {:?}",
                set.joints()
            )));
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalharness::{procedural_pose_dataset, DatasetSpec};
    use crate::kinematics::Skeleton;

    fn sequence() -> PoseSequence<f64> {
        let spec = DatasetSpec {
            n_sequences: 1,
            seq_len: 5,
            ..Default::default()
        };
        procedural_pose_dataset(&spec).unwrap().remove(0)
    }

    #[test]
    fn pose_round_trip_is_exact() {
        let seq = sequence();
        let text = pose_to_ndjson(&seq).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with(r#"{"version":1,"fps":60.0,"joints":24}"#));
        let back: PoseSequence<f64> = pose_from_ndjson(&text).unwrap();
        assert_eq!(back, seq);
        assert_eq!(pose_to_ndjson(&back).unwrap(), text);
    }

    #[test]
    fn imu_round_trip_is_exact() {
        let seq = sequence();
        let sensors = SensorSet::new(vec![18, 0, 4]).unwrap();
        let imu = ImuSequence::synthesize(&seq, &Skeleton::smpl(), &sensors).unwrap();
        let text = imu_to_ndjson(&imu).unwrap();
        assert!(text.starts_with(r#"{"version":1,"fps":60.0,"sensors":[18,0,4]}"#));
        let back: ImuSequence<f64> = imu_from_ndjson(&text).unwrap();
        assert_eq!(back, imu);
    }

    #[test]
    fn f32_reads_f64_files() {
        let text = pose_to_ndjson(&sequence()).unwrap();
        let back: PoseSequence<f32> = pose_from_ndjson(&text).unwrap();
        assert_eq!(back.len(), 5);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let text = pose_to_ndjson(&sequence()).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            pose_from_ndjson::<f64>(&bumped),
            Err(Error::Format(_))
        ));
        let short: String = text
            .lines()
            .take(1)
            .chain(["{\"rot\":[1.0,0.0]}"])
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(
            pose_from_ndjson::<f64>(&short),
            Err(Error::Format(_))
        ));
        let mut bad_rot = vec![0.0; 216];
        bad_rot[0] = 2.0;
        let bad = format!(
            "{}\n{}",
            text.lines().next().unwrap(),
            serde_json::json!({ "rot": bad_rot })
        );
        assert!(matches!(
            pose_from_ndjson::<f64>(&bad),
            Err(Error::Format(_))
        ));
        assert!(pose_from_ndjson::<f64>("").is_err());
        assert!(imu_from_ndjson::<f64>(
            "{\"version\":1,\"fps\":60,\"sensors\":[0]}\n{\"feat\":[1.0]}"
        )
        .is_err());
        assert!(imu_from_ndjson::<f64>("{\"version\":1,\"fps\":60,\"sensors\":[0,0]}").is_err());
    }

    #[test]
    fn sensor_set_file_carries_names() {
        let set = SensorSet::new(vec![20, 0, 5]).unwrap();
        let text = sensor_set_to_json(&set).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["sensors"], serde_json::json!([20, 0, 5]));
        assert_eq!(v["names"][1], "Pelvis");
        assert_eq!(sensor_set_from_json(&text).unwrap(), set);
        assert_eq!(
            sensor_set_from_json(r#"{"sensors":[3]}"#).unwrap().joints(),
            &[3]
        );
        assert!(sensor_set_from_json(r#"{"sensors":[3],"names":["Pelvis"]}"#).is_err());
        assert!(sensor_set_from_json(r#"{"sensors":[24]}"#).is_err());
    }
}
