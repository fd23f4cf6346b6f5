//! File plumbing shared by the commands: atomic writes, hashing and the
//! on-disk dataset directory layout.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use imupose_core::evalharness::Sample;
use imupose_core::formats::{imu_from_ndjson, imu_to_ndjson, pose_from_ndjson, pose_to_ndjson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const POSE_SUFFIX: &str = ".pose.ndjson";
pub const IMU_SUFFIX: &str = ".imu.ndjson";

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(dir, e))?;
    tmp.write_all(bytes)
        .map_err(|e| PipelineError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| PipelineError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| PipelineError::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &fs::read(path).map_err(|e| PipelineError::io(path, e))?,
    ))
}

/// Which sequences of a dataset directory a command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Even sequence indices.
    Train,
    /// Odd sequence indices.
    Eval,
    All,
}

impl Split {
    pub fn keeps(self, index: usize) -> bool {
        match self {
            Split::Train => index % 2 == 0,
            Split::Eval => index % 2 == 1,
            Split::All => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::All => "all",
        }
    }
}

pub fn sequence_stem(index: usize) -> String {
    format!("seq_{index:04}")
}

/// Pose files of a dataset directory in name order, each paired with its IMU
/// file.
pub fn dataset_files(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(POSE_SUFFIX) {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(PipelineError::Config(format!(
            "{}: no *{POSE_SUFFIX} files",
            dir.display()
        )));
    }
    Ok(stems
        .into_iter()
        .map(|s| {
            (
                dir.join(format!("{s}{POSE_SUFFIX}")),
                dir.join(format!("{s}{IMU_SUFFIX}")),
            )
        })
        .collect())
}

/// Loads the samples of `split`, recording each file read in `inputs`.
pub fn load_dataset(
    dir: &Path,
    split: Split,
    inputs: &mut BTreeMap<String, String>,
) -> Result<Vec<Sample<f64>>> {
    let mut out = Vec::new();
    for (i, (pose_path, imu_path)) in dataset_files(dir)?.into_iter().enumerate() {
        if !split.keeps(i) {
            continue;
        }
        let pose_text = read_text(&pose_path)?;
        let imu_text = read_text(&imu_path)?;
        let pose = pose_from_ndjson(&pose_text).map_err(|source| PipelineError::Parse {
            path: pose_path.clone(),
            source,
        })?;
        let imu = imu_from_ndjson(&imu_text).map_err(|source| PipelineError::Parse {
            path: imu_path.clone(),
            source,
        })?;
        inputs.insert(
            pose_path.display().to_string(),
            sha256_hex(pose_text.as_bytes()),
        );
        inputs.insert(
            imu_path.display().to_string(),
            sha256_hex(imu_text.as_bytes()),
        );
        out.push(
            Sample::new(pose, imu).map_err(|source| PipelineError::Parse {
                path: pose_path,
                source,
            })?,
        );
    }
    if out.is_empty() {
        return Err(PipelineError::Config(format!(
            "{}: no sequences in the {} split",
            dir.display(),
            split.as_str()
        )));
    }
    Ok(out)
}

/// Writes one sample as a pose/IMU file pair; returns both paths.
pub fn write_sample(dir: &Path, index: usize, sample: &Sample<f64>) -> Result<[PathBuf; 2]> {
    let stem = sequence_stem(index);
    let pose = dir.join(format!("{stem}{POSE_SUFFIX}"));
    let imu = dir.join(format!("{stem}{IMU_SUFFIX}"));
    write_atomic(&pose, pose_to_ndjson(&sample.pose)?.as_bytes())?;
    write_atomic(&imu, imu_to_ndjson(&sample.imu)?.as_bytes())?;
    Ok([pose, imu])
}
