//! Declarative run configuration (TOML) and the command-line flags that
//! override it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use imupose_core::attribution::BaselineKind;
use imupose_core::evalharness::{DatasetKind, DatasetSpec};
use imupose_core::imusynth::SensorSet;
use imupose_core::neuralseq::{ModelSpec, OptimizerKind, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_text, Split};
use crate::error::{PipelineError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "imupose",
    version,
    about = "Sparse-IMU pose estimation pipeline"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate pose sequences and synthesize IMU data for all 24 joints.
    Synth(SynthArgs),
    /// Train a pose model on a dataset directory.
    Train(TrainArgs),
    /// Feature-ablation scores for a 24-sensor checkpoint.
    Ablate(AblateArgs),
    /// Pick the k most (or least) important sensors from a report.
    Rank(RankArgs),
    /// Metrics for one checkpoint, or two side by side.
    Eval(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Ablate(_) => "ablate",
            Command::Rank(_) => "rank",
            Command::Eval(_) => "eval",
        }
    }
}

fn parse_from_str<T: std::str::FromStr<Err = imupose_core::Error>>(
    s: &str,
) -> std::result::Result<T, String> {
    s.parse().map_err(|e: imupose_core::Error| e.to_string())
}

fn parse_joint_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

#[derive(Debug, Args, Default)]
pub struct SynthArgs {
    /// procedural or planted_signal
    #[arg(long, value_parser = parse_from_str::<DatasetKind>)]
    pub kind: Option<DatasetKind>,
    #[arg(long)]
    pub n_sequences: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Comma-separated joint indices carrying signal (planted_signal only).
    #[arg(long, value_parser = parse_joint_list)]
    pub planted: Option<Vec<usize>>,
    #[arg(long)]
    pub max_amplitude_deg: Option<f64>,
    #[arg(long)]
    pub max_freq_hz: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    /// Sensor set file from `rank`; default is all 24 joints.
    #[arg(long, value_name = "PATH")]
    pub sensors: Option<PathBuf>,
    #[arg(long, value_parser = parse_from_str::<Variant>)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_hidden: Option<usize>,
    #[arg(long)]
    pub accel_scale: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long, value_parser = parse_from_str::<OptimizerKind>)]
    pub optimizer: Option<OptimizerKind>,
    /// Checkpoint file name inside the output directory.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct AblateArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluation dataset directory, labelled "eval".
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Additional labelled datasets, LABEL=DIR; repeatable.
    #[arg(long = "eval-set", value_name = "LABEL=DIR", value_parser = parse_labelled)]
    pub eval_sets: Vec<(String, PathBuf)>,
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    /// zero or dataset_mean
    #[arg(long, value_parser = parse_from_str::<BaselineKind>)]
    pub baseline: Option<BaselineKind>,
}

fn parse_labelled(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (label, dir) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LABEL=DIR, got {s:?}"))?;
    if label.is_empty()
        || !label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(format!("label {label:?} must be non-empty [A-Za-z0-9_-]"));
    }
    Ok((label.to_string(), PathBuf::from(dir)))
}

#[derive(Debug, Args, Default)]
pub struct RankArgs {
    /// Attribution report JSON from `ablate`.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Select the k lowest-scoring sensors instead.
    #[arg(long)]
    pub lowest: bool,
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Second checkpoint for a side-by-side comparison.
    #[arg(long, value_name = "PATH")]
    pub compare: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<Split>,
}

/// Architecture choices; unset sizes fall back to the desk-scale defaults
/// of the chosen variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_hidden: Option<usize>,
    pub accel_scale: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Birnn,
            hidden: None,
            layers: None,
            heads: None,
            ffn_hidden: None,
            accel_scale: None,
        }
    }
}

impl ModelConfig {
    pub fn to_spec(&self, n_sensors: usize, seed: u64) -> ModelSpec {
        let d = ModelSpec::desk(self.variant, n_sensors);
        ModelSpec {
            variant: self.variant,
            n_sensors,
            hidden: self.hidden.unwrap_or(d.hidden),
            layers: self.layers.unwrap_or(d.layers),
            heads: self.heads.unwrap_or(d.heads),
            ffn_hidden: self.ffn_hidden.unwrap_or(d.ffn_hidden),
            accel_scale: self.accel_scale.unwrap_or(d.accel_scale),
            seed,
        }
    }

    /// Replaces unset sizes by the values `to_spec` would use.
    pub fn resolved(&self) -> Self {
        let s = self.to_spec(1, 0);
        Self {
            variant: self.variant,
            hidden: Some(s.hidden),
            layers: Some(s.layers),
            heads: Some(s.heads),
            ffn_hidden: Some(s.ffn_hidden),
            accel_scale: Some(s.accel_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub split: Option<Split>,
    pub sensors: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_name: String,
    pub compare: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub baseline: BaselineKind,
    pub k: usize,
    pub lowest: bool,
    pub eval_sets: BTreeMap<String, PathBuf>,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: None,
            split: None,
            sensors: None,
            checkpoint: None,
            checkpoint_name: "checkpoint.json".into(),
            compare: None,
            report: None,
            baseline: BaselineKind::Zero,
            k: 6,
            lowest: false,
            eval_sets: BTreeMap::new(),
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        toml::from_str(&text).map_err(|source| PipelineError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Config file (or defaults) with every flag of `cli` applied on top.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut c = match &cli.config {
            Some(p) => Self::from_toml_file(p)?,
            None => Self::default(),
        };
        set(&mut c.seed, cli.seed);
        set(&mut c.out, cli.out.clone());
        match &cli.command {
            Command::Synth(a) => {
                let d = &mut c.dataset;
                set(&mut d.kind, a.kind);
                set(&mut d.n_sequences, a.n_sequences);
                set(&mut d.seq_len, a.seq_len);
                set(&mut d.fps, a.fps);
                set(&mut d.max_amplitude_deg, a.max_amplitude_deg);
                set(&mut d.max_freq_hz, a.max_freq_hz);
                if let Some(p) = &a.planted {
                    d.planted_joints = Some(SensorSet::new(p.clone())?);
                }
                d.seed = c.seed;
            }
            Command::Train(a) => {
                if a.data.is_some() {
                    c.data = a.data.clone();
                }
                if a.sensors.is_some() {
                    c.sensors = a.sensors.clone();
                }
                c.split = a.split.or(c.split).or(Some(Split::Train));
                let m = &mut c.model;
                set(&mut m.variant, a.variant);
                for (slot, v) in [
                    (&mut m.hidden, a.hidden),
                    (&mut m.layers, a.layers),
                    (&mut m.heads, a.heads),
                    (&mut m.ffn_hidden, a.ffn_hidden),
                ] {
                    if v.is_some() {
                        *slot = v;
                    }
                }
                if a.accel_scale.is_some() {
                    m.accel_scale = a.accel_scale;
                }
                c.model = c.model.resolved();
                let t = &mut c.train;
                set(&mut t.epochs, a.epochs);
                set(&mut t.learning_rate, a.lr);
                set(&mut t.batch_size, a.batch_size);
                set(&mut t.window_len, a.window_len);
                set(&mut t.optimizer, a.optimizer);
                t.seed = c.seed;
                set(&mut c.checkpoint_name, a.name.clone());
            }
            Command::Ablate(a) => {
                if a.checkpoint.is_some() {
                    c.checkpoint = a.checkpoint.clone();
                }
                if a.data.is_some() {
                    c.data = a.data.clone();
                }
                for (label, dir) in &a.eval_sets {
                    c.eval_sets.insert(label.clone(), dir.clone());
                }
                c.split = a.split.or(c.split).or(Some(Split::Eval));
                set(&mut c.baseline, a.baseline);
            }
            Command::Rank(a) => {
                if a.report.is_some() {
                    c.report = a.report.clone();
                }
                set(&mut c.k, a.k);
                c.lowest |= a.lowest;
            }
            Command::Eval(a) => {
                if a.checkpoint.is_some() {
                    c.checkpoint = a.checkpoint.clone();
                }
                if a.compare.is_some() {
                    c.compare = a.compare.clone();
                }
                if a.data.is_some() {
                    c.data = a.data.clone();
                }
                c.split = a.split.or(c.split).or(Some(Split::Eval));
            }
        }
        Ok(c)
    }

    pub fn require<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        v.as_deref().ok_or_else(|| {
            PipelineError::Config(format!("missing {what} (flag --{what} or config key)"))
        })
    }
}
