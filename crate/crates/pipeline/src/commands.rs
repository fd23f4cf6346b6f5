use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use imupose_core::attribution::{
    lowest_sensors, per_dataset_ablation, rank_sensors, AttributionReport,
};
use imupose_core::evalharness::{
    evaluate, generate_samples, windows_from_samples, MetricsReport, Sample,
};
use imupose_core::formats::{sensor_set_from_json, sensor_set_to_json};
use imupose_core::imusynth::SensorSet;
use imupose_core::kinematics::{Skeleton, JOINT_NAMES};
use imupose_core::neuralseq::{train, Checkpoint};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{load_dataset, read_text, sha256_hex, write_atomic, write_sample, Split};
use crate::config::{Command, RunConfig};
use crate::error::{PipelineError, Result};

/// What a command read and wrote, for the manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

fn json_bytes<S: Serialize>(v: &S) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(imupose_core::Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write_json<S: Serialize>(path: &Path, v: &S, out: &mut Outcome) -> Result<()> {
    write_atomic(path, &json_bytes(v)?)?;
    out.outputs.push(path.to_path_buf());
    Ok(())
}

fn load_checkpoint(path: &Path, inputs: &mut BTreeMap<String, String>) -> Result<Checkpoint<f64>> {
    let text = read_text(path)?;
    let ck = Checkpoint::from_json(&text).map_err(|source| PipelineError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    inputs.insert(path.display().to_string(), sha256_hex(text.as_bytes()));
    Ok(ck)
}

fn dataset_id(dir: &Path, split: Split) -> String {
    format!("{}#{}", dir.display(), split.as_str())
}

pub fn execute(command: &Command, cfg: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Synth(_) => synth(cfg),
        Command::Train(_) => train_cmd(cfg),
        Command::Ablate(_) => ablate(cfg),
        Command::Rank(_) => rank(cfg),
        Command::Eval(_) => eval(cfg),
    }
}

fn synth(cfg: &RunConfig) -> Result<Outcome> {
    cfg.dataset.validate()?;
    let samples = generate_samples(&cfg.dataset, &Skeleton::smpl())?;
    let mut out = Outcome::default();
    for (i, s) in samples.iter().enumerate() {
        out.outputs.extend(write_sample(&cfg.out, i, s)?);
    }
    let frames = samples.first().map_or(0, |s| s.pose.len());
    println!(
        "synth: {} pose files, {} IMU files, {frames} frames each -> {}",
        samples.len(),
        samples.len(),
        cfg.out.display()
    );
    out.summary = json!({ "sequences": samples.len(), "frames": frames });
    Ok(out)
}

fn train_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let data = RunConfig::require(&cfg.data, "data")?;
    let split = cfg.split.unwrap_or(Split::Train);
    let sensors = match &cfg.sensors {
        Some(p) => {
            let text = read_text(p)?;
            out.inputs
                .insert(p.display().to_string(), sha256_hex(text.as_bytes()));
            sensor_set_from_json(&text).map_err(|source| PipelineError::Parse {
                path: p.clone(),
                source,
            })?
        }
        None => SensorSet::all(),
    };
    let samples = load_dataset(data, split, &mut out.inputs)?;
    let samples: Vec<Sample<f64>> = samples
        .iter()
        .map(|s| s.select(&sensors))
        .collect::<Result<_, _>>()?;
    let windows = windows_from_samples(&samples, cfg.train.window_len)?;
    let spec = cfg.model.to_spec(sensors.len(), cfg.seed);
    let mut ck = train(&spec, &cfg.train, &windows)?;
    ck.sensors = Some(sensors.clone());

    let path = cfg.out.join(&cfg.checkpoint_name);
    write_atomic(&path, ck.to_json()?.as_bytes())?;
    out.outputs.push(path.clone());
    let loss = ck.final_train_loss.unwrap_or(f64::NAN);
    println!(
        "train: {:?} on {} sensors, {} windows, {} steps, final train MSE {loss:.6e} -> {}",
        spec.variant,
        sensors.len(),
        windows.len(),
        ck.trained_steps,
        path.display()
    );
    out.summary = json!({
        "final_train_loss": ck.final_train_loss,
        "trained_epochs": ck.trained_epochs,
        "trained_steps": ck.trained_steps,
        "sensors": sensors.joints(),
    });
    Ok(out)
}

fn report_csv(r: &AttributionReport) -> String {
    let mut order: Vec<usize> = (0..r.scores.len()).collect();
    order.sort_by(|&a, &b| r.scores[b].total_cmp(&r.scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; r.scores.len()];
    for (pos, &j) in order.iter().enumerate() {
        rank[j] = pos + 1;
    }
    let mut s = String::from("joint,name,score,rank\n");
    for (j, score) in r.scores.iter().enumerate() {
        s.push_str(&format!("{j},{},{score:e},{}\n", JOINT_NAMES[j], rank[j]));
    }
    s
}

fn ablate(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let ck_path = RunConfig::require(&cfg.checkpoint, "checkpoint")?;
    let ck = load_checkpoint(ck_path, &mut out.inputs)?;
    let sensors = ck.sensors.clone().unwrap_or_else(SensorSet::all);
    if sensors != SensorSet::all() {
        return Err(PipelineError::Config(format!(
            "ablation needs a checkpoint trained on all 24 sensors in index order, got {:?}",
            sensors.joints()
        )));
    }
    let split = cfg.split.unwrap_or(Split::Eval);
    let mut sets: BTreeMap<String, PathBuf> = cfg.eval_sets.clone();
    if let Some(d) = &cfg.data {
        sets.insert("eval".into(), d.clone());
    }
    if sets.is_empty() {
        return Err(PipelineError::Config(
            "missing data (flag --data, --eval-set or config key)".into(),
        ));
    }
    let mut windows = BTreeMap::new();
    for (label, dir) in &sets {
        let samples = load_dataset(dir, split, &mut out.inputs)?;
        windows.insert(
            label.clone(),
            windows_from_samples(&samples, ck.window_len)?,
        );
    }
    let model_id = ck_path.display().to_string();
    let reports = per_dataset_ablation(&ck, &windows, &sensors, cfg.baseline, &model_id)?;
    let mut summary = serde_json::Map::new();
    for (label, mut report) in reports {
        report.dataset_id = dataset_id(&sets[&label], split);
        let json_path = cfg.out.join(format!("ablation_{label}.json"));
        let csv_path = cfg.out.join(format!("ablation_{label}.csv"));
        write_json(&json_path, &report, &mut out)?;
        write_atomic(&csv_path, report_csv(&report).as_bytes())?;
        out.outputs.push(csv_path);
        let top = rank_sensors(&report, 6)?;
        let names: Vec<&str> = top.joints().iter().map(|&j| JOINT_NAMES[j]).collect();
        println!(
            "ablate[{label}]: base loss {:.6e}, top 6 {names:?} -> {}",
            report.base_loss,
            json_path.display()
        );
        summary.insert(
            label,
            json!({ "base_loss": report.base_loss, "top6": top.joints() }),
        );
    }
    out.summary = summary.into();
    Ok(out)
}

fn rank(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let path = RunConfig::require(&cfg.report, "report")?;
    let text = read_text(path)?;
    out.inputs
        .insert(path.display().to_string(), sha256_hex(text.as_bytes()));
    let report: AttributionReport =
        serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
    let set = if cfg.lowest {
        lowest_sensors(&report, cfg.k)?
    } else {
        rank_sensors(&report, cfg.k)?
    };
    let dest = cfg.out.join("sensors.json");
    let mut text = sensor_set_to_json(&set)?;
    text.push('\n');
    write_atomic(&dest, text.as_bytes())?;
    out.outputs.push(dest.clone());
    let names: Vec<&str> = set.joints().iter().map(|&j| JOINT_NAMES[j]).collect();
    println!("rank: {names:?} -> {}", dest.display());
    out.summary = json!({ "sensors": set.joints() });
    Ok(out)
}

fn eval_one(
    ck_path: &Path,
    data: &Path,
    split: Split,
    inputs: &mut BTreeMap<String, String>,
) -> Result<MetricsReport> {
    let ck = load_checkpoint(ck_path, inputs)?;
    let samples = load_dataset(data, split, inputs)?;
    // Data lacking the model's sensors is passed through unchanged so that
    // evaluation reports the width mismatch.
    let samples: Vec<Sample<f64>> = match &ck.sensors {
        Some(s) => samples
            .iter()
            .map(|x| x.select(s).unwrap_or_else(|_| x.clone()))
            .collect(),
        None => samples,
    };
    Ok(evaluate(
        &ck,
        &samples,
        &Skeleton::smpl(),
        &ck_path.display().to_string(),
        &dataset_id(data, split),
    )?)
}

fn print_metrics(tag: &str, m: &MetricsReport) {
    println!(
        "eval[{tag}]: MSE {:.6e}, pos_err {:.4}, loc_rot_err {:.4} deg, global_rot_err {:.4} deg",
        m.crit_score, m.pos_err, m.loc_rot_err, m.global_rot_err
    );
}

fn eval(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let ck_path = RunConfig::require(&cfg.checkpoint, "checkpoint")?;
    let data = RunConfig::require(&cfg.data, "data")?;
    let split = cfg.split.unwrap_or(Split::Eval);
    let a = eval_one(ck_path, data, split, &mut out.inputs)?;
    match &cfg.compare {
        None => {
            print_metrics("a", &a);
            write_json(&cfg.out.join("metrics.json"), &a, &mut out)?;
            out.summary = serde_json::to_value(&a).map_err(imupose_core::Error::from)?;
        }
        Some(other) => {
            let b = eval_one(other, data, split, &mut out.inputs)?;
            print_metrics("a", &a);
            print_metrics("b", &b);
            let delta = json!({
                "crit_score": b.crit_score - a.crit_score,
                "pos_err": b.pos_err - a.pos_err,
                "loc_rot_err": b.loc_rot_err - a.loc_rot_err,
                "global_rot_err": b.global_rot_err - a.global_rot_err,
            });
            println!("eval[b - a]: {delta}");
            write_json(&cfg.out.join("metrics_a.json"), &a, &mut out)?;
            write_json(&cfg.out.join("metrics_b.json"), &b, &mut out)?;
            let cmp = json!({ "a": a, "b": b, "delta_b_minus_a": delta });
            write_json(&cfg.out.join("comparison.json"), &cmp, &mut out)?;
            out.summary = cmp;
        }
    }
    Ok(out)
}
