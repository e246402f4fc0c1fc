//! The work behind each CLI subcommand. Everything here is deterministic
//! given the config, so reruns produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{train, ModelParams, TrainOutput};
use crate::photometry::LightCaptcha;
use crate::pipeline::{evaluate, run_ablation, verify_video, AblationCell, Evaluation, Verdict};

use super::config::Config;
use super::dataset::Dataset;
use super::manifest::{DatasetManifest, Split};
use super::video_file::load_video;

pub fn save_model(path: &Path, model: &ModelParams) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    model.save(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    ModelParams::load(std::io::BufReader::new(File::open(path)?))
}

/// One JSON object per line.
pub fn write_json_lines<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, &row).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn gen_data(config: &Config, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let data = Dataset::generate(&config.dataset)?;
    data.save(dir)?;
    Ok(data.manifest)
}

fn load_dataset(config: &Config, dir: &Path) -> Result<Dataset> {
    let data = Dataset::load(dir)?;
    if data.manifest.size != config.train.arch.input_size {
        return Err(Error::Config(format!(
            "dataset frames are {0}x{0} but the network takes {1}x{1}",
            data.manifest.size, config.train.arch.input_size
        )));
    }
    Ok(data)
}

/// Trains on the train split, logging the validation EER per epoch, and
/// writes the checkpoint and a JSON-lines epoch log.
pub fn train_model(
    config: &Config,
    data_dir: &Path,
    checkpoint: &Path,
    log: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    let data = load_dataset(config, data_dir)?;
    let train_set = data.training_videos(Split::Train, &config.train.arch)?;
    let validation = data.labeled(Split::Val);
    let out = train(&config.train, &train_set, &validation)?;
    save_model(checkpoint, &out.params)?;
    if let Some(path) = log {
        write_json_lines(path, &out.log)?;
    }
    Ok(out)
}

/// Chooses `τ_cls` on the validation split and reports on `split`. Writes
/// one outcome per video, then the summary, when `outcomes` is given.
pub fn eval_model(
    config: &Config,
    checkpoint: &Path,
    data_dir: &Path,
    split: Split,
    outcomes: Option<&Path>,
) -> Result<Evaluation> {
    config.validate()?;
    let model = load_model(checkpoint)?;
    let data = load_dataset(config, data_dir)?;
    let ids: Vec<String> = data
        .indices(split)
        .into_iter()
        .map(|i| data.manifest.records[i].path.clone())
        .collect();
    if ids.is_empty() {
        return Err(Error::validation(format!(
            "split {} is empty",
            split.name()
        )));
    }
    let validation = data.labeled(Split::Val);
    if validation.is_empty() {
        return Err(Error::validation("validation split is empty"));
    }
    let e = evaluate(
        &model,
        &validation,
        &data.labeled(split),
        &ids,
        config.eval.tau_reg,
        config.eval.roc_resolution,
    )?;
    if let Some(path) = outcomes {
        let mut rows: Vec<serde_json::Value> = e
            .videos
            .iter()
            .map(|v| serde_json::to_value(v).map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<_>>()?;
        rows.push(serde_json::json!({ "summary": e.summary }));
        write_json_lines(path, rows)?;
    }
    Ok(e)
}

/// Verifies one stored video against the challenge recorded in it.
pub fn verify_file(checkpoint: &Path, video: &Path, tau_cls: f64, tau_reg: f64) -> Result<Verdict> {
    if tau_cls.is_nan() || tau_reg.is_nan() {
        return Err(Error::Config("thresholds must not be NaN".into()));
    }
    let model = load_model(checkpoint)?;
    let v = load_video(video)?;
    let issued = LightCaptcha::new(v.challenge.clone(), 0)?;
    verify_video(&v.frames, &issued, &model, tau_cls, tau_reg)
}

/// Runs the loss-weight grid with the training settings of `config`.
pub fn ablate(
    config: &Config,
    data_dir: &Path,
    report: Option<&Path>,
) -> Result<Vec<AblationCell>> {
    config.validate()?;
    let data = load_dataset(config, data_dir)?;
    let train_set = data.training_videos(Split::Train, &config.train.arch)?;
    let validation = data.labeled(Split::Val);
    let a = &config.ablate;
    let cells = run_ablation(
        &config.train,
        &train_set,
        &validation,
        &a.grid_dep,
        &a.grid_mat,
        a.runs,
    )?;
    if let Some(path) = report {
        write_json_lines(path, &cells)?;
    }
    Ok(cells)
}
