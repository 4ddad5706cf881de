use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::events::{
    load_events, save_binary, synth_generate, to_frames, write_manifest, Dataset, EventFormat, ManifestEntry,
    SensorSize,
};
use crate::model::{count_params_flops, upsample_nearest, Checkpoint, ModelConfig, Preset, SpikMamba};
use crate::train::{evaluate, train_loop, RunOutput, TrainReport, Trainer};

/// Parameter count printed next to the full-size preset for comparison.
pub const PUBLISHED_PARAMS: &str = "0.18M";

const ECHO_NAME: &str = "config.toml";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::file(path, e)
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `force`.
fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = std::fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(Error::Usage(format!(
                "output directory {} is not empty (pass --force to reuse it)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join(ECHO_NAME);
    std::fs::write(&path, cfg.to_toml()?).map_err(io_err(&path))
}

fn csv_sensor(cfg: &RunConfig) -> SensorSize {
    let m = &cfg.model;
    SensorSize::new(
        cfg.data.csv_sensor_height.unwrap_or(m.height as u32),
        cfg.data.csv_sensor_width.unwrap_or(m.width as u32),
    )
}

fn load_dataset(manifest: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let m = &cfg.model;
    let data = Dataset::from_manifest(manifest, m.frames, m.height, m.width, csv_sensor(cfg))?;
    if data.is_empty() {
        return Err(Error::Usage(format!("empty dataset: {}", manifest.display())));
    }
    if let Some(max) = data.max_label().filter(|&l| l >= m.n_classes) {
        return Err(Error::Validation(format!(
            "{} has label {max} but the model has {} classes",
            manifest.display(),
            m.n_classes
        )));
    }
    Ok(data)
}

/// Writes `n_per_class` synthetic clips per class as binary event files plus
/// a JSON-lines manifest; returns the manifest path.
pub fn cmd_synth(cfg: &mut RunConfig, seed: Option<u64>, force: bool) -> Result<PathBuf> {
    let seed = cfg.resolve_seed(seed)?;
    cfg.validate()?;
    let section = cfg
        .data
        .synthetic
        .clone()
        .ok_or_else(|| Error::Config("data.synthetic is not set".into()))?;
    if section.n_per_class == 0 {
        return Err(Error::Usage("empty dataset: data.synthetic.n_per_class is 0".into()));
    }
    let dir = cfg.output_dir()?.to_path_buf();
    let streams = synth_generate(&section.spec(seed), section.n_per_class)?;
    prepare_output(&dir, force)?;
    let events = dir.join("events");
    std::fs::create_dir_all(&events).map_err(io_err(&events))?;
    let mut entries = Vec::with_capacity(streams.len());
    for (i, s) in streams.iter().enumerate() {
        let rel = format!("events/sample_{i:05}.evs");
        save_binary(s, &dir.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            label: s.label.expect("synthetic streams are labeled"),
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&entries, &manifest)?;
    echo_config(cfg, &dir)?;
    Ok(manifest)
}

/// Trains from `data.train` (evaluating on `data.eval` when present),
/// printing one summary line per epoch to `out`.
pub fn cmd_train(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    force: bool,
    out: &mut (dyn Write + Send),
) -> Result<TrainReport> {
    let seed = cfg.resolve_seed(seed)?;
    cfg.validate()?;
    let train_path = cfg
        .data
        .train
        .clone()
        .ok_or_else(|| Error::Config("data.train is not set".into()))?;
    let train = load_dataset(&train_path, cfg)?;
    let eval = cfg.data.eval.clone().map(|p| load_dataset(&p, cfg)).transpose()?;
    let dir = cfg.output_dir()?.to_path_buf();
    prepare_output(&dir, force)?;
    echo_config(cfg, &dir)?;
    let model = SpikMamba::<f32>::new(cfg.model.clone(), seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), seed)?;
    let mut write_err = None;
    let report = train_loop(&mut trainer, &train, eval.as_ref(), &RunOutput { dir }, |r| {
        let eval = r.eval_acc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        let line = format!(
            "epoch {:>4}  lr {:.3e}  loss {:.4}  train_acc {:.4}  eval_acc {eval}  {:.1}s",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.seconds
        );
        if let Err(e) = writeln!(out, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    Ok(report)
}

/// Top-1 accuracy of a checkpoint on a manifest. When `cfg` is given its
/// model section must describe the checkpoint's parameters exactly.
pub fn cmd_eval(checkpoint: &Path, data: &Path, cfg: Option<&RunConfig>, batch_size: usize) -> Result<f64> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let run = match cfg {
        Some(c) => c.clone(),
        None => RunConfig {
            model: ckpt.manifest.config.clone(),
            ..RunConfig::default()
        },
    };
    let mut model = SpikMamba::<f32>::new(run.model.clone(), 0)?;
    model.load_state(&ckpt)?;
    let data = load_dataset(data, &run)?;
    evaluate(&model, &data, batch_size)
}

pub fn cmd_count_text(cfg: &ModelConfig, preset: Option<Preset>) -> String {
    let r = count_params_flops(cfg);
    let mut s = format!(
        "parameters: {} ({:.2}M)\nforward GFLOPs per clip (multiply-accumulate pairs): {:.6}\n",
        r.params,
        r.params as f64 / 1e6,
        r.gflops()
    );
    if preset == Some(Preset::Paper) {
        s.push_str(&format!(
            "published parameter count: {PUBLISHED_PARAMS}\n\
             note: the published count does not follow from the published layer widths \
             (d_model 256, d_inner 2048, ffn 1024, 2 blocks); the computed count above is \
             reported as-is\n"
        ));
    }
    s
}

fn write_pgm(path: &Path, frame: &[f64], height: usize, width: usize) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(frame.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Writes one 8-bit graymap per frame of the final block's attention-branch
/// saliency, upsampled to the model input size.
pub fn cmd_export_attention(
    checkpoint: &Path,
    events: &Path,
    out_dir: &Path,
    csv: Option<SensorSize>,
) -> Result<Vec<PathBuf>> {
    let model: SpikMamba<f32> = Checkpoint::load(checkpoint)?.into_model()?;
    let cfg = model.config().clone();
    let sensor = csv.unwrap_or(SensorSize::new(cfg.height as u32, cfg.width as u32));
    let stream = load_events(events, EventFormat::from_path(events), sensor)?;
    let frames = to_frames(&stream, cfg.frames, cfg.height, cfg.width)?;
    let map = upsample_nearest(&model.saliency_map(&frames.tensor)?, cfg.patch);
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let per = cfg.height * cfg.width;
    map.data()
        .chunks(per)
        .enumerate()
        .map(|(t, frame)| {
            let path = out_dir.join(format!("frame_{t:03}.pgm"));
            write_pgm(&path, frame, cfg.height, cfg.width)?;
            Ok(path)
        })
        .collect()
}
