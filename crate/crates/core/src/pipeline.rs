//! Resumable training runs and the toy-scale reference setup.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::dataset::{self, Checkpoint};
use crate::error::{LarmError, Result};
use crate::model::{ModelConfig, Params};
use crate::train::{self, AdamW, NoPerceptual, SceneSet, TrainConfig, LOSS_LOG_HEADER};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_LOG_FILE: &str = "loss.csv";

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Identifies a (model, training) configuration pair.
pub fn config_key(model: &ModelConfig, cfg: &TrainConfig) -> String {
    let text = serde_json::to_string(&json!({ "model": model, "train": cfg })).expect("serializable");
    format!("{:016x}", fnv1a(text.as_bytes()))
}

/// Desk-scale finetuning setup: 32 scenes, 64x64, d=128, L=4.
pub fn toy_setup() -> (ModelConfig, TrainConfig) {
    let model = ModelConfig::desk();
    let cfg = TrainConfig { steps: 30_000, batch_size: 4, scenes: 32, seed: 2024, ..TrainConfig::default() };
    (model, cfg)
}

/// Where a training run keeps its checkpoint and loss log.
pub fn run_dir(root: &Path, model: &ModelConfig, cfg: &TrainConfig) -> PathBuf {
    root.join(format!("run-{}", config_key(model, cfg)))
}

/// Completed step count recorded in a checkpoint, if it belongs to this configuration.
fn checkpoint_step(ck: &Checkpoint, key: &str) -> Option<usize> {
    (ck.extra.get("config_key")?.as_str()? == key).then(|| ck.extra.get("step")?.as_u64().map(|s| s as usize))?
}

/// Trains to `cfg.steps`, resuming from `dir/checkpoint.ckpt` when it holds
/// a partial run of the same configuration. Returns the final parameters.
pub fn train_run(dir: &Path, model: ModelConfig, cfg: &TrainConfig, init: Option<Params<f32>>, progress: bool) -> Result<Params<f32>> {
    cfg.validate(&model)?;
    fs::create_dir_all(dir).map_err(|source| LarmError::DiskWrite { path: dir.display().to_string(), source })?;
    let key = config_key(&model, cfg);
    let ck_path = dir.join(CHECKPOINT_FILE);
    let log_path = dir.join(LOSS_LOG_FILE);
    let mut start = 0;
    let mut state = None;
    if ck_path.exists() {
        let ck = dataset::load_params(&ck_path, Some(&model))?;
        if let Some(step) = checkpoint_step(&ck, &key) {
            if step >= cfg.steps {
                return Ok(ck.params);
            }
            start = step;
            state = Some(ck);
        }
    }
    let (mut params, mut opt) = match state {
        Some(ck) => {
            let mut opt = AdamW::new(&ck.params);
            for (name, data) in ck.extra_tensors {
                match name.as_str() {
                    "adam.m" => opt.m = data,
                    "adam.v" => opt.v = data,
                    _ => {}
                }
            }
            opt.t = start as u64;
            (ck.params, opt)
        }
        None => {
            let params = match init {
                Some(p) if p.cfg == model => p,
                Some(p) => return Err(LarmError::ConfigMismatch(format!("init params {:?} vs {model:?}", p.cfg))),
                None => Params::<f32>::init(model, cfg.seed)?,
            };
            let opt = AdamW::new(&params);
            fs::write(&log_path, format!("{LOSS_LOG_HEADER}\n"))?;
            (params, opt)
        }
    };
    let data = SceneSet::generate(cfg.scenes, cfg.seed, &cfg.augment, &model)?;
    let mut log = OpenOptions::new().append(true).create(true).open(&log_path)?;
    let t0 = std::time::Instant::now();
    let save = |params: &Params<f32>, opt: &AdamW, step: usize| {
        dataset::save_params(
            &ck_path,
            params,
            &json!({ "config_key": key, "step": step, "train": cfg }),
            &[("adam.m", &opt.m), ("adam.v", &opt.v)],
        )
    };
    train::fit(&mut params, &mut opt, &data, cfg, start, &NoPerceptual, |step, loss, p, o| {
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            writeln!(log, "{}", train::loss_log_line(step, loss))?;
            if progress {
                log::info!("step {step} loss {:.4} ({:.1}s)", loss.total, t0.elapsed().as_secs_f64());
            }
        }
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
            save(p, o, done)?;
        }
        Ok(())
    })?;
    save(&params, &opt, cfg.steps)?;
    Ok(params)
}
