//! Mini-batch training with Adam, step-wise learning-rate decay and deep
//! supervision over every network output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sod_tensor::{Adam, Graph};

use super::augment::{augment, AugmentConfig};
use super::data::{load_dataset, stack, Sample};
use crate::checkpoint;
use crate::config::ModelConfig;
use crate::error::{Context, Error, Result};
use crate::network::Network;
use crate::objective::joint_loss;

fn default_batch_size() -> usize {
    8
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_lr_decay() -> f64 {
    0.1
}
fn default_lr_decay_every() -> usize {
    30
}
fn default_true() -> bool {
    true
}
fn default_epochs() -> usize {
    1
}

/// Training run description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub train_images: PathBuf,
    pub train_masks: PathBuf,
    /// receives `train_log.csv`, `final.ckpt` and `best.ckpt`
    pub output_dir: PathBuf,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// stop after this many optimizer steps, even mid-epoch
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// multiplier applied every `lr_decay_every` epochs
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    /// zero disables the decay
    #[serde(default = "default_lr_decay_every")]
    pub lr_decay_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// when false, shuffling and augmentation draw from OS entropy
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// optional checkpoint whose encoder weights initialize the backbone
    #[serde(default)]
    pub init_backbone: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, images: PathBuf, masks: PathBuf, output_dir: PathBuf) -> Self {
        Self {
            model,
            train_images: images,
            train_masks: masks,
            output_dir,
            epochs: default_epochs(),
            max_steps: None,
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            lr_decay: default_lr_decay(),
            lr_decay_every: default_lr_decay_every(),
            seed: 0,
            deterministic: true,
            augment: AugmentConfig::default(),
            init_backbone: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative paths are taken relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(cfg.rebased(base))
    }

    fn rebased(mut self, base: &Path) -> Self {
        for p in [&mut self.train_images, &mut self.train_masks, &mut self.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = self.init_backbone.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.max_steps == Some(0) {
            return Err(Error::Config("batch_size, epochs and max_steps must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config(format!("lr_decay {} must be positive", self.lr_decay)));
        }
        Ok(())
    }

    /// Learning rate of 1-based `epoch`: `lr · decay^⌊(epoch − 1) / every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            return self.learning_rate;
        }
        self.learning_rate * self.lr_decay.powi((epoch.saturating_sub(1) / self.lr_decay_every) as i32)
    }
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub loss: f64,
    pub bce: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub epochs: Vec<EpochLog>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Loads the configured dataset and trains on it.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let samples = load_dataset(&cfg.train_images, &cfg.train_masks, cfg.model.input_size)?;
    train_on(cfg, &samples)
}

fn log_csv(epochs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,steps,loss,bce,iou\n");
    for e in epochs {
        let _ = writeln!(s, "{},{:e},{},{},{},{}", e.epoch, e.lr, e.steps, e.loss, e.bce, e.iou);
    }
    s
}

/// Trains a freshly initialized network on in-memory samples.
pub fn train_on(cfg: &TrainConfig, samples: &[Sample]) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("no samples to train on".into()));
    }
    let (net, mut store) = Network::init::<f32>(&cfg.model, cfg.seed)?;
    if let Some(path) = &cfg.init_backbone {
        checkpoint::load(path)?.apply_backbone(&mut store, path)?;
    }
    let mut rng = if cfg.deterministic {
        ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a)
    } else {
        ChaCha8Rng::from_entropy()
    };
    std::fs::create_dir_all(&cfg.output_dir).map_err(Error::io(&cfg.output_dir))?;
    let final_checkpoint = cfg.output_dir.join("final.ckpt");
    let best_checkpoint = cfg.output_dir.join("best.ckpt");
    let log = cfg.output_dir.join("train_log.csv");

    let outputs = net.num_outputs();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::new();
    let mut steps = 0;
    let mut best = f64::INFINITY;
    'epochs: for epoch in 1..=cfg.epochs {
        let adam = Adam::with_lr(cfg.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut epoch_steps = 0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch_samples: Vec<Sample> = chunk.iter().map(|&i| augment(&samples[i], &cfg.augment, &mut rng)).collect();
            let images = stack(&batch_samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
            let masks = stack(&batch_samples.iter().map(|s| &s.mask).collect::<Vec<_>>())?;
            let grads = {
                let g = Graph::new(&store);
                let x = g.input(images);
                let out = net.forward(&g, x)?;
                let (loss, terms) = joint_loss(&g, &out.logits, &masks, cfg.model.use_iou_loss, outputs)?;
                if let Some(term) = terms.first_non_finite() {
                    return Err(Error::Numerical { epoch, batch: batch + 1, term });
                }
                sums.0 += terms.joint;
                sums.1 += terms.bce;
                sums.2 += terms.iou;
                g.backward(loss).ctx("train")?
            };
            store.zero_grad();
            store.accumulate(&grads);
            adam.step(&mut store);
            steps += 1;
            epoch_steps += 1;
        }
        if epoch_steps == 0 {
            break 'epochs;
        }
        let n = epoch_steps as f64;
        let entry = EpochLog { epoch, lr: adam.lr, steps: epoch_steps, loss: sums.0 / n, bce: sums.1 / n, iou: sums.2 / n };
        info!("epoch {epoch}: loss {:.5} over {epoch_steps} steps (lr {:e})", entry.loss, entry.lr);
        if entry.loss < best {
            best = entry.loss;
            checkpoint::save(&best_checkpoint, &cfg.model, &store)?;
        }
        epochs.push(entry);
        std::fs::write(&log, log_csv(&epochs)).map_err(Error::io(&log))?;
    }
    checkpoint::save(&final_checkpoint, &cfg.model, &store)?;
    if epochs.is_empty() {
        checkpoint::save(&best_checkpoint, &cfg.model, &store)?;
        std::fs::write(&log, log_csv(&epochs)).map_err(Error::io(&log))?;
    }
    Ok(TrainReport { steps, epochs, final_checkpoint, best_checkpoint, log })
}
