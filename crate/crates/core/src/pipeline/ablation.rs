//! Trains and evaluates every module/loss combination of the ablation
//! table on one synthetic benchmark.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::augment::AugmentConfig;
use super::eval::evaluate;
use super::infer::infer;
use super::synth::{generate, SyntheticSpec};
use super::train::{train, TrainConfig};
use crate::config::{ablation_rows, ModelConfig};
use crate::error::{Error, Result};
use crate::network::count_params;
use crate::objective::Aggregate;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub base: ModelConfig,
    /// total synthetic images; three quarters train, one quarter test
    pub images: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub work_dir: PathBuf,
}

impl AblationConfig {
    pub fn desk_scale(work_dir: PathBuf) -> Self {
        Self {
            base: ModelConfig::tiny(),
            images: 64,
            steps: 60,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 7,
            work_dir,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: ModelConfig,
    pub params: usize,
    pub metrics: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Whether the full model's test MAE does not exceed the baseline's.
    /// Reported as an expectation; small synthetic runs may not separate
    /// the configurations.
    pub fn full_beats_baseline(&self) -> Option<bool> {
        let first = self.rows.first()?;
        let last = self.rows.last()?;
        Some(last.metrics.mae <= first.metrics.mae)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("| row | configuration | params | MAE | S-measure | max F |\n|---|---|---|---|---|---|\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.4} | {:.4} | {:.4} |",
                i + 1,
                r.config.label(),
                r.params,
                r.metrics.mae,
                r.metrics.s_measure,
                r.metrics.max_f
            );
        }
        s
    }
}

fn dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(Error::io(p))
}

pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.images < 4 {
        return Err(Error::Config("the ablation benchmark needs at least 4 images".into()));
    }
    let size = cfg.base.input_size;
    let test_count = cfg.images / 4;
    let train_spec = SyntheticSpec::new(cfg.images - test_count, size, cfg.seed);
    let test_spec = SyntheticSpec::new(test_count, size, cfg.seed.wrapping_add(1));
    let (train_images, train_masks) = generate(&train_spec, &cfg.work_dir.join("train"))?;
    let (test_images, test_masks) = generate(&test_spec, &cfg.work_dir.join("test"))?;

    let mut rows = Vec::new();
    for (i, model) in ablation_rows(&cfg.base).into_iter().enumerate() {
        let run = cfg.work_dir.join(format!("row{}", i + 1));
        dir(&run)?;
        let mut tc = TrainConfig::new(model.clone(), train_images.clone(), train_masks.clone(), run.clone());
        tc.epochs = usize::MAX;
        tc.max_steps = Some(cfg.steps);
        tc.batch_size = cfg.batch_size;
        tc.learning_rate = cfg.learning_rate;
        tc.lr_decay_every = 0;
        tc.seed = cfg.seed;
        tc.augment = AugmentConfig::none();
        let report = train(&tc)?;
        let preds = run.join("pred");
        infer(&report.final_checkpoint, &test_images, &preds)?;
        let metrics = evaluate(&preds, &test_masks, &run.join("eval"))?;
        log::info!("ablation row {} ({}): mae {:.4}", i + 1, model.label(), metrics.mae);
        rows.push(AblationRow { params: count_params(&model)?, config: model, metrics });
    }
    let report = AblationReport { rows };
    let table = cfg.work_dir.join("ablation.md");
    std::fs::write(&table, report.table()).map_err(Error::io(&table))?;
    Ok(report)
}
