use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widths and depths of the five encoder stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub widths: [usize; 5],
    /// 3×3 convolutions per stage
    pub convs: [usize; 5],
}

impl BackboneConfig {
    /// VGG16 feature extractor without its last pool and classifier.
    pub fn paper() -> Self {
        Self { widths: [64, 128, 256, 512, 512], convs: [2, 2, 3, 3, 3] }
    }

    /// Narrow variant for desk-scale training.
    pub fn tiny() -> Self {
        Self { widths: [8, 16, 32, 64, 64], convs: [2, 2, 3, 3, 3] }
    }
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Tiny,
}

/// Architecture and module switches of one network instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// common width of the calibration, decoder and refinement features
    pub c_b: usize,
    pub use_bpc: bool,
    pub use_dffc: bool,
    pub use_afr: bool,
    pub use_iou_loss: bool,
    /// square input side, a multiple of 16
    pub input_size: usize,
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Tiny => Self::tiny(),
        }
    }

    pub fn paper() -> Self {
        Self {
            backbone: BackboneConfig::paper(),
            c_b: 64,
            use_bpc: true,
            use_dffc: true,
            use_afr: true,
            use_iou_loss: true,
            input_size: 256,
        }
    }

    pub fn tiny() -> Self {
        Self { backbone: BackboneConfig::tiny(), c_b: 8, input_size: 64, ..Self::paper() }
    }

    /// Same architecture with a different module selection.
    pub fn with_modules(&self, bpc: bool, dffc: bool, afr: bool, iou: bool) -> Self {
        Self { use_bpc: bpc, use_dffc: dffc, use_afr: afr, use_iou_loss: iou, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.widths.contains(&0) || self.backbone.convs.contains(&0) {
            return Err(Error::Config("backbone widths and conv counts must be positive".into()));
        }
        if self.c_b == 0 {
            return Err(Error::Config("c_b must be positive".into()));
        }
        if self.input_size < 16 || !self.input_size.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 16",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Short label of the enabled modules, e.g. `baseline+bpc+afr (bce+iou)`.
    pub fn label(&self) -> String {
        let mut s = String::from("baseline");
        for (on, name) in [(self.use_bpc, "+bpc"), (self.use_dffc, "+dffc"), (self.use_afr, "+afr")] {
            if on {
                s.push_str(name);
            }
        }
        s.push_str(if self.use_iou_loss { " (bce+iou)" } else { " (bce)" });
        s
    }
}

/// The six module/loss combinations of the ablation study, in table order.
pub fn ablation_rows(base: &ModelConfig) -> [ModelConfig; 6] {
    [
        base.with_modules(false, false, false, true),
        base.with_modules(true, false, false, true),
        base.with_modules(false, true, false, true),
        base.with_modules(false, false, true, true),
        base.with_modules(true, true, true, false),
        base.with_modules(true, true, true, true),
    ]
}
