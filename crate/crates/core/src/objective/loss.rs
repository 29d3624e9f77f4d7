use sod_tensor::{Element, Graph, Tensor, Var};

use crate::error::{Context, Error, Result};

const MODULE: &str = "objective";

/// Loss values of one supervised output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputLoss {
    pub bce: f64,
    pub iou: f64,
    pub joint: f64,
}

/// Hybrid loss summed over every supervised output with unit weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub per_output: Vec<OutputLoss>,
    pub bce: f64,
    pub iou: f64,
    pub joint: f64,
}

impl LossTerms {
    /// Name of the first non-finite term, e.g. `output 3 bce`.
    pub fn first_non_finite(&self) -> Option<String> {
        for (k, o) in self.per_output.iter().enumerate() {
            if !o.bce.is_finite() {
                return Some(format!("output {k} bce"));
            }
            if !o.iou.is_finite() {
                return Some(format!("output {k} iou"));
            }
        }
        (!self.joint.is_finite()).then(|| "joint".to_string())
    }
}

/// `Σ_k BCE(σ(l_k), y) + IoU(σ(l_k), y)` over the logit maps `l_k`.
///
/// The IoU term is dropped when `use_iou` is false. Returns the scalar node
/// to differentiate and the evaluated terms.
pub fn joint_loss<T: Element>(
    g: &Graph<'_, T>,
    logits: &[Var],
    target: &Tensor<T>,
    use_iou: bool,
    expected_outputs: usize,
) -> Result<(Var, LossTerms)> {
    if logits.len() != expected_outputs {
        return Err(Error::Input(format!(
            "expected {expected_outputs} supervised outputs, got {}",
            logits.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut per_output = Vec::with_capacity(logits.len());
    for &l in logits {
        let p = g.sigmoid(l);
        let bce = g.bce(p, target.clone()).ctx(MODULE)?;
        let (term, iou) = if use_iou {
            let iou = g.iou(p, target.clone()).ctx(MODULE)?;
            (g.add(bce, iou).ctx(MODULE)?, g.scalar(iou).to_f64_lossy())
        } else {
            (bce, 0.0)
        };
        let bce = g.scalar(bce).to_f64_lossy();
        per_output.push(OutputLoss { bce, iou, joint: bce + iou });
        total = Some(match total {
            Some(t) => g.add(t, term).ctx(MODULE)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| Error::Input("no supervised outputs".into()))?;
    let terms = LossTerms {
        bce: per_output.iter().map(|o| o.bce).sum(),
        iou: per_output.iter().map(|o| o.iou).sum(),
        joint: g.scalar(total).to_f64_lossy(),
        per_output,
    };
    Ok((total, terms))
}
