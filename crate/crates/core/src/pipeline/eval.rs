//! Directory-level evaluation and report files.

use std::fmt::Write as _;
use std::path::Path;

use super::data::{gray_to_map, list_pngs, read_gray};
use crate::error::{Error, Result};
use crate::objective::{aggregate, evaluate_map, Aggregate, ImageRecord, THRESHOLDS};

/// Metrics of every prediction against the same-stem ground truth.
///
/// Predictions are 8-bit maps scaled by `1/255`; ground truth is binarized
/// at 0.5. Unmatched stems on either side and size mismatches are errors.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<ImageRecord>> {
    let preds = list_pngs(pred_dir)?;
    let gts = list_pngs(gt_dir)?;
    let mut problems: Vec<String> = Vec::new();
    problems.extend(preds.keys().filter(|k| !gts.contains_key(*k)).map(|k| format!("prediction {k} has no ground truth")));
    problems.extend(gts.keys().filter(|k| !preds.contains_key(*k)).map(|k| format!("ground truth {k} has no prediction")));
    if preds.is_empty() && problems.is_empty() {
        problems.push(format!("no PNG predictions in {}", pred_dir.display()));
    }
    if !problems.is_empty() {
        return Err(Error::Data(format!("unmatched files:\n  {}", problems.join("\n  "))));
    }
    let mut records = Vec::with_capacity(preds.len());
    for (stem, pred_path) in &preds {
        let pred = gray_to_map(&read_gray(pred_path).map_err(Error::Data)?);
        let gt = gray_to_map(&read_gray(&gts[stem]).map_err(Error::Data)?);
        if (pred.width, pred.height) != (gt.width, gt.height) {
            problems.push(format!(
                "{stem}: prediction is {}x{}, ground truth {}x{}",
                pred.width, pred.height, gt.width, gt.height
            ));
            continue;
        }
        records.push(evaluate_map(stem.clone(), &pred, &gt)?);
    }
    if !problems.is_empty() {
        return Err(Error::Data(format!("size mismatches:\n  {}", problems.join("\n  "))));
    }
    Ok(records)
}

pub fn per_image_csv(records: &[ImageRecord]) -> String {
    let mut s = String::from("stem,mae,s_measure,max_f\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.name, r.mae, r.s_measure, r.max_f);
    }
    s
}

/// 256 data rows: threshold `t/255`, mean precision, recall and F.
pub fn curves_csv(agg: &Aggregate) -> String {
    let mut s = String::from("threshold,precision,recall,f\n");
    for t in 0..THRESHOLDS {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            t as f64 / 255.0,
            agg.mean_precision[t],
            agg.mean_recall[t],
            agg.mean_f[t]
        );
    }
    s
}

/// Evaluates and writes `per_image.csv`, `aggregate.json` and `curves.csv`
/// into `out_dir`.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path, out_dir: &Path) -> Result<Aggregate> {
    let records = evaluate_dirs(pred_dir, gt_dir)?;
    let agg = aggregate(&records)?;
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let files = [
        ("per_image.csv", per_image_csv(&records)),
        ("aggregate.json", serde_json::to_string_pretty(&agg).expect("aggregate serializes")),
        ("curves.csv", curves_csv(&agg)),
    ];
    for (name, text) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(Error::io(&path))?;
    }
    Ok(agg)
}
