//! Saliency metrics on 64-bit maps: mean absolute error, the structure
//! measure and the F-measure over 256 binarization thresholds.
//!
//! The structure measure follows the widely used public reference
//! implementation of Fan et al.'s S-measure (as in PySODMetrics):
//!
//! - `α = 0.5`, `ε = 2.220446049250313e-16`;
//! - all-zero ground truth scores `1 − mean(S)`, all-one scores `mean(S)`;
//! - object score `u·O(S | G=1) + (1 − u)·O(1 − S | G=0)` with `u` the
//!   foreground ratio and `O = 2x̄ / (x̄² + 1 + σ + ε)`, `σ` the sample
//!   standard deviation (`ddof = 1`);
//! - region score splits both maps at the ground-truth centroid (rounded
//!   half to even, plus one) into four blocks weighted by area, each scored
//!   with `α' / (β' + ε)` where `α' = 4 x̄ ȳ σ_xy` and
//!   `β' = (x̄² + ȳ²)(σ_x + σ_y)`, `1` when both vanish, `0` when only `α'`
//!   does;
//! - the combination is clamped to `[0, 1]`.
//!
//! One guard the reference leaves undefined: an empty block (zero weight,
//! when the centroid falls on the last row or column) is skipped instead of
//! contributing `0 · NaN`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of binarization thresholds, `t = 0…255`, pixel positive iff
/// `S > t / 255`.
pub const THRESHOLDS: usize = 256;
/// `β²` of the F-measure.
pub const BETA_SQ: f64 = 0.3;
const ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

/// Row-major single-channel map.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Input(format!(
                "map data has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Ground-truth convention: a pixel is foreground iff its value exceeds 0.5.
    pub fn binarized(&self) -> Self {
        Self { data: self.data.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect(), ..*self }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

fn same_size(op: &str, s: &GrayMap, g: &GrayMap) -> Result<()> {
    if s.width != g.width || s.height != g.height || s.data.is_empty() {
        return Err(Error::Input(format!(
            "{op}: prediction is {}x{}, ground truth is {}x{}",
            s.width, s.height, g.width, g.height
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(s: &GrayMap, g: &GrayMap) -> Result<f64> {
    same_size("mae", s, g)?;
    Ok(s.data.iter().zip(&g.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / s.data.len() as f64)
}

/// Precision, recall and F-measure at each of the 256 thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
    pub max_f: f64,
}

/// `(1 + β²) P R / (β² P + R)`, zero when the denominator is zero.
pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = BETA_SQ * precision + recall;
    if den > 0.0 {
        (1.0 + BETA_SQ) * precision * recall / den
    } else {
        0.0
    }
}

fn threshold(t: usize) -> f64 {
    t as f64 / 255.0
}

/// Number of thresholds a value clears: `|{t : v > t/255}|`.
fn levels_cleared(v: f64) -> usize {
    // the predicate is monotone in t, so the count is a partition point
    let (mut lo, mut hi) = (0, THRESHOLDS);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if v > threshold(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// F-measure curve of `s` against `g` binarized at 0.5.
pub fn f_measure_curve(s: &GrayMap, g: &GrayMap) -> Result<FCurve> {
    same_size("f_measure", s, g)?;
    // hist[k]: pixels positive for exactly the thresholds t < k
    let mut fg_hist = [0usize; THRESHOLDS + 1];
    let mut bg_hist = [0usize; THRESHOLDS + 1];
    let mut positives = 0;
    for (&sv, &gv) in s.data.iter().zip(&g.data) {
        let k = levels_cleared(sv);
        if gv > 0.5 {
            fg_hist[k] += 1;
            positives += 1;
        } else {
            bg_hist[k] += 1;
        }
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = FCurve {
        precision: vec![0.0; THRESHOLDS],
        recall: vec![0.0; THRESHOLDS],
        f: vec![0.0; THRESHOLDS],
        max_f: 0.0,
    };
    // walk thresholds from the top: at t, pixels with k > t are positive
    for t in (0..THRESHOLDS).rev() {
        tp += fg_hist[t + 1];
        fp += bg_hist[t + 1];
        let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let r = if positives > 0 { tp as f64 / positives as f64 } else { 0.0 };
        curve.precision[t] = p;
        curve.recall[t] = r;
        curve.f[t] = f_beta(p, r);
    }
    curve.max_f = curve.f.iter().copied().fold(0.0, f64::max);
    Ok(curve)
}

/// Object and region terms of the structure measure; `None` for a
/// degenerate (all-zero or all-one) ground truth.
pub fn s_measure_parts(s: &GrayMap, g: &GrayMap) -> Result<Option<(f64, f64)>> {
    same_size("s_measure", s, g)?;
    let g = g.binarized();
    let u = g.mean();
    if u == 0.0 || u == 1.0 {
        return Ok(None);
    }
    Ok(Some((object_score(s, &g, u), region_score(s, &g))))
}

/// Structure measure `α·S_o + (1 − α)·S_r`, clamped to `[0, 1]`.
pub fn s_measure(s: &GrayMap, g: &GrayMap) -> Result<f64> {
    let score = match s_measure_parts(s, g)? {
        Some((so, sr)) => ALPHA * so + (1.0 - ALPHA) * sr,
        None if g.binarized().mean() == 0.0 => 1.0 - s.mean(),
        None => s.mean(),
    };
    Ok(score.clamp(0.0, 1.0))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn object_similarity(values: &[f64]) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn object_score(s: &GrayMap, g: &GrayMap, u: f64) -> f64 {
    let fg: Vec<f64> = s.data.iter().zip(&g.data).filter(|(_, &gv)| gv == 1.0).map(|(&sv, _)| sv).collect();
    let bg: Vec<f64> = s.data.iter().zip(&g.data).filter(|(_, &gv)| gv == 0.0).map(|(&sv, _)| 1.0 - sv).collect();
    u * object_similarity(&fg) + (1.0 - u) * object_similarity(&bg)
}

/// Foreground centroid, rounded half to even, plus one: `(x, y)`.
fn centroid(g: &GrayMap) -> (usize, usize) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..g.height {
        for x in 0..g.width {
            if g.at(x, y) != 0.0 {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
    }
    if n == 0.0 {
        let half = |v: usize| (v as f64 / 2.0).round_ties_even() as usize + 1;
        return (half(g.width), half(g.height));
    }
    ((sx / n).round_ties_even() as usize + 1, (sy / n).round_ties_even() as usize + 1)
}

fn block_ssim(s: &GrayMap, g: &GrayMap, xs: std::ops::Range<usize>, ys: std::ops::Range<usize>) -> f64 {
    let n = (xs.len() * ys.len()) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for y in ys.clone() {
        for x in xs.clone() {
            mx += s.at(x, y);
            my += g.at(x, y);
        }
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for y in ys {
        for x in xs.clone() {
            let (dx, dy) = (s.at(x, y) - mx, g.at(x, y) - my);
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    // the reference divides by N − 1 + ε, which also covers single pixels
    let den = n - 1.0 + EPS;
    let (vx, vy, cxy) = (vx / den, vy / den, cxy / den);
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(s: &GrayMap, g: &GrayMap) -> f64 {
    let (w, h) = (g.width, g.height);
    let (cx, cy) = centroid(g);
    let (cx, cy) = (cx.min(w), cy.min(h));
    let area = (w * h) as f64;
    let w_lt = (cx * cy) as f64 / area;
    let w_rt = (cy * (w - cx)) as f64 / area;
    let w_lb = ((h - cy) * cx) as f64 / area;
    let w_rb = 1.0 - w_lt - w_rt - w_lb;
    let blocks = [
        (w_lt, 0..cx, 0..cy),
        (w_rt, cx..w, 0..cy),
        (w_lb, 0..cx, cy..h),
        (w_rb, cx..w, cy..h),
    ];
    blocks
        .into_iter()
        .filter(|(_, xs, ys)| !xs.is_empty() && !ys.is_empty())
        .map(|(weight, xs, ys)| weight * block_ssim(s, g, xs, ys))
        .sum()
}

/// Metrics of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub name: String,
    pub mae: f64,
    pub s_measure: f64,
    pub max_f: f64,
    pub curve: FCurve,
}

/// All metrics of `pred` against `gt` (binarized at 0.5).
pub fn evaluate_map(name: impl Into<String>, pred: &GrayMap, gt: &GrayMap) -> Result<ImageRecord> {
    let gt = gt.binarized();
    let curve = f_measure_curve(pred, &gt)?;
    Ok(ImageRecord {
        name: name.into(),
        mae: mae(pred, &gt)?,
        s_measure: s_measure(pred, &gt)?,
        max_f: curve.max_f,
        curve,
    })
}

/// Five-number summary for box plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// Linear interpolation between order statistics at position `p·(n − 1)`.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self { min: v[0], q1: at(0.25), median: at(0.5), q3: at(0.75), max: v[v.len() - 1] })
    }
}

/// Dataset-level summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mae: f64,
    pub s_measure: f64,
    pub max_f: f64,
    /// maximum of the mean F curve
    pub curve_max_f: f64,
    pub mae_quartiles: Quartiles,
    pub mean_precision: Vec<f64>,
    pub mean_recall: Vec<f64>,
    pub mean_f: Vec<f64>,
}

/// Means over `records` (sorted by name first, so the result does not
/// depend on input order) plus the MAE quartiles.
pub fn aggregate(records: &[ImageRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::Input("cannot aggregate an empty set of records".into()));
    }
    let mut sorted: Vec<&ImageRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let n = sorted.len() as f64;
    let mean = |f: &dyn Fn(&ImageRecord) -> f64| sorted.iter().map(|r| f(r)).sum::<f64>() / n;
    let curve_mean = |f: &dyn Fn(&FCurve) -> &Vec<f64>| -> Vec<f64> {
        (0..THRESHOLDS).map(|t| sorted.iter().map(|r| f(&r.curve)[t]).sum::<f64>() / n).collect()
    };
    let mean_f = curve_mean(&|c| &c.f);
    let maes: Vec<f64> = sorted.iter().map(|r| r.mae).collect();
    Ok(Aggregate {
        count: sorted.len(),
        mae: mean(&|r| r.mae),
        s_measure: mean(&|r| r.s_measure),
        max_f: mean(&|r| r.max_f),
        curve_max_f: mean_f.iter().copied().fold(0.0, f64::max),
        mae_quartiles: Quartiles::of(&maes).expect("non-empty"),
        mean_precision: curve_mean(&|c| &c.precision),
        mean_recall: curve_mean(&|c| &c.recall),
        mean_f,
    })
}
