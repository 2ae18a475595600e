//! Instance matching F1 and the running-time tolerance.
//!
//! A predicted instance is a true positive when its best-overlapping ground
//! truth instance has IoU strictly greater than 0.5. Two instances that each
//! cover more than half of their union cannot both pair with a third, so the
//! matching is one-to-one without an explicit assignment step.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor_io::InstanceMap;

/// IoU a pair must exceed to count as a match.
pub const MATCH_IOU: f64 = 0.5;

/// Images at or below this many pixels get the flat tolerance.
pub const TOLERANCE_PIXEL_LIMIT: u64 = 1_000_000;
pub const FLAT_TOLERANCE_SECS: f64 = 10.0;
pub const SECONDS_PER_PIXEL: f64 = 1e-5;

/// Sparse `K_pred x K_gt` IoU matrix; absent entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct IouMatrix {
    pub pred_count: usize,
    pub gt_count: usize,
    entries: HashMap<(u32, u32), f64>,
}

impl IouMatrix {
    /// IoU of prediction `i` and ground truth `j` (both 1-based ids).
    pub fn get(&self, i: u32, j: u32) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    /// Non-zero entries as `((pred, gt), iou)`.
    pub fn nonzero(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Row-major dense copy, row `i - 1` for prediction `i`.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.gt_count]; self.pred_count];
        for (&(i, j), &v) in &self.entries {
            dense[i as usize - 1][j as usize - 1] = v;
        }
        dense
    }

    /// Best IoU per prediction, index `i - 1` for prediction `i`.
    pub fn best_per_pred(&self) -> Vec<f64> {
        let mut best = vec![0.0f64; self.pred_count];
        for (&(i, _), &v) in &self.entries {
            let b = &mut best[i as usize - 1];
            *b = b.max(v);
        }
        best
    }
}

/// All pairwise IoUs from a single pass over the pixels.
pub fn instance_iou_matrix(pred: &InstanceMap, gt: &InstanceMap) -> Result<IouMatrix> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let pred_area = pred.areas();
    let gt_area = gt.areas();
    let mut overlap: HashMap<(u32, u32), u64> = HashMap::new();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p > 0 && g > 0 {
            *overlap.entry((p, g)).or_default() += 1;
        }
    }
    let entries = overlap
        .into_iter()
        .map(|((p, g), inter)| {
            let union = pred_area[p as usize - 1] as u64 + gt_area[g as usize - 1] as u64 - inter;
            ((p, g), inter as f64 / union as f64)
        })
        .collect();
    Ok(IouMatrix {
        pred_count: pred.num_instances(),
        gt_count: gt.num_instances(),
        entries,
    })
}

/// Per-image matching counts and scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchReport {
    /// Derives the scores from counts. Ratios with a zero denominator are 0,
    /// so two empty maps score F1 = 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

pub fn match_f1(pred: &InstanceMap, gt: &InstanceMap) -> Result<MatchReport> {
    let iou = instance_iou_matrix(pred, gt)?;
    let tp = iou.best_per_pred().iter().filter(|&&v| v > MATCH_IOU).count();
    Ok(MatchReport::from_counts(
        tp,
        iou.pred_count - tp,
        iou.gt_count - tp,
    ))
}

/// Unweighted mean of per-image F1.
pub fn mean_f1(reports: &[MatchReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("no reports to average".into()));
    }
    Ok(reports.iter().map(|r| r.f1).sum::<f64>() / reports.len() as f64)
}

/// Allowed running time for an image: a flat 10 s up to one megapixel,
/// `round(pixels * 1e-5)` seconds above.
pub fn time_tolerance(height: usize, width: usize) -> f64 {
    time_tolerance_with(height, width, SECONDS_PER_PIXEL)
}

/// [`time_tolerance`] with an explicit per-pixel rate.
pub fn time_tolerance_with(height: usize, width: usize, seconds_per_pixel: f64) -> f64 {
    let pixels = height as u64 * width as u64;
    if pixels <= TOLERANCE_PIXEL_LIMIT {
        FLAT_TOLERANCE_SECS
    } else {
        (pixels as f64 * seconds_per_pixel).round()
    }
}

/// Wall-clock time of one image against its tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRecord {
    pub image_pixels: u64,
    pub tolerance: f64,
    pub real_time: f64,
    pub out_of_tolerance: f64,
}

impl TimingRecord {
    pub fn new(height: usize, width: usize, real_time: f64) -> Self {
        let tolerance = time_tolerance(height, width);
        Self {
            image_pixels: height as u64 * width as u64,
            tolerance,
            real_time,
            out_of_tolerance: (real_time - tolerance).max(0.0),
        }
    }
}
