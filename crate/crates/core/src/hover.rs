//! Cell-pixel / horizontal-vertical targets and marker-controlled watershed.
//!
//! Each cell pixel carries its horizontal and vertical offset from the cell
//! centroid, rescaled per cell to `[-1, 1]`. Across a boundary between two
//! touching cells these offsets jump from one extreme to the other, so the
//! gradient magnitude of the HV maps peaks exactly where cells meet. Decoding
//! removes those ridges from the thresholded foreground to obtain one marker
//! per cell, then floods the full foreground from the markers in order of
//! increasing gradient energy.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;

use crate::error::{Error, Result};
use crate::gradient::{grad_x, grad_y};
use crate::tensor_io::{FieldTensor, InstanceMap};

const CP_SUM_TOLERANCE: f32 = 1e-5;

/// Cell-pixel probabilities (background, foreground) and HV offsets
/// (horizontal, vertical), each `2 x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoverField {
    cp: FieldTensor,
    hv: FieldTensor,
}

impl HoverField {
    pub fn new(cp: FieldTensor, hv: FieldTensor) -> Result<Self> {
        if cp.planes() != 2 || hv.planes() != 2 {
            return Err(Error::InconsistentField(format!(
                "expected 2 CP and 2 HV planes, got {} and {}",
                cp.planes(),
                hv.planes()
            )));
        }
        if (cp.height(), cp.width()) != (hv.height(), hv.width()) {
            return Err(Error::InconsistentField(format!(
                "CP is {}x{}, HV is {}x{}",
                cp.height(),
                cp.width(),
                hv.height(),
                hv.width()
            )));
        }
        for (i, (b, f)) in cp.plane(0).iter().zip(cp.plane(1)).enumerate() {
            if !(0.0..=1.0).contains(b) || !(0.0..=1.0).contains(f) || (b + f - 1.0).abs() > CP_SUM_TOLERANCE {
                return Err(Error::InconsistentField(format!(
                    "CP planes at pixel {i} are ({b}, {f}); need probabilities summing to 1"
                )));
            }
        }
        if let Some(v) = hv.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InconsistentField(format!("HV value {v} outside [-1,1]")));
        }
        Ok(Self { cp, hv })
    }

    /// Splits a stacked `4 x H x W` tensor `[cp_bg, cp_fg, h, v]`.
    pub fn from_tensor(stacked: &FieldTensor) -> Result<Self> {
        if stacked.planes() != 4 {
            return Err(Error::InconsistentField(format!(
                "a hover field has 4 planes, got {}",
                stacked.planes()
            )));
        }
        Self::new(stacked.slice_planes(0, 2), stacked.slice_planes(2, 4))
    }

    pub fn to_tensor(&self) -> FieldTensor {
        FieldTensor::concat(&[&self.cp, &self.hv]).expect("shapes checked at construction")
    }

    pub fn cp(&self) -> &FieldTensor {
        &self.cp
    }

    pub fn hv(&self) -> &FieldTensor {
        &self.hv
    }

    pub fn height(&self) -> usize {
        self.cp.height()
    }

    pub fn width(&self) -> usize {
        self.cp.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WatershedConfig {
    /// Foreground probability a pixel must exceed to be a cell pixel.
    pub cp_threshold: f32,
    /// Normalized gradient energy above which a pixel cannot seed a marker.
    pub marker_energy_threshold: f32,
    /// Marker components smaller than this are discarded.
    pub min_marker_size: usize,
}

impl Default for WatershedConfig {
    fn default() -> Self {
        Self {
            cp_threshold: 0.6,
            marker_energy_threshold: 0.5,
            min_marker_size: 3,
        }
    }
}

impl WatershedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cp_threshold) || !(0.0..=1.0).contains(&self.marker_energy_threshold) {
            return Err(Error::InvalidConfig(format!(
                "watershed thresholds must lie in [0,1], got {} and {}",
                self.cp_threshold, self.marker_energy_threshold
            )));
        }
        Ok(())
    }
}

/// Rescales signed offsets so the most negative maps to -1 and the most
/// positive to +1, each side independently.
fn rescale(offsets: &[f64]) -> Vec<f32> {
    let pos = offsets.iter().copied().fold(0.0, f64::max);
    let neg = offsets.iter().copied().fold(0.0, f64::min).abs();
    offsets
        .iter()
        .map(|&o| {
            if o > 0.0 {
                (o / pos) as f32
            } else if o < 0.0 {
                (o / neg) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// HoverNet-style targets for an instance map.
pub fn encode_hover(mask: &InstanceMap) -> HoverField {
    let (h, w) = (mask.height(), mask.width());
    let labels = mask.labels();
    let k = mask.num_instances();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            members[l as usize - 1].push(i);
        }
    }

    let mut cp = FieldTensor::zeros(2, h, w);
    for (i, &l) in labels.iter().enumerate() {
        cp.plane_mut(if l > 0 { 1 } else { 0 })[i] = 1.0;
    }

    let mut hv = FieldTensor::zeros(2, h, w);
    for pixels in &members {
        let n = pixels.len() as f64;
        let cy = pixels.iter().map(|&i| (i / w) as f64).sum::<f64>() / n;
        let cx = pixels.iter().map(|&i| (i % w) as f64).sum::<f64>() / n;
        let dx: Vec<f64> = pixels.iter().map(|&i| (i % w) as f64 - cx).collect();
        let dy: Vec<f64> = pixels.iter().map(|&i| (i / w) as f64 - cy).collect();
        for (&i, v) in pixels.iter().zip(rescale(&dx)) {
            hv.plane_mut(0)[i] = v;
        }
        for (&i, v) in pixels.iter().zip(rescale(&dy)) {
            hv.plane_mut(1)[i] = v;
        }
    }
    HoverField::new(cp, hv).expect("encoded planes satisfy the field invariants")
}

/// `max(|d/dx horizontal|, |d/dy vertical|)` per pixel, min-max normalized
/// to `[0, 1]` over the image (all zero when the raw energy is constant).
pub fn hv_gradient_energy(hv: &FieldTensor) -> Result<FieldTensor> {
    if hv.planes() != 2 {
        return Err(Error::InconsistentField(format!(
            "HV energy needs 2 planes, got {}",
            hv.planes()
        )));
    }
    let (h, w) = (hv.height(), hv.width());
    let raw = raw_energy(hv);
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        raw.iter().map(|e| ((e - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.0; h * w]
    };
    FieldTensor::new(1, h, w, data)
}

pub(crate) fn raw_energy(hv: &FieldTensor) -> Vec<f64> {
    let (h, w) = (hv.height(), hv.width());
    let gx = grad_x(hv.plane(0), h, w);
    let gy = grad_y(hv.plane(1), h, w);
    gx.iter().zip(&gy).map(|(a, b)| a.abs().max(b.abs())).collect()
}

fn neighbors4(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    [
        (r > 0).then(|| i - w),
        (c > 0).then(|| i - 1),
        (c + 1 < w).then(|| i + 1),
        (r + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// 4-connected components of `mask`, numbered in raster order of their first
/// pixel. Components smaller than `min_size` are dropped.
pub(crate) fn connected_components(mask: &[bool], h: usize, w: usize, min_size: usize) -> Vec<u32> {
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        members.clear();
        while let Some(i) = stack.pop() {
            members.push(i);
            for n in neighbors4(i, h, w) {
                if mask[n] && labels[n] == 0 {
                    labels[n] = next;
                    stack.push(n);
                }
            }
        }
        if members.len() < min_size {
            // u32::MAX marks "visited, rejected" until the final sweep
            for &i in &members {
                labels[i] = u32::MAX;
            }
            next -= 1;
        }
    }
    for l in labels.iter_mut() {
        if *l == u32::MAX {
            *l = 0;
        }
    }
    labels
}

/// Seeded priority flood restricted to `domain`.
///
/// Pixels are claimed when first pushed (taking the label of the pixel that
/// pushed them) and expanded in order of `(elevation, push order)`, so the
/// result is fully determined by the inputs.
pub(crate) fn flood(seeds: &mut [u32], elevation: &[f32], domain: &[bool], h: usize, w: usize) {
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    for i in 0..h * w {
        if seeds[i] != 0 {
            heap.push(Reverse((OrderedFloat(elevation[i]), order, i)));
            order += 1;
        }
    }
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let label = seeds[i];
        for n in neighbors4(i, h, w) {
            if domain[n] && seeds[n] == 0 {
                seeds[n] = label;
                heap.push(Reverse((OrderedFloat(elevation[n]), order, n)));
                order += 1;
            }
        }
    }
}

/// Marker-controlled watershed on the HV gradient energy.
pub fn decode_watershed(field: &HoverField, cfg: &WatershedConfig) -> Result<InstanceMap> {
    cfg.validate()?;
    let (h, w) = (field.height(), field.width());
    let foreground: Vec<bool> = field.cp().plane(1).iter().map(|&p| p > cfg.cp_threshold).collect();
    let energy = hv_gradient_energy(field.hv())?;
    let energy = energy.plane(0);

    let seeds: Vec<bool> = foreground
        .iter()
        .zip(energy)
        .map(|(&f, &e)| f && e <= cfg.marker_energy_threshold)
        .collect();
    let mut labels = connected_components(&seeds, h, w, cfg.min_marker_size);
    flood(&mut labels, energy, &foreground, h, w);
    InstanceMap::new(h, w, labels)
}
