//! Star-convex polygon targets: encoding instance maps into an object
//! probability plane plus `R` ray-distance planes, and decoding such fields
//! back into instances with greedy polygon non-maximum suppression.

use rayon::prelude::*;

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::polygon::{ray_direction, Raster, StarPolygon};
use crate::tensor_io::{FieldTensor, InstanceMap};

/// Above this many pixels, candidates are taken only at even rows and columns.
pub const DENSE_CANDIDATE_LIMIT: usize = 1024 * 1024;

/// Object probability (`1 x H x W`) and ray distances (`R x H x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    prob: FieldTensor,
    dist: FieldTensor,
}

impl RadialField {
    pub fn new(prob: FieldTensor, dist: FieldTensor, rays: usize) -> Result<Self> {
        if prob.planes() != 1 {
            return Err(Error::InconsistentField(format!(
                "probability must be a single plane, got {}",
                prob.planes()
            )));
        }
        if dist.planes() != rays {
            return Err(Error::InconsistentField(format!(
                "{} distance planes for {rays} rays",
                dist.planes()
            )));
        }
        if rays < 3 {
            return Err(Error::InconsistentField(format!("{rays} rays cannot form a polygon")));
        }
        if (prob.height(), prob.width()) != (dist.height(), dist.width()) {
            return Err(Error::InconsistentField(format!(
                "probability is {}x{}, distances are {}x{}",
                prob.height(),
                prob.width(),
                dist.height(),
                dist.width()
            )));
        }
        if let Some(p) = prob.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InconsistentField(format!("probability {p} outside [0,1]")));
        }
        if let Some(d) = dist.data().iter().find(|d| d.is_nan() || **d < 0.0) {
            return Err(Error::InconsistentField(format!("negative or NaN distance {d}")));
        }
        Ok(Self { prob, dist })
    }

    /// Splits a stacked `(1 + R) x H x W` tensor: plane 0 is the probability.
    pub fn from_tensor(stacked: &FieldTensor) -> Result<Self> {
        let planes = stacked.planes();
        if planes < 4 {
            return Err(Error::InconsistentField(format!(
                "a radial field needs 1 + R >= 4 planes, got {planes}"
            )));
        }
        Self::new(stacked.slice_planes(0, 1), stacked.slice_planes(1, planes), planes - 1)
    }

    pub fn to_tensor(&self) -> FieldTensor {
        FieldTensor::concat(&[&self.prob, &self.dist]).expect("shapes checked at construction")
    }

    pub fn prob(&self) -> &FieldTensor {
        &self.prob
    }

    pub fn dist(&self) -> &FieldTensor {
        &self.dist
    }

    pub fn rays(&self) -> usize {
        self.dist.planes()
    }

    pub fn height(&self) -> usize {
        self.prob.height()
    }

    pub fn width(&self) -> usize {
        self.prob.width()
    }

    /// The candidate polygon anchored at pixel `(row, col)`.
    pub fn polygon_at(&self, row: usize, col: usize) -> StarPolygon {
        let radii = (0..self.rays()).map(|k| self.dist.get(k, row, col)).collect();
        StarPolygon::new((row as f64, col as f64), radii, self.prob.get(0, row, col))
    }
}

/// Thresholds for [`decode_nms`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub prob_threshold: f32,
    pub iou_threshold: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            prob_threshold: 0.5,
            iou_threshold: 0.4,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob_threshold) || !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::InvalidConfig(format!(
                "NMS thresholds must lie in [0,1], got {} and {}",
                self.prob_threshold, self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Per-pixel distance to the nearest non-instance pixel, divided by the
/// largest such distance inside the same instance. Pixels beyond the image
/// border count as background.
pub fn encode_prob(mask: &InstanceMap) -> FieldTensor {
    let (h, w) = (mask.height(), mask.width());
    let mut out = FieldTensor::zeros(1, h, w);
    let labels = mask.labels();

    let per_instance: Vec<_> = mask
        .bounding_boxes()
        .into_par_iter()
        .enumerate()
        .filter(|(_, b)| b.0 != usize::MAX)
        .map(|(i, (r0, c0, r1, c1))| {
            let id = i as u32 + 1;
            // one pixel of padding on every side so the border is a site
            let (bh, bw) = (r1 - r0 + 3, c1 - c0 + 3);
            let mut sites = vec![true; bh * bw];
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if labels[r * w + c] == id {
                        sites[(r - r0 + 1) * bw + (c - c0 + 1)] = false;
                    }
                }
            }
            let d2 = squared_edt(&sites, bh, bw);
            let peak = d2
                .iter()
                .zip(&sites)
                .filter(|(_, &s)| !s)
                .map(|(d, _)| *d)
                .fold(0.0, f64::max)
                .sqrt();
            let mut values = Vec::new();
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let j = (r - r0 + 1) * bw + (c - c0 + 1);
                    if !sites[j] {
                        values.push((r * w + c, (d2[j].sqrt() / peak) as f32));
                    }
                }
            }
            values
        })
        .collect();

    let plane = out.plane_mut(0);
    for values in per_instance {
        for (idx, v) in values {
            plane[idx] = v;
        }
    }
    out
}

/// Number of unit steps from `(row, col)` along ray `dir` until the rounded
/// position leaves instance `id` or the image.
fn march(labels: &[u32], h: usize, w: usize, row: usize, col: usize, id: u32, dir: (f64, f64)) -> u32 {
    let mut t = 1u32;
    loop {
        let r = (row as f64 + t as f64 * dir.0).round();
        let c = (col as f64 + t as f64 * dir.1).round();
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 || labels[r as usize * w + c as usize] != id {
            return t;
        }
        t += 1;
    }
}

/// Ray lengths for every foreground pixel, `rays x H x W`.
pub fn encode_radial(mask: &InstanceMap, rays: usize) -> Result<FieldTensor> {
    if rays < 3 {
        return Err(Error::InvalidConfig(format!("{rays} rays cannot form a polygon")));
    }
    let (h, w) = (mask.height(), mask.width());
    let labels = mask.labels();
    let mut out = FieldTensor::zeros(rays, h, w);
    if h == 0 || w == 0 {
        return Ok(out);
    }
    for k in 0..rays {
        let dir = ray_direction(k, rays);
        out.plane_mut(k)
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(row, line)| {
                for (col, slot) in line.iter_mut().enumerate() {
                    let id = labels[row * w + col];
                    if id != 0 {
                        *slot = march(labels, h, w, row, col, id, dir) as f32;
                    }
                }
            });
    }
    Ok(out)
}

/// Both target planes for a mask.
pub fn encode(mask: &InstanceMap, rays: usize) -> Result<RadialField> {
    RadialField::new(encode_prob(mask), encode_radial(mask, rays)?, rays)
}

struct Kept {
    raster: Raster,
    bounds: (i64, i64, i64, i64),
}

/// Coarse grid over the image listing kept polygons per cell.
struct KeptIndex {
    cell: i64,
    cols: i64,
    rows: i64,
    cells: Vec<Vec<usize>>,
}

impl KeptIndex {
    fn new(h: usize, w: usize) -> Self {
        let cell = 32i64;
        let rows = (h as i64 + cell - 1) / cell;
        let cols = (w as i64 + cell - 1) / cell;
        Self {
            cell,
            cols,
            rows,
            cells: vec![Vec::new(); (rows * cols).max(1) as usize],
        }
    }

    fn cell_range(&self, b: (i64, i64, i64, i64)) -> (i64, i64, i64, i64) {
        let clamp_r = |v: i64| (v / self.cell).clamp(0, self.rows - 1);
        let clamp_c = |v: i64| (v / self.cell).clamp(0, self.cols - 1);
        (clamp_r(b.0), clamp_c(b.1), clamp_r(b.2), clamp_c(b.3))
    }

    fn insert(&mut self, idx: usize, b: (i64, i64, i64, i64)) {
        let (r0, c0, r1, c1) = self.cell_range(b);
        for r in r0..=r1 {
            for c in c0..=c1 {
                self.cells[(r * self.cols + c) as usize].push(idx);
            }
        }
    }

    fn near(&self, b: (i64, i64, i64, i64), out: &mut Vec<usize>) {
        out.clear();
        let (r0, c0, r1, c1) = self.cell_range(b);
        for r in r0..=r1 {
            for c in c0..=c1 {
                out.extend_from_slice(&self.cells[(r * self.cols + c) as usize]);
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

fn overlaps(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> bool {
    !(a.2 < b.0 || b.2 < a.0 || a.3 < b.1 || b.3 < a.1)
}

/// Greedy polygon NMS followed by rasterization into an instance map.
///
/// Candidates are the pixels whose probability exceeds the threshold (on a
/// stride-2 grid for images above [`DENSE_CANDIDATE_LIMIT`] pixels). In
/// descending score order, a candidate is kept unless its rasterized IoU with
/// an already kept polygon exceeds the IoU threshold. Kept polygons are then
/// painted lowest score first so that higher scores win overlaps; polygons
/// that end up fully covered disappear from the output.
pub fn decode_nms(field: &RadialField, cfg: &NmsConfig) -> Result<InstanceMap> {
    cfg.validate()?;
    let (h, w) = (field.height(), field.width());
    let prob = field.prob().plane(0);
    let stride = if h * w > DENSE_CANDIDATE_LIMIT { 2 } else { 1 };

    let mut candidates: Vec<(usize, usize)> = (0..h)
        .step_by(stride)
        .flat_map(|r| (0..w).step_by(stride).map(move |c| (r, c)))
        .filter(|&(r, c)| prob[r * w + c] > cfg.prob_threshold)
        .collect();
    // stable: equal scores keep raster order
    candidates.sort_by(|a, b| prob[b.0 * w + b.1].total_cmp(&prob[a.0 * w + a.1]));

    let mut kept: Vec<Kept> = Vec::new();
    let mut index = KeptIndex::new(h, w);
    let mut near = Vec::new();
    for &(r, c) in &candidates {
        let polygon = field.polygon_at(r, c);
        let raster = polygon.rasterize(Some((h, w)));
        let Some(bounds) = raster.bounds() else {
            continue;
        };
        index.near(bounds, &mut near);
        let suppressed = near.iter().any(|&k| {
            overlaps(bounds, kept[k].bounds) && raster.iou(&kept[k].raster) > cfg.iou_threshold
        });
        if !suppressed {
            index.insert(kept.len(), bounds);
            kept.push(Kept { raster, bounds });
        }
    }

    let mut labels = vec![0u32; h * w];
    for (i, k) in kept.iter().enumerate().rev() {
        for (r, c) in k.raster.pixels() {
            labels[r as usize * w + c as usize] = i as u32 + 1;
        }
    }
    InstanceMap::new(h, w, labels)
}
