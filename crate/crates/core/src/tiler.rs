//! Sliding-window tiling and mean stitching of per-tile fields.

use crate::error::{Error, Result};
use crate::tensor_io::FieldTensor;

pub const DEFAULT_WINDOW: usize = 512;
pub const DEFAULT_STEP: usize = 384;

/// Tile origins for one image. Tiles are `window x window`, clipped to the
/// image when the image is smaller than the window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub step: usize,
    /// Top-left `(row, col)` of every tile, row-major.
    pub origins: Vec<(usize, usize)>,
}

impl TilePlan {
    /// Extent `(rows, cols)` of the tile at `origin`.
    pub fn tile_extent(&self, origin: (usize, usize)) -> (usize, usize) {
        (
            self.window.min(self.height - origin.0),
            self.window.min(self.width - origin.1),
        )
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Cuts a full-image field into the planned tiles.
    pub fn cut(&self, field: &FieldTensor) -> Result<Vec<((usize, usize), FieldTensor)>> {
        if (field.height(), field.width()) != (self.height, self.width) {
            return Err(Error::ShapeMismatch(format!(
                "field is {}x{}, plan is for {}x{}",
                field.height(),
                field.width(),
                self.height,
                self.width
            )));
        }
        self.origins
            .iter()
            .map(|&o| {
                let (th, tw) = self.tile_extent(o);
                Ok((o, field.crop(o.0, o.1, th, tw)?))
            })
            .collect()
    }
}

/// Origins along one axis: multiples of `step` while the window fits, then
/// one final window flush with the far edge.
pub fn axis_origins(extent: usize, window: usize, step: usize) -> Vec<usize> {
    if extent <= window {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0;
    while o + window < extent {
        origins.push(o);
        o += step;
    }
    let last = extent - window;
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}

pub fn plan_tiles(height: usize, width: usize, window: usize, step: usize) -> Result<TilePlan> {
    if window == 0 || step == 0 || step > window {
        return Err(Error::InvalidConfig(format!(
            "need window >= 1 and 1 <= step <= window, got window {window}, step {step}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidConfig(format!("empty image {height}x{width}")));
    }
    let rows = axis_origins(height, window, step);
    let cols = axis_origins(width, window, step);
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(TilePlan {
        height,
        width,
        window,
        step,
        origins,
    })
}

/// Averages overlapping patches into a `planes x height x width` field.
///
/// Each patch must sit at an origin of `plan` with that tile's extent.
pub fn stitch(
    patches: &[((usize, usize), FieldTensor)],
    plan: &TilePlan,
    out_shape: (usize, usize, usize),
) -> Result<FieldTensor> {
    let (planes, h, w) = out_shape;
    if (h, w) != (plan.height, plan.width) {
        return Err(Error::ShapeMismatch(format!(
            "output is {h}x{w}, plan is for {}x{}",
            plan.height, plan.width
        )));
    }
    let mut sum = vec![0.0f64; planes * h * w];
    let mut count = vec![0u32; h * w];
    for (origin, patch) in patches {
        if !plan.origins.contains(origin) {
            return Err(Error::ShapeMismatch(format!(
                "patch origin {origin:?} is not in the plan"
            )));
        }
        let (th, tw) = plan.tile_extent(*origin);
        if patch.shape() != (planes, th, tw) {
            return Err(Error::ShapeMismatch(format!(
                "patch at {origin:?} is {:?}, expected {:?}",
                patch.shape(),
                (planes, th, tw)
            )));
        }
        for r in 0..th {
            let row = origin.0 + r;
            for c in 0..tw {
                count[row * w + origin.1 + c] += 1;
            }
        }
        for p in 0..planes {
            let src = patch.plane(p);
            for r in 0..th {
                let dst = (p * h + origin.0 + r) * w + origin.1;
                for (acc, &v) in sum[dst..dst + tw].iter_mut().zip(&src[r * tw..(r + 1) * tw]) {
                    *acc += v as f64;
                }
            }
        }
    }
    if let Some(i) = count.iter().position(|&n| n == 0) {
        return Err(Error::CoverageGap {
            row: i / w,
            col: i % w,
        });
    }
    let data = sum
        .iter()
        .enumerate()
        .map(|(i, s)| (s / count[i % (h * w)] as f64) as f32)
        .collect();
    FieldTensor::new(planes, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plans() {
        let p = plan_tiles(1024, 1024, 512, 384).unwrap();
        assert_eq!(axis_origins(1024, 512, 384), vec![0, 384, 512]);
        assert_eq!(p.len(), 9);

        let p = plan_tiles(512, 512, 512, 384).unwrap();
        assert_eq!(p.origins, vec![(0, 0)]);

        assert_eq!(
            axis_origins(3000, 512, 384),
            vec![0, 384, 768, 1152, 1536, 1920, 2304, 2488]
        );
        assert_eq!(plan_tiles(3000, 3000, 512, 384).unwrap().len(), 64);
    }

    #[test]
    fn small_image_single_clipped_tile() {
        let p = plan_tiles(100, 700, 512, 384).unwrap();
        assert_eq!(p.origins, vec![(0, 0), (0, 188)]);
        assert_eq!(p.tile_extent((0, 0)), (100, 512));
    }

    #[test]
    fn invalid_configs() {
        assert!(plan_tiles(10, 10, 0, 1).is_err());
        assert!(plan_tiles(10, 10, 4, 5).is_err());
        assert!(plan_tiles(10, 10, 4, 0).is_err());
    }

    #[test]
    fn single_tile_identity() {
        let f = FieldTensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let plan = plan_tiles(2, 2, 512, 384).unwrap();
        assert_eq!(stitch(&[((0, 0), f.clone())], &plan, (1, 2, 2)).unwrap(), f);
    }

    #[test]
    fn overlap_is_averaged() {
        let plan = plan_tiles(1, 3, 2, 1).unwrap();
        let a = FieldTensor::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let b = FieldTensor::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        let out = stitch(&[((0, 0), a), ((0, 1), b)], &plan, (1, 1, 3)).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn missing_patch_is_a_gap() {
        let plan = plan_tiles(1, 3, 2, 1).unwrap();
        let a = FieldTensor::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            stitch(&[((0, 0), a)], &plan, (1, 1, 3)),
            Err(Error::CoverageGap { row: 0, col: 2 })
        ));
    }

    #[test]
    fn wrong_patch_shape() {
        let plan = plan_tiles(1, 3, 2, 1).unwrap();
        let a = FieldTensor::new(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            stitch(&[((0, 0), a)], &plan, (1, 1, 3)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn every_pixel_is_covered(h in 1usize..300, w in 1usize..300, window in 1usize..80, step_frac in 0.01f64..1.0) {
            let step = ((window as f64 * step_frac).ceil() as usize).clamp(1, window);
            let plan = plan_tiles(h, w, window, step).unwrap();
            let mut covered = vec![false; h * w];
            for &o in &plan.origins {
                let (th, tw) = plan.tile_extent(o);
                prop_assert!(o.0 + th <= h && o.1 + tw <= w);
                for r in o.0..o.0 + th {
                    for c in o.1..o.1 + tw {
                        covered[r * w + c] = true;
                    }
                }
            }
            prop_assert!(covered.iter().all(|&c| c));
        }

        #[test]
        fn cut_then_stitch_is_identity(h in 1usize..70, w in 1usize..70, window in 4usize..32, seed in any::<u32>()) {
            let step = (window * 3 / 4).max(1);
            let data: Vec<f32> = (0..2 * h * w)
                .map(|i| f32::from_bits(seed.wrapping_add(i as u32 * 7919) & 0x3fff_ffff))
                .collect();
            let field = FieldTensor::new(2, h, w, data).unwrap();
            let plan = plan_tiles(h, w, window, step).unwrap();
            let out = stitch(&plan.cut(&field).unwrap(), &plan, (2, h, w)).unwrap();
            for (a, b) in out.data().iter().zip(field.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
