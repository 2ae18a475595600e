//! Deterministic synthetic masks and images for round-trip checks.
//!
//! Everything here is driven by a seeded ChaCha generator so fixtures are
//! identical across runs and platforms.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use std::path::{Path, PathBuf};

use crate::classifier::ImageCategory;
use crate::error::Result;
use crate::hover::encode_hover;
use crate::pipeline::{DecoderKind, PipelineConfig};
use crate::stardist::encode;
use crate::tensor_io::{save_field, save_image, save_instance_map, InstanceMap, RasterImage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A shape that can answer "does pixel `(row, col)` belong to me".
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Radius varies smoothly with angle: `base * (1 + sum a_k sin(k t + p_k))`.
    Blob {
        center: (f64, f64),
        base: f64,
        harmonics: Vec<(f64, f64, f64)>,
    },
    Disk {
        center: (f64, f64),
        radius: f64,
    },
    /// Annulus with a wedge removed around `gap_angle`.
    CShape {
        center: (f64, f64),
        outer: f64,
        inner: f64,
        gap_angle: f64,
        gap_half_width: f64,
    },
    Cross {
        center: (f64, f64),
        arm: f64,
        half_thickness: f64,
    },
}

impl Shape {
    pub fn center(&self) -> (f64, f64) {
        match self {
            Shape::Blob { center, .. }
            | Shape::Disk { center, .. }
            | Shape::CShape { center, .. }
            | Shape::Cross { center, .. } => *center,
        }
    }

    /// Radius of a circle around [`center`](Shape::center) containing the shape.
    pub fn extent(&self) -> f64 {
        match self {
            Shape::Blob { base, harmonics, .. } => {
                base * (1.0 + harmonics.iter().map(|h| h.1.abs()).sum::<f64>())
            }
            Shape::Disk { radius, .. } => *radius,
            Shape::CShape { outer, .. } => *outer,
            Shape::Cross { arm, half_thickness, .. } => (arm * arm + half_thickness * half_thickness).sqrt(),
        }
    }

    pub fn contains(&self, row: f64, col: f64) -> bool {
        let (cy, cx) = self.center();
        let (dy, dx) = (row - cy, col - cx);
        let dist = (dy * dy + dx * dx).sqrt();
        match self {
            Shape::Blob { base, harmonics, .. } => {
                let t = (-dy).atan2(dx);
                let scale: f64 = harmonics.iter().map(|&(k, a, p)| a * (k * t + p).sin()).sum();
                dist <= base * (1.0 + scale)
            }
            Shape::Disk { radius, .. } => dist <= *radius,
            Shape::CShape {
                outer,
                inner,
                gap_angle,
                gap_half_width,
                ..
            } => {
                if dist > *outer || dist < *inner {
                    return false;
                }
                let t = (-dy).atan2(dx);
                let mut diff = (t - gap_angle).rem_euclid(2.0 * PI);
                if diff > PI {
                    diff = 2.0 * PI - diff;
                }
                diff > *gap_half_width
            }
            Shape::Cross { arm, half_thickness, .. } => {
                (dy.abs() <= *half_thickness && dx.abs() <= *arm) || (dx.abs() <= *half_thickness && dy.abs() <= *arm)
            }
        }
    }
}

/// Paints shapes in order; a pixel covered by several shapes goes to the one
/// whose center is nearest, so overlapping disks meet along a straight line.
pub fn render(height: usize, width: usize, shapes: &[Shape]) -> InstanceMap {
    let mut labels = vec![0u32; height * width];
    for (k, s) in shapes.iter().enumerate() {
        let (cy, cx) = s.center();
        let e = s.extent().ceil() + 1.0;
        let r0 = (cy - e).floor().max(0.0) as usize;
        let r1 = ((cy + e).ceil() as usize).min(height.saturating_sub(1));
        let c0 = (cx - e).floor().max(0.0) as usize;
        let c1 = ((cx + e).ceil() as usize).min(width.saturating_sub(1));
        for r in r0..=r1 {
            for c in c0..=c1 {
                if !s.contains(r as f64, c as f64) {
                    continue;
                }
                let idx = r * width + c;
                let current = labels[idx];
                let claim = current == 0 || {
                    let other = shapes[current as usize - 1].center();
                    let d_new = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                    let d_old = (r as f64 - other.0).powi(2) + (c as f64 - other.1).powi(2);
                    d_new < d_old
                };
                if claim {
                    labels[idx] = k as u32 + 1;
                }
            }
        }
    }
    InstanceMap::new(height, width, labels).expect("label buffer sized to the image")
}

fn random_blob(rng: &mut impl Rng, center: (f64, f64), base: f64) -> Shape {
    let harmonics = vec![
        (2.0, rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI)),
        (3.0, rng.random_range(0.0..0.08), rng.random_range(0.0..2.0 * PI)),
    ];
    Shape::Blob {
        center,
        base,
        harmonics,
    }
}

/// Places `count` non-overlapping blobs whose bounding circles keep at least
/// `gap` pixels between them and stay inside the image. Gives up on a blob
/// after many failed placements, so fewer may be returned in crowded images.
pub fn place_blobs(
    rng: &mut impl Rng,
    height: usize,
    width: usize,
    count: usize,
    base_radius: (f64, f64),
    gap: f64,
) -> Vec<Shape> {
    let mut shapes: Vec<Shape> = Vec::new();
    for _ in 0..count {
        for _attempt in 0..500 {
            let base = rng.random_range(base_radius.0..base_radius.1);
            let margin = base * 1.2 + 2.0;
            if 2.0 * margin >= height.min(width) as f64 {
                break;
            }
            let center = (
                rng.random_range(margin..height as f64 - margin),
                rng.random_range(margin..width as f64 - margin),
            );
            let blob = random_blob(rng, center, base);
            let fits = shapes.iter().all(|s| {
                let (a, b) = (s.center(), blob.center());
                let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                d >= s.extent() + blob.extent() + gap + 1.0
            });
            if fits {
                shapes.push(blob);
                break;
            }
        }
    }
    shapes
}

/// A mask of 10 to 20 separated star-convex blobs.
pub fn star_convex_scene(seed: u64, height: usize, width: usize) -> InstanceMap {
    let mut r = rng(seed);
    let count = r.random_range(10..=20);
    let shapes = place_blobs(&mut r, height, width, count, (6.0, 13.0), 3.0);
    render(height, width, &shapes)
}

/// Pairs of touching disks, C-shapes and crosses, separated from each other.
/// Returns the mask and the ids of every touching pair.
pub fn hover_scene(seed: u64, height: usize, width: usize) -> (InstanceMap, Vec<(u32, u32)>) {
    let mut r = rng(seed);
    let mut shapes: Vec<Shape> = Vec::new();
    let mut pair_slots = Vec::new();
    // groups are placed as whole units with a bounding circle
    let mut groups: Vec<((f64, f64), f64)> = Vec::new();
    let kinds = r.random_range(3..=6);
    for g in 0..kinds {
        let kind = if g == 0 { 0 } else { r.random_range(0..3) };
        for _attempt in 0..300 {
            let radius = r.random_range(9.0..14.0);
            let extent = match kind {
                0 => radius * 2.0,
                _ => radius * 1.5,
            };
            let margin = extent + 2.0;
            if 2.0 * margin >= height.min(width) as f64 {
                break;
            }
            let center = (
                r.random_range(margin..height as f64 - margin),
                r.random_range(margin..width as f64 - margin),
            );
            let free = groups.iter().all(|&(c, e)| {
                ((c.0 - center.0).powi(2) + (c.1 - center.1).powi(2)).sqrt() >= e + extent + 4.0
            });
            if !free {
                continue;
            }
            groups.push((center, extent));
            match kind {
                0 => {
                    let angle: f64 = r.random_range(0.0..PI);
                    let half = radius * r.random_range(0.8..0.92);
                    let (dy, dx) = (angle.sin() * half, angle.cos() * half);
                    let first = shapes.len() as u32 + 1;
                    shapes.push(Shape::Disk {
                        center: (center.0 - dy, center.1 - dx),
                        radius,
                    });
                    shapes.push(Shape::Disk {
                        center: (center.0 + dy, center.1 + dx),
                        radius,
                    });
                    pair_slots.push((first, first + 1));
                }
                1 => {
                    let outer = radius * 1.5;
                    shapes.push(Shape::CShape {
                        center,
                        outer,
                        inner: outer * r.random_range(0.45..0.6),
                        gap_angle: r.random_range(0.0..2.0 * PI),
                        gap_half_width: r.random_range(0.5..0.9),
                    });
                }
                _ => {
                    shapes.push(Shape::Cross {
                        center,
                        arm: radius * 1.4,
                        half_thickness: (radius * 0.35).max(2.5),
                    });
                }
            }
            break;
        }
    }
    let mask = render(height, width, &shapes);
    (mask, pair_slots)
}

/// An image whose color statistics put it in `category` under the default
/// classifier thresholds. The mask decides the size split for color images,
/// so callers pair [`ImageCategory::LargeCell`] with a mask holding a cell
/// above the area threshold.
pub fn image_for(seed: u64, mask: &InstanceMap, category: ImageCategory) -> RasterImage {
    let mut r = rng(seed);
    let (h, w) = (mask.height(), mask.width());
    let jitter = |r: &mut ChaCha8Rng| r.random_range(-0.02f32..0.02);
    match category {
        ImageCategory::Binary => {
            let data = mask
                .labels()
                .iter()
                .map(|&l| if l > 0 { 0.9 } else { 0.1 } + jitter(&mut r))
                .collect();
            RasterImage::new(h, w, 1, data).expect("sized to mask")
        }
        ImageCategory::Gray => {
            // dim, tinted: mean S well above 0.1 and mean V inside (0.1, 0.6)
            let mut data = Vec::with_capacity(h * w * 3);
            for &l in mask.labels() {
                let base = if l > 0 { [0.45, 0.30, 0.30] } else { [0.30, 0.20, 0.20] };
                data.extend(base.iter().map(|&v| v + jitter(&mut r)));
            }
            RasterImage::new(h, w, 3, data).expect("sized to mask")
        }
        ImageCategory::LargeCell | ImageCategory::SmallCell => {
            // bright and nearly neutral: fails the saturation test
            let mut data = Vec::with_capacity(h * w * 3);
            for &l in mask.labels() {
                let base = if l > 0 { [0.70, 0.66, 0.72] } else { [0.92, 0.92, 0.92] };
                data.extend(base.iter().map(|&v| (v + jitter(&mut r)).clamp(0.0, 1.0)));
            }
            RasterImage::new(h, w, 3, data).expect("sized to mask")
        }
    }
}

/// Blobs large enough that the biggest exceeds the large-cell area threshold.
pub fn large_cell_scene(seed: u64, height: usize, width: usize) -> InstanceMap {
    let mut r = rng(seed);
    let mut shapes = place_blobs(&mut r, height, width, 1, (56.0, 60.0), 3.0);
    let mut extra = place_blobs(&mut r, height, width, 6, (8.0, 14.0), 3.0);
    extra.retain(|b| {
        shapes.iter().all(|s| {
            let (a, c) = (s.center(), b.center());
            ((a.0 - c.0).powi(2) + (a.1 - c.1).powi(2)).sqrt() >= s.extent() + b.extent() + 4.0
        })
    });
    shapes.extend(extra);
    render(height, width, &shapes)
}

/// Mask for a fixture image of the given category.
pub fn scene_for(seed: u64, height: usize, width: usize, category: ImageCategory) -> InstanceMap {
    match category {
        ImageCategory::Gray => hover_scene(seed, height, width).0,
        ImageCategory::LargeCell => large_cell_scene(seed, height, width),
        _ => star_convex_scene(seed, height, width),
    }
}

/// Writes a one-image-per-category pipeline fixture into `dir`:
/// `NAME.png` images, `NAME_gt.png` masks, oracle fields under `fields/`
/// (encoded for the decoder `cfg` routes each category to), and
/// `manifest.csv`. Returns the manifest path.
pub fn write_manifest_fixture(dir: &Path, seed: u64, height: usize, width: usize, cfg: &PipelineConfig) -> Result<PathBuf> {
    let fields = dir.join("fields");
    std::fs::create_dir_all(&fields).map_err(|e| crate::Error::io(&fields, e))?;
    let mut manifest = String::from("name,image,ground_truth\n");
    for (i, category) in ImageCategory::ALL.into_iter().enumerate() {
        let s = seed + i as u64;
        let mask = scene_for(s, height, width, category);
        let name = format!("img_{category}");
        save_image(&image_for(s, &mask, category), dir.join(format!("{name}.png")))?;
        save_instance_map(&mask, dir.join(format!("{name}_gt.png")))?;
        let field = match cfg.decoder_for(category) {
            DecoderKind::Stardist => encode(&mask, 32)?.to_tensor(),
            DecoderKind::Hover => encode_hover(&mask).to_tensor(),
        };
        save_field(&field, fields.join(format!("{name}.csf")))?;
        manifest.push_str(&format!("{name},{name}.png,{name}_gt.png\n"));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| crate::Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{categorize, max_instance_area, ClassifierConfig};

    #[test]
    fn star_scenes_are_deterministic_and_sized() {
        let a = star_convex_scene(7, 256, 256);
        assert_eq!(a, star_convex_scene(7, 256, 256));
        assert!((10..=20).contains(&a.num_instances()), "{}", a.num_instances());
    }

    #[test]
    fn star_scene_instances_are_separated() {
        let m = star_convex_scene(3, 256, 256);
        let (h, w) = (m.height(), m.width());
        for r in 0..h {
            for c in 0..w {
                let l = m.get(r, c);
                if l == 0 {
                    continue;
                }
                for dr in -3i64..=3 {
                    for dc in -3i64..=3 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                            let o = m.get(rr as usize, cc as usize);
                            assert!(o == 0 || o == l);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hover_scene_has_touching_pairs() {
        let (m, pairs) = hover_scene(11, 256, 256);
        assert!(!pairs.is_empty());
        let w = m.width();
        for &(a, b) in &pairs {
            let touching = (0..m.height()).any(|r| {
                (0..w - 1).any(|c| {
                    let (x, y) = (m.get(r, c), m.get(r, c + 1));
                    (x == a && y == b) || (x == b && y == a)
                })
            });
            assert!(touching, "pair {a}/{b} does not touch");
        }
    }

    #[test]
    fn images_land_in_their_category() {
        let cfg = ClassifierConfig::default();
        let small = star_convex_scene(1, 128, 128);
        let large = large_cell_scene(2, 256, 256);
        assert!(max_instance_area(&large) > 8000);
        for (mask, cat) in [
            (&small, ImageCategory::Binary),
            (&small, ImageCategory::Gray),
            (&large, ImageCategory::LargeCell),
            (&small, ImageCategory::SmallCell),
        ] {
            let img = image_for(5, mask, cat);
            assert_eq!(categorize(&img, mask, &cfg).unwrap(), cat);
        }
    }
}
