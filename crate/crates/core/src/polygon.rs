//! Star-convex polygons and their rasterization onto the pixel grid.

use std::f64::consts::PI;

/// Unit direction `(d_row, d_col)` of ray `k` out of `rays`.
///
/// Ray 0 points along +column; angles grow counter-clockwise as seen on
/// screen, so a quarter turn points up (toward smaller rows).
pub fn ray_direction(k: usize, rays: usize) -> (f64, f64) {
    let angle = 2.0 * PI * k as f64 / rays as f64;
    (-angle.sin(), angle.cos())
}

/// A polygon given by ray lengths from a center at equiangular directions.
///
/// `radii[k]` is the unit-step count from the center to the first pixel that
/// leaves the object along [`ray_direction`]`(k, R)`. The object boundary is
/// taken half a step short of that pixel, which is where [`vertices`] puts
/// the polygon corners.
///
/// [`vertices`]: StarPolygon::vertices
#[derive(Debug, Clone, PartialEq)]
pub struct StarPolygon {
    /// `(row, col)` of the center.
    pub center: (f64, f64),
    pub radii: Vec<f32>,
    pub score: f32,
}

impl StarPolygon {
    pub fn new(center: (f64, f64), radii: Vec<f32>, score: f32) -> Self {
        Self {
            center,
            radii,
            score,
        }
    }

    pub fn rays(&self) -> usize {
        self.radii.len()
    }

    /// Polygon corners as `(row, col)`.
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        let rays = self.radii.len();
        self.radii
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let (dr, dc) = ray_direction(k, rays);
                let len = (r as f64 - 0.5).max(0.0);
                (self.center.0 + len * dr, self.center.1 + len * dc)
            })
            .collect()
    }

    /// Inclusive pixel bounding box `(row_min, col_min, row_max, col_max)` of
    /// all pixel centers the polygon can contain.
    pub fn pixel_bounds(&self) -> (i64, i64, i64, i64) {
        bounds_of(&self.vertices())
    }

    /// Rasterizes the polygon; `clip` restricts the result to an image of the
    /// given `(height, width)`.
    pub fn rasterize(&self, clip: Option<(usize, usize)>) -> Raster {
        Raster::from_polygon(&self.vertices(), clip)
    }
}

fn bounds_of(vertices: &[(f64, f64)]) -> (i64, i64, i64, i64) {
    let (mut r0, mut c0, mut r1, mut c1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(r, c) in vertices {
        r0 = r0.min(r);
        c0 = c0.min(c);
        r1 = r1.max(r);
        c1 = c1.max(c);
    }
    (r0.ceil() as i64, c0.ceil() as i64, r1.floor() as i64, c1.floor() as i64)
}

/// One row of consecutive pixels, `cols` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub row: i64,
    pub start: i64,
    pub end: i64,
}

impl Span {
    fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }
}

/// The set of pixels whose centers lie inside a polygon, as sorted row spans.
///
/// A pixel center `(row, col)` is inside under the even-odd crossing rule
/// with half-open edges: it is inside when an odd number of edges cross the
/// horizontal line through it strictly to its right.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Raster {
    spans: Vec<Span>,
    area: usize,
}

impl Raster {
    pub fn from_polygon(vertices: &[(f64, f64)], clip: Option<(usize, usize)>) -> Raster {
        let n = vertices.len();
        if n < 3 {
            return Raster::default();
        }
        let (mut r0, mut c0, mut r1, mut c1) = bounds_of(vertices);
        if let Some((h, w)) = clip {
            r0 = r0.max(0);
            c0 = c0.max(0);
            r1 = r1.min(h as i64 - 1);
            c1 = c1.min(w as i64 - 1);
        }
        let mut spans = Vec::new();
        let mut crossings = Vec::with_capacity(n);
        for row in r0..=r1 {
            let y = row as f64;
            crossings.clear();
            for i in 0..n {
                let (ya, xa) = vertices[i];
                let (yb, xb) = vertices[(i + 1) % n];
                if (ya > y) != (yb > y) {
                    crossings.push(xa + (y - ya) * (xb - xa) / (yb - ya));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for pair in crossings.chunks_exact(2) {
                // x is inside when pair[0] <= x < pair[1]
                let start = (pair[0].ceil() as i64).max(c0);
                let end = ((pair[1].ceil() as i64) - 1).min(c1);
                if start <= end {
                    spans.push(Span { row, start, end });
                }
            }
        }
        let area = spans.iter().map(Span::len).sum();
        Raster { spans, area }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    /// Every covered `(row, col)`.
    pub fn pixels(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.spans
            .iter()
            .flat_map(|s| (s.start..=s.end).map(move |c| (s.row, c)))
    }

    /// Inclusive `(row_min, col_min, row_max, col_max)`, `None` when empty.
    pub fn bounds(&self) -> Option<(i64, i64, i64, i64)> {
        let first = self.spans.first()?;
        let last = self.spans.last()?;
        let c0 = self.spans.iter().map(|s| s.start).min()?;
        let c1 = self.spans.iter().map(|s| s.end).max()?;
        Some((first.row, c0, last.row, c1))
    }

    pub fn intersection_area(&self, other: &Raster) -> usize {
        let (a, b) = (&self.spans, &other.spans);
        let (mut i, mut j, mut total) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            let (sa, sb) = (a[i], b[j]);
            if sa.row != sb.row {
                if sa.row < sb.row {
                    i += 1;
                } else {
                    j += 1;
                }
                continue;
            }
            let lo = sa.start.max(sb.start);
            let hi = sa.end.min(sb.end);
            if lo <= hi {
                total += (hi - lo + 1) as usize;
            }
            if sa.end < sb.end {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    /// Pixel IoU, 0 when both rasters are empty.
    pub fn iou(&self, other: &Raster) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area + other.area - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

fn boxes_disjoint(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> bool {
    a.2 < b.0 || b.2 < a.0 || a.3 < b.1 || b.3 < a.1
}

/// Rasterized IoU of two star polygons on the unbounded pixel grid.
pub fn polygon_iou(a: &StarPolygon, b: &StarPolygon) -> f64 {
    debug_assert_eq!(a.rays(), b.rays());
    if boxes_disjoint(a.pixel_bounds(), b.pixel_bounds()) {
        return 0.0;
    }
    a.rasterize(None).iou(&b.rasterize(None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Crossing-number test evaluated pixel by pixel.
    fn inside(vertices: &[(f64, f64)], y: f64, x: f64) -> bool {
        let n = vertices.len();
        let mut odd = false;
        for i in 0..n {
            let (ya, xa) = vertices[i];
            let (yb, xb) = vertices[(i + 1) % n];
            if (ya > y) != (yb > y) {
                let xi = xa + (y - ya) * (xb - xa) / (yb - ya);
                if x < xi {
                    odd = !odd;
                }
            }
        }
        odd
    }

    fn brute_pixels(p: &StarPolygon) -> std::collections::BTreeSet<(i64, i64)> {
        let v = p.vertices();
        let mut set = std::collections::BTreeSet::new();
        for r in -40..40 {
            for c in -40..40 {
                if inside(&v, r as f64, c as f64) {
                    set.insert((r, c));
                }
            }
        }
        set
    }

    /// Shoelace area of a simple polygon.
    fn area(v: &[(f64, f64)]) -> f64 {
        let n = v.len();
        (0..n)
            .map(|i| {
                let (y0, x0) = v[i];
                let (y1, x1) = v[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum::<f64>()
            .abs()
            / 2.0
    }

    #[test]
    fn directions() {
        let (dr, dc) = ray_direction(0, 4);
        assert_eq!((dr, dc), (-0.0, 1.0));
        let (dr, dc) = ray_direction(1, 4);
        assert!((dr + 1.0).abs() < 1e-12 && dc.abs() < 1e-12);
    }

    #[test]
    fn single_pixel_polygon() {
        let p = StarPolygon::new((5.0, 5.0), vec![1.0; 32], 1.0);
        let r = p.rasterize(None);
        assert_eq!(r.pixels().collect::<Vec<_>>(), vec![(5, 5)]);
    }

    #[test]
    fn identical_polygons_have_unit_iou() {
        let p = StarPolygon::new((0.0, 0.0), (0..16).map(|k| 4.0 + (k % 3) as f32).collect(), 0.9);
        assert_eq!(polygon_iou(&p, &p), 1.0);
    }

    #[test]
    fn far_apart_polygons_have_zero_iou() {
        let a = StarPolygon::new((0.0, 0.0), vec![5.0; 8], 0.9);
        let b = StarPolygon::new((0.0, 100.0), vec![5.0; 8], 0.9);
        assert_eq!(polygon_iou(&a, &b), 0.0);
    }

    #[test]
    fn half_overlapping_squares() {
        // 8 rays: axis vertices sit on the edge midpoints of an axis-aligned square
        let square = |col: f64| {
            let d = 10.5 * std::f64::consts::SQRT_2 + 0.5;
            let a = 10.5 + 0.5;
            let radii = (0..8).map(|k| if k % 2 == 1 { d } else { a } as f32).collect();
            StarPolygon::new((0.0, col), radii, 1.0)
        };
        let (a, b) = (square(0.0), square(10.5));
        let va = a.vertices();
        // exact geometry: two 21x21 squares shifted by half a side
        assert!((area(&va) - 21.0 * 21.0).abs() < 1e-3, "{}", area(&va));
        let expected = (21.0 * 10.5) / (2.0 * 441.0 - 21.0 * 10.5);
        let got = polygon_iou(&a, &b);
        assert!((got - expected).abs() < 0.05, "{got} vs {expected}");
    }

    #[test]
    fn clipping_keeps_inside_pixels() {
        let p = StarPolygon::new((0.0, 0.0), vec![3.0; 16], 1.0);
        let clipped = p.rasterize(Some((10, 10)));
        assert!(clipped.pixels().all(|(r, c)| r >= 0 && c >= 0));
        let full = p.rasterize(None);
        assert_eq!(
            clipped.area(),
            full.pixels().filter(|&(r, c)| r >= 0 && c >= 0).count()
        );
    }

    proptest! {
        #[test]
        fn raster_matches_crossing_test(
            radii in proptest::collection::vec(0.0f32..15.0, 8),
            cr in -5.0f64..5.0, cc in -5.0f64..5.0,
        ) {
            let p = StarPolygon::new((cr.round(), cc.round()), radii, 1.0);
            let spans: std::collections::BTreeSet<_> = p.rasterize(None).pixels().collect();
            prop_assert_eq!(spans, brute_pixels(&p));
        }

        #[test]
        fn iou_is_symmetric(
            ra in proptest::collection::vec(1.0f32..10.0, 8),
            rb in proptest::collection::vec(1.0f32..10.0, 8),
            shift in -8.0f64..8.0,
        ) {
            let a = StarPolygon::new((0.0, 0.0), ra, 1.0);
            let b = StarPolygon::new((1.0, shift.round()), rb, 1.0);
            let (ab, ba) = (polygon_iou(&a, &b), polygon_iou(&b, &a));
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(polygon_iou(&a, &a), 1.0);
        }
    }
}
