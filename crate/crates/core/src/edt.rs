//! Exact squared Euclidean distance transform (lower envelope of parabolas,
//! applied separably along columns and then rows).

/// Squared distance from every pixel to the nearest `true` pixel of `sites`.
/// Pixels with no site anywhere get `f64::INFINITY`.
pub(crate) fn squared_edt(sites: &[bool], height: usize, width: usize) -> Vec<f64> {
    debug_assert_eq!(sites.len(), height * width);
    let mut grid: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();

    let mut line = vec![0.0; height.max(width)];
    let mut out = vec![0.0; height.max(width)];
    let mut scratch = Envelope::with_capacity(height.max(width));

    for col in 0..width {
        for row in 0..height {
            line[row] = grid[row * width + col];
        }
        scratch.transform(&line[..height], &mut out[..height]);
        for row in 0..height {
            grid[row * width + col] = out[row];
        }
    }
    for row in 0..height {
        let span = &mut grid[row * width..(row + 1) * width];
        line[..width].copy_from_slice(span);
        scratch.transform(&line[..width], &mut out[..width]);
        span.copy_from_slice(&out[..width]);
    }
    grid
}

struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }

    /// One-dimensional transform: `out[q] = min_p (q - p)^2 + f[p]`.
    fn transform(&mut self, f: &[f64], out: &mut [f64]) {
        let n = f.len();
        if n == 0 {
            return;
        }
        let first = match f.iter().position(|v| v.is_finite()) {
            Some(p) => p,
            None => {
                out.fill(f64::INFINITY);
                return;
            }
        };
        let v = &mut self.vertices;
        let z = &mut self.bounds;
        let mut k = 0usize;
        v[0] = first;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in first + 1..n {
            if !f[q].is_finite() {
                continue;
            }
            let intersect = |p: usize| {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
            };
            let mut s = intersect(v[k]);
            // z[0] is -inf, so this stops at k = 0 at the latest
            while s <= z[k] {
                k -= 1;
                s = intersect(v[k]);
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        let mut k = 0usize;
        for (q, o) in out.iter_mut().enumerate() {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let p = v[k];
            let d = q as f64 - p as f64;
            *o = d * d + f[p];
        }
    }
}
