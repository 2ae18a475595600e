//! Finite-difference gradients shared by the HV energy map and the MSGE loss.
//!
//! Central differences in the interior, one-sided differences on the first
//! and last row/column, zero along an axis of length 1.

/// Derivative along columns of a row-major `height x width` plane.
pub fn grad_x(plane: &[f32], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    if width < 2 {
        return out;
    }
    for r in 0..height {
        let row = &plane[r * width..(r + 1) * width];
        let dst = &mut out[r * width..(r + 1) * width];
        dst[0] = row[1] as f64 - row[0] as f64;
        dst[width - 1] = row[width - 1] as f64 - row[width - 2] as f64;
        for c in 1..width - 1 {
            dst[c] = (row[c + 1] as f64 - row[c - 1] as f64) / 2.0;
        }
    }
    out
}

/// Derivative along rows of a row-major `height x width` plane.
pub fn grad_y(plane: &[f32], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    if height < 2 {
        return out;
    }
    let at = |r: usize, c: usize| plane[r * width + c] as f64;
    for c in 0..width {
        out[c] = at(1, c) - at(0, c);
        out[(height - 1) * width + c] = at(height - 1, c) - at(height - 2, c);
    }
    for r in 1..height - 1 {
        for c in 0..width {
            out[r * width + c] = (at(r + 1, c) - at(r - 1, c)) / 2.0;
        }
    }
    out
}
