//! Greyscale image export of quad density fields.

use std::io::Write;

use crate::error::{Error, Result};

/// Densities below this render as void.
pub const DEFAULT_VOID_THRESHOLD: f64 = 1e-2;

/// Grey level of one density: solid is black, void white.
pub fn grey_level(theta: f64, threshold: f64) -> u8 {
    if theta < threshold {
        return 255;
    }
    (255.0 * (1.0 - theta.clamp(0.0, 1.0))).round() as u8
}

/// Binary PGM (P5) of an `nx × ny` quad field stored row-major from the
/// bottom-left; the image is written top row first.
pub fn write_pgm<W: Write>(mut w: W, theta: &[f64], nx: usize, ny: usize, threshold: f64) -> Result<()> {
    if theta.len() != nx * ny {
        return Err(Error::DimensionMismatch { expected: nx * ny, actual: theta.len() });
    }
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    let mut row = Vec::with_capacity(nx);
    for j in (0..ny).rev() {
        row.clear();
        row.extend(theta[j * nx..(j + 1) * nx].iter().map(|&t| grey_level(t, threshold)));
        w.write_all(&row)?;
    }
    w.flush()?;
    Ok(())
}
