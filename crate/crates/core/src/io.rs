//! Plain-text and raster writers for contours and sampled fields.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sets::ContourSet;

/// Binary PGM (P5) of an `width × height` sample array, min-max scaled to 8
/// bits. Row `j = 0` of `values` is written last so that `y` points up.
pub fn write_pgm<T: Scalar, W: Write>(mut w: W, values: &[T], width: usize, height: usize) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::InvalidConfig(format!("raster needs {} values, got {}", width * height, values.len())));
    }
    let finite = values.iter().filter(|v| v.is_finite()).map(|v| v.to_f64_lossy());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    write!(w, "P5\n{width} {height}\n255\n")?;
    let mut row = vec![0u8; width];
    for j in (0..height).rev() {
        for (i, px) in row.iter_mut().enumerate() {
            let v = values[j * width + i].to_f64_lossy();
            *px = if v.is_finite() { (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 };
        }
        w.write_all(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One vertex per line, a blank line between polylines. Triangles are
/// written as closed four-vertex polylines.
pub fn write_polylines<T: Scalar, W: Write>(mut w: W, set: &ContourSet<T>) -> Result<()> {
    let mut first = true;
    let mut sep = |w: &mut W| -> Result<()> {
        if !first {
            writeln!(w)?;
        }
        first = false;
        Ok(())
    };
    for line in &set.polylines {
        sep(&mut w)?;
        for p in line {
            writeln!(w, "{:e} {:e}", p[0], p[1])?;
        }
    }
    for tri in &set.triangles {
        sep(&mut w)?;
        for p in tri.iter().chain(std::iter::once(&tri[0])) {
            writeln!(w, "{:e} {:e} {:e}", p[0], p[1], p[2])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads 2D polylines written by [`write_polylines`].
pub fn read_polylines<T: Scalar, R: BufRead>(r: R) -> Result<Vec<Vec<[T; 2]>>> {
    let mut out = Vec::new();
    let mut cur: Vec<[T; 2]> = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let vals: Vec<T> = line
            .split_whitespace()
            .map(|s| s.parse::<T>().map_err(|_| Error::parse(k + 1, format!("bad number `{s}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != 2 {
            return Err(Error::parse(k + 1, "expected two coordinates"));
        }
        cur.push([vals[0], vals[1]]);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}
