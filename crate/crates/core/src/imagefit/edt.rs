//! Exact Euclidean distance transform and bilinear field sampling.

use super::camera::Vec2;
use super::raster::Mask;
use crate::{Error, Result};

/// Per-pixel distance (in pixels) from each pixel center to the nearest set
/// pixel center.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Linear-time exact distance transform (Meijster, Roerdink and Hesselink).
pub fn distance_transform(mask: &Mask) -> Result<DistanceField> {
    let sq = squared_distance_transform(mask)?;
    Ok(DistanceField {
        width: mask.width,
        height: mask.height,
        data: sq.into_iter().map(|d| (d as f64).sqrt()).collect(),
    })
}

/// Squared distances as exact integers.
pub fn squared_distance_transform(mask: &Mask) -> Result<Vec<i64>> {
    if mask.is_empty() {
        return Err(Error::Empty("mask for distance transform"));
    }
    let (w, h) = (mask.width, mask.height);
    let inf = (w + h) as i64;
    let mut g = vec![0i64; w * h];
    for x in 0..w {
        g[x] = if mask.get(x, 0) { 0 } else { inf };
        for y in 1..h {
            g[y * w + x] = if mask.get(x, y) {
                0
            } else {
                1 + g[(y - 1) * w + x]
            };
        }
        for y in (0..h.saturating_sub(1)).rev() {
            if g[(y + 1) * w + x] < g[y * w + x] {
                g[y * w + x] = 1 + g[(y + 1) * w + x];
            }
        }
    }
    let mut out = vec![0i64; w * h];
    let mut s = vec![0i64; w];
    let mut t = vec![0i64; w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: i64| (x - i) * (x - i) + row[i as usize] * row[i as usize];
        let sep = |i: i64, u: i64| {
            let gi = row[i as usize];
            let gu = row[u as usize];
            (u * u - i * i + gu * gu - gi * gi).div_euclid(2 * (u - i))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w as i64 {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let next = 1 + sep(s[q as usize], u);
                if next < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = next;
                }
            }
        }
        for u in (0..w as i64).rev() {
            out[y * w + u as usize] = f(u, s[q as usize]);
            if u == t[q as usize] {
                q -= 1;
            }
        }
    }
    Ok(out)
}

impl DistanceField {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear interpolation between pixel centers, with the gradient.
    /// Outside the grid of centers the border value is extended by the
    /// distance to the border.
    pub fn sample(&self, p: &Vec2) -> (f64, Vec2) {
        let u = p.x - 0.5;
        let v = p.y - 0.5;
        let maxu = (self.width - 1) as f64;
        let maxv = (self.height - 1) as f64;
        let cu = u.clamp(0.0, maxu);
        let cv = v.clamp(0.0, maxv);
        let i0 = (cu.floor() as usize).min(self.width.saturating_sub(2));
        let j0 = (cv.floor() as usize).min(self.height.saturating_sub(2));
        let i1 = (i0 + 1).min(self.width - 1);
        let j1 = (j0 + 1).min(self.height - 1);
        let a = if i1 > i0 { cu - i0 as f64 } else { 0.0 };
        let b = if j1 > j0 { cv - j0 as f64 } else { 0.0 };
        let d00 = self.at(i0, j0);
        let d10 = self.at(i1, j0);
        let d01 = self.at(i0, j1);
        let d11 = self.at(i1, j1);
        let value =
            (1.0 - a) * (1.0 - b) * d00 + a * (1.0 - b) * d10 + (1.0 - a) * b * d01 + a * b * d11;
        let mut grad = Vec2::new(
            if i1 > i0 && u == cu {
                (1.0 - b) * (d10 - d00) + b * (d11 - d01)
            } else {
                0.0
            },
            if j1 > j0 && v == cv {
                (1.0 - a) * (d01 - d00) + a * (d11 - d10)
            } else {
                0.0
            },
        );
        let off = Vec2::new(u - cu, v - cv);
        let n = off.norm();
        if n > 0.0 {
            grad += off / n;
        }
        (value + n, grad)
    }
}
