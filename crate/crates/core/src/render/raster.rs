//! Aliased raster primitives. Pixel `(i, j)` has its center at integer
//! coordinates `(i, j)`.

use nalgebra::Vector2;

use super::frame::KvafFrame;

/// Offsets covered by a square brush of side `thickness`.
#[inline]
pub fn brush_offsets(thickness: u32) -> std::ops::RangeInclusive<i64> {
    let t = thickness.max(1) as i64;
    -((t - 1) / 2)..=(t / 2)
}

/// Clips the segment to `[lo, hi]²` (Liang–Barsky). Returns the parameter
/// interval kept, or `None` when the segment misses the box.
pub fn clip_segment(p0: Vector2<f64>, p1: Vector2<f64>, lo: Vector2<f64>, hi: Vector2<f64>) -> Option<(f64, f64)> {
    let d = p1 - p0;
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for axis in 0..2 {
        for (p, q) in [(-d[axis], p0[axis] - lo[axis]), (d[axis], hi[axis] - p0[axis])] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Integer Bresenham walk from `a` to `b`, both included.
pub fn bresenham(a: (i64, i64), b: (i64, i64), mut visit: impl FnMut(i64, i64, usize, usize)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let steps = dx.max(-dy) as usize;
    let mut err = dx + dy;
    for k in 0..=steps {
        visit(x, y, k, steps);
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws a thick aliased segment, overwriting pixels. `color(s)` is queried
/// with the position `s ∈ [0, 1]` along the original (unclipped) segment.
pub fn draw_segment(canvas: &mut KvafFrame, p0: Vector2<f64>, p1: Vector2<f64>, thickness: u32, color: impl Fn(f64) -> [f64; 3]) {
    if !(p0.iter().chain(p1.iter()).all(|v| v.is_finite())) {
        return;
    }
    let pad = thickness as f64 + 1.0;
    let lo = Vector2::new(-pad, -pad);
    let hi = Vector2::new(canvas.width() as f64 - 1.0 + pad, canvas.height() as f64 - 1.0 + pad);
    let Some((s0, s1)) = clip_segment(p0, p1, lo, hi) else {
        return;
    };
    let a = p0 + (p1 - p0) * s0;
    let b = p0 + (p1 - p0) * s1;
    let ai = (a.x.round() as i64, a.y.round() as i64);
    let bi = (b.x.round() as i64, b.y.round() as i64);
    let offsets = brush_offsets(thickness);
    bresenham(ai, bi, |x, y, k, n| {
        let frac = if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let rgb = color(s0 + (s1 - s0) * frac);
        for oy in offsets.clone() {
            for ox in offsets.clone() {
                canvas.put(x + ox, y + oy, rgb);
            }
        }
    });
}

/// Filled disc of pixels within `radius` of the rounded center.
pub fn draw_disc(canvas: &mut KvafFrame, center: Vector2<f64>, radius: u32, rgb: [f64; 3]) {
    if !center.iter().all(|v| v.is_finite()) {
        return;
    }
    let r = radius as i64;
    let (cx, cy) = (center.x.round(), center.y.round());
    let w = canvas.width() as f64;
    let h = canvas.height() as f64;
    if cx < -(r as f64) || cy < -(r as f64) || cx > w + r as f64 || cy > h + r as f64 {
        return;
    }
    let (cx, cy) = (cx as i64, cy as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                canvas.put(cx + dx, cy + dy, rgb);
            }
        }
    }
}

/// Truncated Gaussian `exp(−d²/2σ²) · 1[d ≤ r]`, max-composited into the
/// channels selected by `mask`.
pub fn splat_gaussian(canvas: &mut KvafFrame, center: Vector2<f64>, sigma: f64, radius: f64, mask: [bool; 3]) {
    if !center.iter().all(|v| v.is_finite()) {
        return;
    }
    let x0 = (center.x - radius).floor().max(0.0);
    let x1 = (center.x + radius).ceil().min(canvas.width() as f64 - 1.0);
    let y0 = (center.y - radius).floor().max(0.0);
    let y1 = (center.y + radius).ceil().min(canvas.height() as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in y0 as i64..=y1 as i64 {
        for x in x0 as i64..=x1 as i64 {
            let d2 = (x as f64 - center.x).powi(2) + (y as f64 - center.y).powi(2);
            if d2 <= radius * radius {
                canvas.max_into(x, y, (-d2 * inv).exp(), mask);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(f: &KvafFrame) -> Vec<(usize, usize)> {
        f.non_black_pixels().collect()
    }

    #[test]
    fn diagonal_unit_line() {
        let mut f = KvafFrame::black(8, 8);
        draw_segment(&mut f, Vector2::new(0.0, 0.0), Vector2::new(3.0, 3.0), 1, |_| [1.0; 3]);
        assert_eq!(lit(&f), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn horizontal_thick_line_covers_band() {
        let mut f = KvafFrame::black(20, 10);
        draw_segment(&mut f, Vector2::new(2.0, 5.0), Vector2::new(15.0, 5.0), 3, |_| [1.0; 3]);
        for (x, y) in lit(&f) {
            assert!((4..=6).contains(&y) && (1..=16).contains(&x), "({x},{y})");
        }
        assert_eq!(lit(&f).len(), 16 * 3);
    }

    #[test]
    fn far_off_canvas_segment_is_clipped_cheaply() {
        let mut f = KvafFrame::black(10, 10);
        draw_segment(&mut f, Vector2::new(-1e12, 5.0), Vector2::new(1e12, 5.0), 1, |_| [1.0; 3]);
        assert_eq!(lit(&f).len(), 10);
        let mut g = KvafFrame::black(10, 10);
        draw_segment(&mut g, Vector2::new(-50.0, -50.0), Vector2::new(-20.0, -5.0), 1, |_| [1.0; 3]);
        assert!(g.is_black());
    }

    #[test]
    fn bresenham_matches_reference_for_all_octants() {
        // reference: for |dy| ≤ |dx| step x and round y (ties away from the start)
        for (bx, by) in [(7, 3), (-7, 3), (3, -7), (-3, -7), (7, 0), (0, -7), (5, 5)] {
            let mut pts = Vec::new();
            bresenham((0, 0), (bx, by), |x, y, _, _| pts.push((x, y)));
            assert_eq!(pts.first(), Some(&(0, 0)));
            assert_eq!(pts.last(), Some(&(bx, by)));
            assert_eq!(pts.len() as i64, bx.abs().max(by.abs()) + 1);
            for w in pts.windows(2) {
                assert!((w[1].0 - w[0].0).abs() <= 1 && (w[1].1 - w[0].1).abs() <= 1);
            }
            let major_x = bx.abs() >= by.abs();
            for &(x, y) in &pts {
                let (ma, mi, dma, dmi) = if major_x { (x, y, bx, by) } else { (y, x, by, bx) };
                let ideal = ma as f64 * dmi as f64 / dma as f64;
                assert!((mi as f64 - ideal).abs() <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_values() {
        let mut f = KvafFrame::black(64, 64);
        splat_gaussian(&mut f, Vector2::new(20.0, 30.0), 6.0, 18.0, [true, false, false]);
        assert_eq!(f.get(20, 30)[0], 1.0);
        assert!((f.get(26, 30)[0] - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(f.get(20 + 19, 30)[0], 0.0);
        assert_eq!(f.get(20 + 18, 30)[0], (-(18.0f64 * 18.0) / 72.0).exp());
        assert_eq!(f.get(20, 30)[1], 0.0);
    }
}
