//! Geometric warps (affine + homography) and HSV-space color jitter on
//! channel-first f32 arrays in [0, 255].

use ndarray::{Array2, Array3};

use crate::util::sample_bilinear;

/// Row-major 2x3 affine matrix mapping input points to output points.
pub type Affine = [[f64; 3]; 2];

pub const IDENTITY_AFFINE: Affine = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

/// Rotation (degrees) and isotropic scale about the frame center, then
/// translation. The center is the pixel-grid center ((W-1)/2, (H-1)/2).
pub fn affine_about_center(
    angle_deg: f64,
    scale: f64,
    translate: (f64, f64),
    frame: (usize, usize),
) -> Affine {
    let (h, w) = frame;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let rad = angle_deg.to_radians();
    let (sin, cos) = (rad.sin(), rad.cos());
    let (a, b) = (scale * cos, -scale * sin);
    let (c, d) = (scale * sin, scale * cos);
    [
        [a, b, cx - a * cx - b * cy + translate.0],
        [c, d, cy - c * cx - d * cy + translate.1],
    ]
}

pub fn affine_apply(m: &Affine, p: (f64, f64)) -> (f64, f64) {
    (
        m[0][0] * p.0 + m[0][1] * p.1 + m[0][2],
        m[1][0] * p.0 + m[1][1] * p.1 + m[1][2],
    )
}

pub fn affine_det(m: &Affine) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn affine_invert(m: &Affine) -> Affine {
    let det = affine_det(m);
    let inv = 1.0 / det;
    let (a, b, c) = (m[0][0], m[0][1], m[0][2]);
    let (d, e, f) = (m[1][0], m[1][1], m[1][2]);
    [
        [e * inv, -b * inv, (b * f - c * e) * inv],
        [-d * inv, a * inv, (c * d - a * f) * inv],
    ]
}

pub fn is_identity_affine(m: &Affine) -> bool {
    *m == IDENTITY_AFFINE
}

/// Warps a scalar map so content moves by `m`: out[q] = in[m^-1(q)].
/// Bilinear sampling with edge clamping; exact for the identity matrix.
pub fn warp_map_affine(map: &Array2<f32>, m: &Affine) -> Array2<f32> {
    if is_identity_affine(m) {
        return map.clone();
    }
    let (h, w) = map.dim();
    let inv = affine_invert(m);
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = affine_apply(&inv, (x as f64, y as f64));
            out[(y, x)] = sample_bilinear(map, sy, sx);
        }
    }
    out
}

/// Nearest-neighbour variant for label maps; samples are clamped to the
/// frame so the label alphabet is preserved.
pub fn warp_labels_affine(map: &Array2<u8>, m: &Affine) -> Array2<u8> {
    if is_identity_affine(m) {
        return map.clone();
    }
    let (h, w) = map.dim();
    let inv = affine_invert(m);
    let mut out = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = affine_apply(&inv, (x as f64, y as f64));
            let iy = sy.round().clamp(0.0, (h - 1) as f64) as usize;
            let ix = sx.round().clamp(0.0, (w - 1) as f64) as usize;
            out[(y, x)] = map[(iy, ix)];
        }
    }
    out
}

/// 3x3 homography from four point correspondences (unit last entry).
/// Returns None for degenerate configurations.
pub fn homography_from_corners(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<[[f64; 3]; 3]> {
    // 8x8 linear system A h = b for h = (h00..h21)
    let mut a = [[0f64; 9]; 8];
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // gaussian elimination with partial pivoting on the augmented system
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for k in col..9 {
            a[col][k] /= p;
        }
        for row in 0..8 {
            if row != col {
                let f = a[row][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| a[i][8]).collect();
    Some([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

pub fn homography_apply(h: &[[f64; 3]; 3], p: (f64, f64)) -> (f64, f64) {
    let z = h[2][0] * p.0 + h[2][1] * p.1 + h[2][2];
    (
        (h[0][0] * p.0 + h[0][1] * p.1 + h[0][2]) / z,
        (h[1][0] * p.0 + h[1][1] * p.1 + h[1][2]) / z,
    )
}

pub fn homography_invert(h: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let m = h;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = 1.0 / det;
    let c = |r: usize, c0: usize| -> f64 {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (c1, c2) = ((c0 + 1) % 3, (c0 + 2) % 3);
        m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
    };
    // adjugate transpose
    let mut out = [[0f64; 3]; 3];
    for r in 0..3 {
        for c0 in 0..3 {
            out[r][c0] = c(c0, r) * inv;
        }
    }
    Some(out)
}

pub fn warp_map_homography(map: &Array2<f32>, h: &[[f64; 3]; 3]) -> Array2<f32> {
    let inv = homography_invert(h).expect("invertible homography");
    let (hh, ww) = map.dim();
    let mut out = Array2::<f32>::zeros((hh, ww));
    for y in 0..hh {
        for x in 0..ww {
            let (sx, sy) = homography_apply(&inv, (x as f64, y as f64));
            out[(y, x)] = sample_bilinear(map, sy, sx);
        }
    }
    out
}

/// RGB [0,255] -> HSV with h in [0,360), s,v in [0,1].
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let (r, g, b) = (r / 255.0, g / 255.0, b / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

/// HSV back to RGB [0,255].
pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0).rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    ((r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0)
}

/// Applies a per-pixel HSV adjustment to a (3, H, W) image in place.
pub fn adjust_hsv(image: &mut Array3<f32>, hue_shift_deg: f32, sat_factor: f32, val_factor: f32) {
    let (_, h, w) = image.dim();
    for y in 0..h {
        for x in 0..w {
            let (hh, ss, vv) = rgb_to_hsv(image[(0, y, x)], image[(1, y, x)], image[(2, y, x)]);
            let (r, g, b) = hsv_to_rgb(
                hh + hue_shift_deg,
                (ss * sat_factor).clamp(0.0, 1.0),
                (vv * val_factor).clamp(0.0, 1.0),
            );
            image[(0, y, x)] = r.clamp(0.0, 255.0);
            image[(1, y, x)] = g.clamp(0.0, 255.0);
            image[(2, y, x)] = b.clamp(0.0, 255.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_inverse_roundtrips_points() {
        let m = affine_about_center(17.0, 1.1, (4.0, -7.0), (64, 64));
        let inv = affine_invert(&m);
        for p in [(0.0, 0.0), (10.5, 20.25), (63.0, 63.0)] {
            let q = affine_apply(&m, p);
            let r = affine_apply(&inv, q);
            assert!((r.0 - p.0).abs() < 1e-9 && (r.1 - p.1).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_warp_is_bitwise_exact() {
        let map = Array2::from_shape_fn((16, 16), |(y, x)| (y * 16 + x) as f32 * 0.37);
        let out = warp_map_affine(&map, &IDENTITY_AFFINE);
        assert_eq!(out, map);
    }

    #[test]
    fn homography_maps_corners() {
        let src = [(0.0, 0.0), (63.0, 0.0), (63.0, 63.0), (0.0, 63.0)];
        let dst = [(2.0, 1.0), (60.0, 3.0), (61.0, 62.0), (1.0, 60.0)];
        let h = homography_from_corners(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(dst.iter()) {
            let m = homography_apply(&h, *s);
            assert!((m.0 - d.0).abs() < 1e-6 && (m.1 - d.1).abs() < 1e-6);
        }
        let inv = homography_invert(&h).unwrap();
        for (s, d) in src.iter().zip(dst.iter()) {
            let m = homography_apply(&inv, *d);
            assert!((m.0 - s.0).abs() < 1e-6 && (m.1 - s.1).abs() < 1e-6);
        }
    }

    #[test]
    fn hsv_roundtrip() {
        for (r, g, b) in [(12.0, 240.0, 100.0), (255.0, 0.0, 0.0), (37.0, 37.0, 37.0)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 0.01 && (g - g2).abs() < 0.01 && (b - b2).abs() < 0.01);
        }
    }
}
