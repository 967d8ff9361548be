//! Coordinate scaling between resolutions.

use super::DataError;

/// Maps a point (x, y) from a `(H, W)` frame to another by per-axis scaling,
/// clamping the result into the destination's continuous extent `[0, W]x[0, H]`.
/// In-range inputs never clamp; the clamp only catches out-of-frame points.
pub fn map_coords(
    point: (f64, f64),
    from_shape: (u32, u32),
    to_shape: (u32, u32),
) -> Result<(f64, f64), DataError> {
    let (fh, fw) = from_shape;
    let (th, tw) = to_shape;
    if fh == 0 || fw == 0 || th == 0 || tw == 0 {
        return Err(DataError::ZeroShape);
    }
    let x = (point.0 * tw as f64 / fw as f64).clamp(0.0, tw as f64);
    let y = (point.1 * th as f64 / fh as f64).clamp(0.0, th as f64);
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_mapping() {
        assert_eq!(map_coords((128.0, 128.0), (256, 256), (256, 256)).unwrap(), (128.0, 128.0));
    }

    #[test]
    fn upscale_to_domain2_native() {
        let (x, y) = map_coords((128.0, 128.0), (256, 256), (1634, 1634)).unwrap();
        assert_eq!((x, y), (817.0, 817.0)); // 128 * 1634 / 256
    }

    #[test]
    fn zero_shape_is_rejected() {
        assert!(matches!(
            map_coords((1.0, 1.0), (0, 256), (256, 256)),
            Err(DataError::ZeroShape)
        ));
    }

    #[test]
    fn roundtrip_with_quantization_stays_bounded() {
        // native -> 256 -> round-to-pixel -> native, over a coordinate grid
        let native = 1634u32;
        let bound = ((native as f64 / 256.0) / 2.0).ceil();
        let mut worst = 0f64;
        for gy in 0..20 {
            for gx in 0..20 {
                let p = (gx as f64 * (native - 1) as f64 / 19.0, gy as f64 * (native - 1) as f64 / 19.0);
                let (sx, sy) = map_coords(p, (native, native), (256, 256)).unwrap();
                let q = (sx.round(), sy.round());
                let (bx, by) = map_coords(q, (256, 256), (native, native)).unwrap();
                worst = worst.max((bx - p.0).abs()).max((by - p.1).abs());
            }
        }
        assert!(worst <= bound, "worst {worst} > bound {bound}");
    }
}
