//! Region-of-interest cropping around the optic cup center, with the
//! bookkeeping needed to paste predictions back at native resolution.

use image::RgbImage;
use ndarray::Array2;

use super::DataError;
use crate::mask::{MaskClass, MaskResolution, SegMask};

/// Where a square ROI patch came from: the native-resolution offset of its
/// top-left corner (possibly negative at image borders) and the native size.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CropRecord {
    pub offset_x: i64,
    pub offset_y: i64,
    pub size: u32,
    pub native_w: u32,
    pub native_h: u32,
}

impl CropRecord {
    /// Pastes an ROI-resolution mask into a background-filled native canvas.
    /// Only the in-bounds part of the crop window is written.
    pub fn paste_mask(&self, roi_mask: &SegMask) -> SegMask {
        let (mh, mw) = roi_mask.dims();
        assert_eq!((mh as u32, mw as u32), (self.size, self.size), "mask must be at ROI size");
        let (nh, nw) = (self.native_h as usize, self.native_w as usize);
        let mut labels = Array2::from_elem((nh, nw), MaskClass::Background as u8);
        for y in 0..mh {
            for x in 0..mw {
                let ny = self.offset_y + y as i64;
                let nx = self.offset_x + x as i64;
                if ny >= 0 && ny < nh as i64 && nx >= 0 && nx < nw as i64 {
                    labels[(ny as usize, nx as usize)] = roi_mask.labels[(y, x)];
                }
            }
        }
        SegMask::new(labels, MaskResolution::Native)
    }

    /// Pastes a patch back over a native-size canvas (in-bounds region only).
    pub fn paste_patch(&self, patch: &RgbImage, canvas: &mut RgbImage) {
        assert_eq!(patch.dimensions(), (self.size, self.size), "patch must be at ROI size");
        assert_eq!(canvas.dimensions(), (self.native_w, self.native_h), "canvas size");
        for (x, y, p) in patch.enumerate_pixels() {
            let ny = self.offset_y + y as i64;
            let nx = self.offset_x + x as i64;
            if ny >= 0 && ny < self.native_h as i64 && nx >= 0 && nx < self.native_w as i64 {
                canvas.put_pixel(nx as u32, ny as u32, *p);
            }
        }
    }

    /// Maps an ROI coordinate back to native coordinates.
    pub fn roi_to_native(&self, x: f64, y: f64) -> (f64, f64) {
        (x + self.offset_x as f64, y + self.offset_y as f64)
    }
}

/// Crops a `size`x`size` patch centered on `center` (rounded to the nearest
/// pixel). Out-of-bounds regions are filled by edge replication.
pub fn crop_roi(
    image: &RgbImage,
    center: (f64, f64),
    size: u32,
) -> Result<(RgbImage, CropRecord), DataError> {
    let (w, h) = image.dimensions();
    let (cx, cy) = center;
    if cx < 0.0 || cy < 0.0 || cx > (w - 1) as f64 || cy > (h - 1) as f64 {
        return Err(DataError::CenterOutOfBounds { x: cx, y: cy, w, h });
    }
    if size > w && size > h {
        return Err(DataError::CropTooLarge { size, w, h });
    }
    let half = (size / 2) as i64;
    let ox = cx.round() as i64 - half;
    let oy = cy.round() as i64 - half;
    let mut patch = RgbImage::new(size, size);
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            let sx = (ox + x).clamp(0, (w - 1) as i64) as u32;
            let sy = (oy + y).clamp(0, (h - 1) as i64) as u32;
            patch.put_pixel(x as u32, y as u32, *image.get_pixel(sx, sy));
        }
    }
    Ok((
        patch,
        CropRecord {
            offset_x: ox,
            offset_y: oy,
            size,
            native_w: w,
            native_h: h,
        },
    ))
}

/// Crops a native mask with the same window and edge replication, tagging the
/// result as ROI resolution.
pub fn crop_mask(mask: &SegMask, record: &CropRecord) -> SegMask {
    let (h, w) = mask.dims();
    let size = record.size as usize;
    let mut labels = Array2::<u8>::zeros((size, size));
    for y in 0..size {
        for x in 0..size {
            let sy = (record.offset_y + y as i64).clamp(0, h as i64 - 1) as usize;
            let sx = (record.offset_x + x as i64).clamp(0, w as i64 - 1) as usize;
            labels[(y, x)] = mask.labels[(sy, sx)];
        }
    }
    SegMask::new(labels, MaskResolution::Roi(record.size))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]);
        }
        img
    }

    #[test]
    fn interior_crop_offset_matches_center() {
        // domain-2 native size, crop at the image center
        let img = gradient_image(1634, 1634);
        let (patch, rec) = crop_roi(&img, (817.0, 817.0), 500).unwrap();
        assert_eq!(patch.dimensions(), (500, 500));
        assert_eq!((rec.offset_x, rec.offset_y), (817 - 250, 817 - 250));
        // fully interior: pixels equal the source window
        assert_eq!(patch.get_pixel(0, 0), img.get_pixel(567, 567));
        assert_eq!(patch.get_pixel(499, 499), img.get_pixel(1066, 1066));
    }

    #[test]
    fn corner_crop_replicates_edges() {
        let img = gradient_image(600, 600);
        let (patch, rec) = crop_roi(&img, (0.0, 0.0), 500).unwrap();
        assert_eq!((rec.offset_x, rec.offset_y), (-250, -250));
        // the top-left 250x250 quadrant replicates the corner pixel
        let corner = *img.get_pixel(0, 0);
        for y in 0..250 {
            for x in 0..250 {
                assert_eq!(*patch.get_pixel(x, y), corner);
            }
        }
        // the bottom-right quadrant holds the original top-left of the image
        assert_eq!(*patch.get_pixel(250, 250), *img.get_pixel(0, 0));
        assert_eq!(*patch.get_pixel(499, 499), *img.get_pixel(249, 249));
    }

    #[test]
    fn paste_back_restores_window() {
        let img = gradient_image(700, 640);
        let (patch, rec) = crop_roi(&img, (350.0, 320.0), 500).unwrap();
        let mut canvas = img.clone();
        // blank the window then paste the unmodified patch back
        for y in 0..640 {
            for x in 0..700 {
                canvas.put_pixel(x, y, image::Rgb([0, 0, 0]));
            }
        }
        rec.paste_patch(&patch, &mut canvas);
        for y in 0..rec.size as i64 {
            for x in 0..rec.size as i64 {
                let (nx, ny) = (rec.offset_x + x, rec.offset_y + y);
                if nx >= 0 && ny >= 0 && nx < 700 && ny < 640 {
                    assert_eq!(canvas.get_pixel(nx as u32, ny as u32), img.get_pixel(nx as u32, ny as u32));
                }
            }
        }
    }

    #[test]
    fn oversized_crop_is_rejected() {
        let img = gradient_image(300, 400);
        assert!(matches!(
            crop_roi(&img, (150.0, 200.0), 500),
            Err(DataError::CropTooLarge { .. })
        ));
        // larger than only one dimension is allowed (edge replication fills)
        assert!(crop_roi(&img, (150.0, 200.0), 350).is_ok());
    }

    #[test]
    fn center_outside_is_rejected() {
        let img = gradient_image(100, 100);
        assert!(matches!(
            crop_roi(&img, (120.0, 50.0), 50),
            Err(DataError::CenterOutOfBounds { .. })
        ));
    }

    #[test]
    fn mask_crop_and_paste_roundtrip() {
        let mut labels = Array2::<u8>::zeros((300, 300));
        for y in 100..160 {
            for x in 120..180 {
                labels[(y, x)] = 1;
            }
        }
        for y in 120..140 {
            for x in 140..160 {
                labels[(y, x)] = 2;
            }
        }
        let mask = SegMask::new(labels, MaskResolution::Native);
        let img = gradient_image(300, 300);
        let (_, rec) = crop_roi(&img, (150.0, 130.0), 128).unwrap();
        let roi_mask = crop_mask(&mask, &rec);
        let back = rec.paste_mask(&roi_mask);
        // the foreground was fully inside the interior window, so it survives
        assert_eq!(back.labels, mask.labels);
    }
}
