//! Three-class segmentation masks (background / optic disc / optic cup) and
//! their grayscale PNG encoding.

use std::path::Path;

use image::GrayImage;
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("mask {path} contains value {value} outside the label alphabet")]
    BadValue { path: std::path::PathBuf, value: u8 },
}

/// In-memory label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MaskClass {
    Background = 0,
    Disc = 1,
    Cup = 2,
}

/// Resolution a mask is expressed in: a square ROI crop of a given side, or
/// the source image's native grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MaskResolution {
    Roi(u32),
    Native,
}

/// Grayscale values used on disk; the common challenge convention.
#[derive(Debug, Clone, Copy)]
pub struct MaskEncoding {
    pub cup: u8,
    pub disc: u8,
    pub background: u8,
}

impl Default for MaskEncoding {
    fn default() -> Self {
        Self {
            cup: 0,
            disc: 128,
            background: 255,
        }
    }
}

/// Per-pixel labeling over {background, disc, cup}.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    /// 0 = background, 1 = disc, 2 = cup.
    pub labels: Array2<u8>,
    pub resolution: MaskResolution,
}

impl SegMask {
    pub fn new(labels: Array2<u8>, resolution: MaskResolution) -> Self {
        debug_assert!(labels.iter().all(|&v| v <= 2), "label outside alphabet");
        Self { labels, resolution }
    }

    pub fn filled(h: usize, w: usize, class: MaskClass, resolution: MaskResolution) -> Self {
        Self {
            labels: Array2::from_elem((h, w), class as u8),
            resolution,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }

    /// Count of pixels labeled exactly `class`.
    pub fn count(&self, class: MaskClass) -> usize {
        let v = class as u8;
        self.labels.iter().filter(|&&l| l == v).count()
    }

    /// Pixels belonging to the anatomical disc, i.e. disc or cup labels.
    pub fn disc_support(&self) -> Array2<bool> {
        self.labels.mapv(|l| l == MaskClass::Disc as u8 || l == MaskClass::Cup as u8)
    }

    /// Centroid (x, y) of cup pixels, if any.
    pub fn cup_centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0f64, 0f64);
        for ((y, x), &l) in self.labels.indexed_iter() {
            if l == MaskClass::Cup as u8 {
                n += 1;
                sx += x as f64;
                sy += y as f64;
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Checks that every label is in the alphabet.
    pub fn validate_alphabet(&self) -> Result<(), u8> {
        match self.labels.iter().find(|&&v| v > 2) {
            Some(&v) => Err(v),
            None => Ok(()),
        }
    }

    pub fn to_gray(&self, enc: MaskEncoding) -> GrayImage {
        let (h, w) = self.labels.dim();
        let mut img = GrayImage::new(w as u32, h as u32);
        for ((y, x), &l) in self.labels.indexed_iter() {
            let v = match l {
                0 => enc.background,
                1 => enc.disc,
                _ => enc.cup,
            };
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
        img
    }

    pub fn save_png(&self, path: &Path, enc: MaskEncoding) -> Result<(), MaskError> {
        self.to_gray(enc).save(path).map_err(|source| MaskError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path, enc: MaskEncoding, resolution: MaskResolution) -> Result<Self, MaskError> {
        let img = image::open(path)
            .map_err(|source| MaskError::Io {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        let mut labels = Array2::<u8>::zeros((h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            let v = p.0[0];
            let label = if v == enc.background {
                0
            } else if v == enc.disc {
                1
            } else if v == enc.cup {
                2
            } else {
                return Err(MaskError::BadValue {
                    path: path.to_path_buf(),
                    value: v,
                });
            };
            labels[(y as usize, x as usize)] = label;
        }
        Ok(Self { labels, resolution })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let labels = Array2::from_shape_fn((8, 8), |(y, x)| ((y + x) % 3) as u8);
        let mask = SegMask::new(labels, MaskResolution::Roi(8));
        mask.save_png(&path, MaskEncoding::default()).unwrap();
        let back = SegMask::load_png(&path, MaskEncoding::default(), MaskResolution::Roi(8)).unwrap();
        assert_eq!(mask.labels, back.labels);
    }

    #[test]
    fn unknown_gray_value_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        let img = GrayImage::from_pixel(4, 4, image::Luma([7]));
        img.save(&path).unwrap();
        let err = SegMask::load_png(&path, MaskEncoding::default(), MaskResolution::Native);
        assert!(matches!(err, Err(MaskError::BadValue { value: 7, .. })));
    }

    #[test]
    fn cup_centroid_of_block() {
        let mut labels = Array2::<u8>::zeros((10, 10));
        for y in 2..5 {
            for x in 4..8 {
                labels[(y, x)] = 2;
            }
        }
        let mask = SegMask::new(labels, MaskResolution::Native);
        let (cx, cy) = mask.cup_centroid().unwrap();
        assert!((cx - 5.5).abs() < 1e-9);
        assert!((cy - 3.0).abs() < 1e-9);
    }
}
