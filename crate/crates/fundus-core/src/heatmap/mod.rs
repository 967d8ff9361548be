//! Joint optic-nerve-head and fovea localization: Gaussian heatmap encoding,
//! argmax decoding, and the two-stack hourglass regressor.

mod model;
mod train;

pub use model::HourglassNet;
pub use train::{
    locate, prepare_localizer_sample, train_localizer, LocalizerHistory, LocalizerSample,
};

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("point ({x:.1},{y:.1}) outside {w}x{h} heatmap frame")]
    PointOutOfBounds { x: f64, y: f64, w: usize, h: usize },
    #[error("variance must be positive, got {0}")]
    BadVariance(f64),
    #[error("empty heatmap")]
    EmptyMap,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("training failed: {0}")]
    Train(String),
    #[error("image `{id}` lacks required annotations: {msg}")]
    MissingAnnotation { id: String, msg: String },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
}

/// Default heatmap frame side.
pub const HEATMAP_SIZE: usize = 256;

/// The two landmark heatmaps, cup center first.
#[derive(Debug, Clone)]
pub struct HeatmapPair {
    pub cup: Array2<f32>,
    pub fovea: Array2<f32>,
}

/// Hourglass regressor and training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct HourglassConfig {
    pub stacks: usize,
    pub spatial_dropout_rate: f64,
    pub input_size: usize,
    pub output_channels: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    /// Variance (sigma^2, px^2) of the target Gaussians on the heatmap grid.
    pub gaussian_variance: f64,
    /// Base feature width of the hourglass trunk.
    pub features: usize,
    /// Number of pooling levels inside each hourglass.
    pub depth: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for HourglassConfig {
    fn default() -> Self {
        Self {
            stacks: 2,
            spatial_dropout_rate: 0.2,
            input_size: 256,
            output_channels: 2,
            learning_rate: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every: 50,
            early_stop_patience: 10,
            batch_size: 8,
            gaussian_variance: 100.0,
            features: 64,
            depth: 4,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl HourglassConfig {
    pub fn validate(&self) -> Result<(), HeatmapError> {
        let err = |msg: String| Err(HeatmapError::BadConfig(msg));
        if self.stacks < 1 {
            return err("stacks must be >= 1".into());
        }
        if !(self.spatial_dropout_rate >= 0.0 && self.spatial_dropout_rate < 1.0) {
            return err(format!("dropout rate {} not in [0,1)", self.spatial_dropout_rate));
        }
        if self.input_size % (1 << self.depth) != 0 {
            return err(format!(
                "input size {} not divisible by 2^depth = {}",
                self.input_size,
                1 << self.depth
            ));
        }
        if self.gaussian_variance <= 0.0 {
            return err(format!("gaussian variance {} must be positive", self.gaussian_variance));
        }
        if self.batch_size < 1 || self.features < 2 {
            return err("batch size and features must be positive".into());
        }
        Ok(())
    }
}

/// Localized landmarks in native pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub fovea: (f64, f64),
    pub cup_center: (f64, f64),
    /// Peak heatmap intensities (cup, fovea).
    pub peak_values: (f32, f32),
    /// Set when any heatmap was constant and the argmax is meaningless.
    pub degenerate: bool,
}

/// Argmax decode outcome for one heatmap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedPeak {
    pub point: (usize, usize),
    pub value: f32,
    pub degenerate: bool,
}

/// Renders a point as a peak-normalized 2D Gaussian:
/// `map[r,c] = exp(-((c-x)^2+(r-y)^2) / (2*variance))`.
pub fn encode_heatmap(
    point: (f64, f64),
    variance: f64,
    shape: (usize, usize),
) -> Result<Array2<f32>, HeatmapError> {
    let (h, w) = shape;
    let (x, y) = point;
    if variance <= 0.0 {
        return Err(HeatmapError::BadVariance(variance));
    }
    if x < 0.0 || y < 0.0 || x > (w.saturating_sub(1)) as f64 || y > (h.saturating_sub(1)) as f64 {
        return Err(HeatmapError::PointOutOfBounds { x, y, w, h });
    }
    let inv = 1.0 / (2.0 * variance);
    let mut map = Array2::<f32>::zeros((h, w));
    for r in 0..h {
        let dy2 = (r as f64 - y) * (r as f64 - y);
        for c in 0..w {
            let dx2 = (c as f64 - x) * (c as f64 - x);
            map[(r, c)] = (-(dx2 + dy2) * inv).exp() as f32;
        }
    }
    Ok(map)
}

/// Argmax decode; ties break to the smallest row-major index. A constant map
/// decodes to (0, 0) with the degenerate flag set.
pub fn decode_heatmap(map: &Array2<f32>) -> Result<DecodedPeak, HeatmapError> {
    let (h, w) = map.dim();
    if h == 0 || w == 0 {
        return Err(HeatmapError::EmptyMap);
    }
    let mut best = (0usize, 0usize);
    let mut best_v = f32::NEG_INFINITY;
    let mut min_v = f32::INFINITY;
    for (idx, &v) in map.indexed_iter() {
        if v > best_v {
            best_v = v;
            best = idx;
        }
        if v < min_v {
            min_v = v;
        }
    }
    let (r, c) = best;
    Ok(DecodedPeak {
        point: (c, r),
        value: best_v,
        degenerate: best_v == min_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_is_one_at_the_encoded_pixel() {
        let map = encode_heatmap((128.0, 128.0), 100.0, (256, 256)).unwrap();
        assert_eq!(map[(128, 128)], 1.0);
    }

    #[test]
    fn value_at_distance_ten_matches_closed_form() {
        let map = encode_heatmap((128.0, 128.0), 100.0, (256, 256)).unwrap();
        let expected = (-100.0f64 / 200.0).exp(); // 0.6065...
        assert!((map[(128, 138)] as f64 - expected).abs() < 1e-6);
        assert!((map[(138, 128)] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = encode_heatmap((40.25, 90.75), 100.0, (128, 128)).unwrap();
        let b = encode_heatmap((40.25, 90.75), 100.0, (128, 128)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_bounds_point_is_rejected() {
        assert!(matches!(
            encode_heatmap((256.0, 10.0), 100.0, (256, 256)),
            Err(HeatmapError::PointOutOfBounds { .. })
        ));
        assert!(matches!(
            encode_heatmap((-0.5, 10.0), 100.0, (256, 256)),
            Err(HeatmapError::PointOutOfBounds { .. })
        ));
    }

    #[test]
    fn zero_variance_is_rejected() {
        assert!(matches!(
            encode_heatmap((1.0, 1.0), 0.0, (16, 16)),
            Err(HeatmapError::BadVariance(_))
        ));
    }

    #[test]
    fn decode_inverts_encode_on_integer_points() {
        for &(x, y) in &[(0usize, 0usize), (255, 255), (17, 200), (128, 3)] {
            let map = encode_heatmap((x as f64, y as f64), 100.0, (256, 256)).unwrap();
            let peak = decode_heatmap(&map).unwrap();
            assert_eq!(peak.point, (x, y));
            assert!(!peak.degenerate);
        }
    }

    #[test]
    fn ties_break_row_major() {
        let mut map = Array2::<f32>::zeros((16, 16));
        map[(5, 5)] = 1.0;
        map[(10, 10)] = 1.0;
        let peak = decode_heatmap(&map).unwrap();
        assert_eq!(peak.point, (5, 5));
    }

    #[test]
    fn constant_map_is_degenerate() {
        let map = Array2::<f32>::zeros((8, 8));
        let peak = decode_heatmap(&map).unwrap();
        assert_eq!(peak.point, (0, 0));
        assert!(peak.degenerate);
    }

    #[test]
    fn values_decay_monotonically_with_distance() {
        let map = encode_heatmap((100.0, 60.0), 100.0, (256, 256)).unwrap();
        let d2 = |r: usize, c: usize| {
            let dy = r as f64 - 60.0;
            let dx = c as f64 - 100.0;
            dy * dy + dx * dx
        };
        let samples = [(60usize, 100usize), (61, 100), (65, 110), (80, 100), (0, 0), (255, 255)];
        for w in samples.windows(2) {
            let (a, b) = (w[0], w[1]);
            if d2(a.0, a.1) < d2(b.0, b.1) {
                assert!(map[(a.0, a.1)] > map[(b.0, b.1)]);
            }
        }
    }
}
