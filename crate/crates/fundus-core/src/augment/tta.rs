//! Test-time-augmentation ensembling: N sampled transforms in each domain
//! rendering, raw outputs averaged, softmax applied exactly once at the end.

use ndarray::{Array1, Array3};

use super::{apply, invert_geometric, sample_transform, AugmentError, TransformSpec};
use crate::util::derive_seed_idx;

/// Model surface the ensembler drives. Implementations own their whole
/// preprocessing (resizing, normalization) and return raw pre-softmax scores.
pub trait ScoreModel {
    fn forward_scores(&self, image: &Array3<f32>) -> Result<ScoreTensor, String>;
}

/// Raw scores: a class vector for classification, a (C, H, W) map for
/// segmentation.
#[derive(Debug, Clone)]
pub enum ScoreTensor {
    Class(Array1<f32>),
    Map(Array3<f32>),
}

/// How an input is re-rendered into a domain before augmentation.
pub enum Rendering<'a> {
    /// The image's own domain: no translation.
    Identity,
    /// A domain-transfer generator, labeled for tracing.
    Translator(&'a dyn Fn(&Array3<f32>) -> Result<Array3<f32>, String>),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TtaConfig {
    pub n_transforms: usize,
    pub seed: u64,
    pub spec: TransformSpec,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            n_transforms: 10,
            seed: 0,
            spec: TransformSpec::classifier(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtaMode {
    Classification,
    Segmentation,
}

/// Ensemble operation trace, used to assert the average-then-softmax order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOp {
    Render(usize),
    Transform,
    Forward,
    Invert,
    Average,
    Softmax,
}

#[derive(Debug, Clone)]
pub struct TtaOutcome {
    /// Post-softmax probabilities (class vector or per-pixel map).
    pub probs: ScoreTensor,
    /// Number of ensemble members averaged.
    pub members: usize,
    pub trace: Vec<TraceOp>,
}

#[derive(Debug, thiserror::Error)]
pub enum TtaError {
    #[error("ensemble needs at least one transform and one domain")]
    Empty,
    #[error("model forward failed: {0}")]
    Forward(String),
    #[error("domain rendering failed: {0}")]
    Render(String),
    #[error("model returned {got} scores, expected {expected} for this mode")]
    ModeMismatch { got: &'static str, expected: &'static str },
    #[error("ensemble members disagree on output shape")]
    ShapeMismatch,
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

/// Runs the full ensemble: for every domain rendering and every sampled
/// transform, forward the transformed image; in segmentation mode invert the
/// geometry of each score map. Raw outputs are accumulated, divided by the
/// member count, and softmaxed once. Any member failure aborts the whole
/// ensemble.
pub fn tta_predict(
    model: &dyn ScoreModel,
    image: &Array3<f32>,
    domains: &[Rendering<'_>],
    config: &TtaConfig,
    mode: TtaMode,
) -> Result<TtaOutcome, TtaError> {
    if config.n_transforms == 0 || domains.is_empty() {
        return Err(TtaError::Empty);
    }
    let spec = match mode {
        TtaMode::Classification => config.spec.clone(),
        TtaMode::Segmentation => config.spec.invertible_only(),
    };
    let mut trace = Vec::new();
    let mut acc_class: Option<Array1<f64>> = None;
    let mut acc_map: Option<Array3<f64>> = None;
    let mut members = 0usize;

    for (di, rendering) in domains.iter().enumerate() {
        trace.push(TraceOp::Render(di));
        let rendered = match rendering {
            Rendering::Identity => image.clone(),
            Rendering::Translator(f) => f(image).map_err(TtaError::Render)?,
        };
        for k in 0..config.n_transforms {
            let seed = derive_seed_idx(config.seed, "tta", (di * config.n_transforms + k) as u64);
            let t = sample_transform(&spec, seed);
            trace.push(TraceOp::Transform);
            let (augmented, _) = apply(&t, &rendered, &[])?;
            let scores = model
                .forward_scores(&augmented)
                .map_err(TtaError::Forward)?;
            trace.push(TraceOp::Forward);
            match (mode, scores) {
                (TtaMode::Classification, ScoreTensor::Class(v)) => {
                    let acc = acc_class.get_or_insert_with(|| ndarray::Array1::zeros(v.len()));
                    if acc.len() != v.len() {
                        return Err(TtaError::ShapeMismatch);
                    }
                    for (a, s) in acc.iter_mut().zip(v.iter()) {
                        *a += *s as f64;
                    }
                }
                (TtaMode::Segmentation, ScoreTensor::Map(m)) => {
                    let aligned = invert_geometric(&t, &m)?;
                    trace.push(TraceOp::Invert);
                    let acc = acc_map.get_or_insert_with(|| ndarray::Array3::zeros(aligned.dim()));
                    if acc.dim() != aligned.dim() {
                        return Err(TtaError::ShapeMismatch);
                    }
                    for (a, s) in acc.iter_mut().zip(aligned.iter()) {
                        *a += *s as f64;
                    }
                }
                (TtaMode::Classification, ScoreTensor::Map(_)) => {
                    return Err(TtaError::ModeMismatch { got: "map", expected: "class vector" })
                }
                (TtaMode::Segmentation, ScoreTensor::Class(_)) => {
                    return Err(TtaError::ModeMismatch { got: "class vector", expected: "map" })
                }
            }
            members += 1;
        }
    }

    trace.push(TraceOp::Average);
    let inv = 1.0 / members as f64;
    let probs = match mode {
        TtaMode::Classification => {
            let mean: Vec<f32> = acc_class.unwrap().iter().map(|v| (v * inv) as f32).collect();
            trace.push(TraceOp::Softmax);
            ScoreTensor::Class(Array1::from_vec(fundus_nn::loss::softmax_vec(&mean)))
        }
        TtaMode::Segmentation => {
            let mean = acc_map.unwrap().mapv(|v| (v * inv) as f32);
            trace.push(TraceOp::Softmax);
            ScoreTensor::Map(fundus_nn::loss::softmax_map(&mean))
        }
    };
    Ok(TtaOutcome {
        probs,
        members,
        trace,
    })
}

impl TtaOutcome {
    /// True when the trace shows raw outputs averaged once and softmax
    /// applied exactly once, at the very end.
    pub fn softmax_applied_once_last(&self) -> bool {
        let softmaxes = self.trace.iter().filter(|op| **op == TraceOp::Softmax).count();
        let averages = self.trace.iter().filter(|op| **op == TraceOp::Average).count();
        softmaxes == 1 && averages == 1 && self.trace.last() == Some(&TraceOp::Softmax)
    }

    pub fn forward_count(&self) -> usize {
        self.trace.iter().filter(|op| **op == TraceOp::Forward).count()
    }
}
