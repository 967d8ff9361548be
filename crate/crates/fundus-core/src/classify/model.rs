//! Inception-style backbone with named modules and a 2-way linear head.
//!
//! Spatial flow: stem (stride-2 conv + pool, /4) -> mix1..mix4 -> reduce1
//! (/8) -> mix5..mix6 -> reduce2 (/16) -> mix7 -> global average pool ->
//! linear head. The frozen lower half is exactly [`FROZEN_MODULES`].

use std::cell::RefCell;

use ndarray::{Array1, Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::layer::Layer;
use fundus_nn::{
    conv_block, global_avg_pool, global_avg_pool_backward, AvgPool3x3, Linear, MaxPool2d, Param,
    ParamSource, Sequential,
};

use super::{ClassifierConfig, ClassifyError};
use crate::augment::{ScoreModel, ScoreTensor};
use crate::util::resize_map;

/// Modules frozen by the transfer-learning boundary: everything up to and
/// including the first grid-size reduction.
pub const FROZEN_MODULES: [&str; 6] = ["stem", "mix1", "mix2", "mix3", "mix4", "reduce1"];

/// Standard normalization statistics of the pretrained backbone.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Four parallel branches concatenated along channels:
/// 1x1 | 1x1-3x3 | 1x1-3x3-3x3 | avgpool-1x1, each `f` channels out.
struct InceptionModule {
    branches: Vec<Sequential>,
    splits: Vec<usize>,
    cached_dim: (usize, usize, usize, usize),
}

impl InceptionModule {
    fn new(name: &str, cin: usize, f: usize, rng: &mut ChaCha8Rng) -> Self {
        let b1 = Sequential::new(vec![Box::new(conv_block(&format!("{name}.b1"), cin, f, 1, 1, 0, rng)) as Box<dyn Layer>]);
        let b2 = Sequential::new(vec![
            Box::new(conv_block(&format!("{name}.b2a"), cin, f, 1, 1, 0, rng)),
            Box::new(conv_block(&format!("{name}.b2b"), f, f, 3, 1, 1, rng)),
        ]);
        let b3 = Sequential::new(vec![
            Box::new(conv_block(&format!("{name}.b3a"), cin, f, 1, 1, 0, rng)),
            Box::new(conv_block(&format!("{name}.b3b"), f, f, 3, 1, 1, rng)),
            Box::new(conv_block(&format!("{name}.b3c"), f, f, 3, 1, 1, rng)),
        ]);
        let b4 = Sequential::new(vec![
            Box::new(AvgPool3x3::new()) as Box<dyn Layer>,
            Box::new(conv_block(&format!("{name}.b4"), cin, f, 1, 1, 0, rng)),
        ]);
        Self {
            branches: vec![b1, b2, b3, b4],
            splits: vec![f; 4],
            cached_dim: (0, 0, 0, 0),
        }
    }
}

impl ParamSource for InceptionModule {
    fn params(&self) -> Vec<&Param> {
        self.branches.iter().flat_map(|b| b.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.branches.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}

impl Layer for InceptionModule {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        self.cached_dim = x.dim();
        let outs: Vec<Array4<f32>> = self.branches.iter_mut().map(|b| b.forward(x, train)).collect();
        concat_channels(&outs)
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let mut dx = Array4::<f32>::zeros(self.cached_dim);
        let mut start = 0usize;
        for (branch, width) in self.branches.iter_mut().zip(&self.splits) {
            let g = grad_out
                .slice(ndarray::s![.., start..start + width, .., ..])
                .to_owned();
            dx = dx + branch.backward(&g);
            start += width;
        }
        dx
    }
}

/// Stride-2 reduction with two conv branches (3x3 s2 | 1x1 then 3x3 s2),
/// doubling the channel count.
struct GridReduction {
    branches: Vec<Sequential>,
    splits: Vec<usize>,
    cached_dim: (usize, usize, usize, usize),
}

impl GridReduction {
    fn new(name: &str, cin: usize, rng: &mut ChaCha8Rng) -> Self {
        let b1 = Sequential::new(vec![
            Box::new(conv_block(&format!("{name}.b1"), cin, cin, 3, 2, 1, rng)) as Box<dyn Layer>,
        ]);
        let b2 = Sequential::new(vec![
            Box::new(conv_block(&format!("{name}.b2a"), cin, cin / 2, 1, 1, 0, rng)),
            Box::new(conv_block(&format!("{name}.b2b"), cin / 2, cin, 3, 2, 1, rng)),
        ]);
        Self {
            branches: vec![b1, b2],
            splits: vec![cin; 2],
            cached_dim: (0, 0, 0, 0),
        }
    }
}

impl ParamSource for GridReduction {
    fn params(&self) -> Vec<&Param> {
        self.branches.iter().flat_map(|b| b.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.branches.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}

impl Layer for GridReduction {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        self.cached_dim = x.dim();
        let outs: Vec<Array4<f32>> = self.branches.iter_mut().map(|b| b.forward(x, train)).collect();
        concat_channels(&outs)
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let mut dx = Array4::<f32>::zeros(self.cached_dim);
        let mut start = 0usize;
        for (branch, width) in self.branches.iter_mut().zip(&self.splits) {
            let g = grad_out
                .slice(ndarray::s![.., start..start + width, .., ..])
                .to_owned();
            dx = dx + branch.backward(&g);
            start += width;
        }
        dx
    }
}

fn concat_channels(parts: &[Array4<f32>]) -> Array4<f32> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(ndarray::Axis(1), &views).expect("channel concat")
}

/// The classifier: named feature modules, global average pooling, and a
/// 2-logit linear head (the backbone's own head is replaced outright; no
/// auxiliary heads exist).
pub struct ClassifierNet {
    modules: Vec<(&'static str, Box<dyn Layer>)>,
    head: Linear,
    feat_channels: usize,
    feat_spatial: (usize, usize),
    config: ClassifierConfig,
}

impl ClassifierNet {
    pub fn feature_channels(&self) -> usize {
        self.feat_channels
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn module_names(&self) -> Vec<&'static str> {
        self.modules.iter().map(|(n, _)| *n).collect()
    }

    /// Forward to 2 logits per item. Input must be normalized and sized to
    /// `config.input_size`.
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array2<f32> {
        let mut t = x.clone();
        for (_, module) in self.modules.iter_mut() {
            t = module.forward(&t, train);
        }
        let (_, c, h, w) = t.dim();
        self.feat_channels = c;
        self.feat_spatial = (h, w);
        let pooled = global_avg_pool(&t);
        self.head.forward(&pooled)
    }

    pub fn backward(&mut self, grad_logits: &Array2<f32>) {
        let d_pooled = self.head.backward(grad_logits);
        let mut d = global_avg_pool_backward(&d_pooled, self.feat_spatial);
        for (_, module) in self.modules.iter_mut().rev() {
            d = module.backward(&d);
        }
    }

    /// Extracts pooled features without touching the head (used by the
    /// finite-difference head check).
    pub fn features(&mut self, x: &Array4<f32>) -> Array2<f32> {
        let mut t = x.clone();
        for (_, module) in self.modules.iter_mut() {
            t = module.forward(&t, false);
        }
        global_avg_pool(&t)
    }

    pub fn head_mut(&mut self) -> &mut Linear {
        &mut self.head
    }

    /// Marks every parameter under the named frozen modules non-trainable.
    pub fn apply_freeze_boundary(&mut self) {
        for p in self.params_mut() {
            if FROZEN_MODULES.iter().any(|m| p.name.starts_with(m)) {
                p.trainable = false;
            }
        }
    }

    pub fn frozen_param_count(&self) -> usize {
        self.params().iter().filter(|p| !p.trainable).map(|p| p.numel()).sum()
    }

    /// Resize + normalize one [0,255] CHW image into a 1-item input batch.
    pub fn preprocess(&self, image: &Array3<f32>) -> Array4<f32> {
        let s = self.config.input_size;
        let mut out = Array4::<f32>::zeros((1, 3, s, s));
        for c in 0..3 {
            let plane = image.index_axis(ndarray::Axis(0), c).to_owned();
            let resized = resize_map(&plane, s, s);
            let normalized =
                resized.mapv(|v| (v / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]);
            out.index_axis_mut(ndarray::Axis(0), 0)
                .index_axis_mut(ndarray::Axis(0), c)
                .assign(&normalized);
        }
        out
    }
}

impl ParamSource for ClassifierNet {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.modules.iter().flat_map(|(_, m)| m.params()).collect();
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self
            .modules
            .iter_mut()
            .flat_map(|(_, m)| m.params_mut())
            .collect();
        v.extend(self.head.params_mut());
        v
    }
}

/// Builds the classifier. Pretrained backbone weights are loaded when given
/// (the checkpoint's head is skipped and a fresh 2-way head is kept);
/// otherwise `allow_random_init` must be set.
pub fn build_classifier(config: &ClassifierConfig) -> Result<ClassifierNet, ClassifyError> {
    config.validate()?;
    if config.pretrained.is_none() && !config.allow_random_init {
        return Err(ClassifyError::MissingPretrained);
    }
    let w = config.width;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stem = Sequential::new(vec![
        Box::new(conv_block("stem.c1", 3, w, 3, 2, 1, &mut rng)) as Box<dyn Layer>,
        Box::new(conv_block("stem.c2", w, w, 3, 1, 1, &mut rng)),
        Box::new(MaxPool2d::new()),
    ]);
    let modules: Vec<(&'static str, Box<dyn Layer>)> = vec![
        ("stem", Box::new(stem)),
        ("mix1", Box::new(InceptionModule::new("mix1", w, w / 2, &mut rng))),
        ("mix2", Box::new(InceptionModule::new("mix2", 2 * w, w / 2, &mut rng))),
        ("mix3", Box::new(InceptionModule::new("mix3", 2 * w, w / 2, &mut rng))),
        ("mix4", Box::new(InceptionModule::new("mix4", 2 * w, w / 2, &mut rng))),
        ("reduce1", Box::new(GridReduction::new("reduce1", 2 * w, &mut rng))),
        ("mix5", Box::new(InceptionModule::new("mix5", 4 * w, w, &mut rng))),
        ("mix6", Box::new(InceptionModule::new("mix6", 4 * w, w, &mut rng))),
        ("reduce2", Box::new(GridReduction::new("reduce2", 4 * w, &mut rng))),
        ("mix7", Box::new(InceptionModule::new("mix7", 8 * w, 2 * w, &mut rng))),
    ];
    let head = Linear::new("head", 8 * w, 2, &mut rng);
    let mut net = ClassifierNet {
        modules,
        head,
        feat_channels: 8 * w,
        feat_spatial: (1, 1),
        config: config.clone(),
    };
    if let Some(path) = &config.pretrained {
        fundus_nn::load_checkpoint_partial(&mut net, path, |name| name.starts_with("head"))?;
    }
    if config.freeze_backbone_half {
        net.apply_freeze_boundary();
    }
    Ok(net)
}

/// Interior-mutable adapter so a classifier can serve as a TTA member.
pub struct ClassifierScorer<'a> {
    net: RefCell<&'a mut ClassifierNet>,
}

impl<'a> ClassifierScorer<'a> {
    pub fn new(net: &'a mut ClassifierNet) -> Self {
        Self { net: RefCell::new(net) }
    }
}

impl ScoreModel for ClassifierScorer<'_> {
    fn forward_scores(&self, image: &Array3<f32>) -> Result<ScoreTensor, String> {
        let mut net = self.net.borrow_mut();
        let x = net.preprocess(image);
        let logits = net.forward(&x, false);
        Ok(ScoreTensor::Class(Array1::from_vec(logits.row(0).to_vec())))
    }
}
