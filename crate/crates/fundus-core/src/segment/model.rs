//! Recursive U-Net over 3-channel inputs producing 3-class score maps.

use std::cell::RefCell;

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::init::Init;
use fundus_nn::layer::Layer;
use fundus_nn::{conv_block, Conv2d, MaxPool2d, Param, ParamSource, Sequential, Upsample2x};

use super::{SegConfig, SegError};
use crate::augment::{ScoreModel, ScoreTensor};
use crate::util::resize_map;

struct Level {
    encode: Sequential,
    inner: Option<Box<InnerLevel>>,
    width: usize,
}

struct InnerLevel {
    pool: MaxPool2d,
    sub: Level,
    upsample: Upsample2x,
    up_conv: Sequential,
    decode: Sequential,
}

impl Level {
    fn new(name: &str, cin: usize, width: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let encode = Sequential::new(vec![
            Box::new(conv_block(&format!("{name}.e1"), cin, width, 3, 1, 1, rng)) as Box<dyn Layer>,
            Box::new(conv_block(&format!("{name}.e2"), width, width, 3, 1, 1, rng)),
        ]);
        let inner = (depth > 0).then(|| {
            Box::new(InnerLevel {
                pool: MaxPool2d::new(),
                sub: Level::new(&format!("{name}.sub"), width, width * 2, depth - 1, rng),
                upsample: Upsample2x::new(),
                up_conv: Sequential::new(vec![Box::new(conv_block(
                    &format!("{name}.up"),
                    width * 2,
                    width,
                    3,
                    1,
                    1,
                    rng,
                )) as Box<dyn Layer>]),
                decode: Sequential::new(vec![
                    Box::new(conv_block(&format!("{name}.d1"), width * 2, width, 3, 1, 1, rng))
                        as Box<dyn Layer>,
                    Box::new(conv_block(&format!("{name}.d2"), width, width, 3, 1, 1, rng)),
                ]),
            })
        });
        Self {
            encode,
            inner,
            width,
        }
    }

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let e = self.encode.forward(x, train);
        match &mut self.inner {
            None => e,
            Some(inner) => {
                let p = inner.pool.forward(&e, train);
                let s = inner.sub.forward(&p, train);
                let u = inner.upsample.forward(&s, train);
                let u = inner.up_conv.forward(&u, train);
                let cat = ndarray::concatenate(ndarray::Axis(1), &[e.view(), u.view()])
                    .expect("skip concat");
                inner.decode.forward(&cat, train)
            }
        }
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        match &mut self.inner {
            None => self.encode.backward(grad),
            Some(inner) => {
                let d_cat = inner.decode.backward(grad);
                let w = self.width;
                let d_e_skip = d_cat.slice(ndarray::s![.., ..w, .., ..]).to_owned();
                let d_u = d_cat.slice(ndarray::s![.., w.., .., ..]).to_owned();
                let d_s = inner.upsample.backward(&inner.up_conv.backward(&d_u));
                let d_p = inner.sub.backward(&d_s);
                let d_e_pool = inner.pool.backward(&d_p);
                self.encode.backward(&(d_e_skip + d_e_pool))
            }
        }
    }

    fn collect_params(&self) -> Vec<&Param> {
        let mut v = self.encode.params();
        if let Some(inner) = &self.inner {
            v.extend(inner.sub.collect_params());
            v.extend(inner.up_conv.params());
            v.extend(inner.decode.params());
        }
        v
    }

    fn collect_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encode.params_mut();
        if let Some(inner) = &mut self.inner {
            v.extend(inner.sub.collect_params_mut());
            v.extend(inner.up_conv.params_mut());
            v.extend(inner.decode.params_mut());
        }
        v
    }
}

/// U-Net: (N, 3, S, S) -> (N, 3, S, S) per-class scores.
pub struct UNet {
    root: Level,
    head: Conv2d,
    config: SegConfig,
}

impl UNet {
    pub fn new(config: &SegConfig) -> Result<Self, SegError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let root = Level::new("unet", 3, config.width, config.depth, &mut rng);
        let head = Conv2d::new("head", config.width, 3, 1, 1, 0, true, Init::HeUniform, &mut rng);
        Ok(Self {
            root,
            head,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SegConfig {
        &self.config
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let features = self.root.forward(x, train);
        self.head.forward(&features, train)
    }

    pub fn backward(&mut self, grad: &Array4<f32>) {
        let d = self.head.backward(grad);
        self.root.backward(&d);
    }

    /// Resize a [0,255] CHW image to the input size and normalize to [0,1].
    pub fn preprocess(&self, image: &Array3<f32>) -> Array4<f32> {
        let s = self.config.input_size;
        let mut out = Array4::<f32>::zeros((1, 3, s, s));
        for c in 0..3 {
            let plane = image.index_axis(ndarray::Axis(0), c).to_owned();
            let resized = resize_map(&plane, s, s);
            out.index_axis_mut(ndarray::Axis(0), 0)
                .index_axis_mut(ndarray::Axis(0), c)
                .assign(&resized.mapv(|v| v / 255.0));
        }
        out
    }
}

impl ParamSource for UNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.root.collect_params();
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.root.collect_params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

/// Interior-mutable adapter so a U-Net can serve as a TTA member.
pub struct SegmenterScorer<'a> {
    net: RefCell<&'a mut UNet>,
}

impl<'a> SegmenterScorer<'a> {
    pub fn new(net: &'a mut UNet) -> Self {
        Self { net: RefCell::new(net) }
    }
}

impl ScoreModel for SegmenterScorer<'_> {
    fn forward_scores(&self, image: &Array3<f32>) -> Result<ScoreTensor, String> {
        let mut net = self.net.borrow_mut();
        let x = net.preprocess(image);
        let scores = net.forward(&x, false);
        Ok(ScoreTensor::Map(scores.index_axis(ndarray::Axis(0), 0).to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unet_output_shape_matches_input() {
        let config = SegConfig {
            input_size: 32,
            width: 4,
            depth: 2,
            seed: 1,
            ..SegConfig::default()
        };
        let mut net = UNet::new(&config).unwrap();
        let x = Array4::<f32>::zeros((2, 3, 32, 32));
        let y = net.forward(&x, false);
        assert_eq!(y.dim(), (2, 3, 32, 32));
    }

    #[test]
    fn unet_eval_deterministic_and_seeded() {
        let config = SegConfig {
            input_size: 16,
            width: 4,
            depth: 1,
            seed: 7,
            ..SegConfig::default()
        };
        let mut a = UNet::new(&config).unwrap();
        let b = UNet::new(&config).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.value, pb.value);
        }
        let x = Array4::from_shape_fn((1, 3, 16, 16), |(_, c, y, xx)| {
            ((c + y + xx) as f32 * 0.11).sin()
        });
        assert_eq!(a.forward(&x, false), a.forward(&x, false));
    }

    #[test]
    fn indivisible_input_size_is_rejected() {
        let config = SegConfig {
            input_size: 30,
            depth: 2,
            ..SegConfig::default()
        };
        assert!(UNet::new(&config).is_err());
    }
}
