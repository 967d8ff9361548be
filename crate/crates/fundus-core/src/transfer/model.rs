//! Generator (residual encoder/decoder) and PatchGAN discriminator.

use image::RgbImage;
use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::init::Init;
use fundus_nn::layer::{Activation, Layer};
use fundus_nn::{Conv2d, InstanceNorm2d, ParamSource, Sequential, SkipAdd, Upsample2x};

use super::GanError;
use crate::data::Domain;
use crate::util::{chw_to_image, image_to_chw, resize_rgb};

fn conv_in_relu(
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Box<dyn Layer>> {
    vec![
        Box::new(Conv2d::new(name, cin, cout, k, stride, pad, true, Init::Normal(0.02), rng)),
        Box::new(InstanceNorm2d::new(&format!("{name}.in"), cout, false)),
        Box::new(Activation::relu()),
    ]
}

fn res_block(name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Box<dyn Layer> {
    let main = Sequential::new(vec![
        Box::new(Conv2d::new(&format!("{name}.c1"), channels, channels, 3, 1, 1, true, Init::Normal(0.02), rng)),
        Box::new(InstanceNorm2d::new(&format!("{name}.in1"), channels, false)),
        Box::new(Activation::relu()),
        Box::new(Conv2d::new(&format!("{name}.c2"), channels, channels, 3, 1, 1, true, Init::Normal(0.02), rng)),
        Box::new(InstanceNorm2d::new(&format!("{name}.in2"), channels, false)),
    ]);
    Box::new(SkipAdd::new(main))
}

/// Directional image-to-image generator operating on [-1, 1] tensors at a
/// fixed square resolution.
pub struct Generator {
    pub net: Sequential,
    pub source: Domain,
    pub target: Domain,
    pub resolution: usize,
    pub ngf: usize,
    pub n_res_blocks: usize,
}

impl Generator {
    pub fn new(
        source: Domain,
        target: Domain,
        resolution: usize,
        ngf: usize,
        n_res_blocks: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<Box<dyn Layer>> = Vec::new();
        layers.extend(conv_in_relu("g.stem", 3, ngf, 7, 1, 3, &mut rng));
        layers.extend(conv_in_relu("g.down1", ngf, ngf * 2, 3, 2, 1, &mut rng));
        layers.extend(conv_in_relu("g.down2", ngf * 2, ngf * 4, 3, 2, 1, &mut rng));
        for i in 0..n_res_blocks {
            layers.push(res_block(&format!("g.res{i}"), ngf * 4, &mut rng));
        }
        layers.push(Box::new(Upsample2x::new()));
        layers.extend(conv_in_relu("g.up1", ngf * 4, ngf * 2, 3, 1, 1, &mut rng));
        layers.push(Box::new(Upsample2x::new()));
        layers.extend(conv_in_relu("g.up2", ngf * 2, ngf, 3, 1, 1, &mut rng));
        layers.push(Box::new(Conv2d::new("g.head", ngf, 3, 7, 1, 3, true, Init::Normal(0.02), &mut rng)));
        layers.push(Box::new(Activation::tanh()));
        Self {
            net: Sequential::new(layers),
            source,
            target,
            resolution,
            ngf,
            n_res_blocks,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        self.net.forward(x, train)
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        self.net.backward(grad)
    }
}

impl ParamSource for Generator {
    fn params(&self) -> Vec<&fundus_nn::Param> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut fundus_nn::Param> {
        self.net.params_mut()
    }
}

/// PatchGAN discriminator: a map of real/fake scores over image patches.
pub struct Discriminator {
    pub net: Sequential,
}

impl Discriminator {
    pub fn new(ndf: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Box<dyn Layer>> = vec![
            Box::new(Conv2d::new("d.c1", 3, ndf, 4, 2, 1, true, Init::Normal(0.02), &mut rng)),
            Box::new(Activation::leaky_relu(0.2)),
            Box::new(Conv2d::new("d.c2", ndf, ndf * 2, 4, 2, 1, true, Init::Normal(0.02), &mut rng)),
            Box::new(InstanceNorm2d::new("d.in2", ndf * 2, false)),
            Box::new(Activation::leaky_relu(0.2)),
            Box::new(Conv2d::new("d.c3", ndf * 2, ndf * 4, 4, 2, 1, true, Init::Normal(0.02), &mut rng)),
            Box::new(InstanceNorm2d::new("d.in3", ndf * 4, false)),
            Box::new(Activation::leaky_relu(0.2)),
            Box::new(Conv2d::new("d.head", ndf * 4, 1, 4, 1, 1, true, Init::Normal(0.02), &mut rng)),
        ];
        Self {
            net: Sequential::new(layers),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        self.net.forward(x, train)
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        self.net.backward(grad)
    }
}

impl ParamSource for Discriminator {
    fn params(&self) -> Vec<&fundus_nn::Param> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut fundus_nn::Param> {
        self.net.params_mut()
    }
}

/// [0,255] CHW image to the generator's [-1,1] input range.
pub fn to_gan_range(img: &Array3<f32>) -> Array3<f32> {
    img.mapv(|v| v / 127.5 - 1.0)
}

/// [-1,1] generator output back to [0,255].
pub fn from_gan_range(img: &Array3<f32>) -> Array3<f32> {
    img.mapv(|v| (v + 1.0) * 127.5)
}

impl Generator {
    /// Translates one image: resize to the training resolution, map through
    /// the generator in eval mode, resize back to the input dimensions.
    /// Output shape and dtype always equal the input's.
    pub fn translate(&mut self, image: &RgbImage) -> Result<RgbImage, GanError> {
        let (w, h) = image.dimensions();
        let s = self.resolution as u32;
        let resized = resize_rgb(image, s, s);
        let x = to_gan_range(&image_to_chw(&resized));
        let mut batch = Array4::<f32>::zeros((1, 3, s as usize, s as usize));
        batch.index_axis_mut(ndarray::Axis(0), 0).assign(&x);
        let y = self.forward(&batch, false);
        let out = from_gan_range(&y.index_axis(ndarray::Axis(0), 0).to_owned());
        let out_img = chw_to_image(&out);
        Ok(resize_rgb(&out_img, w, h))
    }

    /// Array variant used by the TTA renderer: (3, H, W) in [0, 255].
    pub fn translate_array(&mut self, image: &Array3<f32>) -> Result<Array3<f32>, GanError> {
        let (c, h, w) = image.dim();
        if c != 3 {
            return Err(GanError::BadChannels(c));
        }
        let img = chw_to_image(image);
        let out = self.translate(&img)?;
        let arr = image_to_chw(&out);
        debug_assert_eq!(arr.dim(), (3, h, w));
        Ok(arr)
    }
}
