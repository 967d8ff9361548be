use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

use crate::conv::Conv2d;
use crate::init::Init;
use crate::layer::{Activation, Layer, Sequential};
use crate::norm::BatchNorm2d;
use crate::param::{Param, ParamSource};

/// conv(3x3 unless `kernel` given) + batchnorm + relu.
#[allow(clippy::too_many_arguments)]
pub fn conv_block(
    name: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    rng: &mut ChaCha8Rng,
) -> Sequential {
    Sequential::new(vec![
        Box::new(Conv2d::new(
            &format!("{name}.conv"),
            cin,
            cout,
            kernel,
            stride,
            padding,
            false,
            Init::HeUniform,
            rng,
        )),
        Box::new(BatchNorm2d::new(&format!("{name}.bn"), cout)),
        Box::new(Activation::relu()),
    ])
}

/// Identity skip around an arbitrary main path (channel counts must match).
pub struct SkipAdd {
    pub main: Sequential,
}

impl SkipAdd {
    pub fn new(main: Sequential) -> Self {
        Self { main }
    }
}

impl ParamSource for SkipAdd {
    fn params(&self) -> Vec<&Param> {
        self.main.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.main.params_mut()
    }
}

impl Layer for SkipAdd {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        self.main.forward(x, train) + x
    }
    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        self.main.backward(grad_out) + grad_out
    }
}

/// Residual bottleneck: main path plus identity (or 1x1 projection when the
/// channel count changes).
pub struct Residual {
    main: Sequential,
    projection: Option<Conv2d>,
}

impl Residual {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let mid = (cout / 2).max(1);
        let main = Sequential::new(vec![
            Box::new(BatchNorm2d::new(&format!("{name}.bn1"), cin)),
            Box::new(Activation::relu()),
            Box::new(Conv2d::new(&format!("{name}.conv1"), cin, mid, 1, 1, 0, false, Init::HeUniform, rng)),
            Box::new(BatchNorm2d::new(&format!("{name}.bn2"), mid)),
            Box::new(Activation::relu()),
            Box::new(Conv2d::new(&format!("{name}.conv2"), mid, mid, 3, 1, 1, false, Init::HeUniform, rng)),
            Box::new(BatchNorm2d::new(&format!("{name}.bn3"), mid)),
            Box::new(Activation::relu()),
            Box::new(Conv2d::new(&format!("{name}.conv3"), mid, cout, 1, 1, 0, false, Init::HeUniform, rng)),
        ]);
        let projection = (cin != cout).then(|| {
            Conv2d::new(&format!("{name}.proj"), cin, cout, 1, 1, 0, false, Init::HeUniform, rng)
        });
        Self { main, projection }
    }
}

impl ParamSource for Residual {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.main.params();
        if let Some(p) = &self.projection {
            v.extend(p.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.main.params_mut();
        if let Some(p) = &mut self.projection {
            v.extend(p.params_mut());
        }
        v
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let main = self.main.forward(x, train);
        match &mut self.projection {
            Some(proj) => main + proj.forward(x, train),
            None => main + x,
        }
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let d_main = self.main.backward(grad_out);
        match &mut self.projection {
            Some(proj) => d_main + proj.backward(grad_out),
            None => d_main + grad_out,
        }
    }
}
