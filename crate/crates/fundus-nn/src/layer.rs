use ndarray::Array4;

use crate::param::{Param, ParamSource};

/// A network layer operating on NCHW activations.
///
/// `forward` caches whatever `backward` needs; callers must pair each
/// `backward` with the immediately preceding `forward` on the same layer.
pub trait Layer: ParamSource + Send {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32>;
    /// Consumes the gradient w.r.t. the output, accumulates parameter
    /// gradients, and returns the gradient w.r.t. the input.
    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32>;
}

/// Layers applied in order.
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Self { layers }
    }
}

impl ParamSource for Sequential {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let mut out = x.clone();
        for l in self.layers.iter_mut() {
            out = l.forward(&out, train);
        }
        out
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let mut grad = grad_out.clone();
        for l in self.layers.iter_mut().rev() {
            grad = l.backward(&grad);
        }
        grad
    }
}

/// Pointwise activations.
pub enum Activation {
    Relu { mask: Option<Array4<f32>> },
    LeakyRelu { slope: f32, mask: Option<Array4<f32>> },
    Tanh { out: Option<Array4<f32>> },
}

impl Activation {
    pub fn relu() -> Self {
        Activation::Relu { mask: None }
    }
    pub fn leaky_relu(slope: f32) -> Self {
        Activation::LeakyRelu { slope, mask: None }
    }
    pub fn tanh() -> Self {
        Activation::Tanh { out: None }
    }
}

impl ParamSource for Activation {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for Activation {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        match self {
            Activation::Relu { mask } => {
                let m = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let y = x * &m;
                *mask = Some(m);
                y
            }
            Activation::LeakyRelu { slope, mask } => {
                let s = *slope;
                let m = x.mapv(|v| if v > 0.0 { 1.0 } else { s });
                let y = x * &m;
                *mask = Some(m);
                y
            }
            Activation::Tanh { out } => {
                let y = x.mapv(|v| v.tanh());
                *out = Some(y.clone());
                y
            }
        }
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        match self {
            Activation::Relu { mask } | Activation::LeakyRelu { mask, .. } => {
                grad_out * mask.as_ref().expect("backward before forward")
            }
            Activation::Tanh { out } => {
                let y = out.as_ref().expect("backward before forward");
                let mut g = grad_out.clone();
                g.zip_mut_with(y, |gv, yv| *gv *= 1.0 - yv * yv);
                g
            }
        }
    }
}
