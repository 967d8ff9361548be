use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::init::{init_tensor, Init};
use crate::param::{Param, ParamSource};

/// Fully connected layer on (N, F) activations. Not a `Layer` since it
/// works on 2D tensors; heads wire it in explicitly.
pub struct Linear {
    pub weight: Param, // (out, in)
    pub bias: Param,   // (out,)
    cached_x: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                init_tensor(&[out_features, in_features], in_features, Init::HeUniform, rng),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                init_tensor(&[out_features], in_features, Init::Zeros, rng),
            ),
            cached_x: None,
        }
    }

    fn weight_mat(&self) -> ArrayView2<'_, f32> {
        let shape = self.weight.value.shape();
        ArrayView2::from_shape((shape[0], shape[1]), self.weight.value.as_slice().unwrap())
            .expect("weight layout")
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let w = self.weight_mat();
        let mut y = x.dot(&w.t());
        let b = self.bias.value.as_slice().unwrap();
        for mut row in y.rows_mut() {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.cached_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Array2<f32>) -> Array2<f32> {
        let x = self.cached_x.take().expect("backward before forward");
        let w = self.weight_mat();
        let dx = grad_out.dot(&w);
        let dw = grad_out.t().dot(&x); // (out, in)
        for (a, b) in self
            .weight
            .grad
            .as_slice_mut()
            .unwrap()
            .iter_mut()
            .zip(dw.as_slice().unwrap())
        {
            *a += b;
        }
        let db = grad_out.sum_axis(ndarray::Axis(0));
        for (a, b) in self
            .bias
            .grad
            .as_slice_mut()
            .unwrap()
            .iter_mut()
            .zip(db.as_slice().unwrap())
        {
            *a += b;
        }
        dx
    }
}

impl ParamSource for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
