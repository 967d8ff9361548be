use ndarray::Array4;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layer::Layer;
use crate::param::{Param, ParamSource};

/// Spatial dropout: whole channels are zeroed per sample during training,
/// survivors scaled by 1/(1-p). Identity in eval mode. The layer owns its
/// rng so the mask stream is reproducible for a fixed call sequence.
pub struct SpatialDropout2d {
    p: f32,
    rng: ChaCha8Rng,
    mask: Option<Array4<f32>>,
}

impl SpatialDropout2d {
    pub fn new(p: f32, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }
}

impl ParamSource for SpatialDropout2d {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for SpatialDropout2d {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        if !train || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let (n, c, h, w) = x.dim();
        let scale = 1.0 / (1.0 - self.p);
        let mut mask = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let keep = self.rng.random_range(0.0..1.0) >= self.p;
                if keep {
                    mask.index_axis_mut(ndarray::Axis(0), ni)
                        .index_axis_mut(ndarray::Axis(0), ci)
                        .fill(scale);
                }
            }
        }
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        match self.mask.take() {
            Some(mask) => grad_out * &mask,
            None => grad_out.clone(),
        }
    }
}
