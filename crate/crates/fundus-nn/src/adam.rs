use ndarray::ArrayD;

use crate::param::ParamSource;

/// Adam with bias correction. State is keyed by parameter traversal order;
/// frozen parameters keep their slot but are never touched, so their bytes
/// stay identical across any number of steps.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new() -> Self {
        Self::with_betas(0.9, 0.999)
    }

    /// GAN training conventionally uses beta1 = 0.5.
    pub fn with_betas(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<S: ParamSource + ?Sized>(&mut self, src: &mut S, lr: f64) {
        let mut params = src.params_mut();
        if self.m.is_empty() {
            for p in params.iter() {
                self.m.push(ArrayD::zeros(p.value.raw_dim()));
                self.v.push(ArrayD::zeros(p.value.raw_dim()));
            }
        }
        assert_eq!(params.len(), self.m.len(), "optimizer/network mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.m[i].as_slice_mut().unwrap();
            let v = self.v[i].as_slice_mut().unwrap();
            let g = p.grad.as_slice().unwrap();
            let val = p.value.as_slice_mut().unwrap();
            for j in 0..g.len() {
                let gj = g[j] as f64;
                let mj = self.beta1 * m[j] as f64 + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v[j] as f64 + (1.0 - self.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                val[j] -= (lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}
