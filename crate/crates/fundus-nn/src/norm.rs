use ndarray::{Array1, Array4};

use crate::layer::Layer;
use crate::param::{Param, ParamSource};

/// Batch normalization over (N, H, W) per channel, with running statistics
/// for eval mode (unbiased variance in the running estimate).
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    channels: usize,
    eps: f32,
    momentum: f32,
    running_mean: Array1<f32>,
    running_var: Array1<f32>,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Array4<f32>,
    inv_std: Array1<f32>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), ndarray::ArrayD::ones(ndarray::IxDyn(&[channels]))),
            beta: Param::new(format!("{name}.beta"), ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels]))),
            channels,
            eps: 1e-5,
            momentum: 0.1,
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            cache: None,
        }
    }
}

impl ParamSource for BatchNorm2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "batchnorm channels");
        let m = (n * h * w) as f64;
        let gamma = self.gamma.value.as_slice().unwrap();
        let beta = self.beta.value.as_slice().unwrap();

        let (mean, var) = if train {
            let mut mean = vec![0f64; c];
            let mut var = vec![0f64; c];
            for ni in 0..n {
                for ci in 0..c {
                    let plane = x.index_axis(ndarray::Axis(0), ni);
                    let plane = plane.index_axis(ndarray::Axis(0), ci);
                    for v in plane.iter() {
                        mean[ci] += *v as f64;
                    }
                }
            }
            for mv in mean.iter_mut() {
                *mv /= m;
            }
            for ni in 0..n {
                for ci in 0..c {
                    let plane = x.index_axis(ndarray::Axis(0), ni);
                    let plane = plane.index_axis(ndarray::Axis(0), ci);
                    for v in plane.iter() {
                        let d = *v as f64 - mean[ci];
                        var[ci] += d * d;
                    }
                }
            }
            for vv in var.iter_mut() {
                *vv /= m;
            }
            // torch-style running stats: unbiased variance estimate
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for ci in 0..c {
                self.running_mean[ci] =
                    (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci] as f32;
                self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci]
                    + self.momentum * (var[ci] * unbias) as f32;
            }
            (mean, var)
        } else {
            (
                self.running_mean.iter().map(|v| *v as f64).collect(),
                self.running_var.iter().map(|v| *v as f64).collect(),
            )
        };

        let inv_std: Array1<f32> =
            (0..c).map(|ci| 1.0 / (var[ci] + self.eps as f64).sqrt() as f32).collect();
        let mut xhat = x.clone();
        for ni in 0..n {
            for ci in 0..c {
                let mu = mean[ci] as f32;
                let is = inv_std[ci];
                let mut plane = xhat.index_axis_mut(ndarray::Axis(0), ni);
                let mut plane = plane.index_axis_mut(ndarray::Axis(0), ci);
                plane.mapv_inplace(|v| (v - mu) * is);
            }
        }
        let mut y = xhat.clone();
        for ni in 0..n {
            for ci in 0..c {
                let (g, b) = (gamma[ci], beta[ci]);
                let mut plane = y.index_axis_mut(ndarray::Axis(0), ni);
                let mut plane = plane.index_axis_mut(ndarray::Axis(0), ci);
                plane.mapv_inplace(|v| v * g + b);
            }
        }
        if train {
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            self.cache = Some(BnCache {
                xhat,
                inv_std: inv_std.clone(),
            });
        }
        y
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let cache = self.cache.take().expect("backward before forward");
        let (n, c, h, w) = grad_out.dim();
        let m = (n * h * w) as f64;
        let gamma = self.gamma.value.as_slice().unwrap().to_vec();

        let mut dgamma = vec![0f64; c];
        let mut dbeta = vec![0f64; c];
        for ni in 0..n {
            for ci in 0..c {
                let g = grad_out.index_axis(ndarray::Axis(0), ni);
                let g = g.index_axis(ndarray::Axis(0), ci);
                let xh = cache.xhat.index_axis(ndarray::Axis(0), ni);
                let xh = xh.index_axis(ndarray::Axis(0), ci);
                for (gv, xv) in g.iter().zip(xh.iter()) {
                    dbeta[ci] += *gv as f64;
                    dgamma[ci] += *gv as f64 * *xv as f64;
                }
            }
        }
        {
            let dg = self.gamma.grad.as_slice_mut().unwrap();
            let db = self.beta.grad.as_slice_mut().unwrap();
            for ci in 0..c {
                dg[ci] += dgamma[ci] as f32;
                db[ci] += dbeta[ci] as f32;
            }
        }

        // dx = gamma*inv_std * (dy - mean(dy) - xhat*mean(dy*xhat))
        let mut dx = grad_out.clone();
        for ni in 0..n {
            for ci in 0..c {
                let scale = gamma[ci] * cache.inv_std[ci];
                let mean_dy = (dbeta[ci] / m) as f32;
                let mean_dyxh = (dgamma[ci] / m) as f32;
                let xh = cache.xhat.index_axis(ndarray::Axis(0), ni);
                let xh = xh.index_axis(ndarray::Axis(0), ci);
                let mut d = dx.index_axis_mut(ndarray::Axis(0), ni);
                let mut d = d.index_axis_mut(ndarray::Axis(0), ci);
                ndarray::Zip::from(&mut d).and(&xh).for_each(|dv, xv| {
                    *dv = scale * (*dv - mean_dy - *xv * mean_dyxh);
                });
            }
        }
        dx
    }
}

/// Instance normalization over (H, W) per sample and channel. No running
/// statistics; eval mode normalizes per instance exactly like train mode.
pub struct InstanceNorm2d {
    pub gamma: Option<Param>,
    pub beta: Option<Param>,
    channels: usize,
    eps: f32,
    cache: Option<InCache>,
}

struct InCache {
    xhat: Array4<f32>,
    inv_std: ndarray::Array2<f32>, // (n, c)
}

impl InstanceNorm2d {
    pub fn new(name: &str, channels: usize, affine: bool) -> Self {
        let (gamma, beta) = if affine {
            (
                Some(Param::new(
                    format!("{name}.gamma"),
                    ndarray::ArrayD::ones(ndarray::IxDyn(&[channels])),
                )),
                Some(Param::new(
                    format!("{name}.beta"),
                    ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels])),
                )),
            )
        } else {
            (None, None)
        };
        Self {
            gamma,
            beta,
            channels,
            eps: 1e-5,
            cache: None,
        }
    }
}

impl ParamSource for InstanceNorm2d {
    fn params(&self) -> Vec<&Param> {
        self.gamma.iter().chain(self.beta.iter()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.gamma.iter_mut().chain(self.beta.iter_mut()).collect()
    }
}

impl Layer for InstanceNorm2d {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "instancenorm channels");
        let m = (h * w) as f64;
        let mut xhat = x.clone();
        let mut inv_std = ndarray::Array2::<f32>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let mut plane = xhat.index_axis_mut(ndarray::Axis(0), ni);
                let mut plane = plane.index_axis_mut(ndarray::Axis(0), ci);
                let mut mean = 0f64;
                for v in plane.iter() {
                    mean += *v as f64;
                }
                mean /= m;
                let mut var = 0f64;
                for v in plane.iter() {
                    let d = *v as f64 - mean;
                    var += d * d;
                }
                var /= m;
                let is = 1.0 / (var + self.eps as f64).sqrt() as f32;
                inv_std[(ni, ci)] = is;
                let mu = mean as f32;
                plane.mapv_inplace(|v| (v - mu) * is);
            }
        }
        let mut y = xhat.clone();
        if let Some(g) = &self.gamma {
            let gs = g.value.as_slice().unwrap();
            let bs = self.beta.as_ref().unwrap().value.as_slice().unwrap();
            for ni in 0..n {
                for ci in 0..c {
                    let mut plane = y.index_axis_mut(ndarray::Axis(0), ni);
                    let mut plane = plane.index_axis_mut(ndarray::Axis(0), ci);
                    let (gv, bv) = (gs[ci], bs[ci]);
                    plane.mapv_inplace(|v| v * gv + bv);
                }
            }
        }
        self.cache = Some(InCache { xhat, inv_std });
        y
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let cache = self.cache.take().expect("backward before forward");
        let (n, c, h, w) = grad_out.dim();
        let m = (h * w) as f64;
        let gamma: Vec<f32> = match &self.gamma {
            Some(g) => g.value.as_slice().unwrap().to_vec(),
            None => vec![1.0; c],
        };

        let mut dx = grad_out.clone();
        let mut dgamma = vec![0f64; c];
        let mut dbeta = vec![0f64; c];
        for ni in 0..n {
            for ci in 0..c {
                let g = grad_out.index_axis(ndarray::Axis(0), ni);
                let g = g.index_axis(ndarray::Axis(0), ci);
                let xh = cache.xhat.index_axis(ndarray::Axis(0), ni);
                let xh = xh.index_axis(ndarray::Axis(0), ci);
                let mut sum_dy = 0f64;
                let mut sum_dyxh = 0f64;
                for (gv, xv) in g.iter().zip(xh.iter()) {
                    sum_dy += *gv as f64;
                    sum_dyxh += *gv as f64 * *xv as f64;
                }
                dbeta[ci] += sum_dy;
                dgamma[ci] += sum_dyxh;
                let scale = gamma[ci] * cache.inv_std[(ni, ci)];
                let mean_dy = (sum_dy / m) as f32;
                let mean_dyxh = (sum_dyxh / m) as f32;
                let mut d = dx.index_axis_mut(ndarray::Axis(0), ni);
                let mut d = d.index_axis_mut(ndarray::Axis(0), ci);
                ndarray::Zip::from(&mut d).and(&xh).for_each(|dv, xv| {
                    *dv = scale * (*dv - mean_dy - *xv * mean_dyxh);
                });
            }
        }
        if let Some(g) = &mut self.gamma {
            for (a, b) in g.grad.as_slice_mut().unwrap().iter_mut().zip(&dgamma) {
                *a += *b as f32;
            }
        }
        if let Some(b) = &mut self.beta {
            for (a, v) in b.grad.as_slice_mut().unwrap().iter_mut().zip(&dbeta) {
                *a += *v as f32;
            }
        }
        dx
    }
}
