use ndarray::{Array2, Array4};

use crate::layer::Layer;
use crate::param::{Param, ParamSource};

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
pub struct MaxPool2d {
    argmax: Option<Vec<u32>>,
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self {
            argmax: None,
            in_dim: (0, 0, 0, 0),
        }
    }
}

impl Default for MaxPool2d {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSource for MaxPool2d {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = (h / 2, w / 2);
        let xs = x.as_slice().unwrap();
        let mut out = Array4::<f32>::zeros((n, c, oh, ow));
        let os = out.as_slice_mut().unwrap();
        let mut argmax = vec![0u32; n * c * oh * ow];
        for nc in 0..n * c {
            let base = nc * h * w;
            let obase = nc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = base + (2 * oy) * w + 2 * ox;
                    let idx = [i00, i00 + 1, i00 + w, i00 + w + 1];
                    let mut best = idx[0];
                    let mut bv = xs[idx[0]];
                    for &i in &idx[1..] {
                        if xs[i] > bv {
                            bv = xs[i];
                            best = i;
                        }
                    }
                    os[obase + oy * ow + ox] = bv;
                    argmax[obase + oy * ow + ox] = best as u32;
                }
            }
        }
        self.argmax = Some(argmax);
        self.in_dim = (n, c, h, w);
        out
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let argmax = self.argmax.take().expect("backward before forward");
        let mut dx = Array4::<f32>::zeros(self.in_dim);
        let dxs = dx.as_slice_mut().unwrap();
        for (g, &i) in grad_out.iter().zip(argmax.iter()) {
            dxs[i as usize] += *g;
        }
        dx
    }
}

/// 3x3 average pooling, stride 1, zero padding 1 (padding counts in the mean).
pub struct AvgPool3x3 {
    in_dim: (usize, usize, usize, usize),
}

impl AvgPool3x3 {
    pub fn new() -> Self {
        Self { in_dim: (0, 0, 0, 0) }
    }
}

impl Default for AvgPool3x3 {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSource for AvgPool3x3 {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for AvgPool3x3 {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        self.in_dim = (n, c, h, w);
        let xs = x.as_slice().unwrap();
        let mut out = Array4::<f32>::zeros((n, c, h, w));
        let os = out.as_slice_mut().unwrap();
        for nc in 0..n * c {
            let base = nc * h * w;
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = 0f32;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (yy, xc) = (y + dy, xx + dx);
                            if yy >= 0 && yy < h as isize && xc >= 0 && xc < w as isize {
                                acc += xs[base + yy as usize * w + xc as usize];
                            }
                        }
                    }
                    os[base + y as usize * w + xx as usize] = acc / 9.0;
                }
            }
        }
        out
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.in_dim;
        let gs = grad_out.as_slice().unwrap();
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        for nc in 0..n * c {
            let base = nc * h * w;
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let g = gs[base + y as usize * w + xx as usize] / 9.0;
                    for dy in -1..=1 {
                        for dxo in -1..=1 {
                            let (yy, xc) = (y + dy, xx + dxo);
                            if yy >= 0 && yy < h as isize && xc >= 0 && xc < w as isize {
                                dxs[base + yy as usize * w + xc as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Nearest-neighbour 2x upsampling.
pub struct Upsample2x {
    in_dim: (usize, usize, usize, usize),
}

impl Upsample2x {
    pub fn new() -> Self {
        Self { in_dim: (0, 0, 0, 0) }
    }
}

impl Default for Upsample2x {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSource for Upsample2x {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for Upsample2x {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        self.in_dim = (n, c, h, w);
        let xs = x.as_slice().unwrap();
        let mut out = Array4::<f32>::zeros((n, c, 2 * h, 2 * w));
        let os = out.as_slice_mut().unwrap();
        let (oh, ow) = (2 * h, 2 * w);
        for nc in 0..n * c {
            let base = nc * h * w;
            let obase = nc * oh * ow;
            for y in 0..oh {
                for xx in 0..ow {
                    os[obase + y * ow + xx] = xs[base + (y / 2) * w + xx / 2];
                }
            }
        }
        out
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.in_dim;
        let gs = grad_out.as_slice().unwrap();
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        let (oh, ow) = (2 * h, 2 * w);
        for nc in 0..n * c {
            let base = nc * h * w;
            let obase = nc * oh * ow;
            for y in 0..oh {
                for xx in 0..ow {
                    dxs[base + (y / 2) * w + xx / 2] += gs[obase + y * ow + xx];
                }
            }
        }
        dx
    }
}

/// Mean over the spatial dimensions: (N, C, H, W) -> (N, C).
pub fn global_avg_pool(x: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let m = (h * w) as f32;
    let mut out = Array2::<f32>::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let plane = x.index_axis(ndarray::Axis(0), ni);
            let plane = plane.index_axis(ndarray::Axis(0), ci);
            out[(ni, ci)] = plane.sum() / m;
        }
    }
    out
}

pub fn global_avg_pool_backward(grad: &Array2<f32>, spatial: (usize, usize)) -> Array4<f32> {
    let (n, c) = grad.dim();
    let (h, w) = spatial;
    let m = (h * w) as f32;
    let mut dx = Array4::<f32>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let g = grad[(ni, ci)] / m;
            dx.index_axis_mut(ndarray::Axis(0), ni)
                .index_axis_mut(ndarray::Axis(0), ci)
                .fill(g);
        }
    }
    dx
}
