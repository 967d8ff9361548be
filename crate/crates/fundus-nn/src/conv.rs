use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand_chacha::ChaCha8Rng;

use crate::init::{init_tensor, Init};
use crate::layer::Layer;
use crate::param::{Param, ParamSource};

/// 2D convolution with zero padding, im2col + GEMM.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    cached_x: Option<Array4<f32>>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            init_tensor(&[cout, cin, kernel, kernel], fan_in, init, rng),
        );
        let bias = bias.then(|| {
            Param::new(format!("{name}.bias"), init_tensor(&[cout], fan_in, Init::Zeros, rng))
        });
        Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            padding,
            cached_x: None,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn weight_mat(&self) -> ArrayView2<'_, f32> {
        let k = self.cin * self.kernel * self.kernel;
        ArrayView2::from_shape((self.cout, k), self.weight.value.as_slice().unwrap())
            .expect("weight layout")
    }

    /// Unfold one item into a (cin*k*k, oh*ow) matrix.
    fn im2col(&self, x: &ArrayView3<f32>, oh: usize, ow: usize) -> Array2<f32> {
        let (cin, h, w) = (self.cin, x.dim().1, x.dim().2);
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let xs = x.as_slice().expect("standard layout");
        let mut col = Array2::<f32>::zeros((cin * k * k, oh * ow));
        let cs = col.as_slice_mut().unwrap();
        for c in 0..cin {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst_base = row * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = (c * h + iy as usize) * w;
                        let dst_row = dst_base + oy * ow;
                        if s == 1 {
                            // valid ox range: 0 <= ox + kj - p < w
                            let lo = p.saturating_sub(kj);
                            let hi = (w + p - kj).min(ow);
                            if lo < hi {
                                let src0 = src_row + (lo + kj - p);
                                cs[dst_row + lo..dst_row + hi]
                                    .copy_from_slice(&xs[src0..src0 + (hi - lo)]);
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = (ox * s + kj) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    cs[dst_row + ox] = xs[src_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Fold a (cin*k*k, oh*ow) gradient matrix back onto an input-shaped item.
    fn col2im(&self, dcol: &Array2<f32>, h: usize, w: usize, oh: usize, ow: usize) -> Array3<f32> {
        let (cin, k, s, p) = (self.cin, self.kernel, self.stride, self.padding);
        let mut dx = Array3::<f32>::zeros((cin, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        let dcs = dcol.as_slice().expect("standard layout");
        for c in 0..cin {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src_base = row * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = (c * h + iy as usize) * w;
                        let src_row = src_base + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dxs[dst_row + ix as usize] += dcs[src_row + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl ParamSource for Conv2d {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let (n, cin, h, w) = x.dim();
        assert_eq!(cin, self.cin, "conv input channels");
        let (oh, ow) = self.out_spatial(h, w);
        let wmat = self.weight_mat();
        let bias = self.bias.as_ref().map(|b| b.value.as_slice().unwrap().to_vec());

        let mut out = Array4::<f32>::zeros((n, self.cout, oh, ow));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut oi)| {
                let xi = x.index_axis(Axis(0), i);
                let col = self.im2col(&xi, oh, ow);
                let y = wmat.dot(&col); // (cout, oh*ow)
                let os = oi.as_slice_mut().unwrap();
                os.copy_from_slice(y.as_slice().unwrap());
                if let Some(b) = &bias {
                    for (co, bv) in b.iter().enumerate() {
                        for v in &mut os[co * oh * ow..(co + 1) * oh * ow] {
                            *v += bv;
                        }
                    }
                }
            });
        self.cached_x = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let x = self.cached_x.take().expect("backward before forward");
        let (n, _, h, w) = x.dim();
        let (_, cout, oh, ow) = grad_out.dim();
        assert_eq!(cout, self.cout);
        let k = self.cin * self.kernel * self.kernel;
        let wmat = self.weight_mat();

        // Per-item contributions computed in parallel, reduced in index order
        // so accumulation stays deterministic.
        let per_item: Vec<(Array2<f32>, Vec<f32>, Array3<f32>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = x.index_axis(Axis(0), i);
                let gi = grad_out.index_axis(Axis(0), i);
                let gmat = ArrayView2::from_shape((cout, oh * ow), gi.as_slice().unwrap())
                    .expect("grad layout");
                let col = self.im2col(&xi, oh, ow);
                let dw = gmat.dot(&col.t()); // (cout, k)
                let db: Vec<f32> = (0..cout).map(|c| gmat.row(c).sum()).collect();
                let dcol = wmat.t().dot(&gmat); // (k, oh*ow)
                let dx = self.col2im(&dcol, h, w, oh, ow);
                (dw, db, dx)
            })
            .collect();

        let mut dx = Array4::<f32>::zeros(x.raw_dim());
        {
            let dwp = self.weight.grad.as_slice_mut().unwrap();
            for (i, (dw, db, dxi)) in per_item.into_iter().enumerate() {
                debug_assert_eq!(dw.len(), cout * k);
                for (a, b) in dwp.iter_mut().zip(dw.as_slice().unwrap()) {
                    *a += b;
                }
                if let Some(bias) = &mut self.bias {
                    for (a, b) in bias.grad.as_slice_mut().unwrap().iter_mut().zip(&db) {
                        *a += b;
                    }
                }
                dx.index_axis_mut(Axis(0), i).assign(&dxi);
            }
        }
        dx
    }
}
