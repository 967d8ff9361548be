//! Finite-difference checks for every layer's backward pass.

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::gradcheck::{check_layer, rel_err};
use fundus_nn::init::Init;
use fundus_nn::layer::Activation;
use fundus_nn::loss;
use fundus_nn::{
    conv_block, Adam, AvgPool3x3, BatchNorm2d, Conv2d, InstanceNorm2d, Linear, MaxPool2d, Param,
    ParamSource, Residual, Upsample2x,
};

fn rand_input(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Array4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn((n, c, h, w), |_| rng.random_range(-1.0..1.0))
}

const TOL: f64 = 2e-2;

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut layer = Conv2d::new("c", 3, 4, 3, 1, 1, true, Init::HeUniform, &mut rng);
    let x = rand_input(2, 3, 7, 7, 2);
    assert!(check_layer(&mut layer, &x, false) < TOL);
}

#[test]
fn conv2d_strided_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut layer = Conv2d::new("c", 2, 3, 4, 2, 1, true, Init::HeUniform, &mut rng);
    let x = rand_input(2, 2, 8, 8, 4);
    assert!(check_layer(&mut layer, &x, false) < TOL);
}

#[test]
fn batchnorm_gradients() {
    let mut layer = BatchNorm2d::new("bn", 3);
    // move gamma/beta off their init so gradients are generic
    for p in layer.params_mut() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        p.value.mapv_inplace(|v| v + rng.random_range(-0.3..0.3f32));
    }
    let x = rand_input(2, 3, 5, 5, 5);
    assert!(check_layer(&mut layer, &x, true) < TOL);
}

#[test]
fn instancenorm_gradients() {
    let mut layer = InstanceNorm2d::new("in", 3, true);
    let x = rand_input(2, 3, 6, 6, 6);
    assert!(check_layer(&mut layer, &x, true) < TOL);
}

#[test]
fn activation_gradients() {
    let x = rand_input(2, 3, 5, 5, 8);
    assert!(check_layer(&mut Activation::relu(), &x, false) < TOL);
    assert!(check_layer(&mut Activation::leaky_relu(0.2), &x, false) < TOL);
    assert!(check_layer(&mut Activation::tanh(), &x, false) < TOL);
}

#[test]
fn pooling_gradients() {
    let x = rand_input(2, 2, 6, 6, 9);
    assert!(check_layer(&mut MaxPool2d::new(), &x, false) < TOL);
    assert!(check_layer(&mut AvgPool3x3::new(), &x, false) < TOL);
    assert!(check_layer(&mut Upsample2x::new(), &x, false) < TOL);
}

#[test]
fn residual_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut layer = Residual::new("r", 3, 5, &mut rng);
    let x = rand_input(2, 3, 6, 6, 12);
    assert!(check_layer(&mut layer, &x, true) < TOL);
}

#[test]
fn conv_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut layer = conv_block("cb", 2, 4, 3, 1, 1, &mut rng);
    let x = rand_input(2, 2, 6, 6, 14);
    assert!(check_layer(&mut layer, &x, true) < TOL);
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut lin = Linear::new("fc", 6, 4, &mut rng);
    let mut xr = ChaCha8Rng::seed_from_u64(16);
    let x = Array2::from_shape_fn((3, 6), |_| xr.random_range(-1.0..1.0f32));
    let y = lin.forward(&x);
    let coeffs = Array2::from_shape_fn(y.dim(), |(i, j)| ((i * 7 + j * 3) % 5) as f32 - 2.0);
    lin.zero_grads();
    let dx = lin.backward(&coeffs);

    let loss_of = |lin: &mut Linear, xv: &Array2<f32>| -> f64 {
        lin.forward(xv)
            .iter()
            .zip(coeffs.iter())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    };
    let h = 1e-2f32;
    for idx in 0..x.len() {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[idx] += h;
        let mut xm = x.clone();
        xm.as_slice_mut().unwrap()[idx] -= h;
        let num = (loss_of(&mut lin, &xp) - loss_of(&mut lin, &xm)) / (2.0 * h as f64);
        assert!(rel_err(dx.as_slice().unwrap()[idx] as f64, num) < TOL);
    }
}

#[test]
fn weighted_ce_gradient_matches_finite_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let logits = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.5..1.5f32));
    let labels = vec![0, 1, 1, 0, 1];
    let weights = [1.0f32, 4.0];
    let (_, grad) = loss::weighted_cross_entropy(&logits, &labels, &weights);
    let h = 1e-3f32;
    for idx in 0..logits.len() {
        let mut lp = logits.clone();
        lp.as_slice_mut().unwrap()[idx] += h;
        let mut lm = logits.clone();
        lm.as_slice_mut().unwrap()[idx] -= h;
        let (fp, _) = loss::weighted_cross_entropy(&lp, &labels, &weights);
        let (fm, _) = loss::weighted_cross_entropy(&lm, &labels, &weights);
        let num = (fp - fm) / (2.0 * h as f64);
        assert!(rel_err(grad.as_slice().unwrap()[idx] as f64, num) < 1e-2);
    }
}

#[test]
fn pixel_ce_gradient_matches_finite_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let scores = Array4::from_shape_fn((1, 3, 4, 4), |_| rng.random_range(-1.0..1.0f32));
    let labels = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| ((y + x) % 3) as u8);
    let (_, grad) = loss::pixel_cross_entropy(&scores, &labels);
    let h = 1e-3f32;
    for idx in (0..scores.len()).step_by(3) {
        let mut sp = scores.clone();
        sp.as_slice_mut().unwrap()[idx] += h;
        let mut sm = scores.clone();
        sm.as_slice_mut().unwrap()[idx] -= h;
        let (fp, _) = loss::pixel_cross_entropy(&sp, &labels);
        let (fm, _) = loss::pixel_cross_entropy(&sm, &labels);
        let num = (fp - fm) / (2.0 * h as f64);
        assert!(rel_err(grad.as_slice().unwrap()[idx] as f64, num) < 1e-2);
    }
}

#[test]
fn adam_skips_frozen_params() {
    struct TwoParams {
        a: Param,
        b: Param,
    }
    impl ParamSource for TwoParams {
        fn params(&self) -> Vec<&Param> {
            vec![&self.a, &self.b]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.a, &mut self.b]
        }
    }
    let mut net = TwoParams {
        a: Param::new("a", ndarray::ArrayD::ones(ndarray::IxDyn(&[4]))),
        b: Param::new("b", ndarray::ArrayD::ones(ndarray::IxDyn(&[4]))),
    };
    net.a.trainable = false;
    let frozen_bytes: Vec<u32> = net.a.value.iter().map(|v| v.to_bits()).collect();
    let mut opt = Adam::new();
    for _ in 0..10 {
        net.a.grad.fill(0.5);
        net.b.grad.fill(0.5);
        opt.step(&mut net, 1e-2);
    }
    let after: Vec<u32> = net.a.value.iter().map(|v| v.to_bits()).collect();
    assert_eq!(frozen_bytes, after, "frozen param must be bitwise unchanged");
    assert!(net.b.value.iter().any(|&v| v != 1.0), "trainable param must move");
}

#[test]
fn mse_drives_value_to_target() {
    // one-parameter sanity: minimize (p - 3)^2 with Adam
    struct One {
        p: Param,
    }
    impl ParamSource for One {
        fn params(&self) -> Vec<&Param> {
            vec![&self.p]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.p]
        }
    }
    let mut net = One {
        p: Param::new("p", ndarray::ArrayD::zeros(ndarray::IxDyn(&[1]))),
    };
    let mut opt = Adam::new();
    for _ in 0..2000 {
        let v = net.p.value[[0]];
        net.p.grad[[0]] = 2.0 * (v - 3.0);
        opt.step(&mut net, 0.05);
        net.p.zero_grad();
    }
    assert!((net.p.value[[0]] - 3.0).abs() < 1e-3);
}
