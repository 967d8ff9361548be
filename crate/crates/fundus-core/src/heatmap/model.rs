//! Stacked hourglass heatmap regressor.
//!
//! One shared stem feeds `stacks` hourglass modules; every stack emits its
//! own 2-channel heatmap set through a single head (both landmarks always
//! come from one trunk), and all but the last remap features + heatmaps back
//! into the trunk for the next stack.

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::init::Init;
use fundus_nn::layer::Layer;
use fundus_nn::{
    conv_block, Conv2d, MaxPool2d, Param, ParamSource, Residual, Sequential, SpatialDropout2d,
    Upsample2x,
};

use super::HourglassConfig;

/// One encoder/decoder hourglass with skip connections at every scale.
struct Hourglass {
    skip: Residual,
    pool: MaxPool2d,
    down: Residual,
    inner: Inner,
    up_path: Residual,
    upsample: Upsample2x,
}

enum Inner {
    Nested(Box<Hourglass>),
    Bottom(Residual),
}

impl Hourglass {
    fn new(name: &str, depth: usize, features: usize, rng: &mut ChaCha8Rng) -> Self {
        let inner = if depth > 1 {
            Inner::Nested(Box::new(Hourglass::new(&format!("{name}.inner"), depth - 1, features, rng)))
        } else {
            Inner::Bottom(Residual::new(&format!("{name}.bottom"), features, features, rng))
        };
        Self {
            skip: Residual::new(&format!("{name}.skip"), features, features, rng),
            pool: MaxPool2d::new(),
            down: Residual::new(&format!("{name}.down"), features, features, rng),
            inner,
            up_path: Residual::new(&format!("{name}.up"), features, features, rng),
            upsample: Upsample2x::new(),
        }
    }
}

impl ParamSource for Hourglass {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.skip.params();
        v.extend(self.down.params());
        match &self.inner {
            Inner::Nested(h) => v.extend(h.params()),
            Inner::Bottom(r) => v.extend(r.params()),
        }
        v.extend(self.up_path.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.skip.params_mut();
        v.extend(self.down.params_mut());
        match &mut self.inner {
            Inner::Nested(h) => v.extend(h.params_mut()),
            Inner::Bottom(r) => v.extend(r.params_mut()),
        }
        v.extend(self.up_path.params_mut());
        v
    }
}

impl Layer for Hourglass {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let skip = self.skip.forward(x, train);
        let mut low = self.pool.forward(x, train);
        low = self.down.forward(&low, train);
        low = match &mut self.inner {
            Inner::Nested(h) => h.forward(&low, train),
            Inner::Bottom(r) => r.forward(&low, train),
        };
        low = self.up_path.forward(&low, train);
        let up = self.upsample.forward(&low, train);
        skip + up
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let d_skip = self.skip.backward(grad_out);
        let mut d = self.upsample.backward(grad_out);
        d = self.up_path.backward(&d);
        d = match &mut self.inner {
            Inner::Nested(h) => h.backward(&d),
            Inner::Bottom(r) => r.backward(&d),
        };
        d = self.down.backward(&d);
        d = self.pool.backward(&d);
        d_skip + d
    }
}

/// One supervised stage: hourglass, feature refit, dropout, heatmap head,
/// and (between stacks) the remap of features and heatmaps into the trunk.
struct Stack {
    hourglass: Hourglass,
    refit: Sequential,
    dropout: SpatialDropout2d,
    head: Conv2d,
    remap_features: Option<Conv2d>,
    remap_heatmaps: Option<Conv2d>,
    cached_x: Option<Array4<f32>>,
}

impl Stack {
    fn new(name: &str, config: &HourglassConfig, last: bool, rng: &mut ChaCha8Rng, drop_seed: u64) -> Self {
        let f = config.features;
        let c = config.output_channels;
        Self {
            hourglass: Hourglass::new(&format!("{name}.hg"), config.depth, f, rng),
            refit: conv_block(&format!("{name}.refit"), f, f, 1, 1, 0, rng),
            dropout: SpatialDropout2d::new(config.spatial_dropout_rate as f32, drop_seed),
            head: Conv2d::new(&format!("{name}.head"), f, c, 1, 1, 0, true, Init::HeUniform, rng),
            remap_features: (!last).then(|| {
                Conv2d::new(&format!("{name}.remap_f"), f, f, 1, 1, 0, false, Init::HeUniform, rng)
            }),
            remap_heatmaps: (!last).then(|| {
                Conv2d::new(&format!("{name}.remap_y"), c, f, 1, 1, 0, false, Init::HeUniform, rng)
            }),
            cached_x: None,
        }
    }

    /// Returns (heatmaps, trunk input for the next stack).
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> (Array4<f32>, Option<Array4<f32>>) {
        let h = self.hourglass.forward(x, train);
        let h = self.refit.forward(&h, train);
        let hd = self.dropout.forward(&h, train);
        let y = self.head.forward(&hd, train);
        let next = match (&mut self.remap_features, &mut self.remap_heatmaps) {
            (Some(rf), Some(ry)) => Some(x + &rf.forward(&hd, train) + ry.forward(&y, train)),
            _ => None,
        };
        self.cached_x = Some(x.clone());
        (y, next)
    }

    /// `d_y` is the loss gradient on this stack's heatmaps, `d_next` the
    /// gradient flowing back from the next stack's input (if any).
    fn backward(&mut self, d_y: &Array4<f32>, d_next: Option<&Array4<f32>>) -> Array4<f32> {
        self.cached_x.take().expect("backward before forward");
        let (d_y_total, d_hd_remap, d_skip) =
            match (&mut self.remap_features, &mut self.remap_heatmaps, d_next) {
                (Some(rf), Some(ry), Some(dn)) => {
                    (d_y + &ry.backward(dn), Some(rf.backward(dn)), Some(dn))
                }
                _ => (d_y.clone(), None, None),
            };
        let mut d_hd = self.head.backward(&d_y_total);
        if let Some(extra) = d_hd_remap {
            d_hd = d_hd + extra;
        }
        let d_h = self.dropout.backward(&d_hd);
        let d_hg = self.refit.backward(&d_h);
        let dx = self.hourglass.backward(&d_hg);
        match d_skip {
            Some(dn) => dx + dn,
            None => dx,
        }
    }
}

impl ParamSource for Stack {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.hourglass.params();
        v.extend(self.refit.params());
        v.extend(self.head.params());
        if let Some(r) = &self.remap_features {
            v.extend(r.params());
        }
        if let Some(r) = &self.remap_heatmaps {
            v.extend(r.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.hourglass.params_mut();
        v.extend(self.refit.params_mut());
        v.extend(self.head.params_mut());
        if let Some(r) = &mut self.remap_features {
            v.extend(r.params_mut());
        }
        if let Some(r) = &mut self.remap_heatmaps {
            v.extend(r.params_mut());
        }
        v
    }
}

/// The full stacked-hourglass localizer.
pub struct HourglassNet {
    stem: Sequential,
    stacks: Vec<Stack>,
    config: HourglassConfig,
}

impl HourglassNet {
    pub fn new(config: &HourglassConfig) -> Result<Self, super::HeatmapError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let f = config.features;
        let stem = Sequential::new(vec![
            Box::new(conv_block("stem.c1", 3, f / 2, 7, 1, 3, &mut rng)),
            Box::new(conv_block("stem.c2", f / 2, f, 3, 1, 1, &mut rng)),
        ]);
        let stacks = (0..config.stacks)
            .map(|i| {
                Stack::new(
                    &format!("stack{i}"),
                    config,
                    i + 1 == config.stacks,
                    &mut rng,
                    crate::util::derive_seed_idx(config.seed, "dropout", i as u64),
                )
            })
            .collect();
        Ok(Self {
            stem,
            stacks,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &HourglassConfig {
        &self.config
    }

    pub fn stack_count(&self) -> usize {
        self.stacks.len()
    }

    /// Each stack has exactly one heatmap head; both landmark channels come
    /// from that single shared trunk.
    pub fn heads_per_stack(&self) -> usize {
        1
    }

    pub fn head_output_channels(&self) -> usize {
        self.config.output_channels
    }

    /// Forward pass: one (N, output_channels, S, S) heatmap set per stack.
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Vec<Array4<f32>> {
        let mut trunk = self.stem.forward(x, train);
        let mut outputs = Vec::with_capacity(self.stacks.len());
        for stack in self.stacks.iter_mut() {
            let (y, next) = stack.forward(&trunk, train);
            outputs.push(y);
            if let Some(next) = next {
                trunk = next;
            }
        }
        outputs
    }

    /// Backward pass from per-stack heatmap gradients (intermediate
    /// supervision with equal weights).
    pub fn backward(&mut self, grads: &[Array4<f32>]) {
        assert_eq!(grads.len(), self.stacks.len(), "one gradient per stack");
        let mut d_next: Option<Array4<f32>> = None;
        for (stack, d_y) in self.stacks.iter_mut().zip(grads.iter()).rev() {
            let dx = stack.backward(d_y, d_next.as_ref());
            d_next = Some(dx);
        }
        if let Some(d) = d_next {
            self.stem.backward(&d);
        }
    }
}

impl ParamSource for HourglassNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.stem.params();
        for s in &self.stacks {
            v.extend(s.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.stem.params_mut();
        for s in &mut self.stacks {
            v.extend(s.params_mut());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> HourglassConfig {
        HourglassConfig {
            input_size: 32,
            features: 4,
            depth: 2,
            seed: 3,
            ..HourglassConfig::default()
        }
    }

    #[test]
    fn output_shape_one_heatmap_set_per_stack() {
        let mut net = HourglassNet::new(&tiny_config()).unwrap();
        let x = Array4::<f32>::zeros((1, 3, 32, 32));
        let out = net.forward(&x, false);
        assert_eq!(out.len(), 2);
        for y in &out {
            assert_eq!(y.dim(), (1, 2, 32, 32));
        }
    }

    #[test]
    fn seeded_init_reproducible() {
        let a = HourglassNet::new(&tiny_config()).unwrap();
        let b = HourglassNet::new(&tiny_config()).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.value, pb.value, "param {} differs", pa.name);
        }
    }

    #[test]
    fn eval_forward_deterministic_with_dropout_configured() {
        let mut net = HourglassNet::new(&tiny_config()).unwrap();
        let x = Array4::from_shape_fn((1, 3, 32, 32), |(_, c, y, xx)| {
            (c as f32 * 0.3 + y as f32 * 0.01 + xx as f32 * 0.02).sin()
        });
        let a = net.forward(&x, false);
        let b = net.forward(&x, false);
        assert_eq!(a, b);
    }

    #[test]
    fn single_shared_trunk_feeds_both_channels() {
        let net = HourglassNet::new(&tiny_config()).unwrap();
        assert_eq!(net.heads_per_stack(), 1);
        assert_eq!(net.head_output_channels(), 2);
    }

    #[test]
    fn gradients_flow_through_both_stacks() {
        let mut net = HourglassNet::new(&tiny_config()).unwrap();
        let x = Array4::from_shape_fn((1, 3, 32, 32), |(_, c, y, xx)| {
            ((c + y + xx) as f32 * 0.05).cos()
        });
        let out = net.forward(&x, true);
        let grads: Vec<Array4<f32>> = out.iter().map(|y| y.mapv(|_| 1.0)).collect();
        net.zero_grads();
        net.backward(&grads);
        let nonzero = net
            .params()
            .iter()
            .filter(|p| p.grad.iter().any(|&g| g != 0.0))
            .count();
        // every parameter should receive gradient except possibly dead ReLUs
        assert!(nonzero > net.params().len() * 3 / 4);
    }
}
