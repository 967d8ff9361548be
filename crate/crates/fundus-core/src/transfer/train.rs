//! Cycle-consistent adversarial training over two unpaired image sets.
//! Least-squares adversarial terms, L1 cycle and identity terms, joint Adam
//! (beta1 = 0.5) over both generators, per-image alternation with the two
//! discriminators.

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::{loss, snapshot_params, Adam, Param, ParamSource};

use super::model::{to_gan_range, Discriminator, Generator};
use super::{CycleGanConfig, DomainPair, GanError};
use crate::util::{derive_seed, derive_seed_idx};

/// Both directional generators of one domain pair.
pub struct GeneratorPair {
    /// a -> b
    pub forward: Generator,
    /// b -> a
    pub backward: Generator,
}

impl std::fmt::Debug for GeneratorPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "GeneratorPair({}<->{})",
            self.forward.source.index(),
            self.forward.target.index()
        )
    }
}

impl ParamSource for GeneratorPair {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.forward.params();
        v.extend(self.backward.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.forward.params_mut();
        v.extend(self.backward.params_mut());
        v
    }
}

/// Mean per-epoch loss components (generator side).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub adversarial: f64,
    pub cycle: f64,
    pub identity: f64,
    pub discriminator: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct GanHistory {
    pub epochs: Vec<GanEpoch>,
}

fn batch_of(image: &Array3<f32>) -> Array4<f32> {
    let (c, h, w) = image.dim();
    let mut out = Array4::<f32>::zeros((1, c, h, w));
    out.index_axis_mut(ndarray::Axis(0), 0).assign(image);
    out
}

/// Trains one cycleGAN on unpaired [0,255] CHW image sets from the two
/// domains of `pair`. Images are resized by the caller to
/// `config.image_size`. Returns both directional generators and the loss
/// history; a non-finite loss aborts with the last finite-epoch weights
/// attached to the error.
pub fn train_cyclegan(
    pair: DomainPair,
    images_a: &[Array3<f32>],
    images_b: &[Array3<f32>],
    config: &CycleGanConfig,
) -> Result<(GeneratorPair, GanHistory), GanError> {
    config.validate()?;
    if images_a.is_empty() || images_b.is_empty() {
        return Err(GanError::EmptySet);
    }
    let s = config.image_size;
    for (set, name) in [(images_a, "a"), (images_b, "b")] {
        for img in set.iter() {
            if img.dim() != (3, s, s) {
                return Err(GanError::BadConfig(format!(
                    "image set {name} contains {:?}, expected (3, {s}, {s})",
                    img.dim()
                )));
            }
        }
    }

    let seed = derive_seed(config.seed, &format!("cyclegan-{}{}", pair.a.index(), pair.b.index()));
    let mut gens = GeneratorPair {
        forward: Generator::new(pair.a, pair.b, s, config.ngf, config.n_res_blocks, seed),
        backward: Generator::new(pair.b, pair.a, s, config.ngf, config.n_res_blocks, seed.wrapping_add(1)),
    };
    let mut disc_b = Discriminator::new(config.ndf, seed.wrapping_add(2));
    let mut disc_a = Discriminator::new(config.ndf, seed.wrapping_add(3));

    let mut opt_g = Adam::with_betas(0.5, 0.999);
    let mut opt_da = Adam::with_betas(0.5, 0.999);
    let mut opt_db = Adam::with_betas(0.5, 0.999);

    // pre-normalized tensors
    let norm_a: Vec<Array4<f32>> = images_a.iter().map(|i| batch_of(&to_gan_range(i))).collect();
    let norm_b: Vec<Array4<f32>> = images_b.iter().map(|i| batch_of(&to_gan_range(i))).collect();

    let mut history = GanHistory::default();
    let mut last_good: Option<Vec<ndarray::ArrayD<f32>>> = None;
    let steps = norm_a.len().min(norm_b.len());
    let (l_cyc, l_idt, l_adv) = (config.lambda_cycle as f32, config.lambda_identity as f32, config.lambda_adversarial as f32);

    for epoch in 1..=config.epochs {
        let mut order_a: Vec<usize> = (0..norm_a.len()).collect();
        let mut order_b: Vec<usize> = (0..norm_b.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_idx(seed, "epoch", epoch as u64));
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);

        let (mut sum_adv, mut sum_cyc, mut sum_idt, mut sum_d) = (0f64, 0f64, 0f64, 0f64);
        for step in 0..steps {
            let a = &norm_a[order_a[step]];
            let b = &norm_b[order_b[step]];

            // ---- generator phase ----
            gens.zero_grads();

            // identity terms: G_ab(b) ~ b, G_ba(a) ~ a
            let idt_b = gens.forward.forward(b, true);
            let (li_b, gi_b) = loss::l1(&idt_b, b);
            gens.forward.backward(&gi_b.mapv(|v| v * l_idt));
            let idt_a = gens.backward.forward(a, true);
            let (li_a, gi_a) = loss::l1(&idt_a, a);
            gens.backward.backward(&gi_a.mapv(|v| v * l_idt));

            // a -> b -> a half cycle
            let fake_b = gens.forward.forward(a, true);
            let pred_fb = disc_b.forward(&fake_b, true);
            let (ladv_ab, gadv) = loss::mse_const(&pred_fb, 1.0);
            let d_fb_adv = disc_b.backward(&gadv.mapv(|v| v * l_adv));
            let rec_a = gens.backward.forward(&fake_b, true);
            let (lcyc_a, gcyc) = loss::l1(&rec_a, a);
            let d_fb_cyc = gens.backward.backward(&gcyc.mapv(|v| v * l_cyc));
            gens.forward.backward(&(d_fb_adv + d_fb_cyc));

            // b -> a -> b half cycle
            let fake_a = gens.backward.forward(b, true);
            let pred_fa = disc_a.forward(&fake_a, true);
            let (ladv_ba, gadv) = loss::mse_const(&pred_fa, 1.0);
            let d_fa_adv = disc_a.backward(&gadv.mapv(|v| v * l_adv));
            let rec_b = gens.forward.forward(&fake_a, true);
            let (lcyc_b, gcyc) = loss::l1(&rec_b, b);
            let d_fa_cyc = gens.forward.backward(&gcyc.mapv(|v| v * l_cyc));
            gens.backward.backward(&(d_fa_adv + d_fa_cyc));

            opt_g.step(&mut gens, config.learning_rate);

            // ---- discriminator phase (generator outputs detached) ----
            let mut d_loss = 0f64;
            for (disc, opt, real, fake) in [
                (&mut disc_b, &mut opt_db, b, &fake_b),
                (&mut disc_a, &mut opt_da, a, &fake_a),
            ] {
                disc.zero_grads();
                let p_real = disc.forward(real, true);
                let (lr, gr) = loss::mse_const(&p_real, 1.0);
                disc.backward(&gr.mapv(|v| v * 0.5));
                let p_fake = disc.forward(fake, true);
                let (lf, gf) = loss::mse_const(&p_fake, 0.0);
                disc.backward(&gf.mapv(|v| v * 0.5));
                opt.step(disc, config.learning_rate);
                d_loss += 0.5 * (lr + lf);
            }

            let adv = l_adv as f64 * (ladv_ab + ladv_ba);
            let cyc = l_cyc as f64 * (lcyc_a + lcyc_b);
            let idt = l_idt as f64 * (li_a + li_b);
            let total = adv + cyc + idt + d_loss;
            if !total.is_finite() {
                return Err(GanError::NonFinite {
                    epoch,
                    last_good: last_good.map(|snap| {
                        let mut restored = GeneratorPair {
                            forward: Generator::new(pair.a, pair.b, s, config.ngf, config.n_res_blocks, seed),
                            backward: Generator::new(
                                pair.b,
                                pair.a,
                                s,
                                config.ngf,
                                config.n_res_blocks,
                                seed.wrapping_add(1),
                            ),
                        };
                        fundus_nn::restore_params(&mut restored, &snap);
                        Box::new(restored)
                    }),
                });
            }
            sum_adv += adv;
            sum_cyc += cyc;
            sum_idt += idt;
            sum_d += d_loss;
        }

        history.epochs.push(GanEpoch {
            epoch,
            adversarial: sum_adv / steps as f64,
            cycle: sum_cyc / steps as f64,
            identity: sum_idt / steps as f64,
            discriminator: sum_d / steps as f64,
        });
        last_good = Some(snapshot_params(&gens));
    }
    Ok((gens, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;

    fn tiny_config(epochs: usize) -> CycleGanConfig {
        CycleGanConfig {
            image_size: 32,
            ngf: 4,
            ndf: 4,
            n_res_blocks: 1,
            epochs,
            seed: 9,
            ..CycleGanConfig::default()
        }
    }

    /// Two synthetic domains: same geometry, fixed color cast difference.
    fn color_cast_sets(n: usize, s: usize) -> (Vec<Array3<f32>>, Vec<Array3<f32>>) {
        let mut make = |cast: [f32; 3], phase: usize| -> Vec<Array3<f32>> {
            (0..n)
                .map(|i| {
                    Array3::from_shape_fn((3, s, s), |(c, y, x)| {
                        let blob = if (y as i32 - (8 + ((i + phase) % 8) as i32)).pow(2)
                            + (x as i32 - (8 + ((i * 3) % 12) as i32)).pow(2)
                            < 30
                        {
                            140.0
                        } else {
                            0.0
                        };
                        (cast[c] + blob).min(255.0)
                    })
                })
                .collect()
        };
        (make([140.0, 60.0, 40.0], 0), make([40.0, 80.0, 150.0], 3))
    }

    #[test]
    fn cycle_loss_halves_on_color_cast_domains() {
        let (a, b) = color_cast_sets(8, 32);
        let pair = DomainPair::new(Domain::D1, Domain::D2).unwrap();
        let (_, history) = train_cyclegan(pair, &a, &b, &tiny_config(25)).unwrap();
        assert_eq!(history.epochs.len(), 25);
        let first = history.epochs.first().unwrap().cycle;
        let last = history.epochs.last().unwrap().cycle;
        assert!(
            last <= 0.5 * first,
            "cycle loss did not halve: {first} -> {last}"
        );
    }

    #[test]
    fn identical_domains_learn_identity_like_mapping() {
        let (a, _) = color_cast_sets(6, 32);
        let pair = DomainPair::new(Domain::D2, Domain::D3).unwrap();
        let (mut gens, _) = train_cyclegan(pair, &a, &a, &tiny_config(30)).unwrap();
        // translated images should stay close to the inputs
        let mut err = 0f64;
        for img in &a {
            let x = batch_of(&to_gan_range(img));
            let y = gens.forward.forward(&x, false);
            let (l1, _) = loss::l1(&y, &x);
            err += l1;
        }
        err /= a.len() as f64;
        // inputs span [-1,1]; a mean L1 below 0.15 is identity-like
        assert!(err < 0.15, "translated images drifted from inputs: L1 {err}");
    }

    #[test]
    fn history_length_matches_epochs() {
        let (a, b) = color_cast_sets(3, 32);
        let pair = DomainPair::new(Domain::D1, Domain::D3).unwrap();
        let (_, history) = train_cyclegan(pair, &a, &b, &tiny_config(4)).unwrap();
        assert_eq!(history.epochs.len(), 4);
    }

    #[test]
    fn nan_input_aborts_with_diagnostic() {
        let (mut a, b) = color_cast_sets(3, 32);
        a[0][(0, 0, 0)] = f32::NAN;
        let pair = DomainPair::new(Domain::D1, Domain::D2).unwrap();
        let err = train_cyclegan(pair, &a, &b, &tiny_config(2));
        assert!(matches!(err, Err(GanError::NonFinite { epoch: 1, .. })));
    }

    #[test]
    fn empty_set_is_rejected() {
        let (a, _) = color_cast_sets(2, 32);
        let pair = DomainPair::new(Domain::D1, Domain::D2).unwrap();
        assert!(matches!(
            train_cyclegan(pair, &a, &[], &tiny_config(1)),
            Err(GanError::EmptySet)
        ));
    }
}
