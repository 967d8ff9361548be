use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Weight initialization schemes. All draws come from a caller-owned seeded
/// rng, so construction order fully determines the initial weights.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)), the usual choice before ReLU.
    HeUniform,
    /// Gaussian with the given standard deviation (GAN convention: 0.02).
    Normal(f32),
    Zeros,
}

pub fn init_tensor(shape: &[usize], fan_in: usize, init: Init, rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = match init {
        Init::HeUniform => {
            let bound = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        }
        Init::Normal(std) => (0..n).map(|_| sample_normal(rng) * std).collect(),
        Init::Zeros => vec![0.0; n],
    };
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("init shape")
}

/// Box-Muller standard normal; two uniform draws per call keep the stream
/// length independent of rejection behaviour.
fn sample_normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}
