//! Seeded synthetic test images: pixels drawn i.i.d. from a Gaussian
//! mixture truncated to [0, 1] by rejection, then quantized to 8 bits.
//!
//! Generation is deterministic for a given seed within this tool; no
//! cross-implementation sample equality is promised.

use histmle_core::estimation::MixtureModel;
use histmle_core::image::{quantize, GrayImage, IntensityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SynthSpec {
    pub width: u32,
    pub height: u32,
    pub model: MixtureModel,
    pub seed: u64,
}

/// Attempts per pixel before concluding the mixture has no usable mass
/// inside [0, 1].
const MAX_REJECTIONS: u32 = 100_000;

pub fn generate(spec: &SynthSpec) -> Result<GrayImage, String> {
    if spec.width == 0 || spec.height == 0 {
        return Err("width and height must be at least 1".to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = spec.width as usize * spec.height as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(sample_truncated(&mut rng, &spec.model)?);
    }
    let field = IntensityField::new(spec.width, spec.height, values)
        .expect("samples are rejected into [0, 1]");
    Ok(quantize(&field))
}

fn sample_truncated(rng: &mut ChaCha8Rng, model: &MixtureModel) -> Result<f64, String> {
    for _ in 0..MAX_REJECTIONS {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut mode = &model.modes()[model.mode_count() - 1];
        for m in model.modes() {
            acc += m.weight;
            if u < acc {
                mode = m;
                break;
            }
        }
        // Box-Muller; the sine variate is discarded.
        let z = loop {
            let u1: f64 = rng.gen();
            if u1 > 0.0 {
                let u2: f64 = rng.gen();
                break (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            }
        };
        let x = mode.mean + mode.std * z;
        if (0.0..=1.0).contains(&x) {
            return Ok(x);
        }
    }
    Err("mixture has negligible mass inside [0, 1]".to_string())
}
