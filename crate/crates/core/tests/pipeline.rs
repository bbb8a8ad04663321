//! End-to-end runs of the enhancement pipeline against independent oracles.

use histmle_core::enhancement::{
    enhance, remap, specification_lut, Estimator, PipelineConfig, RangeSource, ShiftStrategy,
};
use histmle_core::histogram::image_histogram;
use histmle_core::image::{load_pgm, normalize, save_pgm, GrayImage};
use histmle_core::metrics::rms_contrast;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_blend_image(seed: u64, side: u32) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = [(0.5, 0.3, 0.05), (0.5, 0.7, 0.05)];
    GrayImage::from_fn(side, side, |_, _| {
        let x = loop {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = modes[1];
            for &m in &modes {
                acc += m.0;
                if u < acc {
                    chosen = m;
                    break;
                }
            }
            let z = loop {
                let u1: f64 = rng.gen();
                if u1 > 0.0 {
                    let u2: f64 = rng.gen();
                    break (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                }
            };
            let v = chosen.1 + chosen.2 * z;
            if (0.0..=1.0).contains(&v) {
                break v;
            }
        };
        (x * 255.0).round() as u8
    })
}

#[test]
fn pipeline_raises_contrast_on_gaussian_blend() {
    let img = gaussian_blend_image(40, 128);
    let before = rms_contrast(&normalize(&img));
    for strategy in [ShiftStrategy::Full, ShiftStrategy::Half] {
        let config = PipelineConfig {
            strategy,
            ..Default::default()
        };
        let result = enhance(&img, &config).unwrap();
        let after = rms_contrast(&normalize(&result.enhanced));
        assert!(
            after > before,
            "{strategy:?}: contrast {after} did not exceed {before}"
        );
        // Shifting must widen the gap between the fitted means.
        let fitted = result.fit.model.means();
        let gap_before = fitted[1] - fitted[0];
        let shifted: Vec<f64> = fitted
            .iter()
            .zip(&result.plan.deltas)
            .map(|(m, d)| m + d)
            .collect();
        assert!(shifted[1] - shifted[0] > gap_before);
    }
}

#[test]
fn segmented_estimator_runs_the_same_pipeline() {
    let img = gaussian_blend_image(41, 96);
    let config = PipelineConfig {
        estimator: Estimator::Segmented,
        ..Default::default()
    };
    let result = enhance(&img, &config).unwrap();
    assert_eq!(result.fit.iterations, 0);
    assert!(result.fit.converged);
    assert!(result.lut.windows(2).all(|p| p[0] <= p[1]));
}

// Direct histogram equalization coded from the uniform-CDF formula, bypassing
// the generic specification machinery.
fn equalize_image(img: &GrayImage) -> GrayImage {
    let hist = image_histogram(&normalize(img), 256).unwrap();
    let n = hist.total() as f64;
    let mut cdf = 0.0;
    let mut lut = [0u8; 256];
    for (v, &count) in hist.counts().iter().enumerate() {
        cdf += count as f64 / n;
        let mut w = 0usize;
        while w < 255 && ((w + 1) as f64) / 256.0 < cdf {
            w += 1;
        }
        lut[v] = w as u8;
    }
    let levels = img.levels().iter().map(|&l| lut[l as usize]).collect();
    GrayImage::new(img.width(), img.height(), levels).unwrap()
}

#[test]
fn uniform_target_remap_equals_equalization() {
    for seed in [7u64, 8, 9] {
        let img = gaussian_blend_image(seed, 64);
        let hist = image_histogram(&normalize(&img), 256).unwrap();
        let n = hist.total() as f64;
        let source: Vec<f64> = hist.counts().iter().map(|&c| c as f64 / n).collect();
        let uniform = vec![1.0 / 256.0; 256];
        let lut: Vec<u8> = specification_lut(&source, &uniform)
            .unwrap()
            .into_iter()
            .map(|w| w as u8)
            .collect();
        let specified = remap(&img, &lut).unwrap();
        assert_eq!(specified, equalize_image(&img), "seed {seed}");
    }
}

#[test]
fn enhanced_image_roundtrips_through_pgm() {
    let img = gaussian_blend_image(42, 64);
    let config = PipelineConfig {
        range: RangeSource::Full,
        ..Default::default()
    };
    let result = enhance(&img, &config).unwrap();
    let bytes = save_pgm(&result.enhanced);
    assert_eq!(load_pgm(&bytes).unwrap(), result.enhanced);
}

#[test]
fn enhance_is_deterministic() {
    let img = gaussian_blend_image(43, 64);
    let config = PipelineConfig::default();
    let a = enhance(&img, &config).unwrap();
    let b = enhance(&img, &config).unwrap();
    assert_eq!(a, b);
}
