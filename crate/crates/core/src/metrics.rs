//! Contrast and entropy measurements, taken before and after enhancement so
//! "more contrast" is a number rather than an impression.

use serde::Serialize;

use crate::histogram::{image_histogram, Histogram};
use crate::image::{normalize, GrayImage, IntensityField};

/// Snapshot of an image's contrast statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRecord {
    /// Population standard deviation of the intensities.
    pub rms_contrast: f64,
    /// `(max - min) / (max + min)`; `None` for an all-black image.
    pub michelson: Option<f64>,
    /// Shannon entropy of the 256-level histogram, in bits.
    pub entropy_bits: f64,
    pub min_level: u8,
    pub max_level: u8,
}

/// RMS contrast: `sqrt(mean((v - mean)^2))` over all pixels.
pub fn rms_contrast(field: &IntensityField) -> f64 {
    let n = field.values().len() as f64;
    let mean = field.values().iter().sum::<f64>() / n;
    let var = field
        .values()
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// Michelson contrast, undefined (None) when `max + min == 0`.
pub fn michelson_contrast(field: &IntensityField) -> Option<f64> {
    let (min, max) = field.min_max();
    if max + min == 0.0 {
        None
    } else {
        Some((max - min) / (max + min))
    }
}

/// Shannon entropy of the bin occupancies in bits, with `0 * log 0 = 0`.
pub fn shannon_entropy(hist: &Histogram) -> f64 {
    let n = hist.total() as f64;
    hist.counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// All metrics for one image.
pub fn metric_record(image: &GrayImage) -> MetricRecord {
    let field = normalize(image);
    let hist = image_histogram(&field, 256).expect("256-bin grid always valid");
    let min_level = *image.levels().iter().min().expect("image is never empty");
    let max_level = *image.levels().iter().max().expect("image is never empty");
    MetricRecord {
        rms_contrast: rms_contrast(&field),
        michelson: michelson_contrast(&field),
        entropy_bits: shannon_entropy(&hist),
        min_level,
        max_level,
    }
}
