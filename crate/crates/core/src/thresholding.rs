//! Binarization thresholds and binary maps.
//!
//! The pipeline's native rule is the midrange of the observed intensities,
//! `(max + min) / 2`. Otsu's between-class-variance maximizer is provided as
//! a reference baseline, and [`modal_midpoints`] separates K fitted modes at
//! the midpoints of adjacent means.

use serde::Serialize;
use thiserror::Error;

use crate::estimation::MixtureModel;
use crate::histogram::Histogram;
use crate::image::{GrayImage, IntensityField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThresholdError {
    #[error("histogram is degenerate: all mass in one bin")]
    DegenerateHistogram,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("{got} modes provided, at least {needed} required")]
    TooFewModes { needed: usize, got: usize },
    #[error("threshold values must be strictly increasing and within [0, 1]")]
    InvalidThresholdSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMethod {
    Midrange,
    Otsu,
    ModalMidpoint,
}

/// Strictly increasing thresholds in [0, 1] plus the rule that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSet {
    values: Vec<f64>,
    method: ThresholdMethod,
}

impl ThresholdSet {
    pub fn new(values: Vec<f64>, method: ThresholdMethod) -> Result<Self, ThresholdError> {
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(ThresholdError::InvalidThresholdSet);
            }
        }
        for pair in values.windows(2) {
            if pair[0] >= pair[1] {
                return Err(ThresholdError::InvalidThresholdSet);
            }
        }
        Ok(Self { values, method })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn method(&self) -> ThresholdMethod {
        self.method
    }
}

/// One bit per pixel, row-major; 1 is white.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Renders the map as a two-level image (0 black, 255 white).
    pub fn to_gray(&self) -> GrayImage {
        let levels = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::new(self.width, self.height, levels).expect("binary map dimensions always match")
    }
}

/// Midpoint of the image's extreme gray values: `(max + min) / 2`.
pub fn midrange_threshold(field: &IntensityField) -> f64 {
    let (min, max) = field.min_max();
    (max + min) / 2.0
}

/// Otsu's threshold: the bin edge maximizing between-class variance, with
/// ties broken toward the lowest edge. Class values are bin centers.
pub fn otsu_threshold(hist: &Histogram) -> Result<f64, ThresholdError> {
    let grid = hist.grid();
    let counts = hist.counts();
    let bins = grid.bin_count();
    let total = hist.total() as f64;
    let total_sum: f64 = (0..bins)
        .map(|j| counts[j] as f64 * grid.bin_center(j))
        .sum();

    let mut below_weight = 0.0;
    let mut below_sum = 0.0;
    let mut best: Option<(f64, usize)> = None;
    // Candidate cuts sit after bin j: bins 0..=j below, the rest above.
    for (j, &count) in counts.iter().enumerate().take(bins.saturating_sub(1)) {
        below_weight += count as f64;
        below_sum += count as f64 * grid.bin_center(j);
        let above_weight = total - below_weight;
        if below_weight == 0.0 || above_weight == 0.0 {
            continue;
        }
        let mean_below = below_sum / below_weight;
        let mean_above = (total_sum - below_sum) / above_weight;
        let diff = mean_below - mean_above;
        let variance = below_weight * above_weight * diff * diff;
        match best {
            Some((v, _)) if variance <= v => {}
            _ => best = Some((variance, j)),
        }
    }
    match best {
        Some((_, j)) => Ok(grid.bin_right(j)),
        None => Err(ThresholdError::DegenerateHistogram),
    }
}

/// Midpoints between adjacent mode means: K-1 thresholds for K modes.
pub fn modal_midpoints(model: &MixtureModel) -> Result<ThresholdSet, ThresholdError> {
    if model.mode_count() < 2 {
        return Err(ThresholdError::TooFewModes {
            needed: 2,
            got: model.mode_count(),
        });
    }
    let values = model
        .modes()
        .windows(2)
        .map(|pair| (pair[0].mean + pair[1].mean) / 2.0)
        .collect();
    ThresholdSet::new(values, ThresholdMethod::ModalMidpoint)
}

/// Binarizes the field: a pixel at or above `t` becomes 1 (white).
pub fn binarize(field: &IntensityField, t: f64) -> Result<BinaryMap, ThresholdError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(ThresholdError::InvalidThreshold(t));
    }
    Ok(BinaryMap {
        width: field.width(),
        height: field.height(),
        bits: field.values().iter().map(|&v| v >= t).collect(),
    })
}
