//! Construction of the desired histogram by shifting fitted mode means
//! apart, and the histogram-specification remap that realizes it.
//!
//! Given a fitted mixture and the image's observed extremes `Min`/`Max`,
//! a [`ShiftPlan`] moves the first `pivot` mode means left by `mean_1 - Min`
//! (driving the first mode onto `Min`) and every mode above the pivot right
//! by `(Max - mean_k) / (K - pivot)`. The `Half` strategy applies half of
//! each displacement. The shifted mixture's truncated density over the 256
//! intensity levels is the desired histogram; CDF matching against the
//! image's own level distribution yields a monotone LUT, and applying the
//! LUT per pixel produces the enhanced image.

use serde::Serialize;
use thiserror::Error;

use crate::estimation::{
    estimate_noise, fit_mixture_em, fit_mixture_segmented, EmInit, EstimationError, FitReport,
    GaussianMode, MixtureModel,
};
use crate::histogram::{image_histogram, HistogramError};
use crate::image::{normalize, GrayImage, IntensityField};
use crate::metrics::{metric_record, MetricRecord};
use crate::thresholding::{midrange_threshold, modal_midpoints, ThresholdError};

pub const LEVELS: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnhanceError {
    #[error("pivot {pivot} invalid for {modes} modes (need 1 <= pivot <= K-1)")]
    InvalidPivot { pivot: usize, modes: usize },
    #[error("model means exceed the shift range [{min_val}, {max_val}]")]
    ModelOutOfRange { min_val: f64, max_val: f64 },
    #[error("shifted means are no longer strictly increasing")]
    OrderViolation,
    #[error("shift plan was built for a {expected}-mode model, got {actual} modes")]
    PlanMismatch { expected: usize, actual: usize },
    #[error("density must have at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("densities must have equal length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("density sums to {0}, expected 1 within 1e-9")]
    DensityNotNormalized(f64),
    #[error("density has a negative entry at level {0}")]
    NegativeDensity(usize),
    #[error("mixture has no mass inside [0, 1]")]
    NoMassInRange,
    #[error("LUT must be 256 non-decreasing entries")]
    InvalidLut,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// How far the modes move: the full displacement of the shift rules, or half
/// of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftStrategy {
    Full,
    Half,
}

/// Per-mode signed mean displacements.
///
/// `pivot` counts the leading modes shifted left (1-based index of the last
/// left-shifted mode); all modes above it shift right. Deltas at or below
/// the pivot are non-positive, those above non-negative, and shifted means
/// stay inside `[min_val, max_val]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftPlan {
    pub pivot: usize,
    pub deltas: Vec<f64>,
    pub strategy: ShiftStrategy,
    pub min_val: f64,
    pub max_val: f64,
}

/// Builds the displacement plan for `model` against the range
/// `[min_val, max_val]`.
pub fn compute_shift_plan(
    model: &MixtureModel,
    min_val: f64,
    max_val: f64,
    pivot: usize,
    strategy: ShiftStrategy,
) -> Result<ShiftPlan, EnhanceError> {
    let k = model.mode_count();
    if pivot < 1 || pivot > k.saturating_sub(1) {
        return Err(EnhanceError::InvalidPivot { pivot, modes: k });
    }
    let means = model.means();
    // Fitted means can land an ulp outside the observed extremes; tolerate
    // rounding dust, reject genuine violations.
    const RANGE_TOL: f64 = 1e-9;
    if means[0] < min_val - RANGE_TOL || means[k - 1] > max_val + RANGE_TOL {
        return Err(EnhanceError::ModelOutOfRange { min_val, max_val });
    }
    let scale = match strategy {
        ShiftStrategy::Full => 1.0,
        ShiftStrategy::Half => 0.5,
    };
    let left_shift = (means[0] - min_val).max(0.0);
    let right_count = (k - pivot) as f64;
    let deltas: Vec<f64> = means
        .iter()
        .enumerate()
        .map(|(i, &mean)| {
            if i < pivot {
                -left_shift * scale
            } else {
                (max_val - mean).max(0.0) / right_count * scale
            }
        })
        .collect();
    // Cannot fail for these formulas; asserted anyway.
    let mut prev = f64::NEG_INFINITY;
    for (i, &mean) in means.iter().enumerate() {
        let shifted = mean + deltas[i];
        if shifted <= prev {
            return Err(EnhanceError::OrderViolation);
        }
        prev = shifted;
    }
    Ok(ShiftPlan {
        pivot,
        deltas,
        strategy,
        min_val,
        max_val,
    })
}

/// Applies a plan's displacements to the mode means, clamping to the plan's
/// range. Weights and standard deviations are untouched.
pub fn apply_shift(model: &MixtureModel, plan: &ShiftPlan) -> Result<MixtureModel, EnhanceError> {
    if plan.deltas.len() != model.mode_count() {
        return Err(EnhanceError::PlanMismatch {
            expected: plan.deltas.len(),
            actual: model.mode_count(),
        });
    }
    let modes: Vec<GaussianMode> = model
        .modes()
        .iter()
        .zip(&plan.deltas)
        .map(|(mode, &delta)| {
            let mean = (mode.mean + delta).clamp(plan.min_val, plan.max_val);
            GaussianMode::new(mode.weight, mean, mode.std)
        })
        .collect();
    for pair in modes.windows(2) {
        if pair[0].mean >= pair[1].mean {
            return Err(EnhanceError::OrderViolation);
        }
    }
    MixtureModel::new(modes).map_err(|_| EnhanceError::OrderViolation)
}

/// Discretizes the mixture truncated to [0, 1] over `levels` level centers
/// and renormalizes so the masses sum to one.
pub fn desired_histogram(model: &MixtureModel, levels: usize) -> Result<Vec<f64>, EnhanceError> {
    if levels < 2 {
        return Err(EnhanceError::TooFewLevels(levels));
    }
    let mut density: Vec<f64> = (0..levels)
        .map(|v| model.pdf((v as f64 + 0.5) / levels as f64))
        .collect();
    let total: f64 = density.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(EnhanceError::NoMassInRange);
    }
    for d in &mut density {
        *d /= total;
    }
    Ok(density)
}

/// CDF matching: `lut[v]` is the smallest level `w` whose target CDF reaches
/// the source CDF at `v`. The result is non-decreasing.
pub fn specification_lut(source: &[f64], target: &[f64]) -> Result<Vec<usize>, EnhanceError> {
    if source.len() != target.len() {
        return Err(EnhanceError::LengthMismatch(source.len(), target.len()));
    }
    if source.len() < 2 {
        return Err(EnhanceError::TooFewLevels(source.len()));
    }
    for density in [source, target] {
        if let Some(v) = density.iter().position(|&d| d < 0.0) {
            return Err(EnhanceError::NegativeDensity(v));
        }
        let total: f64 = density.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EnhanceError::DensityNotNormalized(total));
        }
    }
    let levels = source.len();
    let target_cdf: Vec<f64> = target
        .iter()
        .scan(0.0, |acc, &d| {
            *acc += d;
            Some(*acc)
        })
        .collect();
    let mut lut = vec![0usize; levels];
    let mut source_cdf = 0.0;
    let mut w = 0;
    for (v, &mass) in source.iter().enumerate() {
        source_cdf += mass;
        while w < levels - 1 && target_cdf[w] < source_cdf {
            w += 1;
        }
        lut[v] = w;
    }
    Ok(lut)
}

/// Applies a 256-entry non-decreasing LUT to every pixel.
pub fn remap(image: &GrayImage, lut: &[u8]) -> Result<GrayImage, EnhanceError> {
    if lut.len() != LEVELS || lut.windows(2).any(|p| p[0] > p[1]) {
        return Err(EnhanceError::InvalidLut);
    }
    let levels = image.levels().iter().map(|&l| lut[l as usize]).collect();
    Ok(GrayImage::new(image.width(), image.height(), levels).expect("remap preserves dimensions"))
}

/// Which estimator resolves the mode parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Full likelihood maximization by EM.
    Em,
    /// Threshold the samples, then closed-form MLE per class. K=2 splits at
    /// the midrange threshold; higher K splits at the modal midpoints of an
    /// EM pre-fit.
    Segmented,
}

/// Where the shift range `Min`/`Max` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeSource {
    /// The observed pixel minimum and maximum.
    Observed,
    /// The full representable range [0, 1].
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub modes: usize,
    pub estimator: Estimator,
    pub strategy: ShiftStrategy,
    /// `None` selects the default pivot `ceil(K / 2)`.
    pub pivot: Option<usize>,
    pub bins: usize,
    pub tol: f64,
    pub max_iter: u32,
    pub range: RangeSource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            modes: 2,
            estimator: Estimator::Em,
            strategy: ShiftStrategy::Half,
            pivot: None,
            bins: 256,
            tol: 1e-8,
            max_iter: 500,
            range: RangeSource::Observed,
        }
    }
}

impl PipelineConfig {
    fn validate(&self) -> Result<(), EnhanceError> {
        if self.modes == 0 {
            return Err(EnhanceError::InvalidConfig(
                "mode count must be at least 1".to_string(),
            ));
        }
        if self.bins < 2 {
            return Err(EnhanceError::InvalidConfig(
                "bin count must be at least 2".to_string(),
            ));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(EnhanceError::InvalidConfig(
                "tolerance must be positive".to_string(),
            ));
        }
        if let Some(pivot) = self.pivot {
            if pivot < 1 || pivot >= self.modes {
                return Err(EnhanceError::InvalidConfig(format!(
                    "pivot {pivot} must satisfy 1 <= pivot < modes ({})",
                    self.modes
                )));
            }
        }
        Ok(())
    }

    pub fn effective_pivot(&self) -> usize {
        self.pivot.unwrap_or(self.modes.div_ceil(2))
    }
}

/// Pipeline stage names for error attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Histogram,
    Fit,
    ShiftPlan,
    ApplyShift,
    DesiredHistogram,
    SpecificationLut,
    Remap,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Histogram => "histogram",
            Stage::Fit => "fit",
            Stage::ShiftPlan => "shift-plan",
            Stage::ApplyShift => "apply-shift",
            Stage::DesiredHistogram => "desired-histogram",
            Stage::SpecificationLut => "specification-lut",
            Stage::Remap => "remap",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
}

/// A pipeline failure tagged with the stage that produced it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

fn at_stage<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        source: e.into(),
    }
}

/// Everything one enhancement run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementResult {
    pub enhanced: GrayImage,
    /// Per-level mass of the input image over the 256-level grid; sums to 1.
    pub source_density: Vec<f64>,
    /// Per-level mass of the shifted mixture; sums to 1.
    pub desired_density: Vec<f64>,
    /// The monotone level map realizing the specification.
    pub lut: Vec<u8>,
    pub fit: FitReport,
    pub plan: ShiftPlan,
    /// The midrange threshold of the input, recorded for every run.
    pub midrange_threshold: f64,
    pub metrics_before: MetricRecord,
    pub metrics_after: MetricRecord,
}

/// Fits the configured mixture estimator to the field's pixel intensities.
/// The report's noise figure is measured against the `config.bins`-bin
/// histogram of the field.
pub fn fit_field(
    field: &IntensityField,
    config: &PipelineConfig,
) -> Result<FitReport, PipelineError> {
    config.validate().map_err(at_stage(Stage::Config))?;
    let samples = field.values();
    let mut report = match config.estimator {
        Estimator::Em => fit_mixture_em(
            samples,
            config.modes,
            EmInit::Auto,
            config.tol,
            config.max_iter,
        )
        .map_err(at_stage(Stage::Fit))?,
        Estimator::Segmented => {
            let thresholds: Vec<f64> = match config.modes {
                1 => Vec::new(),
                2 => vec![midrange_threshold(field)],
                _ => {
                    let pre = fit_mixture_em(
                        samples,
                        config.modes,
                        EmInit::Auto,
                        config.tol,
                        config.max_iter,
                    )
                    .map_err(at_stage(Stage::Fit))?;
                    modal_midpoints(&pre.model)
                        .map_err(at_stage(Stage::Fit))?
                        .values()
                        .to_vec()
                }
            };
            fit_mixture_segmented(samples, &thresholds).map_err(at_stage(Stage::Fit))?
        }
    };
    let hist = image_histogram(field, config.bins).map_err(at_stage(Stage::Histogram))?;
    report.noise_rms = estimate_noise(&hist, &report.model);
    Ok(report)
}

/// Runs the full enhancement pipeline on one image.
pub fn enhance(
    image: &GrayImage,
    config: &PipelineConfig,
) -> Result<EnhancementResult, PipelineError> {
    config.validate().map_err(at_stage(Stage::Config))?;
    let field = normalize(image);
    let fit = fit_field(&field, config)?;

    let (min_val, max_val) = match config.range {
        RangeSource::Observed => field.min_max(),
        RangeSource::Full => (0.0, 1.0),
    };
    let midrange = midrange_threshold(&field);

    let plan = compute_shift_plan(
        &fit.model,
        min_val,
        max_val,
        config.effective_pivot(),
        config.strategy,
    )
    .map_err(at_stage(Stage::ShiftPlan))?;
    let shifted = apply_shift(&fit.model, &plan).map_err(at_stage(Stage::ApplyShift))?;

    let desired_density =
        desired_histogram(&shifted, LEVELS).map_err(at_stage(Stage::DesiredHistogram))?;

    let level_hist = image_histogram(&field, LEVELS).map_err(at_stage(Stage::Histogram))?;
    let n = level_hist.total() as f64;
    let source_density: Vec<f64> = level_hist.counts().iter().map(|&c| c as f64 / n).collect();

    let lut_levels = specification_lut(&source_density, &desired_density)
        .map_err(at_stage(Stage::SpecificationLut))?;
    let lut: Vec<u8> = lut_levels.iter().map(|&w| w as u8).collect();

    let enhanced = remap(image, &lut).map_err(at_stage(Stage::Remap))?;

    Ok(EnhancementResult {
        metrics_before: metric_record(image),
        metrics_after: metric_record(&enhanced),
        enhanced,
        source_density,
        desired_density,
        lut,
        fit,
        plan,
        midrange_threshold: midrange,
    })
}

/// Independent equalization oracle used by tests and kept separate from
/// [`specification_lut`]: for a uniform target the matched level is, by
/// direct evaluation of the CDF inequality, the smallest `w` with
/// `(w + 1) / L >= cdf_source(v)`.
#[cfg(test)]
pub(crate) fn equalization_oracle(source: &[f64]) -> Vec<usize> {
    let levels = source.len();
    let mut out = vec![0usize; levels];
    let mut cdf = 0.0;
    for (v, &mass) in source.iter().enumerate() {
        cdf += mass;
        let mut w = 0;
        while w < levels - 1 && ((w + 1) as f64) / (levels as f64) < cdf {
            w += 1;
        }
        out[v] = w;
    }
    out
}
