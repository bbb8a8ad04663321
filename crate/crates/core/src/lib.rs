//! Contrast enhancement for grayscale images driven by the statistics of the
//! intensity histogram.
//!
//! The pipeline fits a Gaussian mixture to the pixel intensities by maximum
//! likelihood, builds a target ("desired") histogram by pushing the fitted
//! mode means apart toward the observed intensity extremes, and remaps pixel
//! levels through classic histogram specification so the output image's
//! histogram approximates the target. With well-separated modes this widens
//! the gaps between the dominant intensity populations and raises contrast.
//!
//! Modules:
//! - [`image`]: 8-bit grayscale images, binary PGM I/O, unit-interval fields
//! - [`histogram`]: bin grids, counting, the piecewise-constant density estimator
//! - [`estimation`]: Gaussian MLE, EM mixture fitting, stationarity checks
//! - [`thresholding`]: midrange and Otsu thresholds, binary maps
//! - [`enhancement`]: mean-shift plans, desired histograms, specification LUTs
//! - [`metrics`]: contrast and entropy measurements

pub mod enhancement;
pub mod estimation;
pub mod histogram;
pub mod image;
pub mod metrics;
pub mod thresholding;

pub use enhancement::{enhance, EnhancementResult, Estimator, PipelineConfig, ShiftStrategy};
pub use estimation::{FitReport, GaussianMode, MixtureModel};
pub use histogram::{BinGrid, Histogram};
pub use image::{GrayImage, IntensityField};
pub use metrics::MetricRecord;
