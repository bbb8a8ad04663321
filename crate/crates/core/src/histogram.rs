//! Bin grids, sample counting, and the piecewise-constant histogram density
//! estimator.
//!
//! A grid of `bin_count` bins of width `width` starts at `origin`; bin `j`
//! (0-based) covers the half-open interval
//! `[origin + j*width, origin + (j+1)*width)`. The one exception is the
//! grid's right edge, which belongs to the last bin so the maximum sample
//! value stays representable. The density estimate at `x` is
//! `count(bin containing x) / (n * width)` and integrates to one.

use thiserror::Error;

use crate::image::IntensityField;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("invalid bin grid: {0}")]
    InvalidGrid(String),
    #[error("value {value}{} is outside the grid span", match .index { Some(i) => format!(" (sample {i})"), None => String::new() })]
    OutOfRange { value: f64, index: Option<usize> },
    #[error("no samples provided")]
    EmptyInput,
}

/// A uniform bin grid: origin, bin width, and bin count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGrid {
    origin: f64,
    width: f64,
    bin_count: usize,
}

impl BinGrid {
    pub fn new(origin: f64, width: f64, bin_count: usize) -> Result<Self, HistogramError> {
        if !origin.is_finite() || !width.is_finite() {
            return Err(HistogramError::InvalidGrid(
                "origin and width must be finite".to_string(),
            ));
        }
        if width <= 0.0 {
            return Err(HistogramError::InvalidGrid(format!(
                "bin width must be positive, got {width}"
            )));
        }
        if bin_count == 0 {
            return Err(HistogramError::InvalidGrid(
                "bin count must be at least 1".to_string(),
            ));
        }
        Ok(Self {
            origin,
            width,
            bin_count,
        })
    }

    /// The grid covering [0, 1] with one bin per quantization step.
    pub fn unit(bin_count: usize) -> Self {
        // 1/n * n can round just below 1.0; widen by an ulp so the span
        // always contains intensity 1.0.
        let mut width = 1.0 / bin_count as f64;
        if width * (bin_count as f64) < 1.0 {
            width = f64::from_bits(width.to_bits() + 1);
        }
        Self::new(0.0, width, bin_count).expect("unit grid parameters are always valid")
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn right_edge(&self) -> f64 {
        self.origin + self.width * self.bin_count as f64
    }

    pub fn bin_left(&self, j: usize) -> f64 {
        self.origin + self.width * j as f64
    }

    pub fn bin_right(&self, j: usize) -> f64 {
        self.origin + self.width * (j + 1) as f64
    }

    pub fn bin_center(&self, j: usize) -> f64 {
        self.origin + self.width * (j as f64 + 0.5)
    }

    /// 0-based index of the bin containing `x`.
    ///
    /// Bins are half-open on the right; the grid's right edge itself maps to
    /// the last bin.
    pub fn bin_index(&self, x: f64) -> Result<usize, HistogramError> {
        if !x.is_finite() || x < self.origin || x > self.right_edge() {
            return Err(HistogramError::OutOfRange {
                value: x,
                index: None,
            });
        }
        let j = ((x - self.origin) / self.width).floor() as usize;
        Ok(j.min(self.bin_count - 1))
    }
}

/// Counts of samples per bin together with the grid they were counted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    grid: BinGrid,
    counts: Vec<u64>,
    n: u64,
}

impl Histogram {
    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total number of samples counted.
    pub fn total(&self) -> u64 {
        self.n
    }

    /// The histogram density estimate at `x`: `count / (n * width)`.
    pub fn density(&self, x: f64) -> Result<f64, HistogramError> {
        let j = self.grid.bin_index(x)?;
        Ok(self.counts[j] as f64 / (self.n as f64 * self.grid.width()))
    }
}

/// Tallies `samples` onto `grid`. Counting is order-free: any permutation of
/// the samples yields the same histogram.
pub fn build_histogram(samples: &[f64], grid: BinGrid) -> Result<Histogram, HistogramError> {
    if samples.is_empty() {
        return Err(HistogramError::EmptyInput);
    }
    let mut counts = vec![0u64; grid.bin_count()];
    for (index, &x) in samples.iter().enumerate() {
        let j = grid.bin_index(x).map_err(|_| HistogramError::OutOfRange {
            value: x,
            index: Some(index),
        })?;
        counts[j] += 1;
    }
    Ok(Histogram {
        grid,
        counts,
        n: samples.len() as u64,
    })
}

/// Histogram of every pixel of `field` on the unit grid with `bins` bins.
pub fn image_histogram(field: &IntensityField, bins: usize) -> Result<Histogram, HistogramError> {
    if bins < 2 {
        return Err(HistogramError::InvalidGrid(format!(
            "image histogram needs at least 2 bins, got {bins}"
        )));
    }
    build_histogram(field.values(), BinGrid::unit(bins))
}
