//! Circular 37-pixel mask, weighted SUSAN area and the fuzzy damping field.
//!
//! Every pixel of the input gets a full mask: lookups outside the image are
//! replicated from the nearest edge pixel.

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{pad_replicate, GrayImage};

/// Mask radius in pixels (rows of 3,5,7,7,7,5,3).
pub const MASK_RADIUS: usize = 3;

const ROW_HALF_WIDTHS: [isize; 7] = [1, 2, 3, 3, 3, 2, 1];

#[derive(Debug, Error, PartialEq)]
pub enum SusanError {
    #[error("minimum response ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("invalid SUSAN parameter: {0}")]
    InvalidParameter(String),
}

/// How neighbor weights are assigned inside the mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightMode {
    /// Inverse Manhattan move count: rings weigh 1, 1/2, 1/3, 1/4.
    #[default]
    Circular,
    /// Every mask pixel weighs 1 (classical SUSAN).
    Uniform,
    /// Inverse Euclidean distance.
    Cartesian,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Circular => "circular",
            WeightMode::Uniform => "uniform",
            WeightMode::Cartesian => "cartesian",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "circular" => Ok(WeightMode::Circular),
            "uniform" => Ok(WeightMode::Uniform),
            "cartesian" => Ok(WeightMode::Cartesian),
            _ => Err(format!("unknown weight mode '{}'", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircularMask {
    offsets: Vec<(isize, isize)>,
    weights: Vec<f64>,
    total: f64,
}

impl CircularMask {
    pub fn new(mode: WeightMode) -> Self {
        let mut offsets = Vec::with_capacity(37);
        for (row, &half) in ROW_HALF_WIDTHS.iter().enumerate() {
            let dy = row as isize - MASK_RADIUS as isize;
            for dx in -half..=half {
                offsets.push((dx, dy));
            }
        }
        let weights: Vec<f64> = offsets
            .iter()
            .map(|&(dx, dy)| {
                if dx == 0 && dy == 0 {
                    return 1.0;
                }
                match mode {
                    WeightMode::Circular => 1.0 / (dx.abs() + dy.abs()) as f64,
                    WeightMode::Uniform => 1.0,
                    WeightMode::Cartesian => 1.0 / ((dx * dx + dy * dy) as f64).sqrt(),
                }
            })
            .collect();
        // summed per distinct weight so ring totals like 12 * (1/3) stay exact
        let mut groups: Vec<(f64, usize)> = Vec::new();
        for &w in &weights {
            match groups.iter_mut().find(|(g, _)| *g == w) {
                Some((_, n)) => *n += 1,
                None => groups.push((w, 1)),
            }
        }
        let total = groups.iter().map(|&(w, n)| w * n as f64).sum();
        Self {
            offsets,
            weights,
            total,
        }
    }

    /// Row-major (dx, dy) offsets, nucleus included.
    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Number of offsets at Manhattan distance 0..=4.
    pub fn ring_counts(&self) -> [usize; 5] {
        let mut counts = [0; 5];
        for &(dx, dy) in &self.offsets {
            counts[(dx.abs() + dy.abs()) as usize] += 1;
        }
        counts
    }

    /// Offset count per mask row, top to bottom.
    pub fn row_lengths(&self) -> Vec<usize> {
        let mut rows = vec![0; 2 * MASK_RADIUS + 1];
        for &(_, dy) in &self.offsets {
            rows[(dy + MASK_RADIUS as isize) as usize] += 1;
        }
        rows
    }
}

impl Default for CircularMask {
    fn default() -> Self {
        Self::new(WeightMode::Circular)
    }
}

/// The 37-pixel mask with circular (Manhattan ring) weights.
pub fn build_mask() -> CircularMask {
    CircularMask::new(WeightMode::Circular)
}

/// Brightness-similarity parameters of the SUSAN response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SusanParams {
    pub t: f64,
    pub min_ratio: f64,
    pub max_dev: f64,
    pub exponent: u32,
}

impl SusanParams {
    /// Derives `t` so that a full-scale deviation yields `min_ratio`.
    pub fn new(min_ratio: f64, max_dev: f64, exponent: u32) -> Result<Self, SusanError> {
        let t = solve_t(min_ratio, max_dev, exponent)?;
        let p = Self {
            t,
            min_ratio,
            max_dev,
            exponent,
        };
        p.validate()?;
        Ok(p)
    }

    /// Overrides the derived `t`.
    pub fn with_t(mut self, t: f64) -> Result<Self, SusanError> {
        self.t = t;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SusanError> {
        if !(self.min_ratio > 0.0 && self.min_ratio < 1.0) {
            return Err(SusanError::InvalidRatio(self.min_ratio));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(SusanError::InvalidParameter(format!(
                "t must be > 0, got {}",
                self.t
            )));
        }
        if !(self.max_dev > 0.0 && self.max_dev.is_finite()) {
            return Err(SusanError::InvalidParameter(format!(
                "max_dev must be > 0, got {}",
                self.max_dev
            )));
        }
        if self.exponent < 2 || !self.exponent.is_multiple_of(2) {
            return Err(SusanError::InvalidParameter(format!(
                "exponent must be even and >= 2, got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    /// Similarity of two intensities: exp(-((a-b)/t)^exponent).
    #[inline]
    pub fn response(&self, deviation: f64) -> f64 {
        (-(deviation / self.t).powi(self.exponent as i32)).exp()
    }
}

impl Default for SusanParams {
    fn default() -> Self {
        Self::new(1.0 / 16.0, 255.0, 6).expect("default SUSAN parameters are valid")
    }
}

/// t = max_dev / ln(1/min_ratio)^(1/exponent).
pub fn solve_t(min_ratio: f64, max_dev: f64, exponent: u32) -> Result<f64, SusanError> {
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(SusanError::InvalidRatio(min_ratio));
    }
    if exponent == 0 {
        return Err(SusanError::InvalidParameter(
            "exponent must be positive".into(),
        ));
    }
    Ok(max_dev / (1.0 / min_ratio).ln().powf(1.0 / f64::from(exponent)))
}

/// Mask-weighted mean intensity around (x, y), nucleus included.
pub fn weighted_mean(img: &GrayImage, x: usize, y: usize, mask: &CircularMask) -> f64 {
    // accumulated as deviations from the nucleus, exact on flat patches
    let nucleus = f64::from(img.get(x, y));
    let sum: f64 = mask
        .offsets()
        .iter()
        .zip(mask.weights())
        .map(|(&(dx, dy), &w)| {
            w * (f64::from(img.get_clamped(x as isize + dx, y as isize + dy)) - nucleus)
        })
        .sum();
    nucleus + sum / mask.total_weight()
}

/// Weighted SUSAN area around (x, y); the nucleus always contributes its weight.
pub fn weighted_susan_area(
    img: &GrayImage,
    x: usize,
    y: usize,
    mask: &CircularMask,
    params: &SusanParams,
) -> f64 {
    let nucleus = f64::from(img.get(x, y));
    let deficit: f64 = mask
        .offsets()
        .iter()
        .zip(mask.weights())
        .map(|(&(dx, dy), &w)| {
            let v = f64::from(img.get_clamped(x as isize + dx, y as isize + dy));
            w * (1.0 - params.response(v - nucleus))
        })
        .sum();
    mask.total_weight() - deficit
}

/// Gaussian membership of an area value relative to the field's maximum.
/// A zero spread means every area equals the maximum, so membership is 1.
#[inline]
pub fn area_membership(area: f64, area_max: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let gap = area_max - area;
    (-(gap * gap) / (2.0 * sigma * sigma)).exp()
}

/// Per-pixel weighted means, SUSAN areas and damping coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodField {
    width: usize,
    height: usize,
    weighted_mean: Vec<f64>,
    area: Vec<f64>,
    damping: Vec<f64>,
    sigma: f64,
    area_max: f64,
}

impl NeighborhoodField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.area.len()
    }

    pub fn is_empty(&self) -> bool {
        self.area.is_empty()
    }

    pub fn weighted_mean(&self) -> &[f64] {
        &self.weighted_mean
    }

    pub fn area(&self) -> &[f64] {
        &self.area
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    /// Population standard deviation of all area values.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn area_max(&self) -> f64 {
        self.area_max
    }

    /// Same field with every damping coefficient forced to 1.
    pub fn without_damping(mut self) -> Self {
        self.damping.iter_mut().for_each(|s| *s = 1.0);
        self
    }

    /// Damping scaled to [0,255] for inspection.
    pub fn damping_heatmap(&self) -> GrayImage {
        let scaled: Vec<f64> = self.damping.iter().map(|s| s * 255.0).collect();
        GrayImage::from_real(self.width, self.height, &scaled)
            .expect("field dimensions are consistent")
    }
}

pub fn damping_field(
    img: &GrayImage,
    mask: &CircularMask,
    params: &SusanParams,
) -> NeighborhoodField {
    let (w, h) = (img.width(), img.height());
    let padded = pad_replicate(img, MASK_RADIUS);
    let pw = padded.width();
    let px = padded.pixels();

    let lut: Vec<f64> = (0..=255).map(|d| params.response(f64::from(d))).collect();
    let taps: Vec<(usize, f64)> = mask
        .offsets()
        .iter()
        .zip(mask.weights())
        .map(|(&(dx, dy), &wt)| {
            let idx = (dy + MASK_RADIUS as isize) * pw as isize + dx + MASK_RADIUS as isize;
            (idx as usize, wt)
        })
        .collect();
    let total = mask.total_weight();

    let per_pixel: Vec<(f64, f64)> = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let (x, y) = (k % w, k / w);
            let origin = y * pw + x;
            let nucleus = px[origin + MASK_RADIUS * pw + MASK_RADIUS];
            // deviation and deficit sums keep flat neighborhoods exact
            let mut shift = 0.0;
            let mut deficit = 0.0;
            for &(off, wt) in &taps {
                let v = px[origin + off];
                shift += wt * (f64::from(v) - f64::from(nucleus));
                deficit += wt * (1.0 - lut[v.abs_diff(nucleus) as usize]);
            }
            (f64::from(nucleus) + shift / total, total - deficit)
        })
        .collect();

    let (weighted_mean, area): (Vec<f64>, Vec<f64>) = per_pixel.into_iter().unzip();
    let n = area.len() as f64;
    let area_max = area.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = area.iter().sum::<f64>() / n;
    let sigma = (area.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    // areas of a constant image are bit-identical, anything else is true spread
    let sigma = if area.iter().all(|&a| a == area_max) {
        0.0
    } else {
        sigma
    };
    let damping = area
        .iter()
        .map(|&a| 1.0 - area_membership(a, area_max, sigma))
        .collect();

    NeighborhoodField {
        width: w,
        height: h,
        weighted_mean,
        area,
        damping,
        sigma,
        area_max,
    }
}
