//! Segmentation quality measures: segmentation accuracy against a reference
//! partition, the region/layout entropy objective, and the fuzzy-rule edge
//! quality factor (EQF).

use thiserror::Error;

use crate::image::{pad_replicate, GrayImage, SegmentationMap};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("region {0} is empty")]
    EmptyRegion(usize),
    #[error("no edge candidates found; EQF is undefined")]
    NoEdges,
    #[error("image is {width}x{height}, smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("invalid metric parameter: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

// ---------------------------------------------------------------------------
// Segmentation accuracy

/// c_map × c_ref overlap counts.
pub fn contingency(map: &SegmentationMap, reference: &SegmentationMap) -> Result<Vec<Vec<u64>>> {
    if (map.width(), map.height()) != (reference.width(), reference.height()) {
        return Err(MetricError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            map.width(),
            map.height(),
            reference.width(),
            reference.height()
        )));
    }
    let mut table = vec![vec![0u64; reference.clusters()]; map.clusters()];
    for (&a, &r) in map.labels().iter().zip(reference.labels()) {
        table[a][r] += 1;
    }
    Ok(table)
}

/// Assignment maximizing the total of a square weight matrix; returns the
/// column chosen for each row. O(n^3) shortest augmenting path with
/// potentials.
pub fn max_weight_matching(weights: &[Vec<u64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let top = weights.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| top - weights[i][j] as i64;

    // 1-based arrays, index 0 is the virtual start column
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Percentage of pixels whose cluster agrees with the reference under the
/// best one-to-one cluster correspondence.
pub fn segmentation_accuracy(map: &SegmentationMap, reference: &SegmentationMap) -> Result<f64> {
    let table = contingency(map, reference)?;
    let n = map.clusters().max(reference.clusters());
    let square: Vec<Vec<u64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    table
                        .get(i)
                        .and_then(|row| row.get(j))
                        .copied()
                        .unwrap_or(0)
                })
                .collect()
        })
        .collect();
    let assignment = max_weight_matching(&square);
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| square[i][j])
        .sum();
    Ok(100.0 * matched as f64 / map.labels().len() as f64)
}

// ---------------------------------------------------------------------------
// Entropy objective

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionEntropy {
    pub size: usize,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub region_entropy: f64,
    pub layout_entropy: f64,
    pub combined: f64,
    pub regions: Vec<RegionEntropy>,
}

/// Region entropy (gray levels of `img` inside each region) plus layout
/// entropy of region sizes, in the given logarithm base.
pub fn entropy_measure(
    img: &GrayImage,
    map: &SegmentationMap,
    log_base: f64,
) -> Result<EntropyReport> {
    if (img.width(), img.height()) != (map.width(), map.height()) {
        return Err(MetricError::DimensionMismatch(format!(
            "image {}x{} vs map {}x{}",
            img.width(),
            img.height(),
            map.width(),
            map.height()
        )));
    }
    if !(log_base > 0.0 && log_base != 1.0 && log_base.is_finite()) {
        return Err(MetricError::InvalidParams(format!("log base {}", log_base)));
    }
    let ln_base = log_base.ln();
    let c = map.clusters();
    let mut hist = vec![[0u64; 256]; c];
    let mut sizes = vec![0u64; c];
    for (&p, &l) in img.pixels().iter().zip(map.labels()) {
        hist[l][p as usize] += 1;
        sizes[l] += 1;
    }
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(MetricError::EmptyRegion(j));
    }
    let total = img.len() as f64;
    let plogp = |p: f64| if p > 0.0 { -p * p.ln() / ln_base } else { 0.0 };

    let regions: Vec<RegionEntropy> = hist
        .iter()
        .zip(&sizes)
        .map(|(h, &s)| RegionEntropy {
            size: s as usize,
            entropy: h.iter().map(|&count| plogp(count as f64 / s as f64)).sum(),
        })
        .collect();
    let region_entropy = regions
        .iter()
        .map(|r| r.size as f64 / total * r.entropy)
        .sum::<f64>();
    let layout_entropy = regions
        .iter()
        .map(|r| plogp(r.size as f64 / total))
        .sum::<f64>();
    Ok(EntropyReport {
        region_entropy,
        layout_entropy,
        combined: region_entropy + layout_entropy,
        regions,
    })
}

// ---------------------------------------------------------------------------
// Edge quality factor

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EqfParams {
    /// Homogeneity window side N.
    pub window: usize,
    /// Scale factor on the large-derivative threshold.
    pub alpha_k: f64,
    /// γ_{N²} lookup value.
    pub gamma: f64,
    /// Inverse-blurriness threshold.
    pub threshold: f64,
    /// Number of gray levels L.
    pub levels: f64,
    /// Leave zero-derivative lines (infinite BR) out of the blur maximum.
    /// When false one flat line is enough to rule blur out.
    pub ignore_flat: bool,
}

impl Default for EqfParams {
    fn default() -> Self {
        Self {
            window: 9,
            alpha_k: 1.0,
            gamma: 80.0,
            threshold: 0.1,
            levels: 256.0,
            ignore_flat: true,
        }
    }
}

impl EqfParams {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(MetricError::InvalidParams(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.threshold > 0.0) {
            return Err(MetricError::InvalidParams("threshold must be > 0".into()));
        }
        if !(self.levels >= 2.0) {
            return Err(MetricError::InvalidParams("levels must be >= 2".into()));
        }
        if !(self.alpha_k >= 0.0 && self.gamma >= 0.0) {
            return Err(MetricError::InvalidParams(
                "alpha_k and gamma must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// A fuzzy-derivative direction: unit step `step` and perpendicular `side`,
/// both as (dx, dy).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Direction {
    pub name: &'static str,
    pub step: (isize, isize),
    pub side: (isize, isize),
}

/// The eight fuzzy-derivative directions. Each derivative triple compares
/// the pixel with its neighbor along `step`, and likewise the two pixels
/// offset by ±`side`.
pub const DIRECTIONS: [Direction; 8] = [
    Direction {
        name: "NW",
        step: (-1, -1),
        side: (1, -1),
    },
    Direction {
        name: "W",
        step: (-1, 0),
        side: (0, 1),
    },
    Direction {
        name: "SW",
        step: (-1, 1),
        side: (1, 1),
    },
    Direction {
        name: "S",
        step: (0, 1),
        side: (1, 0),
    },
    Direction {
        name: "SE",
        step: (1, 1),
        side: (1, -1),
    },
    Direction {
        name: "E",
        step: (1, 0),
        side: (0, 1),
    },
    Direction {
        name: "NE",
        step: (1, -1),
        side: (1, 1),
    },
    Direction {
        name: "N",
        step: (0, -1),
        side: (1, 0),
    },
];

/// Opposing neighbor pairs for the horizontal, vertical and two diagonal
/// 3-pixel derivatives.
const LINES: [((isize, isize), (isize, isize)); 4] = [
    ((1, 0), (-1, 0)),
    ((0, 1), (0, -1)),
    ((1, -1), (-1, 1)),
    ((1, 1), (-1, -1)),
];

/// |f - ∇/2| / (∇/2); infinite when the derivative is zero.
#[inline]
pub fn inverse_blurriness(f: f64, derivative: f64) -> f64 {
    if derivative == 0.0 {
        return f64::INFINITY;
    }
    let half = 0.5 * derivative;
    (f - half).abs() / half
}

#[derive(Clone, Debug, PartialEq)]
pub struct EqfReport {
    /// Mean window homogeneity μ.
    pub homogeneity: f64,
    /// Large-derivative threshold K.
    pub threshold_k: f64,
    /// Edge candidates from the fuzzy rule.
    pub edge_count: usize,
    /// Candidates surviving the neighbor-intensity rule.
    pub final_edge_count: usize,
    pub blur_count: usize,
    pub blur_ratio: f64,
    pub eqf: f64,
    width: usize,
    height: usize,
    final_edges: Vec<bool>,
    blurred: Vec<bool>,
}

impl EqfReport {
    pub fn final_edges(&self) -> &[bool] {
        &self.final_edges
    }

    pub fn blurred(&self) -> &[bool] {
        &self.blurred
    }

    /// Final edges white, blurred edges mid-gray, background black.
    pub fn edge_bitmap(&self) -> GrayImage {
        let px = self
            .final_edges
            .iter()
            .zip(&self.blurred)
            .map(|(&e, &b)| match (e, b) {
                (true, true) => 128,
                (true, false) => 255,
                _ => 0,
            })
            .collect();
        GrayImage::new(self.width, self.height, px).expect("report dimensions are consistent")
    }
}

/// Mean of 1 - (max - min)/L over the N×N window centered at every pixel.
pub fn mean_homogeneity(img: &GrayImage, window: usize, levels: f64) -> f64 {
    let r = window / 2;
    let padded = pad_replicate(img, r);
    let pw = padded.width();
    let px = padded.pixels();
    let (w, h) = (img.width(), img.height());
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (mut lo, mut hi) = (u8::MAX, u8::MIN);
            for wy in y..y + window {
                let row = &px[wy * pw + x..wy * pw + x + window];
                for &v in row {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            total += 1.0 - f64::from(hi - lo) / levels;
        }
    }
    total / (w * h) as f64
}

pub fn eqf(img: &GrayImage, params: &EqfParams) -> Result<EqfReport> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    if w < params.window || h < params.window {
        return Err(MetricError::ImageTooSmall {
            width: w,
            height: h,
            window: params.window,
        });
    }
    let homogeneity = mean_homogeneity(img, params.window, params.levels);
    let threshold_k = params.alpha_k * (1.0 - homogeneity) * params.gamma;

    let at = |x: usize, y: usize, d: (isize, isize)| -> f64 {
        f64::from(img.get_clamped(x as isize + d.0, y as isize + d.1))
    };
    let large = |x: usize, y: usize, base: (isize, isize), step: (isize, isize)| -> bool {
        let a = at(x, y, base);
        let b = at(x, y, (base.0 + step.0, base.1 + step.1));
        (b - a).abs() > threshold_k
    };

    let mut candidate = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            candidate[y * w + x] = DIRECTIONS.iter().any(|d| {
                let votes = [(0, 0), d.side, (-d.side.0, -d.side.1)]
                    .iter()
                    .filter(|&&base| large(x, y, base, d.step))
                    .count();
                votes >= 2
            });
        }
    }
    let edge_count = candidate.iter().filter(|&&c| c).count();
    if edge_count == 0 {
        return Err(MetricError::NoEdges);
    }

    let mut final_edges = vec![false; w * h];
    let mut blurred = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            if !candidate[k] {
                continue;
            }
            let f = f64::from(img.get(x, y));
            let mut min_neighbor: Option<f64> = None;
            for &(a, b) in &LINES {
                for (dx, dy) in [a, b] {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let nk = ny as usize * w + nx as usize;
                    if candidate[nk] {
                        let v = f64::from(img.pixels()[nk]);
                        min_neighbor = Some(min_neighbor.map_or(v, |m: f64| m.min(v)));
                    }
                }
            }
            // no candidate neighbors: kept as an edge
            let is_edge = min_neighbor.is_none_or(|m| f > m);
            if !is_edge {
                continue;
            }
            final_edges[k] = true;

            let mut worst = None;
            for &(a, b) in &LINES {
                let grad = (at(x, y, a) - at(x, y, b)).abs();
                let br = inverse_blurriness(f, grad);
                if br.is_finite() || !params.ignore_flat {
                    worst = Some(worst.map_or(br, |m: f64| m.max(br)));
                }
            }
            blurred[k] = worst.is_some_and(|m| m < params.threshold);
        }
    }
    let final_edge_count = final_edges.iter().filter(|&&e| e).count();
    let blur_count = blurred.iter().filter(|&&b| b).count();
    let blur_ratio = blur_count as f64 / edge_count as f64;
    Ok(EqfReport {
        homogeneity,
        threshold_k,
        edge_count,
        final_edge_count,
        blur_count,
        blur_ratio,
        eqf: 1.0 - blur_ratio,
        width: w,
        height: h,
        final_edges,
        blurred,
    })
}
