//! Fuzzy clustering solvers: the weighted-SUSAN kernel FCM, classical FCM
//! and the spatially constrained kernel FCM baseline.
//!
//! All three share one alternating loop: memberships for fixed prototypes,
//! then prototypes for fixed memberships, until the largest prototype move
//! drops below `epsilon` or `max_iter` is reached. Kernel evaluations inside
//! the prototype step use the previous prototypes (fixed-point update).

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::image::{GrayImage, SegmentationMap};
use crate::kernel::{KernelError, KernelParams};
use crate::susan::{damping_field, CircularMask, NeighborhoodField, SusanError, SusanParams};

/// Pixels per reduction chunk in parallel mode. Fixed so that summation
/// order does not depend on the thread count.
const CHUNK: usize = 2048;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid clustering parameter: {0}")]
    InvalidParams(String),
    #[error("cluster {0} has zero total weight")]
    DegenerateCluster(usize),
    #[error("image is empty")]
    EmptyImage,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Susan(#[from] SusanError),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Algorithm {
    #[default]
    Kwsfcm,
    Fcm,
    KfcmS,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Kwsfcm => "kwsfcm",
            Algorithm::Fcm => "fcm",
            Algorithm::KfcmS => "kfcm_s",
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "kwsfcm" => Ok(Algorithm::Kwsfcm),
            "fcm" => Ok(Algorithm::Fcm),
            "kfcm_s" | "kfcm-s" => Ok(Algorithm::KfcmS),
            _ => Err(format!("unknown algorithm '{}'", s)),
        }
    }
}

/// Initial prototype placement.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// v_i = min + (i + 1/2)(max - min)/c over the image intensity range.
    Equispaced,
    /// Uniform draws over the intensity range.
    SeededRandom(u64),
    /// Caller-supplied prototypes (length must equal the cluster count).
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterParams {
    pub clusters: usize,
    pub m: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub init: Init,
    /// Data-parallel membership and reduction passes.
    pub parallel: bool,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            clusters: 2,
            m: 2.0,
            alpha: 3.8,
            epsilon: 1e-3,
            max_iter: 100,
            init: Init::Equispaced,
            parallel: true,
        }
    }
}

impl ClusterParams {
    pub fn with_clusters(clusters: usize) -> Self {
        Self {
            clusters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters < 1 {
            return Err(ClusterError::InvalidParams("c must be >= 1".into()));
        }
        if !(self.m > 1.0 && self.m.is_finite()) {
            return Err(ClusterError::InvalidParams(format!(
                "m must be > 1, got {}",
                self.m
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ClusterError::InvalidParams(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(ClusterError::InvalidParams(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iter < 1 {
            return Err(ClusterError::InvalidParams("max_iter must be >= 1".into()));
        }
        if let Init::Explicit(v) = &self.init {
            if v.len() != self.clusters || v.iter().any(|x| !x.is_finite()) {
                return Err(ClusterError::InvalidParams(format!(
                    "explicit init needs {} finite prototypes",
                    self.clusters
                )));
            }
        }
        Ok(())
    }
}

/// Memberships u_ik, stored pixel-major so each pixel's column is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionMatrix {
    clusters: usize,
    values: Vec<f64>,
}

impl PartitionMatrix {
    pub fn uniform(clusters: usize, pixels: usize) -> Self {
        Self {
            clusters,
            values: vec![1.0 / clusters as f64; clusters * pixels],
        }
    }

    /// Builds from per-pixel columns.
    pub fn from_columns(clusters: usize, columns: &[Vec<f64>]) -> Self {
        let mut values = Vec::with_capacity(clusters * columns.len());
        for col in columns {
            assert_eq!(
                col.len(),
                clusters,
                "column length must equal cluster count"
            );
            values.extend_from_slice(col);
        }
        Self { clusters, values }
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn pixels(&self) -> usize {
        self.values.len() / self.clusters
    }

    #[inline]
    pub fn get(&self, cluster: usize, pixel: usize) -> f64 {
        self.values[pixel * self.clusters + cluster]
    }

    #[inline]
    pub fn column(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.clusters..(pixel + 1) * self.clusters]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.clusters)
    }

    /// Largest |Σ_i u_ik - 1| over all pixels.
    pub fn max_column_error(&self) -> f64 {
        self.columns()
            .map(|c| (c.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Per-pixel argmax; ties go to the lowest cluster index.
    pub fn defuzzify(&self) -> Vec<usize> {
        self.columns()
            .map(|col| {
                let mut best = 0;
                for (i, &u) in col.iter().enumerate().skip(1) {
                    if u > col[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centroids(pub Vec<f64>);

impl Centroids {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective after the membership step, at the prototypes it used.
    pub objective: f64,
    /// Objective of the previous memberships at the same prototypes.
    pub objective_before_partition: f64,
    /// Prototypes after the centroid step.
    pub centroids: Vec<f64>,
    pub max_membership_change: f64,
    pub centroid_shift: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Iterations whose objective rose above the previous iteration's.
    pub fn objective_increases(&self) -> usize {
        self.records
            .windows(2)
            .filter(|w| w[1].objective > w[0].objective)
            .count()
    }

    /// Iterations where the membership step failed to lower the objective,
    /// beyond a relative tolerance.
    pub fn partition_step_violations(&self, rel_tol: f64) -> usize {
        self.records
            .iter()
            .filter(|r| r.objective > r.objective_before_partition * (1.0 + rel_tol) + rel_tol)
            .count()
    }

    /// `iteration,J,v_1,...,v_c` rows with a header line.
    pub fn to_csv(&self) -> String {
        let c = self.records.first().map_or(0, |r| r.centroids.len());
        let mut out = String::from("iteration,J");
        for i in 1..=c {
            let _ = write!(out, ",v_{}", i);
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{:.12e}", r.iteration, r.objective);
            for v in &r.centroids {
                let _ = write!(out, ",{:.9}", v);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub map: SegmentationMap,
    pub centroids: Centroids,
    pub partition: PartitionMatrix,
    pub trace: SolveTrace,
}

/// Read-only view handed to iteration observers.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub partition: &'a PartitionMatrix,
    pub centroids: &'a Centroids,
}

/// Options of the weighted-SUSAN solver beyond the shared parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KwsfcmOptions {
    pub mask: CircularMask,
    /// When false every damping coefficient is 1 (weighted mean only).
    pub damping: bool,
}

impl Default for KwsfcmOptions {
    fn default() -> Self {
        Self {
            mask: CircularMask::default(),
            damping: true,
        }
    }
}

/// Per-pixel distance model shared by the solvers.
enum Model<'a> {
    Euclidean {
        x: &'a [f64],
    },
    Kernel {
        x: &'a [f64],
        neighbor: &'a [f64],
        damping: Option<&'a [f64]>,
        alpha: f64,
        kernel: KernelParams,
    },
}

impl Model<'_> {
    fn len(&self) -> usize {
        match self {
            Model::Euclidean { x } | Model::Kernel { x, .. } => x.len(),
        }
    }

    #[inline]
    fn distance(&self, k: usize, v: f64) -> f64 {
        match *self {
            Model::Euclidean { x } => {
                let d = x[k] - v;
                d * d
            }
            Model::Kernel {
                x,
                neighbor,
                damping,
                alpha,
                ref kernel,
            } => {
                let s = damping.map_or(1.0, |s| s[k]);
                let d = s * kernel.distance(x[k], v) + alpha * kernel.distance(neighbor[k], v);
                // a polynomial kernel can produce negative "distances"
                d.max(0.0)
            }
        }
    }

    /// Numerator and denominator contributions of pixel k to prototype v,
    /// before the u^m factor.
    #[inline]
    fn centroid_terms(&self, k: usize, v: f64) -> (f64, f64) {
        match *self {
            Model::Euclidean { x } => (x[k], 1.0),
            Model::Kernel {
                x,
                neighbor,
                damping,
                alpha,
                ref kernel,
            } => {
                let s = damping.map_or(1.0, |s| s[k]);
                let kx = s * kernel.eval(x[k], v);
                let kn = alpha * kernel.eval(neighbor[k], v);
                (kx * x[k] + kn * neighbor[k], kx + kn)
            }
        }
    }
}

/// Memberships of one pixel from its distances to every prototype.
/// Zero distances take all the mass, shared equally.
pub fn memberships_from_distances(d: &[f64], m: f64, out: &mut [f64]) {
    let zeros = d.iter().filter(|&&x| x == 0.0).count();
    if zeros > 0 {
        let share = 1.0 / zeros as f64;
        for (u, &x) in out.iter_mut().zip(d) {
            *u = if x == 0.0 { share } else { 0.0 };
        }
        return;
    }
    let p = 1.0 / (m - 1.0);
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (u, &x) in out.iter_mut().zip(d) {
        *u = (dmin / x).powf(p);
        total += *u;
    }
    for u in out.iter_mut() {
        *u /= total;
    }
}

#[inline]
fn pow_m(u: f64, m: f64) -> f64 {
    if m == 2.0 {
        u * u
    } else {
        u.powf(m)
    }
}

/// Partition update; returns the new matrix together with the objective of
/// the new and of the previous memberships at `v`.
fn partition_step(
    model: &Model,
    v: &[f64],
    m: f64,
    prev: Option<&PartitionMatrix>,
    parallel: bool,
) -> (PartitionMatrix, f64, f64) {
    let c = v.len();
    let n = model.len();
    let mut values = vec![0.0; c * n];

    let chunk_fn = |chunk_idx: usize, out: &mut [f64]| -> (f64, f64) {
        let start = chunk_idx * CHUNK;
        let mut d = vec![0.0; c];
        let (mut j_new, mut j_old) = (0.0, 0.0);
        for (local, col) in out.chunks_exact_mut(c).enumerate() {
            let k = start + local;
            for (di, &vi) in d.iter_mut().zip(v) {
                *di = model.distance(k, vi);
            }
            memberships_from_distances(&d, m, col);
            for i in 0..c {
                j_new += pow_m(col[i], m) * d[i];
                if let Some(p) = prev {
                    j_old += pow_m(p.get(i, k), m) * d[i];
                }
            }
        }
        (j_new, j_old)
    };

    let partials: Vec<(f64, f64)> = if parallel {
        values
            .par_chunks_mut(CHUNK * c)
            .enumerate()
            .map(|(i, out)| chunk_fn(i, out))
            .collect()
    } else {
        vec![chunk_fn(0, &mut values)]
    };
    let (j_new, j_old) = partials
        .into_iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let j_old = if prev.is_some() { j_old } else { f64::INFINITY };
    (
        PartitionMatrix {
            clusters: c,
            values,
        },
        j_new,
        j_old,
    )
}

fn centroid_step(
    model: &Model,
    u: &PartitionMatrix,
    v_prev: &[f64],
    m: f64,
    parallel: bool,
) -> Result<Centroids> {
    let c = v_prev.len();
    let n = model.len();
    let sums = |range: std::ops::Range<usize>| -> Vec<(f64, f64)> {
        let mut acc = vec![(0.0, 0.0); c];
        for k in range {
            let col = u.column(k);
            for i in 0..c {
                let w = pow_m(col[i], m);
                if w == 0.0 {
                    continue;
                }
                let (num, den) = model.centroid_terms(k, v_prev[i]);
                acc[i].0 += w * num;
                acc[i].1 += w * den;
            }
        }
        acc
    };
    let totals = if parallel {
        let partials: Vec<Vec<(f64, f64)>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|b| sums(b * CHUNK..((b + 1) * CHUNK).min(n)))
            .collect();
        let mut totals = vec![(0.0, 0.0); c];
        for p in partials {
            for (t, q) in totals.iter_mut().zip(p) {
                t.0 += q.0;
                t.1 += q.1;
            }
        }
        totals
    } else {
        sums(0..n)
    };
    totals
        .into_iter()
        .enumerate()
        .map(|(i, (num, den))| {
            if den > 0.0 && den.is_finite() {
                Ok(num / den)
            } else {
                Err(ClusterError::DegenerateCluster(i))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(Centroids)
}

fn initial_centroids(img: &GrayImage, params: &ClusterParams) -> Vec<f64> {
    let (lo, hi) = img
        .min_max()
        .map_or((0.0, 0.0), |(a, b)| (f64::from(a), f64::from(b)));
    let c = params.clusters;
    match &params.init {
        Init::Equispaced => (0..c)
            .map(|i| lo + (i as f64 + 0.5) * (hi - lo) / c as f64)
            .collect(),
        Init::SeededRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..c)
                .map(|_| lo + rng.random::<f64>() * (hi - lo))
                .collect()
        }
        Init::Explicit(v) => v.clone(),
    }
}

fn solve<F>(
    img: &GrayImage,
    model: &Model,
    params: &ClusterParams,
    mut observer: F,
) -> Result<Segmentation>
where
    F: FnMut(&IterationState),
{
    params.validate()?;
    if img.is_empty() {
        return Err(ClusterError::EmptyImage);
    }
    let mut v = Centroids(initial_centroids(img, params));
    let mut trace = SolveTrace::default();
    let mut u: Option<PartitionMatrix> = None;

    for iteration in 1..=params.max_iter {
        let (u_new, objective, before) =
            partition_step(model, v.values(), params.m, u.as_ref(), params.parallel);
        let v_new = centroid_step(model, &u_new, v.values(), params.m, params.parallel)?;
        let shift = v_new.max_abs_diff(&v);
        trace.records.push(IterationRecord {
            iteration,
            objective,
            objective_before_partition: before,
            centroids: v_new.0.clone(),
            max_membership_change: u.as_ref().map_or(f64::INFINITY, |p| p.max_abs_diff(&u_new)),
            centroid_shift: shift,
        });
        observer(&IterationState {
            iteration,
            partition: &u_new,
            centroids: &v_new,
        });
        u = Some(u_new);
        v = v_new;
        if shift < params.epsilon {
            trace.converged = true;
            break;
        }
    }

    let partition = u.expect("at least one iteration runs");
    let map = SegmentationMap::new(
        img.width(),
        img.height(),
        partition.defuzzify(),
        params.clusters,
    )
    .expect("labels are below the cluster count");
    Ok(Segmentation {
        map,
        centroids: v,
        partition,
        trace,
    })
}

fn check_field(img: &GrayImage, field: &NeighborhoodField) -> Result<()> {
    if (field.width(), field.height()) != (img.width(), img.height()) {
        return Err(ClusterError::DimensionMismatch(format!(
            "field {}x{} vs image {}x{}",
            field.width(),
            field.height(),
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn kwsfcm_model<'a>(
    x: &'a [f64],
    field: &'a NeighborhoodField,
    params: &ClusterParams,
    kparams: &KernelParams,
) -> Model<'a> {
    Model::Kernel {
        x,
        neighbor: field.weighted_mean(),
        damping: Some(field.damping()),
        alpha: params.alpha,
        kernel: *kparams,
    }
}

/// One membership update of the weighted-SUSAN objective.
pub fn update_partition(
    img: &GrayImage,
    field: &NeighborhoodField,
    v: &Centroids,
    params: &ClusterParams,
    kparams: &KernelParams,
) -> Result<PartitionMatrix> {
    check_field(img, field)?;
    let x = img.to_real();
    let model = kwsfcm_model(&x, field, params, kparams);
    Ok(partition_step(&model, v.values(), params.m, None, params.parallel).0)
}

/// One prototype update of the weighted-SUSAN objective, kernels evaluated
/// at `v_prev`.
pub fn update_centroids(
    img: &GrayImage,
    field: &NeighborhoodField,
    u: &PartitionMatrix,
    v_prev: &Centroids,
    params: &ClusterParams,
    kparams: &KernelParams,
) -> Result<Centroids> {
    check_field(img, field)?;
    if u.pixels() != img.len() || u.clusters() != v_prev.len() {
        return Err(ClusterError::DimensionMismatch(
            "partition does not match image or prototypes".into(),
        ));
    }
    let x = img.to_real();
    let model = kwsfcm_model(&x, field, params, kparams);
    centroid_step(&model, u, v_prev.values(), params.m, params.parallel)
}

/// Weighted-SUSAN objective Σ_k Σ_i u_ik^m [s_k (1-K(x_k,v_i)) + α (1-K(x̄w_k,v_i))].
pub fn kwsfcm_objective(
    img: &GrayImage,
    field: &NeighborhoodField,
    u: &PartitionMatrix,
    v: &Centroids,
    params: &ClusterParams,
    kparams: &KernelParams,
) -> f64 {
    let x = img.to_real();
    let model = kwsfcm_model(&x, field, params, kparams);
    (0..img.len())
        .map(|k| {
            v.values()
                .iter()
                .enumerate()
                .map(|(i, &vi)| pow_m(u.get(i, k), params.m) * model.distance(k, vi))
                .sum::<f64>()
        })
        .sum()
}

pub fn kwsfcm_segment(
    img: &GrayImage,
    params: &ClusterParams,
    kparams: &KernelParams,
    sparams: &SusanParams,
) -> Result<Segmentation> {
    kwsfcm_segment_with(
        img,
        params,
        kparams,
        sparams,
        &KwsfcmOptions::default(),
        |_| {},
    )
}

/// Weighted-SUSAN solver with explicit mask/damping options and an
/// observer called after every iteration.
pub fn kwsfcm_segment_with<F>(
    img: &GrayImage,
    params: &ClusterParams,
    kparams: &KernelParams,
    sparams: &SusanParams,
    options: &KwsfcmOptions,
    observer: F,
) -> Result<Segmentation>
where
    F: FnMut(&IterationState),
{
    if img.is_empty() {
        return Err(ClusterError::EmptyImage);
    }
    kparams.validate()?;
    sparams.validate()?;
    let field = damping_field(img, &options.mask, sparams);
    let field = if options.damping {
        field
    } else {
        field.without_damping()
    };
    kwsfcm_segment_field(img, &field, params, kparams, observer)
}

/// Weighted-SUSAN solver over a precomputed neighborhood field.
pub fn kwsfcm_segment_field<F>(
    img: &GrayImage,
    field: &NeighborhoodField,
    params: &ClusterParams,
    kparams: &KernelParams,
    observer: F,
) -> Result<Segmentation>
where
    F: FnMut(&IterationState),
{
    check_field(img, field)?;
    kparams.validate()?;
    let x = img.to_real();
    solve(
        img,
        &kwsfcm_model(&x, field, params, kparams),
        params,
        observer,
    )
}

pub fn fcm_segment(img: &GrayImage, params: &ClusterParams) -> Result<Segmentation> {
    fcm_segment_with(img, params, |_| {})
}

pub fn fcm_segment_with<F>(
    img: &GrayImage,
    params: &ClusterParams,
    observer: F,
) -> Result<Segmentation>
where
    F: FnMut(&IterationState),
{
    let x = img.to_real();
    solve(img, &Model::Euclidean { x: &x }, params, observer)
}

/// Unweighted mean of the 8-connected neighbors (replicate border).
pub fn neighbor_mean_3x3(img: &GrayImage) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.len());
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let mut sum = 0u32;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx != 0 || dy != 0 {
                        sum += u32::from(img.get_clamped(x + dx, y + dy));
                    }
                }
            }
            out.push(f64::from(sum) / 8.0);
        }
    }
    out
}

pub fn kfcm_s_segment(
    img: &GrayImage,
    params: &ClusterParams,
    kparams: &KernelParams,
) -> Result<Segmentation> {
    kfcm_s_segment_with(img, params, kparams, |_| {})
}

pub fn kfcm_s_segment_with<F>(
    img: &GrayImage,
    params: &ClusterParams,
    kparams: &KernelParams,
    observer: F,
) -> Result<Segmentation>
where
    F: FnMut(&IterationState),
{
    kparams.validate()?;
    let x = img.to_real();
    let mean = neighbor_mean_3x3(img);
    let model = Model::Kernel {
        x: &x,
        neighbor: &mean,
        damping: None,
        alpha: params.alpha,
        kernel: *kparams,
    };
    solve(img, &model, params, observer)
}
