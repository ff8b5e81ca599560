//! Segmentation dispatch and the noisy-replication experiment.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::clustering::{
    fcm_segment_with, kfcm_s_segment_with, kwsfcm_segment_with, Algorithm, ClusterError,
    IterationState, KwsfcmOptions, Segmentation,
};
use crate::image::{GrayImage, SegmentationMap};
use crate::metrics::{entropy_measure, eqf, segmentation_accuracy, MetricError};
use crate::noise::add_noise;
use crate::susan::CircularMask;

use super::config::RunConfig;

/// Runs the configured algorithm on one gray image.
pub fn segment_with<F>(
    img: &GrayImage,
    cfg: &RunConfig,
    observer: F,
) -> Result<Segmentation, ClusterError>
where
    F: FnMut(&IterationState),
{
    match cfg.algo {
        Algorithm::Kwsfcm => {
            let options = KwsfcmOptions {
                mask: CircularMask::new(cfg.weights),
                damping: cfg.damping,
            };
            kwsfcm_segment_with(
                img,
                &cfg.cluster,
                &cfg.kernel,
                &cfg.susan,
                &options,
                observer,
            )
        }
        Algorithm::Fcm => fcm_segment_with(img, &cfg.cluster, observer),
        Algorithm::KfcmS => kfcm_s_segment_with(img, &cfg.cluster, &cfg.kernel, observer),
    }
}

pub fn segment(img: &GrayImage, cfg: &RunConfig) -> Result<Segmentation, ClusterError> {
    segment_with(img, cfg, |_| {})
}

/// Centroid-rendered image of a segmentation.
pub fn render(seg: &Segmentation) -> GrayImage {
    seg.map.render(seg.centroids.values())
}

/// Classical FCM on the clean image, with the run's cluster parameters.
pub fn reference_map(clean: &GrayImage, cfg: &RunConfig) -> Result<SegmentationMap, ClusterError> {
    Ok(fcm_segment_with(clean, &cfg.cluster, |_| {})?.map)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub sa: f64,
    /// None when a region is empty.
    pub entropy: Option<f64>,
    /// None when the rendered result has no edges.
    pub eqf: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub centroids: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineReport {
    pub config: RunConfig,
    pub records: Vec<RunRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Noise(#[from] crate::noise::InvalidLevel),
}

fn one_run(
    clean: &GrayImage,
    reference: &SegmentationMap,
    cfg: &RunConfig,
    run: usize,
) -> Result<RunRecord, PipelineError> {
    let (noisy, seed) = match &cfg.noise {
        Some(spec) => {
            let s = spec.seed.wrapping_add(run as u64);
            let spec = crate::noise::NoiseSpec { seed: s, ..*spec };
            (add_noise(clean, &spec)?, s)
        }
        None => (clean.clone(), 0),
    };
    let seg = segment(&noisy, cfg)?;
    let sa = segmentation_accuracy(&seg.map, reference)?;
    let entropy = match entropy_measure(&noisy, &seg.map, cfg.entropy_base) {
        Ok(r) => Some(r.combined),
        Err(MetricError::EmptyRegion(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let eqf = match eqf(&render(&seg), &cfg.eqf) {
        Ok(r) => Some(r.eqf),
        Err(MetricError::NoEdges | MetricError::ImageTooSmall { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(RunRecord {
        run,
        seed,
        sa,
        entropy,
        eqf,
        iterations: seg.trace.iterations(),
        converged: seg.trace.converged,
        centroids: seg.centroids.sorted(),
    })
}

/// Reference by FCM on `clean`, then `cfg.runs` noisy replications seeded
/// `noise.seed + run`. Runs execute in parallel but are reported in order.
pub fn run_pipeline(clean: &GrayImage, cfg: &RunConfig) -> Result<PipelineReport, PipelineError> {
    let reference = reference_map(clean, cfg)?;
    let records = (0..cfg.runs)
        .into_par_iter()
        .map(|r| one_run(clean, &reference, cfg, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PipelineReport {
        config: cfg.clone(),
        records,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

fn summary(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, min, max))
}

impl PipelineReport {
    pub fn sa_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.sa).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,seed,sa,entropy,eqf,iterations,converged,centroids\n");
        for r in &self.records {
            let v: Vec<String> = r.centroids.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.run,
                r.seed,
                r.sa,
                opt(r.entropy),
                opt(r.eqf),
                r.iterations,
                r.converged,
                v.join(";")
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = self.config.echo();
        let mut metric = |name: &str, values: Vec<f64>| {
            let defined = values.len();
            match summary(&values) {
                Some((mean, min, max)) => {
                    let _ = writeln!(out, "{}.mean = {}", name, mean);
                    let _ = writeln!(out, "{}.min = {}", name, min);
                    let _ = writeln!(out, "{}.max = {}", name, max);
                }
                None => {
                    let _ = writeln!(out, "{}.mean = undefined", name);
                }
            }
            let _ = writeln!(out, "{}.defined_runs = {}", name, defined);
        };
        metric("sa", self.sa_values());
        metric(
            "entropy",
            self.records.iter().filter_map(|r| r.entropy).collect(),
        );
        metric("eqf", self.records.iter().filter_map(|r| r.eqf).collect());
        let converged = self.records.iter().filter(|r| r.converged).count();
        let _ = writeln!(out, "converged_runs = {}", converged);
        let max_iter = self.records.iter().map(|r| r.iterations).max().unwrap_or(0);
        let _ = writeln!(out, "max_iterations = {}", max_iter);
        out
    }
}
