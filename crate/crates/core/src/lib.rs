//! Noise-robust gray-level image segmentation with a kernelized fuzzy
//! c-means whose spatial term is weighted by a SUSAN-area damping field.
//!
//! Modules build on each other bottom-up: [`image`] for Netpbm I/O and
//! raster types, [`susan`] for the mask and damping field, [`kernel`] for
//! the kernel functions, [`clustering`] for KWSFCM and its baselines,
//! [`noise`] for seeded corruption, [`metrics`] for evaluation, and [`cli`]
//! for the command-line front end.

// `!(x > 0.0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clustering;
pub mod image;
pub mod kernel;
pub mod metrics;
pub mod noise;
pub mod susan;

pub use clustering::{
    fcm_segment, kfcm_s_segment, kwsfcm_segment, Algorithm, ClusterError, ClusterParams, Init,
    PartitionMatrix, Segmentation, SolveTrace,
};
pub use image::{ColorImage, GrayImage, SegmentationMap};
pub use kernel::{KernelKind, KernelParams};
pub use metrics::{entropy_measure, eqf, segmentation_accuracy, EqfParams};
pub use noise::{add_noise, NoiseKind, NoiseSpec};
pub use susan::{build_mask, damping_field, solve_t, CircularMask, SusanParams, WeightMode};
