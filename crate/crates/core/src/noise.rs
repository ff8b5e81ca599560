//! Seeded noise injectors.
//!
//! Every pixel draws from its own ChaCha stream (seed = noise seed, stream =
//! pixel index), so output is independent of evaluation order and thread
//! count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::image::{quantize, GrayImage};

#[derive(Debug, Error, PartialEq)]
#[error("invalid noise level {level} for {kind}")]
pub struct InvalidLevel {
    pub kind: NoiseKind,
    pub level: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    SaltPepper,
    Gaussian,
    Poisson,
    Speckle,
    Rician,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::SaltPepper => "salt_pepper",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Poisson => "poisson",
            NoiseKind::Speckle => "speckle",
            NoiseKind::Rician => "rician",
        }
    }

    /// How `level` is interpreted, echoed into metadata.
    pub fn level_convention(self) -> &'static str {
        match self {
            NoiseKind::SaltPepper => "fraction of pixels replaced by 0 or 255",
            NoiseKind::Gaussian => "additive sd = level * 255",
            NoiseKind::Poisson => "unused (lambda = pixel value)",
            NoiseKind::Speckle => "multiplicative variance (I * (1 + n), n ~ N(0, level))",
            NoiseKind::Rician => "per-component sd = level * 255",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "salt_pepper" | "salt-pepper" | "sp" => Ok(NoiseKind::SaltPepper),
            "gaussian" => Ok(NoiseKind::Gaussian),
            "poisson" => Ok(NoiseKind::Poisson),
            "speckle" => Ok(NoiseKind::Speckle),
            "rician" => Ok(NoiseKind::Rician),
            _ => Err(format!("unknown noise kind '{}'", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, level: f64, seed: u64) -> Self {
        Self { kind, level, seed }
    }

    pub fn validate(&self) -> Result<(), InvalidLevel> {
        let ok = self.level.is_finite()
            && self.level >= 0.0
            && (self.kind != NoiseKind::SaltPepper || self.level <= 1.0);
        if ok {
            Ok(())
        } else {
            Err(InvalidLevel {
                kind: self.kind,
                level: self.level,
            })
        }
    }

    /// `key = value` lines describing this noise setting.
    pub fn metadata(&self) -> String {
        format!(
            "noise.kind = {}\nnoise.level = {}\nnoise.seed = {}\nnoise.convention = {}\nnoise.rounding = nearest, ties to even, clipped to [0,255]\n",
            self.kind,
            self.level,
            self.seed,
            self.kind.level_convention()
        )
    }
}

fn pixel_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn corrupt(value: u8, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> u8 {
    let x = f64::from(value);
    match spec.kind {
        NoiseKind::SaltPepper => {
            let hit: f64 = rng.random();
            let pick: f64 = rng.random();
            if hit < spec.level {
                if pick < 0.5 {
                    0
                } else {
                    255
                }
            } else {
                value
            }
        }
        NoiseKind::Gaussian => {
            let n: f64 = rng.sample(StandardNormal);
            quantize(x + n * 255.0 * spec.level)
        }
        NoiseKind::Poisson => {
            if value == 0 {
                return 0;
            }
            let p = Poisson::new(x).expect("positive rate");
            quantize(p.sample(rng))
        }
        NoiseKind::Speckle => {
            let n: f64 = rng.sample(StandardNormal);
            quantize(x * (1.0 + n * spec.level.sqrt()))
        }
        NoiseKind::Rician => {
            let sd = 255.0 * spec.level;
            let normal = Normal::new(0.0, sd).expect("finite sd");
            let n1 = normal.sample(rng);
            let n2 = normal.sample(rng);
            quantize(((x + n1).powi(2) + n2 * n2).sqrt())
        }
    }
}

pub fn add_noise(img: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage, InvalidLevel> {
    spec.validate()?;
    let pixels: Vec<u8> = img
        .pixels()
        .par_iter()
        .enumerate()
        .map(|(k, &p)| corrupt(p, spec, &mut pixel_rng(spec.seed, k)))
        .collect();
    Ok(GrayImage::new(img.width(), img.height(), pixels).expect("same dimensions"))
}
