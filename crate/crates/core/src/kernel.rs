//! Scalar kernels for the clustering objectives.

use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid kernel parameter: {0}")]
pub struct KernelError(pub String);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KernelKind {
    #[default]
    GaussianRbf,
    Polynomial,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::GaussianRbf => "gaussian_rbf",
            KernelKind::Polynomial => "polynomial",
        }
    }
}

impl FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian_rbf" | "gaussian" | "rbf" => Ok(KernelKind::GaussianRbf),
            "polynomial" | "poly" => Ok(KernelKind::Polynomial),
            _ => Err(format!("unknown kernel kind '{}'", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub kind: KernelKind,
    /// Bandwidth of the RBF kernel.
    pub sigma: f64,
    /// Inner exponent on |x - y|.
    pub a: f64,
    /// Outer exponent.
    pub b: f64,
    /// Polynomial degree.
    pub degree: u32,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            kind: KernelKind::GaussianRbf,
            sigma: 150.0,
            a: 2.0,
            b: 1.0,
            degree: 2,
        }
    }
}

impl KernelParams {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(KernelError(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.a > 0.0) {
            return Err(KernelError(format!("a must be > 0, got {}", self.a)));
        }
        if !(1.0..=2.0).contains(&self.b) {
            return Err(KernelError(format!("b must lie in [1, 2], got {}", self.b)));
        }
        if self.degree < 1 {
            return Err(KernelError("polynomial degree must be >= 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            KernelKind::GaussianRbf => {
                let d = (x - y).abs();
                // fast path for the default a=2, b=1
                let num = if self.a == 2.0 && self.b == 1.0 {
                    d * d
                } else {
                    d.powf(self.a).powf(self.b)
                };
                (-num / (self.sigma * self.sigma)).exp()
            }
            KernelKind::Polynomial => (x * y + 1.0).powi(self.degree as i32),
        }
    }

    /// Kernel-induced distance 1 - K(x, y).
    #[inline]
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        1.0 - self.eval(x, y)
    }
}

pub fn kernel_eval(x: f64, y: f64, params: &KernelParams) -> f64 {
    params.eval(x, y)
}
