//! Deterministic numerical kernel: flat parameter vectors, seeded Gaussian
//! sampling, the `FUI1` binary codec, and a ball-constrained quasi-Newton
//! maximizer.

mod lbfgs;
mod rng;

pub use lbfgs::{lbfgs_maximize, HessianMode, LbfgsOptions, MaximizeOutcome, Termination};
pub use rng::RngStream;

use crate::error::{Error, Result};
use rand_distr::{Distribution, Normal};

/// A flat, fixed-dimension vector of model parameters.
///
/// Every public constructor rejects NaN/Inf entries and zero dimension;
/// binary operations require equal dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParam("parameter vector must have dim >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("non-finite entry at index {i}")));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "parameter vector must have dim >= 1");
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_dim(other);
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.check_dim(other);
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, k: f64) -> Self {
        ParamVector(self.0.iter().map(|a| a * k).collect())
    }

    /// In-place `self += k * other`.
    pub fn add_scaled(&mut self, k: f64, other: &Self) {
        self.check_dim(other);
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += k * b;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.check_dim(other);
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(&self, other: &Self) -> f64 {
        self.sub(other).norm()
    }

    fn check_dim(&self, other: &Self) {
        assert_eq!(self.dim(), other.dim(), "parameter vector dims must match");
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// The feasible set `{ v : ||v - center||_2 <= radius }`.
#[derive(Clone, Debug)]
pub struct BallConstraint {
    pub center: ParamVector,
    pub radius: f64,
}

impl BallConstraint {
    pub fn new(center: ParamVector, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::InvalidParam(format!("ball radius must be >= 0, got {radius}")));
        }
        Ok(BallConstraint { center, radius })
    }

    pub fn contains(&self, v: &ParamVector) -> bool {
        v.dist(&self.center) <= self.radius
    }

    /// Radial projection of a point outside the ball onto its boundary.
    pub fn project(&self, v: &ParamVector) -> ParamVector {
        let d = v.dist(&self.center);
        if d <= self.radius {
            return v.clone();
        }
        let mut out = self.center.clone();
        out.add_scaled(self.radius / d, &v.sub(&self.center));
        out
    }
}

/// Draw `dim` i.i.d. samples from `G(0, sigma^2)`.
///
/// `sigma = 0` returns the zero vector exactly; negative `sigma` is an error.
pub fn gaussian_sample(sigma: f64, dim: usize, stream: &RngStream) -> Result<ParamVector> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParam(format!("noise scale must be >= 0, got {sigma}")));
    }
    if dim == 0 {
        return Err(Error::InvalidParam("sample dim must be >= 1".into()));
    }
    if sigma == 0.0 {
        return Ok(ParamVector::zeros(dim));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParam(format!("gaussian: {e}")))?;
    let mut rng = stream.rng();
    Ok(ParamVector(normal.sample_iter(&mut rng).take(dim).collect()))
}

/// Binary codec for [`ParamVector`]: magic `FUI1`, dim as u32 little-endian,
/// then `dim` IEEE-754 doubles little-endian.
pub mod codec {
    use super::ParamVector;
    use crate::error::{Error, Result};

    pub const MAGIC: [u8; 4] = *b"FUI1";

    pub fn encode(v: &ParamVector) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * v.dim());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
        for x in v.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Strict decode: exact length, finite payload, dim >= 1.
    pub fn decode(bytes: &[u8]) -> Result<ParamVector> {
        if bytes.len() < 8 {
            return Err(Error::Codec(format!("truncated header: {} bytes", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Codec("bad magic, expected FUI1".into()));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::Codec("dim must be >= 1".into()));
        }
        let expected = 8usize
            .checked_add(dim.checked_mul(8).ok_or_else(|| Error::Codec("dim overflow".into()))?)
            .ok_or_else(|| Error::Codec("dim overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Codec(format!(
                "length mismatch: dim {dim} needs {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let mut values = Vec::with_capacity(dim);
        for (i, chunk) in bytes[8..].chunks_exact(8).enumerate() {
            let x = f64::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::Codec(format!("non-finite entry at index {i}")));
            }
            values.push(x);
        }
        Ok(ParamVector(values))
    }
}
