//! Empirical measures, the bivariate Gaussian joint, deterministic random
//! streams and small dense linear algebra.

pub mod linalg;
pub mod rng;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{mass_tolerance, Real};

pub use linalg::{LinearMap, Matrix};
pub use rng::{RngStream, GENERATOR_ID};

/// Weighted particle cloud in `R^d`.
///
/// Weights are non-negative and sum to one; every point has the same
/// dimension `d ≥ 1`. Serializes as `{d, points, weights}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure<T>", into = "RawMeasure<T>")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct EmpiricalMeasure<T> {
    dim: usize,
    points: Vec<Vec<T>>,
    weights: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
struct RawMeasure<T> {
    d: usize,
    points: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Real> TryFrom<RawMeasure<T>> for EmpiricalMeasure<T> {
    type Error = Error;

    fn try_from(raw: RawMeasure<T>) -> Result<Self> {
        let m = EmpiricalMeasure::new(raw.points, raw.weights)?;
        if m.dim != raw.d {
            return Err(Error::DimensionMismatch {
                expected: raw.d,
                got: m.dim,
            });
        }
        Ok(m)
    }
}

impl<T: Real> From<EmpiricalMeasure<T>> for RawMeasure<T> {
    fn from(m: EmpiricalMeasure<T>) -> Self {
        RawMeasure {
            d: m.dim,
            points: m.points,
            weights: m.weights,
        }
    }
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn new(points: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        let dim = check_points(&points)?;
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let sum: T = weights.iter().copied().sum();
        let valid = weights.iter().all(|w| w.is_finite() && *w >= T::zero());
        if !valid || (sum - T::one()).abs() > mass_tolerance::<T>() {
            return Err(Error::InvalidWeights { sum: sum.as_f64() });
        }
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    /// Uniform weights `1/k` on `k` points.
    pub fn uniform(points: Vec<Vec<T>>) -> Result<Self> {
        check_points(&points)?;
        let w = T::one() / T::from_count(points.len());
        let weights = vec![w; points.len()];
        Self::new(points, weights)
    }

    /// Rescales non-negative weights to unit mass.
    pub fn normalized(points: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        let sum: T = weights.iter().copied().sum();
        if !(sum > T::zero()) || !sum.is_finite() {
            return Err(Error::InvalidWeights { sum: sum.as_f64() });
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Self::new(points, weights)
    }

    /// Uniform measure on scalar values, as points in `R^1`.
    pub fn from_scalars(values: &[T]) -> Result<Self> {
        Self::uniform(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn dirac(point: Vec<T>) -> Result<Self> {
        Self::new(vec![point], vec![T::one()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Same weights on new support. Used by particle updates.
    pub fn with_points(&self, points: Vec<Vec<T>>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::DimensionMismatch {
                expected: self.points.len(),
                got: points.len(),
            });
        }
        Self::new(points, self.weights.clone())
    }

    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            m.iter_mut().zip(p).for_each(|(a, &x)| *a += w * x);
        }
        m
    }

    /// First coordinate of every point, for one-dimensional measures.
    pub fn scalars(&self) -> Vec<T> {
        self.points.iter().map(|p| p[0]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))
    }
}

fn check_points<T: Real>(points: &[Vec<T>]) -> Result<usize> {
    let first = points.first().ok_or(Error::Empty("measure support"))?;
    let dim = first.len();
    if dim == 0 {
        return Err(invalid("points", "dimension must be at least 1"));
    }
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measure support"));
        }
    }
    Ok(dim)
}

/// `Σ_i w_i ‖p_i‖²`.
pub fn second_moment<T: Real>(m: &EmpiricalMeasure<T>) -> T {
    m.points
        .iter()
        .zip(&m.weights)
        .map(|(p, &w)| w * linalg::norm_sq(p))
        .sum()
}

/// Bivariate normal law of `(x, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct GaussianJoint<T> {
    pub mu_x: T,
    pub mu_c: T,
    pub sigma_xx: T,
    pub sigma_cc: T,
    pub sigma_xc: T,
}

impl<T: Real> GaussianJoint<T> {
    /// Rejects non-positive variances and determinants at or below `1e-12`.
    pub fn new(mu_x: T, mu_c: T, sigma_xx: T, sigma_cc: T, sigma_xc: T) -> Result<Self> {
        let j = Self {
            mu_x,
            mu_c,
            sigma_xx,
            sigma_cc,
            sigma_xc,
        };
        j.validate()?;
        Ok(j)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.mu_x, self.mu_c, self.sigma_xx, self.sigma_cc, self.sigma_xc];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian joint"));
        }
        let det = self.determinant();
        if !(self.sigma_xx > T::zero()) || !(self.sigma_cc > T::zero()) || det <= T::lit(1e-12) {
            return Err(Error::NotPositiveDefinite { det: det.as_f64() });
        }
        Ok(())
    }

    pub fn determinant(&self) -> T {
        self.sigma_xx * self.sigma_cc - self.sigma_xc * self.sigma_xc
    }

    /// Regression coefficient of `x` on `c`.
    pub fn gain(&self) -> T {
        self.sigma_xc / self.sigma_cc
    }

    pub fn conditional_mean(&self, c: T) -> T {
        self.mu_x + self.gain() * (c - self.mu_c)
    }

    /// `σ_xx − σ_xc²/σ_cc`; independent of the conditioning value.
    pub fn conditional_variance(&self) -> T {
        self.sigma_xx - self.sigma_xc * self.sigma_xc / self.sigma_cc
    }

    /// Law of `c` given `x`: mean and variance.
    pub fn reverse_conditional(&self, x: T) -> (T, T) {
        let k = self.sigma_xc / self.sigma_xx;
        (
            self.mu_c + k * (x - self.mu_x),
            self.sigma_cc - self.sigma_xc * self.sigma_xc / self.sigma_xx,
        )
    }

    /// Joint of `(x_t, c)` where `x_t = √ᾱ·x + √(1−ᾱ)·ε`.
    pub fn diffused(&self, alpha_bar: T) -> Result<Self> {
        let s = alpha_bar.sqrt();
        Self::new(
            s * self.mu_x,
            self.mu_c,
            alpha_bar * self.sigma_xx + (T::one() - alpha_bar),
            self.sigma_cc,
            s * self.sigma_xc,
        )
    }

    /// Draws `(c, x)` with `c ~ p(c)` then `x ~ p(x|c)`.
    pub fn sample(&self, rng: &mut RngStream) -> (T, T) {
        let c = self.mu_c.as_f64() + self.sigma_cc.as_f64().sqrt() * rng.standard_normal();
        let c = T::lit(c);
        let x = self.conditional_mean(c).as_f64()
            + self.conditional_variance().as_f64().sqrt() * rng.standard_normal();
        (c, T::lit(x))
    }

    /// Density of `x` given `c`.
    pub fn conditional_density(&self, x: T, c: T) -> T {
        let v = self.conditional_variance();
        let d = x - self.conditional_mean(c);
        (-(d * d) / (T::lit(2.0) * v)).exp() / (T::lit(2.0) * T::PI() * v).sqrt()
    }

    /// `∂/∂x p(x|c)`.
    pub fn conditional_density_gradient(&self, x: T, c: T) -> T {
        let v = self.conditional_variance();
        -(x - self.conditional_mean(c)) / v * self.conditional_density(x, c)
    }
}

/// Mean and variance of `p(x|c)`.
pub fn gaussian_conditional<T: Real>(j: &GaussianJoint<T>, c: T) -> Result<(T, T)> {
    j.validate()?;
    Ok((j.conditional_mean(c), j.conditional_variance()))
}
