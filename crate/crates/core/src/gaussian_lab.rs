//! Closed-form scores on the bivariate Gaussian toy and Monte-Carlo
//! estimates of the score-matching losses built on them.
//!
//! Every estimator draws `(c, x)` the same way: `c ~ p(c)` then
//! `x ~ p(x|c)`. The unconditional loss simply ignores `c`, so two calls
//! with the same stream see the same `x` values. That pairing keeps the
//! conditional/unconditional comparisons tight without changing either
//! expectation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::{GaussianJoint, RngStream};
use crate::scalar::Real;
use crate::stats::McEstimate;

/// `∇_x log p(x|c)`.
pub fn conditional_score<T: Real>(j: &GaussianJoint<T>, x: T, c: T) -> Result<T> {
    j.validate()?;
    Ok(-(x - j.conditional_mean(c)) / j.conditional_variance())
}

/// `∇_x log p(x)` for the marginal `N(μ_x, σ_xx)`.
pub fn marginal_score<T: Real>(j: &GaussianJoint<T>, x: T) -> T {
    -(x - j.mu_x) / j.sigma_xx
}

/// `∇_x log p(c|x)`, the guidance direction.
pub fn guidance_score<T: Real>(j: &GaussianJoint<T>, x: T, c: T) -> T {
    let (m, w) = j.reverse_conditional(x);
    (c - m) / w * (j.sigma_xc / j.sigma_xx)
}

// Unchecked variant for hot loops over an already validated joint.
fn cond_score_raw<T: Real>(j: &GaussianJoint<T>, x: T, c: T) -> T {
    -(x - j.conditional_mean(c)) / j.conditional_variance()
}

/// A parametric score model `s(x, t)`.
pub trait ScoreModel<T: Real> {
    fn eval(&self, x: T, t: T) -> T;
    fn descriptor(&self) -> String;
}

/// The exact marginal score of a joint.
#[derive(Debug, Clone, Copy)]
pub struct TrueMarginal<T>(pub GaussianJoint<T>);

/// The exact conditional score for one fixed conditioning value.
#[derive(Debug, Clone, Copy)]
pub struct TrueConditional<T> {
    pub joint: GaussianJoint<T>,
    pub c: T,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroScore;

/// `s(x) = slope·x + intercept`.
#[derive(Debug, Clone, Copy)]
pub struct AffineScore<T> {
    pub slope: T,
    pub intercept: T,
}

impl<T: Real> ScoreModel<T> for TrueMarginal<T> {
    fn eval(&self, x: T, _t: T) -> T {
        marginal_score(&self.0, x)
    }
    fn descriptor(&self) -> String {
        let j = &self.0;
        format!("true-marginal(mu_x={}, sigma_xx={})", j.mu_x, j.sigma_xx)
    }
}

impl<T: Real> ScoreModel<T> for TrueConditional<T> {
    fn eval(&self, x: T, _t: T) -> T {
        cond_score_raw(&self.joint, x, self.c)
    }
    fn descriptor(&self) -> String {
        format!("true-conditional(c={})", self.c)
    }
}

impl<T: Real> ScoreModel<T> for ZeroScore {
    fn eval(&self, _x: T, _t: T) -> T {
        T::zero()
    }
    fn descriptor(&self) -> String {
        "zero".into()
    }
}

impl<T: Real> ScoreModel<T> for AffineScore<T> {
    fn eval(&self, x: T, _t: T) -> T {
        self.slope * x + self.intercept
    }
    fn descriptor(&self) -> String {
        format!("affine(slope={}, intercept={})", self.slope, self.intercept)
    }
}

/// Expanded score-matching loss `E‖∇log p‖² + E‖s‖² − 2E⟨s, ∇log p⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub true_score_norm: f64,
    pub learned_score_norm: f64,
    pub cross_term: f64,
    pub total: f64,
    /// Standard error of `total`, from the per-sample squared residuals.
    pub std_error: f64,
    pub n_samples: usize,
}

impl LossBreakdown {
    pub fn as_estimate(&self) -> McEstimate {
        McEstimate {
            estimate: self.total,
            std_error: self.std_error,
            n_samples: self.n_samples,
        }
    }
}

fn require_samples(n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    Ok(())
}

/// Monte-Carlo score-matching loss of `s` against the marginal score
/// (`conditional = false`) or the conditional score (`conditional = true`).
pub fn score_matching_loss<T: Real>(
    j: &GaussianJoint<T>,
    s: &dyn ScoreModel<T>,
    conditional: bool,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<LossBreakdown> {
    j.validate()?;
    require_samples(n_samples)?;
    let t = T::one();
    let (mut tt, mut ll, mut tl) = (0.0, 0.0, 0.0);
    let mut residuals = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let (c, x) = j.sample(rng);
        let target = if conditional {
            cond_score_raw(j, x, c)
        } else {
            marginal_score(j, x)
        }
        .as_f64();
        let learned = s.eval(x, t).as_f64();
        tt += target * target;
        ll += learned * learned;
        tl += target * learned;
        residuals.push((target - learned) * (target - learned));
    }
    let n = n_samples as f64;
    let (true_score_norm, learned_score_norm, cross_term) = (tt / n, ll / n, tl / n);
    Ok(LossBreakdown {
        true_score_norm,
        learned_score_norm,
        cross_term,
        total: true_score_norm + learned_score_norm - 2.0 * cross_term,
        std_error: McEstimate::from_samples(&residuals).std_error,
        n_samples,
    })
}

/// `E_x[E_{c|x}‖∇log p(x|c)‖² − ‖∇log p(x)‖²]` for a single time slice.
pub fn epsilon_c<T: Real>(j: &GaussianJoint<T>, n_samples: usize, rng: &mut RngStream) -> Result<McEstimate> {
    j.validate()?;
    require_samples(n_samples)?;
    let xs: Vec<f64> = (0..n_samples)
        .map(|_| {
            let (c, x) = j.sample(rng);
            let cs = cond_score_raw(j, x, c).as_f64();
            let ms = marginal_score(j, x).as_f64();
            cs * cs - ms * ms
        })
        .collect();
    Ok(McEstimate::from_samples(&xs))
}

/// `E_{c,x}‖∇log p(x|c)‖²`.
pub fn epsilon_bar_c<T: Real>(j: &GaussianJoint<T>, n_samples: usize, rng: &mut RngStream) -> Result<McEstimate> {
    j.validate()?;
    require_samples(n_samples)?;
    let xs: Vec<f64> = (0..n_samples)
        .map(|_| {
            let (c, x) = j.sample(rng);
            let cs = cond_score_raw(j, x, c).as_f64();
            cs * cs
        })
        .collect();
    Ok(McEstimate::from_samples(&xs))
}

/// `E‖∇log p(x)‖²`, the marginal Fisher information estimate.
pub fn marginal_fisher<T: Real>(j: &GaussianJoint<T>, n_samples: usize, rng: &mut RngStream) -> Result<McEstimate> {
    j.validate()?;
    require_samples(n_samples)?;
    let xs: Vec<f64> = (0..n_samples)
        .map(|_| {
            let (_, x) = j.sample(rng);
            let ms = marginal_score(j, x).as_f64();
            ms * ms
        })
        .collect();
    Ok(McEstimate::from_samples(&xs))
}

/// `ε_c` averaged over time slices: the joint is diffused to each `ᾱ_t`
/// and the per-slice estimates are averaged with equal weight.
pub fn epsilon_c_time_averaged<T: Real>(
    j: &GaussianJoint<T>,
    alpha_bars: &[T],
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    if alpha_bars.is_empty() {
        return Err(invalid("alpha_bars", "need at least one time slice"));
    }
    let mut est = 0.0;
    let mut var = 0.0;
    for (t, &ab) in alpha_bars.iter().enumerate() {
        let jt = j.diffused(ab)?;
        let e = epsilon_c(&jt, n_samples, &mut rng.split(t as u64))?;
        est += e.estimate;
        var += e.std_error * e.std_error;
    }
    let k = alpha_bars.len() as f64;
    Ok(McEstimate {
        estimate: est / k,
        std_error: var.sqrt() / k,
        n_samples: n_samples * alpha_bars.len(),
    })
}

/// Closed forms on the Gaussian toy: `ε_c = 1/v − 1/σ_xx`, `ε̄_c = 1/v` with `v` the conditional variance.
pub mod analytic {
    use super::*;

    pub fn epsilon_bar_c<T: Real>(j: &GaussianJoint<T>) -> f64 {
        1.0 / j.conditional_variance().as_f64()
    }

    pub fn marginal_fisher<T: Real>(j: &GaussianJoint<T>) -> f64 {
        1.0 / j.sigma_xx.as_f64()
    }

    pub fn epsilon_c<T: Real>(j: &GaussianJoint<T>) -> f64 {
        epsilon_bar_c(j) - marginal_fisher(j)
    }
}

/// Both sides of the unconditional-vs-conditional loss comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    pub holds: bool,
}

/// Compares the unconditional loss (`lhs`) with the conditional loss
/// (`rhs`); `holds` allows three pooled standard errors of slack.
pub fn verify_upper_bound<T: Real>(
    j: &GaussianJoint<T>,
    s: &dyn ScoreModel<T>,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<UpperBoundCheck> {
    // Same stream for both sides: common random numbers.
    let lhs = score_matching_loss(j, s, false, n_samples, &mut rng.clone())?;
    let rhs = score_matching_loss(j, s, true, n_samples, rng)?;
    let pooled = lhs.as_estimate().pooled_se(&rhs.as_estimate());
    Ok(UpperBoundCheck {
        lhs: lhs.total,
        rhs: rhs.total,
        lhs_se: lhs.std_error,
        rhs_se: rhs.std_error,
        holds: lhs.total <= rhs.total + 3.0 * pooled,
    })
}

/// Conditional-energy excess next to the guidance-term energy.
///
/// `rhs` keeps the `σ_t²` factor inside the norm, `E‖σ_t²∇log p(c|x)‖²`;
/// `rhs_unscaled` drops it, `E‖∇log p(c|x)‖²`. The two coincide at `σ_t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlTermReport {
    pub sigma_t: f64,
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    pub rhs_unscaled: McEstimate,
}

impl ControlTermReport {
    pub fn pooled_se(&self) -> f64 {
        self.lhs.pooled_se(&self.rhs)
    }
}

pub fn control_term_identity<T: Real>(
    j: &GaussianJoint<T>,
    sigma_t: T,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<ControlTermReport> {
    j.validate()?;
    require_samples(n_samples)?;
    if !(sigma_t > T::zero()) {
        return Err(invalid("sigma_t", "must be positive"));
    }
    let s4 = sigma_t.as_f64().powi(4);
    let mut lhs = Vec::with_capacity(n_samples);
    let mut rhs = Vec::with_capacity(n_samples);
    let mut raw = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let (c, x) = j.sample(rng);
        let cs = cond_score_raw(j, x, c).as_f64();
        let ms = marginal_score(j, x).as_f64();
        let g = guidance_score(j, x, c).as_f64();
        lhs.push(cs * cs - ms * ms);
        raw.push(g * g);
        rhs.push(s4 * g * g);
    }
    Ok(ControlTermReport {
        sigma_t: sigma_t.as_f64(),
        lhs: McEstimate::from_samples(&lhs),
        rhs: McEstimate::from_samples(&rhs),
        rhs_unscaled: McEstimate::from_samples(&raw),
    })
}
