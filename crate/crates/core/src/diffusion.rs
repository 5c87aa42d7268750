//! Noise schedules, forward corruption, guided reverse steps and
//! deterministic denoising trajectories.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian_lab::guidance_score;
use crate::measures::linalg::{norm, norm_sq, sub};
use crate::measures::{GaussianJoint, RngStream};
use crate::scalar::Real;

/// Variance schedule `β_1..β_T` with cumulative products `ᾱ_0 = 1, ᾱ_t = Π(1 − β_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alpha_bars: Vec<T>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

impl<T: Real> NoiseSchedule<T> {
    /// Requires every `β_t ∈ (0, 1)`; `ᾱ` is then strictly decreasing.
    pub fn from_betas(betas: Vec<T>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Empty("betas"));
        }
        if betas.iter().any(|&b| !(b > T::zero() && b < T::one())) {
            return Err(invalid("betas", "every beta must lie in (0, 1)"));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(T::one());
        let mut acc = T::one();
        for &b in &betas {
            acc *= T::one() - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Cosine schedule with offset `s = 0.008` and `β_t ≤ 0.999`.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(invalid("T", "cosine schedule needs at least 2 steps"));
        }
        let s = COSINE_OFFSET;
        let f = |t: usize| {
            let u = ((t as f64 / steps as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
            u.cos().powi(2)
        };
        let f0 = f(0);
        let betas = (1..=steps)
            .map(|t| {
                let prev = f(t - 1) / f0;
                let cur = f(t) / f0;
                T::lit((1.0 - cur / prev).clamp(0.0, MAX_BETA))
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Linearly spaced betas from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: T, beta_end: T) -> Result<Self> {
        if steps < 1 {
            return Err(invalid("T", "need at least one step"));
        }
        let betas = (0..steps)
            .map(|i| {
                let frac = if steps == 1 {
                    T::zero()
                } else {
                    T::from_count(i) / T::from_count(steps - 1)
                };
                beta_start + (beta_end - beta_start) * frac
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    /// DDPM posterior variance `β_t(1 − ᾱ_{t−1})/(1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> T {
        self.beta(t) * (T::one() - self.alpha_bar(t - 1)) / (T::one() - self.alpha_bar(t))
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(invalid("t", format!("must lie in 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`, drawn in closed form.
pub fn forward_sample<T: Real>(sched: &NoiseSchedule<T>, x0: &[T], t: usize, rng: &mut RngStream) -> Result<Vec<T>> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (T::one() - ab).sqrt());
    Ok(x0.iter().map(|&x| a * x + s * T::lit(rng.standard_normal())).collect())
}

/// One forward kernel `q(x_t | x_{t−1}) = N(√(1−β_t)·x_{t−1}, β_t I)`.
pub fn forward_step<T: Real>(sched: &NoiseSchedule<T>, x_prev: &[T], t: usize, rng: &mut RngStream) -> Result<Vec<T>> {
    sched.check_step(t)?;
    let b = sched.beta(t);
    let (a, s) = ((T::one() - b).sqrt(), b.sqrt());
    Ok(x_prev.iter().map(|&x| a * x + s * T::lit(rng.standard_normal())).collect())
}

/// Variance used by the stochastic reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub enum ReverseVariance<T> {
    /// `β_t(1 − ᾱ_{t−1})/(1 − ᾱ_t)`.
    Posterior,
    /// A fixed `σ²` at every step.
    Constant(T),
}

impl<T: Real> ReverseVariance<T> {
    pub fn at(&self, sched: &NoiseSchedule<T>, t: usize) -> T {
        match *self {
            ReverseVariance::Posterior => sched.posterior_variance(t),
            ReverseVariance::Constant(v) => v,
        }
    }
}

/// `E[x_0 | x_t]` when `x_0 ~ N(mean, var)`.
fn posterior_x0<T: Real>(mean: T, var: T, alpha_bar: T, x_t: T) -> T {
    let a = alpha_bar.sqrt();
    mean + var * a / (alpha_bar * var + T::one() - alpha_bar) * (x_t - a * mean)
}

/// Reverse-process mean `μ(x_t)` on the Gaussian toy, using the optimal
/// `x_0` predictor under the `x`-marginal of `j`.
pub fn reverse_mean<T: Real>(sched: &NoiseSchedule<T>, j: &GaussianJoint<T>, x_t: T, t: usize) -> Result<T> {
    sched.check_step(t)?;
    let (ab, ab_prev, b) = (sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.beta(t));
    let x0 = posterior_x0(j.mu_x, j.sigma_xx, ab, x_t);
    let one = T::one();
    let c0 = ab_prev.sqrt() * b / (one - ab);
    let ct = (one - b).sqrt() * (one - ab_prev) / (one - ab);
    Ok(c0 * x0 + ct * x_t)
}

/// One stochastic reverse step `x_{t−1} = μ(x_t) + σ_t²∇log p_t(c|x_t) + σ_t ε`.
///
/// With `c = None` the guidance term is dropped. The noise draw happens in
/// both cases, so guided and unguided steps on cloned streams share `ε`.
pub fn reverse_step<T: Real>(
    sched: &NoiseSchedule<T>,
    j: &GaussianJoint<T>,
    x_t: T,
    c: Option<T>,
    t: usize,
    variance: ReverseVariance<T>,
    rng: &mut RngStream,
) -> Result<T> {
    let mu = reverse_mean(sched, j, x_t, t)?;
    let var = variance.at(sched, t);
    if var < T::zero() {
        return Err(invalid("variance", "must be non-negative"));
    }
    let guidance = match c {
        Some(c) => {
            let jt = j.diffused(sched.alpha_bar(t))?;
            var * guidance_score(&jt, x_t, c)
        }
        None => T::zero(),
    };
    let eps = T::lit(rng.standard_normal());
    Ok(mu + guidance + var.sqrt() * eps)
}

pub fn guided_reverse_step<T: Real>(
    sched: &NoiseSchedule<T>,
    j: &GaussianJoint<T>,
    x_t: T,
    c: T,
    t: usize,
    variance: ReverseVariance<T>,
    rng: &mut RngStream,
) -> Result<T> {
    reverse_step(sched, j, x_t, Some(c), t, variance, rng)
}

/// A denoising step `z_{t−1} = D_t(z_t, c)`.
///
/// Implementations see only the current state, the condition and the step
/// index, which makes every trajectory Markov by construction.
pub trait Denoiser<T: Real> {
    fn step(&self, z: &[T], c: &[T], t: usize) -> Vec<T>;

    /// Clean target the trajectory is measured against, if the denoiser knows one.
    fn reference(&self, _c: &[T]) -> Option<Vec<T>> {
        None
    }
}

impl<T: Real, F> Denoiser<T> for F
where
    F: Fn(&[T], &[T], usize) -> Vec<T>,
{
    fn step(&self, z: &[T], c: &[T], t: usize) -> Vec<T> {
        self(z, c, t)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl<T: Real> Denoiser<T> for IdentityDenoiser {
    fn step(&self, z: &[T], _c: &[T], _t: usize) -> Vec<T> {
        z.to_vec()
    }
}

/// Deterministic DDIM (`η = 0`) step with the exact `x_0` predictor for
/// data `x_0 | c ~ N(m(c), v·I)`, where `m(c) = offset + gain·c`
/// componentwise. A one-dimensional `c` is broadcast over all latent
/// coordinates.
#[derive(Debug, Clone)]
pub struct GaussianDdimDenoiser<T> {
    pub schedule: NoiseSchedule<T>,
    pub gain: T,
    pub offset: T,
    pub variance: T,
}

impl<T: Real> GaussianDdimDenoiser<T> {
    /// Conditional law of `x` given `c` from a bivariate joint.
    pub fn from_joint(schedule: NoiseSchedule<T>, j: &GaussianJoint<T>) -> Self {
        Self {
            schedule,
            gain: j.gain(),
            offset: j.mu_x - j.gain() * j.mu_c,
            variance: j.conditional_variance(),
        }
    }

    pub fn conditional_mean(&self, c: &[T], dim: usize) -> Vec<T> {
        (0..dim)
            .map(|i| {
                let ci = if c.len() == 1 { c[0] } else { c[i] };
                self.offset + self.gain * ci
            })
            .collect()
    }
}

impl<T: Real> Denoiser<T> for GaussianDdimDenoiser<T> {
    fn step(&self, z: &[T], c: &[T], t: usize) -> Vec<T> {
        let ab = self.schedule.alpha_bar(t);
        let ab_prev = self.schedule.alpha_bar(t - 1);
        let m = self.conditional_mean(c, z.len());
        let one = T::one();
        z.iter()
            .zip(&m)
            .map(|(&zi, &mi)| {
                let x0 = posterior_x0(mi, self.variance, ab, zi);
                let eps = (zi - ab.sqrt() * x0) / (one - ab).sqrt();
                ab_prev.sqrt() * x0 + (one - ab_prev).sqrt() * eps
            })
            .collect()
    }

    fn reference(&self, c: &[T]) -> Option<Vec<T>> {
        let dim = if c.len() == 1 { 1 } else { c.len() };
        Some(self.conditional_mean(c, dim))
    }
}

/// SNR and noise intensity of one trajectory state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Time index of the measured state.
    pub t: usize,
    /// `+∞` when the residual vanishes.
    pub snr: f64,
    pub noise_intensity: f64,
}

/// States `z_T, …, z_0` of one denoising run and per-step diagnostics for
/// `z_{T−1}, …, z_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Trajectory<T> {
    pub states: Vec<Vec<T>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub reference: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("trajectory has at least one state")
    }

    /// CSV with columns `t,snr,noise_intensity`; both are fixed conventions
    /// (`‖ref‖²/‖z_t − ref‖²` and `‖z_t − ref‖/√d`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,snr,noise_intensity\n");
        for d in &self.diagnostics {
            let _ = writeln!(out, "{},{},{}", d.t, fmt_f64(d.snr), fmt_f64(d.noise_intensity));
        }
        out
    }

    /// JSON with diagnostics, plus full states when `dump_states` is set.
    pub fn to_json(&self, dump_states: bool) -> Result<String> {
        let diags: Vec<serde_json::Value> = self
            .diagnostics
            .iter()
            .map(|d| {
                serde_json::json!({
                    "t": d.t,
                    "snr": if d.snr.is_finite() { serde_json::json!(d.snr) } else { serde_json::Value::Null },
                    "noise_intensity": d.noise_intensity,
                })
            })
            .collect();
        let mut v = serde_json::json!({
            "convention": "snr = |ref|^2 / |z_t - ref|^2 (null = infinite), noise_intensity = |z_t - ref| / sqrt(d)",
            "reference": self.reference.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
            "diagnostics": diags,
        });
        if dump_states {
            let states: Vec<Vec<f64>> = self
                .states
                .iter()
                .map(|s| s.iter().map(|x| x.as_f64()).collect())
                .collect();
            v["states"] = serde_json::json!(states);
        }
        serde_json::to_string_pretty(&v).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Formats with 17 significant digits; `inf`/`-inf`/`nan` spelled out.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{:.16e}", x)
    }
}

const RESIDUAL_FLOOR: f64 = 1e-15;

/// `(‖ref‖²/‖z_t − ref‖², ‖z_t − ref‖/√d)`; SNR is `+∞` when the residual is below `1e-15`.
pub fn snr_and_noise<T: Real>(z_t: &[T], z0_ref: &[T]) -> Result<(f64, f64)> {
    if z_t.len() != z0_ref.len() {
        return Err(Error::DimensionMismatch {
            expected: z0_ref.len(),
            got: z_t.len(),
        });
    }
    if z_t.is_empty() {
        return Err(Error::Empty("state"));
    }
    let r = sub(z_t, z0_ref);
    let rn = norm(&r).as_f64();
    let noise = rn / (z_t.len() as f64).sqrt();
    let snr = if rn < RESIDUAL_FLOOR {
        f64::INFINITY
    } else {
        norm_sq(z0_ref).as_f64() / (rn * rn)
    };
    Ok((snr, noise))
}

/// Runs `z_T → z_0` through `denoiser` under condition `c`.
///
/// Diagnostics are measured against `denoiser.reference(c)` when available
/// and against the final state otherwise.
pub fn ddim_trajectory<T: Real>(
    sched: &NoiseSchedule<T>,
    denoiser: &dyn Denoiser<T>,
    c: &[T],
    z_t: &[T],
) -> Result<Trajectory<T>> {
    let steps = sched.steps();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(z_t.to_vec());
    for t in (1..=steps).rev() {
        let next = denoiser.step(states.last().expect("non-empty"), c, t);
        if next.len() != z_t.len() {
            return Err(Error::DimensionMismatch {
                expected: z_t.len(),
                got: next.len(),
            });
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denoising trajectory"));
        }
        states.push(next);
    }
    let reference = match denoiser.reference(c) {
        Some(r) if r.len() == z_t.len() => r,
        _ => states.last().expect("non-empty").clone(),
    };
    let diagnostics = states
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, s)| {
            let (snr, noise_intensity) = snr_and_noise(s, &reference)?;
            Ok(StepDiagnostics {
                t: steps - k,
                snr,
                noise_intensity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        states,
        diagnostics,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{energy_test_1d, McEstimate};

    #[test]
    fn cosine_schedule_shape() {
        let s = NoiseSchedule::<f64>::cosine(1000).unwrap();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.betas().iter().all(|&b| b > 0.0 && b <= 0.999));

        // Oracle: evaluate the cosine formula directly at T = 10.
        let s10 = NoiseSchedule::<f64>::cosine(10).unwrap();
        let f = |t: f64| (((t / 10.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        for t in 1..10 {
            assert!((s10.alpha_bar(t) - f(t as f64) / f(0.0)).abs() < 1e-12);
        }
        assert!(s10.alpha_bar(10) < 0.01);
        assert!(NoiseSchedule::<f64>::cosine(1).is_err());
    }

    #[test]
    fn from_betas_validates() {
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, 0.5]).is_err());
        assert!(NoiseSchedule::<f64>::from_betas(vec![]).is_err());
    }

    #[test]
    fn forward_no_noise_limit() {
        let s = NoiseSchedule::from_betas(vec![1e-14f64, 0.5]).unwrap();
        let x = forward_sample(&s, &[3.0, -1.0], 1, &mut RngStream::new(0, 0)).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-6 && (x[1] + 1.0).abs() < 1e-6);
        assert!(forward_sample(&s, &[0.0], 3, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn forward_variance_from_zero() {
        let s = NoiseSchedule::<f64>::cosine(50).unwrap();
        let t = 20;
        let mut rng = RngStream::new(10, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| forward_sample(&s, &[0.0], t, &mut rng).unwrap()[0])
            .collect();
        let (_, var) = crate::stats::mean_var(&xs);
        let target = 1.0 - s.alpha_bar(t);
        assert!((var - target).abs() / target < 0.02);
    }

    #[test]
    fn iterated_kernel_matches_closed_form() {
        let mut meta = RngStream::new(99, 0);
        for k in 0..5 {
            let b0 = 0.01 + 0.05 * meta.uniform();
            let b1 = b0 + 0.2 * meta.uniform();
            let s = NoiseSchedule::linear(12, b0, b1).unwrap();
            let x0 = 2.0 * meta.standard_normal();
            let t = 8;
            let mut r1 = RngStream::new(500 + k, 1);
            let mut r2 = RngStream::new(500 + k, 2);
            let closed: Vec<f64> = (0..600).map(|_| forward_sample(&s, &[x0], t, &mut r1).unwrap()[0]).collect();
            let iterated: Vec<f64> = (0..600)
                .map(|_| {
                    let mut x = vec![x0];
                    for tt in 1..=t {
                        x = forward_step(&s, &x, tt, &mut r2).unwrap();
                    }
                    x[0]
                })
                .collect();
            let p = energy_test_1d(&closed, &iterated, 300, &mut RngStream::new(7, k));
            assert!(p > 0.01, "schedule {k}: p = {p}");
        }
    }

    fn toy() -> (NoiseSchedule<f64>, GaussianJoint<f64>) {
        (
            NoiseSchedule::cosine(100).unwrap(),
            GaussianJoint::new(0.5, 0.0, 1.0, 1.0, 0.6).unwrap(),
        )
    }

    #[test]
    fn zero_guidance_matches_unguided_sample_for_sample() {
        let (s, _) = toy();
        let indep = GaussianJoint::new(0.5, 0.0, 1.0, 1.0, 0.0).unwrap();
        let rng = RngStream::new(3, 3);
        for t in [1, 10, 50, 100] {
            let g = guided_reverse_step(&s, &indep, 0.3, 2.0, t, ReverseVariance::Posterior, &mut rng.clone()).unwrap();
            let u = reverse_step(&s, &indep, 0.3, None, t, ReverseVariance::Posterior, &mut rng.clone()).unwrap();
            assert_eq!(g.to_bits(), u.to_bits());
        }
    }

    #[test]
    fn vanishing_variance_is_deterministic() {
        let (s, j) = toy();
        let a = guided_reverse_step(&s, &j, 0.3, 1.0, 40, ReverseVariance::Constant(0.0), &mut RngStream::new(1, 0)).unwrap();
        let b = guided_reverse_step(&s, &j, 0.3, 1.0, 40, ReverseVariance::Constant(0.0), &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, reverse_mean(&s, &j, 0.3, 40).unwrap());
        // Posterior variance vanishes at t = 1.
        assert_eq!(s.posterior_variance(1), 0.0);
    }

    #[test]
    fn guidance_mean_shift() {
        let (s, j) = toy();
        let (x_t, c, t) = (0.4, 1.5, 30);
        let var = s.posterior_variance(t);
        let jt = j.diffused(s.alpha_bar(t)).unwrap();
        let expected = var * guidance_score(&jt, x_t, c);
        let mut r1 = RngStream::new(4, 0);
        let mut r2 = RngStream::new(4, 1);
        let diffs: Vec<f64> = (0..100_000)
            .map(|_| {
                let g = guided_reverse_step(&s, &j, x_t, c, t, ReverseVariance::Posterior, &mut r1).unwrap();
                let u = reverse_step(&s, &j, x_t, None, t, ReverseVariance::Posterior, &mut r2).unwrap();
                g - u
            })
            .collect();
        let e = McEstimate::from_samples(&diffs);
        assert!((e.estimate - expected).abs() < 4.0 * e.std_error, "{} vs {}", e.estimate, expected);
    }

    #[test]
    fn identity_trajectory_is_constant() {
        let s = NoiseSchedule::<f64>::cosine(20).unwrap();
        let tr = ddim_trajectory(&s, &IdentityDenoiser, &[0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(tr.states.len(), 21);
        assert_eq!(tr.diagnostics.len(), 20);
        assert!(tr.states.iter().all(|z| z == &vec![1.0, 2.0]));
        assert!(tr.diagnostics.iter().all(|d| d.snr.is_infinite() && d.noise_intensity == 0.0));
    }

    #[test]
    fn gaussian_denoiser_curves_are_monotone() {
        let s = NoiseSchedule::<f64>::cosine(200).unwrap();
        let j = GaussianJoint::new(1.0, 0.0, 1.0, 1.0, 0.8).unwrap();
        let den = GaussianDdimDenoiser::from_joint(s.clone(), &j);
        let tr = ddim_trajectory(&s, &den, &[1.5], &[0.0]).unwrap();
        for w in tr.diagnostics.windows(2) {
            assert!(w[1].snr >= w[0].snr);
            assert!(w[1].noise_intensity <= w[0].noise_intensity);
        }
        let again = ddim_trajectory(&s, &den, &[1.5], &[0.0]).unwrap();
        assert_eq!(tr, again);
    }

    #[test]
    fn snr_examples() {
        let (snr, ni) = snr_and_noise(&[2.0f64], &[2.0]).unwrap();
        assert!(snr.is_infinite() && ni == 0.0);
        let (snr, ni) = snr_and_noise(&[3.0f64], &[2.0]).unwrap();
        assert_eq!((snr, ni), (4.0, 1.0));
        assert!(snr_and_noise(&[1.0f64], &[1.0, 2.0]).is_err());

        let v: f64 = 0.3;
        let mut rng = RngStream::new(6, 0);
        let d = 100_000;
        let z0: Vec<f64> = vec![1.0; d];
        let zt: Vec<f64> = z0.iter().map(|x| x + v.sqrt() * rng.standard_normal()).collect();
        let (_, ni) = snr_and_noise(&zt, &z0).unwrap();
        assert!((ni - v.sqrt()).abs() < 0.01 * v.sqrt());
    }

    #[test]
    fn csv_uses_seventeen_digits() {
        let s = NoiseSchedule::<f64>::cosine(3).unwrap();
        let j = GaussianJoint::new(1.0, 0.0, 1.0, 1.0, 0.5).unwrap();
        let den = GaussianDdimDenoiser::from_joint(s.clone(), &j);
        let tr = ddim_trajectory(&s, &den, &[0.5], &[0.1]).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,snr,noise_intensity\n2,"));
        let field = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap();
        let mantissa = field.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
        assert!(tr.to_json(true).unwrap().contains("\"states\""));
        assert!(!tr.to_json(false).unwrap().contains("\"states\""));
    }
}
