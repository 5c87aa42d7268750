//! Condition optimization loop: denoise under the current conditions, match
//! the generated latents to reference latents with entropic transport, and
//! move each condition along the clipped transport-plus-alignment gradient.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffusion::{ddim_trajectory, fmt_f64, Denoiser, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::measures::linalg::{norm, sq_dist, LinearMap, Matrix};
use crate::measures::{EmpiricalMeasure, RngStream};
use crate::ot::{adaptive_epsilon, sinkhorn, CostMatrix};
use crate::scalar::Real;
use crate::wgf::{w2_to_target, EpsilonPolicy, TransportPolicy};

/// Parameters of [`aco_run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct AcoConfig<T> {
    /// Outer iterations `K`.
    pub k_outer: usize,
    /// Diffusion steps `T`.
    pub t_steps: usize,
    /// Weight of `‖c_m − T⁻¹(z*_n)‖²` in the cost.
    pub lambda_cost: T,
    /// Weight of the Jacobian penalty in `φ`.
    pub alpha: T,
    pub eps_min: T,
    pub eps_max: T,
    pub k_sink: usize,
    pub sink_tol: f64,
    pub eta0: T,
    pub k_warm: usize,
    pub clip_tau: T,
    /// EMA mixing rate `ν ∈ (0, 1]`.
    pub nu: T,
    pub buffer_b: usize,
    /// Weight of `‖z_m − z*_n‖²` in the cost.
    pub latent_weight: T,
    /// Weight of the alignment gradient `∇φ`.
    pub align_weight: T,
}

impl<T: Real> Default for AcoConfig<T> {
    fn default() -> Self {
        Self {
            k_outer: 100,
            t_steps: 50,
            lambda_cost: T::one(),
            alpha: T::zero(),
            eps_min: T::lit(0.01),
            eps_max: T::lit(1.0),
            k_sink: 200,
            sink_tol: 1e-6,
            eta0: T::lit(0.1),
            k_warm: 100,
            clip_tau: T::lit(10.0),
            nu: T::lit(0.1),
            buffer_b: 2048,
            latent_weight: T::one(),
            align_weight: T::one(),
        }
    }
}

impl<T: Real> AcoConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_min", self.eps_min),
            ("eps_max", self.eps_max),
            ("eta0", self.eta0),
            ("clip_tau", self.clip_tau),
            ("nu", self.nu),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(invalid(name, "must be positive and finite"));
            }
        }
        let non_negative = [
            ("lambda_cost", self.lambda_cost),
            ("alpha", self.alpha),
            ("latent_weight", self.latent_weight),
            ("align_weight", self.align_weight),
        ];
        for (name, v) in non_negative {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(invalid(name, "must be non-negative and finite"));
            }
        }
        if self.eps_min > self.eps_max {
            return Err(invalid("eps_min", "must not exceed eps_max"));
        }
        if self.nu > T::one() {
            return Err(invalid("nu", "must lie in (0, 1]"));
        }
        if self.t_steps == 0 || self.k_sink == 0 || self.k_warm == 0 || self.buffer_b == 0 {
            return Err(invalid("t_steps/k_sink/k_warm/buffer_b", "must be positive"));
        }
        Ok(())
    }
}

/// `η₀·min(1, √(k_warm/k))`, with `η₀` at `k = 0`.
pub fn lr_schedule<T: Real>(k: usize, eta0: T, k_warm: usize) -> T {
    if k == 0 {
        return eta0;
    }
    eta0 * T::one().min((T::from_count(k_warm) / T::from_count(k)).sqrt())
}

/// `φ(c) = ‖c − T⁻¹(z0)‖² + α‖∇T⁻¹‖_F²` and `∇_c φ = 2(c − T⁻¹(z0))`.
pub fn inverse_alignment<T: Real>(c: &[T], z0: &[T], t_inv: &LinearMap<T>, alpha: T) -> Result<(T, Vec<T>)> {
    if z0.len() != t_inv.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: t_inv.input_dim(),
            got: z0.len(),
        });
    }
    if c.len() != t_inv.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: t_inv.output_dim(),
            got: c.len(),
        });
    }
    let mapped = t_inv.apply(z0)?;
    let jf = t_inv.jacobian_frobenius();
    let value = sq_dist(c, &mapped) + alpha * jf * jf;
    let grad = c.iter().zip(&mapped).map(|(&a, &b)| T::lit(2.0) * (a - b)).collect();
    Ok((value, grad))
}

/// Atoms below this weight are dropped from the EMA target.
pub const PRUNE_WEIGHT: f64 = 1e-16;

/// Ring buffer of recent latents and the exponentially mixed target measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct EmaBuffer<T> {
    capacity: usize,
    nu: T,
    buffer: VecDeque<Vec<T>>,
    target: Option<EmpiricalMeasure<T>>,
}

impl<T: Real> EmaBuffer<T> {
    pub fn new(capacity: usize, nu: T) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("buffer_b", "must be positive"));
        }
        if !(nu > T::zero() && nu <= T::one()) {
            return Err(invalid("nu", "must lie in (0, 1]"));
        }
        Ok(Self {
            capacity,
            nu,
            buffer: VecDeque::new(),
            target: None,
        })
    }

    /// Starts from an existing target with an empty buffer.
    pub fn with_target(capacity: usize, nu: T, target: EmpiricalMeasure<T>) -> Result<Self> {
        let mut b = Self::new(capacity, nu)?;
        b.target = Some(target);
        Ok(b)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn buffer(&self) -> impl Iterator<Item = &Vec<T>> {
        self.buffer.iter()
    }

    pub fn target(&self) -> Option<&EmpiricalMeasure<T>> {
        self.target.as_ref()
    }

    /// Appends `latents` (evicting the oldest past capacity) and mixes
    /// `(1 − ν)·target + ν·uniform(buffer)`. Identical atoms are merged.
    pub fn update(&mut self, latents: &[Vec<T>]) -> Result<()> {
        for z in latents {
            if let Some(first) = self.buffer.front() {
                if first.len() != z.len() {
                    return Err(Error::DimensionMismatch {
                        expected: first.len(),
                        got: z.len(),
                    });
                }
            }
            if self.buffer.len() == self.capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back(z.clone());
        }
        if self.buffer.is_empty() {
            return Ok(());
        }
        let fresh = T::one() / T::from_count(self.buffer.len());
        let mut atoms: Vec<(Vec<T>, T)> = match &self.target {
            Some(t) => t
                .points()
                .iter()
                .zip(t.weights())
                .map(|(p, &w)| (p.clone(), (T::one() - self.nu) * w))
                .collect(),
            None => Vec::new(),
        };
        let nu = if self.target.is_some() { self.nu } else { T::one() };
        for z in &self.buffer {
            match atoms.iter_mut().find(|(p, _)| p == z) {
                Some((_, w)) => *w += nu * fresh,
                None => atoms.push((z.clone(), nu * fresh)),
            }
        }
        atoms.retain(|(_, w)| w.as_f64() >= PRUNE_WEIGHT);
        let (points, weights): (Vec<_>, Vec<_>) = atoms.into_iter().unzip();
        self.target = Some(EmpiricalMeasure::normalized(points, weights)?);
        Ok(())
    }
}

/// Functional form of [`EmaBuffer::update`].
pub fn ema_update<T: Real>(buf: &EmaBuffer<T>, new_latents: &[Vec<T>]) -> Result<EmaBuffer<T>> {
    let mut b = buf.clone();
    b.update(new_latents)?;
    Ok(b)
}

/// Where reference latents come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSource<T> {
    Fixed(EmpiricalMeasure<T>),
    /// Updated with the generated latents after every iteration.
    Ema(EmaBuffer<T>),
}

impl<T: Real> TargetSource<T> {
    pub fn measure(&self) -> Result<&EmpiricalMeasure<T>> {
        match self {
            TargetSource::Fixed(m) => Ok(m),
            TargetSource::Ema(b) => b.target().ok_or(Error::Empty("EMA target")),
        }
    }
}

/// Per-iteration diagnostics of [`aco_run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcoDiagnostics {
    pub k: usize,
    pub epsilon: f64,
    pub eta: f64,
    /// `⟨γ, C⟩`.
    pub ot_loss: f64,
    /// `Σ_m a_m φ(c_m)` before the update.
    pub reg_loss: f64,
    /// Largest per-particle gradient norm before clipping.
    pub grad_norm_preclip: f64,
    /// Largest per-particle gradient norm after clipping.
    pub grad_norm_postclip: f64,
    /// `W₂` between the generated latents and the target.
    pub w2_to_target: f64,
    /// `W₂` between the conditions and the target.
    pub cond_w2_to_target: f64,
    pub sinkhorn_converged: bool,
}

/// Output of [`aco_run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct AcoState<T> {
    /// Final conditions `c^(K)`.
    pub conditions: EmpiricalMeasure<T>,
    /// Condition points `c^(0), …, c^(K)`.
    pub history: Vec<Vec<Vec<T>>>,
    /// Initial latents `z^(T)`, drawn once per particle.
    pub z_init: Vec<Vec<T>>,
    /// Latents `z^(0)` of the last iteration.
    pub latents: Vec<Vec<T>>,
    pub diagnostics: Vec<AcoDiagnostics>,
    /// Non-fatal events such as unconverged Sinkhorn solves.
    pub warnings: Vec<String>,
}

impl<T: Real> AcoState<T> {
    /// CSV of the per-iteration diagnostics.
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from(
            "k,epsilon,eta,ot_loss,reg_loss,grad_norm_preclip,grad_norm_postclip,w2_to_target,cond_w2_to_target,sinkhorn_converged\n",
        );
        for d in &self.diagnostics {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                d.k,
                fmt_f64(d.epsilon),
                fmt_f64(d.eta),
                fmt_f64(d.ot_loss),
                fmt_f64(d.reg_loss),
                fmt_f64(d.grad_norm_preclip),
                fmt_f64(d.grad_norm_postclip),
                fmt_f64(d.w2_to_target),
                fmt_f64(d.cond_w2_to_target),
                d.sinkhorn_converged
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Weighted sampling of `k` distinct indices with keys `u^(1/w)`.
fn sample_without_replacement<T: Real>(weights: &[T], k: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let u = rng.uniform();
            let w = w.as_f64();
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Rescales `g` so that the recomputed norm is at most `tau`; returns the norm before clipping.
fn clip<T: Real>(g: &mut [T], tau: T) -> T {
    let n = norm(g);
    if n > tau {
        let orig = g.to_vec();
        let mut s = tau / n;
        loop {
            g.iter_mut().zip(&orig).for_each(|(v, &o)| *v = o * s);
            // τ/‖g‖ can round one ulp high; shrink until the bound holds exactly.
            if norm(g) <= tau {
                break;
            }
            s *= T::one() - T::epsilon();
        }
    }
    n
}

const MEASURE_POLICY_FACTOR: f64 = 0.01;

/// Runs `K` outer iterations from the conditions `c0`.
///
/// Each particle keeps one initial latent `z_T ~ N(0, I)` for the whole run
/// and is paired with the latent it generates. Unconverged Sinkhorn solves
/// are recorded as warnings; non-finite values abort the run.
pub fn aco_run<T: Real>(
    cfg: &AcoConfig<T>,
    c0: &EmpiricalMeasure<T>,
    schedule: &NoiseSchedule<T>,
    denoiser: &dyn Denoiser<T>,
    t_inv: &LinearMap<T>,
    mut target: TargetSource<T>,
    rng: &mut RngStream,
) -> Result<AcoState<T>> {
    cfg.validate()?;
    if schedule.steps() != cfg.t_steps {
        return Err(invalid("t_steps", format!("schedule has {} steps, config {}", schedule.steps(), cfg.t_steps)));
    }
    let latent_dim = target.measure()?.dim();
    if t_inv.input_dim() != latent_dim || t_inv.output_dim() != c0.dim() {
        return Err(Error::DimensionMismatch {
            expected: latent_dim,
            got: t_inv.input_dim(),
        });
    }
    let m = c0.len();
    let a = c0.weights().to_vec();
    let mut init_rng = rng.split(0);
    let z_init: Vec<Vec<T>> = (0..m)
        .map(|_| (0..latent_dim).map(|_| T::lit(init_rng.standard_normal())).collect())
        .collect();
    let mut ref_rng = rng.split(1);

    let mut conds: Vec<Vec<T>> = c0.points().to_vec();
    let mut history = vec![conds.clone()];
    let mut diagnostics = Vec::with_capacity(cfg.k_outer);
    let mut warnings = Vec::new();
    let mut latents: Vec<Vec<T>> = Vec::new();
    let two = T::lit(2.0);

    for k in 0..cfg.k_outer {
        latents = conds
            .iter()
            .zip(&z_init)
            .map(|(c, z)| Ok(ddim_trajectory(schedule, denoiser, c, z)?.final_state().to_vec()))
            .collect::<Result<_>>()?;

        let tgt = target.measure()?.clone();
        let n_ref = tgt.len().min(m);
        let refs: Vec<Vec<T>> = sample_without_replacement(tgt.weights(), n_ref, &mut ref_rng)
            .into_iter()
            .map(|i| tgt.points()[i].clone())
            .collect();
        let mapped: Vec<Vec<T>> = refs.iter().map(|r| t_inv.apply(r)).collect::<Result<_>>()?;

        let mut entries = Matrix::zeros(m, n_ref);
        for i in 0..m {
            for j in 0..n_ref {
                entries[(i, j)] =
                    cfg.latent_weight * sq_dist(&latents[i], &refs[j]) + cfg.lambda_cost * sq_dist(&conds[i], &mapped[j]);
            }
        }
        let cost = CostMatrix::new(entries)?;
        let b = vec![T::one() / T::from_count(n_ref); n_ref];
        let eps = adaptive_epsilon(k, cfg.k_outer, cfg.eps_min, cfg.eps_max)?;
        let plan = sinkhorn(&cost, &a, &b, eps, cfg.k_sink, cfg.sink_tol)?;
        if !plan.converged {
            warnings.push(format!(
                "k={k}: sinkhorn stopped after {} iterations with marginal error {:e}",
                plan.iterations_used, plan.marginal_errors.1
            ));
        }

        let eta = lr_schedule(k, cfg.eta0, cfg.k_warm);
        let (mut pre, mut post, mut reg) = (0.0f64, 0.0f64, 0.0f64);
        let mut next = Vec::with_capacity(m);
        for i in 0..m {
            let c = &conds[i];
            let mut g = vec![T::zero(); c.len()];
            if a[i] > T::zero() {
                for j in 0..n_ref {
                    let w = plan.gamma[(i, j)] / a[i];
                    g.iter_mut()
                        .zip(c.iter().zip(&mapped[j]))
                        .for_each(|(gk, (&ck, &tk))| *gk += w * two * cfg.lambda_cost * (ck - tk));
                }
            }
            let (phi, grad_phi) = inverse_alignment(c, &latents[i], t_inv, cfg.alpha)?;
            reg += (a[i] * phi).as_f64();
            g.iter_mut().zip(&grad_phi).for_each(|(gk, &pk)| *gk += cfg.align_weight * pk);
            pre = pre.max(clip(&mut g, cfg.clip_tau).as_f64());
            post = post.max(norm(&g).as_f64());
            next.push(c.iter().zip(&g).map(|(&ck, &gk)| ck - eta * gk).collect::<Vec<T>>());
        }
        if next.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("condition update"));
        }

        let measure_policy = TransportPolicy::entropic(EpsilonPolicy::MedianScaled(T::lit(MEASURE_POLICY_FACTOR)));
        let latent_measure = c0.with_points(latents.clone())?;
        let w2 = w2_to_target(&latent_measure, &tgt, measure_policy)?;
        let cond_w2 = if c0.dim() == tgt.dim() {
            w2_to_target(&c0.with_points(conds.clone())?, &tgt, measure_policy)?
        } else {
            f64::NAN
        };
        diagnostics.push(AcoDiagnostics {
            k,
            epsilon: eps.as_f64(),
            eta: eta.as_f64(),
            ot_loss: plan.transport_cost,
            reg_loss: reg,
            grad_norm_preclip: pre,
            grad_norm_postclip: post,
            w2_to_target: w2,
            cond_w2_to_target: cond_w2,
            sinkhorn_converged: plan.converged,
        });

        if let TargetSource::Ema(buf) = &mut target {
            buf.update(&latents)?;
        }
        conds = next;
        history.push(conds.clone());
    }

    Ok(AcoState {
        conditions: c0.with_points(conds)?,
        history,
        z_init,
        latents,
        diagnostics,
        warnings,
    })
}

/// `V_k = W₂(P_z^(k), P_z*) + λ_reg·E[φ(c^(k))]` per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTrace {
    pub values: Vec<(usize, f64)>,
    /// Steps with `V_{k+1} > V_k + slack_k`.
    pub increases: usize,
    /// Slack per step: `1e-9 + ε_k`.
    pub slack: Vec<f64>,
}

impl LyapunovTrace {
    /// Fraction of steps from `start` on that did not increase beyond the slack.
    pub fn non_increasing_fraction(&self, start: usize) -> f64 {
        let steps: Vec<bool> = self
            .values
            .windows(2)
            .zip(&self.slack)
            .skip(start)
            .map(|(w, s)| w[1].1 <= w[0].1 + s)
            .collect();
        if steps.is_empty() {
            return 1.0;
        }
        steps.iter().filter(|&&ok| ok).count() as f64 / steps.len() as f64
    }
}

pub fn lyapunov_trace<T: Real>(state: &AcoState<T>, lambda_reg: f64) -> Result<LyapunovTrace> {
    if state.diagnostics.is_empty() {
        return Err(Error::Empty("diagnostics"));
    }
    let values: Vec<(usize, f64)> = state
        .diagnostics
        .iter()
        .map(|d| {
            let v = if lambda_reg == 0.0 {
                d.w2_to_target
            } else {
                d.w2_to_target + lambda_reg * d.reg_loss
            };
            (d.k, v)
        })
        .collect();
    let slack: Vec<f64> = state.diagnostics.iter().skip(1).map(|d| 1e-9 + d.epsilon).collect();
    let increases = values
        .windows(2)
        .zip(&slack)
        .filter(|(w, s)| w[1].1 > w[0].1 + **s)
        .count();
    Ok(LyapunovTrace {
        values,
        increases,
        slack,
    })
}
