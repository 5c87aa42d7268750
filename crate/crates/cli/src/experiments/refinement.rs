//! The full condition-optimization loop and the SNR instrumentation.

use anyhow::Result;
use serde::{Deserialize, Serialize};

use acolab::aco::{aco_run, lr_schedule, lyapunov_trace, AcoConfig, TargetSource};
use acolab::diffusion::{ddim_trajectory, Denoiser, GaussianDdimDenoiser};
use acolab::ot::adaptive_epsilon;
use acolab::wgf::{run_flow, TransportPolicy};
use acolab::{
    AcoConfig64, EmaBuffer64, EmpiricalMeasure64, EnergyFunctional64, GaussianJoint64, LinearMap64, NoiseSchedule64,
    RngStream, Trajectory64,
};

use super::{num, Csv};
use crate::config::{load, ExperimentConfig, Validator};
use crate::{Check, Outcome, RunContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Fixed,
    Ema,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcoFullConfig {
    pub n_particles: usize,
    pub target_particles: usize,
    /// Initial conditions are `c0_offset + N(0, 1)`.
    pub c0_offset: f64,
    /// Covariance of the Gaussian joint behind the analytic denoiser (unit variances, zero means).
    pub sigma_xc: f64,
    pub target: TargetKind,
    pub k_outer: usize,
    pub t_steps: usize,
    pub lambda_cost: f64,
    pub alpha: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub k_sink: usize,
    pub sink_tol: f64,
    pub eta0: f64,
    pub k_warm: usize,
    pub clip_tau: f64,
    pub nu: f64,
    pub buffer_b: usize,
    pub latent_weight: f64,
    pub align_weight: f64,
    pub mean_tolerance: f64,
    /// Iterations over which `w2_to_target` must strictly decrease.
    pub decrease_window: usize,
    /// First step of the Lyapunov monotonicity count.
    pub lyapunov_start: usize,
    pub lyapunov_fraction: f64,
}

impl Default for AcoFullConfig {
    fn default() -> Self {
        let d = AcoConfig64::default();
        Self {
            n_particles: 64,
            target_particles: 64,
            c0_offset: 5.0,
            sigma_xc: 0.9,
            target: TargetKind::Fixed,
            k_outer: 100,
            t_steps: 20,
            lambda_cost: d.lambda_cost,
            alpha: d.alpha,
            eps_min: d.eps_min,
            eps_max: d.eps_max,
            k_sink: d.k_sink,
            sink_tol: d.sink_tol,
            eta0: 0.05,
            k_warm: d.k_warm,
            clip_tau: d.clip_tau,
            nu: d.nu,
            buffer_b: d.buffer_b,
            latent_weight: d.latent_weight,
            align_weight: d.align_weight,
            mean_tolerance: 0.5,
            decrease_window: 20,
            lyapunov_start: 20,
            lyapunov_fraction: 0.9,
        }
    }
}

impl AcoFullConfig {
    fn core(&self) -> AcoConfig64 {
        AcoConfig {
            k_outer: self.k_outer,
            t_steps: self.t_steps,
            lambda_cost: self.lambda_cost,
            alpha: self.alpha,
            eps_min: self.eps_min,
            eps_max: self.eps_max,
            k_sink: self.k_sink,
            sink_tol: self.sink_tol,
            eta0: self.eta0,
            k_warm: self.k_warm,
            clip_tau: self.clip_tau,
            nu: self.nu,
            buffer_b: self.buffer_b,
            latent_weight: self.latent_weight,
            align_weight: self.align_weight,
        }
    }
}

impl ExperimentConfig for AcoFullConfig {
    fn validate(&self, v: &mut Validator) {
        v.at_least("n_particles", self.n_particles, 1);
        v.at_least("target_particles", self.target_particles, 1);
        v.require(self.sigma_xc.abs() < 1.0, "sigma_xc", "must satisfy |sigma_xc| < 1");
        v.at_least("k_outer", self.k_outer, 1);
        v.positive("mean_tolerance", self.mean_tolerance);
        v.require(self.decrease_window <= self.k_outer, "decrease_window", "must not exceed k_outer");
        v.require((0.0..=1.0).contains(&self.lyapunov_fraction), "lyapunov_fraction", "must lie in [0, 1]");
        if let Err(e) = self.core().validate() {
            v.require(false, "aco", &e.to_string());
        }
    }
}

pub fn aco_full(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<AcoFullConfig>(ctx.config)?;
    let core = cfg.core();
    let root = RngStream::new(ctx.seed, 0);
    let mut r = root.split(0);
    let target_pts: Vec<f64> = (0..cfg.target_particles).map(|_| r.standard_normal()).collect();
    let mut r = root.split(1);
    let c0_pts: Vec<f64> = (0..cfg.n_particles).map(|_| cfg.c0_offset + r.standard_normal()).collect();
    let target = EmpiricalMeasure64::from_scalars(&target_pts)?;
    let c0 = EmpiricalMeasure64::from_scalars(&c0_pts)?;

    let sched = NoiseSchedule64::cosine(cfg.t_steps)?;
    let joint = GaussianJoint64::new(0.0, 0.0, 1.0, 1.0, cfg.sigma_xc)?;
    let den = GaussianDdimDenoiser::from_joint(sched.clone(), &joint);
    let source = match cfg.target {
        TargetKind::Fixed => TargetSource::Fixed(target.clone()),
        TargetKind::Ema => TargetSource::Ema(EmaBuffer64::with_target(cfg.buffer_b, cfg.nu, target.clone())?),
    };
    let state = aco_run(&core, &c0, &sched, &den, &LinearMap64::identity(1), source, &mut root.split(2))?;
    ctx.artifacts.write("diagnostics.csv", &state.diagnostics_csv())?;
    let mut hist = Csv::new(&["k", "particle", "condition"]);
    for (k, cs) in state.history.iter().enumerate() {
        for (i, c) in cs.iter().enumerate() {
            hist.row(&[k.to_string(), i.to_string(), num(c[0])]);
        }
    }
    ctx.artifacts.write("conditions.csv", &hist.finish())?;
    ctx.artifacts.write("state.json", &state.to_json()?)?;

    let target_mean = target.mean()[0];
    let final_mean = state.conditions.mean()[0];
    let w2: Vec<f64> = state.diagnostics.iter().map(|d| d.w2_to_target).collect();
    let window = &w2[..cfg.decrease_window.min(w2.len())];
    let decreasing = window.windows(2).all(|p| p[1] < p[0]);
    let max_post = state.diagnostics.iter().map(|d| d.grad_norm_postclip).fold(0.0, f64::max);

    // Schedules against their closed forms, evaluated independently here.
    let lr_example = lr_schedule(4 * core.k_warm, core.eta0, core.k_warm);
    let mut lr_exact = lr_example == core.eta0 / 2.0;
    for d in &state.diagnostics {
        let expect = if d.k == 0 { core.eta0 } else { core.eta0 * (core.k_warm as f64 / d.k as f64).sqrt().min(1.0) };
        lr_exact &= d.eta == expect;
    }
    let first = adaptive_epsilon(0, core.k_outer, core.eps_min, core.eps_max)?;
    let last = adaptive_epsilon(core.k_outer, core.k_outer, core.eps_min, core.eps_max)?;
    let eps_match = state
        .diagnostics
        .iter()
        .all(|d| d.epsilon == adaptive_epsilon(d.k, core.k_outer, core.eps_min, core.eps_max).unwrap_or(f64::NAN));

    let lt = lyapunov_trace(&state, 0.0)?;
    let fraction = lt.non_increasing_fraction(cfg.lyapunov_start);

    let checks = vec![
        Check::new("final_mean_near_target", (final_mean - target_mean).abs() <= cfg.mean_tolerance)
            .value("final_mean", final_mean)
            .value("target_mean", target_mean)
            .value("tolerance", cfg.mean_tolerance)
            // Budget-limited solves at small ε are expected; details are in state.json.
            .value("sinkhorn_warnings", state.warnings.len()),
        Check::new("w2_decreasing_early", decreasing)
            .value("window", cfg.decrease_window)
            .value("w2_first", w2.first().copied().unwrap_or(f64::NAN))
            .value("w2_window_end", window.last().copied().unwrap_or(f64::NAN))
            .value("w2_final", w2.last().copied().unwrap_or(f64::NAN)),
        Check::new("postclip_norm_bounded", max_post <= core.clip_tau)
            .value("max_postclip", max_post)
            .value("clip_tau", core.clip_tau),
        Check::new("lr_schedule_formula", lr_exact)
            .value("eta_at_4_k_warm", lr_example)
            .value("eta0_half", core.eta0 / 2.0),
        Check::new("epsilon_schedule_endpoints", first == core.eps_max && last == core.eps_min && eps_match)
            .value("epsilon_k0", first)
            .value("epsilon_kK", last),
        Check::new("lyapunov_non_increasing", fraction >= cfg.lyapunov_fraction)
            .value("fraction", fraction)
            .value("start", cfg.lyapunov_start)
            .value("increases", lt.increases),
    ];
    Ok(Outcome { config: json, checks })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrConfig {
    pub sigma_xc: f64,
    pub latent_dim: usize,
    pub t_steps: usize,
    /// Condition whose conditional mean is the clean reference.
    pub ideal_condition: f64,
    /// Offset of the unrefined condition from the ideal one.
    pub inconsistency: f64,
    /// JKO steps that refine the condition toward the ideal one.
    pub refine_iters: usize,
    pub refine_eta: f64,
}

impl Default for SnrConfig {
    fn default() -> Self {
        Self {
            sigma_xc: 0.9,
            latent_dim: 256,
            t_steps: 50,
            ideal_condition: 2.0,
            inconsistency: 1.5,
            refine_iters: 10,
            refine_eta: 0.2,
        }
    }
}

impl ExperimentConfig for SnrConfig {
    fn validate(&self, v: &mut Validator) {
        v.require(self.sigma_xc.abs() < 1.0, "sigma_xc", "must satisfy |sigma_xc| < 1");
        v.at_least("latent_dim", self.latent_dim, 1);
        v.at_least("t_steps", self.t_steps, 2);
        v.require(self.ideal_condition.is_finite(), "ideal_condition", "must be finite");
        v.require(self.inconsistency.is_finite(), "inconsistency", "must be finite");
        v.at_least("refine_iters", self.refine_iters, 1);
        v.require(self.refine_eta > 0.0 && self.refine_eta < 1.0, "refine_eta", "must lie in (0, 1)");
    }
}

/// Delegates steps and measures against a fixed clean reference.
struct Against<'a> {
    inner: &'a GaussianDdimDenoiser<f64>,
    reference: Vec<f64>,
}

impl Denoiser<f64> for Against<'_> {
    fn step(&self, z: &[f64], c: &[f64], t: usize) -> Vec<f64> {
        self.inner.step(z, c, t)
    }

    fn reference(&self, _c: &[f64]) -> Option<Vec<f64>> {
        Some(self.reference.clone())
    }
}

fn monotone(t: &Trajectory64) -> (bool, bool) {
    let d = &t.diagnostics;
    let snr = d.windows(2).all(|w| w[1].snr >= w[0].snr);
    let noise = d.windows(2).all(|w| w[1].noise_intensity <= w[0].noise_intensity);
    (snr, noise)
}

pub fn snr_curves(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<SnrConfig>(ctx.config)?;
    let root = RngStream::new(ctx.seed, 0);
    let sched = NoiseSchedule64::cosine(cfg.t_steps)?;
    let joint = GaussianJoint64::new(0.0, 0.0, 1.0, 1.0, cfg.sigma_xc)?;
    let den = GaussianDdimDenoiser::from_joint(sched.clone(), &joint);

    let unrefined = cfg.ideal_condition + cfg.inconsistency;
    let flow = run_flow(
        &EnergyFunctional64::transport_only(EmpiricalMeasure64::dirac(vec![cfg.ideal_condition])?),
        &EmpiricalMeasure64::dirac(vec![unrefined])?,
        &vec![cfg.refine_eta; cfg.refine_iters],
        TransportPolicy::Exact1d,
    )?;
    let refined = flow.final_measure.points()[0][0];

    let mut r = root.split(0);
    let z_t: Vec<f64> = (0..cfg.latent_dim).map(|_| r.standard_normal()).collect();

    let own_u = ddim_trajectory(&sched, &den, &[unrefined], &z_t)?;
    let own_r = ddim_trajectory(&sched, &den, &[refined], &z_t)?;
    ctx.artifacts.write("trajectory_unrefined.csv", &own_u.to_csv())?;
    ctx.artifacts.write("trajectory_refined.csv", &own_r.to_csv())?;

    let ideal = Against {
        inner: &den,
        reference: den.conditional_mean(&[cfg.ideal_condition], cfg.latent_dim),
    };
    let vs_u = ddim_trajectory(&sched, &ideal, &[unrefined], &z_t)?;
    let vs_r = ddim_trajectory(&sched, &ideal, &[refined], &z_t)?;
    let mut csv = Csv::new(&["t", "snr_unrefined", "noise_unrefined", "snr_refined", "noise_refined"]);
    for (a, b) in vs_u.diagnostics.iter().zip(&vs_r.diagnostics) {
        csv.row(&[a.t.to_string(), num(a.snr), num(a.noise_intensity), num(b.snr), num(b.noise_intensity)]);
    }
    ctx.artifacts.write("snr_vs_ideal.csv", &csv.finish())?;

    let (snr_u, noise_u) = monotone(&own_u);
    let (snr_r, noise_r) = monotone(&own_r);
    let term = |t: &Trajectory64| t.diagnostics.last().map_or(f64::NAN, |d| d.snr);
    let (tu, tr) = (term(&vs_u), term(&vs_r));
    let checks = vec![
        Check::new("snr_monotone", snr_u && snr_r)
            .value("unrefined", snr_u)
            .value("refined", snr_r),
        Check::new("noise_intensity_monotone", noise_u && noise_r)
            .value("unrefined", noise_u)
            .value("refined", noise_r),
        Check::new("refined_terminal_snr_at_least_unrefined", tr >= tu)
            .value("terminal_snr_refined", tr)
            .value("terminal_snr_unrefined", tu)
            .value("refined_condition", refined)
            .value("unrefined_condition", unrefined),
    ];
    Ok(Outcome { config: json, checks })
}
