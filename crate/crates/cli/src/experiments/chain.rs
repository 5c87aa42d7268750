//! Experiments on autoregressive condition chains.

use anyhow::Result;
use serde::{Deserialize, Serialize};

use acolab::ar_chain::{
    ergodicity_check, extraneous_energy, gradient_norm_decay, project_extraneous, regularity_witness, InitialLaw,
};
use acolab::measures::linalg::{dot, norm_sq};
use acolab::stats::McEstimate;
use acolab::{ArModel64, GaussianJoint64, Matrix64, RngStream, SubspaceSpec64};

use super::{label, num, Csv};
use crate::config::{load, ExperimentConfig, Validator};
use crate::{Check, Outcome, RunContext};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thm2Config {
    /// AR(1) coefficients `a_0`, one chain each.
    pub coefficients: Vec<f64>,
    pub noise_std: f64,
    /// Joint as `[mu_x, mu_c, sigma_xx, sigma_cc, sigma_xc]`.
    pub joint: [f64; 5],
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    /// `c0 = mu_c + c0_offset`.
    pub c0_offset: f64,
    pub n_iters: usize,
    pub n_paths: usize,
    pub min_r2: f64,
    /// Allowed `|β − |a_0||`.
    pub beta_tolerance: f64,
}

impl Default for Thm2Config {
    fn default() -> Self {
        Self {
            coefficients: vec![0.3, 0.5, 0.8],
            noise_std: 1.0,
            joint: [0.0, 0.0, 1.0, 1.0, 0.6],
            grid_min: -4.0,
            grid_max: 4.0,
            grid_points: 41,
            c0_offset: 10.0,
            n_iters: 30,
            n_paths: 2000,
            min_r2: 0.9,
            beta_tolerance: 0.15,
        }
    }
}

impl ExperimentConfig for Thm2Config {
    fn validate(&self, v: &mut Validator) {
        v.each("coefficients", &self.coefficients, |&a| (!(a.abs() < 1.0)).then(|| "must satisfy |a| < 1".into()));
        v.non_negative("noise_std", self.noise_std);
        let j = self.joint;
        if let Err(e) = GaussianJoint64::new(j[0], j[1], j[2], j[3], j[4]) {
            v.require(false, "joint", &e.to_string());
        }
        v.require(self.grid_max > self.grid_min, "grid_max", "must exceed grid_min");
        v.at_least("grid_points", self.grid_points, 1);
        v.at_least("n_iters", self.n_iters, 4);
        v.at_least("n_paths", self.n_paths, 1);
        v.require((0.0..=1.0).contains(&self.min_r2), "min_r2", "must lie in [0, 1]");
        v.positive("beta_tolerance", self.beta_tolerance);
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn thm2_gradient_decay(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<Thm2Config>(ctx.config)?;
    let root = RngStream::new(ctx.seed, 0);
    let j = cfg.joint;
    let joint = GaussianJoint64::new(j[0], j[1], j[2], j[3], j[4])?;
    let xs = grid(cfg.grid_min, cfg.grid_max, cfg.grid_points);
    let mut checks = Vec::new();
    let mut fits = serde_json::Map::new();
    for (i, &a) in cfg.coefficients.iter().enumerate() {
        let model = ArModel64::new(vec![a], cfg.noise_std)?;
        let c0 = joint.mu_c + cfg.c0_offset;
        let r = gradient_norm_decay(&model, &joint, &xs, c0, cfg.n_iters, cfg.n_paths, &mut root.split(i as u64))?;
        let tag = label(a);
        ctx.artifacts.write(&format!("decay_a{tag}.csv"), &r.to_csv())?;
        fits.insert(tag.clone(), serde_json::from_str(&r.fit_json()?)?);
        let (beta, r2) = r.fit.map_or((f64::NAN, f64::NAN), |f| (f.beta, f.r2));
        let ok = !r.fit_failed && r2 >= cfg.min_r2 && beta > 0.0 && beta < 1.0 && (beta - a.abs()).abs() <= cfg.beta_tolerance;
        checks.push(
            Check::new(format!("decay_rate_a{tag}"), ok)
                .value("beta", beta)
                .value("r2", r2)
                .value("expected_rate", a.abs())
                .value("fit_failed", r.fit_failed),
        );
        let violation = r.envelope_violation();
        checks.push(Check::new(format!("envelope_a{tag}"), violation <= 0.0).value("max_excess", violation));
    }
    ctx.artifacts.write("decay_fits.json", &serde_json::to_string_pretty(&fits)?)?;
    Ok(Outcome { config: json, checks })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicityConfig {
    pub coefficient: f64,
    /// Slower chain whose fitted rate must exceed the main one.
    pub comparison_coefficient: f64,
    pub noise_std: f64,
    pub start_a: f64,
    pub start_b: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub max_rate: f64,
    /// Allowed gap between histogram and exact TV at any step.
    pub estimate_tolerance: f64,
}

impl Default for ErgodicityConfig {
    fn default() -> Self {
        Self {
            coefficient: 0.5,
            comparison_coefficient: 0.9,
            noise_std: 1.0,
            start_a: 5.0,
            start_b: -5.0,
            n_steps: 20,
            n_paths: 2000,
            max_rate: 0.6,
            estimate_tolerance: 0.1,
        }
    }
}

impl ExperimentConfig for ErgodicityConfig {
    fn validate(&self, v: &mut Validator) {
        v.require(self.coefficient.abs() < 1.0, "coefficient", "must satisfy |a| < 1");
        v.require(self.comparison_coefficient.abs() < 1.0, "comparison_coefficient", "must satisfy |a| < 1");
        v.positive("noise_std", self.noise_std);
        v.at_least("n_steps", self.n_steps, 2);
        v.at_least("n_paths", self.n_paths, 1000);
        v.positive("max_rate", self.max_rate);
        v.positive("estimate_tolerance", self.estimate_tolerance);
    }
}

pub fn ergodicity(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<ErgodicityConfig>(ctx.config)?;
    let root = RngStream::new(ctx.seed, 0);
    let (mu1, mu2) = (InitialLaw::Dirac(cfg.start_a), InitialLaw::Dirac(cfg.start_b));
    let run = |a: f64, stream: u64| -> Result<_> {
        let m = ArModel64::new(vec![a], cfg.noise_std)?;
        Ok(ergodicity_check(&m, mu1, mu2, cfg.n_steps, cfg.n_paths, &mut root.split(stream))?)
    };
    let main = run(cfg.coefficient, 0)?;
    let slow = run(cfg.comparison_coefficient, 1)?;
    let mut csv = Csv::new(&["step", "tv_estimate", "tv_exact", "comparison_tv_estimate", "comparison_tv_exact"]);
    for (p, q) in main.points.iter().zip(&slow.points) {
        csv.row(&[p.step.to_string(), num(p.tv_estimate), num(p.tv_exact), num(q.tv_estimate), num(q.tv_exact)]);
    }
    ctx.artifacts.write("tv_decay.csv", &csv.finish())?;
    ctx.artifacts.write(
        "fits.json",
        &serde_json::to_string_pretty(&serde_json::json!({
            "main": { "fit_exact": main.fit_exact, "fit_estimate": main.fit_estimate, "noise_floor": main.noise_floor },
            "comparison": { "fit_exact": slow.fit_exact, "fit_estimate": slow.fit_estimate },
        }))?,
    )?;

    let rate = main.fit_exact.map_or(f64::NAN, |f| f.rate);
    let r2 = main.fit_exact.map_or(f64::NAN, |f| f.r2);
    let slow_rate = slow.fit_exact.map_or(f64::NAN, |f| f.rate);
    let gap = main.points.iter().map(|p| (p.tv_estimate - p.tv_exact).abs()).fold(0.0, f64::max);
    let checks = vec![
        Check::new("exact_tv_rate", rate > 0.0 && rate <= cfg.max_rate)
            .value("rate", rate)
            .value("r2", r2)
            .value("max_rate", cfg.max_rate)
            .value("estimate_rate", main.fit_estimate.map_or(f64::NAN, |f| f.rate)),
        Check::new("rate_orders_with_coefficient", slow_rate > rate)
            .value("rate", rate)
            .value("comparison_rate", slow_rate),
        Check::new("histogram_tracks_exact", gap <= cfg.estimate_tolerance)
            .value("max_abs_gap", gap)
            .value("noise_floor", main.noise_floor),
    ];
    Ok(Outcome { config: json, checks })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InconsistencyConfig {
    pub dim: usize,
    pub subspace_rank: usize,
    /// Frobenius norm of the random linear transition (bounds its spectral norm).
    pub transition_norm: f64,
    pub noise_std: f64,
    pub prior_std: f64,
    pub n_samples: usize,
    pub n_steps: usize,
    /// Regularity witness on the Gaussian joint `[mu_x, mu_c, sigma_xx, sigma_cc, sigma_xc]`.
    pub joint: [f64; 5],
    pub witness_pairs: usize,
    pub n_se: f64,
}

impl Default for InconsistencyConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            subspace_rank: 2,
            transition_norm: 0.8,
            noise_std: 0.5,
            prior_std: 2.0,
            n_samples: 20_000,
            n_steps: 20,
            joint: [0.0, 0.0, 1.0, 1.0, 0.5],
            witness_pairs: 1000,
            n_se: 3.0,
        }
    }
}

impl ExperimentConfig for InconsistencyConfig {
    fn validate(&self, v: &mut Validator) {
        v.at_least("dim", self.dim, 1);
        v.require(self.subspace_rank <= self.dim, "subspace_rank", "must not exceed dim");
        v.require(
            self.transition_norm >= 0.0 && self.transition_norm < 1.0,
            "transition_norm",
            "must lie in [0, 1)",
        );
        v.non_negative("noise_std", self.noise_std);
        v.non_negative("prior_std", self.prior_std);
        v.at_least("n_samples", self.n_samples, 2);
        v.at_least("n_steps", self.n_steps, 1);
        let j = self.joint;
        if let Err(e) = GaussianJoint64::new(j[0], j[1], j[2], j[3], j[4]) {
            v.require(false, "joint", &e.to_string());
        }
        v.at_least("witness_pairs", self.witness_pairs, 1);
        v.positive("n_se", self.n_se);
    }
}

fn gaussian_vec(d: usize, std: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..d).map(|_| std * rng.standard_normal()).collect()
}

pub fn inconsistency_energy(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<InconsistencyConfig>(ctx.config)?;
    let root = RngStream::new(ctx.seed, 0);
    let d = cfg.dim;

    let mut setup = root.split(0);
    let spanning: Vec<Vec<f64>> = (0..cfg.subspace_rank).map(|_| gaussian_vec(d, 1.0, &mut setup)).collect();
    let sub = if cfg.subspace_rank == 0 {
        SubspaceSpec64::new(d, vec![])?
    } else {
        SubspaceSpec64::from_spanning(d, &spanning)?
    };
    let raw: Vec<f64> = (0..d * d).map(|_| setup.standard_normal()).collect();
    let fro = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a = Matrix64::from_row_major(d, d, raw.iter().map(|x| x * cfg.transition_norm / fro).collect())?;
    let transition = |c: &[f64]| a.matvec(c).expect("square transition");
    let noise_cov = Matrix64::identity(d).scale(cfg.noise_std * cfg.noise_std);

    // Projection identities on prior samples.
    let mut sampler = root.split(1);
    let prior: Vec<Vec<f64>> = (0..cfg.n_samples).map(|_| gaussian_vec(d, cfg.prior_std, &mut sampler)).collect();
    let (mut ortho, mut idem, mut pyth) = (0.0f64, 0.0f64, 0.0f64);
    for c in &prior {
        let (ideal, eta) = project_extraneous(c, &sub)?;
        ortho = ortho.max(dot(&ideal, &eta).abs());
        let (again, rest) = project_extraneous(&ideal, &sub)?;
        let drift = again.iter().zip(&ideal).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        idem = idem.max(drift).max(rest.iter().map(|x| x.abs()).fold(0.0, f64::max));
        let n2 = norm_sq(c);
        pyth = pyth.max((n2 - norm_sq(&ideal) - norm_sq(&eta)).abs() / n2.max(1e-300));
    }

    // One step: simulated E‖η(Φ(c) + noise)‖² against the decomposition.
    let e = extraneous_energy(&transition, &noise_cov, &sub, &prior)?;
    let mut noise_rng = root.split(2);
    let excess: Vec<f64> = prior
        .iter()
        .map(|c| {
            let phi = transition(c);
            let noisy: Vec<f64> = phi.iter().map(|x| x + cfg.noise_std * noise_rng.standard_normal()).collect();
            let (_, eta) = project_extraneous(&noisy, &sub).expect("dimension checked");
            norm_sq(&eta)
        })
        .collect();
    let sim = McEstimate::from_samples(&excess);
    let z_projected = (sim.estimate - e.total_projected()).abs() / sim.std_error.max(1e-300);

    // Multi-step ensemble trace.
    let mut states = prior.clone();
    let mut csv = Csv::new(&["i", "eta_energy", "predicted_projected", "predicted_full"]);
    let mut step_rng = root.split(3);
    for i in 1..=cfg.n_steps {
        let pred = extraneous_energy(&transition, &noise_cov, &sub, &states)?;
        states = states
            .iter()
            .map(|c| transition(c).into_iter().map(|x| x + cfg.noise_std * step_rng.standard_normal()).collect())
            .collect();
        let energy = states
            .iter()
            .map(|c| project_extraneous(c, &sub).map(|(_, eta)| norm_sq(&eta)))
            .sum::<acolab::Result<f64>>()?
            / states.len() as f64;
        csv.row(&[i.to_string(), num(energy), num(pred.total_projected()), num(pred.total())]);
    }
    ctx.artifacts.write("extraneous_energy.csv", &csv.finish())?;

    let j = cfg.joint;
    let joint = GaussianJoint64::new(j[0], j[1], j[2], j[3], j[4])?;
    let xs = grid(-3.0, 3.0, 61);
    let w = regularity_witness(&joint, &xs, (-2.0, 2.0), cfg.witness_pairs, &mut root.split(4))?;
    let v = joint.conditional_variance();
    let two_pi = 2.0 * std::f64::consts::PI;
    // sup|∂ₓp| = e^{-1/2}/(v√(2π)); sup|∂ₓ∂_c p| = |g|/(v√(2πv)).
    let deriv_bound = (-0.5f64).exp() / (v * two_pi.sqrt());
    let lip_bound = joint.gain().abs() / (v * (two_pi * v).sqrt());
    ctx.artifacts.write("regularity.json", &serde_json::to_string_pretty(&w)?)?;

    let outside_noise = e.noise_projected_trace > 0.0;
    let checks = vec![
        Check::new("projection_orthogonal", ortho <= 1e-10).value("max_abs_inner", ortho),
        Check::new("projection_idempotent", idem <= 1e-12).value("max_abs_drift", idem),
        Check::new("projection_pythagoras", pyth <= 1e-12).value("max_rel_gap", pyth),
        Check::new("energy_matches_simulation", z_projected <= cfg.n_se)
            .value("simulated", sim.estimate)
            .value("simulated_se", sim.std_error)
            .value("total_projected", e.total_projected())
            .value("total_full_trace", e.total())
            .value("propagated", e.propagated)
            .value("z", z_projected),
        Check::new("energy_positive_with_outside_noise", !outside_noise || (e.total() > 0.0 && e.total_projected() > 0.0))
            .value("noise_projected_trace", e.noise_projected_trace)
            .value("noise_full_trace", e.noise_full_trace),
        Check::new(
            "regularity_witness_bounded",
            w.density_min > 0.0 && w.derivative_max <= deriv_bound * (1.0 + 1e-9) && w.lipschitz_max <= lip_bound * (1.0 + 1e-6),
        )
        .value("density_min", w.density_min)
        .value("derivative_max", w.derivative_max)
        .value("derivative_bound", deriv_bound)
        .value("lipschitz_max", w.lipschitz_max)
        .value("lipschitz_bound", lip_bound),
    ];
    Ok(Outcome { config: json, checks })
}
