//! Experiments on the bivariate Gaussian toy.

use anyhow::Result;
use serde::{Deserialize, Serialize};

use acolab::gaussian_lab::{
    analytic, conditional_score, control_term_identity, verify_upper_bound, AffineScore, ScoreModel, TrueConditional,
    TrueMarginal, ZeroScore,
};
use acolab::measures::gaussian_conditional;
use acolab::{GaussianJoint64, RngStream};

use super::{label, num, Csv};
use crate::config::{load, ExperimentConfig, Validator};
use crate::{Check, Outcome, RunContext};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thm1Config {
    pub n_instances: usize,
    pub n_samples: usize,
    /// Means are drawn from `N(0, mean_std²)`.
    pub mean_std: f64,
    /// Variances are drawn uniformly from this interval.
    pub variance_range: [f64; 2],
    /// Correlations are drawn uniformly from `(-max_abs_corr, max_abs_corr)`.
    pub max_abs_corr: f64,
}

impl Default for Thm1Config {
    fn default() -> Self {
        Self {
            n_instances: 100,
            n_samples: 100_000,
            mean_std: 1.0,
            variance_range: [0.5, 2.0],
            max_abs_corr: 0.9,
        }
    }
}

impl ExperimentConfig for Thm1Config {
    fn validate(&self, v: &mut Validator) {
        v.at_least("n_instances", self.n_instances, 1);
        v.at_least("n_samples", self.n_samples, 2);
        v.non_negative("mean_std", self.mean_std);
        v.positive("variance_range[0]", self.variance_range[0]);
        v.require(self.variance_range[1] >= self.variance_range[0], "variance_range[1]", "must be ≥ variance_range[0]");
        v.require(
            self.max_abs_corr >= 0.0 && self.max_abs_corr < 1.0,
            "max_abs_corr",
            "must lie in [0, 1)",
        );
    }
}

const FAMILIES: [&str; 4] = ["true-marginal", "true-conditional", "zero", "affine"];

fn random_joint(cfg: &Thm1Config, rng: &mut RngStream) -> Result<GaussianJoint64> {
    let [lo, hi] = cfg.variance_range;
    let sxx = lo + (hi - lo) * rng.uniform();
    let scc = lo + (hi - lo) * rng.uniform();
    let rho = cfg.max_abs_corr * (2.0 * rng.uniform() - 1.0);
    Ok(GaussianJoint64::new(
        cfg.mean_std * rng.standard_normal(),
        cfg.mean_std * rng.standard_normal(),
        sxx,
        scc,
        rho * (sxx * scc).sqrt(),
    )?)
}

fn family_model(name: &str, j: &GaussianJoint64, rng: &mut RngStream) -> Box<dyn ScoreModel<f64>> {
    match name {
        "true-marginal" => Box::new(TrueMarginal(*j)),
        "true-conditional" => Box::new(TrueConditional {
            joint: *j,
            c: j.mu_c + j.sigma_cc.sqrt() * rng.standard_normal(),
        }),
        "zero" => Box::new(ZeroScore),
        _ => Box::new(AffineScore {
            slope: -0.5 - rng.uniform(),
            intercept: rng.standard_normal(),
        }),
    }
}

pub fn thm1_upper_bound(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<Thm1Config>(ctx.config)?;
    let root = RngStream::new(ctx.seed, 0);
    let mut csv = Csv::new(&[
        "instance", "family", "mu_x", "mu_c", "sigma_xx", "sigma_cc", "sigma_xc", "lhs", "rhs", "lhs_se", "rhs_se", "holds",
    ]);
    // Per family: (holds, lhs sum, rhs sum, smallest slack in pooled SEs).
    let mut tally = [(0usize, 0.0f64, 0.0f64, f64::INFINITY); 4];
    for i in 0..cfg.n_instances {
        let inst = root.split(i as u64);
        let j = random_joint(&cfg, &mut inst.split(0))?;
        for (fi, fam) in FAMILIES.iter().enumerate() {
            let model = family_model(fam, &j, &mut inst.split(1 + fi as u64));
            let r = verify_upper_bound(&j, model.as_ref(), cfg.n_samples, &mut inst.split(10 + fi as u64))?;
            let pooled = r.lhs_se.hypot(r.rhs_se);
            let slack = if pooled > 0.0 { (r.rhs - r.lhs) / pooled } else if r.rhs >= r.lhs { f64::INFINITY } else { f64::NEG_INFINITY };
            let t = &mut tally[fi];
            t.0 += r.holds as usize;
            t.1 += r.lhs;
            t.2 += r.rhs;
            t.3 = t.3.min(slack);
            csv.row(&[
                i.to_string(),
                fam.to_string(),
                num(j.mu_x),
                num(j.mu_c),
                num(j.sigma_xx),
                num(j.sigma_cc),
                num(j.sigma_xc),
                num(r.lhs),
                num(r.rhs),
                num(r.lhs_se),
                num(r.rhs_se),
                r.holds.to_string(),
            ]);
        }
    }
    ctx.artifacts.write("upper_bound.csv", &csv.finish())?;
    let n = cfg.n_instances as f64;
    let checks = FAMILIES
        .iter()
        .zip(tally)
        .map(|(fam, (holds, lhs, rhs, slack))| {
            Check::new(format!("upper_bound_{fam}"), holds == cfg.n_instances)
                .value("lhs", lhs / n)
                .value("rhs", rhs / n)
                .value("holds", holds == cfg.n_instances)
                .value("instances_holding", holds)
                .value("min_slack_pooled_se", slack)
        })
        .collect();
    Ok(Outcome { config: json, checks })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lemma2Config {
    pub sigma_xc_values: Vec<f64>,
    pub sigma_xx: f64,
    pub sigma_cc: f64,
    pub sigma_t: f64,
    pub n_samples: usize,
    /// `scaled` compares against `E‖σ_t²∇log p(c|x)‖²`, `unscaled` against `E‖∇log p(c|x)‖²`.
    pub check_convention: Convention,
    pub n_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Scaled,
    Unscaled,
}

impl Default for Lemma2Config {
    fn default() -> Self {
        Self {
            sigma_xc_values: vec![0.0, 0.3, 0.5, 0.9],
            sigma_xx: 1.0,
            sigma_cc: 1.0,
            sigma_t: 1.0,
            n_samples: 1_000_000,
            check_convention: Convention::Scaled,
            n_se: 3.0,
        }
    }
}

impl ExperimentConfig for Lemma2Config {
    fn validate(&self, v: &mut Validator) {
        v.positive("sigma_xx", self.sigma_xx);
        v.positive("sigma_cc", self.sigma_cc);
        v.positive("sigma_t", self.sigma_t);
        v.positive("n_se", self.n_se);
        v.at_least("n_samples", self.n_samples, 2);
        let bound = (self.sigma_xx * self.sigma_cc).sqrt();
        v.each("sigma_xc_values", &self.sigma_xc_values, |&s| {
            (!(s.abs() < bound)).then(|| format!("|sigma_xc| must be below sqrt(sigma_xx·sigma_cc) = {bound}"))
        });
    }
}

pub fn lemma2_control_term(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<Lemma2Config>(ctx.config)?;
    let root = RngStream::new(ctx.seed, 0);
    let mut csv = Csv::new(&[
        "sigma_xc",
        "sigma_t",
        "lhs",
        "lhs_se",
        "rhs_scaled",
        "rhs_scaled_se",
        "rhs_unscaled",
        "rhs_unscaled_se",
        "analytic_lhs",
    ]);
    let mut checks = Vec::new();
    for (i, &sxc) in cfg.sigma_xc_values.iter().enumerate() {
        let j = GaussianJoint64::new(0.0, 0.0, cfg.sigma_xx, cfg.sigma_cc, sxc)?;
        let r = control_term_identity(&j, cfg.sigma_t, cfg.n_samples, &mut root.split(i as u64))?;
        let rhs = match cfg.check_convention {
            Convention::Scaled => r.rhs,
            Convention::Unscaled => r.rhs_unscaled,
        };
        let pooled = r.lhs.pooled_se(&rhs);
        let gap = (r.lhs.estimate - rhs.estimate).abs();
        let z_scaled = (r.lhs.estimate - r.rhs.estimate).abs() / r.lhs.pooled_se(&r.rhs);
        let z_unscaled = (r.lhs.estimate - r.rhs_unscaled.estimate).abs() / r.lhs.pooled_se(&r.rhs_unscaled);
        csv.row(&[
            num(sxc),
            num(cfg.sigma_t),
            num(r.lhs.estimate),
            num(r.lhs.std_error),
            num(r.rhs.estimate),
            num(r.rhs.std_error),
            num(r.rhs_unscaled.estimate),
            num(r.rhs_unscaled.std_error),
            num(analytic::epsilon_c(&j)),
        ]);
        checks.push(
            Check::new(format!("control_term_sigma_xc_{}", label(sxc)), gap <= cfg.n_se * pooled)
                .value("lhs", r.lhs.estimate)
                .value("rhs_scaled", r.rhs.estimate)
                .value("rhs_unscaled", r.rhs_unscaled.estimate)
                .value("pooled_se", pooled)
                .value("abs_gap", gap)
                .value("z_scaled", z_scaled)
                .value("z_unscaled", z_unscaled),
        );
    }
    ctx.artifacts.write("control_term.csv", &csv.finish())?;
    Ok(Outcome { config: json, checks })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prop1Config {
    /// Joints as `[mu_x, mu_c, sigma_xx, sigma_cc, sigma_xc]`.
    pub joints: Vec<[f64; 5]>,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub fd_step: f64,
    pub fd_tolerance: f64,
    /// Correlation sweep for the conditional-variance curve.
    pub sweep_points: usize,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self {
            joints: vec![[0.0, 0.0, 1.0, 1.0, 0.5], [1.0, -1.0, 2.0, 1.0, 0.5], [0.0, 0.0, 1.0, 1.0, 0.9]],
            grid_min: -3.0,
            grid_max: 3.0,
            grid_points: 61,
            fd_step: 1e-4,
            fd_tolerance: 1e-6,
            sweep_points: 21,
        }
    }
}

impl ExperimentConfig for Prop1Config {
    fn validate(&self, v: &mut Validator) {
        v.each("joints", &self.joints, |p| {
            GaussianJoint64::new(p[0], p[1], p[2], p[3], p[4]).err().map(|e| e.to_string())
        });
        v.require(self.grid_max > self.grid_min, "grid_max", "must exceed grid_min");
        v.at_least("grid_points", self.grid_points, 2);
        v.positive("fd_step", self.fd_step);
        v.positive("fd_tolerance", self.fd_tolerance);
        v.at_least("sweep_points", self.sweep_points, 2);
    }
}

/// `log p(x|c)` from the raw joint fields, independent of the library's conditional law.
fn log_conditional_density(p: &[f64; 5], x: f64, c: f64) -> f64 {
    let [mx, mc, sxx, scc, sxc] = *p;
    let mean = mx + sxc / scc * (c - mc);
    let var = sxx - sxc * sxc / scc;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

pub fn prop1_gaussian_decay(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<Prop1Config>(ctx.config)?;
    let n = cfg.grid_points;
    let grid: Vec<f64> = (0..n)
        .map(|i| cfg.grid_min + (cfg.grid_max - cfg.grid_min) * i as f64 / (n - 1) as f64)
        .collect();
    let h = cfg.fd_step;
    let mut csv = Csv::new(&["joint", "x", "c", "score", "finite_difference", "abs_error"]);
    let mut worst = 0.0f64;
    let mut variance_spread = 0.0f64;
    let mut variance_formula_gap = 0.0f64;
    for (ji, p) in cfg.joints.iter().enumerate() {
        let j = GaussianJoint64::new(p[0], p[1], p[2], p[3], p[4])?;
        let v0 = gaussian_conditional(&j, grid[0])?.1;
        variance_formula_gap = variance_formula_gap.max((v0 - (p[2] - p[4] * p[4] / p[3])).abs());
        for &c in &grid {
            let (_, v) = gaussian_conditional(&j, c)?;
            variance_spread = variance_spread.max((v - v0).abs());
            for &x in &grid {
                let s = conditional_score(&j, x, c)?;
                let fd = (log_conditional_density(p, x + h, c) - log_conditional_density(p, x - h, c)) / (2.0 * h);
                let err = (s - fd).abs();
                worst = worst.max(err);
                csv.row(&[ji.to_string(), num(x), num(c), num(s), num(fd), num(err)]);
            }
        }
    }
    ctx.artifacts.write("score_fd.csv", &csv.finish())?;

    // Conditional variance and score energy across the correlation range of the first joint.
    let p = cfg.joints[0];
    let limit = (p[2] * p[3]).sqrt();
    let mut sweep = Csv::new(&["sigma_xc", "conditional_variance", "epsilon_bar_c", "epsilon_c"]);
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    for i in 0..cfg.sweep_points {
        let sxc = 0.95 * limit * i as f64 / (cfg.sweep_points - 1) as f64;
        let j = GaussianJoint64::new(p[0], p[1], p[2], p[3], sxc)?;
        let v = j.conditional_variance();
        monotone &= v < prev;
        prev = v;
        sweep.row(&[num(sxc), num(v), num(analytic::epsilon_bar_c(&j)), num(analytic::epsilon_c(&j))]);
    }
    ctx.artifacts.write("variance_sweep.csv", &sweep.finish())?;

    let checks = vec![
        Check::new("score_matches_finite_differences", worst <= cfg.fd_tolerance)
            .value("max_abs_error", worst)
            .value("tolerance", cfg.fd_tolerance)
            .value("grid_points", n * n * cfg.joints.len()),
        Check::new("conditional_variance_invariant_in_c", variance_spread == 0.0 && variance_formula_gap < 1e-15)
            .value("max_variance_spread", variance_spread)
            .value("max_formula_gap", variance_formula_gap),
        Check::new("conditional_variance_decreases_with_coupling", monotone).value("sweep_points", cfg.sweep_points),
    ];
    Ok(Outcome { config: json, checks })
}
