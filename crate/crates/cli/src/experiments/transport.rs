//! Optimal-transport and gradient-flow experiments.

use std::sync::Arc;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use acolab::ot::{self, sinkhorn, sinkhorn_divergence, w2_exact_1d, CostMatrix, ERROR_FLOOR};
use acolab::wgf::{run_flow, EpsilonPolicy, QuadraticPotential, TransportPolicy, ZeroPotential};
use acolab::{EmpiricalMeasure64, EnergyFunctional64, Matrix64, RngStream};

use super::{label, num, Csv};
use crate::config::{load, ExperimentConfig, Validator};
use crate::{Check, Outcome, RunContext};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub n_instances: usize,
    pub max_points: usize,
    pub dim: usize,
    /// Sinkhorn ε as a multiple of the median cost.
    pub epsilon_factor: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub feasibility_tol: f64,
    pub two_by_two_epsilon: f64,
    pub oracle_tol: f64,
    pub divergence_pairs: usize,
    pub divergence_epsilon: f64,
    pub one_d_points: usize,
    pub one_d_factor: f64,
    pub one_d_rel_tol: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            n_instances: 100,
            max_points: 30,
            dim: 2,
            epsilon_factor: 0.05,
            max_iters: 20_000,
            tol: 1e-8,
            feasibility_tol: 1e-6,
            two_by_two_epsilon: 0.01,
            oracle_tol: 1e-3,
            divergence_pairs: 100,
            divergence_epsilon: 0.5,
            one_d_points: 40,
            one_d_factor: 0.01,
            one_d_rel_tol: 0.05,
        }
    }
}

impl ExperimentConfig for ValidateConfig {
    fn validate(&self, v: &mut Validator) {
        v.at_least("n_instances", self.n_instances, 1);
        v.at_least("max_points", self.max_points, 2);
        v.at_least("dim", self.dim, 1);
        v.positive("epsilon_factor", self.epsilon_factor);
        v.at_least("max_iters", self.max_iters, 1);
        v.non_negative("tol", self.tol);
        v.positive("feasibility_tol", self.feasibility_tol);
        v.positive("two_by_two_epsilon", self.two_by_two_epsilon);
        v.positive("oracle_tol", self.oracle_tol);
        v.at_least("divergence_pairs", self.divergence_pairs, 1);
        v.positive("divergence_epsilon", self.divergence_epsilon);
        v.at_least("one_d_points", self.one_d_points, 2);
        v.positive("one_d_factor", self.one_d_factor);
        v.positive("one_d_rel_tol", self.one_d_rel_tol);
    }
}

fn random_weights(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

fn random_measure(n: usize, dim: usize, shift: f64, rng: &mut RngStream) -> Result<EmpiricalMeasure64> {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| shift + rng.standard_normal()).collect()).collect();
    Ok(EmpiricalMeasure64::normalized(pts, random_weights(n, rng))?)
}

/// Exact LP optimum of a 2×2 problem: the feasible plans form the segment
/// `γ₀₀ = t`, so the optimum sits at one of its two endpoints.
fn two_by_two_lp(c: [[f64; 2]; 2], a: [f64; 2], b: [f64; 2]) -> [[f64; 2]; 2] {
    let plan = |t: f64| [[t, a[0] - t], [b[0] - t, a[1] - b[0] + t]];
    let cost = |g: [[f64; 2]; 2]| (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| g[i][j] * c[i][j]).sum::<f64>();
    let lo = (a[0] - b[1]).max(0.0);
    let hi = a[0].min(b[0]);
    let (p, q) = (plan(lo), plan(hi));
    if cost(p) <= cost(q) {
        p
    } else {
        q
    }
}

pub fn sinkhorn_validate(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<ValidateConfig>(ctx.config)?;
    let root = RngStream::new(ctx.seed, 0);

    let mut csv = Csv::new(&["instance", "m", "n", "epsilon", "iterations", "row_l1", "col_l1", "gibbs_max_rel", "converged"]);
    let (mut worst_row, mut worst_col, mut worst_gibbs) = (0.0f64, 0.0f64, 0.0f64);
    let mut all_converged = true;
    for i in 0..cfg.n_instances {
        let mut r = root.split(i as u64);
        let m = 2 + r.index(cfg.max_points - 1);
        let n = 2 + r.index(cfg.max_points - 1);
        let p = random_measure(m, cfg.dim, 0.0, &mut r)?;
        let q = random_measure(n, cfg.dim, 1.0, &mut r)?;
        let cost = CostMatrix::squared_euclidean(p.points(), q.points())?;
        let eps = cfg.epsilon_factor * cost.median();
        let plan = sinkhorn(&cost, p.weights(), q.weights(), eps, cfg.max_iters, cfg.tol)?;
        let mut gibbs = 0.0f64;
        for a in 0..m {
            for b in 0..n {
                let lhs = plan.gamma[(a, b)].ln() + cost.get(a, b) / eps;
                let rhs = plan.log_u[a] + plan.log_v[b];
                gibbs = gibbs.max((lhs - rhs).abs() / rhs.abs().max(1.0));
            }
        }
        let (row, col) = plan.marginal_errors;
        worst_row = worst_row.max(row);
        worst_col = worst_col.max(col);
        worst_gibbs = worst_gibbs.max(gibbs);
        all_converged &= plan.converged;
        csv.row(&[
            i.to_string(),
            m.to_string(),
            n.to_string(),
            num(eps),
            plan.iterations_used.to_string(),
            num(row),
            num(col),
            num(gibbs),
            plan.converged.to_string(),
        ]);
    }
    ctx.artifacts.write("feasibility.csv", &csv.finish())?;

    // Small-instance oracles.
    let c22 = [[0.0, 1.0], [1.0, 0.0]];
    let mut oracle_gap = 0.0f64;
    for (a, b) in [([0.5, 0.5], [0.5, 0.5]), ([0.7, 0.3], [0.4, 0.6]), ([0.2, 0.8], [0.9, 0.1])] {
        let cost = CostMatrix::new(Matrix64::from_rows(&[c22[0].to_vec(), c22[1].to_vec()])?)?;
        let plan = sinkhorn(&cost, &a, &b, cfg.two_by_two_epsilon, cfg.max_iters, cfg.tol)?;
        let lp = two_by_two_lp(c22, a, b);
        for i in 0..2 {
            for j in 0..2 {
                oracle_gap = oracle_gap.max((plan.gamma[(i, j)] - lp[i][j]).abs());
            }
        }
    }
    let mut indep_gap = 0.0f64;
    let mut r = root.split(1_000_000);
    for k in 0..10 {
        let m = 2 + r.index(8);
        let n = 2 + r.index(8);
        let (a, b) = (random_weights(m, &mut r), random_weights(n, &mut r));
        let zero = CostMatrix::new(Matrix64::zeros(m, n))?;
        let p = random_measure(m, cfg.dim, 0.0, &mut r)?;
        let q = random_measure(n, cfg.dim, 0.0, &mut r)?;
        let random_cost = CostMatrix::squared_euclidean(p.points(), q.points())?;
        let eps = if k % 2 == 0 { 0.01 } else { 1.0 };
        for (cost, e) in [(&zero, eps), (&random_cost, 1e6 * random_cost.median().max(1.0))] {
            let plan = sinkhorn(cost, &a, &b, e, cfg.max_iters, cfg.tol)?;
            for i in 0..m {
                for j in 0..n {
                    indep_gap = indep_gap.max((plan.gamma[(i, j)] - a[i] * b[j]).abs());
                }
            }
        }
    }

    // Divergence sign on random pairs, and zero on identical inputs.
    let mut min_div = f64::INFINITY;
    let mut max_self = 0.0f64;
    for i in 0..cfg.divergence_pairs {
        let mut r = root.split(2_000_000 + i as u64);
        let p = random_measure(2 + r.index(10), cfg.dim, 0.0, &mut r)?;
        let q = random_measure(2 + r.index(10), cfg.dim, 0.5, &mut r)?;
        min_div = min_div.min(sinkhorn_divergence(&p, &q, cfg.divergence_epsilon)?);
        max_self = max_self.max(sinkhorn_divergence(&p, &p, cfg.divergence_epsilon)?.abs());
    }

    // 1-D agreement with the exact quantile coupling.
    let mut r = root.split(3_000_000);
    let xs: Vec<f64> = (0..cfg.one_d_points).map(|_| r.standard_normal()).collect();
    let ys: Vec<f64> = (0..cfg.one_d_points).map(|_| 4.0 + r.standard_normal()).collect();
    let (p1, q1) = (EmpiricalMeasure64::from_scalars(&xs)?, EmpiricalMeasure64::from_scalars(&ys)?);
    let cost = CostMatrix::squared_euclidean(p1.points(), q1.points())?;
    let plan = sinkhorn(&cost, p1.weights(), q1.weights(), cfg.one_d_factor * cost.median(), cfg.max_iters, cfg.tol)?;
    let w2sq = w2_exact_1d(&p1, &q1)?.powi(2);
    let rel = (plan.transport_cost - w2sq).abs() / w2sq;

    let checks = vec![
        Check::new(
            "marginal_feasibility",
            worst_row <= cfg.feasibility_tol && worst_col <= cfg.feasibility_tol,
        )
        .value("max_row_l1", worst_row)
        .value("max_col_l1", worst_col)
        .value("all_converged", all_converged),
        Check::new("gibbs_kernel_consistency", worst_gibbs <= 1e-8).value("max_rel_gap", worst_gibbs),
        Check::new("two_by_two_lp_oracle", oracle_gap <= cfg.oracle_tol).value("max_entry_gap", oracle_gap),
        Check::new("independent_coupling_oracle", indep_gap <= cfg.oracle_tol).value("max_entry_gap", indep_gap),
        Check::new("divergence_nonnegative", min_div >= -1e-9 && max_self <= 1e-9)
            .value("min_divergence", min_div)
            .value("max_self_divergence", max_self),
        Check::new("one_d_matches_exact_w2", rel <= cfg.one_d_rel_tol)
            .value("entropic_cost", plan.transport_cost)
            .value("w2_squared", w2sq)
            .value("rel_gap", rel),
    ];
    Ok(Outcome { config: json, checks })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorDecayConfig {
    pub epsilons: Vec<f64>,
    pub k_max: usize,
    /// Cost rows of the instance.
    pub cost: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Default for ErrorDecayConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.05, 0.1, 0.5],
            k_max: 30,
            cost: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            a: vec![0.7, 0.3],
            b: vec![0.4, 0.6],
        }
    }
}

impl ExperimentConfig for ErrorDecayConfig {
    fn validate(&self, v: &mut Validator) {
        v.each("epsilons", &self.epsilons, |&e| (!(e > 0.0)).then(|| "must be positive".into()));
        v.at_least("k_max", self.k_max, 3);
        let cols = self.cost.first().map_or(0, Vec::len);
        v.each("cost", &self.cost, |row| {
            if row.len() != cols {
                Some("rows must have equal length".into())
            } else if row.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                Some("entries must be non-negative and finite".into())
            } else {
                None
            }
        });
        v.require(self.a.len() == self.cost.len(), "a", "length must equal the number of cost rows");
        v.require(self.b.len() == cols, "b", "length must equal the number of cost columns");
    }
}

pub fn sinkhorn_error_decay(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<ErrorDecayConfig>(ctx.config)?;
    let cost = CostMatrix::new(Matrix64::from_rows(&cfg.cost)?)?;
    let ks: Vec<usize> = (1..=cfg.k_max).collect();
    let mut header = vec!["k".to_string()];
    header.extend(cfg.epsilons.iter().map(|e| format!("error_eps_{}", label(*e))));
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let mut decays = Vec::new();
    for &eps in &cfg.epsilons {
        decays.push(ot::sinkhorn_error_decay(&cost, &cfg.a, &cfg.b, eps, &ks)?);
    }
    for (row, &k) in ks.iter().enumerate() {
        let mut cells = vec![k.to_string()];
        cells.extend(decays.iter().map(|d| num(d.points[row].1)));
        csv.row(&cells);
    }
    ctx.artifacts.write("error_decay.csv", &csv.finish())?;

    let mut checks = Vec::new();
    let mut rates = Vec::new();
    for (&eps, d) in cfg.epsilons.iter().zip(&decays) {
        let above: Vec<f64> = d.points.iter().map(|p| p.1).filter(|&e| e > ERROR_FLOOR).collect();
        let strictly = above.windows(2).all(|w| w[1] < w[0]);
        let (rate, r2) = d.fit.map_or((f64::NAN, f64::NAN), |f| (f.rate, f.r2));
        rates.push((eps, rate));
        checks.push(
            Check::new(format!("decay_eps_{}", label(eps)), rate > 0.0 && rate < 1.0 && strictly)
                .value("rate", rate)
                .value("r2", r2)
                .value("strictly_decreasing", strictly)
                .value("points_above_floor", above.len()),
        );
    }
    // Smaller ε must not contract faster.
    rates.sort_by(|x, y| x.0.total_cmp(&y.0));
    let monotone = rates.windows(2).all(|w| w[0].1 > w[1].1);
    let mut mono = Check::new("rate_monotone_in_epsilon", monotone);
    for (eps, rate) in &rates {
        mono = mono.value(&format!("rate_eps_{}", label(*eps)), *rate);
    }
    checks.push(mono);
    Ok(Outcome { config: json, checks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepTransport {
    Exact,
    Entropic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thm3Config {
    pub n_particles: usize,
    pub start_mean: f64,
    pub start_std: f64,
    pub target_particles: usize,
    pub eta: f64,
    pub n_iters: usize,
    /// Transport used inside each step; `W₂` is always measured exactly in 1-D.
    pub transport: StepTransport,
    pub epsilon_factor: f64,
    /// Marginal tolerance and sweep cap of each entropic step; the flow needs far less than divergence accuracy.
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
    pub min_r2: f64,
    pub monotone_fraction: f64,
    /// Step sizes for the single-particle `|1 − 2η|` check.
    pub single_particle_etas: Vec<f64>,
    /// λ values of the exposed sweep with `φ` centred at the target mean.
    pub lambda_sweep: Vec<f64>,
}

impl Default for Thm3Config {
    fn default() -> Self {
        Self {
            n_particles: 100,
            start_mean: 5.0,
            start_std: 1.0,
            target_particles: 100,
            eta: 0.2,
            n_iters: 30,
            transport: StepTransport::Exact,
            epsilon_factor: 0.01,
            sinkhorn_tol: 1e-6,
            sinkhorn_max_iters: 5000,
            min_r2: 0.95,
            monotone_fraction: 0.9,
            single_particle_etas: vec![0.1, 0.2, 0.3, 0.7],
            lambda_sweep: vec![0.0, 0.25, 0.5, 1.0],
        }
    }
}

impl ExperimentConfig for Thm3Config {
    fn validate(&self, v: &mut Validator) {
        v.at_least("n_particles", self.n_particles, 1);
        v.at_least("target_particles", self.target_particles, 1);
        v.non_negative("start_std", self.start_std);
        v.require(self.eta > 0.0 && self.eta < 1.0, "eta", "must lie in (0, 1)");
        v.at_least("n_iters", self.n_iters, 2);
        v.positive("epsilon_factor", self.epsilon_factor);
        v.positive("sinkhorn_tol", self.sinkhorn_tol);
        v.at_least("sinkhorn_max_iters", self.sinkhorn_max_iters, 1);
        v.require((0.0..=1.0).contains(&self.min_r2), "min_r2", "must lie in [0, 1]");
        v.require((0.0..=1.0).contains(&self.monotone_fraction), "monotone_fraction", "must lie in [0, 1]");
        v.each("single_particle_etas", &self.single_particle_etas, |&e| {
            (!(e > 0.0 && e < 1.0)).then(|| "must lie in (0, 1)".into())
        });
        v.each("lambda_sweep", &self.lambda_sweep, |&l| (!(l >= 0.0)).then(|| "must be non-negative".into()));
    }
}

pub fn thm3_contraction(ctx: &mut RunContext) -> Result<Outcome> {
    let (cfg, json) = load::<Thm3Config>(ctx.config)?;
    let root = RngStream::new(ctx.seed, 0);
    let mut r = root.split(0);
    let target_pts: Vec<f64> = (0..cfg.target_particles).map(|_| r.standard_normal()).collect();
    let mut r = root.split(1);
    let start: Vec<f64> = (0..cfg.n_particles).map(|_| cfg.start_mean + cfg.start_std * r.standard_normal()).collect();
    let target = EmpiricalMeasure64::from_scalars(&target_pts)?;
    let p0 = EmpiricalMeasure64::from_scalars(&start)?;
    let policy = match cfg.transport {
        StepTransport::Exact => TransportPolicy::Exact1d,
        StepTransport::Entropic => TransportPolicy::Entropic {
            epsilon: EpsilonPolicy::MedianScaled(cfg.epsilon_factor),
            max_iters: cfg.sinkhorn_max_iters,
            tol: cfg.sinkhorn_tol,
        },
    };
    let schedule = vec![cfg.eta; cfg.n_iters];
    let f = EnergyFunctional64::transport_only(target.clone());
    let trace = run_flow(&f, &p0, &schedule, policy)?;
    ctx.artifacts.write("flow.csv", &trace.to_csv())?;

    let fit = trace.fit_prefix(cfg.n_iters);
    let (rho, r2) = fit.map_or((f64::NAN, f64::NAN), |g| (g.rate, g.r2));
    // Entropic steps carry a bias of order ε per step; exact steps carry none.
    let slack = match cfg.transport {
        StepTransport::Exact => 1e-9,
        StepTransport::Entropic => {
            let c = CostMatrix::squared_euclidean(p0.points(), target.points())?;
            1e-9 + cfg.epsilon_factor * c.median()
        }
    };
    let steps = trace.records.len() - 1;
    let increases = trace.energy_increases(slack);
    let fraction = (steps - increases) as f64 / steps as f64;

    // Single particle toward a single target: W₂ ratio per step is |1 − 2η|.
    let mut single_gap = 0.0f64;
    let dirac_target = EmpiricalMeasure64::dirac(vec![2.0])?;
    let fd = EnergyFunctional64::transport_only(dirac_target);
    let mut single = Csv::new(&["eta", "k", "w2", "ratio", "expected"]);
    for &eta in &cfg.single_particle_etas {
        let t = run_flow(&fd, &EmpiricalMeasure64::dirac(vec![0.0])?, &[eta; 5], TransportPolicy::Exact1d)?;
        let expected = (1.0 - 2.0 * eta).abs();
        for w in t.records.windows(2) {
            let ratio = w[1].w2_to_target / w[0].w2_to_target;
            single_gap = single_gap.max((ratio - expected).abs());
            single.row(&[num(eta), w[1].k.to_string(), num(w[1].w2_to_target), num(ratio), num(expected)]);
        }
    }
    ctx.artifacts.write("single_particle.csv", &single.finish())?;

    // Exposed sweep: fitted rate against λ with φ centred at the target mean.
    let mut sweep = Csv::new(&["lambda", "rho", "r2", "final_w2"]);
    for &lambda in &cfg.lambda_sweep {
        let phi: Arc<dyn acolab::wgf::Potential<f64>> = if lambda == 0.0 {
            Arc::new(ZeroPotential)
        } else {
            Arc::new(QuadraticPotential { center: target.mean() })
        };
        let fl = EnergyFunctional64::new(target.clone(), lambda, phi)?;
        let t = run_flow(&fl, &p0, &schedule, policy)?;
        let g = t.fit_prefix(cfg.n_iters);
        let last = t.records.last().map_or(f64::NAN, |r| r.w2_to_target);
        sweep.row(&[num(lambda), num(g.map_or(f64::NAN, |g| g.rate)), num(g.map_or(f64::NAN, |g| g.r2)), num(last)]);
    }
    ctx.artifacts.write("lambda_sweep.csv", &sweep.finish())?;

    let checks = vec![
        Check::new("contraction_fit", rho > 0.0 && rho < 1.0 && r2 >= cfg.min_r2)
            .value("rho", rho)
            .value("r2", r2)
            .value("iterations", cfg.n_iters),
        Check::new("energy_monotone", fraction >= cfg.monotone_fraction)
            .value("non_increasing_fraction", fraction)
            .value("increases", increases)
            .value("slack", slack),
        Check::new("single_particle_rate", single_gap <= 1e-9).value("max_abs_gap", single_gap),
    ];
    Ok(Outcome { config: json, checks })
}
