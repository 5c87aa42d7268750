//! Particle Wasserstein gradient flow of `½W₂²(·, target) + λ E[φ]`.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::fmt_f64;
use crate::error::{invalid, Error, Result};
use crate::measures::linalg::sq_dist;
use crate::measures::EmpiricalMeasure;
use crate::ot::{monotone_coupling_1d, sinkhorn, w2_exact_1d, CostMatrix, TransportPlan, DIVERGENCE_MAX_ITERS, DIVERGENCE_TOL};
use crate::scalar::Real;
use crate::stats::{fit_geometric, GeometricFit};

/// Regularizer `φ` with its gradient.
pub trait Potential<T: Real>: Send + Sync {
    fn value(&self, c: &[T]) -> T;
    fn gradient(&self, c: &[T]) -> Vec<T>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl<T: Real> Potential<T> for ZeroPotential {
    fn value(&self, _c: &[T]) -> T {
        T::zero()
    }

    fn gradient(&self, c: &[T]) -> Vec<T> {
        vec![T::zero(); c.len()]
    }
}

/// `φ(c) = ‖c − center‖²`.
#[derive(Debug, Clone)]
pub struct QuadraticPotential<T> {
    pub center: Vec<T>,
}

impl<T: Real> Potential<T> for QuadraticPotential<T> {
    fn value(&self, c: &[T]) -> T {
        sq_dist(c, &self.center)
    }

    fn gradient(&self, c: &[T]) -> Vec<T> {
        c.iter().zip(&self.center).map(|(&x, &m)| T::lit(2.0) * (x - m)).collect()
    }
}

/// `F(P) = ½W₂²(P, target) + λ_reg Σ w_i φ(c_i)`.
#[derive(Clone)]
pub struct EnergyFunctional<T> {
    pub target: EmpiricalMeasure<T>,
    pub lambda_reg: T,
    pub phi: Arc<dyn Potential<T>>,
}

impl<T: Real> fmt::Debug for EnergyFunctional<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnergyFunctional")
            .field("target", &self.target)
            .field("lambda_reg", &self.lambda_reg)
            .finish_non_exhaustive()
    }
}

impl<T: Real> EnergyFunctional<T> {
    pub fn new(target: EmpiricalMeasure<T>, lambda_reg: T, phi: Arc<dyn Potential<T>>) -> Result<Self> {
        if !(lambda_reg >= T::zero()) || !lambda_reg.is_finite() {
            return Err(invalid("lambda_reg", "must be finite and non-negative"));
        }
        Ok(Self {
            target,
            lambda_reg,
            phi,
        })
    }

    /// Pure transport energy with no regularizer.
    pub fn transport_only(target: EmpiricalMeasure<T>) -> Self {
        Self {
            target,
            lambda_reg: T::zero(),
            phi: Arc::new(ZeroPotential),
        }
    }

    fn regularizer(&self, p: &EmpiricalMeasure<T>) -> T {
        p.points()
            .iter()
            .zip(p.weights())
            .map(|(c, &w)| w * self.phi.value(c))
            .sum()
    }
}

/// Regularization strength of the entropic plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub enum EpsilonPolicy<T> {
    Fixed(T),
    /// `factor × median` of the current cost matrix.
    MedianScaled(T),
}

/// How the transport term and its gradient are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub enum TransportPolicy<T> {
    /// Monotone coupling; one-dimensional measures only.
    Exact1d,
    Entropic {
        epsilon: EpsilonPolicy<T>,
        max_iters: usize,
        tol: f64,
    },
}

impl<T: Real> TransportPolicy<T> {
    /// Entropic policy solved to the tight divergence tolerance.
    pub fn entropic(epsilon: EpsilonPolicy<T>) -> Self {
        TransportPolicy::Entropic {
            epsilon,
            max_iters: DIVERGENCE_MAX_ITERS,
            tol: DIVERGENCE_TOL,
        }
    }
}

fn entropic_plan<T: Real>(
    p: &EmpiricalMeasure<T>,
    target: &EmpiricalMeasure<T>,
    epsilon: EpsilonPolicy<T>,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan<T>> {
    let cost = CostMatrix::squared_euclidean(p.points(), target.points())?;
    let eps = match epsilon {
        EpsilonPolicy::Fixed(e) => e,
        EpsilonPolicy::MedianScaled(f) => {
            let m = cost.median();
            if m > T::zero() {
                f * m
            } else {
                f
            }
        }
    };
    sinkhorn(&cost, p.weights(), target.weights(), eps, max_iters, tol)
}

fn check_dims<T: Real>(f: &EnergyFunctional<T>, p: &EmpiricalMeasure<T>) -> Result<()> {
    if p.dim() != f.target.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.target.dim(),
            got: p.dim(),
        });
    }
    Ok(())
}

/// `½·(transport term) + λ_reg Σ w_i φ(c_i)`; the transport term is the
/// exact `W₂²` or the entropic value `OT_ε` depending on `policy`.
pub fn energy<T: Real>(f: &EnergyFunctional<T>, p: &EmpiricalMeasure<T>, policy: TransportPolicy<T>) -> Result<T> {
    check_dims(f, p)?;
    let transport = match policy {
        TransportPolicy::Exact1d => {
            let w = w2_exact_1d(p, &f.target)?;
            w * w
        }
        TransportPolicy::Entropic {
            epsilon,
            max_iters,
            tol,
        } => T::lit(entropic_plan(p, &f.target, epsilon, max_iters, tol)?.dual_value),
    };
    let e = T::lit(0.5) * transport + f.lambda_reg * f.regularizer(p);
    if !e.is_finite() {
        return Err(Error::NonFinite("energy"));
    }
    Ok(e)
}

/// Barycentric projection of each particle onto the target under the policy's plan.
pub fn barycentric_targets<T: Real>(
    f: &EnergyFunctional<T>,
    p: &EmpiricalMeasure<T>,
    policy: TransportPolicy<T>,
) -> Result<Vec<Vec<T>>> {
    check_dims(f, p)?;
    match policy {
        TransportPolicy::Exact1d => {
            let mut num = vec![T::zero(); p.len()];
            for (i, j, m) in monotone_coupling_1d(p, &f.target)? {
                num[i] += m * f.target.points()[j][0];
            }
            Ok(num
                .iter()
                .zip(p.weights())
                .zip(p.points())
                .map(|((&n, &w), c)| if w > T::zero() { vec![n / w] } else { c.clone() })
                .collect())
        }
        TransportPolicy::Entropic {
            epsilon,
            max_iters,
            tol,
        } => {
            let plan = entropic_plan(p, &f.target, epsilon, max_iters, tol)?;
            Ok(plan
                .barycentric_projection(f.target.points())
                .into_iter()
                .zip(p.points())
                .map(|(b, c)| b.unwrap_or_else(|| c.clone()))
                .collect())
        }
    }
}

/// One particle step `c_i ← c_i − η(2(c_i − b_i) + λ_reg ∇φ(c_i))`; weights are kept.
pub fn jko_step<T: Real>(
    f: &EnergyFunctional<T>,
    p: &EmpiricalMeasure<T>,
    eta: T,
    policy: TransportPolicy<T>,
) -> Result<EmpiricalMeasure<T>> {
    if !(eta > T::zero()) {
        return Err(invalid("eta", "must be positive"));
    }
    let bary = barycentric_targets(f, p, policy)?;
    let two = T::lit(2.0);
    let moved = p
        .points()
        .iter()
        .zip(&bary)
        .map(|(c, b)| {
            let grad_phi = f.phi.gradient(c);
            c.iter()
                .zip(b)
                .zip(&grad_phi)
                .map(|((&ci, &bi), &gi)| ci - eta * (two * (ci - bi) + f.lambda_reg * gi))
                .collect()
        })
        .collect();
    p.with_points(moved)
}

/// One row of a [`FlowTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub k: usize,
    pub w2_to_target: f64,
    pub energy: f64,
    /// Step size that produced this iterate; zero at `k = 0`.
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct FlowTrace<T> {
    pub records: Vec<FlowRecord>,
    pub final_measure: EmpiricalMeasure<T>,
    /// Log-linear fit of `W₂` against `k` over the values above `1e-12`.
    pub fit: Option<GeometricFit>,
}

impl<T: Real> FlowTrace<T> {
    /// CSV with columns `k,w2,energy,eta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,w2,energy,eta\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.k,
                fmt_f64(r.w2_to_target),
                fmt_f64(r.energy),
                fmt_f64(r.step_size)
            );
        }
        out
    }

    /// Geometric fit restricted to the first `n` iterations after `k = 0`.
    pub fn fit_prefix(&self, n: usize) -> Option<GeometricFit> {
        let rs: Vec<&FlowRecord> = self.records.iter().take(n + 1).collect();
        let ks: Vec<f64> = rs.iter().map(|r| r.k as f64).collect();
        let ws: Vec<f64> = rs.iter().map(|r| r.w2_to_target).collect();
        fit_geometric(&ks, &ws, 1e-12)
    }

    /// Number of steps whose energy rose by more than `slack`.
    pub fn energy_increases(&self, slack: f64) -> usize {
        self.records.windows(2).filter(|w| w[1].energy > w[0].energy + slack).count()
    }
}

/// `W₂(p, target)`: exact in one dimension, otherwise the square root of the
/// entropic plan's transport cost.
pub fn w2_to_target<T: Real>(p: &EmpiricalMeasure<T>, target: &EmpiricalMeasure<T>, policy: TransportPolicy<T>) -> Result<f64> {
    if p.dim() == 1 && target.dim() == 1 {
        return Ok(w2_exact_1d(p, target)?.as_f64());
    }
    let (epsilon, max_iters, tol) = match policy {
        TransportPolicy::Entropic {
            epsilon,
            max_iters,
            tol,
        } => (epsilon, max_iters, tol),
        TransportPolicy::Exact1d => return Err(Error::NotOneDimensional(p.dim())),
    };
    Ok(entropic_plan(p, target, epsilon, max_iters, tol)?.transport_cost.max(0.0).sqrt())
}

/// Iterates [`jko_step`] over `schedule`, recording distance and energy.
pub fn run_flow<T: Real>(
    f: &EnergyFunctional<T>,
    p0: &EmpiricalMeasure<T>,
    schedule: &[T],
    policy: TransportPolicy<T>,
) -> Result<FlowTrace<T>> {
    if schedule.is_empty() {
        return Err(Error::Empty("schedule"));
    }
    let record = |k: usize, p: &EmpiricalMeasure<T>, eta: f64| -> Result<FlowRecord> {
        Ok(FlowRecord {
            k,
            w2_to_target: w2_to_target(p, &f.target, policy)?,
            energy: energy(f, p, policy)?.as_f64(),
            step_size: eta,
        })
    };
    let mut p = p0.clone();
    let mut records = vec![record(0, &p, 0.0)?];
    for (k, &eta) in schedule.iter().enumerate() {
        p = jko_step(f, &p, eta, policy)?;
        records.push(record(k + 1, &p, eta.as_f64())?);
    }
    let ks: Vec<f64> = records.iter().map(|r| r.k as f64).collect();
    let ws: Vec<f64> = records.iter().map(|r| r.w2_to_target).collect();
    Ok(FlowTrace {
        fit: fit_geometric(&ks, &ws, 1e-12),
        records,
        final_measure: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::RngStream;

    fn m1(xs: &[f64]) -> EmpiricalMeasure<f64> {
        EmpiricalMeasure::from_scalars(xs).unwrap()
    }

    #[test]
    fn energy_examples() {
        let f = EnergyFunctional::transport_only(m1(&[0.0, 1.0]));
        let e = energy(&f, &m1(&[0.0, 1.0]), TransportPolicy::entropic(EpsilonPolicy::Fixed(1e-3))).unwrap();
        assert!(e.abs() < 1e-2);
        assert_eq!(energy(&f, &m1(&[0.0, 1.0]), TransportPolicy::Exact1d).unwrap(), 0.0);

        let f = EnergyFunctional::transport_only(m1(&[2.0]));
        assert_eq!(energy(&f, &m1(&[0.0]), TransportPolicy::Exact1d).unwrap(), 2.0);
        let f = EnergyFunctional::new(m1(&[2.0]), 1.0, Arc::new(QuadraticPotential { center: vec![1.0] })).unwrap();
        assert_eq!(energy(&f, &m1(&[0.0]), TransportPolicy::Exact1d).unwrap(), 3.0);
        assert_eq!(energy(&f, &m1(&[0.0]), TransportPolicy::entropic(EpsilonPolicy::Fixed(0.1))).unwrap(), 3.0);
    }

    #[test]
    fn single_particle_step() {
        let f = EnergyFunctional::transport_only(m1(&[2.0]));
        for policy in [TransportPolicy::Exact1d, TransportPolicy::entropic(EpsilonPolicy::Fixed(0.5))] {
            let p = jko_step(&f, &m1(&[0.0]), 0.25, policy).unwrap();
            assert_eq!(p.points()[0][0], 1.0);
        }
    }

    #[test]
    fn displacement_matches_finite_differences() {
        let mut rng = RngStream::new(12, 0);
        let xs: Vec<f64> = (0..5).map(|_| rng.normal(1.0, 1.0)).collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let f = EnergyFunctional::transport_only(m1(&ys));
        let p = m1(&xs);
        let median = CostMatrix::squared_euclidean(p.points(), f.target.points()).unwrap().median();
        let policy = TransportPolicy::entropic(EpsilonPolicy::Fixed(0.01 * median));
        let eta = 0.1;
        let stepped = jko_step(&f, &p, eta, policy).unwrap();
        let h = 1e-5;
        for i in 0..5 {
            let shifted = |d: f64| {
                let mut v = xs.clone();
                v[i] += d;
                energy(&f, &m1(&v), policy).unwrap()
            };
            let grad = (shifted(h) - shifted(-h)) / (2.0 * h);
            let predicted = -2.0 * eta / 0.2 * grad;
            let applied = stepped.points()[i][0] - xs[i];
            assert!((applied - predicted).abs() <= 1e-3 * applied.abs().max(1e-6), "i={i}: {applied} vs {predicted}");
        }
    }

    #[test]
    fn barycenters_stay_in_target_hull() {
        let mut rng = RngStream::new(13, 0);
        let pts: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.normal(3.0, 2.0), rng.standard_normal()]).collect();
        let tgt: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.standard_normal(), rng.normal(-1.0, 0.5)]).collect();
        let f = EnergyFunctional::transport_only(EmpiricalMeasure::uniform(tgt.clone()).unwrap());
        let b = barycentric_targets(&f, &EmpiricalMeasure::uniform(pts).unwrap(), TransportPolicy::entropic(EpsilonPolicy::MedianScaled(0.05))).unwrap();
        for k in 0..2 {
            let lo = tgt.iter().map(|t| t[k]).fold(f64::INFINITY, f64::min);
            let hi = tgt.iter().map(|t| t[k]).fold(f64::NEG_INFINITY, f64::max);
            assert!(b.iter().all(|v| v[k] >= lo - 1e-12 && v[k] <= hi + 1e-12));
        }
    }

    #[test]
    fn exact_flow_contracts_geometrically() {
        let mut rng = RngStream::new(14, 0);
        let xs: Vec<f64> = (0..100).map(|_| rng.normal(5.0, 1.0)).collect();
        let ys: Vec<f64> = (0..100).map(|_| rng.standard_normal()).collect();
        let f = EnergyFunctional::transport_only(m1(&ys));
        let tr = run_flow(&f, &m1(&xs), &[0.2; 30], TransportPolicy::Exact1d).unwrap();
        assert_eq!(tr.records.len(), 31);
        let fit = tr.fit.unwrap();
        assert!((fit.rate - 0.6).abs() < 1e-9 && fit.r2 > 0.999_999);
        assert_eq!(tr.energy_increases(1e-9), 0);
        assert_eq!(tr, run_flow(&f, &m1(&xs), &[0.2; 30], TransportPolicy::Exact1d).unwrap());
        assert!(tr.to_csv().starts_with("k,w2,energy,eta\n0,"));
    }

    #[test]
    fn regularizer_strength_speeds_contraction() {
        let target = m1(&[1.0]);
        let rates: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|&lam| {
                let f = EnergyFunctional::new(target.clone(), lam, Arc::new(QuadraticPotential { center: vec![1.0] })).unwrap();
                run_flow(&f, &m1(&[6.0]), &[0.1; 15], TransportPolicy::Exact1d).unwrap().fit.unwrap().rate
            })
            .collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{rates:?}");
        assert!((rates[0] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn flow_from_target_stays_near_bias_floor() {
        let f = EnergyFunctional::transport_only(m1(&[-1.0, 0.0, 1.0]));
        let tr = run_flow(&f, &m1(&[-1.0, 0.0, 1.0]), &[0.2; 5], TransportPolicy::entropic(EpsilonPolicy::Fixed(0.01))).unwrap();
        assert!(tr.records.iter().all(|r| r.w2_to_target < 1e-6));
    }
}
