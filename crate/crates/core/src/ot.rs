//! Entropic optimal transport in the log domain, the Sinkhorn divergence,
//! and exact one-dimensional transport used as a reference.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::linalg::{sq_dist, LinearMap, Matrix};
use crate::measures::EmpiricalMeasure;
use crate::scalar::{mass_tolerance, Real};
use crate::stats::{fit_geometric, GeometricFit};

pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Largest dense plan written by [`TransportPlan::to_json`].
pub const EXPORT_LIMIT: usize = 4_000_000;

/// How a cost matrix was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostKind {
    SquaredEuclidean,
    /// Latent distance plus `λ‖c_m − T⁻¹(z*_n)‖²`.
    Composite { lambda: f64 },
    Custom,
}

/// Non-negative finite `m × n` ground cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct CostMatrix<T> {
    entries: Matrix<T>,
    kind: CostKind,
}

impl<T: Real> CostMatrix<T> {
    pub fn new(entries: Matrix<T>) -> Result<Self> {
        Self::with_kind(entries, CostKind::Custom)
    }

    fn with_kind(entries: Matrix<T>, kind: CostKind) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::Empty("cost matrix"));
        }
        if entries.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        if entries.as_slice().iter().any(|&v| v < T::zero()) {
            return Err(invalid("cost", "entries must be non-negative"));
        }
        Ok(Self { entries, kind })
    }

    /// `‖x_i − y_j‖²` between two point sets.
    pub fn squared_euclidean(xs: &[Vec<T>], ys: &[Vec<T>]) -> Result<Self> {
        let mut m = Matrix::zeros(xs.len(), ys.len());
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                if x.len() != y.len() {
                    return Err(Error::DimensionMismatch {
                        expected: x.len(),
                        got: y.len(),
                    });
                }
                m[(i, j)] = sq_dist(x, y);
            }
        }
        Self::with_kind(m, CostKind::SquaredEuclidean)
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Matrix<T> {
        &self.entries
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    /// Median entry (mean of the two middle entries for even counts).
    pub fn median(&self) -> T {
        let mut v: Vec<T> = self.entries.as_slice().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
        }
    }
}

/// Condition-consistency term of the composite cost.
#[derive(Debug, Clone, Copy)]
pub struct ConditionTerm<'a, T> {
    /// One condition per source latent.
    pub conditions: &'a [Vec<T>],
    pub t_inv: &'a LinearMap<T>,
    pub lambda: T,
}

/// `C_mn = ‖z_m − z*_n‖² + λ‖c_m − T⁻¹(z*_n)‖²`; the squared Euclidean cost
/// when `cond` is absent.
pub fn cost_matrix<T: Real>(
    z: &EmpiricalMeasure<T>,
    z_star: &EmpiricalMeasure<T>,
    cond: Option<ConditionTerm<'_, T>>,
) -> Result<CostMatrix<T>> {
    if z.dim() != z_star.dim() {
        return Err(Error::DimensionMismatch {
            expected: z.dim(),
            got: z_star.dim(),
        });
    }
    let base = CostMatrix::squared_euclidean(z.points(), z_star.points())?;
    let Some(term) = cond else {
        return Ok(base);
    };
    if term.conditions.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: term.conditions.len(),
        });
    }
    if !(term.lambda >= T::zero()) {
        return Err(invalid("lambda", "must be non-negative"));
    }
    let mapped = z_star
        .points()
        .iter()
        .map(|p| term.t_inv.apply(p))
        .collect::<Result<Vec<_>>>()?;
    let mut m = base.entries;
    for (i, c) in term.conditions.iter().enumerate() {
        for (j, t) in mapped.iter().enumerate() {
            if c.len() != t.len() {
                return Err(Error::DimensionMismatch {
                    expected: t.len(),
                    got: c.len(),
                });
            }
            m[(i, j)] += term.lambda * sq_dist(c, t);
        }
    }
    CostMatrix::with_kind(
        m,
        CostKind::Composite {
            lambda: term.lambda.as_f64(),
        },
    )
}

/// Result of a Sinkhorn solve.
///
/// The plan satisfies `log γ_mn + C_mn/ε = log_u_m + log_v_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct TransportPlan<T> {
    pub gamma: Matrix<T>,
    /// Log scalings `f/ε + log a`.
    pub log_u: Vec<T>,
    /// Log scalings `g/ε + log b`.
    pub log_v: Vec<T>,
    /// Dual potentials.
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub epsilon: T,
    pub iterations_used: usize,
    /// L1 errors of the (row, column) marginals.
    pub marginal_errors: (f64, f64),
    pub converged: bool,
    /// `⟨a, f⟩ + ⟨b, g⟩`, the entropic transport value.
    pub dual_value: f64,
    /// `⟨γ, C⟩`.
    pub transport_cost: f64,
}

impl<T: Real> TransportPlan<T> {
    /// Scaling vectors `u = exp(log_u)`; may overflow for small `ε`.
    pub fn u(&self) -> Vec<T> {
        self.log_u.iter().map(|v| v.exp()).collect()
    }

    pub fn v(&self) -> Vec<T> {
        self.log_v.iter().map(|v| v.exp()).collect()
    }

    /// `Σ_j γ_ij y_j / Σ_j γ_ij` for each source `i`; rows with no mass map to themselves as `None`.
    pub fn barycentric_projection(&self, targets: &[Vec<T>]) -> Vec<Option<Vec<T>>> {
        (0..self.gamma.rows())
            .map(|i| {
                let row = self.gamma.row(i);
                let mass: T = row.iter().copied().sum();
                if mass <= T::zero() {
                    return None;
                }
                let d = targets[0].len();
                let mut b = vec![T::zero(); d];
                for (&w, y) in row.iter().zip(targets) {
                    b.iter_mut().zip(y).for_each(|(bk, &yk)| *bk += w * yk);
                }
                b.iter_mut().for_each(|v| *v /= mass);
                Some(b)
            })
            .collect()
    }

    /// Dense JSON `{gamma, rows, cols, epsilon, iterations_used, marginal_errors}`.
    pub fn to_json(&self) -> Result<String> {
        let entries = self.gamma.rows() * self.gamma.cols();
        if entries > EXPORT_LIMIT {
            return Err(Error::SizeGuard {
                entries,
                limit: EXPORT_LIMIT,
            });
        }
        serde_json::to_string(&serde_json::json!({
            "rows": self.gamma.rows(),
            "cols": self.gamma.cols(),
            "gamma": self.gamma.as_slice().iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            "epsilon": self.epsilon.as_f64(),
            "iterations_used": self.iterations_used,
            "marginal_errors": [self.marginal_errors.0, self.marginal_errors.1],
            "converged": self.converged,
        }))
        .map_err(|e| Error::Serde(e.to_string()))
    }
}

fn check_weights<T: Real>(w: &[T], n: usize, name: &'static str) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.len(),
        });
    }
    if w.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
        return Err(invalid(name, "weights must be finite and non-negative"));
    }
    let s: T = w.iter().copied().sum();
    if (s - T::one()).abs() > mass_tolerance::<T>() * T::lit(1e3) {
        return Err(Error::InvalidWeights { sum: s.as_f64() });
    }
    Ok(())
}

/// `log Σ_k exp(x_k)`, with `−∞` for an all-`−∞` input.
fn logsumexp<T: Real>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<T>().ln()
}

#[allow(clippy::too_many_arguments)]
fn assemble<T: Real>(
    cost: &CostMatrix<T>,
    a: &[T],
    b: &[T],
    f: Vec<T>,
    g: Vec<T>,
    epsilon: T,
    iterations_used: usize,
    tol: f64,
) -> TransportPlan<T> {
    let (m, n) = (cost.rows(), cost.cols());
    let log_u: Vec<T> = f.iter().zip(a).map(|(&fi, &ai)| fi / epsilon + ai.ln()).collect();
    let log_v: Vec<T> = g.iter().zip(b).map(|(&gj, &bj)| gj / epsilon + bj.ln()).collect();
    let mut gamma = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            gamma[(i, j)] = (log_u[i] + log_v[j] - cost.get(i, j) / epsilon).exp();
        }
    }
    let (row_err, col_err) = marginal_errors(&gamma, a, b);
    let transport_cost = gamma
        .as_slice()
        .iter()
        .zip(cost.entries.as_slice())
        .map(|(&p, &c)| (p * c).as_f64())
        .sum();
    let dual_value = f.iter().zip(a).map(|(&x, &w)| (x * w).as_f64()).sum::<f64>()
        + g.iter().zip(b).map(|(&x, &w)| (x * w).as_f64()).sum::<f64>();
    TransportPlan {
        gamma,
        log_u,
        log_v,
        f,
        g,
        epsilon,
        iterations_used,
        marginal_errors: (row_err, col_err),
        converged: row_err.max(col_err) < tol,
        dual_value,
        transport_cost,
    }
}

fn marginal_errors<T: Real>(gamma: &Matrix<T>, a: &[T], b: &[T]) -> (f64, f64) {
    let mut col = vec![0.0f64; gamma.cols()];
    let mut row_err = 0.0;
    for i in 0..gamma.rows() {
        let r = gamma.row(i);
        row_err += (r.iter().map(|v| v.as_f64()).sum::<f64>() - a[i].as_f64()).abs();
        col.iter_mut().zip(r).for_each(|(c, v)| *c += v.as_f64());
    }
    let col_err = col.iter().zip(b).map(|(c, w)| (c - w.as_f64()).abs()).sum();
    (row_err, col_err)
}

/// Log-domain Sinkhorn on potentials `(f, g)`.
///
/// Each iteration updates `g` then `f`, so the row marginal is exact up to
/// rounding after every iteration; the loop stops once the column L1 error
/// drops below `tol` or after `max_iters` iterations. A plan is returned in
/// both cases with `converged` set accordingly. Single-support inputs return
/// the unique coupling `a bᵀ` without iterating.
pub fn sinkhorn<T: Real>(
    cost: &CostMatrix<T>,
    a: &[T],
    b: &[T],
    epsilon: T,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan<T>> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(invalid("epsilon", "must be positive and finite"));
    }
    let (m, n) = (cost.rows(), cost.cols());
    check_weights(a, m, "a")?;
    check_weights(b, n, "b")?;
    if n == 1 {
        let f = (0..m).map(|i| cost.get(i, 0)).collect();
        return Ok(assemble(cost, a, b, f, vec![T::zero()], epsilon, 0, tol));
    }
    if m == 1 {
        let g = (0..n).map(|j| cost.get(0, j)).collect();
        return Ok(assemble(cost, a, b, vec![T::zero()], g, epsilon, 0, tol));
    }
    let mut f = vec![T::zero(); m];
    let mut g = vec![T::zero(); n];
    let iters = sinkhorn_loop(cost, a, b, epsilon, &mut f, &mut g, max_iters, tol)?;
    Ok(assemble(cost, a, b, f, g, epsilon, iters, tol))
}

/// Alternating g-then-f updates from the given potentials; stops once the
/// column L1 error is below `tol` or after `max_iters` sweeps.
#[allow(clippy::too_many_arguments)]
fn sinkhorn_loop<T: Real>(
    cost: &CostMatrix<T>,
    a: &[T],
    b: &[T],
    epsilon: T,
    f: &mut [T],
    g: &mut [T],
    max_iters: usize,
    tol: f64,
) -> Result<usize> {
    let (m, n) = (cost.rows(), cost.cols());
    let log_a: Vec<T> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<T> = b.iter().map(|v| v.ln()).collect();
    let mut iters = 0;
    let mut col = vec![T::zero(); n];
    while iters < max_iters {
        for j in 0..n {
            let lse = logsumexp((0..m).map(|i| log_a[i] + (f[i] - cost.get(i, j)) / epsilon));
            g[j] = -epsilon * lse;
        }
        for i in 0..m {
            let lse = logsumexp((0..n).map(|j| log_b[j] + (g[j] - cost.get(i, j)) / epsilon));
            f[i] = -epsilon * lse;
        }
        iters += 1;
        col.iter_mut().for_each(|c| *c = T::zero());
        for i in 0..m {
            for j in 0..n {
                col[j] += (log_a[i] + log_b[j] + (f[i] + g[j] - cost.get(i, j)) / epsilon).exp();
            }
        }
        let err: f64 = col.iter().zip(b).map(|(c, w)| (*c - *w).abs().as_f64()).sum();
        if !err.is_finite() {
            return Err(Error::NonFinite("sinkhorn potentials"));
        }
        if err < tol {
            break;
        }
    }
    Ok(iters)
}

/// `ε_max − (ε_max − ε_min)·k/K`; the endpoints are returned exactly and `K = 0` yields `ε_max`.
pub fn adaptive_epsilon<T: Real>(k: usize, big_k: usize, eps_min: T, eps_max: T) -> Result<T> {
    if k > big_k {
        return Err(invalid("k", format!("{k} exceeds K = {big_k}")));
    }
    if !(eps_min > T::zero()) || eps_min > eps_max {
        return Err(invalid("eps_min", "need 0 < eps_min <= eps_max"));
    }
    if big_k == 0 || k == 0 {
        return Ok(eps_max);
    }
    if k == big_k {
        return Ok(eps_min);
    }
    Ok(eps_max - (eps_max - eps_min) * T::from_count(k) / T::from_count(big_k))
}

/// Symmetric Sinkhorn for `OT_ε(a, a)` on a symmetric cost.
///
/// Alternating updates oscillate on self-transport and can stall for
/// thousands of iterations; the averaged map `f ← ½(f + T(f))` has the same
/// fixed point and contracts quickly. The returned plan has `f = g`.
pub fn sinkhorn_symmetric<T: Real>(cost: &CostMatrix<T>, a: &[T], epsilon: T, max_iters: usize, tol: f64) -> Result<TransportPlan<T>> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(invalid("epsilon", "must be positive and finite"));
    }
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cost.cols(),
        });
    }
    check_weights(a, n, "a")?;
    let log_a: Vec<T> = a.iter().map(|v| v.ln()).collect();
    let half = T::lit(0.5);
    let mut f = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut iters = 0;
    while iters < max_iters {
        for i in 0..n {
            let lse = logsumexp((0..n).map(|k| log_a[k] + (f[k] - cost.get(i, k)) / epsilon));
            next[i] = half * (f[i] - epsilon * lse);
        }
        std::mem::swap(&mut f, &mut next);
        iters += 1;
        let mut err = 0.0;
        for i in 0..n {
            let row: T = (0..n).map(|k| (log_a[i] + log_a[k] + (f[i] + f[k] - cost.get(i, k)) / epsilon).exp()).sum();
            err += (row - a[i]).abs().as_f64();
        }
        if !err.is_finite() {
            return Err(Error::NonFinite("sinkhorn potentials"));
        }
        if err < tol {
            break;
        }
    }
    Ok(assemble(cost, a, a, f.clone(), f, epsilon, iters, tol))
}

/// Iteration budget and tolerance of the inner solves in [`sinkhorn_divergence`].
pub const DIVERGENCE_MAX_ITERS: usize = 20_000;
pub const DIVERGENCE_TOL: f64 = 1e-10;

/// Entropic transport value `OT_ε(p, q)`, converged to [`DIVERGENCE_TOL`].
/// Identical inputs go through [`sinkhorn_symmetric`].
pub fn entropic_ot<T: Real>(p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>, epsilon: T) -> Result<TransportPlan<T>> {
    if p == q {
        return entropic_ot_self(p, epsilon);
    }
    let cost = CostMatrix::squared_euclidean(p.points(), q.points())?;
    let plan = sinkhorn(&cost, p.weights(), q.weights(), epsilon, DIVERGENCE_MAX_ITERS, DIVERGENCE_TOL)?;
    converged(plan)
}

/// Self-transport value `OT_ε(p, p)` through [`sinkhorn_symmetric`].
pub fn entropic_ot_self<T: Real>(p: &EmpiricalMeasure<T>, epsilon: T) -> Result<TransportPlan<T>> {
    let cost = CostMatrix::squared_euclidean(p.points(), p.points())?;
    converged(sinkhorn_symmetric(&cost, p.weights(), epsilon, DIVERGENCE_MAX_ITERS, DIVERGENCE_TOL)?)
}

fn converged<T: Real>(plan: TransportPlan<T>) -> Result<TransportPlan<T>> {
    if !plan.converged {
        return Err(Error::NotConverged {
            iterations: plan.iterations_used,
            error: plan.marginal_errors.1,
        });
    }
    Ok(plan)
}

/// Debiased divergence `½(OT(p,q) + OT(q,p)) − ½OT(p,p) − ½OT(q,q)`.
///
/// The cross term is averaged over both orientations so swapping the
/// arguments yields the identical value.
pub fn sinkhorn_divergence<T: Real>(p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>, epsilon: T) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let pq = entropic_ot(p, q, epsilon)?.dual_value;
    let qp = entropic_ot(q, p, epsilon)?.dual_value;
    let pp = entropic_ot_self(p, epsilon)?.dual_value;
    let qq = entropic_ot_self(q, epsilon)?.dual_value;
    Ok(0.5 * pq + 0.5 * qp - 0.5 * pp - 0.5 * qq)
}

/// Monotone coupling of two 1-D measures as `(i, j, mass)` triples over the
/// original indices.
pub fn monotone_coupling_1d<T: Real>(p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>) -> Result<Vec<(usize, usize, T)>> {
    for m in [p, q] {
        if m.dim() != 1 {
            return Err(Error::NotOneDimensional(m.dim()));
        }
    }
    let order = |m: &EmpiricalMeasure<T>| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&i, &j| m.points()[i][0].partial_cmp(&m.points()[j][0]).expect("finite").then(i.cmp(&j)));
        idx
    };
    let (op, oq) = (order(p), order(q));
    let (wp, wq) = (p.weights(), q.weights());
    let mut out = Vec::with_capacity(p.len() + q.len());
    let (mut i, mut j) = (0, 0);
    let (mut rp, mut rq) = (wp[op[0]], wq[oq[0]]);
    loop {
        let mass = rp.min(rq);
        if mass > T::zero() {
            out.push((op[i], oq[j], mass));
        }
        rp -= mass;
        rq -= mass;
        if i + 1 == op.len() && j + 1 == oq.len() {
            break;
        }
        // One side is now exactly exhausted; rounding leftovers at the end ride along.
        if (rp <= rq && i + 1 < op.len()) || j + 1 == oq.len() {
            i += 1;
            rp = wp[op[i]];
        } else {
            j += 1;
            rq = wq[oq[j]];
        }
    }
    Ok(out)
}

/// Exact `W₂(p, q)` for 1-D measures via the monotone (quantile) coupling.
pub fn w2_exact_1d<T: Real>(p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>) -> Result<T> {
    let coupling = monotone_coupling_1d(p, q)?;
    let s: T = coupling
        .iter()
        .map(|&(i, j, m)| {
            let d = p.points()[i][0] - q.points()[j][0];
            m * d * d
        })
        .sum();
    Ok(s.max(T::zero()).sqrt())
}

/// Frobenius error of truncated Sinkhorn runs against a long reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecay {
    pub points: Vec<(usize, f64)>,
    /// Log-linear fit over the points above [`ERROR_FLOOR`].
    pub fit: Option<GeometricFit>,
}

pub const ERROR_FLOOR: f64 = 1e-13;

/// `‖γ^(k) − γ*‖_F` for each `k`, with `γ*` from `10·max(k)` iterations.
pub fn sinkhorn_error_decay<T: Real>(cost: &CostMatrix<T>, a: &[T], b: &[T], epsilon: T, k_list: &[usize]) -> Result<ErrorDecay> {
    let k_max = k_list.iter().copied().max().ok_or(Error::Empty("k_list"))?;
    let reference = sinkhorn(cost, a, b, epsilon, 10 * k_max.max(1), 0.0)?;
    let points = k_list
        .iter()
        .map(|&k| {
            let plan = sinkhorn(cost, a, b, epsilon, k, 0.0)?;
            let err: f64 = plan
                .gamma
                .as_slice()
                .iter()
                .zip(reference.gamma.as_slice())
                .map(|(x, y)| (*x - *y).as_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            Ok((k, err))
        })
        .collect::<Result<Vec<_>>>()?;
    let ks: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let es: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(ErrorDecay {
        fit: fit_geometric(&ks, &es, ERROR_FLOOR),
        points,
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
    fn cost_examples() {
        let c = cost_matrix(&m1(&[0.0]), &m1(&[0.0]), None).unwrap();
        assert_eq!(c.entries().as_slice(), &[0.0]);
        let c = cost_matrix(&m1(&[0.0]), &m1(&[3.0]), None).unwrap();
        assert_eq!(c.entries().as_slice(), &[9.0]);
        let id = LinearMap::identity(1);
        let conds = vec![vec![1.0]];
        let term = ConditionTerm {
            conditions: &conds,
            t_inv: &id,
            lambda: 2.0,
        };
        let c = cost_matrix(&m1(&[0.0]), &m1(&[3.0]), Some(term)).unwrap();
        assert_eq!(c.entries().as_slice(), &[17.0]);
        assert_eq!(c.kind(), CostKind::Composite { lambda: 2.0 });
        assert!(CostMatrix::new(Matrix::from_row_major(1, 1, vec![-1.0]).unwrap()).is_err());
    }

    #[test]
    fn symmetric_solver_agrees_and_converges_on_self_transport() {
        // Three points where the alternating solver is still 1.6e-10 off after 20000 sweeps.
        let pts = vec![
            vec![-1.6477251375629896, 1.83385563900627],
            vec![0.7080759725900533, -0.45857565235150727],
            vec![-0.6531725443767383, -0.02048531525682715],
        ];
        let w = vec![0.5, 0.2, 0.3];
        let cost = CostMatrix::squared_euclidean(&pts, &pts).unwrap();
        let sym = sinkhorn_symmetric(&cost, &w, 0.5, 20_000, 1e-12).unwrap();
        assert!(sym.converged && sym.iterations_used < 1_000, "{} iterations", sym.iterations_used);
        assert!(sym.marginal_errors.0 < 1e-12 && sym.marginal_errors.1 < 1e-12);
        assert_eq!(sym.f, sym.g);
        let alt = sinkhorn(&cost, &w, &w, 0.5, 200_000, 1e-12).unwrap();
        assert!((alt.dual_value - sym.dual_value).abs() < 1e-9);
        assert!(sinkhorn_symmetric(&CostMatrix::squared_euclidean(&pts[..2], &pts).unwrap(), &w, 0.5, 10, 1e-9).is_err());
    }

    #[test]
    fn zero_cost_gives_independent_coupling() {
        let cost = CostMatrix::<f64>::new(Matrix::zeros(3, 2)).unwrap();
        let (a, b) = ([0.2, 0.3, 0.5], [0.6, 0.4]);
        for eps in [0.01, 1.0, 100.0] {
            let p = sinkhorn(&cost, &a, &b, eps, 200, 1e-9).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    assert!((p.gamma[(i, j)] - a[i] * b[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_by_two_matches_lp_oracle() {
        // Feasible plans are [[t, .5−t], [.5−t, t]]; cost 1 − 2t is minimal at t = .5.
        let cost = CostMatrix::<f64>::new(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        let p = sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], 0.01, 200, 1e-9).unwrap();
        let lp = [0.5, 0.0, 0.0, 0.5];
        for (x, y) in p.gamma.as_slice().iter().zip(lp) {
            assert!((x - y).abs() < 1e-3);
        }
        assert!(p.converged);
    }

    #[test]
    fn large_epsilon_tends_to_product() {
        let mut rng = RngStream::new(1, 0);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.standard_normal()]).collect();
        let ys: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.standard_normal()]).collect();
        let cost = CostMatrix::squared_euclidean(&xs, &ys).unwrap();
        let (a, b) = (vec![0.2; 5], vec![0.25; 4]);
        let p = sinkhorn(&cost, &a, &b, 1e6, 200, 1e-12).unwrap();
        assert!(p.gamma.as_slice().iter().all(|g| (g - 0.05).abs() < 1e-5));
    }

    #[test]
    fn rows_exact_and_gibbs_factorization() {
        let mut rng = RngStream::new(2, 0);
        for _ in 0..20 {
            let (m, n) = (2 + rng.index(8), 2 + rng.index(8));
            let xs: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.standard_normal(), rng.standard_normal()]).collect();
            let ys: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.standard_normal(), rng.standard_normal()]).collect();
            let cost = CostMatrix::squared_euclidean(&xs, &ys).unwrap();
            let a = EmpiricalMeasure::normalized(xs.clone(), (0..m).map(|_| rng.uniform() + 0.1).collect()).unwrap();
            let b = EmpiricalMeasure::normalized(ys.clone(), (0..n).map(|_| rng.uniform() + 0.1).collect()).unwrap();
            // Deliberately too few iterations to converge.
            let p = sinkhorn(&cost, a.weights(), b.weights(), 0.05, 3, 1e-12).unwrap();
            assert!(p.marginal_errors.0 < 1e-6);
            for i in 0..m {
                for j in 0..n {
                    let lhs = p.gamma[(i, j)].ln() + cost.get(i, j) / p.epsilon;
                    let rhs = p.log_u[i] + p.log_v[j];
                    assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cost = CostMatrix::new(Matrix::zeros(2, 2)).unwrap();
        assert!(sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], 0.0, 10, 1e-6).is_err());
        assert!(sinkhorn(&cost, &[0.5, 0.6], &[0.5, 0.5], 1.0, 10, 1e-6).is_err());
        assert!(sinkhorn(&cost, &[1.0], &[0.5, 0.5], 1.0, 10, 1e-6).is_err());
    }

    #[test]
    fn adaptive_epsilon_examples() {
        assert_eq!(adaptive_epsilon(0, 10, 0.01, 1.0).unwrap(), 1.0);
        assert_eq!(adaptive_epsilon(10, 10, 0.01, 1.0).unwrap(), 0.01);
        assert!((adaptive_epsilon(5, 10, 0.01f64, 1.0).unwrap() - 0.505).abs() < 1e-15);
        assert!(adaptive_epsilon(11, 10, 0.01, 1.0).is_err());
        assert!(adaptive_epsilon(1, 10, 1.0, 0.5).is_err());
    }

    #[test]
    fn divergence_examples() {
        let p = m1(&[0.0, 1.0, 3.0]);
        assert_eq!(sinkhorn_divergence(&p, &p, 0.1).unwrap(), 0.0);
        let s = sinkhorn_divergence(&m1(&[0.0]), &m1(&[1.0]), 0.01).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let q = m1(&[0.5, 2.0]);
        assert_eq!(sinkhorn_divergence(&p, &q, 0.2).unwrap(), sinkhorn_divergence(&q, &p, 0.2).unwrap());
    }

    #[test]
    fn w2_examples() {
        assert_eq!(w2_exact_1d(&m1(&[0.0]), &m1(&[1.0])).unwrap(), 1.0);
        assert_eq!(w2_exact_1d(&m1(&[0.0, 2.0]), &m1(&[1.0, 3.0])).unwrap(), 1.0);
        assert_eq!(w2_exact_1d(&m1(&[3.0, 0.0]), &m1(&[1.0, 4.0])).unwrap(), 1.0);
        let two_d = EmpiricalMeasure::uniform(vec![vec![0.0, 0.0]]).unwrap();
        assert!(matches!(w2_exact_1d(&two_d, &two_d), Err(Error::NotOneDimensional(2))));
    }

    #[test]
    fn w2_weighted_matches_quantile_integral() {
        // Oracle: integrate (F⁻¹(u) − G⁻¹(u))² on a fine midpoint grid.
        let p = EmpiricalMeasure::new(vec![vec![0.0], vec![1.0], vec![4.0]], vec![0.2, 0.5, 0.3]).unwrap();
        let q = EmpiricalMeasure::new(vec![vec![-1.0], vec![2.0]], vec![0.6, 0.4]).unwrap();
        let quantile = |m: &EmpiricalMeasure<f64>, u: f64| {
            let mut idx: Vec<usize> = (0..m.len()).collect();
            idx.sort_by(|&i, &j| m.points()[i][0].total_cmp(&m.points()[j][0]));
            let mut acc = 0.0;
            for &i in &idx {
                acc += m.weights()[i];
                if u < acc {
                    return m.points()[i][0];
                }
            }
            m.points()[*idx.last().unwrap()][0]
        };
        let n = 1_000_000;
        let integral: f64 = (0..n)
            .map(|k| {
                let u = (k as f64 + 0.5) / n as f64;
                (quantile(&p, u) - quantile(&q, u)).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let w = w2_exact_1d(&p, &q).unwrap();
        assert!((w * w - integral).abs() < 1e-5);
        let total: f64 = monotone_coupling_1d(&p, &q).unwrap().iter().map(|t| t.2).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_decay_rate_grows_as_epsilon_shrinks() {
        let cost = CostMatrix::new(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        let (a, b) = ([0.7, 0.3], [0.4, 0.6]);
        let ks: Vec<usize> = (1..=30).collect();
        let rates: Vec<f64> = [0.05, 0.1, 0.5]
            .iter()
            .map(|&eps| {
                let d = sinkhorn_error_decay(&cost, &a, &b, eps, &ks).unwrap();
                let above: Vec<f64> = d.points.iter().map(|p| p.1).filter(|&e| e > ERROR_FLOOR).collect();
                assert!(above.windows(2).all(|w| w[1] < w[0]));
                d.fit.unwrap().rate
            })
            .collect();
        assert!(rates.iter().all(|&r| r > 0.0 && r < 1.0));
        assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");
    }

    #[test]
    fn plan_json_guard() {
        let cost = CostMatrix::new(Matrix::zeros(2, 2)).unwrap();
        let p = sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], 1.0, 10, 1e-9).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(v["gamma"].as_array().unwrap().len(), 4);
    }
}
