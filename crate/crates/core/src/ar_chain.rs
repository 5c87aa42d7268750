//! Autoregressive condition processes: stability, simulation, ergodicity
//! and score-norm decay measurements, and the split of a condition into
//! its sufficient component and the extraneous remainder.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffusion::fmt_f64;
use crate::error::{invalid, Error, Result};
use crate::gaussian_lab::conditional_score;
use crate::measures::linalg::{dot, gram_schmidt, norm_sq, Matrix};
use crate::measures::{GaussianJoint, RngStream};
use crate::scalar::Real;
use crate::stats::{fit_geometric, gaussian_tv, histogram_tv, GeometricFit};

/// Spectral-radius accuracy used when validating a model.
pub const RADIUS_TOL: f64 = 1e-10;

/// Order-`p` autoregression `c_{t+1} = Σ_j a_j c_{t−j} + ε_{t+1}`, `ε ~ N(0, σ²)`.
///
/// `coeffs[0]` multiplies the most recent value. The process is centred:
/// callers add a mean when coupling it to a joint law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ArModel<T> {
    coeffs: Vec<T>,
    noise_std: T,
}

impl<T: Real> ArModel<T> {
    /// Requires `max|a_j| < 1`, `σ ≥ 0` and a companion spectral radius below one.
    pub fn new(coeffs: Vec<T>, noise_std: T) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Empty("coeffs"));
        }
        if coeffs.iter().any(|a| !a.is_finite()) || !noise_std.is_finite() {
            return Err(Error::NonFinite("autoregressive model"));
        }
        if noise_std < T::zero() {
            return Err(invalid("noise_std", "must be non-negative"));
        }
        let max_abs = coeffs.iter().fold(T::zero(), |m, a| m.max(a.abs()));
        if max_abs >= T::one() {
            return Err(Error::Unstable {
                radius: max_abs.as_f64(),
            });
        }
        let model = Self { coeffs, noise_std };
        let radius = model.companion_matrix().spectral_radius(RADIUS_TOL);
        if radius >= T::one() {
            return Err(Error::Unstable {
                radius: radius.as_f64(),
            });
        }
        Ok(model)
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn noise_std(&self) -> T {
        self.noise_std
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// First row `a`, ones on the subdiagonal, zeros elsewhere.
    pub fn companion_matrix(&self) -> Matrix<T> {
        let p = self.order();
        let mut m = Matrix::zeros(p, p);
        for (j, &a) in self.coeffs.iter().enumerate() {
            m[(0, j)] = a;
        }
        for i in 1..p {
            m[(i, i - 1)] = T::one();
        }
        m
    }

    pub fn spectral_radius(&self) -> T {
        self.companion_matrix().spectral_radius(RADIUS_TOL)
    }

    /// State vector `(c_t, c_{t−1}, …)` built from `c0`, zero-padded to length `p`.
    fn initial_state(&self, c0: &[T]) -> Result<Vec<T>> {
        if c0.is_empty() {
            return Err(Error::Empty("c0"));
        }
        if c0.len() > self.order() {
            return Err(Error::DimensionMismatch {
                expected: self.order(),
                got: c0.len(),
            });
        }
        let mut s = c0.to_vec();
        s.resize(self.order(), T::zero());
        Ok(s)
    }
}

/// Companion form of `model` in state-space layout.
pub fn companion<T: Real>(model: &ArModel<T>) -> Matrix<T> {
    model.companion_matrix()
}

/// Runs the recursion on a given innovation sequence; the output has
/// `noise.len() + 1` values starting at `c0[0]`.
///
/// `c0` lists the initial history most recent first; missing lags are zero.
pub fn simulate_with_noise<T: Real>(model: &ArModel<T>, c0: &[T], noise: &[T]) -> Result<Vec<T>> {
    let mut state = model.initial_state(c0)?;
    let mut out = Vec::with_capacity(noise.len() + 1);
    out.push(state[0]);
    for &e in noise {
        let next = dot(&model.coeffs, &state) + e;
        state.rotate_right(1);
        state[0] = next;
        out.push(next);
    }
    Ok(out)
}

/// Draws `n` innovations `N(0, σ²)` and runs the recursion.
pub fn simulate<T: Real>(model: &ArModel<T>, c0: &[T], n: usize, rng: &mut RngStream) -> Result<Vec<T>> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let s = model.noise_std.as_f64();
    let noise: Vec<T> = (0..n).map(|_| T::lit(s * rng.standard_normal())).collect();
    simulate_with_noise(model, c0, &noise)
}

/// Initial law of the most recent value; older lags start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    Dirac(f64),
    Gaussian { mean: f64, var: f64 },
}

impl InitialLaw {
    fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            InitialLaw::Dirac(x) => x,
            InitialLaw::Gaussian { mean, var } => mean + var.sqrt() * rng.standard_normal(),
        }
    }

    fn moments(&self) -> (f64, f64) {
        match *self {
            InitialLaw::Dirac(x) => (x, 0.0),
            InitialLaw::Gaussian { mean, var } => (mean, var),
        }
    }
}

/// Exact Gaussian law `(mean, var)` of `c_n` for `n = 0..=n_steps` from the
/// state-space moment recursion `m ← A m`, `P ← A P Aᵀ + σ² e₁e₁ᵀ`.
pub fn marginal_laws<T: Real>(model: &ArModel<T>, init: InitialLaw, n_steps: usize) -> Vec<(f64, f64)> {
    let p = model.order();
    let a: Vec<f64> = model.coeffs.iter().map(|v| v.as_f64()).collect();
    let s2 = model.noise_std.as_f64().powi(2);
    let (m0, v0) = init.moments();
    let mut m = vec![0.0; p];
    m[0] = m0;
    let mut cov = vec![vec![0.0; p]; p];
    cov[0][0] = v0;
    let mut out = vec![(m[0], cov[0][0])];
    for _ in 0..n_steps {
        // A·x shifts the state and puts aᵀx on top.
        let shift = |x: &[f64]| -> Vec<f64> {
            let mut y = vec![0.0; p];
            y[0] = a.iter().zip(x).map(|(u, v)| u * v).sum();
            y[1..p].copy_from_slice(&x[..p - 1]);
            y
        };
        m = shift(&m);
        let ap: Vec<Vec<f64>> = cov.iter().map(|row| shift(row)).collect();
        // (A P Aᵀ) = A (A P)ᵀ since P is symmetric.
        let apt: Vec<Vec<f64>> = (0..p).map(|j| (0..p).map(|i| ap[i][j]).collect()).collect();
        cov = apt.iter().map(|row| shift(row)).collect();
        cov[0][0] += s2;
        out.push((m[0], cov[0][0]));
    }
    out
}

/// Total-variation distance between the two evolving laws at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvPoint {
    pub step: usize,
    /// 64-bin histogram estimate from the simulated ensembles.
    pub tv_estimate: f64,
    /// Exact value from the Gaussian moment recursion.
    pub tv_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub points: Vec<TvPoint>,
    /// Log-linear fit of the histogram estimates above the noise floor.
    pub fit_estimate: Option<GeometricFit>,
    /// Log-linear fit of the exact values above `1e-12`, over steps `≥ 1`.
    pub fit_exact: Option<GeometricFit>,
    /// `2/√n_paths`; histogram TV below this is indistinguishable from sampling noise.
    pub noise_floor: f64,
}

pub const TV_BINS: usize = 64;

/// Evolves `n_paths` chains from each initial law and records the TV
/// distance between the two ensembles at every step.
pub fn ergodicity_check<T: Real>(
    model: &ArModel<T>,
    mu1: InitialLaw,
    mu2: InitialLaw,
    n_steps: usize,
    n_paths: usize,
    rng: &mut RngStream,
) -> Result<ErgodicityReport> {
    if n_paths < 1000 {
        return Err(invalid("n_paths", "need at least 1000 paths"));
    }
    let run = |law: InitialLaw, stream: u64| -> Result<Vec<Vec<f64>>> {
        let base = rng.split(stream);
        (0..n_paths)
            .map(|i| {
                let mut r = base.split(i as u64);
                let c0 = T::lit(law.sample(&mut r));
                let path = simulate(model, &[c0], n_steps.max(1), &mut r)?;
                Ok(path.into_iter().take(n_steps + 1).map(|v| v.as_f64()).collect())
            })
            .collect()
    };
    let a = run(mu1, 1)?;
    let b = run(mu2, 2)?;
    let la = marginal_laws(model, mu1, n_steps);
    let lb = marginal_laws(model, mu2, n_steps);
    let points: Vec<TvPoint> = (0..=n_steps)
        .map(|k| {
            let xa: Vec<f64> = a.iter().map(|p| p[k]).collect();
            let xb: Vec<f64> = b.iter().map(|p| p[k]).collect();
            TvPoint {
                step: k,
                tv_estimate: histogram_tv(&xa, &xb, TV_BINS),
                tv_exact: gaussian_tv(la[k].0, la[k].1, lb[k].0, lb[k].1),
            }
        })
        .collect();
    let noise_floor = 2.0 / (n_paths as f64).sqrt();
    let ks: Vec<f64> = points.iter().skip(1).map(|p| p.step as f64).collect();
    let est: Vec<f64> = points.iter().skip(1).map(|p| p.tv_estimate).collect();
    let exact: Vec<f64> = points.iter().skip(1).map(|p| p.tv_exact).collect();
    Ok(ErgodicityReport {
        fit_estimate: fit_geometric(&ks, &est, noise_floor),
        fit_exact: fit_geometric(&ks, &exact, 1e-12),
        points,
        noise_floor,
    })
}

/// Least-squares fit of `y_i ≈ M·βⁱ + m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub m_coef: f64,
    pub beta: f64,
    pub m: f64,
    pub r2: f64,
    /// Residual standard deviation.
    pub sigma_fit: f64,
    /// Asymptotic 95% intervals from the Gauss-Newton covariance.
    pub m_coef_ci: (f64, f64),
    pub beta_ci: (f64, f64),
    pub m_ci: (f64, f64),
}

impl DecayFit {
    pub fn predict(&self, i: usize) -> f64 {
        self.m_coef * self.beta.powi(i as i32) + self.m
    }
}

/// Linear least squares in `(M, m)` for a fixed `β`; returns `(M, m, SSR)`.
fn profile(ys: &[f64], beta: f64) -> (f64, f64, f64) {
    let n = ys.len() as f64;
    let g: Vec<f64> = (0..ys.len()).map(|i| beta.powi(i as i32)).collect();
    let (sg, sy) = (g.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sgg: f64 = g.iter().map(|v| v * v).sum();
    let sgy: f64 = g.iter().zip(ys).map(|(a, b)| a * b).sum();
    let det = n * sgg - sg * sg;
    let (mc, m) = if det.abs() < 1e-300 {
        (0.0, sy / n)
    } else {
        ((n * sgy - sg * sy) / det, (sgg * sy - sg * sgy) / det)
    };
    let ssr = g.iter().zip(ys).map(|(gi, y)| (y - mc * gi - m).powi(2)).sum();
    (mc, m, ssr)
}

const BETA_LO: f64 = 1e-6;
const BETA_HI: f64 = 0.999;

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

fn invert3(a: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
        }
    }
    Some(inv)
}

/// Fits `y_i ≈ M·βⁱ + m`, `β ∈ (0, 1)`, by profiling out `(M, m)`.
///
/// Starts from `β ∈ {0.1, …, 0.9}` and refines each with a golden-section
/// search on `[β₀ − 0.1, β₀ + 0.1]`; the lowest residual wins, then the
/// lowest `β`. Needs at least three points.
pub fn fit_decay(ys: &[f64]) -> Option<DecayFit> {
    let n = ys.len();
    if n < 3 || ys.iter().any(|y| !y.is_finite()) {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for s in 1..=9 {
        let b0 = s as f64 / 10.0;
        let b = golden_min(|b| profile(ys, b).2, (b0 - 0.1).max(BETA_LO), (b0 + 0.1).min(BETA_HI));
        let ssr = profile(ys, b).2;
        let better = match best {
            None => true,
            Some((bb, bs)) => ssr < bs * (1.0 - 1e-12) || (ssr <= bs * (1.0 + 1e-12) && b < bb),
        };
        if better {
            best = Some((b, ssr));
        }
    }
    let (beta, ssr) = best?;
    let (mc, m, _) = profile(ys, beta);
    let mean = ys.iter().sum::<f64>() / n as f64;
    let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let sigma_fit = if n > 3 { (ssr / (n - 3) as f64).sqrt() } else { 0.0 };

    let mut jtj = [[0.0; 3]; 3];
    for i in 0..n {
        let bi = beta.powi(i as i32);
        let db = if i == 0 { 0.0 } else { mc * i as f64 * beta.powi(i as i32 - 1) };
        let row = [bi, db, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                jtj[r][c] += row[r] * row[c];
            }
        }
    }
    let half = |k: usize| {
        invert3(jtj)
            .map(|inv| 1.96 * sigma_fit * inv[k][k].max(0.0).sqrt())
            .unwrap_or(f64::INFINITY)
    };
    let ci = |v: f64, k: usize| (v - half(k), v + half(k));
    Some(DecayFit {
        m_coef: mc,
        beta,
        m,
        r2,
        sigma_fit,
        m_coef_ci: ci(mc, 0),
        beta_ci: ci(beta, 1),
        m_ci: ci(m, 2),
    })
}

/// Score-norm decay along an autoregressive condition chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// Path average of `sup_x |∇ log p(x|c_i)|` per iteration.
    pub mean_norm: Vec<f64>,
    /// Maximum of the same quantity over paths.
    pub max_norm: Vec<f64>,
    /// Fit of `mean_norm`.
    pub fit: Option<DecayFit>,
    /// Fit of `max_norm`, used as the ensemble envelope.
    pub envelope_fit: Option<DecayFit>,
    /// Set when no fit exists, `R² < 0.9`, or `β` leaves `(0, 1)`.
    pub fit_failed: bool,
}

pub const MIN_R2: f64 = 0.9;

impl DecayReport {
    /// CSV with columns `i,mean_norm,max_norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,mean_norm,max_norm\n");
        for (i, (a, b)) in self.mean_norm.iter().zip(&self.max_norm).enumerate() {
            let _ = writeln!(out, "{},{},{}", i, fmt_f64(*a), fmt_f64(*b));
        }
        out
    }

    /// Fit parameters with confidence intervals.
    pub fn fit_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&serde_json::json!({
            "fit": self.fit,
            "envelope_fit": self.envelope_fit,
            "fit_failed": self.fit_failed,
        }))
        .map_err(|e| Error::Serde(e.to_string()))
    }

    /// Largest amount by which `max_norm` exceeds the envelope `M·βⁱ + m + 3σ_fit`.
    pub fn envelope_violation(&self) -> f64 {
        match &self.envelope_fit {
            None => f64::INFINITY,
            Some(f) => self
                .max_norm
                .iter()
                .enumerate()
                .map(|(i, &y)| y - f.predict(i) - 3.0 * f.sigma_fit)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Drives the conditioning value of `joint` with the chain `c_i = μ_c + d_i`,
/// `d_0 = c0 − μ_c`, and measures `sup_{x ∈ grid} |∇_x log p(x|c_i)|` for
/// `i = 0..=n_iters`. The covariance of `joint` stays fixed.
pub fn gradient_norm_decay<T: Real>(
    model: &ArModel<T>,
    joint: &GaussianJoint<T>,
    x_grid: &[T],
    c0: T,
    n_iters: usize,
    n_paths: usize,
    rng: &mut RngStream,
) -> Result<DecayReport> {
    if x_grid.is_empty() {
        return Err(Error::Empty("x_grid"));
    }
    if n_paths == 0 {
        return Err(invalid("n_paths", "must be at least 1"));
    }
    joint.validate()?;
    let mut sum = vec![0.0; n_iters + 1];
    let mut max = vec![f64::NEG_INFINITY; n_iters + 1];
    for p in 0..n_paths {
        let mut r = rng.split(p as u64);
        let devs = simulate(model, &[c0 - joint.mu_c], n_iters.max(1), &mut r)?;
        for (i, &d) in devs.iter().take(n_iters + 1).enumerate() {
            let c = joint.mu_c + d;
            let mut sup = 0.0f64;
            for &x in x_grid {
                sup = sup.max(conditional_score(joint, x, c)?.abs().as_f64());
            }
            sum[i] += sup;
            max[i] = max[i].max(sup);
        }
    }
    let mean_norm: Vec<f64> = sum.iter().map(|s| s / n_paths as f64).collect();
    let fit = fit_decay(&mean_norm);
    let envelope_fit = fit_decay(&max);
    let fit_failed = match &fit {
        None => true,
        Some(f) => f.r2 < MIN_R2 || !(f.beta > 0.0 && f.beta < 1.0),
    };
    Ok(DecayReport {
        mean_norm,
        max_norm: max,
        fit,
        envelope_fit,
        fit_failed,
    })
}

/// Orthonormal basis `v_1…v_K` of a subspace of `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SubspaceSpec<T> {
    dim: usize,
    basis: Vec<Vec<T>>,
}

pub const ORTHONORMAL_TOL: f64 = 1e-10;

impl<T: Real> SubspaceSpec<T> {
    /// Requires `K ≤ d` and `|⟨v_i, v_j⟩ − δ_ij| ≤ 1e-10`.
    pub fn new(dim: usize, basis: Vec<Vec<T>>) -> Result<Self> {
        if basis.len() > dim {
            return Err(invalid("basis", format!("{} vectors exceed dimension {}", basis.len(), dim)));
        }
        for v in &basis {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        let mut deviation = 0.0f64;
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                deviation = deviation.max((dot(a, b).as_f64() - target).abs());
            }
        }
        if deviation > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { dim, basis })
    }

    /// Orthonormalizes arbitrary spanning vectors first.
    pub fn from_spanning(dim: usize, vectors: &[Vec<T>]) -> Result<Self> {
        Self::new(dim, gram_schmidt(vectors)?)
    }

    /// Span of the first `k` coordinate axes.
    pub fn coordinate(dim: usize, k: usize) -> Result<Self> {
        let basis = (0..k)
            .map(|i| (0..dim).map(|j| if i == j { T::one() } else { T::zero() }).collect())
            .collect();
        Self::new(dim, basis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &[Vec<T>] {
        &self.basis
    }

    fn project(&self, c: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for v in &self.basis {
            let p = dot(c, v);
            out.iter_mut().zip(v).for_each(|(o, &vi)| *o += p * vi);
        }
        out
    }

    /// Trace of `(I − π) Σ (I − π)` for a symmetric `Σ`.
    fn complement_trace(&self, cov: &Matrix<T>) -> T {
        let pm = Matrix::from_rows(&(0..self.dim).map(|i| self.project(&unit(self.dim, i))).collect::<Vec<_>>())
            .expect("square");
        let q = Matrix::identity(self.dim);
        let mut comp = q.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                comp[(i, j)] = q[(i, j)] - pm[(i, j)];
            }
        }
        comp.matmul(cov).expect("square").matmul(&comp).expect("square").trace()
    }
}

fn unit<T: Real>(d: usize, i: usize) -> Vec<T> {
    (0..d).map(|j| if i == j { T::one() } else { T::zero() }).collect()
}

/// `(π(c), c − π(c))`.
pub fn project_extraneous<T: Real>(c: &[T], sub: &SubspaceSpec<T>) -> Result<(Vec<T>, Vec<T>)> {
    if c.len() != sub.dim {
        return Err(Error::DimensionMismatch {
            expected: sub.dim,
            got: c.len(),
        });
    }
    let ideal = sub.project(c);
    let eta = c.iter().zip(&ideal).map(|(&a, &b)| a - b).collect();
    Ok((ideal, eta))
}

/// Expected extraneous energy of one autoregressive step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtraneousEnergy {
    /// Sample mean of `‖(I − π)Φ(c)‖²`.
    pub propagated: f64,
    /// `tr(Σ)`.
    pub noise_full_trace: f64,
    /// `tr((I − π)Σ(I − π))`.
    pub noise_projected_trace: f64,
}

impl ExtraneousEnergy {
    /// Propagated term plus the full noise trace.
    pub fn total(&self) -> f64 {
        self.propagated + self.noise_full_trace
    }

    /// Propagated term plus only the noise energy outside the subspace.
    pub fn total_projected(&self) -> f64 {
        self.propagated + self.noise_projected_trace
    }
}

/// `noise_cov` is the covariance `ΓΓᵀ` of the additive step noise.
pub fn extraneous_energy<T: Real>(
    transition: &dyn Fn(&[T]) -> Vec<T>,
    noise_cov: &Matrix<T>,
    sub: &SubspaceSpec<T>,
    c_prev_samples: &[Vec<T>],
) -> Result<ExtraneousEnergy> {
    if c_prev_samples.is_empty() {
        return Err(Error::Empty("c_prev_samples"));
    }
    if noise_cov.rows() != sub.dim || noise_cov.cols() != sub.dim {
        return Err(Error::DimensionMismatch {
            expected: sub.dim,
            got: noise_cov.rows(),
        });
    }
    let mut acc = 0.0;
    for c in c_prev_samples {
        let phi = transition(c);
        let (_, eta) = project_extraneous(&phi, sub)?;
        acc += norm_sq(&eta).as_f64();
    }
    Ok(ExtraneousEnergy {
        propagated: acc / c_prev_samples.len() as f64,
        noise_full_trace: noise_cov.trace().as_f64(),
        noise_projected_trace: sub.complement_trace(noise_cov).as_f64(),
    })
}

/// Empirical regularity constants of the Gaussian conditional density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityWitness {
    /// `min p(x|c)` over the grid and sampled conditions.
    pub density_min: f64,
    /// `max sup_x |∂_x p(x|c₁) − ∂_x p(x|c₂)| / |c₁ − c₂|` over sampled pairs.
    pub lipschitz_max: f64,
    /// `max |∂_x p(x|c)|` over the grid and sampled conditions.
    pub derivative_max: f64,
}

/// Samples `n_pairs` condition pairs uniformly on `c_range` and evaluates
/// the density and its `x`-derivative on `x_grid`.
pub fn regularity_witness<T: Real>(
    j: &GaussianJoint<T>,
    x_grid: &[T],
    c_range: (T, T),
    n_pairs: usize,
    rng: &mut RngStream,
) -> Result<RegularityWitness> {
    if x_grid.is_empty() {
        return Err(Error::Empty("x_grid"));
    }
    j.validate()?;
    let (lo, hi) = (c_range.0.as_f64(), c_range.1.as_f64());
    let mut w = RegularityWitness {
        density_min: f64::INFINITY,
        lipschitz_max: 0.0,
        derivative_max: 0.0,
    };
    for _ in 0..n_pairs {
        let c1 = T::lit(lo + (hi - lo) * rng.uniform());
        let c2 = T::lit(lo + (hi - lo) * rng.uniform());
        let mut diff = 0.0f64;
        for &x in x_grid {
            for c in [c1, c2] {
                w.density_min = w.density_min.min(j.conditional_density(x, c).as_f64());
                w.derivative_max = w.derivative_max.max(j.conditional_density_gradient(x, c).abs().as_f64());
            }
            let d = (j.conditional_density_gradient(x, c1) - j.conditional_density_gradient(x, c2)).abs();
            diff = diff.max(d.as_f64());
        }
        let dc = (c1 - c2).abs().as_f64();
        if dc > 1e-12 {
            w.lipschitz_max = w.lipschitz_max.max(diff / dc);
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean_var, normal_cdf};

    #[test]
    fn companion_layout_and_radius() {
        let m = ArModel::new(vec![0.5], 1.0).unwrap();
        assert_eq!(companion(&m).as_slice(), &[0.5]);
        assert_eq!(m.spectral_radius(), 0.5);

        let m2 = ArModel::new(vec![0.5, 0.2], 1.0).unwrap();
        let c = companion(&m2);
        assert_eq!(c.as_slice(), &[0.5, 0.2, 1.0, 0.0]);
        // Oracle: larger root modulus of λ² − 0.5λ − 0.2.
        let disc: f64 = 0.25 + 0.8;
        let roots = [(0.5 + disc.sqrt()) / 2.0, (0.5 - disc.sqrt()) / 2.0];
        let rho = roots.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!((m2.spectral_radius() - rho).abs() < 1e-9);

        assert!(ArModel::new(vec![0.999], 1.0).is_ok());
        assert!(matches!(ArModel::new(vec![1.0], 1.0), Err(Error::Unstable { .. })));
        // Each |a_j| < 1 but the sum reaches the unit circle.
        assert!(matches!(ArModel::new(vec![0.6, 0.5], 1.0), Err(Error::Unstable { .. })));
        assert!(ArModel::new(vec![0.5], -1.0).is_err());
    }

    #[test]
    fn deterministic_geometric_decay() {
        let m = ArModel::new(vec![0.5], 0.0).unwrap();
        let path = simulate(&m, &[1.0], 4, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(path, vec![1.0, 0.5, 0.25, 0.125, 0.0625]);
        assert!(simulate(&m, &[1.0], 0, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn companion_state_space_reproduces_recursion() {
        let m = ArModel::new(vec![0.4, -0.3, 0.2], 0.7).unwrap();
        let a = companion(&m);
        let mut rng = RngStream::new(5, 0);
        let noise: Vec<f64> = (0..200).map(|_| 0.7 * rng.standard_normal()).collect();
        let path = simulate_with_noise(&m, &[1.0, -2.0], &noise).unwrap();
        let mut x = vec![1.0, -2.0, 0.0];
        for (t, &e) in noise.iter().enumerate() {
            x = a.matvec(&x).unwrap();
            x[0] += e;
            assert_eq!(x[0].to_bits(), path[t + 1].to_bits());
        }
    }

    #[test]
    fn stationary_moments_ar1() {
        let m = ArModel::new(vec![0.5], 1.0).unwrap();
        let path = simulate(&m, &[0.0], 1_000_000, &mut RngStream::new(11, 0)).unwrap();
        let (mean, var) = mean_var(&path[1000..]);
        assert!((var - 4.0 / 3.0).abs() / (4.0 / 3.0) < 0.03);
        // Autocorrelation inflates the standard error by √((1+a)/(1−a)).
        let se = (var / path.len() as f64 * 3.0).sqrt();
        assert!(mean.abs() < 3.0 * se);
    }

    #[test]
    fn marginal_laws_match_closed_form() {
        let m = ArModel::new(vec![0.5], 1.0).unwrap();
        let laws = marginal_laws(&m, InitialLaw::Gaussian { mean: 5.0, var: 2.0 }, 10);
        for (n, &(mu, v)) in laws.iter().enumerate() {
            let a2n = 0.25f64.powi(n as i32);
            assert!((mu - 5.0 * 0.5f64.powi(n as i32)).abs() < 1e-12);
            assert!((v - (2.0 * a2n + (1.0 - a2n) / 0.75)).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_laws_order_two_match_simulation() {
        let m = ArModel::new(vec![0.5, 0.2], 1.0).unwrap();
        let laws = marginal_laws(&m, InitialLaw::Dirac(3.0), 6);
        let mut rng = RngStream::new(8, 0);
        let finals: Vec<f64> = (0..100_000).map(|_| simulate(&m, &[3.0], 6, &mut rng).unwrap()[6]).collect();
        let (mean, var) = mean_var(&finals);
        let (mu, v) = laws[6];
        assert!((mean - mu).abs() < 4.0 * (v / 1e5).sqrt());
        assert!((var - v).abs() / v < 0.02);
    }

    #[test]
    fn ergodicity_identical_starts_sit_at_noise_floor() {
        let m = ArModel::new(vec![0.5], 1.0).unwrap();
        let law = InitialLaw::Gaussian { mean: 0.0, var: 1.0 };
        let r = ergodicity_check(&m, law, law, 8, 4000, &mut RngStream::new(2, 0)).unwrap();
        assert!(r.points.iter().all(|p| p.tv_exact == 0.0));
        assert!(r.points.iter().all(|p| p.tv_estimate < 3.0 * r.noise_floor));
        assert!(ergodicity_check(&m, law, law, 8, 999, &mut RngStream::new(2, 0)).is_err());
    }

    #[test]
    fn ergodicity_rates_order_with_coefficient() {
        let run = |a: f64| {
            let m = ArModel::new(vec![a], 1.0).unwrap();
            ergodicity_check(&m, InitialLaw::Dirac(5.0), InitialLaw::Dirac(-5.0), 20, 2000, &mut RngStream::new(3, 0))
                .unwrap()
        };
        let fast = run(0.5);
        let slow = run(0.9);
        let rf = fast.fit_exact.unwrap().rate;
        let rs = slow.fit_exact.unwrap().rate;
        assert!(rf <= 0.6, "rate {rf}");
        assert!(rs > rf);
        // Histogram estimates track the exact values up to sampling noise.
        for p in &fast.points {
            assert!((p.tv_estimate - p.tv_exact).abs() < 0.1);
        }
    }

    #[test]
    fn decay_fit_recovers_parameters() {
        let ys: Vec<f64> = (0..30).map(|i| 4.0 * 0.6f64.powi(i) + 1.5).collect();
        let f = fit_decay(&ys).unwrap();
        assert!((f.beta - 0.6).abs() < 1e-6 && (f.m_coef - 4.0).abs() < 1e-5 && (f.m - 1.5).abs() < 1e-6);
        assert!(f.r2 > 0.999_999);
    }

    #[test]
    fn one_step_contraction_gives_tiny_beta() {
        let m = ArModel::new(vec![0.0], 0.0).unwrap();
        let j = GaussianJoint::new(0.0, 0.0, 1.0, 1.0, 0.5).unwrap();
        let grid: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.3).collect();
        let r = gradient_norm_decay(&m, &j, &grid, 20.0, 15, 3, &mut RngStream::new(0, 0)).unwrap();
        assert!(r.mean_norm[1..].windows(2).all(|w| w[0] == w[1]));
        let f = r.fit.unwrap();
        assert!(f.beta < 0.01, "beta {}", f.beta);
    }

    /// `E sup_{|x−μ_x|≤R} |x − m(c)|/v = (R + g·E|d|)/v` with `d ~ N(μ_d, s²)`.
    fn sup_norm_oracle(j: &GaussianJoint<f64>, radius: f64, mu_d: f64, var_d: f64) -> f64 {
        let g = j.gain();
        let folded = if var_d == 0.0 {
            mu_d.abs()
        } else {
            let s = var_d.sqrt();
            s * (2.0 / std::f64::consts::PI).sqrt() * (-mu_d * mu_d / (2.0 * var_d)).exp()
                + mu_d * (1.0 - 2.0 * normal_cdf(-mu_d / s))
        };
        (radius + g.abs() * folded) / j.conditional_variance()
    }

    #[test]
    fn decay_curve_matches_closed_form_and_envelope_holds() {
        let m = ArModel::new(vec![0.5], 1.0).unwrap();
        let j = GaussianJoint::new(0.0, 0.0, 1.0, 1.0, 0.6).unwrap();
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.2).collect();
        let r = gradient_norm_decay(&m, &j, &grid, 10.0, 25, 2000, &mut RngStream::new(21, 0)).unwrap();
        let laws = marginal_laws(&m, InitialLaw::Dirac(10.0), 25);
        for (i, &(mu, v)) in laws.iter().enumerate() {
            let expect = sup_norm_oracle(&j, 4.0, mu, v);
            assert!((r.mean_norm[i] - expect).abs() < 0.03 * expect, "i={i}: {} vs {expect}", r.mean_norm[i]);
        }
        let f = r.fit.unwrap();
        assert!(!r.fit_failed);
        assert!((0.4..=0.7).contains(&f.beta), "beta {}", f.beta);
        assert!(r.envelope_violation() <= 0.0);
    }

    #[test]
    fn projection_examples() {
        let sub = SubspaceSpec::coordinate(2, 1).unwrap();
        let (ideal, eta) = project_extraneous(&[3.0, 4.0], &sub).unwrap();
        assert_eq!((ideal, eta), (vec![3.0, 0.0], vec![0.0, 4.0]));
        let (_, eta) = project_extraneous(&[-2.0, 0.0], &sub).unwrap();
        assert_eq!(eta, vec![0.0, 0.0]);
        assert!(project_extraneous(&[1.0], &sub).is_err());
        assert!(SubspaceSpec::new(2, vec![vec![1.0, 0.0], vec![1.0, 1.0]]).is_err());
        assert!(SubspaceSpec::<f64>::new(1, vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn extraneous_energy_examples() {
        let sub = SubspaceSpec::coordinate(2, 1).unwrap();
        let samples = vec![vec![1.0, 2.0], vec![-1.0, 0.0], vec![0.5, -1.0]];
        let into_span = |c: &[f64]| vec![c[0] + c[1], 0.0];
        let confined = Matrix::diagonal(&[1.0, 0.0]);
        let e = extraneous_energy(&into_span, &confined, &sub, &samples).unwrap();
        assert_eq!(e.total_projected(), 0.0);
        assert_eq!(e.total(), 1.0);

        let ident = |c: &[f64]| c.to_vec();
        let iso = Matrix::identity(2);
        let e = extraneous_energy(&ident, &iso, &sub, &samples).unwrap();
        let propagated = (4.0 + 0.0 + 1.0) / 3.0;
        assert!((e.propagated - propagated).abs() < 1e-15);
        assert!((e.total() - (propagated + 2.0)).abs() < 1e-15);
        assert!((e.total_projected() - (propagated + 1.0)).abs() < 1e-15);

        let doubled = iso.scale(4.0);
        let e2 = extraneous_energy(&ident, &doubled, &sub, &samples).unwrap();
        assert_eq!(e2.noise_full_trace, 4.0 * e.noise_full_trace);
        assert_eq!(e2.noise_projected_trace, 4.0 * e.noise_projected_trace);
        assert!(extraneous_energy(&ident, &iso, &sub, &[]).is_err());
    }

    #[test]
    fn regularity_constants_are_finite_and_positive() {
        let j = GaussianJoint::new(0.0, 0.0, 1.0, 1.0, 0.5).unwrap();
        let grid: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.1).collect();
        let w = regularity_witness(&j, &grid, (-2.0, 2.0), 1000, &mut RngStream::new(4, 0)).unwrap();
        assert!(w.density_min > 0.0);
        assert!(w.lipschitz_max.is_finite() && w.lipschitz_max > 0.0);
        // |∂²p/∂x∂c| ≤ g·max|∂²p/∂x²| = g/(v·√(2πv)) bounds the Lipschitz ratio.
        let v = j.conditional_variance();
        let bound = j.gain() / (v * (2.0 * std::f64::consts::PI * v).sqrt());
        assert!(w.lipschitz_max <= bound * (1.0 + 1e-9));
        // max|∂p/∂x| = 1/(v·√(2π e)) at |x − m| = √v.
        let d_bound = 1.0 / (v * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt());
        assert!(w.derivative_max <= d_bound * (1.0 + 1e-9));
    }
}
