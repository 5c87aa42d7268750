//! Monte-Carlo summaries, regression fits and distribution distances used
//! across the verification routines.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::measures::RngStream;

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let (mean, var) = mean_var(xs);
        Self {
            estimate: mean,
            std_error: (var / xs.len() as f64).sqrt(),
            n_samples: xs.len(),
        }
    }

    /// `sqrt(se_a² + se_b²)`.
    pub fn pooled_se(&self, other: &McEstimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }
}

/// Sample mean and unbiased variance (zero variance for fewer than two samples).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1) as f64)
}

/// Ordinary least squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope.
    pub slope_se: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_se = if n > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LineFit {
        slope,
        intercept,
        r2,
        slope_se,
    })
}

/// Geometric model `y ≈ C·rate^k` fitted as a line in `log y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub rate: f64,
    pub log_intercept: f64,
    pub r2: f64,
    /// 95% interval on the rate from the slope standard error.
    pub rate_ci: (f64, f64),
    pub n_points: usize,
}

/// Fits `log y = log C + k·log rate` over the points with `y > floor`.
pub fn fit_geometric(ks: &[f64], ys: &[f64], floor: f64) -> Option<GeometricFit> {
    let (xs, ls): (Vec<f64>, Vec<f64>) = ks
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > floor && y.is_finite())
        .map(|(&k, &y)| (k, y.ln()))
        .unzip();
    let line = fit_line(&xs, &ls)?;
    let half = 1.96 * line.slope_se;
    Some(GeometricFit {
        rate: line.slope.exp(),
        log_intercept: line.intercept,
        r2: line.r2,
        rate_ci: ((line.slope - half).exp(), (line.slope + half).exp()),
        n_points: xs.len(),
    })
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Total variation distance between `N(m1, v1)` and `N(m2, v2)`.
///
/// Closed form for equal variances; otherwise the two density crossings are
/// found analytically and the CDF differences summed over the three regions.
pub fn gaussian_tv(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    if v1 <= 0.0 || v2 <= 0.0 {
        return if m1 == m2 && v1 == v2 { 0.0 } else { 1.0 };
    }
    let rel = (v1 - v2).abs() / v1.max(v2);
    if rel < 1e-12 {
        let s = v1.sqrt();
        return 2.0 * normal_cdf((m1 - m2).abs() / (2.0 * s)) - 1.0;
    }
    // log p1 − log p2 = 0 is the quadratic a x² + b x + c = 0.
    let a = 0.5 / v2 - 0.5 / v1;
    let b = m1 / v1 - m2 / v2;
    let c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 + 0.5 * (v2 / v1).ln();
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    let mut r1 = (-b - disc) / (2.0 * a);
    let mut r2 = (-b + disc) / (2.0 * a);
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    let f1 = |x: f64| normal_cdf((x - m1) / s1);
    let f2 = |x: f64| normal_cdf((x - m2) / s2);
    // Mass of P1 − P2 on the middle interval; TV is its absolute value.
    let middle = (f1(r2) - f1(r1)) - (f2(r2) - f2(r1));
    middle.abs().min(1.0)
}

/// Histogram total variation between two samples on a shared range.
pub fn histogram_tv(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return 0.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut ha = vec![0.0; bins];
    let mut hb = vec![0.0; bins];
    let bin = |x: f64| (((x - lo) / width) as usize).min(bins - 1);
    for &x in a {
        ha[bin(x)] += 1.0 / a.len() as f64;
    }
    for &x in b {
        hb[bin(x)] += 1.0 / b.len() as f64;
    }
    0.5 * ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum::<f64>()
}

/// Mean absolute pairwise difference `Σ_{i,j}|s_i − s_j| / n²` of a sample, via sorting.
fn mean_abs_within(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mut acc = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        acc += x * (2.0 * i as f64 - n + 1.0);
    }
    2.0 * acc / (n * n)
}

/// Two-sample energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` in one dimension.
pub fn energy_distance_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = sa.iter().chain(&sb).copied().collect();
    all.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    // Σ over all ordered pairs in the pooled sample splits into within/between parts.
    let total = mean_abs_within(&all) * n * n;
    let within_a = mean_abs_within(&sa) * na * na;
    let within_b = mean_abs_within(&sb) * nb * nb;
    let between = (total - within_a - within_b) / 2.0;
    2.0 * between / (na * nb) - within_a / (na * na) - within_b / (nb * nb)
}

/// Permutation p-value for the energy distance.
pub fn energy_test_1d(a: &[f64], b: &[f64], n_perm: usize, rng: &mut RngStream) -> f64 {
    let observed = energy_distance_1d(a, b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut exceed = 0usize;
    for _ in 0..n_perm {
        for i in (1..pooled.len()).rev() {
            let j = rng.index(i + 1);
            pooled.swap(i, j);
        }
        let (pa, pb) = pooled.split_at(a.len());
        if energy_distance_1d(pa, pb) >= observed {
            exceed += 1;
        }
    }
    (exceed as f64 + 1.0) / (n_perm as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_exact() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = fit_line(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn geometric_fit_recovers_rate() {
        let ks: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let ys: Vec<f64> = ks.iter().map(|k| 3.0 * 0.7f64.powf(*k)).collect();
        let f = fit_geometric(&ks, &ys, 0.0).unwrap();
        assert!((f.rate - 0.7).abs() < 1e-12);
    }

    #[test]
    fn gaussian_tv_matches_quadrature() {
        // Independent oracle: trapezoid rule on a wide grid.
        let cases = [(0.0, 1.0, 1.0, 1.0), (0.0, 1.0, 0.5, 2.0), (1.0, 0.3, -1.0, 0.8), (0.0, 1.0, 0.0, 4.0)];
        for &(m1, v1, m2, v2) in &cases {
            let n = 200_000;
            let (lo, hi) = (-30.0, 30.0);
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                acc += w * (normal_pdf(x, m1, v1) - normal_pdf(x, m2, v2)).abs();
            }
            let quad = 0.5 * acc * h;
            assert!((gaussian_tv(m1, v1, m2, v2) - quad).abs() < 1e-8, "{m1} {v1} {m2} {v2}");
        }
    }

    #[test]
    fn energy_distance_matches_brute_force() {
        let mut rng = RngStream::new(1, 1);
        let a: Vec<f64> = (0..40).map(|_| rng.standard_normal()).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.normal(0.5, 2.0)).collect();
        let e = |x: &[f64], y: &[f64]| {
            let mut s = 0.0;
            for p in x {
                for q in y {
                    s += (p - q).abs();
                }
            }
            s / (x.len() * y.len()) as f64
        };
        let brute = 2.0 * e(&a, &b) - e(&a, &a) - e(&b, &b);
        assert!((energy_distance_1d(&a, &b) - brute).abs() < 1e-12);
    }

    #[test]
    fn histogram_tv_bounds() {
        assert_eq!(histogram_tv(&[0.0, 1.0], &[0.0, 1.0], 8), 0.0);
        assert!((histogram_tv(&[0.0, 0.1], &[5.0, 5.1], 8) - 1.0).abs() < 1e-12);
    }
}
