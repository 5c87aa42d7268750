use acolab::ot::{sinkhorn, sinkhorn_divergence, w2_exact_1d};
use acolab::{CostMatrix64, EmpiricalMeasure64, RngStream};
use proptest::prelude::*;

/// Minimum-cost perfect matching on a square matrix (Kuhn–Munkres with potentials, O(n³)).
fn hungarian(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let (i0, mut delta, mut j1) = (p[j0], f64::INFINITY, 0);
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

#[test]
fn hungarian_brute_force_agreement() {
    // Checks the oracle itself against all 4! permutations.
    let c = vec![
        vec![4.0, 1.0, 3.0, 2.0],
        vec![2.0, 0.0, 5.0, 3.0],
        vec![3.0, 2.0, 2.0, 1.0],
        vec![1.0, 4.0, 2.0, 6.0],
    ];
    let mut best = f64::INFINITY;
    for a in 0..4 {
        for b in 0..4 {
            for cc in 0..4 {
                for d in 0..4 {
                    let perm = [a, b, cc, d];
                    let mut seen = [false; 4];
                    if perm.iter().all(|&k| !std::mem::replace(&mut seen[k], true)) {
                        best = best.min((0..4).map(|i| c[i][perm[i]]).sum());
                    }
                }
            }
        }
    }
    assert_eq!(hungarian(&c), best);
}

#[test]
fn exact_1d_w2_matches_assignment_oracle() {
    let root = RngStream::new(11, 0);
    for trial in 0..20 {
        let mut r = root.split(trial);
        let n = 50;
        let xs: Vec<f64> = (0..n).map(|_| r.normal(0.0, 1.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| r.normal(1.5, 0.7)).collect();
        let cost: Vec<Vec<f64>> = xs.iter().map(|x| ys.iter().map(|y| (x - y).powi(2)).collect()).collect();
        let oracle = hungarian(&cost) / n as f64;
        let w = w2_exact_1d(&EmpiricalMeasure64::from_scalars(&xs).unwrap(), &EmpiricalMeasure64::from_scalars(&ys).unwrap()).unwrap();
        assert!((w * w - oracle).abs() <= 1e-9, "trial {trial}: {} vs {oracle}", w * w);
    }
}

fn measure(seed: u64, n: usize, dim: usize, shift: f64) -> EmpiricalMeasure64 {
    let mut r = RngStream::new(seed, 1);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| shift + r.standard_normal()).collect()).collect();
    let w: Vec<f64> = (0..n).map(|_| 0.1 + r.uniform()).collect();
    EmpiricalMeasure64::normalized(pts, w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn row_marginals_hold_at_any_iteration_budget(
        seed in any::<u64>(), m in 2usize..12, n in 2usize..12, eps in 0.01f64..2.0, iters in 1usize..40,
    ) {
        let p = measure(seed, m, 2, 0.0);
        let q = measure(seed ^ 0x5a5a, n, 2, 1.0);
        let cost = CostMatrix64::squared_euclidean(p.points(), q.points()).unwrap();
        let plan = sinkhorn(&cost, p.weights(), q.weights(), eps, iters, 0.0).unwrap();
        prop_assert!(plan.marginal_errors.0 <= 1e-6);
        for i in 0..m {
            let s: f64 = (0..n).map(|j| plan.gamma[(i, j)]).sum();
            prop_assert!((s - p.weights()[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn gibbs_factorization_in_log_domain(seed in any::<u64>(), m in 2usize..10, n in 2usize..10, eps in 0.05f64..2.0) {
        let p = measure(seed, m, 2, 0.0);
        let q = measure(seed.wrapping_add(7), n, 2, 0.5);
        let cost = CostMatrix64::squared_euclidean(p.points(), q.points()).unwrap();
        let plan = sinkhorn(&cost, p.weights(), q.weights(), eps, 500, 1e-9).unwrap();
        for i in 0..m {
            for j in 0..n {
                let lhs = plan.gamma[(i, j)].ln() + cost.get(i, j) / eps;
                let rhs = plan.log_u[i] + plan.log_v[j];
                prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn divergence_is_nonnegative(seed in any::<u64>(), m in 1usize..10, n in 1usize..10, shift in 0.0f64..2.0, eps in 0.1f64..2.0) {
        let p = measure(seed, m, 2, 0.0);
        let q = measure(seed.rotate_left(17), n, 2, shift);
        prop_assert!(sinkhorn_divergence(&p, &q, eps).unwrap() >= -1e-9);
    }

    #[test]
    fn small_epsilon_1d_cost_within_five_percent(seed in any::<u64>(), n in 10usize..40, shift in 1.0f64..4.0) {
        let p = measure(seed, n, 1, 0.0);
        let q = measure(seed ^ 0xabcdef, n, 1, shift);
        let cost = CostMatrix64::squared_euclidean(p.points(), q.points()).unwrap();
        let plan = sinkhorn(&cost, p.weights(), q.weights(), 0.01 * cost.median(), 50_000, 1e-9).unwrap();
        let w = w2_exact_1d(&p, &q).unwrap();
        prop_assert!(((plan.transport_cost - w * w) / (w * w)).abs() <= 0.05);
    }

    #[test]
    fn uniform_weights_are_exact(k in 1usize..500) {
        let m = EmpiricalMeasure64::uniform((0..k).map(|i| vec![i as f64]).collect()).unwrap();
        prop_assert!(m.weights().iter().all(|&w| w == 1.0 / k as f64));
        prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
