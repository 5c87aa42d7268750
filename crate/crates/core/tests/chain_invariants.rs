use acolab::ar_chain::{companion, gradient_norm_decay, project_extraneous, simulate, simulate_with_noise};
use acolab::measures::gaussian_conditional;
use acolab::measures::linalg::{dot, norm_sq};
use acolab::{ArModel64, GaussianJoint64, RngStream, SubspaceSpec64};
use proptest::prelude::*;

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut r = RngStream::new(seed, 3);
    (0..n).map(|_| r.standard_normal()).collect()
}

#[test]
fn stationary_moments_of_random_ar1_models() {
    let root = RngStream::new(5, 0);
    let (n_paths, burn) = (4000, 200);
    for model_id in 0..10 {
        let mut r = root.split(model_id);
        let a = -0.9 + 1.8 * r.uniform();
        let s = 0.5 + 1.5 * r.uniform();
        let model = ArModel64::new(vec![a], s).unwrap();
        let finals: Vec<f64> = (0..n_paths)
            .map(|_| *simulate(&model, &[0.0], burn, &mut r).unwrap().last().unwrap())
            .collect();
        let n = n_paths as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let v = s * s / (1.0 - a * a);
        assert!(mean.abs() <= 3.0 * (v / n).sqrt(), "model {model_id}: a={a} mean={mean}");
        assert!((var - v).abs() <= 3.0 * v * (2.0 / (n - 1.0)).sqrt(), "model {model_id}: a={a} var={var} vs {v}");
    }
}

#[test]
fn decay_rate_below_one_on_stable_models() {
    let joint = GaussianJoint64::new(0.0, 0.0, 1.0, 1.0, 0.6).unwrap();
    let grid: Vec<f64> = (0..21).map(|i| -4.0 + 0.4 * i as f64).collect();
    let root = RngStream::new(9, 0);
    for (i, a) in [0.2, 0.45, -0.6, 0.7, 0.85].into_iter().enumerate() {
        let model = ArModel64::new(vec![a], 1.0).unwrap();
        let rep = gradient_norm_decay(&model, &joint, &grid, 10.0, 30, 300, &mut root.split(i as u64)).unwrap();
        let beta = rep.fit.expect("fit").beta;
        assert!(beta > 0.0 && beta < 1.0, "a={a}: beta={beta}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn companion_reproduces_recursion(
        coeffs in prop::collection::vec(-0.24f64..0.24, 1..5),
        seed in any::<u64>(),
        steps in 1usize..60,
    ) {
        // |a_j| < 0.24 with at most four lags keeps Σ|a_j| < 1, hence stable.
        let model = ArModel64::new(coeffs.clone(), 0.7).unwrap();
        let noise = normals(seed, steps);
        let c0 = normals(seed ^ 1, coeffs.len());
        let path = simulate_with_noise(&model, &c0, &noise).unwrap();
        let a = companion(&model);
        let mut state = c0.clone();
        let mut via_state = vec![state[0]];
        for e in &noise {
            state = a.matvec(&state).unwrap();
            state[0] += e;
            via_state.push(state[0]);
        }
        prop_assert_eq!(path, via_state);
    }

    #[test]
    fn unstable_models_are_rejected(a in 1.0f64..3.0, sign in prop::bool::ANY, b in 0.0f64..0.99) {
        let a = if sign { a } else { -a };
        prop_assert!(ArModel64::new(vec![a], 1.0).is_err());
        // Unit-sum positive lags put a root at one even though every |a_j| < 1.
        prop_assert!(ArModel64::new(vec![1.0 - b / 2.0, b / 2.0 + 1e-3], 1.0).is_err());
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal(seed in any::<u64>(), d in 2usize..8, k_frac in 0.0f64..1.0) {
        let k = ((d as f64) * k_frac) as usize;
        let vs: Vec<Vec<f64>> = (0..k).map(|i| normals(seed.wrapping_add(i as u64 + 1), d)).collect();
        let sub = if k == 0 { SubspaceSpec64::new(d, vec![]).unwrap() } else { SubspaceSpec64::from_spanning(d, &vs).unwrap() };
        let c = normals(seed, d);
        let (ideal, eta) = project_extraneous(&c, &sub).unwrap();
        let scale = norm_sq(&c).max(1.0);
        prop_assert!(dot(&ideal, &eta).abs() <= 1e-10 * scale);
        prop_assert!((norm_sq(&c) - norm_sq(&ideal) - norm_sq(&eta)).abs() <= 1e-12 * scale * d as f64);
        let (again, rest) = project_extraneous(&ideal, &sub).unwrap();
        for (x, y) in again.iter().zip(&ideal) {
            prop_assert!((x - y).abs() <= 1e-12 * scale.sqrt());
        }
        prop_assert!(norm_sq(&rest) <= 1e-24 * scale);
    }

    #[test]
    fn conditional_variance_ignores_condition(
        sxx in 0.2f64..3.0, scc in 0.2f64..3.0, rho in -0.95f64..0.95, c1 in -10.0f64..10.0, c2 in -10.0f64..10.0,
    ) {
        let j = GaussianJoint64::new(0.3, -0.2, sxx, scc, rho * (sxx * scc).sqrt()).unwrap();
        let (_, v1) = gaussian_conditional(&j, c1).unwrap();
        let (_, v2) = gaussian_conditional(&j, c2).unwrap();
        prop_assert_eq!(v1.to_bits(), v2.to_bits());
    }
}
