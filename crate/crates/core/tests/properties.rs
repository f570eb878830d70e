//! Property tests: metric axioms, softmax identities, estimator
//! equivariances, update linearity and the step-size formulas.

#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;

use sgld_core::metrics::wasserstein_p_1d;
use sgld_core::objectives::{
    softmax_jacobian, softmax_weights, PortfolioObjective, QuantileObjective, VarCvarObjective,
};
use sgld_core::objectives::{NoData, QuadraticOracle};
use sgld_core::reference::{empirical_cvar, empirical_quantile};
use sgld_core::sgld::{
    lambda_max_convex, lambda_max_nonconvex, run_chain, sgld_step, AssumptionConstants, GradientOracle, ParameterPoint,
    SgldConfig, PURE_SGD_BETA,
};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_wp(a: &[f64], b: &[f64], p: u32) -> f64 {
    let n = a.len() as f64;
    let best = permutations(a.len())
        .iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| (a[i] - b[j]).abs().powi(p as i32))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    (best / n).powf(1.0 / p as f64)
}

fn pair_of_samples(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0..100.0f64, n),
            prop::collection::vec(-100.0..100.0f64, n),
        )
    })
}

fn dyadic_samples() -> impl Strategy<Value = Vec<f64>> {
    prop::sample::select(vec![8usize, 16, 32, 64])
        .prop_flat_map(|n| prop::collection::vec((-512i32..512).prop_map(|k| k as f64 / 8.0), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sorted_pairing_is_optimal((a, b) in pair_of_samples(8), p in 1u32..=2) {
        let fast = wasserstein_p_1d(&a, &b, p).unwrap();
        let brute = brute_force_wp(&a, &b, p);
        prop_assert!((fast - brute).abs() <= 1e-9 * (1.0 + brute), "{fast} vs {brute}");
    }

    #[test]
    fn wasserstein_axioms(
        (a, b) in pair_of_samples(12),
        c_seed in prop::collection::vec(-100.0..100.0f64, 12),
        p in 1u32..=2,
    ) {
        let c = &c_seed[..a.len()];
        let ab = wasserstein_p_1d(&a, &b, p).unwrap();
        let ba = wasserstein_p_1d(&b, &a, p).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(wasserstein_p_1d(&a, &a, p).unwrap(), 0.0);
        let mut shuffled = a.clone();
        shuffled.reverse();
        prop_assert_eq!(wasserstein_p_1d(&a, &shuffled, p).unwrap(), 0.0);
        let ac = wasserstein_p_1d(&a, c, p).unwrap();
        let cb = wasserstein_p_1d(c, &b, p).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
        if ab == 0.0 {
            let (mut sa, mut sb) = (a.clone(), b.clone());
            sa.sort_by(f64::total_cmp);
            sb.sort_by(f64::total_cmp);
            prop_assert_eq!(sa, sb);
        }
    }

    #[test]
    fn w1_never_exceeds_w2((a, b) in pair_of_samples(50)) {
        let w1 = wasserstein_p_1d(&a, &b, 1).unwrap();
        let w2 = wasserstein_p_1d(&a, &b, 2).unwrap();
        prop_assert!(w1 <= w2 * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn wasserstein_shift_equivariance(
        n in 1usize..40,
        raw in prop::collection::vec((-4096i32..4096, -4096i32..4096), 40),
        shift in -4096i32..4096,
        p in 1u32..=2,
    ) {
        let a: Vec<f64> = raw[..n].iter().map(|r| r.0 as f64 / 8.0).collect();
        let b: Vec<f64> = raw[..n].iter().map(|r| r.1 as f64 / 8.0).collect();
        let c = shift as f64 / 8.0;
        let a2: Vec<f64> = a.iter().map(|x| x + c).collect();
        let b2: Vec<f64> = b.iter().map(|x| x + c).collect();
        prop_assert_eq!(wasserstein_p_1d(&a, &b, p).unwrap(), wasserstein_p_1d(&a2, &b2, p).unwrap());
    }

    #[test]
    fn softmax_lies_on_simplex(w in prop::collection::vec(-50.0..50.0f64, 2..8)) {
        let g = softmax_weights(&w);
        prop_assert!(g.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobian_columns_sum_to_zero(w in prop::collection::vec(-10.0..10.0f64, 2..8)) {
        let jac = softmax_jacobian(&w);
        let n = w.len();
        for j in 0..n {
            let col: f64 = (0..n).map(|i| jac[i][j]).sum();
            prop_assert!(col.abs() <= 1e-12, "column {j} sums to {col}");
            prop_assert!(jac[j][j] >= 0.0);
            for i in (0..n).filter(|&i| i != j) {
                prop_assert!(jac[i][j] <= 0.0);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(w in prop::collection::vec(-3.0..3.0f64, 2..6)) {
        let jac = softmax_jacobian(&w);
        let h = 1e-6;
        for j in 0..w.len() {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            let (gu, gd) = (softmax_weights(&up), softmax_weights(&down));
            for i in 0..w.len() {
                let fd = (gu[i] - gd[i]) / (2.0 * h);
                prop_assert!((fd - jac[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cvar_dominates_quantile(
        samples in prop::collection::vec(-1e3..1e3f64, 1..200),
        q in 0.01..0.99f64,
    ) {
        prop_assert!(empirical_cvar(&samples, q).unwrap() >= empirical_quantile(&samples, q).unwrap());
    }

    #[test]
    fn cvar_equivariance_exact_on_dyadic_inputs(
        samples in dyadic_samples(),
        q in prop::sample::select(vec![0.5, 0.75, 0.875]),
        shift in (-512i32..512).prop_map(|k| k as f64 / 8.0),
        scale in prop::sample::select(vec![0.25, 0.5, 2.0, 8.0]),
    ) {
        let base = empirical_cvar(&samples, q).unwrap();
        let shifted: Vec<f64> = samples.iter().map(|x| x + shift).collect();
        prop_assert_eq!(empirical_cvar(&shifted, q).unwrap(), base + shift);
        let scaled: Vec<f64> = samples.iter().map(|x| x * scale).collect();
        prop_assert_eq!(empirical_cvar(&scaled, q).unwrap(), base * scale);
        prop_assert_eq!(empirical_quantile(&shifted, q).unwrap(), empirical_quantile(&samples, q).unwrap() + shift);
    }

    #[test]
    fn cvar_equivariance_on_general_inputs(
        samples in prop::collection::vec(-10.0..10.0f64, 1..100),
        q in 0.01..0.99f64,
        shift in -10.0..10.0f64,
        scale in 0.01..100.0f64,
    ) {
        let base = empirical_cvar(&samples, q).unwrap();
        let shifted: Vec<f64> = samples.iter().map(|x| x + shift).collect();
        let scaled: Vec<f64> = samples.iter().map(|x| x * scale).collect();
        let tol = 1e-12 * (base.abs() + shift.abs() + 10.0) / (1.0 - q);
        prop_assert!((empirical_cvar(&shifted, q).unwrap() - (base + shift)).abs() <= tol);
        prop_assert!((empirical_cvar(&scaled, q).unwrap() - base * scale).abs() <= tol * scale);
    }

    #[test]
    fn step_is_linear_on_dyadic_inputs(
        t in prop::collection::vec((-1024i32..1024, -1024i32..1024), 1..5),
        g in prop::collection::vec((-1024i32..1024, -1024i32..1024), 5),
        xi in prop::collection::vec((-1024i32..1024, -1024i32..1024), 5),
        lambda_exp in 1i32..12,
        scale_exp in 1i32..12,
    ) {
        let d = t.len();
        let f = |v: i32| v as f64 / 64.0;
        let lambda = 2f64.powi(-lambda_exp);
        let s = 2f64.powi(-scale_exp);
        // chosen so that sqrt(2λ/β) = s exactly
        let beta = 2.0 * lambda / (s * s);
        let split = |pick: fn(&(i32, i32)) -> i32, v: &[(i32, i32)]| {
            ParameterPoint::new(v[..d].iter().map(|x| f(pick(x))).collect())
        };
        let sum = |v: &[(i32, i32)]| ParameterPoint::new(v[..d].iter().map(|x| f(x.0) + f(x.1)).collect());
        let first = |x: &(i32, i32)| x.0;
        let second = |x: &(i32, i32)| x.1;

        let s1 = sgld_step(&split(first, &t), lambda, beta, &split(first, &g), &split(first, &xi)).unwrap();
        let s2 = sgld_step(&split(second, &t), lambda, beta, &split(second, &g), &split(second, &xi)).unwrap();
        let joint = sgld_step(&sum(&t), lambda, beta, &sum(&g), &sum(&xi)).unwrap();
        for i in 0..d {
            prop_assert_eq!(joint[i], s1[i] + s2[i]);
        }
    }

    #[test]
    fn zero_temperature_contracts_geometrically(
        c in 0.1..5.0f64,
        lambda in 0.001..0.15f64,
        theta0 in -10.0..10.0f64,
        n in 1u64..200,
    ) {
        let config = SgldConfig::new(lambda, PURE_SGD_BETA, n, ParameterPoint::scalar(theta0)).unwrap();
        let trace = run_chain(&config, &QuadraticOracle::new(c, 1), &mut NoData, n).unwrap();
        let expected = (1.0 - lambda * c).powi(n as i32) * theta0;
        prop_assert!((trace.terminal[0] - expected).abs() < 1e-9 * (1.0 + theta0.abs()));
    }

    #[test]
    fn lambda_max_matches_independent_evaluation(
        a in 1e-9..10.0f64,
        l1 in 1e-9..10.0f64,
        e in 1.0..1e4f64,
        l_clc in 1e-6..10.0f64,
    ) {
        let c = AssumptionConstants {
            rho: 0.0, l1, l2: 0.0, k1_bound: 1.0, l_clc, a_dissip: a, b_dissip: 0.0, e_k_rho: e,
        };
        let got = lambda_max_nonconvex(&c).unwrap();
        let compact = [a.min(a.powf(1.0 / 3.0)) / (24.0 * (1.0 + l1) * (1.0 + l1) * e), 1.0 / (4.0 * a)];
        let sharp = [
            a / (24.0 * l1.powf(2.0) * e),
            a.powf(0.5) / (8.0 * (l1.powf(3.0) * e).powf(0.5)),
            a.powf(1.0 / 3.0) / (32.0 * l1.powf(4.0) * e).powf(1.0 / 3.0),
            1.0 / (4.0 * a),
        ];
        let want = compact.iter().copied().fold(f64::INFINITY, f64::min);
        let want_sharp = sharp.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((got.lambda_max - want).abs() <= 1e-12 * want);
        prop_assert!((got.lambda_max_sharp - want_sharp).abs() <= 1e-12 * want_sharp);

        let convex = lambda_max_convex(a, l_clc, l1, e).unwrap();
        let want_convex = (0.5 / (a + l_clc)).min(a / (4.0 * l1.powf(2.0) * e));
        prop_assert!((convex - want_convex).abs() <= 1e-12 * want_convex);
    }

    #[test]
    fn quantile_split_is_exact_and_bounded(
        q in 0.01..0.99f64,
        gamma in 1e-8..1.0f64,
        theta in -10.0..10.0f64,
        x in -10.0..10.0f64,
    ) {
        let o = QuantileObjective::new(q, gamma).unwrap();
        check_split(&o, &[theta], &[x])?;
    }

    #[test]
    fn var_cvar_split_is_exact_and_bounded(
        q in 0.01..0.99f64,
        gamma in 1e-8..1.0f64,
        theta in -10.0..10.0f64,
        x in -10.0..10.0f64,
    ) {
        let o = VarCvarObjective::new(q, gamma).unwrap();
        check_split(&o, &[theta], &[x])?;
    }

    #[test]
    fn portfolio_split_is_exact_and_bounded(
        q in 0.01..0.99f64,
        gamma in 1e-8..1.0f64,
        theta_hat in prop::collection::vec(-5.0..5.0f64, 4),
        x in prop::collection::vec(-10.0..10.0f64, 3),
    ) {
        let o = PortfolioObjective::new(q, gamma, 3).unwrap();
        check_split(&o, &theta_hat, &x)?;
    }

    #[test]
    fn var_cvar_mean_gradient_is_monotone(
        samples in prop::collection::vec(-5.0..5.0f64, 1..300),
        grid in prop::collection::vec(-6.0..6.0f64, 2..20),
    ) {
        let o = VarCvarObjective { gamma: 0.0, ..VarCvarObjective::new(0.9, 1e-8).unwrap() };
        let mut grid = grid;
        grid.sort_by(f64::total_cmp);
        let means: Vec<f64> = grid
            .iter()
            .map(|&t| samples.iter().map(|&x| sgld_core::objectives::var_cvar_grad(t, x, &o)).sum::<f64>() / samples.len() as f64)
            .collect();
        for w in means.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12);
        }
    }
}

fn check_split<O: GradientOracle>(o: &O, theta: &[f64], x: &[f64]) -> Result<(), TestCaseError> {
    let d = o.dim();
    let (mut h, mut f, mut g, mut bound) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    o.gradient(theta, x, &mut h);
    o.split(theta, x, &mut f, &mut g);
    o.bounded_part_bound(x, &mut bound);
    for i in 0..d {
        prop_assert!(
            (h[i] - (f[i] + g[i])).abs() <= 1e-12 * (1.0 + h[i].abs()),
            "coordinate {i}"
        );
        prop_assert!(
            g[i].abs() <= bound[i] * (1.0 + 1e-12),
            "coordinate {i}: |{}| > {}",
            g[i],
            bound[i]
        );
    }
    Ok(())
}

#[test]
fn jacobian_example_against_finite_differences() {
    let w = [1.0, 0.0, -1.0];
    let jac = softmax_jacobian(&w);
    let h = 1e-6;
    for j in 0..3 {
        let (mut up, mut down) = (w.to_vec(), w.to_vec());
        up[j] += h;
        down[j] -= h;
        let (gu, gd) = (softmax_weights(&up), softmax_weights(&down));
        for i in 0..3 {
            assert!(((gu[i] - gd[i]) / (2.0 * h) - jac[i][j]).abs() < 1e-6);
        }
    }
}
