use proptest::prelude::*;
use std::f64::consts::SQRT_2;
use suplin_bsde::threshold_odes::*;

// Frozen from tests/oracle_gen.py (DOP853, rtol 1e-13, on μ or μ²).
const HALF_EPS01_MU1: f64 = 4.077_896_851_985_918;
const SMALL03_EPS_SEQ: [(f64, f64); 3] = [(0.1, 2.207_117_064_942_135_4), (0.01, 1.895_450_626_420_212_4), (0.001, 1.866_732_887_095_626_1)];
const SMALL03_CRIT: f64 = 1.863_569_897_811_699_7;
const ZERO11_MU1: f64 = 1.517_587_780_037_396_3;
const LARGE1_EPS05_MU1: f64 = 11.657_617_457_406_516;
const HALF_CRIT11_MU1: f64 = 3.879_479_244_353_722_5;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn remark_closed_forms() {
    let c = solve_mu(0.0, 1.0, 0.0, 0.0, 1.0, DEFAULT_STEPS).unwrap();
    assert!((c.mu_at(0.25) - 0.5).abs() < 1e-12);
    let c = solve_mu(2.0, 0.0, 0.0, 0.0, 1.0, DEFAULT_STEPS).unwrap();
    assert!((c.mu_t() - SQRT_2).abs() < 1e-12);
    let c = critical_threshold(0.0, 1.0, 0.25, Regime::LambdaSmall, 1.0).unwrap();
    assert!((c - 1.0 / 0.75f64.sqrt()).abs() < 1e-10);
    assert!((critical_threshold(0.0, 2.0, 0.0, Regime::LambdaZero, 1.0).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn closed_form_table() {
    assert_eq!(closed_form_mu(4.0, 0.0, 1.0, 0.0, Regime::LambdaZero), Some(2.0));
    assert!((closed_form_mu(1.0, 2.0, 0.0, 0.0, Regime::LambdaZero).unwrap() - SQRT_2).abs() < 1e-15);
    assert_eq!(closed_form_mu(1.0, 1.0, 1.0, 0.0, Regime::LambdaZero), None);
    let u = closed_form_unified_mu(1.0, 0.0, 1.0, 0.0).unwrap();
    assert!((u - SQRT_2).abs() < 1e-15);
}

#[test]
fn matches_frozen_high_order_values() {
    let cases = [
        (solve_mu(1.0, 1.0, 0.5, 0.1, 1.0, DEFAULT_STEPS).unwrap().mu_t(), HALF_EPS01_MU1),
        (solve_mu(1.0, 1.0, 0.0, 0.0, 1.0, DEFAULT_STEPS).unwrap().mu_t(), ZERO11_MU1),
        (solve_mu(1.0, 1.0, 1.0, 0.5, 1.0, DEFAULT_STEPS).unwrap().mu_t(), LARGE1_EPS05_MU1),
        (solve_mu(1.0, 1.0, 0.5, 0.0, 1.0, DEFAULT_STEPS).unwrap().mu_t(), HALF_CRIT11_MU1),
        (solve_mu(1.0, 1.0, 0.3, 0.0, 1.0, DEFAULT_STEPS).unwrap().mu_t(), SMALL03_CRIT),
    ];
    for (got, want) in cases {
        assert!(rel(got, want) < 1e-7, "{got} vs {want}");
    }
}

#[test]
fn independent_direct_rk4_at_tenfold_resolution() {
    // RK4 on μ itself in s (regular because μ(0) = ε > 0), 10^5 steps.
    let (beta, gamma, eps) = (1.0, 1.0, 0.1);
    let f = |m: f64| beta * m + gamma * gamma * (1.0 + eps) / (2.0 * m) + gamma * gamma * (1.0 + eps) / 2.0 + beta;
    let n = 100_000;
    let h = 1.0 / n as f64;
    let mut m = eps;
    for _ in 0..n {
        let k1 = f(m);
        let k2 = f(m + 0.5 * h * k1);
        let k3 = f(m + 0.5 * h * k2);
        let k4 = f(m + h * k3);
        m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let got = solve_mu(beta, gamma, 0.5, eps, 1.0, DEFAULT_STEPS).unwrap().mu_t();
    assert!(rel(got, m) < 1e-7, "{got} vs {m}");
}

#[test]
fn eps_sequence_decreases_with_shrinking_gaps() {
    let vals: Vec<f64> = SMALL03_EPS_SEQ
        .iter()
        .map(|&(e, want)| {
            let got = solve_mu(1.0, 1.0, 0.3, e, 1.0, DEFAULT_STEPS).unwrap().mu_t();
            assert!(rel(got, want) < 1e-7, "eps={e}: {got} vs {want}");
            got
        })
        .collect();
    let crit = critical_threshold(1.0, 1.0, 0.3, Regime::LambdaSmall, 1.0).unwrap();
    assert!(vals[0] > vals[1] && vals[1] > vals[2] && vals[2] > crit);
    assert!(vals[1] - vals[2] <= 0.5 * (vals[0] - vals[1]));
    let tiny = solve_mu(1.0, 1.0, 0.3, 1e-6, 1.0, DEFAULT_STEPS).unwrap().mu_t();
    assert!((tiny - crit).abs() < 1e-4);
}

#[test]
fn ode_residuals_are_small_for_all_regimes() {
    let cases = [(1.0, 1.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0), (1.0, 1.0, 0.3, 0.1), (1.0, 1.0, 0.3, 0.0), (2.0, 0.5, 0.5, 0.2), (1.0, 1.0, 0.5, 0.0), (1.0, 1.0, 1.0, 0.5), (1.0, 1.0, 2.0, 0.0)];
    for (b, g, l, e) in cases {
        let c = solve_mu(b, g, l, e, 1.0, DEFAULT_STEPS).unwrap();
        let r = c.ode_residual_max();
        assert!(r <= 1e-8, "({b},{g},{l},{e}) residual {r}");
        assert!(c.mu_values.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(c.mu_values[0], e);
    }
}

#[test]
fn refinement_is_stable() {
    for (b, g, l, e) in [(1.0, 1.0, 0.0, 0.0), (1.0, 1.0, 0.3, 0.0), (1.0, 1.0, 1.5, 0.2)] {
        let a = solve_mu(b, g, l, e, 1.0, DEFAULT_STEPS).unwrap().mu_t();
        let c = solve_mu(b, g, l, e, 1.0, 2 * DEFAULT_STEPS).unwrap().mu_t();
        assert!(rel(a, c) <= 1e-7);
    }
}

#[test]
fn nu_closed_form_lambda_zero() {
    let c = solve_curve(0.0, 1.0, 0.0, 0.0, 1.0, DEFAULT_STEPS).unwrap();
    for &s in &[0.01f64, 0.25, 0.5, 1.0] {
        let want = s / 2.0 + (2.0 * s).sqrt();
        assert!(rel(c.nu_at(s).unwrap(), want) < 1e-8, "s={s}");
    }
    assert_eq!(c.nu_values.as_ref().unwrap()[0], 0.0);
}

#[test]
fn nu_initial_values_and_refinement() {
    for (b, g, l, e) in [(1.0, 1.0, 0.0, 0.0), (1.0, 1.0, 0.3, 0.5), (1.0, 1.0, 0.5, 0.1), (1.0, 1.0, 1.0, 0.5)] {
        let c = solve_curve(b, g, l, e, 1.0, DEFAULT_STEPS).unwrap();
        let c2 = solve_curve(b, g, l, e, 1.0, 2 * DEFAULT_STEPS).unwrap();
        let nu = c.nu_values.as_ref().unwrap();
        let start = if l == 0.5 { 1.0 } else { 0.0 };
        assert_eq!(nu[0], start);
        assert!(nu.windows(2).all(|w| w[1] >= w[0]));
        assert!(rel(c.nu_t().unwrap(), c2.nu_t().unwrap()) < 1e-6);
    }
}

#[test]
fn inverse_integrable_at_zero() {
    let a = solve_mu(1.0, 1.0, 0.0, 0.0, 1.0, 1_000).unwrap().int_inv_mu_at(1.0);
    let b = solve_mu(1.0, 1.0, 0.0, 0.0, 1.0, 20_000).unwrap().int_inv_mu_at(1.0);
    assert!(a.is_finite() && rel(a, b) < 1e-8);
}

#[test]
fn critical_curves_have_no_nu_for_positive_lambda() {
    assert!(solve_curve(1.0, 1.0, 0.3, 0.0, 1.0, 100).is_err());
}

#[test]
fn invert_eps_round_trip() {
    let target = solve_mu(1.0, 1.0, 0.3, 0.3, 1.0, DEFAULT_STEPS).unwrap().mu_t();
    let e = invert_eps(1.0, 1.0, 0.3, Regime::LambdaSmall, target, 1.0).unwrap();
    assert!((e - 0.3).abs() < 1e-6, "{e}");
    let crit = critical_threshold(1.0, 1.0, 0.3, Regime::LambdaSmall, 1.0).unwrap();
    assert!(matches!(
        invert_eps(1.0, 1.0, 0.3, Regime::LambdaSmall, 0.99 * crit, 1.0),
        Err(suplin_bsde::Error::NotAboveCritical { .. })
    ));
    let e1 = invert_eps(1.0, 1.0, 1.0, Regime::LambdaLarge, 12.0, 1.0).unwrap();
    let e2 = invert_eps(1.0, 1.0, 1.0, Regime::LambdaLarge, 13.0, 1.0).unwrap();
    assert!(e2 > e1);
}

#[test]
fn unified_forms_agree_except_above_one_half() {
    for (l, e) in [(0.0, 0.0), (0.3, 0.2), (0.5, 0.2)] {
        let r = unified_consistency(1.0, 1.0, l, e, 1.0).unwrap();
        assert!(r.consistent, "lambda={l}: {r:?}");
    }
    // Above one half the two printed forms share the 1/μ coefficient but not the constant term.
    let r = unified_consistency(1.0, 1.0, 1.0, 0.2, 1.0).unwrap();
    assert_eq!(r.canonical.a, r.unified.a);
    assert!(!r.consistent);
    assert!(r.canonical.b > r.unified.b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn eps_ordering_is_pointwise(e1 in 0.01f64..0.5, de in 0.01f64..0.5, lam in prop::sample::select(vec![0.25, 0.5, 0.75, 1.5])) {
        let a = solve_mu(1.0, 1.0, lam, e1, 1.0, 2_000).unwrap();
        let b = solve_mu(1.0, 1.0, lam, e1 + de, 1.0, 2_000).unwrap();
        for (x, y) in a.mu_values.iter().zip(&b.mu_values) {
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn critical_below_every_eps_curve(beta in 0.0f64..2.0, gamma in 0.2f64..2.0, e in 0.001f64..0.3) {
        let c = critical_threshold(beta, gamma, 0.3, Regime::LambdaSmall, 1.0).unwrap();
        let m = solve_mu(beta, gamma, 0.3, e, 1.0, 2_000).unwrap().mu_t();
        prop_assert!(m > c);
    }
}
