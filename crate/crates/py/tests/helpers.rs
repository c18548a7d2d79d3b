use suplin_bsde_py::*;

#[test]
fn curve_json_has_closed_form_endpoint() {
    let v = curve_json(0.0, 2.0, 0.0, 0.0, 1.0).unwrap();
    assert!((v["mu_T"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(v["s"].as_array().unwrap().len(), v["mu"].as_array().unwrap().len());
    assert_eq!(v["regime"], "lambda_zero");
}

#[test]
fn critical_matches_small_lambda_closed_form() {
    let mu = critical(0.0, 1.0, 0.25, 1.0).unwrap();
    assert!((mu - 1.0 / 0.75f64.sqrt()).abs() < 1e-6);
    assert!(critical(0.0, 1.0, -1.0, 1.0).is_err());
}

#[test]
fn young_holds_above_minimal_constant() {
    let c = suplin_bsde::growth_inequalities::minimal_young_constant(2.0, 1.0).unwrap();
    for (x, y) in [(1e-3, 1e3), (5.0, 5.0), (40.0, 0.2)] {
        assert!(young_holds(x, y, 2.0, 1.0, c + 1e-9).unwrap());
    }
}

#[test]
fn phi_json_is_increasing_and_convex() {
    let v = phi_json(1.0, 1.0, 0.5, 0.5, 1.0, 0.5, 3.0).unwrap();
    assert!(v["phi"].as_f64().unwrap() > 0.0);
    assert!(v["d_x"].as_f64().unwrap() > 0.0);
    assert!(v["d_xx"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_json_passes_on_small_grid() {
    let v = verify_json(1.0, 1.0, 0.3, 0.1, 1.0, (4, 10, 10)).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn experiment_json_reports_provenance() {
    let v = experiment_json("kind = \"inequality\"\nseed = 4\n[inequality]\nk = 2.0\nlambda = 1.0\nsamples = 10000\n").unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["seed"], 4);
    assert_eq!(v["violations"], 0);
    assert!(experiment_json("kind = \"inequality\"\n").is_err());
}
