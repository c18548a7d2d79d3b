use std::path::Path;
use std::sync::Mutex;
use suplin_bsde::bsde_engine::SimConfig;
use suplin_bsde::error::Error;
use suplin_bsde::experiments::*;
use suplin_bsde::generators::{ExampleParams, GeneratorSpec, TerminalModel, TerminalSpec};
use suplin_bsde::threshold_odes::Regime;

// the CLI reads SUPLIN_SEED, so CLI tests must not overlap
static CLI: Mutex<()> = Mutex::new(());

fn cli(args: &[&str]) -> i32 {
    cli_main(std::iter::once("suplin").chain(args.iter().copied()))
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const LINEAR_SOLVE: &str = r#"
kind = "solve"
seed = 5

[generator]
kind = "linear"
a = 0.5
b = 1.0

[terminal]
kind = "linear"

[sim]
steps = 64
paths = 65536
"#;

fn small_apriori(name: &str, lambda: f64, paths: usize) -> ExperimentConfig {
    ExperimentConfig {
        generator: Some(GeneratorSpec::Example { name: name.into(), params: ExampleParams { beta: 1.0, gamma: 1.0, lambda, k: 1.0 } }),
        terminal: Some(TerminalSpec::Linear { coef: 1.0, shift: 0.0 }),
        truncation: Some((8.0, 8.0)),
        sim: SimConfig { steps: 32, paths, ..SimConfig::default() },
        envelope_samples: 20_000,
        seed: 12,
        ..ExperimentConfig::new(ExperimentKind::Apriori)
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small_apriori("ex4.8", 0.3, 4096);
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    let solve = ExperimentConfig::from_toml(LINEAR_SOLVE).unwrap();
    assert_eq!(solve.kind, ExperimentKind::Solve);
    assert_eq!(solve.generator, Some(GeneratorSpec::Linear { a: 0.5, b: 1.0, c: 0.0 }));
    assert_eq!(solve.sim.paths, 65536);
    assert_eq!(solve.sim.basis_degree, SimConfig::default().basis_degree);
}

#[test]
fn config_validation_errors() {
    let missing_trunc = "kind = \"apriori\"\n[generator]\nkind = \"zero\"\n[terminal]\nkind = \"linear\"\n";
    assert!(matches!(ExperimentConfig::from_toml(missing_trunc), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("kind = \"thresholds\"\n"), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("kind = \"solve\"\nbogus = 1\n"), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("kind = \"nonsense\"\n"), Err(Error::Config(_))));
}

#[test]
fn config_hash_is_stable_and_sensitive() {
    let a = ExperimentConfig::from_toml(LINEAR_SOLVE).unwrap();
    let b = ExperimentConfig::from_toml(LINEAR_SOLVE).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    assert!(a.hash().chars().all(|c| c.is_ascii_hexdigit()));
    let c = ExperimentConfig { seed: 6, ..a.clone() };
    assert_ne!(a.hash(), c.hash());
    assert_eq!(Provenance::of(&a).config_hash, a.hash());
}

#[test]
fn cli_thresholds_and_usage_errors() {
    let _g = CLI.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(cli(&["--out-dir", d, "thresholds", "--beta", "0", "--gamma", "1", "--lambda", "0"]), 0);
    let v = read_json(&dir.path().join("thresholds.json"));
    assert!((v["mu_T"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(v["version"], VERSION);
    let csv = std::fs::read_to_string(dir.path().join("thresholds.csv")).unwrap();
    assert!(csv.starts_with("# seed="));
    assert_eq!(csv.lines().nth(1), Some("s,mu,nu"));

    assert_eq!(cli(&["no-such-command"]), 1);
    assert_eq!(cli(&["thresholds", "--beta", "1"]), 1);
    assert_eq!(cli(&["thresholds", "--beta", "1", "--gamma", "1", "--lambda", "0.3"]), 1);
    assert_eq!(cli(&["solve", "--config", "/nonexistent/config.toml"]), 1);
}

#[test]
fn cli_solve_linear_matches_closed_form() {
    let _g = CLI.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("solve.toml");
    std::fs::write(&cfg, LINEAR_SOLVE).unwrap();
    let out = dir.path().join("out");
    assert_eq!(cli(&["--out-dir", out.to_str().unwrap(), "solve", "--config", cfg.to_str().unwrap()]), 0);
    let v = read_json(&out.join("solve.json"));
    let y0 = v["summary"]["diagnostics"]["y0"].as_f64().unwrap();
    assert!((y0 - 2.0 * (0.5f64.exp() - 1.0)).abs() < 1e-2, "y0 = {y0}");
    assert_eq!(v["seed"], 5);
    let csv = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("t,path_id,Y")));
}

#[test]
fn seed_precedence_flag_over_env_over_config() {
    let _g = CLI.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("solve.toml");
    std::fs::write(&cfg, LINEAR_SOLVE.replace("paths = 65536", "paths = 1024").replace("steps = 64", "steps = 8")).unwrap();
    let (c, d) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    let seed = || read_json(&dir.path().join("solve.json"))["seed"].as_u64().unwrap();

    std::env::remove_var(SEED_ENV);
    cli(&["--out-dir", d, "solve", "--config", c]);
    assert_eq!(seed(), 5);
    std::env::set_var(SEED_ENV, "77");
    cli(&["--out-dir", d, "solve", "--config", c]);
    assert_eq!(seed(), 77);
    cli(&["--out-dir", d, "solve", "--config", c, "--seed", "9"]);
    assert_eq!(seed(), 9);
    std::env::set_var(SEED_ENV, "not-a-number");
    assert_eq!(cli(&["solve", "--config", c]), 1);
    std::env::remove_var(SEED_ENV);
}

#[test]
fn cli_compare_refuses_when_terminals_are_not_ordered() {
    let _g = CLI.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cmp.toml");
    let text = "kind = \"comparison\"\nenvelope_samples = 5000\n[generator]\nkind = \"constant\"\nvalue = 0.5\n[terminal]\nkind = \"linear\"\nshift = 1.0\n\
                [generator2]\nkind = \"constant\"\nvalue = 0.5\n[terminal2]\nkind = \"linear\"\n[sim]\nsteps = 8\npaths = 1024\n";
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(cli(&["compare", "--config", cfg.to_str().unwrap()]), 2);
}

#[test]
fn threshold_table_reproduces_closed_forms() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Thresholds);
    cfg.grid = Some(ThresholdGrid { betas: vec![0.0], gammas: vec![1.0], lambdas: vec![0.0, 0.25], horizon: 1.0, terminal: None, alpha: 0.0, samples: 0, factor: 1.05 });
    let rows = run_threshold_table(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[0].mu0_t - 1.0).abs() < 1e-6);
    assert!((rows[1].mu0_t - 2.0 / 3f64.sqrt()).abs() < 1e-6);
    for r in &rows {
        assert!((r.mu0_t - r.closed_form.unwrap()).abs() < 1e-6);
        assert!(r.certificate.is_none());
    }
}

#[test]
fn half_regime_certificate_passes_for_abs_brownian_terminal() {
    let mu0 = suplin_bsde::threshold_odes::critical_threshold(1.0, 1.0, 0.5, Regime::LambdaHalf, 1.0).unwrap();
    let xi = TerminalModel::new("abs", |b| b[0].abs());
    let c = integrability_certificate(Regime::LambdaHalf, 0.5, 1.05 * mu0, &xi, 0.0, 1.0, 100_000, 3).unwrap();
    assert!(c.passed, "{c:?}");
    assert!(c.estimate > 1.0);
}

#[test]
fn apriori_zero_generator_is_trivially_bounded() {
    let cfg = ExperimentConfig {
        generator: Some(GeneratorSpec::Zero),
        terminal: Some(TerminalSpec::Linear { coef: 1.0, shift: 0.0 }),
        truncation: Some((1.0, 1.0)),
        sim: SimConfig { steps: 16, paths: 8192, ..SimConfig::default() },
        envelope_samples: 5000,
        ..ExperimentConfig::new(ExperimentKind::Apriori)
    };
    let r = run_apriori_bound(&cfg).unwrap();
    assert!(r.passed);
    assert_eq!(r.regime, Regime::LambdaZero);
    assert!(r.min_margin > 0.0);
    assert!(r.y0.abs() < 0.05);
    assert_eq!(r.constants.k, 1.0);
    assert!(r.lhs.iter().all(|&l| l <= 1.0));
}

#[test]
fn apriori_requires_truncation() {
    let mut cfg = small_apriori("ex4.8", 0.3, 1024);
    cfg.truncation = None;
    assert!(run_apriori_bound(&cfg).is_err());
}

#[test]
fn apriori_margins_stable_under_doubling_paths() {
    let a = run_apriori_bound(&small_apriori("ex3.8-g2", 0.0, 1 << 13)).unwrap();
    let b = run_apriori_bound(&small_apriori("ex3.8-g2", 0.0, 1 << 14)).unwrap();
    assert!(a.passed && b.passed);
    for i in 0..a.margins.len() {
        let tol = 4.0 * a.margin_se[i].hypot(b.margin_se[i]) + 1e-9 * a.rhs;
        assert!((a.margins[i] - b.margins[i]).abs() <= tol, "t = {}: {} vs {} (tol {tol})", a.times[i], a.margins[i], b.margins[i]);
    }
}

#[test]
fn apriori_is_bit_reproducible() {
    let cfg = small_apriori("ex5.7-g", 0.5, 2048);
    let a = serde_json::to_string(&run_apriori_bound(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_apriori_bound(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn run_experiment_dispatches_inequality_sharpness() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Inequality);
    cfg.inequality = Some(InequalitySpec { k: 0.25, lambda: 2.0, samples: 0 });
    let (v, passed) = run_experiment(&cfg).unwrap();
    assert!(passed);
    assert!(v["sharpness"].is_object());
    assert_eq!(v["config_hash"], cfg.hash());
}

#[test]
fn inequality_between_zones_is_an_error() {
    assert!(run_inequality(&InequalitySpec { k: 0.5, lambda: 2.0, samples: 10 }, 1).is_err());
}
