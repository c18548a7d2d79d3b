//! Experiment harness: a-priori bound checks, comparison runs, threshold
//! tables and the `suplin` command line.
//!
//! Monte Carlo verdicts use a 3-SE band. A PASS means the data are consistent
//! with the inequality, not that it is proved.

use crate::bsde_engine::{pair_mean_se, simulate_brownian, solve_bsde, write_json, write_solution_csv, BsdeSolution, PathEnsemble, SimConfig, SolutionSummary};
use crate::error::{invalid, Error, Result};
use crate::generators::{envelope_check, structural_checks, truncate, truncate_terminal, EnvelopeReport, GeneratorModel, GeneratorSpec, SampleRanges, Structural, TerminalModel, TerminalSpec};
use crate::growth_inequalities::{minimal_young_constant, sharpness_scan, young_log_holds, SharpnessWitness, YoungLogParams};
use crate::test_functions::{psi_eval, psi_phi_sandwich_constant, psi_zero, verify_test_function, PsiPhiSandwich, TestFunction, TestFunctionReport, VerificationGrid};
use crate::threshold_odes::{closed_form_mu, critical_threshold, solve_mu, solve_nu, Regime, DEFAULT_STEPS};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "SUPLIN_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Apriori,
    Comparison,
    Thresholds,
    Inequality,
    Testfn,
    Solve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    /// Terminal condition as a function of `B_T` (d = 1) for the integrability certificate.
    #[serde(default)]
    pub terminal: Option<TerminalSpec>,
    /// Constant `α`; the certificate uses `|ξ| + α·T`.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_cert_samples")]
    pub samples: usize,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalitySpec {
    pub k: f64,
    pub lambda: f64,
    #[serde(default = "default_ineq_samples")]
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFnSpec {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_grid")]
    pub grid: [usize; 3],
}

fn one() -> f64 {
    1.0
}
fn default_cert_samples() -> usize {
    100_000
}
fn default_factor() -> f64 {
    1.05
}
fn default_ineq_samples() -> usize {
    1_000_000
}
fn default_grid() -> [usize; 3] {
    [12, 40, 40]
}
fn default_eps() -> f64 {
    0.5
}
fn default_envelope_samples() -> usize {
    200_000
}

/// One experiment, as read from a TOML config. Sections: `[generator]`,
/// `[terminal]` (and `generator2`/`terminal2` for comparisons), `[sim]`,
/// `[grid]`, `[inequality]`, `[testfn]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub terminal: Option<TerminalSpec>,
    #[serde(default)]
    pub generator2: Option<GeneratorSpec>,
    #[serde(default)]
    pub terminal2: Option<TerminalSpec>,
    #[serde(default)]
    pub sim: SimConfig,
    /// `(n, p)` truncation levels; required by `apriori`.
    #[serde(default)]
    pub truncation: Option<(f64, f64)>,
    /// ε of the threshold curve used by the a-priori bound (ignored for λ = 0).
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_envelope_samples")]
    pub envelope_samples: usize,
    #[serde(default)]
    pub grid: Option<ThresholdGrid>,
    #[serde(default)]
    pub inequality: Option<InequalitySpec>,
    #[serde(default)]
    pub testfn: Option<TestFnSpec>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            seed: 0,
            generator: None,
            terminal: None,
            generator2: None,
            terminal2: None,
            sim: SimConfig::default(),
            truncation: None,
            eps: default_eps(),
            envelope_samples: default_envelope_samples(),
            grid: None,
            inequality: None,
            testfn: None,
            out_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::Config(format!("{:?} needs {what}", self.kind))) };
        match self.kind {
            ExperimentKind::Apriori => {
                need(self.generator.is_some() && self.terminal.is_some(), "[generator] and [terminal]")?;
                need(self.truncation.is_some(), "truncation = [n, p]")?;
            }
            ExperimentKind::Comparison | ExperimentKind::Solve => need(self.generator.is_some() && self.terminal.is_some(), "[generator] and [terminal]")?,
            ExperimentKind::Thresholds => need(self.grid.is_some(), "[grid]")?,
            ExperimentKind::Inequality => need(self.inequality.is_some(), "[inequality]")?,
            ExperimentKind::Testfn => need(self.testfn.is_some(), "[testfn]")?,
        }
        Ok(())
    }

    /// Simulation config with the experiment seed applied.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig { seed: self.seed, ..self.sim.clone() }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn pair(&self) -> Result<(GeneratorModel, TerminalModel)> {
        let g = self.generator.as_ref().ok_or_else(|| Error::Config("missing [generator]".into()))?.build()?;
        let xi = self.terminal.as_ref().ok_or_else(|| Error::Config("missing [terminal]".into()))?.build();
        Ok((g, xi))
    }
}

/// Provenance block embedded in every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Provenance {
        Provenance { seed: cfg.seed, config_hash: cfg.hash(), version: VERSION.to_string() }
    }
}

// ---------------------------------------------------------------------------
// a-priori bounds

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `K` in `RHS = K·E[ψ(|ξ|+∫α, μ(T))] + K` (for λ = ½: `K·E[(1+|ξ|+∫α)^{1+μ(T)}]`).
    pub k: f64,
    pub ln_k: f64,
    pub additive: bool,
    pub mu_t: f64,
    /// `ν(T)` (for λ = ½ the multiplicative factor of φ).
    pub nu_t: f64,
    pub eps: f64,
    /// `δ_{λ,ε}` of the Z-energy term (λ > ½ only).
    pub delta: Option<f64>,
    /// Absent for the degenerate envelope β = γ = 0.
    pub sandwich: Option<PsiPhiSandwich>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub regime: Regime,
    pub generator: String,
    pub terminal: String,
    pub truncation: (f64, f64),
    pub times: Vec<f64>,
    /// `E[LHS_t]` per grid time.
    pub lhs: Vec<f64>,
    pub rhs: f64,
    /// `ln RHS`, finite even when RHS overflows.
    pub ln_rhs: f64,
    pub rhs_se: f64,
    /// `RHS − LHS_t` and its standard error (antithetic pairs; sides pooled as independent).
    pub margins: Vec<f64>,
    pub margin_se: Vec<f64>,
    /// `(δ/2)·E[Σ_{j≥i}|Z_j|²Δt]` included in `lhs` (λ > ½ only).
    pub z_energy: Option<Vec<f64>>,
    pub min_margin: f64,
    pub min_margin_se: f64,
    pub min_index: usize,
    /// `ln RHS − ln max_t LHS_t`: how far from tight the bound is.
    pub ln_slack: f64,
    pub constants: BoundConstants,
    pub envelope: EnvelopeReport,
    pub y0: f64,
    pub y0_se: f64,
    pub z_clamps: usize,
    pub passed: bool,
    pub verdict: String,
}

/// ψ in the form used by the regime's bound: `x·e^{μ√(2ln(1+x))}` for λ = 0,
/// `(1+x)^{1+μ}` for λ = ½ and the unified ψ otherwise.
pub fn bound_psi(regime: Regime, x: f64, mu: f64, lambda: f64) -> Result<f64> {
    match regime {
        Regime::LambdaZero => psi_zero(x, mu),
        Regime::LambdaHalf => Ok(((1.0 + mu) * x.ln_1p()).exp()),
        _ => psi_eval(x, mu, lambda),
    }
}

/// Pathwise `∫_0^{t_i} α` by left Riemann sums, time-major like the solution.
fn alpha_integrals(g: &GeneratorModel, ens: &PathEnsemble) -> Vec<f64> {
    let cfg = &ens.config;
    let (m, n, dt) = (cfg.paths, cfg.steps, cfg.dt());
    let mut out = vec![0.0; m * (n + 1)];
    for i in 0..n {
        let t = cfg.time(i);
        for k in 0..m {
            out[(i + 1) * m + k] = out[i * m + k] + g.alpha(t, ens.state(k, i)) * dt;
        }
    }
    out
}

/// Solves the truncated member `(g^{n,p}, ξ^{n,p})` on a fresh ensemble and
/// checks the regime's a-priori bound in expectation at every grid time.
pub fn run_apriori_bound(cfg: &ExperimentConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let (g, xi) = cfg.pair()?;
    let (n, p) = cfg.truncation.ok_or_else(|| Error::Precondition("a-priori bounds are stated for bounded (truncated) members".into()))?;
    let gt = truncate(&g, n, p)?;
    let xt = truncate_terminal(&xi, n, p)?;
    let env = envelope_check(&gt, cfg.envelope_samples, SampleRanges::default(), cfg.seed, false)?;
    if !env.passed() {
        return Err(Error::Precondition(format!("{} fails its growth envelope ({} violations)", gt.tag, env.violations)));
    }
    let sim = cfg.sim_config();
    let ens = simulate_brownian(&sim)?;
    let sol = solve_bsde(&gt, &xt, &ens)?;
    apriori_from_solution(&gt, &sol, &ens, cfg.eps, (n, p), env)
}

fn apriori_from_solution(g: &GeneratorModel, sol: &BsdeSolution, ens: &PathEnsemble, eps: f64, np: (f64, f64), envelope: EnvelopeReport) -> Result<BoundReport> {
    let growth = g.growth;
    let regime = growth.regime();
    let lambda = growth.lambda;
    let cfg = &ens.config;
    let (m, n, dt) = (cfg.paths, cfg.steps, cfg.dt());
    let eps = if regime == Regime::LambdaZero { 0.0 } else { eps };
    if regime != Regime::LambdaZero && !(eps > 0.0) {
        return Err(invalid("the a-priori bound needs ε > 0 for λ > 0"));
    }
    let degenerate = regime == Regime::LambdaZero && growth.beta == 0.0 && growth.gamma == 0.0;
    let tf = if degenerate { None } else { Some(TestFunction::new(growth.beta, growth.gamma, lambda, eps, cfg.horizon, DEFAULT_STEPS)?) };
    let sandwich = tf.as_ref().map(psi_phi_sandwich_constant).transpose()?;
    let mu = |t: f64| tf.as_ref().map_or(0.0, |tf| tf.curve.mu_at(t));
    let mu_t = mu(cfg.horizon);
    let (ln_k, additive, nu_t) = match (&tf, &sandwich) {
        // β = γ = 0: μ ≡ 0, ψ(x, 0) = x and Jensen gives K = 1
        (None, _) => (0.0, true, 1.0),
        (Some(tf), _) if regime == Regime::LambdaHalf => {
            // φ(s, x) = ν(s)(1+x)^{1+μ(s)} with ν ≥ 1, so K = ν(T) and no additive term
            let ln_nu = tf.ln_phi(cfg.horizon, 0.0)?;
            (ln_nu, false, ln_nu.exp())
        }
        (Some(_), Some(sw)) => (sw.ln_k, true, sw.nu_t),
        (Some(_), None) => unreachable!(),
    };
    let k = ln_k.exp();
    let delta = tf.as_ref().filter(|_| regime == Regime::LambdaLarge).map(|tf| tf.shift);
    let a = alpha_integrals(g, ens);

    // K·(E ψ_T + 1) is formed in logs: K alone can overflow f64
    let terminal: Vec<f64> = (0..m).map(|kk| bound_psi(regime, sol.y_at(kk, n).abs() + a[n * m + kk], mu_t, lambda)).collect::<Result<_>>()?;
    let (psi_t, psi_t_se) = pair_mean_se(&terminal);
    let ln_rhs = ln_k + (psi_t + if additive { 1.0 } else { 0.0 }).ln();
    let rhs = ln_rhs.exp();
    let rhs_se = (ln_k + psi_t_se.ln()).exp();

    // remaining Z energy Σ_{j ≥ i} |Z_j|²Δt, per path
    let mut energy = vec![0.0; m];
    let mut z_energy = delta.map(|_| vec![0.0; n + 1]);
    let mut lhs = vec![0.0; n + 1];
    let mut margins = vec![0.0; n + 1];
    let mut margin_se = vec![0.0; n + 1];
    for i in (0..=n).rev() {
        if i < n {
            for (kk, e) in energy.iter_mut().enumerate() {
                *e += sol.z_at(kk, i).iter().map(|z| z * z).sum::<f64>() * dt;
            }
        }
        let t = cfg.time(i);
        let mut l = Vec::with_capacity(m);
        for kk in 0..m {
            let x = sol.y_at(kk, i).abs() + if regime == Regime::LambdaLarge { a[i * m + kk] } else { 0.0 };
            let mut v = bound_psi(regime, x, mu(t), lambda)?;
            if let Some(d) = delta {
                v += 0.5 * d * energy[kk];
            }
            l.push(v);
        }
        let (lm, lse) = pair_mean_se(&l);
        lhs[i] = lm;
        // conservative: the two sides are treated as independent
        margins[i] = rhs - lm;
        margin_se[i] = lse.hypot(rhs_se);
        if let (Some(ze), Some(d)) = (z_energy.as_mut(), delta) {
            ze[i] = 0.5 * d * pair_mean_se(&energy).0;
        }
    }
    let (min_index, _) = margins.iter().zip(&margin_se).enumerate().map(|(i, (mg, se))| (i, mg + 3.0 * se)).min_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
    let passed = lhs.iter().all(|l| l.is_finite()) && margins.iter().zip(&margin_se).all(|(mg, se)| !mg.is_nan() && *mg >= -3.0 * se);
    let verdict = if passed { "consistent with the a-priori bound" } else { "bound violated beyond 3 SE" };
    let ln_slack = ln_rhs - lhs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ln();
    Ok(BoundReport {
        ln_slack,
        regime,
        generator: g.tag.clone(),
        terminal: sol.meta.terminal.clone(),
        truncation: np,
        times: (0..=n).map(|i| cfg.time(i)).collect(),
        lhs,
        rhs,
        ln_rhs,
        rhs_se,
        min_margin: margins[min_index],
        min_margin_se: margin_se[min_index],
        margins,
        margin_se,
        z_energy,
        min_index,
        constants: BoundConstants { k, ln_k, additive, mu_t, nu_t, eps, delta, sandwich },
        envelope,
        y0: sol.y0(),
        y0_se: sol.y0_se(),
        z_clamps: sol.diagnostics.z_clamps,
        passed,
        verdict: verdict.to_string(),
    })
}

// ---------------------------------------------------------------------------
// comparison

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub generator: String,
    pub generator2: String,
    /// Which generator carried the uniqueness certificate and which assumption it passed.
    pub certified: String,
    pub times: Vec<f64>,
    /// `max_k (Y_t − Y'_t)⁺` per grid time.
    pub violation: Vec<f64>,
    /// 3 × pooled SE of the two `Y_t` means.
    pub tolerance: Vec<f64>,
    pub max_violation: f64,
    /// Range of `Y' − Y` over all paths and times.
    pub gap_min: f64,
    pub gap_max: f64,
    pub y0: f64,
    pub y0_prime: f64,
    pub passed: bool,
}

fn certify(g: &GeneratorModel, cfg: &ExperimentConfig) -> Result<Option<String>> {
    let (samples, seed) = (cfg.envelope_samples, cfg.seed);
    let ranges = SampleRanges { dim: cfg.sim.d, horizon: cfg.sim.horizon, ..SampleRanges::default() };
    if g.flags.convex || g.flags.concave {
        let r = structural_checks(g, Structural::Un3, samples, ranges, seed)?;
        if r.passed() {
            return Ok(Some(format!("{}: UN3", g.tag)));
        }
    }
    if g.moduli.is_some() {
        let u1 = structural_checks(g, Structural::Un1, samples, ranges, seed)?;
        let u2 = structural_checks(g, Structural::Un2, samples, ranges, seed)?;
        if u1.passed() && u2.passed() {
            return Ok(Some(format!("{}: UN1+UN2", g.tag)));
        }
    }
    Ok(None)
}

/// `Y ≤ Y'` for `(ξ, g)` against `(ξ', g')` on one shared ensemble.
/// The second pair defaults to the first.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let (mut g, mut xi) = cfg.pair()?;
    let mut g2 = match &cfg.generator2 {
        Some(s) => s.build()?,
        None => g.clone(),
    };
    let mut xi2 = cfg.terminal2.as_ref().map(|s| s.build()).unwrap_or_else(|| xi.clone());
    if let Some((n, p)) = cfg.truncation {
        (g, xi, g2, xi2) = (truncate(&g, n, p)?, truncate_terminal(&xi, n, p)?, truncate(&g2, n, p)?, truncate_terminal(&xi2, n, p)?);
    }
    let sim = cfg.sim_config();
    let ens = simulate_brownian(&sim)?;
    let (m, n) = (sim.paths, sim.steps);
    if let Some(k) = (0..m).find(|&k| xi.eval(ens.state(k, n)) > xi2.eval(ens.state(k, n))) {
        return Err(Error::Precondition(format!("ξ > ξ' on path {k}")));
    }
    // uniqueness certificate for g (check g ≤ g' along (Y', Z')) or g' (along (Y, Z))
    let cert_g = certify(&g, cfg)?;
    let cert_g2 = if cert_g.is_none() { certify(&g2, cfg)? } else { None };
    let certified = cert_g.clone().or(cert_g2).ok_or_else(|| Error::Precondition(format!("neither {} nor {} passes UN3 or UN1+UN2", g.tag, g2.tag)))?;
    let s1 = solve_bsde(&g, &xi, &ens)?;
    let s2 = solve_bsde(&g2, &xi2, &ens)?;
    let along = if cert_g.is_some() { &s2 } else { &s1 };
    for i in 0..n {
        let t = sim.time(i);
        for k in 0..m {
            if s1.y_at(k, i) > s2.y_at(k, i) {
                let (y, z) = (along.y_at(k, i), along.z_at(k, i));
                let (a, b) = (g.eval(t, ens.state(k, i), y, z), g2.eval(t, ens.state(k, i), y, z));
                if a > b + 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::Precondition(format!("g > g' along the solution at step {i}, path {k}")));
                }
            }
        }
    }
    let mut violation = Vec::with_capacity(n + 1);
    let mut tolerance = Vec::with_capacity(n + 1);
    let (mut gap_min, mut gap_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=n {
        let (c1, c2) = (s1.y_column(i), s2.y_column(i));
        let mut v: f64 = 0.0;
        for (a, b) in c1.iter().zip(c2) {
            v = v.max(a - b);
            gap_min = gap_min.min(b - a);
            gap_max = gap_max.max(b - a);
        }
        let se = if i == 0 { (s1.y0_se().powi(2) + s2.y0_se().powi(2)).sqrt() } else { (pair_mean_se(c1).1.powi(2) + pair_mean_se(c2).1.powi(2)).sqrt() };
        violation.push(v);
        tolerance.push(3.0 * se);
    }
    let max_violation = violation.iter().cloned().fold(0.0, f64::max);
    let passed = violation.iter().zip(&tolerance).all(|(v, t)| v <= t);
    Ok(ComparisonReport {
        generator: s1.meta.generator.clone(),
        generator2: s2.meta.generator.clone(),
        certified,
        times: (0..=n).map(|i| sim.time(i)).collect(),
        violation,
        tolerance,
        max_violation,
        gap_min,
        gap_max,
        y0: s1.y0(),
        y0_prime: s2.y0(),
        passed,
    })
}

/// The three reference comparisons: a terminal shift under a (y,z)-free
/// generator, a generator shift `g' = g + 1`, and identical inputs.
pub fn comparison_examples(sim: SimConfig) -> Vec<(&'static str, ExperimentConfig)> {
    let base = |g: GeneratorSpec, xi: TerminalSpec, g2: GeneratorSpec, xi2: TerminalSpec| ExperimentConfig {
        generator: Some(g),
        terminal: Some(xi),
        generator2: Some(g2),
        terminal2: Some(xi2),
        sim: sim.clone(),
        envelope_samples: 50_000,
        ..ExperimentConfig::new(ExperimentKind::Comparison)
    };
    let ex = GeneratorSpec::Example { name: "ex5.7-g1".into(), params: crate::generators::ExampleParams { beta: 1.0, gamma: 1.0, lambda: 0.5, k: 1.0 } };
    let mut identical = base(ex.clone(), TerminalSpec::Abs { coef: 1.0 }, ex, TerminalSpec::Abs { coef: 1.0 });
    identical.truncation = Some((8.0, 8.0));
    vec![
        ("terminal-shift", base(GeneratorSpec::Constant { value: 0.5 }, TerminalSpec::Linear { coef: 1.0, shift: -1.0 }, GeneratorSpec::Constant { value: 0.5 }, TerminalSpec::Linear { coef: 1.0, shift: 0.0 })),
        (
            "generator-shift",
            base(
                GeneratorSpec::AbsZ { gamma: 0.8 },
                TerminalSpec::Linear { coef: 1.0, shift: 0.0 },
                GeneratorSpec::Shifted { base: Box::new(GeneratorSpec::AbsZ { gamma: 0.8 }), shift: 1.0 },
                TerminalSpec::Linear { coef: 1.0, shift: 0.0 },
            ),
        ),
        ("identical", identical),
    ]
}

// ---------------------------------------------------------------------------
// threshold tables

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityCertificate {
    pub mu: f64,
    pub estimate: f64,
    pub se: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub regime: Regime,
    pub mu0_t: f64,
    pub closed_form: Option<f64>,
    pub certificate: Option<IntegrabilityCertificate>,
}

/// MC estimate of `E[ψ(|ξ(B_T)| + αT, μ)]` from antithetic normal pairs.
/// PASS when the estimate is finite with relative SE ≤ 10%.
pub fn integrability_certificate(regime: Regime, lambda: f64, mu: f64, xi: &TerminalModel, alpha: f64, horizon: f64, samples: usize, seed: u64) -> Result<IntegrabilityCertificate> {
    let pairs = samples.div_ceil(2).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = horizon.sqrt();
    let mut vals = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let w: f64 = rng.sample::<f64, _>(StandardNormal) * sd;
        for b in [w, -w] {
            let x = xi.eval(&[b]).abs() + alpha * horizon;
            // the λ = ½ certificate is on (|ξ|+∫α)^{1+μ}
            let v = if regime == Regime::LambdaHalf { x.powf(1.0 + mu) } else { bound_psi(regime, x, mu, lambda)? };
            vals.push(v);
        }
    }
    let (estimate, se) = pair_mean_se(&vals);
    let passed = estimate.is_finite() && se.is_finite() && se <= 0.1 * estimate.abs() + 1e-300;
    Ok(IntegrabilityCertificate { mu, estimate, se, passed })
}

pub fn run_threshold_table(cfg: &ExperimentConfig) -> Result<Vec<ThresholdRow>> {
    cfg.validate()?;
    let grid = cfg.grid.as_ref().unwrap();
    let xi = grid.terminal.as_ref().map(|t| t.build());
    let mut rows = Vec::new();
    for &beta in &grid.betas {
        for &gamma in &grid.gammas {
            for &lambda in &grid.lambdas {
                let regime = Regime::from_lambda(lambda)?;
                let mu0_t = critical_threshold(beta, gamma, lambda, regime, grid.horizon)?;
                let certificate = match &xi {
                    Some(x) => Some(integrability_certificate(regime, lambda, grid.factor * mu0_t, x, grid.alpha, grid.horizon, grid.samples, cfg.seed)?),
                    None => None,
                };
                rows.push(ThresholdRow { beta, gamma, lambda, regime, mu0_t, closed_form: closed_form_mu(grid.horizon, beta, gamma, lambda, regime), certificate });
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// inequality, test function, solve

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub k: f64,
    pub lambda: f64,
    /// Minimal constant (k > 1 only).
    pub c_min: Option<f64>,
    pub samples: usize,
    pub violations: usize,
    /// Scan at C = 10⁶ in the failure zone `k ≤ 4^{-(λ−1)⁺}`.
    pub sharpness: Option<SharpnessWitness>,
    pub passed: bool,
}

/// `k > 1`: zero violations with `C = C_min + 1e−9` on log-uniform `(x, y) ∈ [1e−6, 1e6]²`.
/// Failure zone: the counter-scan must find a violation at `C = 10⁶`.
pub fn run_inequality(spec: &InequalitySpec, seed: u64) -> Result<InequalityReport> {
    let probe = YoungLogParams::new(spec.k, spec.lambda, 0.0)?;
    if probe.is_valid() {
        let c = minimal_young_constant(spec.k, spec.lambda)?;
        let p = YoungLogParams::new(spec.k, spec.lambda, c + 1e-9)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = 2.0 * 1e6f64.ln();
        let mut violations = 0;
        for _ in 0..spec.samples {
            let x = (span * (rng.random::<f64>() - 0.5)).exp();
            let y = (span * (rng.random::<f64>() - 0.5)).exp();
            if !young_log_holds(x, y, &p)? {
                violations += 1;
            }
        }
        Ok(InequalityReport { k: spec.k, lambda: spec.lambda, c_min: Some(c), samples: spec.samples, violations, sharpness: None, passed: violations == 0 })
    } else if probe.in_failure_zone() {
        let w = sharpness_scan(&YoungLogParams::new(spec.k, spec.lambda, 1e6)?);
        Ok(InequalityReport { k: spec.k, lambda: spec.lambda, c_min: None, samples: 0, violations: 0, passed: w.is_some(), sharpness: w })
    } else {
        Err(invalid(format!("k = {} lies between the failure zone and k > 1; nothing to certify", spec.k)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFnOutcome {
    pub report: TestFunctionReport,
    pub sandwich: PsiPhiSandwich,
}

pub fn run_testfn(spec: &TestFnSpec) -> Result<TestFnOutcome> {
    let tf = TestFunction::new(spec.beta, spec.gamma, spec.lambda, spec.eps, spec.horizon, DEFAULT_STEPS)?;
    let [ns, nx, nz] = spec.grid;
    let report = verify_test_function(&tf, &VerificationGrid::new(spec.horizon, ns, nx, nz))?;
    Ok(TestFnOutcome { report, sandwich: psi_phi_sandwich_constant(&tf)? })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub summary: SolutionSummary,
    /// `e^{aT}E[ξ] + b(e^{aT}−1)/a` when the generator is `a·y + b` and ξ is affine in `B_T`.
    pub closed_form: Option<f64>,
}

fn linear_closed_form(g: &GeneratorSpec, xi: &TerminalSpec, horizon: f64) -> Option<f64> {
    let (a, b) = match g {
        GeneratorSpec::Linear { a, b, c } if *c == 0.0 => (*a, *b),
        GeneratorSpec::Constant { value } => (0.0, *value),
        GeneratorSpec::Zero => (0.0, 0.0),
        _ => return None,
    };
    let mean_xi = match xi {
        TerminalSpec::Constant { value } => *value,
        TerminalSpec::Linear { shift, .. } => *shift,
        TerminalSpec::Abs { .. } => return None,
    };
    let growth = if a == 0.0 { horizon } else { (a * horizon).exp_m1() / a };
    Some((a * horizon).exp() * mean_xi + b * growth)
}

pub fn run_solve(cfg: &ExperimentConfig) -> Result<(SolveReport, BsdeSolution)> {
    cfg.validate()?;
    let (mut g, mut xi) = cfg.pair()?;
    if let Some((n, p)) = cfg.truncation {
        (g, xi) = (truncate(&g, n, p)?, truncate_terminal(&xi, n, p)?);
    }
    let sim = cfg.sim_config();
    let ens = simulate_brownian(&sim)?;
    let sol = solve_bsde(&g, &xi, &ens)?;
    let closed_form = if cfg.truncation.is_none() { linear_closed_form(cfg.generator.as_ref().unwrap(), cfg.terminal.as_ref().unwrap(), sim.horizon) } else { None };
    Ok((SolveReport { summary: SolutionSummary::of(&sol)?, closed_form }, sol))
}

/// Runs a config of any kind and returns its JSON report (with provenance)
/// and the PASS flag. Files are written only when `out_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(serde_json::Value, bool)> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Apriori => {
            let r = run_apriori_bound(cfg)?;
            Ok((emit(cfg, "apriori", &r)?, r.passed))
        }
        ExperimentKind::Comparison => {
            let r = run_comparison(cfg)?;
            Ok((emit(cfg, "comparison", &r)?, r.passed))
        }
        ExperimentKind::Thresholds => {
            let rows = run_threshold_table(cfg)?;
            let pass = rows.iter().all(|r| r.certificate.as_ref().is_none_or(|c| c.passed));
            Ok((emit(cfg, "thresholds", &serde_json::json!({ "rows": rows }))?, pass))
        }
        ExperimentKind::Inequality => {
            let r = run_inequality(cfg.inequality.as_ref().unwrap(), cfg.seed)?;
            Ok((emit(cfg, "inequality", &r)?, r.passed))
        }
        ExperimentKind::Testfn => {
            let r = run_testfn(cfg.testfn.as_ref().unwrap())?;
            let pass = r.report.passed;
            Ok((emit(cfg, "testfn", &r)?, pass))
        }
        ExperimentKind::Solve => {
            let (r, _) = run_solve(cfg)?;
            let pass = r.closed_form.is_none_or(|c| (c - r.summary.diagnostics.y0).abs() <= 1e-2);
            Ok((emit(cfg, "solve", &r)?, pass))
        }
    }
}

// ---------------------------------------------------------------------------
// command line

#[derive(Parser, Debug)]
#[command(name = "suplin", version, about = "BSDEs with super-linear generators: thresholds, test functions, Monte Carlo checks")]
struct Cli {
    /// Directory for JSON/CSV outputs (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// μ(T) for one parameter set, or a table from a config.
    Thresholds {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
        #[arg(long)]
        eps: Option<f64>,
        /// Use the critical (ε → 0) curve.
        #[arg(long)]
        critical: bool,
    },
    /// Logarithmic Young inequality: sampling check or sharpness scan.
    Inequality {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Residual inequality of the regime test function on a grid.
    VerifyTestfn {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
    },
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
    },
    Apriori {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
    },
}

#[derive(clap::Args, Debug)]
struct SimFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

enum Verdict {
    Pass,
    Fail,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn load_or(kind: ExperimentKind, path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let c = ExperimentConfig::load(p)?;
            if c.kind != kind {
                return Err(Error::Config(format!("config kind {:?} does not match the subcommand", c.kind)));
            }
            Ok(c)
        }
        None => Ok(ExperimentConfig::new(kind)),
    }
}

fn apply_seed(cfg: &mut ExperimentConfig, flag: Option<u64>) -> Result<()> {
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    if let Some(s) = flag {
        cfg.seed = s;
    }
    Ok(())
}

fn apply_sim(cfg: &mut ExperimentConfig, f: &SimFlags) -> Result<()> {
    apply_seed(cfg, f.seed)?;
    if let Some(p) = f.paths {
        cfg.sim.paths = p;
    }
    if let Some(n) = f.steps {
        cfg.sim.steps = n;
    }
    Ok(())
}

fn emit<T: Serialize>(cfg: &ExperimentConfig, name: &str, value: &T) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(value)?;
    let prov = serde_json::to_value(Provenance::of(cfg))?;
    match &mut v {
        serde_json::Value::Object(map) => {
            for (k, x) in prov.as_object().unwrap() {
                map.insert(k.clone(), x.clone());
            }
        }
        other => {
            *other = serde_json::json!({ "result": other.clone(), "seed": prov["seed"], "config_hash": prov["config_hash"], "version": prov["version"] });
        }
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&v, &dir.join(format!("{name}.json")))?;
    }
    Ok(v)
}

fn csv_header(cfg: &ExperimentConfig) -> String {
    let p = Provenance::of(cfg);
    format!("# seed={} config_hash={} version={}\n", p.seed, p.config_hash, p.version)
}

fn write_text(cfg: &ExperimentConfig, name: &str, body: &str) -> Result<()> {
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), format!("{}{body}", csv_header(cfg)))?;
    }
    Ok(())
}

fn run_cli(cli: Cli) -> Result<(serde_json::Value, Verdict)> {
    let out_dir = cli.out_dir.clone();
    let with_dir = |mut c: ExperimentConfig| {
        if out_dir.is_some() {
            c.out_dir = out_dir.clone();
        }
        c
    };
    match cli.cmd {
        Cmd::Thresholds { config, beta, gamma, lambda, horizon, eps, critical } => {
            let mut cfg = with_dir(load_or(ExperimentKind::Thresholds, &config)?);
            apply_seed(&mut cfg, None)?;
            if config.is_some() {
                let rows = run_threshold_table(&cfg)?;
                let mut csv = String::from("beta,gamma,lambda,regime,mu0_T,closed_form,cert_mu,cert_estimate,cert_se,cert_pass\n");
                for r in &rows {
                    let c = r.certificate.as_ref();
                    csv += &format!(
                        "{},{},{},{},{},{},{},{},{},{}\n",
                        r.beta,
                        r.gamma,
                        r.lambda,
                        r.regime.name(),
                        r.mu0_t,
                        r.closed_form.map(|v| v.to_string()).unwrap_or_default(),
                        c.map(|c| c.mu.to_string()).unwrap_or_default(),
                        c.map(|c| c.estimate.to_string()).unwrap_or_default(),
                        c.map(|c| c.se.to_string()).unwrap_or_default(),
                        c.map(|c| c.passed.to_string()).unwrap_or_default()
                    );
                }
                write_text(&cfg, "thresholds.csv", &csv)?;
                let pass = rows.iter().all(|r| r.certificate.as_ref().is_none_or(|c| c.passed));
                let v = emit(&cfg, "thresholds", &serde_json::json!({ "rows": rows }))?;
                return Ok((v, if pass { Verdict::Pass } else { Verdict::Fail }));
            }
            let (beta, gamma, lambda) = match (beta, gamma, lambda) {
                (Some(b), Some(g), Some(l)) => (b, g, l),
                _ => return Err(Error::Config("thresholds needs --beta, --gamma and --lambda (or --config)".into())),
            };
            let regime = Regime::from_lambda(lambda)?;
            let e = match (regime, eps) {
                _ if critical => 0.0,
                (Regime::LambdaZero, _) => 0.0,
                (_, Some(e)) => e,
                (_, None) => return Err(Error::Config("λ > 0 needs --eps or --critical".into())),
            };
            let mu = solve_mu(beta, gamma, lambda, e, horizon, DEFAULT_STEPS)?;
            // ν is not always defined (e.g. on the critical curve); the CSV column is then empty
            let curve = solve_nu(mu.clone()).unwrap_or(mu);
            let mut csv = String::from("s,mu,nu\n");
            for (i, s) in curve.s_grid.iter().enumerate() {
                let nu = curve.nu_values.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
                csv += &format!("{s},{},{nu}\n", curve.mu_values[i]);
            }
            cfg.grid = Some(ThresholdGrid { betas: vec![beta], gammas: vec![gamma], lambdas: vec![lambda], horizon, terminal: None, alpha: 0.0, samples: 0, factor: 1.0 });
            cfg.eps = e;
            write_text(&cfg, "thresholds.csv", &csv)?;
            let v = emit(&cfg, "thresholds", &serde_json::json!({ "mu_T": curve.mu_t(), "nu_T": curve.nu_t(), "regime": regime, "critical": critical, "eps": e }))?;
            Ok((v, Verdict::Pass))
        }
        Cmd::Inequality { config, k, lambda, samples, seed } => {
            let mut cfg = with_dir(load_or(ExperimentKind::Inequality, &config)?);
            apply_seed(&mut cfg, seed)?;
            let mut spec = cfg.inequality.clone().unwrap_or(InequalitySpec { k: f64::NAN, lambda: f64::NAN, samples: default_ineq_samples() });
            if let Some(k) = k {
                spec.k = k;
            }
            if let Some(l) = lambda {
                spec.lambda = l;
            }
            if let Some(s) = samples {
                spec.samples = s;
            }
            if spec.k.is_nan() || spec.lambda.is_nan() {
                return Err(Error::Config("inequality needs --k and --lambda (or --config)".into()));
            }
            cfg.inequality = Some(spec.clone());
            let r = run_inequality(&spec, cfg.seed)?;
            let pass = r.passed;
            Ok((emit(&cfg, "inequality", &r)?, if pass { Verdict::Pass } else { Verdict::Fail }))
        }
        Cmd::VerifyTestfn { config, beta, gamma, lambda, eps, horizon } => {
            let mut cfg = with_dir(load_or(ExperimentKind::Testfn, &config)?);
            apply_seed(&mut cfg, None)?;
            let mut spec = cfg.testfn.clone().unwrap_or(TestFnSpec { beta: f64::NAN, gamma: f64::NAN, lambda: f64::NAN, eps: 0.0, horizon: 1.0, grid: default_grid() });
            for (dst, src) in [(&mut spec.beta, beta), (&mut spec.gamma, gamma), (&mut spec.lambda, lambda), (&mut spec.eps, eps), (&mut spec.horizon, horizon)] {
                if let Some(v) = src {
                    *dst = v;
                }
            }
            if spec.beta.is_nan() || spec.gamma.is_nan() || spec.lambda.is_nan() {
                return Err(Error::Config("verify-testfn needs --beta, --gamma and --lambda (or --config)".into()));
            }
            cfg.testfn = Some(spec.clone());
            let r = run_testfn(&spec)?;
            let t = &r.report;
            let csv = format!(
                "regime,beta,gamma,lambda,eps,points,min_residual,s,x,z,min_residual_at_zstar,passed\n{},{},{},{},{},{},{},{},{},{},{},{}\n",
                t.regime.name(),
                t.beta,
                t.gamma,
                t.lambda,
                t.eps,
                t.points,
                t.min_residual,
                t.argmin.0,
                t.argmin.1,
                t.argmin.2,
                t.min_residual_at_zstar,
                t.passed
            );
            write_text(&cfg, "testfn.csv", &csv)?;
            let pass = r.report.passed;
            Ok((emit(&cfg, "testfn", &r)?, if pass { Verdict::Pass } else { Verdict::Fail }))
        }
        Cmd::Solve { config, sim } => {
            let mut cfg = with_dir(load_or(ExperimentKind::Solve, &Some(config))?);
            apply_sim(&mut cfg, &sim)?;
            let (r, sol) = run_solve(&cfg)?;
            if let Some(dir) = &cfg.out_dir {
                std::fs::create_dir_all(dir)?;
                write_solution_csv(&sol, &dir.join("solution.csv"), 1_000)?;
            }
            let ok = r.closed_form.is_none_or(|c| (c - r.summary.diagnostics.y0).abs() <= 1e-2);
            Ok((emit(&cfg, "solve", &r)?, if ok { Verdict::Pass } else { Verdict::Fail }))
        }
        Cmd::Compare { config, sim } => {
            let mut cfg = with_dir(load_or(ExperimentKind::Comparison, &Some(config))?);
            apply_sim(&mut cfg, &sim)?;
            let r = run_comparison(&cfg)?;
            let csv: String = std::iter::once("t,max_violation,tolerance\n".to_string()).chain((0..r.times.len()).map(|i| format!("{},{},{}\n", r.times[i], r.violation[i], r.tolerance[i]))).collect();
            write_text(&cfg, "comparison.csv", &csv)?;
            let pass = r.passed;
            Ok((emit(&cfg, "comparison", &r)?, if pass { Verdict::Pass } else { Verdict::Fail }))
        }
        Cmd::Apriori { config, sim } => {
            let mut cfg = with_dir(load_or(ExperimentKind::Apriori, &Some(config))?);
            apply_sim(&mut cfg, &sim)?;
            let r = run_apriori_bound(&cfg)?;
            let csv: String = std::iter::once("t,lhs,rhs,margin,margin_se\n".to_string()).chain((0..r.times.len()).map(|i| format!("{},{},{},{},{}\n", r.times[i], r.lhs[i], r.rhs, r.margins[i], r.margin_se[i]))).collect();
            write_text(&cfg, "apriori.csv", &csv)?;
            let pass = r.passed;
            Ok((emit(&cfg, "apriori", &r)?, if pass { Verdict::Pass } else { Verdict::Fail }))
        }
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code: 0 PASS, 2 certified FAIL or refused certificate, 1 usage/resource error.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok((v, verdict)) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            match verdict {
                Verdict::Pass => 0,
                Verdict::Fail => 2,
            }
        }
        Err(e @ Error::Precondition(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
