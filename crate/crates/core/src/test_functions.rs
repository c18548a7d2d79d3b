//! ψ families, the regime test functions φ(s, x) and the HJB-type residual
//! they are built to keep non-negative.
//!
//! All regimes share the shape `φ = (x+k)·exp(m(s)·L^q + n(s))` with
//! `L = ln(x+k)`: λ = 0 uses `k = e, q = ½, m = √2·μ`; λ ∈ (0,½) uses `q = λ+½`;
//! λ = ½ uses `k = 1, q = 1, n = ln ν`; λ > ½ uses `q = 2λ`. Derivatives are
//! carried as ratios `φ_·/φ` so large exponents never overflow.

use crate::error::{domain, invalid, Error, Result};
use crate::numerics::{bisect, log_space, sup_half_line};
use crate::threshold_odes::{solve_curve, Regime, ThresholdCurve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, SQRT_2};

fn psi_exponent(lambda: f64) -> f64 {
    (lambda + 0.5).max(2.0 * lambda)
}

/// `ln ψ(x, μ; λ)` for `x > 0`.
pub fn ln_psi(x: f64, mu: f64, lambda: f64) -> f64 {
    x.ln() + mu * x.ln_1p().powf(psi_exponent(lambda))
}

/// Unified `ψ(x, μ; λ) = x·exp(μ (ln(1+x))^{(λ+½)∨2λ})`.
pub fn psi_eval(x: f64, mu: f64, lambda: f64) -> Result<f64> {
    if !(x >= 0.0) || !(mu >= 0.0) || !(lambda >= 0.0) {
        return Err(domain(format!("psi needs x, mu, lambda >= 0 (got {x}, {mu}, {lambda})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(ln_psi(x, mu, lambda).exp())
}

/// `ψ(x, μ) = x·exp(μ√(2 ln(1+x)))`, the λ = 0 family (unified ψ with `√2·μ`).
pub fn psi_zero(x: f64, mu: f64) -> Result<f64> {
    psi_eval(x, SQRT_2 * mu, 0.0)
}

fn ln_psi_zero(x: f64, mu: f64) -> f64 {
    ln_psi(x, SQRT_2 * mu, 0.0)
}

/// One strict inequality `lhs(x) < rhs(x)` of a growth sandwich, checked on samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichSide {
    pub label: String,
    /// Largest x where the inequality fails (0 if it never fails on the samples).
    pub crossover: f64,
    /// Samples below the crossover where the inequality fails.
    pub violations_below: usize,
    /// Samples above the crossover where it fails (must be 0).
    pub violations_above: usize,
    /// Range `[crossover, x_max]` on which every sample satisfied it.
    pub confirmed_from: f64,
    pub x_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichReport {
    pub lambda: f64,
    pub mu: f64,
    pub p: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub lower: SandwichSide,
    pub upper: SandwichSide,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.lower.violations_above == 0 && self.upper.violations_above == 0
    }
}

const SANDWICH_X_MIN: f64 = 1e-6;
const SANDWICH_X_MAX: f64 = 1e6;

/// `gap(x) > 0` means the strict inequality holds at x.
fn sandwich_side(label: &str, gap: &dyn Fn(f64) -> f64, xs: &[f64]) -> SandwichSide {
    let last_bad = xs.iter().copied().filter(|&x| !(gap(x) > 0.0)).fold(0.0, f64::max);
    let crossover = if last_bad == 0.0 {
        0.0
    } else {
        match xs.iter().copied().filter(|&x| x > last_bad).fold(f64::INFINITY, f64::min) {
            good if good.is_finite() => {
                let (a, b) = (last_bad.ln(), good.ln());
                bisect(&|u: f64| gap(u.exp()), a, b, 1e-12 * (1.0 + b.abs())).exp()
            }
            _ => last_bad,
        }
    };
    let below = xs.iter().filter(|&&x| x <= crossover && !(gap(x) > 0.0)).count();
    let above = xs.iter().filter(|&&x| x > crossover && !(gap(x) > 0.0)).count();
    SandwichSide {
        label: label.to_string(),
        crossover,
        violations_below: below,
        violations_above: above,
        confirmed_from: crossover.max(SANDWICH_X_MIN),
        x_max: SANDWICH_X_MAX,
    }
}

/// Check the large-x sandwich of ψ for the regime of `lambda`:
/// λ < ½: `x ln(1+x) < ψ < x^p`; λ = ½: `x^{1+μ} < ψ < (1+x)^{1+μ}`;
/// λ > ½: `x^p < ψ < exp(x^ε)`. Everything is compared in logs.
pub fn psi_growth_sandwich_check(lambda: f64, mu: f64, p: f64, epsilon: f64, samples: usize) -> Result<SandwichReport> {
    if !(mu > 0.0) || !(lambda >= 0.0) || samples < 2 {
        return Err(invalid("sandwich check needs mu > 0, lambda >= 0, samples >= 2"));
    }
    let regime = Regime::from_lambda(lambda)?;
    if regime != Regime::LambdaHalf && lambda < 0.5 && !(p > 1.0) {
        return Err(invalid("p > 1 required for lambda < 1/2"));
    }
    if lambda > 0.5 && (!(p > 1.0) || !(epsilon > 0.0 && epsilon < 1.0)) {
        return Err(invalid("p > 1 and eps in (0,1) required for lambda > 1/2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a4d);
    let (a, b) = (SANDWICH_X_MIN.ln(), SANDWICH_X_MAX.ln());
    let mut xs: Vec<f64> = (0..samples).map(|_| rng.random_range(a..b).exp()).collect();
    xs.push(SANDWICH_X_MAX);
    xs.sort_by(f64::total_cmp);
    let lp = |x: f64| ln_psi(x, mu, lambda);
    let (lower, upper) = if lambda < 0.5 {
        (
            sandwich_side("x ln(1+x) < psi", &|x| lp(x) - x.ln() - x.ln_1p().ln(), &xs),
            sandwich_side("psi < x^p", &|x| p * x.ln() - lp(x), &xs),
        )
    } else if lambda == 0.5 {
        (
            sandwich_side("x^(1+mu) < psi", &|x| lp(x) - (1.0 + mu) * x.ln(), &xs),
            sandwich_side("psi < (1+x)^(1+mu)", &|x| (1.0 + mu) * x.ln_1p() - lp(x), &xs),
        )
    } else {
        (
            sandwich_side("x^p < psi", &|x| lp(x) - p * x.ln(), &xs),
            sandwich_side("psi < exp(x^eps)", &|x| x.powf(epsilon) - lp(x), &xs),
        )
    };
    Ok(SandwichReport { lambda, mu, p, epsilon, samples, lower, upper })
}

/// Violation counts of the five properties of the λ = 0 ψ family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma26Report {
    pub mu: f64,
    pub samples: usize,
    /// (i) monotone in μ.
    pub monotone_mu: usize,
    /// (ii) increasing and midpoint strictly convex in x.
    pub increasing_convex: usize,
    /// (iii) `ψ(cx) ≤ ψ(c)ψ(x)`, c > 1.
    pub submultiplicative: usize,
    /// (iv) `ψ(x₁+x₂) ≤ ½ψ(2)[ψ(x₁)+ψ(x₂)]`.
    pub quasi_additive: usize,
    /// (v) `e^x y ≤ e^{x²/(2μ²)} + e^{2μ²}ψ(y)`; not checked for μ = 0.
    pub young_type: usize,
}

impl Lemma26Report {
    pub fn violations(&self) -> usize {
        self.monotone_mu + self.increasing_convex + self.submultiplicative + self.quasi_additive + self.young_type
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

// relative slack for comparisons that can hold with equality
const REL: f64 = 1e-12;

/// Random-sample check of the λ = 0 ψ properties. Samples are log-uniform on
/// `[1e-4, 1e4]` (x ∈ [−20, 20] for the exponent in (v)). Strict convexity is
/// only tested on pairs at least 1% apart.
pub fn psi_lemma26_suite(mu: f64, samples: usize, seed: u64) -> Result<Lemma26Report> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(domain(format!("mu must be >= 0, got {mu}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ((1e-4f64).ln(), (1e4f64).ln());
    let draw = |rng: &mut ChaCha8Rng| rng.random_range(lo..hi).exp();
    let lpz = |x: f64, m: f64| if x == 0.0 { f64::NEG_INFINITY } else { ln_psi_zero(x, m) };
    let mut rep = Lemma26Report {
        mu,
        samples,
        monotone_mu: 0,
        increasing_convex: 0,
        submultiplicative: 0,
        quasi_additive: 0,
        young_type: 0,
    };
    let ln_psi2 = lpz(2.0, mu);
    for _ in 0..samples {
        let x = draw(&mut rng);
        let dmu = rng.random_range(0.0..2.0) * mu.max(0.1);
        if lpz(x, mu) > lpz(x, mu + dmu) + REL {
            rep.monotone_mu += 1;
        }

        let (mut x1, mut x2) = (draw(&mut rng), draw(&mut rng));
        if x1 > x2 {
            std::mem::swap(&mut x1, &mut x2);
        }
        if x2 > 1.01 * x1 {
            let (p1, p2) = (psi_zero(x1, mu)?, psi_zero(x2, mu)?);
            let mid = psi_zero(0.5 * (x1 + x2), mu)?;
            if !(p1 < p2) || !(mid < 0.5 * (p1 + p2)) {
                rep.increasing_convex += 1;
            }
        }

        let c = 1.0 + draw(&mut rng);
        if lpz(c * x, mu) > lpz(c, mu) + lpz(x, mu) + REL * (1.0 + lpz(c * x, mu).abs()) {
            rep.submultiplicative += 1;
        }

        let (y1, y2) = (draw(&mut rng), draw(&mut rng));
        let lhs = lpz(y1 + y2, mu);
        let rhs = (0.5f64).ln() + ln_psi2 + log_add(lpz(y1, mu), lpz(y2, mu));
        if lhs > rhs + REL * (1.0 + lhs.abs()) {
            rep.quasi_additive += 1;
        }

        if mu > 0.0 {
            let t = rng.random_range(-20.0..20.0);
            let y = draw(&mut rng);
            let lhs = t + y.ln();
            let rhs = log_add(t * t / (2.0 * mu * mu), 2.0 * mu * mu + lpz(y, mu));
            if lhs > rhs + REL * (1.0 + lhs.abs()) {
                rep.young_type += 1;
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentCheck {
    pub estimate: f64,
    pub bound: f64,
    /// Sample standard error of the estimate.
    pub std_error: f64,
    /// False when `4·lam·ε²·T ≥ 1`: the integrand then has no second moment and
    /// the sample SE is only indicative.
    pub finite_variance: bool,
}

/// Monte Carlo estimate of `E[exp(lam·|∫₀ᵀ q·dB|²)]` for `q ≡ ε e₁`, so
/// `∫q·dB = ε B¹_T` is sampled exactly, against `1/√(1 − 2·lam·ε²·T)`.
pub fn exp_moment_bound_check(lam: f64, eps: f64, horizon: f64, paths: usize, seed: u64) -> Result<ExpMomentCheck> {
    if !(lam >= 0.0) || !(eps > 0.0) || !(horizon > 0.0) || paths < 2 {
        return Err(invalid("need lam >= 0, eps > 0, horizon > 0, paths >= 2"));
    }
    let q = 2.0 * lam * eps * eps * horizon;
    if q >= 1.0 {
        return Err(domain(format!("lam = {lam} >= 1/(2 eps^2 T); the bound is undefined")));
    }
    let bound = 1.0 / (1.0 - q).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = eps * horizon.sqrt();
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..paths {
        let z: f64 = rng.sample(StandardNormal);
        let v = (lam * (sd * z).powi(2)).exp();
        sum += v;
        sum2 += v * v;
    }
    let n = paths as f64;
    let estimate = sum / n;
    let std_error = ((sum2 / n - estimate * estimate).max(0.0) / (n - 1.0)).sqrt();
    Ok(ExpMomentCheck { estimate, bound, std_error, finite_variance: 2.0 * q < 1.0 })
}

/// `x√(ln x)·1_{x>1} ≤ (1/√2)(x+e)√(2 ln(x+e))`.
pub fn sqrt_log_growth_bound_holds(x: f64) -> Result<bool> {
    if !(x >= 0.0) {
        return Err(domain("x must be >= 0"));
    }
    let lhs = if x > 1.0 { x * x.ln().sqrt() } else { 0.0 };
    let rhs = (x + E) * (2.0 * (x + E).ln()).sqrt() / SQRT_2;
    Ok(lhs <= rhs)
}

/// Infimum over `L ≥ ln(offset)` of `2λ(2λ−1)ε·exp(εL^{2λ} − L)·L^{2λ−2}`, i.e. the
/// lower bound of the dropped convexity term used to shift φ_xx for λ > ½.
/// May be `+∞` in f64 for large offsets; see [`ln_delta_shift`].
pub fn delta_shift(lambda: f64, eps: f64, offset: f64) -> Result<f64> {
    let d = ln_delta_shift(lambda, eps, offset)?.exp();
    if !(d > 0.0) {
        return Err(Error::Numerical("delta shift underflows".into()));
    }
    Ok(d)
}

/// Logarithm of [`delta_shift`].
pub fn ln_delta_shift(lambda: f64, eps: f64, offset: f64) -> Result<f64> {
    if !(lambda > 0.5) {
        return Err(invalid(format!("delta shift needs lambda > 1/2, got {lambda}")));
    }
    if !(eps > 0.0) {
        return Err(invalid(format!("delta shift needs eps > 0, got {eps}")));
    }
    if !(offset > 1.0) {
        return Err(invalid("offset must exceed 1"));
    }
    let q = 2.0 * lambda;
    let c = (q * (q - 1.0) * eps).ln();
    let neg_log = |l: f64| -(c + eps * l.powf(q) - l + (q - 2.0) * l.ln());
    Ok(-sup_half_line(&neg_log, offset.ln()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunction {
    pub regime: Regime,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub eps: f64,
    /// μ and ν on the same grid.
    pub curve: ThresholdCurve,
    /// `k` in `(x+k)`: e, k_ε, 1 or k̃.
    pub offset: f64,
    /// δ̄: 0 except λ > ½ (can be `+∞` in f64; `ln_shift` is exact).
    pub shift: f64,
    pub ln_shift: f64,
}

/// `(ln φ, φ_s/φ, φ_x/φ, φ_xx/φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiRatios {
    pub ln_phi: f64,
    pub s: f64,
    pub x: f64,
    pub xx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiDerivatives {
    pub d_s: f64,
    pub d_x: f64,
    pub d_xx: f64,
}

impl TestFunction {
    /// Build the regime test function on a fresh threshold curve.
    pub fn new(beta: f64, gamma: f64, lambda: f64, eps: f64, horizon: f64, steps: usize) -> Result<TestFunction> {
        TestFunction::from_curve(solve_curve(beta, gamma, lambda, eps, horizon, steps)?)
    }

    pub fn from_curve(curve: ThresholdCurve) -> Result<TestFunction> {
        let consts = curve
            .constants
            .ok_or_else(|| invalid("test function needs a curve with nu (call solve_nu)"))?;
        let ln_shift = if curve.regime == Regime::LambdaLarge {
            ln_delta_shift(curve.lambda, curve.eps, consts.offset)?
        } else {
            f64::NEG_INFINITY
        };
        Ok(TestFunction {
            regime: curve.regime,
            beta: curve.beta,
            gamma: curve.gamma,
            lambda: curve.lambda,
            eps: curve.eps,
            offset: consts.offset,
            shift: ln_shift.exp(),
            ln_shift,
            curve,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.curve.horizon
    }

    fn check(&self, s: f64, x: f64) -> Result<()> {
        if !(s >= 0.0 && s <= self.horizon()) {
            return Err(domain(format!("s = {s} outside [0, {}]", self.horizon())));
        }
        if !(x >= 0.0) || !x.is_finite() {
            return Err(domain(format!("x must be finite and >= 0, got {x}")));
        }
        Ok(())
    }

    /// `(q, m, m')`: exponent of L and the (scaled) μ and μ' multiplying L^q.
    fn power_coeff(&self, s: f64) -> (f64, f64, f64) {
        let mu = self.curve.mu_at(s);
        let mu_p = if mu > 0.0 { self.curve.mu_prime_at(s) } else { f64::INFINITY };
        match self.regime {
            Regime::LambdaZero => (0.5, SQRT_2 * mu, SQRT_2 * mu_p),
            Regime::LambdaSmall => (self.lambda + 0.5, mu, mu_p),
            Regime::LambdaHalf => (1.0, mu, mu_p),
            Regime::LambdaLarge => (2.0 * self.lambda, mu, mu_p),
        }
    }

    /// `(n, n')` with `φ = (x+k)e^{m L^q + n}`; `n = ln ν` for λ = ½.
    fn exponent_nu(&self, s: f64) -> Result<(f64, f64)> {
        let c = self.curve.constants.unwrap();
        if self.regime == Regime::LambdaHalf {
            let g2 = self.gamma * self.gamma;
            let mu = self.curve.mu_at(s);
            Ok((g2 * c.c_bar * (s + self.curve.int_mu_at(s)), g2 * c.c_bar * (1.0 + mu)))
        } else {
            let np = if self.curve.mu_at(s) > 0.0 { self.curve.nu_prime_at(s)? } else { f64::INFINITY };
            Ok((self.curve.nu_at(s)?, np))
        }
    }

    pub fn ratios(&self, s: f64, x: f64) -> Result<PhiRatios> {
        self.check(s, x)?;
        let (q, m, mp) = self.power_coeff(s);
        let (n, np) = self.exponent_nu(s)?;
        let y = x + self.offset;
        let l = y.ln();
        let lq = l.powf(q);
        // L^{q-1}; for q = 1 this is 1 even at L = 0 (offset 1, x = 0)
        let lq1 = if q == 1.0 { 1.0 } else { l.powf(q - 1.0) };
        let curv = if q == 1.0 { 0.0 } else { (q - 1.0) / l };
        let rx = (1.0 + m * q * lq1) / y;
        let rxx = m * q * lq1 * (1.0 + m * q * lq1 + curv) / (y * y);
        let rs = mp * lq + np;
        Ok(PhiRatios { ln_phi: l + m * lq + n, s: rs, x: rx, xx: rxx })
    }

    pub fn ln_phi(&self, s: f64, x: f64) -> Result<f64> {
        Ok(self.ratios(s, x)?.ln_phi)
    }

    /// `δ̄/φ(s,x)` given `ln φ`.
    fn shift_ratio(&self, ln_phi: f64) -> f64 {
        (self.ln_shift - ln_phi).exp()
    }

    pub fn delta_growth(&self) -> f64 {
        Regime::delta(self.lambda)
    }
}

pub fn phi_eval(tf: &TestFunction, s: f64, x: f64) -> Result<f64> {
    Ok(tf.ln_phi(s, x)?.exp())
}

/// Closed-form `(φ_s, φ_x, φ_xx)`. φ_s needs `s > 0` (μ' blows up at 0 when μ(0) = 0).
pub fn phi_derivatives(tf: &TestFunction, s: f64, x: f64) -> Result<PhiDerivatives> {
    if s <= 0.0 && tf.curve.mu_values[0] == 0.0 {
        return Err(domain("phi_s is singular at s = 0 for a curve starting at 0"));
    }
    let r = tf.ratios(s, x)?;
    let phi = r.ln_phi.exp();
    Ok(PhiDerivatives { d_s: phi * r.s, d_x: phi * r.x, d_xx: phi * r.xx })
}

/// `|z||ln|z||^λ`, 0 at z = 0; `|z|` when λ = 0.
pub fn z_growth(z: f64, lambda: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else if lambda == 0.0 {
        z
    } else {
        z * z.ln().abs().powf(lambda)
    }
}

/// `x(ln x)^δ·1_{x>1}`.
pub fn y_growth(x: f64, delta: f64) -> f64 {
    if x > 1.0 {
        x * x.ln().powf(delta)
    } else {
        0.0
    }
}

/// Left-hand side of the test-function inequality divided by φ(s,x):
/// `−(φ_x/φ)(βx(ln x)^δ1_{x>1} + γ|z||ln|z||^λ) + ½(φ_xx/φ − δ̄/φ)|z|² + φ_s/φ`.
pub fn hjb_residual_normalized(tf: &TestFunction, s: f64, x: f64, z_norm: f64) -> Result<f64> {
    if !(z_norm >= 0.0) {
        return Err(domain("z_norm must be >= 0"));
    }
    if !(s > 0.0) {
        return Err(domain("the residual is evaluated for s > 0"));
    }
    let r = tf.ratios(s, x)?;
    let drift = tf.beta * y_growth(x, tf.delta_growth()) + tf.gamma * z_growth(z_norm, tf.lambda);
    let shift = tf.shift_ratio(r.ln_phi);
    Ok(-r.x * drift + 0.5 * (r.xx - shift) * z_norm * z_norm + r.s)
}

/// The unnormalised residual (may overflow for large φ).
pub fn hjb_residual(tf: &TestFunction, s: f64, x: f64, z_norm: f64) -> Result<f64> {
    let n = hjb_residual_normalized(tf, s, x, z_norm)?;
    Ok(n * phi_eval(tf, s, x)?)
}

/// `z* = γφ_x/(φ_xx − δ̄)`, where the quadratic part of the residual is smallest.
pub fn z_star(tf: &TestFunction, s: f64, x: f64) -> Result<f64> {
    let r = tf.ratios(s, x)?;
    let shift = tf.shift_ratio(r.ln_phi);
    Ok(tf.gamma * r.x / (r.xx - shift))
}

/// Verification grid: s log-spaced on `[T/100, T]`, x and z log-spaced on
/// `[1e-4, 1e3]` with 0 and 1 added.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationGrid {
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl VerificationGrid {
    pub fn new(horizon: f64, n_s: usize, n_x: usize, n_z: usize) -> VerificationGrid {
        let with_kinks = |n: usize| {
            let mut v = vec![0.0, 1.0];
            v.extend(log_space(1e-4, 1e3, n));
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        VerificationGrid { s: log_space(horizon / 100.0, horizon, n_s), x: with_kinks(n_x), z: with_kinks(n_z) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionReport {
    pub regime: Regime,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub eps: f64,
    pub points: usize,
    /// Smallest normalized residual R/φ over the grid and where it occurs.
    pub min_residual: f64,
    pub argmin: (f64, f64, f64),
    /// Smallest normalized residual at the per-(s,x) minimiser z*.
    pub min_residual_at_zstar: f64,
    /// All φ_x > 0 and φ_xx > δ̄ on the (s,x) grid.
    pub derivative_signs_ok: bool,
    pub tolerance: f64,
    pub passed: bool,
}

pub const RESIDUAL_TOL: f64 = 1e-8;

/// Minimum of the normalized residual on the grid. Passing means
/// `R/φ ≥ −1e−8` everywhere, which implies `R ≥ −1e−8·(1+φ)`.
pub fn verify_test_function(tf: &TestFunction, grid: &VerificationGrid) -> Result<TestFunctionReport> {
    let mut min = f64::INFINITY;
    let mut argmin = (0.0, 0.0, 0.0);
    let mut min_star = f64::INFINITY;
    let mut signs = true;
    let mut points = 0;
    for &s in &grid.s {
        for &x in &grid.x {
            let r = tf.ratios(s, x)?;
            let shift = tf.shift_ratio(r.ln_phi);
            if !(r.x > 0.0 && r.xx > shift) {
                signs = false;
            }
            for &z in &grid.z {
                let v = hjb_residual_normalized(tf, s, x, z)?;
                points += 1;
                if !(v >= min) {
                    min = v;
                    argmin = (s, x, z);
                }
            }
            let zs = z_star(tf, s, x)?;
            if zs.is_finite() && zs >= 0.0 {
                min_star = min_star.min(hjb_residual_normalized(tf, s, x, zs)?);
            }
        }
    }
    let passed = signs && min >= -RESIDUAL_TOL && min_star >= -RESIDUAL_TOL;
    Ok(TestFunctionReport {
        regime: tf.regime,
        beta: tf.beta,
        gamma: tf.gamma,
        lambda: tf.lambda,
        eps: tf.eps,
        points,
        min_residual: min,
        argmin,
        min_residual_at_zstar: min_star,
        derivative_signs_ok: signs,
        tolerance: RESIDUAL_TOL,
        passed,
    })
}

/// The ψ family matching a test function's regime, evaluated in logs.
fn ln_psi_regime(tf: &TestFunction, x: f64, mu: f64) -> f64 {
    match tf.regime {
        Regime::LambdaZero => ln_psi_zero(x, mu),
        _ => ln_psi(x, mu, tf.lambda),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiPhiSandwich {
    pub regime: Regime,
    /// K with `ψ ≤ φ ≤ Kψ + K` on the grid; for λ = ½ this is `ν(T)·2^{μ(T)}`.
    pub k: f64,
    /// `ln K`; K itself overflows f64 when the ν exponent passes ~709.
    pub ln_k: f64,
    /// Grid sup of `φ/(ψ+1)` (reported for every regime).
    pub grid_sup: f64,
    /// Same sup on a doubled grid.
    pub refined_sup: f64,
    /// `ψ(x, μ(s)) ≤ φ(s, x)` held at every grid point.
    pub lower_holds: bool,
    pub mu_t: f64,
    pub nu_t: f64,
}

fn sandwich_sup(tf: &TestFunction, n_s: usize, n_x: usize) -> Result<(f64, bool)> {
    let t = tf.horizon();
    let mut xs = vec![0.0];
    xs.extend(log_space(1e-6, 1e12, n_x));
    let mut best = f64::NEG_INFINITY;
    let mut lower = true;
    for i in 0..=n_s {
        let s = t * i as f64 / n_s as f64;
        let mu = tf.curve.mu_at(s);
        for &x in &xs {
            let lphi = tf.ln_phi(s, x)?;
            let lpsi = if x == 0.0 { f64::NEG_INFINITY } else { ln_psi_regime(tf, x, mu) };
            if lpsi > lphi + 1e-12 * (1.0 + lphi.abs()) {
                lower = false;
            }
            best = best.max(lphi - log_add(lpsi, 0.0));
        }
    }
    Ok((best, lower))
}

/// Sandwich constant between ψ(x, μ(s)) and φ(s, x).
pub fn psi_phi_sandwich_constant(tf: &TestFunction) -> Result<PsiPhiSandwich> {
    let (ln_grid, lower) = sandwich_sup(tf, 40, 400)?;
    let (ln_refined, lower2) = sandwich_sup(tf, 80, 800)?;
    let mu_t = tf.curve.mu_t();
    let nu_t = tf.curve.nu_t().unwrap_or(f64::NAN);
    let ln_k = if tf.regime == Regime::LambdaHalf {
        // φ(T, 0) = ν(T)
        tf.ln_phi(tf.horizon(), 0.0)? + mu_t * std::f64::consts::LN_2
    } else {
        ln_refined.max(ln_grid)
    };
    Ok(PsiPhiSandwich { regime: tf.regime, k: ln_k.exp(), ln_k, grid_sup: ln_grid.exp(), refined_sup: ln_refined.exp(), lower_holds: lower && lower2, mu_t, nu_t })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_trivial_values() {
        assert_eq!(psi_eval(0.0, 3.0, 0.7).unwrap(), 0.0);
        assert!((psi_eval(5.0, 0.0, 0.2).unwrap() - 5.0).abs() < 1e-15);
        assert!((psi_eval(1.0, 2.0, 0.5).unwrap() - 4.0).abs() < 1e-14);
        assert!(psi_eval(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn shift_closed_form_at_lambda_one() {
        let d = delta_shift(1.0, 0.1, E).unwrap();
        assert!((d - 0.2 * (-2.5f64).exp()).abs() < 1e-12);
    }
}
