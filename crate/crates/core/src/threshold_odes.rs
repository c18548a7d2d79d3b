//! Threshold curves μ(·), ν(·) for the four growth regimes.
//!
//! Every μ-equation has the shape `μ' = a/μ + b + cμ`. Curves are integrated as
//! `W(τ) = μ(τ²)²`, which turns the `1/μ` singularity at a zero initial value
//! into a smooth problem: `dW/dτ = 2τ(2a + 2b√W + 2cW)`. The integrals `∫μ` and
//! `∫1/μ` needed by ν come from `∫μ` (carried in the RK4 state) and the
//! identity `a∫1/μ = μ − μ(0) − b·s − c∫μ`.

use crate::error::{invalid, Error, Result};
use crate::growth_inequalities::minimal_young_constant;
use crate::numerics::{hermite5, rk4_step, sup_half_line};
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, SQRT_2};

pub const DEFAULT_STEPS: usize = 10_000;
const FIRST_SUBSTEPS: usize = 256;
const GRADED_SUBSTEPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    LambdaZero,
    LambdaSmall,
    LambdaHalf,
    LambdaLarge,
}

impl Regime {
    pub fn from_lambda(lambda: f64) -> Result<Regime> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be a finite value >= 0, got {lambda}")));
        }
        Ok(if lambda == 0.0 {
            Regime::LambdaZero
        } else if lambda < 0.5 {
            Regime::LambdaSmall
        } else if lambda == 0.5 {
            Regime::LambdaHalf
        } else {
            Regime::LambdaLarge
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::LambdaZero => "lambda_zero",
            Regime::LambdaSmall => "lambda_small",
            Regime::LambdaHalf => "lambda_half",
            Regime::LambdaLarge => "lambda_large",
        }
    }

    /// Exponent δ of the `|y|(ln|y|)^δ` growth term.
    pub fn delta(lambda: f64) -> f64 {
        (lambda + 0.5).min(1.0)
    }
}

/// `k_λ = 2^{2(λ−1)⁺ + 2λ − 1}`.
pub fn k_lambda(lambda: f64) -> f64 {
    2f64.powf(2.0 * (lambda - 1.0).max(0.0) + 2.0 * lambda - 1.0)
}

/// Coefficients of `μ' = a/μ + b + cμ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuRhs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MuRhs {
    pub fn eval(&self, mu: f64) -> f64 {
        let inv = if self.a == 0.0 { 0.0 } else { self.a / mu };
        inv + self.b + self.c * mu
    }
}

fn check_params(regime: Regime, beta: f64, gamma: f64, lambda: f64, eps: f64) -> Result<()> {
    if Regime::from_lambda(lambda)? != regime {
        return Err(invalid(format!("lambda = {lambda} does not belong to regime {}", regime.name())));
    }
    if !(beta >= 0.0) || !(gamma >= 0.0) || !beta.is_finite() || !gamma.is_finite() {
        return Err(invalid("beta and gamma must be finite and >= 0"));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    match regime {
        Regime::LambdaZero => {
            if beta + gamma <= 0.0 {
                return Err(invalid("beta + gamma > 0 required for lambda = 0"));
            }
            if eps != 0.0 {
                return Err(invalid("lambda = 0 has only the eps = 0 curve"));
            }
        }
        _ => {
            if gamma <= 0.0 {
                return Err(invalid(format!("gamma > 0 required in regime {}", regime.name())));
            }
        }
    }
    Ok(())
}

/// Right-hand side of the μ-equation for the regime (ε = 0 gives the critical curve).
pub fn mu_rhs(regime: Regime, beta: f64, gamma: f64, lambda: f64, eps: f64) -> MuRhs {
    let g2 = gamma * gamma;
    match regime {
        Regime::LambdaZero => MuRhs { a: g2 / 2.0, b: SQRT_2 / 2.0 * beta, c: 0.0 },
        Regime::LambdaSmall => MuRhs {
            a: g2 * (1.0 + eps).powf(2.0 * lambda + 2.0) / (2.0 * lambda + 1.0),
            b: eps + beta,
            c: eps,
        },
        Regime::LambdaHalf => MuRhs {
            a: g2 * (1.0 + eps) / 2.0,
            b: g2 * (1.0 + eps) / 2.0 + beta,
            c: beta,
        },
        Regime::LambdaLarge => {
            let k = k_lambda(lambda);
            MuRhs {
                a: g2 * (1.0 + eps) * k / (4.0 * lambda),
                b: g2 * (1.0 + eps) * k / 2.0 + eps,
                c: 2.0 * beta * lambda,
            }
        }
    }
}

/// The unified-form right-hand side as written in the concluding section
/// (λ = 0 is expressed in the `√2`-rescaled normalisation there).
pub fn unified_mu_rhs(beta: f64, gamma: f64, lambda: f64, eps: f64) -> Result<MuRhs> {
    let g2 = gamma * gamma;
    let regime = Regime::from_lambda(lambda)?;
    Ok(match regime {
        Regime::LambdaZero | Regime::LambdaSmall => {
            if eps == 0.0 {
                MuRhs { a: g2 / (2.0 * lambda + 1.0), b: beta, c: 0.0 }
            } else {
                MuRhs {
                    a: g2 * (1.0 + eps).powf(2.0 * lambda + 2.0) / (2.0 * lambda + 1.0),
                    b: beta + eps,
                    c: eps,
                }
            }
        }
        Regime::LambdaHalf => MuRhs {
            a: g2 * (1.0 + eps) / 2.0,
            b: g2 * (1.0 + eps) / 2.0 + beta,
            c: beta,
        },
        Regime::LambdaLarge => {
            let k = k_lambda(lambda);
            let q = g2 * (1.0 + eps) * k / (4.0 * lambda);
            MuRhs { a: q, b: q + eps, c: 2.0 * beta * lambda }
        }
    })
}

/// Constants that enter ν and the test-function offset; all computed as minimal
/// constants of their defining scalar inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuConstants {
    /// x-offset of the test function (e, k_ε, 1, or k̃).
    pub offset: f64,
    /// Young constant with slack k = 1 + ε (0 for λ = 0).
    pub young_c: f64,
    /// C̄ (λ ∈ (0,½)), C̄_ε (λ = ½) or C̆ (λ > ½); 0 for λ = 0.
    pub c_bar: f64,
    /// C¹ (λ ∈ (0,½)); 0 otherwise.
    pub c1: f64,
    /// C² (λ ∈ (0,½)); 0 otherwise.
    pub c2: f64,
    /// C̃ (λ > ½); 0 otherwise.
    pub c_tilde: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub regime: Regime,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub eps: f64,
    pub horizon: f64,
    pub s_grid: Vec<f64>,
    pub mu_values: Vec<f64>,
    pub nu_values: Option<Vec<f64>>,
    pub constants: Option<NuConstants>,
    rhs: MuRhs,
    dtau: f64,
    w: Vec<f64>,
    int_mu: Vec<f64>,
    int_inv_mu: Vec<f64>,
}

impl ThresholdCurve {
    pub fn rhs(&self) -> MuRhs {
        self.rhs
    }

    pub fn is_critical(&self) -> bool {
        self.eps == 0.0
    }

    pub fn mu_t(&self) -> f64 {
        *self.mu_values.last().unwrap()
    }

    pub fn nu_t(&self) -> Option<f64> {
        self.nu_values.as_ref().map(|v| *v.last().unwrap())
    }

    /// `(W', W'', I_μ', I_μ'')` in τ at the point `(τ, W)`.
    fn slopes(&self, tau: f64, w: f64) -> ([f64; 2], [f64; 2]) {
        let r = self.rhs;
        let w = w.max(0.0);
        let sw = w.sqrt();
        let g = 2.0 * r.a + 2.0 * r.b * sw + 2.0 * r.c * w;
        let dw = 2.0 * tau * g;
        let (ddw, ddm) = if sw > 0.0 {
            (2.0 * g + 2.0 * tau * (r.b / sw + 2.0 * r.c) * dw, 2.0 * sw + tau * dw / sw)
        } else {
            (2.0 * g, 0.0)
        };
        ([dw, 2.0 * tau * sw], [ddw, ddm])
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let tau = s.clamp(0.0, self.horizon).sqrt();
        let n = self.w.len() - 1;
        let i = ((tau / self.dtau).floor() as usize).min(n - 1);
        (i, tau)
    }

    /// `(W, dW/dτ, ∫μ)` at time `s` by quintic Hermite interpolation in τ.
    fn interp(&self, s: f64) -> (f64, f64, f64) {
        let (i, tau) = self.locate(s);
        let (t0, t1) = (i as f64 * self.dtau, (i + 1) as f64 * self.dtau);
        let (d0, dd0) = self.slopes(t0, self.w[i]);
        let (d1, dd1) = self.slopes(t1, self.w[i + 1]);
        let (w, dw) = hermite5(t0, t1, [self.w[i], self.w[i + 1]], [d0[0], d1[0]], [dd0[0], dd1[0]], tau);
        let (im, _) = hermite5(t0, t1, [self.int_mu[i], self.int_mu[i + 1]], [d0[1], d1[1]], [dd0[1], dd1[1]], tau);
        (w, dw, im)
    }

    /// `∫1/μ` from the equation itself: `a∫1/μ = μ(s) − μ(0) − b·s − c∫μ`.
    fn inv_from_identity(&self, s: f64, mu: f64, im: f64) -> f64 {
        let r = self.rhs;
        if r.a == 0.0 {
            return 0.0;
        }
        ((mu - self.mu_values[0] - r.b * s - r.c * im) / r.a).max(0.0)
    }

    pub fn mu_at(&self, s: f64) -> f64 {
        self.interp(s).0.max(0.0).sqrt()
    }

    /// μ'(s) from the ODE right-hand side at the interpolated μ(s).
    pub fn mu_prime_at(&self, s: f64) -> f64 {
        self.rhs.eval(self.mu_at(s))
    }

    /// `∫₀ˢ μ(r) dr`.
    pub fn int_mu_at(&self, s: f64) -> f64 {
        self.interp(s).2
    }

    /// `∫₀ˢ dr/μ(r)`.
    pub fn int_inv_mu_at(&self, s: f64) -> f64 {
        let (w, _, im) = self.interp(s);
        self.inv_from_identity(s.clamp(0.0, self.horizon), w.max(0.0).sqrt(), im)
    }

    /// Largest relative ODE residual `|μ' − RHS|/(1 + |RHS|)` at the midpoints of
    /// the integration grid, with μ' taken from the interpolant's derivative.
    pub fn ode_residual_max(&self) -> f64 {
        let n = self.w.len() - 1;
        let mut worst: f64 = 0.0;
        for i in 1..n {
            let tau = (i as f64 + 0.5) * self.dtau;
            let s = tau * tau;
            let (w, dw, _) = self.interp(s);
            let mu = w.sqrt();
            let mu_prime = dw / (2.0 * tau) / (2.0 * mu);
            let rhs = self.rhs.eval(mu);
            worst = worst.max((mu_prime - rhs).abs() / (1.0 + rhs.abs()));
        }
        worst
    }

    pub fn nu_at(&self, s: f64) -> Result<f64> {
        let c = self.constants.ok_or_else(|| nu_undefined(self))?;
        let s = s.clamp(0.0, self.horizon);
        let (w, _, im) = self.interp(s);
        let ii = self.inv_from_identity(s, w.max(0.0).sqrt(), im);
        let (b, g2, lam) = (self.beta, self.gamma * self.gamma, self.lambda);
        Ok(match self.regime {
            Regime::LambdaZero => {
                let inv = if g2 == 0.0 { 0.0 } else { SQRT_2 / 2.0 * g2 * ii };
                SQRT_2 / 2.0 * b * im + g2 / 2.0 * s + inv
            }
            Regime::LambdaSmall => c.c1 * im + c.c2 * s,
            Regime::LambdaHalf => (g2 * c.c_bar * (s + im)).exp(),
            Regime::LambdaLarge => g2 / (4.0 * lam) * c.c_bar * ii + (g2 * c.c_bar / 2.0 + c.c_tilde) * s,
        })
    }

    pub fn nu_prime_at(&self, s: f64) -> Result<f64> {
        let c = self.constants.ok_or_else(|| nu_undefined(self))?;
        let mu = self.mu_at(s);
        let (b, g2, lam) = (self.beta, self.gamma * self.gamma, self.lambda);
        Ok(match self.regime {
            Regime::LambdaZero => {
                let inv = if g2 == 0.0 { 0.0 } else { SQRT_2 / 2.0 * g2 / mu };
                SQRT_2 / 2.0 * b * mu + g2 / 2.0 + inv
            }
            Regime::LambdaSmall => c.c1 * mu + c.c2,
            Regime::LambdaHalf => self.nu_at(s)? * g2 * c.c_bar * (1.0 + mu),
            Regime::LambdaLarge => g2 / (4.0 * lam) * c.c_bar / mu + g2 * c.c_bar / 2.0 + c.c_tilde,
        })
    }
}

fn nu_undefined(c: &ThresholdCurve) -> Error {
    Error::InvalidParameter(format!(
        "nu is not available for this curve (regime {}, eps {}); critical curves carry nu only for lambda = 0",
        c.regime.name(),
        c.eps
    ))
}

struct Integrated {
    dtau: f64,
    s_grid: Vec<f64>,
    w: Vec<f64>,
    int_mu: Vec<f64>,
    int_inv_mu: Vec<f64>,
}

fn integrate(rhs: MuRhs, mu0: f64, horizon: f64, steps: usize) -> Result<Integrated> {
    let dtau = horizon.sqrt() / steps as f64;
    let mut w = Vec::with_capacity(steps + 1);
    let mut int_mu = Vec::with_capacity(steps + 1);
    let direct = rhs.a == 0.0 && mu0 == 0.0;
    // Without a 1/μ term W ≡ 0 would also solve the W-equation; integrate μ itself.
    let f_mu = |tau: f64, y: &[f64; 2]| [2.0 * tau * (rhs.b + rhs.c * y[0]), 2.0 * tau * y[0]];
    let f_w = |tau: f64, y: &[f64; 2]| {
        let w = y[0].max(0.0);
        let sw = w.sqrt();
        [2.0 * tau * (2.0 * rhs.a + 2.0 * rhs.b * sw + 2.0 * rhs.c * w), 2.0 * tau * sw]
    };
    let mut y = if direct { [0.0, 0.0] } else { [mu0 * mu0, 0.0] };
    for i in 0..=steps {
        w.push(if direct { y[0] * y[0] } else { y[0] });
        int_mu.push(y[1]);
        if i < steps {
            // √W has W-derivatives of size W^{-k} near 0, so the per-step relative
            // error behaves like (h/τ)^5; sub-step the first intervals accordingly.
            let sub = if i == 0 { FIRST_SUBSTEPS } else { (GRADED_SUBSTEPS + i - 1) / i };
            let h = dtau / sub as f64;
            for k in 0..sub {
                let t = i as f64 * dtau + k as f64 * h;
                y = if direct { rk4_step(&f_mu, t, &y, h) } else { rk4_step(&f_w, t, &y, h) };
            }
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("threshold curve overflowed".into()));
    }
    let s_grid: Vec<f64> = (0..=steps)
        .map(|i| if i == steps { horizon } else { (i as f64 * dtau).powi(2) })
        .collect();
    let int_inv_mu = if rhs.a == 0.0 {
        vec![0.0; steps + 1]
    } else {
        s_grid
            .iter()
            .zip(w.iter().zip(&int_mu))
            .map(|(&s, (&w, &im))| ((w.max(0.0).sqrt() - mu0 - rhs.b * s - rhs.c * im) / rhs.a).max(0.0))
            .collect()
    };
    Ok(Integrated { dtau, s_grid, w, int_mu, int_inv_mu })
}

fn assemble(regime: Regime, beta: f64, gamma: f64, lambda: f64, eps: f64, horizon: f64, rhs: MuRhs, it: Integrated) -> ThresholdCurve {
    ThresholdCurve {
        regime,
        beta,
        gamma,
        lambda,
        eps,
        horizon,
        mu_values: it.w.iter().map(|v| v.max(0.0).sqrt()).collect(),
        s_grid: it.s_grid,
        nu_values: None,
        constants: None,
        rhs,
        dtau: it.dtau,
        w: it.w,
        int_mu: it.int_mu,
        int_inv_mu: it.int_inv_mu,
    }
}

/// Integrate the μ-equation. `eps = 0` gives the critical curve starting at 0.
pub fn solve_mu(beta: f64, gamma: f64, lambda: f64, eps: f64, horizon: f64, steps: usize) -> Result<ThresholdCurve> {
    let regime = Regime::from_lambda(lambda)?;
    check_params(regime, beta, gamma, lambda, eps)?;
    check_horizon(horizon, steps)?;
    let rhs = mu_rhs(regime, beta, gamma, lambda, eps);
    let it = integrate(rhs, eps, horizon, steps)?;
    Ok(assemble(regime, beta, gamma, lambda, eps, horizon, rhs, it))
}

fn check_horizon(horizon: f64, steps: usize) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    if steps < 2 {
        return Err(invalid("steps must be >= 2"));
    }
    Ok(())
}

/// Compute the regime constants and fill ν on the grid.
pub fn solve_nu(mut curve: ThresholdCurve) -> Result<ThresholdCurve> {
    let consts = nu_constants(&curve)?;
    curve.constants = Some(consts);
    let nu: Result<Vec<f64>> = curve.s_grid.iter().map(|&s| curve.nu_at(s)).collect();
    let nu = nu?;
    if nu.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("nu overflowed".into()));
    }
    curve.nu_values = Some(nu);
    Ok(curve)
}

/// `solve_mu` followed by `solve_nu`.
pub fn solve_curve(beta: f64, gamma: f64, lambda: f64, eps: f64, horizon: f64, steps: usize) -> Result<ThresholdCurve> {
    solve_nu(solve_mu(beta, gamma, lambda, eps, horizon, steps)?)
}

/// Offset `k_ε` of the λ ∈ (0,½) test function.
pub fn k_eps_small(eps: f64, mu_t: f64, gamma: f64) -> f64 {
    ((1.0 + eps) / (2.0 * eps)).exp() + (1.0 / (2.0 * eps * eps)).powf(1.0 / (2.0 * eps)) + mu_t / gamma + E
}

/// Offset `k̃` of the λ > ½ test function.
pub fn k_tilde_large(lambda: f64, mu_t: f64, gamma: f64) -> f64 {
    E + (2.0 * lambda * mu_t / gamma).powi(2)
}

fn nu_constants(curve: &ThresholdCurve) -> Result<NuConstants> {
    let (beta, gamma, lam, eps) = (curve.beta, curve.gamma, curve.lambda, curve.eps);
    let mu_t = curve.mu_t();
    let zero = NuConstants { offset: E, young_c: 0.0, c_bar: 0.0, c1: 0.0, c2: 0.0, c_tilde: 0.0 };
    if curve.regime == Regime::LambdaZero {
        return Ok(zero);
    }
    if eps == 0.0 {
        return Err(nu_undefined(curve));
    }
    let young_c = minimal_young_constant(1.0 + eps, lam)?;
    match curve.regime {
        Regime::LambdaZero => unreachable!(),
        Regime::LambdaSmall => {
            let offset = k_eps_small(eps, mu_t, gamma);
            if !offset.is_finite() {
                return Err(Error::Numerical(format!("offset k_eps overflows for eps = {eps}")));
            }
            let l0 = offset.ln();
            let c_bar = (1.0 + eps) * (2.0 * gamma * (1.0 + eps) / eps).ln().abs().powf(2.0 * lam) + young_c;
            let p = lam + 0.5;
            let c1 = if beta == 0.0 {
                0.0
            } else {
                sup_half_line(&|l: f64| beta * p * l.powf(2.0 * lam) - eps * l.powf(p), l0).max(0.0)
            };
            let a = gamma * gamma * (1.0 + eps) / 2.0;
            let m = p * eps;
            let g = |l: f64| {
                a * (1.0 + eps).powf(2.0 * lam + 1.0) * l.powf(2.0 * lam) + a * c_bar / m * l.powf(0.5 - lam)
                    - eps * l.powf(p)
            };
            let c2 = (a * c_bar + sup_half_line(&g, l0)).max(0.0);
            Ok(NuConstants { offset, young_c, c_bar, c1, c2, c_tilde: 0.0 })
        }
        Regime::LambdaHalf => {
            let c_bar = ((1.0 + eps) * (gamma.ln() - eps.ln()).abs() + young_c) / (2.0 * eps);
            Ok(NuConstants { offset: 1.0, young_c, c_bar, c1: 0.0, c2: 0.0, c_tilde: 0.0 })
        }
        Regime::LambdaLarge => {
            let offset = k_tilde_large(lam, mu_t, gamma);
            let c_bar = (1.0 + eps) * k_lambda(lam) * (gamma / (2.0 * lam * eps)).ln().abs().powf(2.0 * lam) + young_c;
            let c_tilde = if beta == 0.0 {
                0.0
            } else {
                sup_half_line(&|l: f64| beta * l - eps * l.powf(2.0 * lam), offset.ln()).max(0.0)
            };
            Ok(NuConstants { offset, young_c, c_bar, c1: 0.0, c2: 0.0, c_tilde })
        }
    }
}

/// Closed forms for the critical curve where they exist.
pub fn closed_form_mu(s: f64, beta: f64, gamma: f64, lambda: f64, regime: Regime) -> Option<f64> {
    match regime {
        Regime::LambdaZero if lambda == 0.0 => {
            if beta == 0.0 {
                Some(gamma * s.sqrt())
            } else if gamma == 0.0 {
                Some(SQRT_2 / 2.0 * beta * s)
            } else {
                None
            }
        }
        Regime::LambdaSmall if beta == 0.0 && lambda > 0.0 && lambda < 0.5 => {
            Some(gamma / (lambda + 0.5).sqrt() * s.sqrt())
        }
        _ => None,
    }
}

/// Closed form of the unified-normalisation critical curve for λ ∈ [0,½), β = 0;
/// at λ = 0 this is `√2` times the λ = 0 curve.
pub fn closed_form_unified_mu(s: f64, beta: f64, gamma: f64, lambda: f64) -> Option<f64> {
    if beta == 0.0 && (0.0..0.5).contains(&lambda) {
        Some(gamma / (lambda + 0.5).sqrt() * s.sqrt())
    } else {
        None
    }
}

/// `μ⁰(T)`, the endpoint of the critical curve.
pub fn critical_threshold(beta: f64, gamma: f64, lambda: f64, regime: Regime, horizon: f64) -> Result<f64> {
    if Regime::from_lambda(lambda)? != regime {
        return Err(invalid(format!("lambda = {lambda} does not belong to regime {}", regime.name())));
    }
    Ok(solve_mu(beta, gamma, lambda, 0.0, horizon, DEFAULT_STEPS)?.mu_t())
}

/// The ε > 0 with `μ_ε(T) = target`, by bisection on the increasing map ε ↦ μ_ε(T).
pub fn invert_eps(beta: f64, gamma: f64, lambda: f64, regime: Regime, target_mu_t: f64, horizon: f64) -> Result<f64> {
    if regime == Regime::LambdaZero {
        return Err(invalid("lambda = 0 has no eps family"));
    }
    let critical = critical_threshold(beta, gamma, lambda, regime, horizon)?;
    if !(target_mu_t > critical) {
        return Err(Error::NotAboveCritical { target: target_mu_t, critical });
    }
    let end = |e: f64| solve_mu(beta, gamma, lambda, e, horizon, DEFAULT_STEPS).map(|c| c.mu_t());
    let mut hi = 1.0;
    while end(hi)? < target_mu_t {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical("could not bracket eps".into()));
        }
    }
    let f = |e: f64| end(e).map(|m| m - target_mu_t).unwrap_or(f64::NAN);
    let mut lo = 0.0;
    let tol = 1e-8 * target_mu_t;
    let mut mid = 0.5 * hi;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let v = f(mid);
        if !v.is_finite() {
            return Err(Error::Numerical("eps inversion failed".into()));
        }
        if v.abs() <= tol {
            break;
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(mid)
}

/// Comparison of the section-wise μ-equation with the unified form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnifiedConsistency {
    pub lambda: f64,
    pub eps: f64,
    pub canonical: MuRhs,
    pub unified: MuRhs,
    pub canonical_mu_t: f64,
    pub unified_mu_t: f64,
    pub rel_diff_mu_t: f64,
    pub consistent: bool,
}

/// Solve both forms and compare their endpoints. For λ = 0 the unified
/// critical curve is compared against `√2` times the λ = 0 curve.
pub fn unified_consistency(beta: f64, gamma: f64, lambda: f64, eps: f64, horizon: f64) -> Result<UnifiedConsistency> {
    let regime = Regime::from_lambda(lambda)?;
    let (canonical, canonical_mu_t) = if regime == Regime::LambdaZero {
        let c = solve_mu(beta, gamma, 0.0, 0.0, horizon, DEFAULT_STEPS)?;
        (c.rhs, SQRT_2 * c.mu_t())
    } else {
        let c = solve_mu(beta, gamma, lambda, eps, horizon, DEFAULT_STEPS)?;
        (c.rhs, c.mu_t())
    };
    let unified = unified_mu_rhs(beta, gamma, lambda, if regime == Regime::LambdaZero { 0.0 } else { eps })?;
    let u = solve_mu_with_rhs(regime, unified, if regime == Regime::LambdaZero { 0.0 } else { eps }, horizon, DEFAULT_STEPS)?;
    let unified_mu_t = u.mu_t();
    let rel = (unified_mu_t - canonical_mu_t).abs() / canonical_mu_t.abs().max(1e-300);
    Ok(UnifiedConsistency {
        lambda,
        eps,
        canonical,
        unified,
        canonical_mu_t,
        unified_mu_t,
        rel_diff_mu_t: rel,
        consistent: rel <= 1e-8,
    })
}

/// Integrate an arbitrary `μ' = a/μ + b + cμ`, `μ(0) = mu0`. The result carries
/// `regime` only as a label; ν is not available on it.
pub fn solve_mu_with_rhs(regime: Regime, rhs: MuRhs, mu0: f64, horizon: f64, steps: usize) -> Result<ThresholdCurve> {
    check_horizon(horizon, steps)?;
    if !(rhs.a >= 0.0 && rhs.b >= 0.0 && rhs.c >= 0.0) || !(mu0 >= 0.0) || (rhs.a == 0.0 && rhs.b == 0.0 && mu0 == 0.0) {
        return Err(invalid("coefficients must be >= 0 and the curve must leave 0"));
    }
    let it = integrate(rhs, mu0, horizon, steps)?;
    Ok(assemble(regime, f64::NAN, f64::NAN, f64::NAN, mu0, horizon, rhs, it))
}
