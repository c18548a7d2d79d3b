//! Logarithmic Young-type inequalities: the two-parameter family
//! `2xy|ln y|^λ ≤ x²(k·4^{(λ−1)⁺}|ln x|^{2λ} + C) + y²`, its minimal constant,
//! a sharpness counter-scan, and the square-root-log variant.
//!
//! Everything is evaluated in the normalised coordinates `a = y/x`, `ℓ = ln x`
//! (dividing by `x²`), which keeps the scan along `x = exp(2^j)` finite.

use crate::error::{domain, invalid, Result};
use crate::numerics::{golden_max, grid_sup};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoungLogParams {
    pub k: f64,
    pub lambda: f64,
    pub c: f64,
}

impl YoungLogParams {
    pub fn new(k: f64, lambda: f64, c: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid(format!("k must be positive, got {k}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(c >= 0.0) {
            return Err(invalid(format!("C must be >= 0, got {c}")));
        }
        Ok(Self { k, lambda, c })
    }

    /// `k > 1`: the range where a finite constant exists.
    pub fn is_valid(&self) -> bool {
        self.k > 1.0
    }

    /// `k ≤ 4^{-(λ−1)⁺}`: no finite `C` can work.
    pub fn in_failure_zone(&self) -> bool {
        self.k <= 4f64.powf(-(self.lambda - 1.0).max(0.0))
    }

    fn coeff(&self) -> f64 {
        self.k * 4f64.powf((self.lambda - 1.0).max(0.0))
    }
}

/// `|ℓ + d|^λ − |ℓ|^λ` without cancellation when `d ≪ ℓ`.
fn pow_abs_diff(l: f64, d: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let s = l + d;
    if l != 0.0 && s != 0.0 && (s > 0.0) == (l > 0.0) {
        l.abs().powf(lambda) * (lambda * (d / l).ln_1p()).exp_m1()
    } else {
        s.abs().powf(lambda) - l.abs().powf(lambda)
    }
}

/// `(RHS − LHS)/x²` written in `a = y/x`, `ℓ = ln x`, `ln a`.
pub fn young_log_margin_normalized(a: f64, ln_a: f64, ell: f64, p: &YoungLogParams) -> f64 {
    let lam = p.lambda;
    let (lp, l2p) = if lam == 0.0 {
        (1.0, 1.0)
    } else {
        (ell.abs().powf(lam), ell.abs().powf(2.0 * lam))
    };
    // c|ℓ|^{2λ} + C + a² − 2a|ℓ+ln a|^λ
    //   = (a − |ℓ|^λ)² + (c − 1)|ℓ|^{2λ} − 2a(|ℓ+ln a|^λ − |ℓ|^λ) + C
    (a - lp).powi(2) + (p.coeff() - 1.0) * l2p - 2.0 * a * pow_abs_diff(ell, ln_a, lam) + p.c
}

/// `(RHS − LHS)/x²` of the inequality at `(x, y)`.
pub fn young_log_margin(x: f64, y: f64, p: &YoungLogParams) -> Result<f64> {
    if !(x > 0.0) || !(y > 0.0) {
        return Err(domain(format!("x and y must be positive, got ({x}, {y})")));
    }
    let ln_a = y.ln() - x.ln();
    Ok(young_log_margin_normalized(y / x, ln_a, x.ln(), p))
}

pub fn young_log_holds(x: f64, y: f64, p: &YoungLogParams) -> Result<bool> {
    Ok(young_log_margin(x, y, p)? >= 0.0)
}

/// `f(a) = 2a·2^{(λ−1)⁺}|ln a|^λ − (1 − 1/k)a²`.
pub fn young_objective(a: f64, k: f64, lambda: f64) -> f64 {
    let la = if lambda == 0.0 { 1.0 } else { a.ln().abs().powf(lambda) };
    2.0 * a * 2f64.powf((lambda - 1.0).max(0.0)) * la - (1.0 - 1.0 / k) * a * a
}

/// `sup_{a>0} f(a; k, λ)`, the constant that makes the inequality hold for all `x, y > 0`.
pub fn minimal_young_constant(k: f64, lambda: f64) -> Result<f64> {
    if !(k > 1.0) || !k.is_finite() {
        return Err(invalid(format!("k must exceed 1, got {k}")));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let g = |u: f64| young_objective(u.exp(), k, lambda);
    let (mut lo, mut hi) = (-40.0, 40.0);
    loop {
        let (u, v) = grid_sup(&g, lo, hi, 10_000);
        let h = (hi - lo) / 9_999.0;
        if u > hi - 2.0 * h && hi < 700.0 {
            lo = hi - 10.0;
            hi += 80.0;
            continue;
        }
        return Ok(v.max(0.0));
    }
}

/// A point on the scan curve `y = x|ln x|^λ`, `x = exp(2^j)`, where the inequality fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessWitness {
    pub j: u32,
    pub ln_x: f64,
    pub margin: f64,
}

/// Walk `x = exp(2^j)`, `j = 1..=60`, with `y = x|ln x|^λ`, returning the first violation.
pub fn sharpness_scan(p: &YoungLogParams) -> Option<SharpnessWitness> {
    for j in 1..=60u32 {
        let ell = 2f64.powi(j as i32);
        let a = ell.powf(p.lambda);
        let ln_a = p.lambda * ell.ln();
        let margin = young_log_margin_normalized(a, ln_a, ell, p);
        if margin < 0.0 {
            return Some(SharpnessWitness { j, ln_x: ell, margin });
        }
    }
    None
}

/// Smallest `K` for which `2xy√|ln y| ≤ 2x²(|ln x| + K) + ¾y²` at `(x, y)`.
pub fn sqrt_log_required(x: f64, y: f64) -> f64 {
    let a = y / x;
    a * y.ln().abs().sqrt() - 0.375 * a * a - x.ln().abs()
}

pub fn sqrt_log_holds(x: f64, y: f64, k: f64) -> Result<bool> {
    if !(x > 0.0) || !(y > 0.0) {
        return Err(domain(format!("x and y must be positive, got ({x}, {y})")));
    }
    Ok(2.0 * x * y * y.ln().abs().sqrt() <= 2.0 * x * x * (x.ln().abs() + k) + 0.75 * y * y)
}

/// Universal constant of the square-root-log inequality over `[1e−8, 1e8]²`:
/// a 1000 × 1000 log grid followed by coordinate-wise golden refinement.
pub fn sqrt_log_constant() -> f64 {
    let n = 1000;
    let (lo, hi) = ((1e-8f64).ln(), (1e8f64).ln());
    let h = (hi - lo) / (n - 1) as f64;
    let req = |u: f64, v: f64| sqrt_log_required(u.exp(), v.exp());
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..n {
        let u = lo + h * i as f64;
        for j in 0..n {
            let v = lo + h * j as f64;
            let r = req(u, v);
            if r > best.2 {
                best = (u, v, r);
            }
        }
    }
    // x = 1 sits on the kink of |ln x|; include it explicitly.
    for j in 0..n {
        let v = lo + h * j as f64;
        let r = req(0.0, v);
        if r > best.2 {
            best = (0.0, v, r);
        }
    }
    let (mut u, mut v, mut val) = best;
    for _ in 0..60 {
        let (nv, fv) = golden_max(&|t: f64| req(u, t), v - 2.0 * h, v + 2.0 * h, 1e-14);
        if fv > val {
            v = nv;
            val = fv;
        }
        let (nu, fu) = golden_max(&|t: f64| req(t, v), u - 2.0 * h, u + 2.0 * h, 1e-14);
        if fu > val {
            u = nu;
            val = fu;
        }
    }
    val
}
