//! Generator and terminal-condition models, growth-envelope and structural
//! certificates by sampling, the builtin example generators and the two-sided
//! truncation `g^{n,p} = g⁺∧n − g⁻∧p`.

use crate::error::{invalid, Error, Result};
use crate::threshold_odes::Regime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// `g(t, b, y, z)` with `b` the Brownian state.
pub type GenFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// `α(t, b) ≥ 0`.
pub type AlphaFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type XiFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

const CHECK_REL: f64 = 1e-12;

/// The paper's sign convention: `sgn(0) = −1`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub delta: f64,
}

impl GrowthParams {
    pub fn new(beta: f64, gamma: f64, lambda: f64) -> Result<GrowthParams> {
        if !(beta >= 0.0 && gamma >= 0.0 && lambda >= 0.0) || !(beta + gamma + lambda).is_finite() {
            return Err(invalid(format!("growth params need β, γ, λ ≥ 0, got ({beta}, {gamma}, {lambda})")));
        }
        Ok(GrowthParams { beta, gamma, lambda, delta: (lambda + 0.5).min(1.0) })
    }

    pub fn regime(&self) -> Regime {
        Regime::from_lambda(self.lambda).expect("validated in new")
    }

    /// `β|y|(ln|y|)^δ 1_{|y|>1}`.
    pub fn y_term(&self, y: f64) -> f64 {
        let a = y.abs();
        if a > 1.0 {
            self.beta * a * a.ln().powf(self.delta)
        } else {
            0.0
        }
    }

    /// `γ|z||ln|z||^λ`, zero at `z = 0`.
    pub fn z_term(&self, z_norm: f64) -> f64 {
        if z_norm == 0.0 {
            0.0
        } else if self.lambda == 0.0 {
            self.gamma * z_norm
        } else {
            self.gamma * z_norm * z_norm.ln().abs().powf(self.lambda)
        }
    }

    pub fn envelope(&self, alpha: f64, y: f64, z_norm: f64) -> f64 {
        alpha + self.y_term(y) + self.z_term(z_norm)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorFlags {
    pub convex: bool,
    pub concave: bool,
    pub osgood: bool,
    pub uniformly_continuous_z: bool,
    pub lipschitz: bool,
}

/// Moduli for the one-sided Osgood condition in `y` (ρ) and uniform
/// continuity in `z` (κ), with the linear-growth constant `A`.
#[derive(Clone)]
pub struct ModulusSpec {
    pub rho: ScalarFn,
    pub kappa: ScalarFn,
    pub a: f64,
}

impl ModulusSpec {
    /// Checks `ρ(u), κ(u) ≤ A(u+1)` and `ρ(0) = κ(0) = 0` on a log grid.
    pub fn linear_growth_holds(&self) -> bool {
        if (self.rho)(0.0) != 0.0 || (self.kappa)(0.0) != 0.0 {
            return false;
        }
        (0..2_000).all(|i| {
            let u = (-12.0 + 18.0 * i as f64 / 1_999.0f64).exp();
            let cap = self.a * (u + 1.0) * (1.0 + CHECK_REL);
            (self.rho)(u) <= cap && (self.kappa)(u) <= cap
        })
    }
}

impl fmt::Debug for ModulusSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModulusSpec").field("a", &self.a).finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct GeneratorModel {
    pub tag: String,
    pub eval: GenFn,
    pub growth: GrowthParams,
    pub alpha: AlphaFn,
    pub flags: GeneratorFlags,
    pub moduli: Option<ModulusSpec>,
}

impl fmt::Debug for GeneratorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorModel")
            .field("tag", &self.tag)
            .field("growth", &self.growth)
            .field("flags", &self.flags)
            .field("moduli", &self.moduli)
            .finish_non_exhaustive()
    }
}

impl GeneratorModel {
    pub fn new<F, A>(tag: impl Into<String>, growth: GrowthParams, eval: F, alpha: A) -> GeneratorModel
    where
        F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
        A: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        GeneratorModel {
            tag: tag.into(),
            eval: Arc::new(eval),
            growth,
            alpha: Arc::new(alpha),
            flags: GeneratorFlags::default(),
            moduli: None,
        }
    }

    pub fn with_flags(mut self, flags: GeneratorFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_moduli(mut self, moduli: ModulusSpec) -> Self {
        self.moduli = Some(moduli);
        self
    }

    #[inline]
    pub fn eval(&self, t: f64, b: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.eval)(t, b, y, z)
    }

    #[inline]
    pub fn alpha(&self, t: f64, b: &[f64]) -> f64 {
        (self.alpha)(t, b)
    }

    /// `true` when `g` does not depend on `(y, z)` at a handful of probe points.
    pub fn is_yz_free(&self, d: usize) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7a);
        (0..64).all(|_| {
            let t = rng.random::<f64>();
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z1: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let z2: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (y1, y2) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            self.eval(t, &b, y1, &z1) == self.eval(t, &b, y2, &z2)
        })
    }

    pub fn zero() -> GeneratorModel {
        let mut g = GeneratorModel::new("zero", GrowthParams::new(0.0, 0.0, 0.0).unwrap(), |_, _, _, _| 0.0, |_, _| 0.0);
        g.flags = GeneratorFlags { convex: true, concave: true, osgood: true, uniformly_continuous_z: true, lipschitz: true };
        g
    }

    pub fn constant(c: f64) -> GeneratorModel {
        let mut g = GeneratorModel::new(format!("const({c})"), GrowthParams::new(0.0, 0.0, 0.0).unwrap(), move |_, _, _, _| c, move |_, _| c.abs());
        g.flags = GeneratorFlags { convex: true, concave: true, osgood: true, uniformly_continuous_z: true, lipschitz: true };
        g
    }

    /// `a·y + b + c·z₁`. Envelope `(α, β, γ) = (|b| + e|a|, |a|, |c|)` with λ = 0.
    pub fn linear(a: f64, b: f64, c: f64) -> GeneratorModel {
        let growth = GrowthParams::new(a.abs(), c.abs(), 0.0).unwrap();
        let alpha = b.abs() + std::f64::consts::E * a.abs();
        let mut g = GeneratorModel::new(format!("linear({a},{b},{c})"), growth, move |_, _, y, z| a * y + b + c * z[0], move |_, _| alpha);
        g.flags = GeneratorFlags { convex: true, concave: true, osgood: true, uniformly_continuous_z: true, lipschitz: true };
        let (aa, cc) = (a.abs(), c.abs());
        g.moduli = Some(ModulusSpec { rho: Arc::new(move |u| aa * u), kappa: Arc::new(move |u| cc * u), a: aa.max(cc).max(1.0) });
        g
    }

    /// `γ|z|`.
    pub fn abs_z(gamma: f64) -> GeneratorModel {
        let growth = GrowthParams::new(0.0, gamma.abs(), 0.0).unwrap();
        let mut g = GeneratorModel::new(format!("abs_z({gamma})"), growth, move |_, _, _, z| gamma * norm(z), |_, _| 0.0);
        g.flags = GeneratorFlags { convex: gamma >= 0.0, concave: gamma <= 0.0, osgood: true, uniformly_continuous_z: true, lipschitz: true };
        let gg = gamma.abs();
        g.moduli = Some(ModulusSpec { rho: Arc::new(|_| 0.0), kappa: Arc::new(move |u| gg * u), a: gg.max(1.0) });
        g
    }

    /// `g + c`. Envelope α grows by `|c|`; convexity and moduli are unchanged.
    pub fn shifted(&self, c: f64) -> GeneratorModel {
        let (f, a) = (self.eval.clone(), self.alpha.clone());
        GeneratorModel {
            tag: format!("{}+{c}", self.tag),
            eval: Arc::new(move |t, b, y, z| f(t, b, y, z) + c),
            growth: self.growth,
            alpha: Arc::new(move |t, b| a(t, b) + c.abs()),
            flags: self.flags,
            moduli: self.moduli.clone(),
        }
    }
}

#[derive(Clone)]
pub struct TerminalModel {
    pub tag: String,
    pub xi: XiFn,
}

impl fmt::Debug for TerminalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalModel").field("tag", &self.tag).finish_non_exhaustive()
    }
}

impl TerminalModel {
    pub fn new<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(tag: impl Into<String>, xi: F) -> TerminalModel {
        TerminalModel { tag: tag.into(), xi: Arc::new(xi) }
    }

    #[inline]
    pub fn eval(&self, b: &[f64]) -> f64 {
        (self.xi)(b)
    }

    pub fn constant(c: f64) -> TerminalModel {
        TerminalModel::new(format!("const({c})"), move |_| c)
    }

    /// `c·b₁ + s`.
    pub fn linear(c: f64, s: f64) -> TerminalModel {
        TerminalModel::new(format!("{c}*b1+{s}"), move |b| c * b[0] + s)
    }

    /// `c·|b|`.
    pub fn abs(c: f64) -> TerminalModel {
        TerminalModel::new(format!("{c}*|b|"), move |b| c * norm(b))
    }
}

/// Sampling ranges for the certificates. `y` and `|z|` magnitudes are
/// log-uniform on `[min_abs, max_abs]`; each Brownian coordinate is uniform on
/// `[−b_max, b_max]`; `t` is uniform on `[0, horizon]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRanges {
    pub min_abs: f64,
    pub max_abs: f64,
    pub b_max: f64,
    pub horizon: f64,
    pub dim: usize,
}

impl Default for SampleRanges {
    fn default() -> Self {
        SampleRanges { min_abs: 1e-6, max_abs: 1e3, b_max: 5.0, horizon: 1.0, dim: 1 }
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    r: SampleRanges,
}

impl Sampler {
    fn new(r: SampleRanges, seed: u64) -> Result<Sampler> {
        if !(r.min_abs > 0.0 && r.max_abs > r.min_abs && r.b_max >= 0.0 && r.horizon > 0.0 && r.dim >= 1) {
            return Err(invalid(format!("bad sample ranges {r:?}")));
        }
        Ok(Sampler { rng: ChaCha8Rng::seed_from_u64(seed), r })
    }

    fn magnitude(&mut self) -> f64 {
        // a few exact special points, otherwise log-uniform
        match self.rng.random_range(0..40u32) {
            0 => 0.0,
            1 => 1.0,
            2 => (-0.5f64).exp(),
            _ => self.rng.random_range(self.r.min_abs.ln()..self.r.max_abs.ln()).exp(),
        }
    }

    fn scalar(&mut self) -> f64 {
        let m = self.magnitude();
        if self.rng.random::<bool>() {
            m
        } else {
            -m
        }
    }

    fn vector(&mut self) -> Vec<f64> {
        let m = self.magnitude();
        let mut v: Vec<f64> = (0..self.r.dim).map(|_| self.rng.sample(rand_distr::StandardNormal)).collect();
        let n = norm(&v);
        if n == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v.iter_mut().for_each(|x| *x *= m);
        v
    }

    /// Second point near the first with probability 1/2 (relative offset ≤ 1).
    fn near_scalar(&mut self, y: f64) -> f64 {
        if self.rng.random::<bool>() {
            self.scalar()
        } else {
            y * (1.0 + self.rng.random_range(-1.0..1.0f64) * 10f64.powf(self.rng.random_range(-4.0..0.0)))
        }
    }

    fn near_vector(&mut self, z: &[f64]) -> Vec<f64> {
        if self.rng.random::<bool>() {
            self.vector()
        } else {
            let s = 10f64.powf(self.rng.random_range(-4.0..0.0));
            z.iter().map(|x| x * (1.0 + s * self.rng.random_range(-1.0..1.0f64))).collect()
        }
    }

    fn state(&mut self) -> (f64, Vec<f64>) {
        let t = self.rng.random_range(0.0..=self.r.horizon);
        let b = (0..self.r.dim).map(|_| self.rng.random_range(-self.r.b_max..=self.r.b_max)).collect();
        (t, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub b: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub tag: String,
    pub growth: GrowthParams,
    pub samples: usize,
    pub one_sided: bool,
    pub ranges: SampleRanges,
    pub seed: u64,
    pub violations: usize,
    pub negative_alpha: usize,
    /// Smallest `envelope − sgn(y)·g` seen.
    pub min_margin: f64,
    pub witness: Option<Witness>,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.negative_alpha == 0
    }
}

/// Samples `sgn(y)·g(t,b,y,z) ≤ α(t,b) + β|y|(ln|y|)^δ 1_{|y|>1} + γ|z||ln|z||^λ`.
/// With `one_sided` only `y ≥ 0` is sampled and the sign factor is dropped.
pub fn envelope_check(g: &GeneratorModel, samples: usize, ranges: SampleRanges, seed: u64, one_sided: bool) -> Result<EnvelopeReport> {
    let mut s = Sampler::new(ranges, seed)?;
    let mut rep = EnvelopeReport {
        tag: g.tag.clone(),
        growth: g.growth,
        samples,
        one_sided,
        ranges,
        seed,
        violations: 0,
        negative_alpha: 0,
        min_margin: f64::INFINITY,
        witness: None,
    };
    for _ in 0..samples {
        let (t, b) = s.state();
        let y = if one_sided { s.magnitude() } else { s.scalar() };
        let z = s.vector();
        let alpha = g.alpha(t, &b);
        if !(alpha >= 0.0) {
            rep.negative_alpha += 1;
        }
        let lhs = if one_sided { g.eval(t, &b, y, &z) } else { sgn(y) * g.eval(t, &b, y, &z) };
        let env = g.growth.envelope(alpha, y, norm(&z));
        let margin = env - lhs;
        if margin < rep.min_margin {
            rep.min_margin = margin;
        }
        if !(margin >= -CHECK_REL * (1.0 + env.abs() + lhs.abs())) {
            rep.violations += 1;
            if rep.witness.as_ref().is_none_or(|w| margin < w.margin) {
                rep.witness = Some(Witness { t, b, y, z, margin });
            }
        }
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structural {
    Un1,
    Un2,
    Un3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Curvature {
    Convex,
    Concave,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub tag: String,
    pub which: Structural,
    pub samples: usize,
    pub seed: u64,
    pub ranges: SampleRanges,
    pub violations: usize,
    pub worst_margin: f64,
    /// Samples skipped because both sides overflowed (e.g. `e^y` at `y ≈ 10³`).
    pub nonfinite: usize,
    /// For UN3: violations of each direction. The condition holds if either is zero.
    pub convex_violations: usize,
    pub concave_violations: usize,
    pub curvature: Option<Curvature>,
    pub modulus_growth_ok: Option<bool>,
    pub witness: Option<(Witness, Witness)>,
}

impl StructuralReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.modulus_growth_ok != Some(false)
    }
}

/// Sampling certificate for UN1 (one-sided Osgood in y), UN2 (uniform
/// continuity in z) or UN3 (midpoint convexity or concavity in (y,z)).
pub fn structural_checks(g: &GeneratorModel, which: Structural, samples: usize, ranges: SampleRanges, seed: u64) -> Result<StructuralReport> {
    let mut s = Sampler::new(ranges, seed)?;
    let mut rep = StructuralReport {
        tag: g.tag.clone(),
        which,
        samples,
        seed,
        ranges,
        violations: 0,
        worst_margin: f64::INFINITY,
        nonfinite: 0,
        convex_violations: 0,
        concave_violations: 0,
        curvature: None,
        modulus_growth_ok: None,
        witness: None,
    };
    let moduli = match which {
        Structural::Un3 => None,
        _ => Some(g.moduli.as_ref().ok_or_else(|| Error::Precondition(format!("{}: moduli required for {which:?}", g.tag)))?),
    };
    if let Some(m) = moduli {
        rep.modulus_growth_ok = Some(m.linear_growth_holds());
    }
    let tol = |a: f64, b: f64| CHECK_REL * (1.0 + a.abs() + b.abs());
    let record = |rep: &mut StructuralReport, margin: f64, bad: bool, w: (Witness, Witness)| {
        rep.worst_margin = rep.worst_margin.min(margin);
        if bad {
            rep.violations += 1;
            if rep.witness.as_ref().is_none_or(|x| margin < x.0.margin) {
                rep.witness = Some(w);
            }
        }
    };
    for _ in 0..samples {
        let (t, b) = s.state();
        let y1 = s.scalar();
        let z1 = s.vector();
        match which {
            Structural::Un1 => {
                let y2 = s.near_scalar(y1);
                let (g1, g2) = (g.eval(t, &b, y1, &z1), g.eval(t, &b, y2, &z1));
                if !g1.is_finite() && g1 == g2 {
                    rep.nonfinite += 1;
                    continue;
                }
                let lhs = sgn(y1 - y2) * (g1 - g2);
                let rhs = (moduli.unwrap().rho)((y1 - y2).abs());
                let m = rhs - lhs;
                let w = (Witness { t, b: b.clone(), y: y1, z: z1.clone(), margin: m }, Witness { t, b: b.clone(), y: y2, z: z1.clone(), margin: m });
                record(&mut rep, m, !(m >= -tol(g1.abs() + g2.abs(), rhs)), w);
            }
            Structural::Un2 => {
                let z2 = s.near_vector(&z1);
                let dz: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - b).collect();
                let (g1, g2) = (g.eval(t, &b, y1, &z1), g.eval(t, &b, y1, &z2));
                if !g1.is_finite() && g1 == g2 {
                    rep.nonfinite += 1;
                    continue;
                }
                let lhs = (g1 - g2).abs();
                let rhs = (moduli.unwrap().kappa)(norm(&dz));
                let m = rhs - lhs;
                let w = (Witness { t, b: b.clone(), y: y1, z: z1.clone(), margin: m }, Witness { t, b: b.clone(), y: y1, z: z2, margin: m });
                record(&mut rep, m, !(m >= -tol(g1.abs() + g2.abs(), rhs)), w);
            }
            Structural::Un3 => {
                let y2 = s.near_scalar(y1);
                let z2 = s.near_vector(&z1);
                let ym = 0.5 * (y1 + y2);
                let zm: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| 0.5 * (a + b)).collect();
                let gm = g.eval(t, &b, ym, &zm);
                let avg = 0.5 * (g.eval(t, &b, y1, &z1) + g.eval(t, &b, y2, &z2));
                if !gm.is_finite() && !avg.is_finite() {
                    rep.nonfinite += 1;
                    continue;
                }
                let eps = tol(gm, avg);
                if gm > avg + eps {
                    rep.convex_violations += 1;
                }
                if gm < avg - eps {
                    rep.concave_violations += 1;
                }
                let m = avg - gm;
                rep.worst_margin = rep.worst_margin.min(m);
                if gm > avg + eps && rep.witness.as_ref().is_none_or(|x| m < x.0.margin) {
                    rep.witness = Some((Witness { t, b: b.clone(), y: y1, z: z1.clone(), margin: m }, Witness { t, b: b.clone(), y: y2, z: z2, margin: m }));
                }
            }
        }
    }
    if which == Structural::Un3 {
        rep.violations = rep.convex_violations.min(rep.concave_violations);
        rep.curvature = if rep.convex_violations == 0 {
            Some(Curvature::Convex)
        } else if rep.concave_violations == 0 {
            Some(Curvature::Concave)
        } else {
            None
        };
    }
    Ok(rep)
}

/// Largest relative jump of `g` under perturbations of size `1e−12·(1+|·|)` in
/// `y` and in `z`, over samples. Non-finite values are ignored.
pub fn continuity_probe(g: &GeneratorModel, samples: usize, ranges: SampleRanges, seed: u64) -> Result<f64> {
    let mut s = Sampler::new(ranges, seed)?;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (t, b) = s.state();
        let y = s.scalar();
        let z = s.vector();
        let h = 1e-12 * (1.0 + y.abs());
        let zh: Vec<f64> = z.iter().map(|x| x + 1e-12 * (1.0 + x.abs())).collect();
        let g0 = g.eval(t, &b, y, &z);
        let jump = (g.eval(t, &b, y + h, &z) - g0).abs().max((g.eval(t, &b, y, &zh) - g0).abs());
        worst = worst.max(jump / (1.0 + g0.abs()));
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleParams {
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub k: f64,
}

pub const BUILTIN_NAMES: [&str; 7] = ["ex3.8-g1", "ex3.8-g2", "ex4.8", "ex5.7-g", "ex5.7-g1", "ex5.7-g2", "ex6.7"];

/// `|y|·f(|y|)` pieces used by the builtins, each zero at `y = 0`.
fn ylog_pow(a: f64, q: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * a.ln().abs().powf(q)
    }
}

/// Concave Osgood modulus dominating `u ↦ u|ln u|^q` near 0: the curve up to
/// `u₀ = e^{−2}` and its tangent line after.
fn osgood_modulus(q: f64) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
    let u0 = (-2.0f64).exp();
    let f0 = u0 * 2f64.powf(q);
    let slope = 2f64.powf(q) - q * 2f64.powf(q - 1.0);
    move |u: f64| if u <= 0.0 { 0.0 } else if u <= u0 { u * u.ln().abs().powf(q) } else { f0 + slope * (u - u0) }
}

/// Returns the example generator and a few matching terminal conditions.
pub fn builtin_example(name: &str, p: ExampleParams) -> Result<(GeneratorModel, Vec<TerminalModel>)> {
    let ExampleParams { beta, gamma, lambda, k } = p;
    if !(beta >= 0.0 && gamma >= 0.0 && k >= 0.0) {
        return Err(invalid(format!("{name}: need β, γ, k ≥ 0")));
    }
    let convex = GeneratorFlags { convex: true, ..Default::default() };
    let e = std::f64::consts::E;
    let g = match name {
        "ex3.8-g1" => {
            let cut = (-0.5f64).exp();
            let top = 1.0 / (2.0 * e).sqrt();
            let alpha0 = k + beta * top + gamma * k * k / 4.0;
            let g = GeneratorModel::new(
                name,
                GrowthParams::new(beta, gamma, 0.0)?,
                move |_, b, y, z| {
                    let a = y.abs();
                    let ypart = if a <= cut { beta * ylog_pow(a, 0.5) } else { beta * top };
                    let zn = norm(z);
                    norm(b) - kexp(k, y) + ypart + gamma * (zn - k * zn.sqrt())
                },
                move |_, b| norm(b) + alpha0,
            );
            // ρ: β·(concave envelope of |y|√|ln|y||) + u; κ(u) = γu + γk√u
            let h = osgood_modulus(0.5);
            let rho = move |u: f64| beta * h(u).min(top) + u;
            let kappa = move |u: f64| gamma * u + gamma * k * u.sqrt();
            g.with_flags(GeneratorFlags { osgood: true, uniformly_continuous_z: true, ..Default::default() })
                .with_moduli(ModulusSpec { rho: Arc::new(rho), kappa: Arc::new(kappa), a: 1.0 + beta * top + gamma * (1.0 + k) })
        }
        "ex3.8-g2" => GeneratorModel::new(
            name,
            GrowthParams::new(beta, gamma, 0.0)?,
            move |_, b, y, z| {
                let a = y.abs();
                let ypart = if a >= 1.0 { beta * a * a.ln().sqrt() } else { 0.0 };
                norm(b) + kexp(k, -y) + ypart + gamma * norm(z)
            },
            move |_, b| norm(b) + k,
        )
        .with_flags(convex),
        "ex4.8" => {
            if !(lambda > 0.0 && lambda < 0.5) {
                return Err(invalid(format!("ex4.8 needs λ ∈ (0, 1/2), got {lambda}")));
            }
            GeneratorModel::new(
                name,
                GrowthParams::new(beta, gamma, lambda)?,
                move |_, b, y, z| {
                    let a = y.abs();
                    let zn = norm(z);
                    let quad = if y <= 0.0 { k * y * y } else { 0.0 };
                    let ypart = if a > 1.0 { beta * a * a.ln().powf(lambda + 0.5) } else { 0.0 };
                    let zpart = if zn > 1.0 { gamma * zn * zn.ln().powf(lambda) } else { 0.0 };
                    norm(b) + quad + ypart + zpart
                },
                |_, b| norm(b),
            )
            .with_flags(convex)
        }
        "ex5.7-g" => GeneratorModel::new(
            name,
            GrowthParams::new(beta, gamma, 0.5)?,
            move |_, b, y, z| norm(b) + kexp(k, -y) - kexp(k, y) + beta * ylog_signed(y) + gamma * ylog_pow(norm(z), 0.5),
            move |_, b| norm(b) + beta / e + gamma / e.sqrt() + 2.0 * k,
        ),
        "ex5.7-g1" => {
            let top = 1.0 / (2.0 * e).sqrt();
            let g = GeneratorModel::new(
                name,
                GrowthParams::new(beta, gamma, 0.5)?,
                move |_, _, y, z| {
                    let zn = norm(z);
                    let ypart = if y.abs() <= 1.0 { beta * ylog_signed(y) } else { 0.0 };
                    let zpart = if zn <= 1.0 { gamma * ylog_pow(zn, 0.5) } else { 0.0 };
                    -kexp(k, y) + ypart + zpart
                },
                move |_, _| k + beta / e + gamma * top,
            );
            let h = osgood_modulus(1.0);
            let rho = move |u: f64| beta * h(u);
            let kappa = move |u: f64| gamma * u.sqrt().min(top);
            g.with_flags(GeneratorFlags { osgood: true, uniformly_continuous_z: true, ..Default::default() })
                .with_moduli(ModulusSpec { rho: Arc::new(rho), kappa: Arc::new(kappa), a: 1.0 + beta + gamma })
        }
        "ex5.7-g2" => GeneratorModel::new(
            name,
            GrowthParams::new(beta, gamma, 0.5)?,
            move |_, b, y, z| {
                let a = y.abs();
                let zn = norm(z);
                let ypart = if a > 1.0 { beta * a * a.ln() } else { 0.0 };
                let zpart = if zn > 1.0 { gamma * zn * zn.ln().sqrt() } else { 0.0 };
                norm(b) + kexp(k, -y) + ypart + zpart
            },
            move |_, b| norm(b) + k,
        )
        .with_flags(convex),
        "ex6.7" => {
            if !(lambda > 0.5) {
                return Err(invalid(format!("ex6.7 needs λ > 1/2, got {lambda}")));
            }
            GeneratorModel::new(
                name,
                GrowthParams::new(beta, gamma, lambda)?,
                move |_, b, y, z| {
                    let a = y.abs();
                    let zn = norm(z);
                    let quad = if y <= 0.0 { k * y * y } else { 0.0 };
                    let ypart = if a > 1.0 { beta * a * a.ln() } else { 0.0 };
                    let zpart = if zn > 1.0 { gamma * zn * zn.ln().powf(lambda) } else { 0.0 };
                    norm(b) + quad + ypart + zpart
                },
                |_, b| norm(b),
            )
            .with_flags(convex)
        }
        _ => return Err(invalid(format!("unknown builtin example {name:?}; known: {}", BUILTIN_NAMES.join(", ")))),
    };
    let terminals = vec![TerminalModel::linear(1.0, 0.0), TerminalModel::abs(1.0), TerminalModel::constant(0.0)];
    Ok((g, terminals))
}

/// `k·e^y` with `0·e^y = 0` also where `e^y` overflows.
fn kexp(k: f64, y: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * y.exp()
    }
}

/// `|y| ln|y|`, zero at `y = 0`.
fn ylog_signed(y: f64) -> f64 {
    let a = y.abs();
    if a == 0.0 {
        0.0
    } else {
        a * a.ln()
    }
}

/// `x⁺∧n − x⁻∧p`, i.e. `clamp(x, −p, n)`.
#[inline]
pub fn truncate_value(x: f64, n: f64, p: f64) -> f64 {
    x.max(0.0).min(n) - (-x).max(0.0).min(p)
}

fn check_np(n: f64, p: f64) -> Result<()> {
    if n >= 1.0 && p >= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("truncation levels need n, p ≥ 1, got ({n}, {p})")))
    }
}

/// `g^{n,p} = g⁺∧n − g⁻∧p`. The clamp is 1-Lipschitz and nondecreasing, so
/// the envelope, UN1 and UN2 survive; convexity does not.
pub fn truncate(g: &GeneratorModel, n: f64, p: f64) -> Result<GeneratorModel> {
    check_np(n, p)?;
    let f = g.eval.clone();
    Ok(GeneratorModel {
        tag: format!("{}^({n},{p})", g.tag),
        eval: Arc::new(move |t, b, y, z| truncate_value(f(t, b, y, z), n, p)),
        growth: g.growth,
        alpha: g.alpha.clone(),
        flags: GeneratorFlags { convex: false, concave: false, ..g.flags },
        moduli: g.moduli.clone(),
    })
}

pub fn truncate_terminal(xi: &TerminalModel, n: f64, p: f64) -> Result<TerminalModel> {
    check_np(n, p)?;
    let f = xi.xi.clone();
    Ok(TerminalModel { tag: format!("{}^({n},{p})", xi.tag), xi: Arc::new(move |b| truncate_value(f(b), n, p)) })
}

/// Declarative generator description for config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Zero,
    Constant { value: f64 },
    /// `a·y + b + c·z₁`
    Linear {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
    },
    /// `γ|z|`
    AbsZ { gamma: f64 },
    Example {
        name: String,
        #[serde(flatten)]
        params: ExampleParams,
    },
    Shifted { base: Box<GeneratorSpec>, shift: f64 },
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<GeneratorModel> {
        Ok(match self {
            GeneratorSpec::Zero => GeneratorModel::zero(),
            GeneratorSpec::Constant { value } => GeneratorModel::constant(*value),
            GeneratorSpec::Linear { a, b, c } => GeneratorModel::linear(*a, *b, *c),
            GeneratorSpec::AbsZ { gamma } => GeneratorModel::abs_z(*gamma),
            GeneratorSpec::Example { name, params } => builtin_example(name, *params)?.0,
            GeneratorSpec::Shifted { base, shift } => base.build()?.shifted(*shift),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalSpec {
    Constant { value: f64 },
    /// `coef·b₁ + shift`
    Linear {
        #[serde(default = "one")]
        coef: f64,
        #[serde(default)]
        shift: f64,
    },
    /// `coef·|b|`
    Abs {
        #[serde(default = "one")]
        coef: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl TerminalSpec {
    pub fn build(&self) -> TerminalModel {
        match self {
            TerminalSpec::Constant { value } => TerminalModel::constant(*value),
            TerminalSpec::Linear { coef, shift } => TerminalModel::linear(*coef, *shift),
            TerminalSpec::Abs { coef } => TerminalModel::abs(*coef),
        }
    }
}
