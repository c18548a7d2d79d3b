//! Backward Euler / least-squares Monte Carlo solver for scalar BSDEs driven by
//! a simulated Brownian motion, plus the truncated family and its monotone
//! limit `inf_p sup_n Y^{n,p}`.
//!
//! Paths come in antithetic pairs `(2j, 2j+1)`; pair `j` draws from ChaCha8
//! stream `j`, so the ensemble does not depend on the thread count. All sums
//! over paths are taken over fixed chunks and added in chunk order.

use crate::error::{invalid, Error, Result};
use crate::generators::{truncate, truncate_terminal, GeneratorModel, TerminalModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Paths per reduction chunk. Fixed so that sums are bitwise reproducible.
const CHUNK: usize = 4096;
const MAX_ELEMENTS: usize = 1 << 31;

/// Regression basis: Hermite polynomials in `B/√t` (total degree ≤
/// `basis_degree`), or piecewise-linear hats on `hat_cells` quantile cells of
/// the state (d = 1 only).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    #[default]
    Hermite,
    Hat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub d: usize,
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub basis: BasisKind,
    pub basis_degree: usize,
    /// Cells of the piecewise-linear basis.
    pub hat_cells: usize,
    pub picard_iters: usize,
    pub picard_tol: f64,
    pub z_clip: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { d: 1, horizon: 1.0, steps: 64, paths: 1 << 16, seed: 0, basis: BasisKind::Hermite, basis_degree: 6, hat_cells: 32, picard_iters: 20, picard_tol: 1e-12, z_clip: 1e3 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.steps < 2 || self.paths < 100 {
            return Err(invalid(format!("need d ≥ 1, N ≥ 2, M ≥ 100; got d={}, N={}, M={}", self.d, self.steps, self.paths)));
        }
        if self.paths % 2 != 0 {
            return Err(invalid(format!("M must be even (antithetic pairs), got {}", self.paths)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.z_clip > 0.0 && self.z_clip.is_finite()) || !(self.picard_tol > 0.0) || self.picard_iters == 0 {
            return Err(invalid("z_clip must be finite and positive, picard_tol > 0, picard_iters ≥ 1"));
        }
        if self.basis == BasisKind::Hat && (self.d != 1 || self.hat_cells < 1) {
            return Err(invalid("the hat basis needs d = 1 and at least one cell"));
        }
        let n = self.paths.checked_mul(self.steps + 1).and_then(|x| x.checked_mul(self.d));
        match n {
            Some(n) if n <= MAX_ELEMENTS => Ok(()),
            _ => Err(Error::Resource(format!("M×(N+1)×d = {}×{}×{} exceeds {MAX_ELEMENTS}", self.paths, self.steps + 1, self.d))),
        }
    }

    pub fn basis_size(&self) -> usize {
        match self.basis {
            BasisKind::Hermite => self.basis_degree,
            BasisKind::Hat => self.hat_cells,
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }
}

/// Brownian increments `[M × N × d]` and positions `[M × (N+1) × d]`, path-major.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub config: SimConfig,
    pub increments: Vec<f64>,
    pub states: Vec<f64>,
}

impl PathEnsemble {
    pub fn paths(&self) -> usize {
        self.config.paths
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    #[inline]
    pub fn state(&self, path: usize, i: usize) -> &[f64] {
        let d = self.config.d;
        let o = (path * (self.config.steps + 1) + i) * d;
        &self.states[o..o + d]
    }

    #[inline]
    pub fn increment(&self, path: usize, i: usize) -> &[f64] {
        let d = self.config.d;
        let o = (path * self.config.steps + i) * d;
        &self.increments[o..o + d]
    }

    /// Identifies the ensemble for consistency checks across solutions.
    pub fn id(&self) -> (u64, usize, usize, usize, u64) {
        let c = &self.config;
        (c.seed, c.d, c.steps, c.paths, c.horizon.to_bits())
    }
}

pub fn simulate_brownian(config: &SimConfig) -> Result<PathEnsemble> {
    config.validate()?;
    let (m, n, d) = (config.paths, config.steps, config.d);
    let sd = config.dt().sqrt();
    let mut increments = vec![0.0; m * n * d];
    increments.par_chunks_mut(2 * n * d).enumerate().for_each(|(j, chunk)| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(j as u64);
        let (a, b) = chunk.split_at_mut(n * d);
        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x = sd * g;
            *y = -sd * g;
        }
    });
    let mut states = vec![0.0; m * (n + 1) * d];
    states.par_chunks_mut((n + 1) * d).zip(increments.par_chunks(n * d)).for_each(|(s, inc)| {
        for i in 0..n {
            for c in 0..d {
                s[(i + 1) * d + c] = s[i * d + c] + inc[i * d + c];
            }
        }
    });
    Ok(PathEnsemble { config: config.clone(), increments, states })
}

/// Mean and standard error from antithetic pair averages.
pub fn pair_mean_se(values: &[f64]) -> (f64, f64) {
    // rescale so squares of large values (ψ can reach 1e200) stay finite
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale > 1e150 && scale.is_finite() {
        let scaled: Vec<f64> = values.iter().map(|v| v / scale).collect();
        let (m, se) = pair_mean_se(&scaled);
        return (m * scale, se * scale);
    }
    let pairs: Vec<f64> = values.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let n = pairs.len() as f64;
    let mean = chunked_sum(&pairs) / n;
    if pairs.len() < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = pairs.iter().map(|p| (p - mean) * (p - mean)).collect();
    let var = chunked_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn chunked_sum(v: &[f64]) -> f64 {
    let parts: Vec<f64> = v.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    parts.iter().sum()
}

/// Probabilists' Hermite polynomials `He_0..He_deg` at `u`.
fn hermite_all(u: f64, deg: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if deg >= 1 {
        out[1] = u;
    }
    for k in 2..=deg {
        out[k] = u * out[k - 1] - (k - 1) as f64 * out[k - 2];
    }
}

/// Multi-indices of total degree ≤ `deg` in `d` variables, graded order.
fn multi_indices(d: usize, deg: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=deg {
        let mut cur = vec![0; d];
        fill(&mut out, &mut cur, 0, total);
    }
    fn fill(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, pos: usize, left: usize) {
        if pos == cur.len() - 1 {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for a in (0..=left).rev() {
            cur[pos] = a;
            fill(out, cur, pos + 1, left - a);
        }
    }
    out
}

/// Least-squares projection onto a basis of the state. Rows are stored
/// sparsely as `nnz` (column, value) pairs per path.
struct Regressor {
    k: usize,
    m: usize,
    nnz: usize,
    idx: Vec<u32>,
    val: Vec<f64>,
    chol: Vec<f64>,
}

impl Regressor {
    /// Hermite polynomials of total degree ≤ `degree` in `b/scale`, where
    /// `cols[k·d..]` holds the state of path `k` and `scale` is `√t`.
    fn hermite(cols: &[f64], d: usize, scale: f64, degree: usize) -> Option<Regressor> {
        let m = cols.len() / d;
        let mi = multi_indices(d, degree);
        let k = mi.len();
        let mut val = vec![0.0; m * k];
        val.par_chunks_mut(k).zip(cols.par_chunks(d)).for_each_init(
            || vec![0.0; (degree + 1) * d],
            |h, (row, b)| {
                for c in 0..d {
                    let u = if degree == 0 { 0.0 } else { b[c] / scale };
                    hermite_all(u, degree, &mut h[c * (degree + 1)..(c + 1) * (degree + 1)]);
                }
                for (r, ix) in row.iter_mut().zip(&mi) {
                    *r = ix.iter().enumerate().map(|(c, &a)| h[c * (degree + 1) + a]).product();
                }
            },
        );
        let idx = (0..m).flat_map(|_| 0..k as u32).collect();
        Regressor::finish(m, k, k, idx, val)
    }

    /// Piecewise-linear hat functions on `cells` quantile cells (d = 1).
    fn hat(cols: &[f64], cells: usize) -> Option<Regressor> {
        let m = cols.len();
        let mut sorted = cols.to_vec();
        sorted.par_sort_unstable_by(f64::total_cmp);
        let mut knots: Vec<f64> = (0..=cells).map(|j| sorted[j * (m - 1) / cells]).collect();
        knots.dedup();
        if knots.len() < 2 {
            return None;
        }
        let k = knots.len();
        let mut idx = vec![0u32; 2 * m];
        let mut val = vec![0.0; 2 * m];
        idx.par_chunks_mut(2).zip(val.par_chunks_mut(2)).zip(cols.par_iter()).for_each(|((ix, v), &b)| {
            let j = knots.partition_point(|&x| x <= b).clamp(1, k - 1) - 1;
            let w = ((b - knots[j]) / (knots[j + 1] - knots[j])).clamp(0.0, 1.0);
            ix[0] = j as u32;
            ix[1] = j as u32 + 1;
            v[0] = 1.0 - w;
            v[1] = w;
        });
        Regressor::finish(m, k, 2, idx, val)
    }

    fn finish(m: usize, k: usize, nnz: usize, idx: Vec<u32>, val: Vec<f64>) -> Option<Regressor> {
        let parts: Vec<Vec<f64>> = idx
            .par_chunks(CHUNK * nnz)
            .zip(val.par_chunks(CHUNK * nnz))
            .map(|(ib, vb)| {
                let mut g = vec![0.0; k * k];
                for (ir, vr) in ib.chunks(nnz).zip(vb.chunks(nnz)) {
                    for a in 0..nnz {
                        for b in 0..nnz {
                            g[ir[a] as usize * k + ir[b] as usize] += vr[a] * vr[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut g = vec![0.0; k * k];
        for p in &parts {
            for (x, y) in g.iter_mut().zip(p) {
                *x += y;
            }
        }
        let chol = cholesky(&g, k)?;
        Some(Regressor { k, m, nnz, idx, val, chol })
    }

    /// Fitted values of the projection of `y` (length M).
    fn project(&self, y: &[f64]) -> Vec<f64> {
        let (k, nnz) = (self.k, self.nnz);
        let parts: Vec<Vec<f64>> = self
            .idx
            .par_chunks(CHUNK * nnz)
            .zip(self.val.par_chunks(CHUNK * nnz))
            .zip(y.par_chunks(CHUNK))
            .map(|((ib, vb), ys)| {
                let mut r = vec![0.0; k];
                for ((ir, vr), &v) in ib.chunks(nnz).zip(vb.chunks(nnz)).zip(ys) {
                    for a in 0..nnz {
                        r[ir[a] as usize] += vr[a] * v;
                    }
                }
                r
            })
            .collect();
        let mut rhs = vec![0.0; k];
        for p in &parts {
            for (x, y) in rhs.iter_mut().zip(p) {
                *x += y;
            }
        }
        let coef = chol_solve(&self.chol, k, &rhs);
        let mut out = vec![0.0; self.m];
        out.par_iter_mut().zip(self.idx.par_chunks(nnz).zip(self.val.par_chunks(nnz))).for_each(|(o, (ir, vr))| {
            *o = ir.iter().zip(vr).map(|(&a, b)| coef[a as usize] * b).sum();
        });
        out
    }
}

/// Builds the configured basis at step `i`, lowering the degree (or halving
/// the cell count) while the design is singular. Returns the size used.
fn build_regressor(cfg: &SimConfig, cols: &[f64], i: usize) -> Result<(Regressor, usize)> {
    if i == 0 {
        return Ok((Regressor::hermite(cols, cfg.d, 1.0, 0).expect("constant design"), 0));
    }
    let t = cfg.time(i);
    let mut size = cfg.basis_size();
    loop {
        let r = match cfg.basis {
            BasisKind::Hermite => Regressor::hermite(cols, cfg.d, t.sqrt(), size),
            BasisKind::Hat => Regressor::hat(cols, size),
        };
        if let Some(r) = r {
            return Ok((r, size));
        }
        size = match cfg.basis {
            BasisKind::Hermite if size > 0 => size - 1,
            BasisKind::Hat if size > 1 => size / 2,
            _ => return Err(Error::Numerical(format!("singular regression design at step {i}"))),
        };
    }
}

/// Lower Cholesky factor of the symmetric matrix whose lower triangle is in `g`.
/// `None` when a pivot falls below `1e−12` of the largest diagonal entry.
fn cholesky(g: &[f64], k: usize) -> Option<Vec<f64>> {
    let dmax = (0..k).map(|i| g[i * k + i]).fold(0.0f64, f64::max);
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = g[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if !(s > 1e-12 * dmax) {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..k {
        for p in 0..i {
            y[i] -= l[i * k + p] * y[p];
        }
        y[i] /= l[i * k + i];
    }
    for i in (0..k).rev() {
        for p in i + 1..k {
            y[i] -= l[p * k + i] * y[p];
        }
        y[i] /= l[i * k + i];
    }
    y
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub y0: f64,
    pub y0_se: f64,
    pub z_clamps: usize,
    /// Steps where the regression design was singular and a lower degree was used.
    pub degree_fallbacks: Vec<(usize, usize)>,
    pub picard_max_iters: usize,
    /// Max over steps and paths of |Y_i − Ŷ_i − g(Y_i, Z_i)Δt| / (1 + |Y_i|).
    pub residual_max: f64,
}

impl SolveDiagnostics {
    /// Runs with clamped Z are not certifying.
    pub fn certifying(&self) -> bool {
        self.z_clamps == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub generator: String,
    pub terminal: String,
    pub truncation: Option<(f64, f64)>,
    pub config: SimConfig,
    pub limit: bool,
}

/// `y` is time-major: `y[i·M + k]` is `Y_{t_i}` on path `k`; `z[(i·M + k)·d + c]`.
#[derive(Clone, Debug)]
pub struct BsdeSolution {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub meta: SolutionMeta,
    pub diagnostics: SolveDiagnostics,
    pub ensemble_id: (u64, usize, usize, usize, u64),
    /// Per-path contributions whose mean is `Y_0`; used for standard errors.
    pub y0_samples: Vec<f64>,
}

impl BsdeSolution {
    pub fn paths(&self) -> usize {
        self.meta.config.paths
    }

    pub fn steps(&self) -> usize {
        self.meta.config.steps
    }

    #[inline]
    pub fn y_at(&self, path: usize, i: usize) -> f64 {
        self.y[i * self.paths() + path]
    }

    pub fn y_column(&self, i: usize) -> &[f64] {
        let m = self.paths();
        &self.y[i * m..(i + 1) * m]
    }

    #[inline]
    pub fn z_at(&self, path: usize, i: usize) -> &[f64] {
        let d = self.meta.config.d;
        let o = (i * self.paths() + path) * d;
        &self.z[o..o + d]
    }

    pub fn y0(&self) -> f64 {
        self.diagnostics.y0
    }

    pub fn y0_se(&self) -> f64 {
        self.diagnostics.y0_se
    }
}

fn gather_states(ens: &PathEnsemble, i: usize) -> Vec<f64> {
    let d = ens.config.d;
    let mut out = vec![0.0; ens.paths() * d];
    out.par_chunks_mut(d).enumerate().for_each(|(k, o)| o.copy_from_slice(ens.state(k, i)));
    out
}

fn bracket_root(f: &impl Fn(f64) -> f64, y: f64, fy: f64) -> Option<(f64, f64, f64, f64)> {
    if !fy.is_finite() {
        return None;
    }
    let dir = fy.signum();
    let mut h = fy.abs().max(1e-8 * (1.0 + y.abs()));
    let (mut lo, mut flo) = (y, fy);
    for _ in 0..80 {
        let hi = y + dir * h;
        let fhi = f(hi);
        if !fhi.is_finite() {
            return None;
        }
        if fhi.signum() != flo.signum() {
            return Some((lo, flo, hi, fhi));
        }
        (lo, flo) = (hi, fhi);
        h *= 2.0;
    }
    None
}

fn illinois(f: &impl Fn(f64) -> f64, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64, tol: f64) -> Option<(f64, usize)> {
    let mut side = 0;
    for it in 1..=200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc.abs() <= tol * (1.0 + c.abs()) || (b - a).abs() <= 4.0 * f64::EPSILON * (1.0 + c.abs()) {
            return Some((c, it));
        }
        if fc.signum() == fb.signum() {
            (b, fb) = (c, fc);
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            (a, fa) = (c, fc);
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    None
}

fn rms(v: &[f64]) -> f64 {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    (chunked_sum(&sq) / v.len() as f64).sqrt()
}

/// Backward recursion: `Z_i = E_i[(Y_{i+1} − Ŷ_i)ΔB_i]/Δt` with `Ŷ_i = E_i[Y_{i+1}]`, and
/// `Y_i = Ŷ_i + g(t_i, B_i, Y_i, Z_i)Δt` solved by Picard iteration with
/// secant acceleration (bracketed Illinois as a fallback).
pub fn solve_bsde(g: &GeneratorModel, xi: &TerminalModel, ens: &PathEnsemble) -> Result<BsdeSolution> {
    solve_tagged(g, xi, ens, None)
}

fn solve_tagged(g: &GeneratorModel, xi: &TerminalModel, ens: &PathEnsemble, truncation: Option<(f64, f64)>) -> Result<BsdeSolution> {
    let cfg = &ens.config;
    cfg.validate()?;
    let (m, n, d) = (cfg.paths, cfg.steps, cfg.d);
    let dt = cfg.dt();
    let mut y = vec![0.0; m * (n + 1)];
    let mut z = vec![0.0; m * n * d];
    let mut diag = SolveDiagnostics::default();

    y[n * m..].par_iter_mut().enumerate().for_each(|(k, v)| *v = xi.eval(ens.state(k, n)));
    if let Some(k) = y[n * m..].iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("terminal value not finite on path {k}")));
    }
    let mut y0_samples = Vec::new();

    for i in (0..n).rev() {
        let t = cfg.time(i);
        let cols = gather_states(ens, i);
        let (reg, used) = build_regressor(cfg, &cols, i)?;
        if i > 0 && used < cfg.basis_size() {
            diag.degree_fallbacks.push((i, used));
        }
        let next_vals = y[(i + 1) * m..(i + 2) * m].to_vec();
        let y_hat = reg.project(&next_vals);
        let mut zi = vec![0.0; m * d];
        for c in 0..d {
            // Ŷ is F_{t_i}-measurable, so subtracting it leaves the conditional mean unchanged
            let target: Vec<f64> = (0..m).map(|k| (next_vals[k] - y_hat[k]) * ens.increment(k, i)[c] / dt).collect();
            let fit = reg.project(&target);
            for k in 0..m {
                zi[k * d + c] = fit[k];
            }
        }
        let clip = cfg.z_clip;
        let clamps: usize = zi
            .par_chunks_mut(CHUNK)
            .map(|ch| {
                let mut c = 0;
                for v in ch.iter_mut() {
                    if v.abs() > clip {
                        *v = v.clamp(-clip, clip);
                        c += 1;
                    }
                }
                c
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        diag.z_clamps += clamps;

        let iters = cfg.picard_iters;
        let tol = cfg.picard_tol;
        let solved: Vec<(f64, f64, usize, bool)> = (0..m)
            .into_par_iter()
            .map(|k| {
                let b = ens.state(k, i);
                let zk = &zi[k * d..(k + 1) * d];
                // F(y) = Ŷ + g(y)Δt − y; Picard steps, switched to secant steps
                // whenever those reduce |F|.
                let f = |y: f64| y_hat[k] + g.eval(t, b, y, zk) * dt - y;
                let small = |y: f64, fy: f64| fy.abs() <= tol * (1.0 + y.abs());
                let (mut ya, mut fa) = (y_hat[k], f(y_hat[k]));
                if small(ya, fa) {
                    return (ya, g.eval(t, b, ya, zk), 1, true);
                }
                let mut yb = ya + fa;
                let mut fb = f(yb);
                for it in 2..=iters {
                    if small(yb, fb) {
                        return (yb, g.eval(t, b, yb, zk), it, true);
                    }
                    let den = fb - fa;
                    let picard = yb + fb;
                    let (mut ny, mut nf) = (picard, f(picard));
                    if den != 0.0 {
                        let cand = yb - fb * (yb - ya) / den;
                        let fc = f(cand);
                        if fc.is_finite() && fc.abs() < nf.abs() {
                            (ny, nf) = (cand, fc);
                        }
                    }
                    (ya, fa, yb, fb) = (yb, fb, ny, nf);
                }
                if small(yb, fb) {
                    return (yb, g.eval(t, b, yb, zk), iters, true);
                }
                // kinks (truncation, y log|y| at 0) can stall both; bracket and use Illinois
                match bracket_root(&f, yb, fb).and_then(|(lo, flo, hi, fhi)| illinois(&f, lo, flo, hi, fhi, tol)) {
                    Some((yr, used)) => (yr, g.eval(t, b, yr, zk), iters + used, true),
                    None => (yb, g.eval(t, b, yb, zk), iters, false),
                }
            })
            .collect();
        if let Some((k, s)) = solved.iter().enumerate().find(|(_, s)| !s.3 || !s.0.is_finite()) {
            return Err(Error::PicardDivergence { step: i, residual: (s.0 - y_hat[k] - s.1 * dt).abs() });
        }
        diag.picard_max_iters = diag.picard_max_iters.max(solved.iter().map(|s| s.2).max().unwrap_or(0));

        if i == 0 {
            // Y_0 is constant across paths; the per-path version of the step gives its SE.
            y0_samples = (0..m).map(|k| next_vals[k] + solved[k].1 * dt).collect();
        }

        let r = (0..m).map(|k| (solved[k].0 - y_hat[k] - solved[k].1 * dt).abs() / (1.0 + solved[k].0.abs())).fold(0.0, f64::max);
        diag.residual_max = diag.residual_max.max(r);
        let yi: Vec<f64> = solved.iter().map(|s| s.0).collect();

        y[i * m..(i + 1) * m].copy_from_slice(&yi);
        z[i * m * d..(i + 1) * m * d].copy_from_slice(&zi);
    }

    let (_, se) = pair_mean_se(&y0_samples);
    diag.y0 = y[0];
    diag.y0_se = se;
    Ok(BsdeSolution {
        y,
        z,
        meta: SolutionMeta { generator: g.tag.clone(), terminal: xi.tag.clone(), truncation, config: cfg.clone(), limit: false },
        diagnostics: diag,
        ensemble_id: ens.id(),
        y0_samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub diff: f64,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub schedule: Vec<(f64, f64)>,
    pub y0: Vec<f64>,
    pub se: Vec<f64>,
    /// Pairs checked for `Y^{n',p} ≥ Y^{n,p}` (n' > n) and `Y^{n,p'} ≤ Y^{n,p}` (p' > p).
    pub comparisons: usize,
    pub violations: Vec<MonotonicityViolation>,
    /// `|Y_0|` differences along the diagonal `n = p`, in schedule order.
    pub diagonal_differences: Vec<f64>,
}

impl MonotonicityReport {
    pub fn monotone(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn differences_decreasing(&self) -> bool {
        self.diagonal_differences.windows(2).all(|w| w[1] < w[0])
    }
}

/// Pooled standard error of the difference of two members' `Y_0`.
fn pooled_se(a: &BsdeSolution, b: &BsdeSolution) -> f64 {
    (a.y0_se().powi(2) + b.y0_se().powi(2)).sqrt()
}

/// Solves `BSDE(ξ^{n,p}, g^{n,p})` for every schedule entry on one shared ensemble.
pub fn solve_truncated_family(g: &GeneratorModel, xi: &TerminalModel, ens: &PathEnsemble, schedule: &[(f64, f64)]) -> Result<(Vec<BsdeSolution>, MonotonicityReport)> {
    if schedule.is_empty() {
        return Err(invalid("empty truncation schedule"));
    }
    let mut family = Vec::with_capacity(schedule.len());
    for &(n, p) in schedule {
        let gt = truncate(g, n, p)?;
        let xt = truncate_terminal(xi, n, p)?;
        family.push(solve_tagged(&gt, &xt, ens, Some((n, p)))?);
    }
    let mut rep = MonotonicityReport {
        schedule: schedule.to_vec(),
        y0: family.iter().map(|s| s.y0()).collect(),
        se: family.iter().map(|s| s.y0_se()).collect(),
        comparisons: 0,
        violations: Vec::new(),
        diagonal_differences: Vec::new(),
    };
    for (a, &(na, pa)) in schedule.iter().enumerate() {
        // nearest larger n with the same p, and nearest larger p with the same n
        let up_n = schedule.iter().enumerate().filter(|(_, s)| s.1 == pa && s.0 > na).min_by(|x, y| x.1 .0.total_cmp(&y.1 .0));
        let up_p = schedule.iter().enumerate().filter(|(_, s)| s.0 == na && s.1 > pa).min_by(|x, y| x.1 .1.total_cmp(&y.1 .1));
        if let Some((b, &s)) = up_n {
            let tol = 3.0 * pooled_se(&family[a], &family[b]);
            let diff = family[b].y0() - family[a].y0();
            rep.comparisons += 1;
            if diff < -tol {
                rep.violations.push(MonotonicityViolation { from: (na, pa), to: s, diff, tol });
            }
        }
        if let Some((b, &s)) = up_p {
            let tol = 3.0 * pooled_se(&family[a], &family[b]);
            let diff = family[b].y0() - family[a].y0();
            rep.comparisons += 1;
            if diff > tol {
                rep.violations.push(MonotonicityViolation { from: (na, pa), to: s, diff, tol });
            }
        }
    }
    let diag: Vec<f64> = schedule.iter().zip(&rep.y0).filter(|(s, _)| s.0 == s.1).map(|(_, &y)| y).collect();
    rep.diagonal_differences = diag.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok((family, rep))
}

/// Pathwise `Y := inf_p sup_n Y^{n,p}` over the schedule grid; `Z` from the
/// member with the largest `(n, p)`.
pub fn monotone_limit(family: &[BsdeSolution], schedule: &[(f64, f64)]) -> Result<BsdeSolution> {
    if family.is_empty() || family.len() != schedule.len() {
        return Err(invalid("family and schedule must be non-empty and of equal length"));
    }
    let id = family[0].ensemble_id;
    if family.iter().any(|s| s.ensemble_id != id || s.y.len() != family[0].y.len()) {
        return Err(invalid("family members were solved on different ensembles"));
    }
    let mut ps: Vec<f64> = schedule.iter().map(|s| s.1).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let len = family[0].y.len();
    let mut y = vec![f64::INFINITY; len];
    for &p in &ps {
        let members: Vec<&BsdeSolution> = schedule.iter().zip(family).filter(|(s, _)| s.1 == p).map(|(_, f)| f).collect();
        y.par_iter_mut().enumerate().for_each(|(j, v)| {
            let sup = members.iter().map(|f| f.y[j]).fold(f64::NEG_INFINITY, f64::max);
            *v = v.min(sup);
        });
    }
    let top = (0..schedule.len()).max_by(|&a, &b| schedule[a].0.total_cmp(&schedule[b].0).then(schedule[a].1.total_cmp(&schedule[b].1))).unwrap();
    let base = &family[top];
    let m = base.paths();
    // per-path Y_0 samples follow the same inf-sup
    let mut y0s = vec![f64::INFINITY; m];
    for &p in &ps {
        for k in 0..m {
            let sup = schedule.iter().zip(family).filter(|(s, _)| s.1 == p).map(|(_, f)| f.y0_samples[k]).fold(f64::NEG_INFINITY, f64::max);
            y0s[k] = y0s[k].min(sup);
        }
    }
    let (_, se) = pair_mean_se(&y0s);
    let mut diagnostics = base.diagnostics.clone();
    diagnostics.y0 = y[0];
    diagnostics.y0_se = se;
    diagnostics.z_clamps = family.iter().map(|f| f.diagnostics.z_clamps).sum();
    Ok(BsdeSolution {
        y,
        z: base.z.clone(),
        meta: SolutionMeta { truncation: None, limit: true, ..base.meta.clone() },
        diagnostics,
        ensemble_id: id,
        y0_samples: y0s,
    })
}

/// Conditional-mean residual of the discrete equation
/// `Y_i − Y_{i+1} − g(t_i, B_i, Y_i, Z_i)Δt + Z_i·ΔB_i`, estimated by
/// regression on the solver basis. Returns the max over steps of its RMS
/// relative to `1 + RMS(Y_i)`.
pub fn discrete_residual(sol: &BsdeSolution, g: &GeneratorModel, ens: &PathEnsemble) -> Result<f64> {
    if sol.ensemble_id != ens.id() {
        return Err(invalid("solution was not computed on this ensemble"));
    }
    let cfg = &ens.config;
    let (m, n) = (cfg.paths, cfg.steps);
    let dt = cfg.dt();
    let mut worst: f64 = 0.0;
    for i in 1..n {
        let t = cfg.time(i);
        let cols = gather_states(ens, i);
        let (reg, _) = build_regressor(cfg, &cols, i)?;
        let r: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|k| {
                let zk = sol.z_at(k, i);
                let zb: f64 = zk.iter().zip(ens.increment(k, i)).map(|(a, b)| a * b).sum();
                sol.y_at(k, i) - sol.y_at(k, i + 1) - g.eval(t, ens.state(k, i), sol.y_at(k, i), zk) * dt + zb
            })
            .collect();
        worst = worst.max(rms(&reg.project(&r)) / (1.0 + rms(sol.y_column(i))));
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalNorms {
    pub sp_norm: f64,
    pub mp_norm: f64,
    /// `max_i mean_k ψ(|Y_i^k|, μ(t_i))`, or NaN when no `(ψ, μ)` is given.
    pub class_d_proxy: f64,
}

pub fn empirical_norms(sol: &BsdeSolution, p: f64, class_d: Option<(&(dyn Fn(f64, f64) -> f64 + Sync), &(dyn Fn(f64) -> f64 + Sync))>) -> Result<EmpiricalNorms> {
    if !(p >= 1.0) {
        return Err(invalid(format!("norm exponent must be ≥ 1, got {p}")));
    }
    let cfg = &sol.meta.config;
    let (m, n) = (cfg.paths, cfg.steps);
    let dt = cfg.dt();
    let sp: Vec<f64> = (0..m).into_par_iter().map(|k| (0..=n).map(|i| sol.y_at(k, i).abs()).fold(0.0, f64::max).powf(p)).collect();
    let mp: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|k| {
            let qv: f64 = (0..n).map(|i| sol.z_at(k, i).iter().map(|x| x * x).sum::<f64>() * dt).sum();
            qv.powf(p / 2.0)
        })
        .collect();
    let class_d_proxy = match class_d {
        Some((psi, mu)) => (0..=n)
            .map(|i| {
                let mu_t = mu(cfg.time(i));
                let v: Vec<f64> = sol.y_column(i).par_iter().map(|y| psi(y.abs(), mu_t)).collect();
                chunked_sum(&v) / m as f64
            })
            .fold(f64::NEG_INFINITY, f64::max),
        None => f64::NAN,
    };
    Ok(EmpiricalNorms { sp_norm: (chunked_sum(&sp) / m as f64).powf(1.0 / p), mp_norm: (chunked_sum(&mp) / m as f64).powf(1.0 / p), class_d_proxy })
}

/// Columnar CSV `t,path_id,Y,Z1..Zd` for the first `max_paths` paths. `Z` is
/// empty at `t = T`.
pub fn write_solution_csv(sol: &BsdeSolution, path: &Path, max_paths: usize) -> Result<()> {
    let cfg = &sol.meta.config;
    let d = cfg.d;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "t,path_id,Y")?;
    for c in 1..=d {
        write!(w, ",Z{c}")?;
    }
    writeln!(w)?;
    for i in 0..=cfg.steps {
        let t = cfg.time(i);
        for k in 0..sol.paths().min(max_paths) {
            write!(w, "{t},{k},{}", sol.y_at(k, i))?;
            for c in 0..d {
                if i < cfg.steps {
                    write!(w, ",{}", sol.z_at(k, i)[c])?;
                } else {
                    write!(w, ",")?;
                }
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub meta: SolutionMeta,
    pub diagnostics: SolveDiagnostics,
    pub certifying: bool,
    pub norms_p2: EmpiricalNorms,
}

impl SolutionSummary {
    pub fn of(sol: &BsdeSolution) -> Result<SolutionSummary> {
        Ok(SolutionSummary { meta: sol.meta.clone(), diagnostics: sol.diagnostics.clone(), certifying: sol.diagnostics.certifying(), norms_p2: empirical_norms(sol, 2.0, None)? })
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(1, 6).len(), 7);
        assert_eq!(multi_indices(2, 6).len(), 28);
        assert_eq!(multi_indices(2, 1), vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn hermite_recurrence() {
        let mut h = [0.0; 5];
        hermite_all(2.0, 4, &mut h);
        assert_eq!(h, [1.0, 2.0, 3.0, 2.0, -5.0]);
    }

    #[test]
    fn cholesky_solves_spd() {
        let g = [4.0, 0.0, 2.0, 3.0];
        let l = cholesky(&g, 2).unwrap();
        let x = chol_solve(&l, 2, &[2.0, 4.0]);
        // [[4,2],[2,3]] x = [2,4]
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 4.0).abs() < 1e-14);
        assert!(cholesky(&[1.0, 0.0, 1.0, 1.0], 2).is_none());
    }

    #[test]
    fn pair_se_of_constant_pairs_is_zero() {
        let v = [1.0, 3.0, 0.0, 4.0, 2.5, 1.5];
        let (m, se) = pair_mean_se(&v);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }
}
