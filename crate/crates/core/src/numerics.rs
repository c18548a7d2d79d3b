//! Small numerical kernels shared by the modules: a grid-then-golden-section
//! sup engine, fixed-step RK4 and cubic Hermite interpolation.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximise a unimodal `f` on `[a, b]` by golden-section search.
/// Returns `(argmax, max)`.
pub fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid search on `n` equispaced points of `[lo, hi]` followed by golden-section
/// refinement on the bracket around the best grid point.
pub fn grid_sup<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    assert!(n >= 3 && hi > lo);
    let h = (hi - lo) / (n - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    let mut best_i = 0;
    for i in 0..n {
        let u = lo + h * i as f64;
        let v = f(u);
        if v > best.1 {
            best = (u, v);
            best_i = i;
        }
    }
    let a = lo + h * best_i.saturating_sub(1) as f64;
    let b = (lo + h * (best_i + 1) as f64).min(hi);
    let tol = 1e-13 * (1.0 + best.0.abs());
    let refined = golden_max(f, a, b, tol);
    if refined.1 > best.1 {
        refined
    } else {
        best
    }
}

/// Supremum of `f` over `[l0, ∞)`, assuming `f → −∞` (or stays bounded) at infinity.
/// Searches in `v = ln(L / l0)` and widens the window while the maximiser sits
/// on its upper edge.
pub fn sup_half_line<F: Fn(f64) -> f64>(f: &F, l0: f64) -> f64 {
    assert!(l0 > 0.0);
    let g = |v: f64| f(l0 * v.exp());
    let mut width = 40.0;
    loop {
        let (v, val) = grid_sup(&g, 0.0, width, 10_000);
        if v < width * (1.0 - 2e-4) || width >= 640.0 {
            return val.max(f(l0));
        }
        width *= 2.0;
    }
}

/// One classical RK4 step for an `N`-dimensional autonomous-in-form system `y' = rhs(t, y)`.
pub fn rk4_step<const N: usize, F>(rhs: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let add = |a: &[f64; N], k: &[f64; N], s: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &add(y, &k1, 0.5 * h));
    let k3 = rhs(t + 0.5 * h, &add(y, &k2, 0.5 * h));
    let k4 = rhs(t + h, &add(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Cubic Hermite interpolation on `[x0, x1]` given values and slopes at both ends.
/// Returns `(value, derivative)` at `x`.
pub fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> (f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let v = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = (6.0 * t2 - 6.0 * t) / h;
    let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
    let dh01 = (-6.0 * t2 + 6.0 * t) / h;
    let dh11 = 3.0 * t2 - 2.0 * t;
    let dv = dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1;
    (v, dv)
}

/// Quintic Hermite interpolant from values, first and second derivatives at both
/// ends. Returns `(value, derivative)`.
#[allow(clippy::too_many_arguments)]
pub fn hermite5(x0: f64, x1: f64, y: [f64; 2], d: [f64; 2], dd: [f64; 2], x: f64) -> (f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5;
    let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h3 = 0.5 * t3 - t4 + 0.5 * t5;
    let v = h0 * y[0] + h5 * y[1] + h * (h1 * d[0] + h4 * d[1]) + h * h * (h2 * dd[0] + h3 * dd[1]);
    let g0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
    let g1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
    let g2 = t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4;
    let g4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
    let g3 = 1.5 * t2 - 4.0 * t3 + 2.5 * t4;
    let dv = g0 * (y[0] - y[1]) / h + g1 * d[0] + g4 * d[1] + h * (g2 * dd[0] + g3 * dd[1]);
    (v, dv)
}

/// `n` points log-spaced on `[lo, hi]`, both ends included.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Bisection for a sign change of `f` on `[a, b]`.
pub fn bisect<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..300 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol {
            return m;
        }
        let fm = f(m);
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(&|x: f64| -(x - 0.3).powi(2) + 2.0, -1.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn half_line_widens_window() {
        // max of L - L^1.01 / 2 is far out
        let f = |l: f64| l.powf(0.5) - 1e-3 * l;
        let v = sup_half_line(&f, 1.0);
        assert!((v - 250.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn hermite_is_exact_on_cubics() {
        let p = |x: f64| x * x * x - 2.0 * x + 1.0;
        let dp = |x: f64| 3.0 * x * x - 2.0;
        let (v, d) = hermite(0.5, 1.5, p(0.5), p(1.5), dp(0.5), dp(1.5), 0.9);
        assert!((v - p(0.9)).abs() < 1e-14);
        assert!((d - dp(0.9)).abs() < 1e-13);
    }

    #[test]
    fn hermite5_exact_on_quintics() {
        let p = |x: f64| 1.0 - 2.0 * x + 0.5 * x.powi(3) + 0.3 * x.powi(5);
        let dp = |x: f64| -2.0 + 1.5 * x * x + 1.5 * x.powi(4);
        let ddp = |x: f64| 3.0 * x + 6.0 * x.powi(3);
        let (a, b) = (0.3, 1.1);
        for &x in &[0.3, 0.5, 0.77, 1.1] {
            let (v, dv) = hermite5(a, b, [p(a), p(b)], [dp(a), dp(b)], [ddp(a), ddp(b)], x);
            assert!((v - p(x)).abs() < 1e-13 && (dv - dp(x)).abs() < 1e-12);
        }
    }
}
