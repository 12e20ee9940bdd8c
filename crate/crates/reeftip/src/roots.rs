//! Scalar root finding and maximisation on brackets.

/// Safeguarded Newton on a sign-changing bracket `[a, b]`.
///
/// Falls back to bisection whenever the Newton iterate leaves the bracket or
/// fails to halve the residual. Returns `None` if `f(a)` and `f(b)` share a sign.
pub fn newton_bracketed<F, D>(f: F, df: D, mut a: f64, mut b: f64, xtol: f64) -> Option<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let mut x = 0.5 * (a + b);
    let mut fx = f(x);
    for _ in 0..200 {
        if fx == 0.0 {
            return Some(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let dfx = df(x);
        let newton = x - fx / dfx;
        let next = if dfx.is_finite() && dfx != 0.0 && newton > a.min(b) && newton < a.max(b) {
            newton
        } else {
            0.5 * (a + b)
        };
        let fnext = f(next);
        let (x_new, f_new) = if fnext.abs() > 0.5 * fx.abs() && next != 0.5 * (a + b) {
            let mid = 0.5 * (a + b);
            (mid, f(mid))
        } else {
            (next, fnext)
        };
        let step = (x_new - x).abs();
        x = x_new;
        fx = f_new;
        if step <= xtol * (1.0 + x.abs()) || (b - a).abs() <= xtol * (1.0 + x.abs()) {
            if fx != 0.0 && (b - a).abs() > 4.0 * xtol * (1.0 + x.abs()) {
                continue;
            }
            return Some(x);
        }
    }
    Some(x)
}

/// Plain bisection; used where no derivative is at hand.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= xtol || m == a || m == b {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Golden-section search for the maximiser of a unimodal `f` on `[a, b]`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > xtol * (1.0 + a.abs()) {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

/// `0` followed by `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (l0, l1) = (lo.ln(), hi.ln());
    std::iter::once(0.0)
        .chain((0..n).map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// Every sign-change bracket of `f` along `grid`.
pub fn sign_brackets<F: Fn(f64) -> f64>(f: F, grid: &[f64]) -> Vec<(f64, f64)> {
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let mut out = Vec::new();
    for i in 0..grid.len() - 1 {
        let (a, b) = (vals[i], vals[i + 1]);
        if a == 0.0 {
            out.push((grid[i], grid[i]));
        } else if a.signum() != b.signum() && b != 0.0 && a.is_finite() && b.is_finite() {
            out.push((grid[i], grid[i + 1]));
        }
    }
    if vals.last() == Some(&0.0) {
        let x = *grid.last().unwrap();
        out.push((x, x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_finds_sqrt2() {
        let r = newton_bracketed(|x| x * x - 2.0, |x| 2.0 * x, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn newton_survives_flat_derivative() {
        let r = newton_bracketed(|x: f64| x.powi(3), |_| 0.0, -1.0, 2.0, 1e-14).unwrap();
        assert!(r.abs() < 1e-4);
    }

    #[test]
    fn newton_rejects_unbracketed() {
        assert!(newton_bracketed(|x| x * x + 1.0, |x| 2.0 * x, -1.0, 1.0, 1e-12).is_none());
    }

    #[test]
    fn golden_finds_peak() {
        let x = golden_max(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
    }

    #[test]
    fn brackets_cover_all_roots() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let b = sign_brackets(|x| (x - 1.05) * (x - 4.55) * (x - 7.15), &grid);
        assert_eq!(b.len(), 3);
    }
}
