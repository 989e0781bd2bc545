//! Bracketed scalar root finding.

/// Newton iteration safeguarded by bisection. `f` returns (value, slope);
/// the bracket [a, b] must contain a sign change.
pub fn newton_bisect<F: FnMut(f64) -> (f64, f64)>(mut f: F, a: f64, b: f64, xtol: f64) -> f64 {
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let (flo, _) = f(lo);
    let (fhi, _) = f(hi);
    if flo == 0.0 {
        return lo;
    }
    if fhi == 0.0 {
        return hi;
    }
    debug_assert!(flo.signum() != fhi.signum(), "root not bracketed on [{lo}, {hi}]");
    let rising = fhi > flo;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx > 0.0) == rising {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = (next - x).abs();
        x = next;
        if step <= xtol * x.abs().max(1e-300) || hi - lo <= xtol * x.abs() {
            break;
        }
    }
    x
}

/// Plain bisection on a monotone predicate: returns the boundary between
/// `pred == false` (at a) and `pred == true` (at b).
pub fn bisect<P: FnMut(f64) -> bool>(mut pred: P, a: f64, b: f64, xtol: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    while (hi - lo).abs() > xtol * hi.abs().max(lo.abs()).max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_square_root_of_two() {
        let x = newton_bisect(|x| (x * x - 2.0, 2.0 * x), 0.0, 2.0, 1e-15);
        assert!((x - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn survives_a_flat_start() {
        let x = newton_bisect(|x| ((x - 1.0).powi(3), 3.0 * (x - 1.0).powi(2)), -3.0, 2.0, 1e-13);
        assert!((x - 1.0).abs() < 1e-4);
        let y = bisect(|x| x > 0.3, 0.0, 1.0, 1e-14);
        assert!((y - 0.3).abs() < 1e-13);
    }
}
