//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 50;

/// `int_a^b f` to absolute tolerance `tol`. The interval is first split into
/// `panels` pieces so that narrow peaks are not stepped over.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let tol = tol / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + h * k as f64;
            let hi = if k + 1 == panels { b } else { lo + h };
            let (flo, fhi, fmid) = (f(lo), f(hi), f(0.5 * (lo + hi)));
            let whole = simpson(lo, hi, flo, fmid, fhi);
            refine(&f, lo, hi, flo, fmid, fhi, whole, tol, MAX_DEPTH)
        })
        .sum()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_exponentials() {
        assert!((integrate(|x| x * x * x, 0.0, 2.0, 1e-12, 1) - 4.0).abs() < 1e-12);
        let e = integrate(|x| (-x).exp(), 0.0, 40.0, 1e-12, 8);
        assert!((e - (1.0 - (-40.0f64).exp())).abs() < 1e-11);
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-9, 4), 0.0);
    }

    #[test]
    fn narrow_peak() {
        let s = 1e-3;
        let g = |x: f64| (-(x - 0.3).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        assert!((integrate(g, 0.0, 1.0, 1e-11, 64) - 1.0).abs() < 1e-9);
    }
}
