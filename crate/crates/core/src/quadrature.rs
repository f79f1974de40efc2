//! Globally adaptive Gauss-Kronrod (7/15) quadrature in one and two dimensions.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub converged: bool,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrate `f` over `[a, b]`; either bound may be infinite.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> QuadResult {
    if a == b {
        return QuadResult {
            value: 0.0,
            abs_error: 0.0,
            converged: true,
        };
    }
    if a > b {
        let r = integrate(f, b, a, abs_tol, rel_tol);
        return QuadResult { value: -r.value, ..r };
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adaptive(&mut f, a, b, abs_tol, rel_tol),
        (false, false) => adaptive(
            &mut |t: f64| {
                let u = 1.0 - t * t;
                let x = t / u;
                let w = (1.0 + t * t) / (u * u);
                nan_to_zero(f(x) * w)
            },
            -1.0,
            1.0,
            abs_tol,
            rel_tol,
        ),
        (true, false) => adaptive(
            &mut |t: f64| {
                let x = a + t / (1.0 - t);
                let w = 1.0 / ((1.0 - t) * (1.0 - t));
                nan_to_zero(f(x) * w)
            },
            0.0,
            1.0,
            abs_tol,
            rel_tol,
        ),
        (false, true) => adaptive(
            &mut |t: f64| {
                let x = b - t / (1.0 - t);
                let w = 1.0 / ((1.0 - t) * (1.0 - t));
                nan_to_zero(f(x) * w)
            },
            0.0,
            1.0,
            abs_tol,
            rel_tol,
        ),
    }
}

// At the transformed endpoints `0 * inf` shows up; infinite values are kept so that
// divergent integrals surface instead of being truncated.
fn nan_to_zero(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v
    }
}

const MAX_INTERVALS: usize = 4000;

fn adaptive<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> QuadResult {
    // Seed with a uniform split so narrow peaks are not missed by the first rule.
    let n0 = 16;
    let mut intervals: Vec<(f64, f64, f64, f64)> = (0..n0)
        .map(|i| {
            let lo = a + (b - a) * i as f64 / n0 as f64;
            let hi = a + (b - a) * (i + 1) as f64 / n0 as f64;
            let (v, e) = gk15(f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    loop {
        let value: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        let tol = abs_tol.max(rel_tol * value.abs());
        if err <= tol || intervals.len() >= MAX_INTERVALS {
            return QuadResult {
                value,
                abs_error: err,
                converged: err <= tol,
            };
        }
        let (idx, _) =
            intervals.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |best, (i, iv)| if iv.3 > best.1 { (i, iv.3) } else { best },
            );
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return QuadResult {
                value,
                abs_error: err,
                converged: false,
            };
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Iterated integral of `f(x, y)` over a rectangle (bounds may be infinite).
pub fn integrate_2d<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    x_range: (f64, f64),
    y_range: (f64, f64),
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    let mut inner_ok = true;
    let outer = integrate(
        |x| {
            let r = integrate(|y| f(x, y), y_range.0, y_range.1, abs_tol * 0.1, rel_tol * 0.1);
            inner_ok &= r.converged;
            r.value
        },
        x_range.0,
        x_range.1,
        abs_tol,
        rel_tol,
    );
    QuadResult {
        converged: outer.converged && inner_ok,
        ..outer
    }
}
