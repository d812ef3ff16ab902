//! Adaptive Gauss–Kronrod quadrature, integration toward a singular origin,
//! and Euler–Maclaurin series tails.

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
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7–K15 panel: `(kronrod estimate, |kronrod − gauss|)`.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

const MAX_PANELS: usize = 4000;

/// Globally adaptive G7–K15 on a finite interval; the panel with the largest
/// error estimate is bisected until `error ≤ max(abs_tol, rel_tol·|value|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> QuadResult {
    if a == b {
        return QuadResult { value: 0.0, error: 0.0, converged: true };
    }
    let (v, e) = gk15(&f, a, b);
    let mut panels = vec![(a, b, v, e)];
    let mut value = v;
    let mut error = e;
    while error > abs_tol.max(rel_tol * value.abs()) {
        if panels.len() >= MAX_PANELS {
            return QuadResult { value, error, converged: false };
        }
        let (i, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (pa, pb, pv, pe) = panels.swap_remove(i);
        let m = 0.5 * (pa + pb);
        if m <= pa || m >= pb {
            return QuadResult { value, error, converged: false };
        }
        let (lv, le) = gk15(&f, pa, m);
        let (rv, re) = gk15(&f, m, pb);
        value += lv + rv - pv;
        error += le + re - pe;
        panels.push((pa, m, lv, le));
        panels.push((m, pb, rv, re));
        if panels.len() % 64 == 0 {
            // refresh the running sums to shed accumulated rounding
            value = panels.iter().map(|p| p.2).sum();
            error = panels.iter().map(|p| p.3).sum();
        }
    }
    QuadResult { value, error, converged: true }
}

/// Result of integrating toward a possibly singular endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShellResult {
    Finite(f64),
    Divergent,
}

impl ShellResult {
    /// `+∞` for a divergent integral.
    pub fn value(self) -> f64 {
        match self {
            ShellResult::Finite(v) => v,
            ShellResult::Divergent => f64::INFINITY,
        }
    }
}

const MAX_SHELLS: usize = 900;

/// `∫_0^a f` for `a > 0` with `f` possibly singular at 0.
///
/// The range is split into dyadic shells `[a 2^{-k-1}, a 2^{-k}]`. Once the
/// shell ratio `s_{k+1}/s_k` settles, the remaining shells are summed as a
/// geometric series; a settled ratio `≥ 1` means the integral diverges.
pub fn integrate_to_origin<F: Fn(f64) -> f64>(f: F, a: f64, rel_tol: f64) -> ShellResult {
    assert!(a > 0.0);
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    let mut ratios: Vec<f64> = Vec::new();
    let mut zeros = 0;
    let mut hi = a;
    for _ in 0..MAX_SHELLS {
        let lo = 0.5 * hi;
        let s = integrate(&f, lo, hi, 0.0, rel_tol * 0.1).value;
        total += s;
        hi = lo;
        if s == 0.0 {
            zeros += 1;
            if zeros >= 4 {
                return ShellResult::Finite(total);
            }
            prev = None;
            ratios.clear();
            continue;
        }
        zeros = 0;
        if let Some(p) = prev {
            ratios.push(s / p);
        }
        prev = Some(s);
        if s.abs() <= 1e-3 * rel_tol * total.abs() {
            return ShellResult::Finite(total);
        }
        let n = ratios.len();
        if n >= 4 {
            let r = ratios[n - 1];
            let settled = ratios[n - 4..]
                .iter()
                .all(|q| (q - r).abs() <= 1e-6 * r.abs().max(1e-300));
            if settled {
                if r >= 1.0 - 1e-9 {
                    return ShellResult::Divergent;
                }
                if r > 0.0 {
                    return ShellResult::Finite(total + s * r / (1.0 - r));
                }
            }
        }
        if !total.is_finite() {
            return ShellResult::Divergent;
        }
    }
    ShellResult::Divergent
}

/// `Σ_{n ≥ n0} g(n)` where `g` extends smoothly to real `n ≥ n0` and is
/// monotone eventually. Terms below `n_direct` are summed directly; the rest
/// by Euler–Maclaurin with the tail integral mapped onto `(0, 1]`.
pub fn series_tail<G: Fn(f64) -> f64>(g: G, n0: u64, n_direct: u64, rel_tol: f64) -> ShellResult {
    let big_n = n_direct.max(n0 + 64);
    let mut head = 0.0;
    for n in n0..big_n {
        head += g(n as f64);
    }
    let nf = big_n as f64;
    let tail = integrate_to_origin(|u: f64| g(nf / u) * nf / (u * u), 1.0, rel_tol);
    let ShellResult::Finite(integral) = tail else {
        return ShellResult::Divergent;
    };
    let d1 = {
        let s = 0.01 * nf;
        (g(nf + s) - g(nf - s)) / (2.0 * s)
    };
    let d3 = {
        let s = 0.05 * nf;
        (g(nf + 2.0 * s) - 2.0 * g(nf + s) + 2.0 * g(nf - s) - g(nf - 2.0 * s)) / (2.0 * s * s * s)
    };
    ShellResult::Finite(head + integral + 0.5 * g(nf) - d1 / 12.0 + d3 / 720.0)
}
