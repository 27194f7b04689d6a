#![allow(dead_code)]

use num_rational::Ratio;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use torusmix::Exact;

pub const D: u32 = 20;

pub fn odd_dyadic(rng: &mut ChaCha8Rng) -> Exact {
    Ratio::new(2 * rng.gen_range(0..(1i128 << (D - 1))) + 1, 1i128 << D)
}

fn digits(s: Exact) -> Vec<i64> {
    let scaled = s * Ratio::from_integer(1i128 << D);
    let v = scaled.to_integer();
    (1..=D).map(|l| ((v >> (D - l)) & 1) as i64).collect()
}

/// Preimage under the depth-`K` mixing flow at `T_m`, built digit by digit.
pub fn digit_oracle(s: Exact, m: u32, k: u32) -> Exact {
    let x = digits(s);
    let xd = |l: u32| if l as usize <= x.len() { x[l as usize - 1] } else { 0 };
    let mut y = Ratio::from_integer(0);
    for l in 1..=(D + k + 2) {
        let dl = if l <= k + 1 - m {
            xd(m + l)
        } else if l <= k + 1 {
            xd(k + 2 - l)
        } else {
            xd(l)
        };
        if dl == 1 {
            y += Ratio::new(1, 1i128 << l);
        }
    }
    y
}


fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, eps, 48)
}

/// `int_{-inf}^x e^{-y^2} dy`, truncated where the integrand underflows.
pub fn erf_tail(x: f64) -> f64 {
    if x <= -12.0 {
        return 0.0;
    }
    integrate(|y| (-y * y).exp(), -12.0, x, 1e-15)
}

/// Leak constant from its two defining integrals.
pub fn leak_constant_oracle() -> f64 {
    let c0 = erf_tail(0.0);
    let tail = integrate(|x| erf_tail(-x), 0.0, 12.0, 1e-14);
    8.0 * 3f64.sqrt() * tail / c0
}
