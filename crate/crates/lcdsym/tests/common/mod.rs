//! Test-side oracles, written independently of the library's numerics:
//! a Simpson-rule exponential integral, direct quadrature of the
//! distance integral forms, finite-difference gradients, and
//! brute-force moment sums.

#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::DMatrix;

use lcdsym::lcd::{self, DistanceConfig};
use lcdsym::mixture::{true_normal_moment, DiracMixture, SymmetricSampleSet};
use lcdsym::quad::GaussLegendre;

/// Composite Simpson rule with `n` panels (`n` even), compensated
/// summation so roundoff stays below the rule's own error.
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    let mut comp = 0.0;
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        let term = w * f(a + k as f64 * h) - comp;
        let next = acc + term;
        comp = (next - acc) - term;
        acc = next;
    }
    acc * h / 3.0
}

/// E1(z) = ∫_z^∞ e^-t/t dt for z > 0, by direct integration.
///
/// For z ≥ 1 substitute w = t - z: E1(z) = e^-z ∫_0^∞ e^-w/(z+w) dw,
/// truncated at w = 40 (relative tail below 5e-18). For z < 1 split at
/// 1 and substitute t = e^u on the remainder, whose integrand exp(-e^u)
/// is smooth and bounded: E1(z) = E1(1) + ∫_{ln z}^0 exp(-e^u) du.
pub fn e1_oracle(z: f64) -> f64 {
    assert!(z > 0.0 && z.is_finite());
    if z >= 1.0 {
        (-z).exp() * simpson(0.0, 40.0, 200_000, |w| (-w).exp() / (z + w))
    } else {
        static E1_AT_ONE: OnceLock<f64> = OnceLock::new();
        let at_one = *E1_AT_ONE.get_or_init(|| e1_oracle(1.0));
        at_one + simpson(z.ln(), 0.0, 100_000, |u| (-u.exp()).exp())
    }
}

/// Ei(x) = -E1(-x) for x < 0.
pub fn ei_oracle(x: f64) -> f64 {
    assert!(x < 0.0);
    -e1_oracle(-x)
}

/// Visits every exponent vector of length `dim` with the given total.
pub fn for_each_exponent(dim: usize, total: u32, f: &mut impl FnMut(&[u32])) {
    fn rec(buf: &mut [u32], slot: usize, remaining: u32, f: &mut impl FnMut(&[u32])) {
        if slot + 1 == buf.len() {
            buf[slot] = remaining;
            f(buf);
            return;
        }
        for v in 0..=remaining {
            buf[slot] = v;
            rec(buf, slot + 1, remaining - v, f);
        }
    }
    let mut buf = vec![0u32; dim];
    rec(&mut buf, 0, total, f);
}

/// Largest |raw moment| over all odd total orders up to `max_order`.
pub fn max_abs_odd_moment(mix: &DiracMixture, max_order: u32) -> f64 {
    let mut worst: f64 = 0.0;
    let mut order = 1;
    while order <= max_order {
        for_each_exponent(mix.dim(), order, &mut |alpha| {
            let m = mix.raw_moment(alpha).expect("dimension matches");
            worst = worst.max(m.abs());
        });
        order += 2;
    }
    worst
}

/// Largest |moment - standard normal moment| over all total orders in
/// 1..=`max_order`.
pub fn max_moment_deviation(mix: &DiracMixture, max_order: u32) -> f64 {
    let mut worst: f64 = 0.0;
    for order in 1..=max_order {
        for_each_exponent(mix.dim(), order, &mut |alpha| {
            let m = mix.raw_moment(alpha).expect("dimension matches");
            worst = worst.max((m - true_normal_moment(alpha)).abs());
        });
    }
    worst
}

fn pair_norms(s: &DMatrix<f64>, i: usize, j: usize) -> (f64, f64) {
    let mut zm = 0.0;
    let mut zp = 0.0;
    for d in 0..s.ncols() {
        let diff = s[(i, d)] - s[(j, d)];
        let sum = s[(i, d)] + s[(j, d)];
        zm += diff * diff;
        zp += sum * sum;
    }
    (zm, zp)
}

/// Self-correlation term of an even symmetric mixture by direct
/// quadrature over the kernel width, 2000 nodes.
pub fn d3_even_quadrature(set: &SymmetricSampleSet, b_max: f64) -> f64 {
    let s = set.half_positions();
    let l = set.half_count();
    let gl = GaussLegendre::new(2000).unwrap();
    let mut total = 0.0;
    for i in 0..l {
        for j in 0..l {
            let (zm, zp) = pair_norms(s, i, j);
            total += gl
                .integrate(0.0, b_max, |b| {
                    let c = 4.0 * b * b;
                    b * ((-zm / c).exp() + (-zp / c).exp())
                })
                .unwrap();
        }
    }
    2.0 / ((2 * l) as f64).powi(2) * total
}

/// Self-correlation term of an odd symmetric mixture (center sample
/// included) by direct quadrature, 2000 nodes.
pub fn d3_odd_quadrature(set: &SymmetricSampleSet, b_max: f64) -> f64 {
    let s = set.half_positions();
    let l = set.half_count();
    let gl = GaussLegendre::new(2000).unwrap();
    let two_l = (2 * l) as f64;
    let m = two_l + 1.0;
    let even = d3_even_quadrature(set, b_max);
    let center_center = gl.integrate(0.0, b_max, |b| b).unwrap();
    let mut cross = 0.0;
    for i in 0..l {
        let n_i: f64 = (0..s.ncols()).map(|d| s[(i, d)] * s[(i, d)]).sum();
        cross += gl
            .integrate(0.0, b_max, |b| b * (-n_i / (4.0 * b * b)).exp())
            .unwrap();
    }
    (two_l * two_l) / (m * m) * even + center_center / (m * m) + 4.0 / (m * m) * cross
}

/// Central finite differences of the total distance, one column per
/// coordinate of the generator rows.
pub fn fd_gradient(set: &SymmetricSampleSet, cfg: &DistanceConfig, h: f64) -> DMatrix<f64> {
    let l = set.half_count();
    let n = set.dim();
    let center = set.includes_center();
    let mut out = DMatrix::zeros(l, n);
    for i in 0..l {
        for d in 0..n {
            let mut plus = set.half_positions().clone();
            plus[(i, d)] += h;
            let mut minus = set.half_positions().clone();
            minus[(i, d)] -= h;
            let fp = lcd::distance(&SymmetricSampleSet::new(plus, center).unwrap(), cfg)
                .unwrap()
                .total;
            let fm = lcd::distance(&SymmetricSampleSet::new(minus, center).unwrap(), cfg)
                .unwrap()
                .total;
            out[(i, d)] = (fp - fm) / (2.0 * h);
        }
    }
    out
}
