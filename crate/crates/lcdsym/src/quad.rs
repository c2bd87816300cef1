//! Fixed-node Gauss-Legendre quadrature.
//!
//! All one-dimensional integrals over the kernel width b live on
//! [0, b_max] with smooth integrands, so a fixed Gauss-Legendre rule is
//! the whole story: deterministic, reproducible, and spectrally accurate
//! for analytic integrands.

use crate::{Error, Result};

/// A Gauss-Legendre rule on the reference interval [-1, 1].
///
/// Nodes are stored in ascending order and are exactly symmetric about
/// zero by construction (computed for one half, mirrored to the other),
/// which keeps integrals of even/odd integrands bit-stable.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Build an `n`-point rule. Nodes are the roots of the Legendre
    /// polynomial P_n found by Newton iteration from the Chebyshev-like
    /// initial guesses; weights are 2 / ((1 - x^2) P_n'(x)^2).
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig(
                "quadrature rule needs at least one node".into(),
            ));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = n.div_ceil(2);
        for i in 0..half {
            // root counting from the positive end
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-15 {
                    let (p2, d2) = legendre_with_derivative(n, x);
                    dp = d2;
                    x -= p2 / d2;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = w;
            nodes[i] = -x;
            weights[i] = w;
        }
        if n % 2 == 1 {
            // the middle root of an odd rule is exactly zero
            nodes[n / 2] = 0.0;
            let (_, d) = legendre_with_derivative(n, 0.0);
            weights[n / 2] = 2.0 / (d * d);
        }
        Ok(GaussLegendre { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes mapped to [a, b], ascending.
    pub fn mapped_nodes(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mid = 0.5 * (a + b);
        let halfwidth = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + halfwidth * x, w * halfwidth))
    }

    /// ∫_a^b f(x) dx. Errors if the integrand produces NaN at a node.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (x, w) in self.mapped_nodes(a, b) {
            let v = f(x);
            if v.is_nan() {
                return Err(Error::Numerical(format!(
                    "integrand returned NaN at node x = {x}"
                )));
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    // recurrence (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = if x.abs() < 1.0 {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    } else {
        // endpoint derivative, not reached by interior roots
        n as f64 * (n as f64 + 1.0) / 2.0 * x.powi(n as i32 + 1)
    };
    (p1, d)
}
