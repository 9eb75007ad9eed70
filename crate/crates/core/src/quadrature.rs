//! Gauss rules for Gaussian expectations.
//!
//! [`QuadratureRule`] is the classical Gauss–Hermite rule for the weight
//! `exp(-x^2)` on the real line. Kernels with a kink (min, positive part) are
//! not smooth, and a full-line rule only converges algebraically on them, so
//! [`PiecewiseGaussian`] splits the standard normal line at the kinks and uses
//! on each piece the Gauss rule of the normal density restricted to that
//! piece. Piece rules are generated by the Golub–Welsch procedure from
//! recurrence coefficients obtained by a discretized Stieltjes procedure.

use crate::error::{Error, Result};
use crate::normal::normal_pdf;

/// Standardized coordinates beyond this bound carry less than 1e-32 of the
/// normal mass and are dropped.
const TAIL: f64 = 12.0;

/// Nodes and weights of an `n`-point Gauss rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss–Hermite rule for `int f(x) exp(-x^2) dx`; weights sum to `sqrt(pi)`.
    pub fn gauss_hermite(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::Usage("quadrature order must be positive".into()));
        }
        let diag = vec![0.0; q];
        let off: Vec<f64> = (1..q).map(|k| (k as f64 / 2.0).sqrt()).collect();
        golub_welsch(diag, off, std::f64::consts::PI.sqrt())
    }

    /// Gauss–Legendre rule on `[-1, 1]`; weights sum to 2.
    pub fn gauss_legendre(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::Usage("quadrature order must be positive".into()));
        }
        let diag = vec![0.0; q];
        let off: Vec<f64> = (1..q)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        golub_welsch(diag, off, 2.0)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[f(Z)]` for a standard normal `Z`, Gauss–Hermite rules only.
    pub fn normal_expectation(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2;
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(scale * x))
            .sum();
        s / std::f64::consts::PI.sqrt()
    }
}

/// Eigen-decomposition of the Jacobi matrix with diagonal `diag` and
/// off-diagonal `off`, returning nodes (eigenvalues, ascending) and weights
/// `mass * v0^2` where `v0` is the first eigenvector component.
fn golub_welsch(mut d: Vec<f64>, off: Vec<f64>, mass: f64) -> Result<QuadratureRule> {
    let n = d.len();
    let mut e = off;
    e.push(0.0);
    let mut z = vec![0.0; n];
    z[0] = 1.0;

    // implicit QL with Wilkinson-type shifts, tracking the first row of the
    // eigenvector matrix only
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical("Golub–Welsch eigen-iteration did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut pairs: Vec<(f64, f64)> = d.into_iter().zip(z).map(|(x, v)| (x, mass * v * v)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nodes, weights) = pairs.into_iter().unzip();
    Ok(QuadratureRule { nodes, weights })
}

/// Gauss rules for the standard normal density restricted to intervals,
/// used to integrate functions that are smooth between known kinks.
#[derive(Debug, Clone)]
pub struct PiecewiseGaussian {
    order: usize,
    base: QuadratureRule,
}

impl PiecewiseGaussian {
    /// `order` nodes per piece.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Usage("quadrature order must be positive".into()));
        }
        // The discretization must integrate the normal density times
        // polynomials of degree 2 * order - 1 to machine precision over a
        // piece of width up to 2 * TAIL.
        let base = QuadratureRule::gauss_legendre(2 * order + 96)?;
        Ok(PiecewiseGaussian { order, base })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Gauss rule (nodes in standard-normal units, weights summing to the
    /// normal mass of the piece) for `int_lo^hi f(z) phi(z) dz`.
    pub fn piece(&self, lo: f64, hi: f64) -> Result<QuadratureRule> {
        let lo = lo.max(-TAIL);
        let hi = hi.min(TAIL);
        if !(hi > lo) {
            return Ok(QuadratureRule {
                nodes: Vec::new(),
                weights: Vec::new(),
            });
        }
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let z: Vec<f64> = self.base.nodes.iter().map(|&x| mid + half * x).collect();
        let w: Vec<f64> = self
            .base
            .weights
            .iter()
            .zip(&z)
            .map(|(&wb, &zi)| half * wb * normal_pdf(zi))
            .collect();
        let mass: f64 = w.iter().sum();
        if !(mass > 0.0) {
            return Ok(QuadratureRule {
                nodes: Vec::new(),
                weights: Vec::new(),
            });
        }

        // Stieltjes procedure on the discrete measure, orthonormal form.
        let q = self.order.min(z.len());
        let mut diag = Vec::with_capacity(q);
        let mut off = Vec::with_capacity(q);
        let inv = 1.0 / mass.sqrt();
        let mut prev = vec![0.0; z.len()];
        let mut cur = vec![inv; z.len()];
        let mut b_prev = 0.0;
        for k in 0..q {
            let alpha: f64 = z.iter().zip(&w).zip(&cur).map(|((&zi, &wi), &c)| wi * zi * c * c).sum();
            diag.push(alpha);
            if k + 1 == q {
                break;
            }
            let mut next: Vec<f64> = z
                .iter()
                .zip(&cur)
                .zip(&prev)
                .map(|((&zi, &c), &p)| (zi - alpha) * c - b_prev * p)
                .collect();
            let b = next.iter().zip(&w).map(|(&r, &wi)| wi * r * r).sum::<f64>().sqrt();
            if !(b > 0.0) || !b.is_finite() {
                break;
            }
            next.iter_mut().for_each(|r| *r /= b);
            off.push(b);
            prev = std::mem::replace(&mut cur, next);
            b_prev = b;
        }
        diag.truncate(off.len() + 1);
        golub_welsch(diag, off, mass)
    }

    /// `E[f(Z)]` for a standard normal `Z` where `f` is smooth except at the
    /// given `kinks` (any order, duplicates allowed).
    pub fn expectation(&self, kinks: &[f64], mut f: impl FnMut(f64) -> f64) -> Result<f64> {
        Ok(self.expectation_n(kinks, |z| [f(z)])?[0])
    }

    /// Vector-valued form of [`expectation`](Self::expectation); all
    /// components share the nodes.
    pub fn expectation_n<const N: usize>(&self, kinks: &[f64], mut f: impl FnMut(f64) -> [f64; N]) -> Result<[f64; N]> {
        let mut cuts: Vec<f64> = kinks.iter().copied().filter(|k| k.abs() < TAIL).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut edges = Vec::with_capacity(cuts.len() + 2);
        edges.push(-TAIL);
        edges.extend(cuts);
        edges.push(TAIL);
        let mut total = [0.0; N];
        for pair in edges.windows(2) {
            let rule = self.piece(pair[0], pair[1])?;
            for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
                for (acc, v) in total.iter_mut().zip(f(z)) {
                    *acc += w * v;
                }
            }
        }
        Ok(total)
    }
}
