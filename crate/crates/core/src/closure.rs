//! Gaussian moment closure of the transition rates.
//!
//! For `X ~ Normal(mean, cov)` the closed rate of a transition is
//! `g = E[coefficient(t) * kernel(X)]`. Constant and linear kernels pass
//! through unchanged (expectation is linear). The one-dimensional kinked
//! kernels and `min(x_j, x_k)` have closed forms in terms of the normal
//! density and distribution function; `min(x_j, (n - x_k)^+)` is integrated
//! numerically over its two-dimensional marginal.
//!
//! Only the marginal blocks of the covariance that a kernel touches are
//! read. Derivatives are taken with respect to the mean only.

use std::cell::RefCell;
use std::rc::Rc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{NetworkModel, RateKernel, RateTerm};
use crate::normal::{normal_cdf, normal_pdf};
use crate::quadrature::{PiecewiseGaussian, QuadratureRule};

/// Marginal standard deviations below this are treated as zero and the
/// kernel is evaluated pointwise at the mean.
pub const DEGENERATE_SD: f64 = 1e-9;

/// Default number of nodes per piece for the two-dimensional kernel.
pub const DEFAULT_QUAD_ORDER: usize = 32;

/// Mean vector and covariance matrix of a Gaussian surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPoint {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MomentPoint {
    /// Checks shape, finiteness, symmetry and a non-negative diagonal (with
    /// `1e-9` slack).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Usage(format!(
                "covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("moment point has non-finite entries".into()));
        }
        for i in 0..d {
            if cov[(i, i)] < -1e-9 {
                return Err(Error::Numerical(format!("negative variance {} at {i}", cov[(i, i)])));
            }
            for j in 0..i {
                let (a, b) = (cov[(i, j)], cov[(j, i)]);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Numerical(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(MomentPoint { mean, cov })
    }

    /// Point mass at `mean`.
    pub fn degenerate(mean: DVector<f64>) -> Self {
        let d = mean.len();
        MomentPoint {
            mean,
            cov: DMatrix::zeros(d, d),
        }
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    fn sd(&self, j: usize) -> f64 {
        self.cov[(j, j)].max(0.0).sqrt()
    }
}

/// Sparse mean-gradient of one closed rate: at most two nonzero entries
/// for the nonlinear kernels, `d` for linear ones.
type Grad = Vec<(usize, f64)>;

/// Evaluator for closed rates. Holds the quadrature used by the
/// two-dimensional capped-residual kernel.
#[derive(Debug, Clone)]
pub struct GaussianClosure {
    pieces: PiecewiseGaussian,
}

impl Default for GaussianClosure {
    fn default() -> Self {
        GaussianClosure::new(DEFAULT_QUAD_ORDER).expect("default quadrature order is valid")
    }
}

impl GaussianClosure {
    /// `quad_order` nodes per piece for kernels integrated numerically.
    pub fn new(quad_order: usize) -> Result<Self> {
        Ok(GaussianClosure {
            pieces: PiecewiseGaussian::new(quad_order)?,
        })
    }

    pub fn quad_order(&self) -> usize {
        self.pieces.order()
    }

    /// `g = E[coefficient(t) * kernel(X)]`, `X ~ Normal(p.mean, p.cov)`.
    pub fn expected_kernel(&self, term: &RateTerm, t: f64, p: &MomentPoint) -> Result<f64> {
        Ok(self.value_and_grad(term, t, p, false)?.0)
    }

    /// Gradient of [`expected_kernel`](Self::expected_kernel) with respect to the mean.
    pub fn expected_kernel_grad_mean(&self, term: &RateTerm, t: f64, p: &MomentPoint) -> Result<DVector<f64>> {
        let (_, grad) = self.value_and_grad(term, t, p, true)?;
        let mut out = DVector::zeros(p.dimension());
        for (j, v) in grad {
            out[j] += v;
        }
        Ok(out)
    }

    /// Closed rates `g_i` of every transition.
    pub fn closed_rates(&self, m: &NetworkModel, t: f64, p: &MomentPoint) -> Result<Vec<f64>> {
        m.transitions
            .iter()
            .map(|tr| self.expected_kernel(&tr.rate, t, p))
            .collect()
    }

    /// `G(t, mean, cov) = sum_i jump_i * g_i`.
    pub fn closed_drift(&self, m: &NetworkModel, t: f64, p: &MomentPoint) -> Result<DVector<f64>> {
        m.check_time(t)?;
        Ok(self.evaluate(m, t, p, false)?.drift)
    }

    /// Mean-gradient of the closed drift, `A = sum_i jump_i grad(g_i)^T`.
    pub fn closed_drift_jacobian(&self, m: &NetworkModel, t: f64, p: &MomentPoint) -> Result<DMatrix<f64>> {
        m.check_time(t)?;
        Ok(self.evaluate(m, t, p, true)?.jacobian)
    }

    /// `d x k` matrix whose column `i` is `jump_i * sqrt(max(g_i, 0))`.
    pub fn noise_matrix(&self, m: &NetworkModel, t: f64, p: &MomentPoint) -> Result<DMatrix<f64>> {
        m.check_time(t)?;
        let rates = self.closed_rates(m, t, p)?;
        let mut b = DMatrix::zeros(m.dimension, m.transitions.len());
        for (i, (tr, g)) in m.transitions.iter().zip(rates).enumerate() {
            let s = g.max(0.0).sqrt();
            for (r, &l) in tr.jump.iter().enumerate() {
                b[(r, i)] = l as f64 * s;
            }
        }
        Ok(b)
    }

    /// Closed drift, its Jacobian and the diffusion matrix `B B^T` in one
    /// pass over the transitions.
    pub fn evaluate(&self, m: &NetworkModel, t: f64, p: &MomentPoint, with_grad: bool) -> Result<ClosedTerms> {
        let d = m.dimension;
        let mut drift = DVector::zeros(d);
        let mut jacobian = DMatrix::zeros(d, d);
        let mut diffusion = DMatrix::zeros(d, d);
        for tr in &m.transitions {
            let (g, grad) = self.value_and_grad(&tr.rate, t, p, with_grad)?;
            let g_pos = g.max(0.0);
            for (r, &lr) in tr.jump.iter().enumerate() {
                if lr == 0 {
                    continue;
                }
                let lr = lr as f64;
                drift[r] += lr * g;
                for &(c, v) in &grad {
                    jacobian[(r, c)] += lr * v;
                }
                for (c, &lc) in tr.jump.iter().enumerate() {
                    diffusion[(r, c)] += lr * lc as f64 * g_pos;
                }
            }
        }
        Ok(ClosedTerms {
            drift,
            jacobian,
            diffusion,
        })
    }

    fn value_and_grad(&self, term: &RateTerm, t: f64, p: &MomentPoint, with_grad: bool) -> Result<(f64, Grad)> {
        let c = term.coefficient.value_unchecked(t);
        let mean = &p.mean;
        let (g, grad): (f64, Grad) = match &term.kernel {
            RateKernel::Constant => (1.0, Vec::new()),
            RateKernel::Linear { coeffs } => (
                coeffs.iter().zip(mean.iter()).map(|(a, x)| a * x).sum(),
                coeffs.iter().copied().enumerate().filter(|&(_, a)| a != 0.0).collect(),
            ),
            RateKernel::MinThreshold { index, threshold } => {
                let n = threshold.value_unchecked(t);
                let (v, dv) = expect_min_const(mean[*index], p.sd(*index), n);
                (v, vec![(*index, dv)])
            }
            RateKernel::PosPart { index, threshold } => {
                let n = threshold.value_unchecked(t);
                let (v, dv) = expect_pos_part(mean[*index], p.sd(*index), n);
                (v, vec![(*index, dv)])
            }
            RateKernel::MinPair { first, second } => {
                let (j, k) = (*first, *second);
                let theta = pair_spread(p, j, k)?;
                let (mj, mk) = (mean[j], mean[k]);
                if theta < DEGENERATE_SD {
                    let jw = if mj <= mk { 1.0 } else { 0.0 };
                    (mj.min(mk), vec![(j, jw), (k, 1.0 - jw)])
                } else {
                    let z = (mj - mk) / theta;
                    let pj = normal_cdf(-z);
                    let pk = normal_cdf(z);
                    (mj * pj + mk * pk - theta * normal_pdf(z), vec![(j, pj), (k, pk)])
                }
            }
            RateKernel::CappedResidual {
                capped,
                residual,
                threshold,
            } => {
                let n = threshold.value_unchecked(t);
                let [v, dj, dk] = capped_residual(&self.pieces, p, *capped, *residual, n)?;
                (v, vec![(*capped, dj), (*residual, dk)])
            }
        };
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite closed rate for `{}` kernel",
                term.kernel.name()
            )));
        }
        let grad = if with_grad {
            grad.into_iter().map(|(j, v)| (j, c * v)).collect()
        } else {
            Vec::new()
        };
        Ok((c * g, grad))
    }
}

/// Output of [`GaussianClosure::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedTerms {
    pub drift: DVector<f64>,
    /// Empty (all zero) unless requested.
    pub jacobian: DMatrix<f64>,
    /// `B B^T`.
    pub diffusion: DMatrix<f64>,
}

/// `(E[min(Y, c)], d/dmu)` for `Y ~ Normal(mu, s^2)`.
fn expect_min_const(mu: f64, s: f64, c: f64) -> (f64, f64) {
    if s < DEGENERATE_SD {
        return (mu.min(c), if mu <= c { 1.0 } else { 0.0 });
    }
    let z = (c - mu) / s;
    let cdf = normal_cdf(z);
    (c + (mu - c) * cdf - s * normal_pdf(z), cdf)
}

/// `(E[(Y - c)^+], d/dmu)` for `Y ~ Normal(mu, s^2)`.
fn expect_pos_part(mu: f64, s: f64, c: f64) -> (f64, f64) {
    if s < DEGENERATE_SD {
        return ((mu - c).max(0.0), if mu > c { 1.0 } else { 0.0 });
    }
    let z = (c - mu) / s;
    let tail = normal_cdf(-z);
    ((mu - c) * tail + s * normal_pdf(z), tail)
}

/// Standard deviation of `X_j - X_k`.
fn pair_spread(p: &MomentPoint, j: usize, k: usize) -> Result<f64> {
    let (vj, vk, cjk) = (p.cov[(j, j)], p.cov[(k, k)], p.cov[(j, k)]);
    let theta2 = vj + vk - 2.0 * cjk;
    let tol = 1e-8 * (vj.abs() + vk.abs()) + 1e-12;
    if theta2 < -tol {
        return Err(Error::Numerical(format!(
            "var(x_{j} - x_{k}) = {theta2} is negative; covariance is corrupt"
        )));
    }
    Ok(theta2.max(0.0).sqrt())
}

/// `[E[min(X_j, (n - X_k)^+)], d/dm_j, d/dm_k]`.
///
/// Outer integral over `X_k` split where `X_k = n` and where the
/// conditional mean of `X_j` meets the cap; inner conditional expectation in
/// closed form. Mean derivatives are the expected pathwise derivatives
/// `P(X_j < cap)` and `-P(X_j > n - X_k, X_k < n)`.
fn capped_residual(pieces: &PiecewiseGaussian, p: &MomentPoint, j: usize, k: usize, n: f64) -> Result<[f64; 3]> {
    let (mj, mk) = (p.mean[j], p.mean[k]);
    let sj = p.sd(j);
    let sk = p.sd(k);

    let inner = |mu: f64, s: f64, xk: f64| -> [f64; 3] {
        let cap = (n - xk).max(0.0);
        let (v, dj) = expect_min_const(mu, s, cap);
        let dk = if xk < n { dj - 1.0 } else { 0.0 };
        [v, dj, dk]
    };

    if sk < DEGENERATE_SD {
        return Ok(inner(mj, sj, mk));
    }
    let cjk = p.cov[(j, k)];
    let slope = cjk / sk;
    let s = (sj * sj - slope * slope).max(0.0).sqrt();

    let mut kinks = vec![(n - mk) / sk];
    // conditional mean equals the cap: mj + slope z = n - mk - sk z
    if (sk + slope).abs() > 0.0 {
        kinks.push((n - mk - mj) / (sk + slope));
    }
    // conditional mean crosses zero where the cap is exhausted
    if slope.abs() > 0.0 {
        kinks.push(-mj / slope);
    }
    pieces.expectation_n(&kinks, |z| inner(mj + slope * z, s, mk + sk * z))
}

thread_local! {
    static PIECES: RefCell<Vec<Rc<PiecewiseGaussian>>> = const { RefCell::new(Vec::new()) };
}

fn cached_pieces(q: usize) -> Result<Rc<PiecewiseGaussian>> {
    PIECES.with(|cache| {
        if let Some(pg) = cache.borrow().iter().find(|pg| pg.order() == q) {
            return Ok(Rc::clone(pg));
        }
        let pg = Rc::new(PiecewiseGaussian::new(q)?);
        cache.borrow_mut().push(Rc::clone(&pg));
        Ok(pg)
    })
}

/// Numerical `E[coefficient(t) * kernel(X)]` with Gauss rules of order
/// `rule.order()`: Gauss–Hermite along smooth directions and piecewise
/// Gaussian rules split at the kinks along non-smooth ones. Independent of
/// the closed forms used by [`GaussianClosure`] for every kernel except the
/// capped residual, which has no closed form.
pub fn quad_expected_kernel(term: &RateTerm, t: f64, p: &MomentPoint, rule: &QuadratureRule) -> Result<f64> {
    let q = rule.order();
    let c = term.coefficient.value_unchecked(t);
    let mean = &p.mean;
    let mut x: Vec<f64> = mean.iter().copied().collect();
    let kernel = &term.kernel;
    let v = match kernel {
        RateKernel::Constant => 1.0,
        RateKernel::Linear { coeffs } => coeffs
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a != 0.0)
            .map(|(j, &a)| {
                let (m, s) = (mean[j], p.sd(j));
                a * rule.normal_expectation(|z| m + s * z)
            })
            .sum(),
        RateKernel::MinThreshold { index, threshold } | RateKernel::PosPart { index, threshold } => {
            let j = *index;
            let (m, s) = (mean[j], p.sd(j));
            if s < DEGENERATE_SD {
                kernel.eval(t, &x)
            } else {
                let pg = cached_pieces(q)?;
                let a = (threshold.value_unchecked(t) - m) / s;
                pg.expectation(&[a], |z| {
                    x[j] = m + s * z;
                    kernel.eval(t, &x)
                })?
            }
        }
        RateKernel::MinPair { first, second } => {
            let (j, k) = (*first, *second);
            // rotate to U = X_j - X_k (the kink direction) and W = X_k - beta U,
            // independent of U
            let theta = pair_spread(p, j, k)?;
            let mu_u = mean[j] - mean[k];
            let cov_ku = p.cov[(j, k)] - p.cov[(k, k)];
            let beta = if theta < DEGENERATE_SD {
                0.0
            } else {
                cov_ku / (theta * theta)
            };
            let mu_w = mean[k] - beta * mu_u;
            let sd_w = (p.cov[(k, k)] - beta * cov_ku).max(0.0).sqrt();
            let mut inner = |u: f64| {
                rule.normal_expectation(|z| {
                    let xk = mu_w + sd_w * z + beta * u;
                    x[j] = xk + u;
                    x[k] = xk;
                    kernel.eval(t, &x)
                })
            };
            if theta < DEGENERATE_SD {
                inner(mu_u)
            } else {
                let pg = cached_pieces(q)?;
                pg.expectation(&[-mu_u / theta], |v| inner(mu_u + theta * v))?
            }
        }
        RateKernel::CappedResidual {
            capped,
            residual,
            threshold,
        } => {
            let pg = cached_pieces(q)?;
            capped_residual(&pg, p, *capped, *residual, threshold.value_unchecked(t))?[0]
        }
    };
    let out = c * v;
    if !out.is_finite() {
        return Err(Error::Numerical("quadrature produced a non-finite value".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::TimeSchedule;

    fn point1(m: f64, s: f64) -> MomentPoint {
        MomentPoint::new(DVector::from_vec(vec![m]), DMatrix::from_element(1, 1, s * s)).unwrap()
    }

    fn term(c: f64, kernel: RateKernel) -> RateTerm {
        RateTerm::new(TimeSchedule::constant(c), kernel)
    }

    fn min_thr(n: f64) -> RateKernel {
        RateKernel::MinThreshold {
            index: 0,
            threshold: TimeSchedule::constant(n),
        }
    }

    fn pos(n: f64) -> RateKernel {
        RateKernel::PosPart {
            index: 0,
            threshold: TimeSchedule::constant(n),
        }
    }

    #[test]
    fn min_threshold_standard_normal() {
        let g = GaussianClosure::default();
        let v = g
            .expected_kernel(&term(1.0, min_thr(0.0)), 0.0, &point1(0.0, 1.0))
            .unwrap();
        assert!((v + 0.398_942_280_4).abs() < 1e-10);
    }

    #[test]
    fn pos_part_at_threshold() {
        let g = GaussianClosure::default();
        // beta = 2, p = 0.5
        let v = g
            .expected_kernel(&term(2.0 * 0.5, pos(7.0)), 0.0, &point1(7.0, 1.0))
            .unwrap();
        assert!((v - 0.398_942_280_4).abs() < 1e-10);
        let grad = g
            .expected_kernel_grad_mean(&term(1.0, pos(7.0)), 0.0, &point1(7.0, 1.0))
            .unwrap();
        assert!((grad[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn min_pair_independent_standard() {
        let g = GaussianClosure::default();
        let p = MomentPoint::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let v = g
            .expected_kernel(&term(1.0, RateKernel::MinPair { first: 0, second: 1 }), 0.0, &p)
            .unwrap();
        assert!((v + 0.564_189_583_5).abs() < 1e-10);
    }

    #[test]
    fn degenerate_sd_is_pointwise() {
        let g = GaussianClosure::default();
        let v = g
            .expected_kernel(&term(1.0, min_thr(50.0)), 0.0, &point1(60.0, 0.0))
            .unwrap();
        assert_eq!(v, 50.0);
        let v = g
            .expected_kernel(&term(1.0, min_thr(50.0)), 0.0, &point1(60.0, 1e-6))
            .unwrap();
        assert!((v - 50.0).abs() < 1e-6);
    }

    #[test]
    fn linear_gradient_independent_of_point() {
        let g = GaussianClosure::default();
        let t = term(1.0, RateKernel::Linear { coeffs: vec![0.0, 0.2] });
        for p in [
            MomentPoint::degenerate(DVector::from_vec(vec![3.0, 4.0])),
            MomentPoint::new(DVector::from_vec(vec![30.0, 1.0]), DMatrix::identity(2, 2) * 9.0).unwrap(),
        ] {
            let grad = g.expected_kernel_grad_mean(&t, 0.0, &p).unwrap();
            assert_eq!(grad.as_slice(), &[0.0, 0.2]);
        }
    }

    #[test]
    fn corrupt_covariance_rejected() {
        let g = GaussianClosure::default();
        // var(x0 - x1) = 1 + 1 - 2 * 1.5 < 0
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        let p = MomentPoint {
            mean: DVector::zeros(2),
            cov,
        };
        let r = g.expected_kernel(&term(1.0, RateKernel::MinPair { first: 0, second: 1 }), 0.0, &p);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn moment_point_checks() {
        assert!(MomentPoint::new(DVector::zeros(2), DMatrix::zeros(3, 3)).is_err());
        assert!(MomentPoint::new(DVector::zeros(1), DMatrix::from_element(1, 1, -1.0)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(MomentPoint::new(DVector::zeros(2), asym).is_err());
    }

    #[test]
    fn capped_residual_exhausted_capacity() {
        let t = term(
            1.0,
            RateKernel::CappedResidual {
                capped: 1,
                residual: 0,
                threshold: TimeSchedule::constant(200.0),
            },
        );
        let p = MomentPoint::new(DVector::from_vec(vec![220.0, 30.0]), DMatrix::identity(2, 2) * 1e-4).unwrap();
        let rule = QuadratureRule::gauss_hermite(64).unwrap();
        assert!(quad_expected_kernel(&t, 0.0, &p, &rule).unwrap().abs() < 1e-9);
        assert!(GaussianClosure::default().expected_kernel(&t, 0.0, &p).unwrap().abs() < 1e-9);
    }

    #[test]
    fn quad_constant_is_exact() {
        let rule = QuadratureRule::gauss_hermite(16).unwrap();
        let v = quad_expected_kernel(&term(3.25, RateKernel::Constant), 0.0, &point1(4.0, 2.0), &rule).unwrap();
        assert_eq!(v, 3.25);
    }

    #[test]
    fn quad_matches_min_threshold_reference() {
        let rule = QuadratureRule::gauss_hermite(64).unwrap();
        let v = quad_expected_kernel(&term(1.0, min_thr(0.0)), 0.0, &point1(0.0, 1.0), &rule).unwrap();
        assert!((v + 0.398_942_280_401_432_7).abs() < 1e-8);
    }

    #[test]
    fn noise_matrix_columns() {
        let m = NetworkModel::new(
            1,
            1.0,
            vec![0],
            vec![
                crate::model::Transition::new(vec![1], TimeSchedule::constant(2.0), RateKernel::Constant),
                crate::model::Transition::new(
                    vec![-1],
                    TimeSchedule::constant(1.0),
                    RateKernel::Linear { coeffs: vec![1.0] },
                ),
            ],
        );
        let b = GaussianClosure::default()
            .noise_matrix(&m, 0.0, &MomentPoint::degenerate(DVector::zeros(1)))
            .unwrap();
        assert!((b[(0, 0)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(b[(0, 1)], 0.0);
    }
}
