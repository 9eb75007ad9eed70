//! Transient distribution of the chain truncated to a box.
//!
//! Transitions that would leave `[0, cap_0] x ... x [0, cap_{d-1}]` are
//! disabled, which keeps probability mass inside the box. On each interval
//! where the parameters are constant the forward equation `p' = p Q` is
//! solved by uniformization.

use nalgebra::{DMatrix, DVector};

use crate::engine::{check_grid, Method, MomentSample, MomentTrajectory};
use crate::error::{Error, Result};
use crate::model::NetworkModel;

/// Largest truncated state space accepted.
pub const MAX_STATES: usize = 2_000_000;

/// Poisson mean of one uniformization sub-step.
const MAX_POISSON_MEAN: f64 = 50.0;

/// Mixed-radix indexing of the truncation box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    caps: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl Lattice {
    pub fn new(caps: &[usize]) -> Result<Self> {
        let mut strides = Vec::with_capacity(caps.len());
        let mut size: usize = 1;
        for &c in caps {
            strides.push(size);
            size = size
                .checked_mul(c + 1)
                .filter(|&s| s <= MAX_STATES)
                .ok_or_else(|| Error::Usage(format!("truncated state space exceeds {MAX_STATES} states")))?;
        }
        Ok(Lattice {
            caps: caps.to_vec(),
            strides,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn caps(&self) -> &[usize] {
        &self.caps
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for ((&v, &c), &s) in x.iter().zip(&self.caps).zip(&self.strides) {
            if v < 0 || v as usize > c {
                return None;
            }
            idx += v as usize * s;
        }
        Some(idx)
    }

    pub fn state(&self, mut idx: usize) -> Vec<i64> {
        self.caps
            .iter()
            .map(|&c| {
                let v = idx % (c + 1);
                idx /= c + 1;
                v as i64
            })
            .collect()
    }
}

/// Probability vectors of the truncated chain at grid times.
#[derive(Debug, Clone)]
pub struct TransientDistribution {
    pub lattice: Lattice,
    pub times: Vec<f64>,
    pub probabilities: Vec<Vec<f64>>,
}

impl TransientDistribution {
    /// Mean and covariance at every grid time.
    pub fn moments(&self) -> MomentTrajectory {
        let d = self.lattice.caps.len();
        let states: Vec<DVector<f64>> = (0..self.lattice.size)
            .map(|i| DVector::from_iterator(d, self.lattice.state(i).into_iter().map(|v| v as f64)))
            .collect();
        let samples = self
            .times
            .iter()
            .zip(&self.probabilities)
            .map(|(&t, p)| {
                let mut mean = DVector::zeros(d);
                for (x, &pi) in states.iter().zip(p) {
                    mean += x * pi;
                }
                let mut cov = DMatrix::zeros(d, d);
                for (x, &pi) in states.iter().zip(p) {
                    if pi != 0.0 {
                        let c = x - &mean;
                        cov += &c * c.transpose() * pi;
                    }
                }
                MomentSample { t, mean, cov }
            })
            .collect();
        MomentTrajectory {
            method: Method::Exact,
            samples,
            warnings: Vec::new(),
        }
    }

    /// Probability of states with some component at its cap, per grid time.
    pub fn boundary_mass(&self) -> Vec<f64> {
        let on_edge: Vec<bool> = (0..self.lattice.size)
            .map(|i| {
                self.lattice
                    .state(i)
                    .iter()
                    .zip(&self.lattice.caps)
                    .any(|(&v, &c)| v as usize == c)
            })
            .collect();
        self.probabilities
            .iter()
            .map(|p| p.iter().zip(&on_edge).filter(|(_, &e)| e).map(|(pi, _)| pi).sum())
            .collect()
    }
}

/// Exact mean and covariance of the truncated chain at `grid`.
pub fn exact_transient_moments(m: &NetworkModel, caps: &[usize], grid: &[f64]) -> Result<MomentTrajectory> {
    Ok(transient_distribution(m, caps, grid)?.moments())
}

pub fn transient_distribution(m: &NetworkModel, caps: &[usize], grid: &[f64]) -> Result<TransientDistribution> {
    m.ensure_valid()?;
    check_grid(grid, m.horizon)?;
    if caps.len() != m.dimension {
        return Err(Error::Usage(format!(
            "{} caps given for a {}-dimensional model",
            caps.len(),
            m.dimension
        )));
    }
    let lattice = Lattice::new(caps)?;
    let start = lattice
        .index(&m.initial_state)
        .ok_or_else(|| Error::Usage("initial state lies outside the truncation box".into()))?;
    let mut p = vec![0.0; lattice.size];
    p[start] = 1.0;

    let t_end = *grid.last().unwrap();
    let mut nodes: Vec<f64> = m.breakpoints().into_iter().filter(|&b| b < t_end).collect();
    nodes.extend(grid.iter().copied().filter(|&g| g > 0.0));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let mut probabilities = Vec::with_capacity(grid.len());
    let mut next = 0;
    while next < grid.len() && grid[next] <= 0.0 {
        probabilities.push(p.clone());
        next += 1;
    }
    let mut t = 0.0;
    let mut scratch = Generator::default();
    for &b in &nodes {
        scratch.build(m, &lattice, 0.5 * (t + b));
        p = scratch.propagate(p, b - t);
        let mass: f64 = p.iter().sum();
        if (1.0 - mass).abs() > 1e-8 {
            return Err(Error::Numerical(format!("probability mass {mass} at t = {b}")));
        }
        t = b;
        while next < grid.len() && grid[next] <= t + 1e-12 {
            probabilities.push(p.clone());
            next += 1;
        }
    }
    Ok(TransientDistribution {
        lattice,
        times: grid.to_vec(),
        probabilities,
    })
}

/// Sparse generator for one constant-parameter interval.
#[derive(Default)]
struct Generator {
    /// `(from, to, rate)` for every enabled transition
    edges: Vec<(usize, usize, f64)>,
    exit: Vec<f64>,
}

impl Generator {
    fn build(&mut self, m: &NetworkModel, lattice: &Lattice, t: f64) {
        self.edges.clear();
        self.exit.clear();
        self.exit.resize(lattice.size, 0.0);
        let mut target = vec![0i64; m.dimension];
        for from in 0..lattice.size {
            let x = lattice.state(from);
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            for tr in &m.transitions {
                let r = tr.rate.eval(t, &xf);
                if !(r > 0.0) {
                    continue;
                }
                for ((tg, &xi), &l) in target.iter_mut().zip(&x).zip(&tr.jump) {
                    *tg = xi + l;
                }
                if let Some(to) = lattice.index(&target) {
                    self.edges.push((from, to, r));
                    self.exit[from] += r;
                }
            }
        }
    }

    fn propagate(&self, mut p: Vec<f64>, span: f64) -> Vec<f64> {
        let lambda = self.exit.iter().copied().fold(0.0, f64::max);
        if lambda == 0.0 || span <= 0.0 {
            return p;
        }
        let steps = (lambda * span / MAX_POISSON_MEAN).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let mu = lambda * h;
        let terms = (mu + 10.0 * mu.sqrt() + 30.0).ceil() as usize;
        let stay: Vec<f64> = self.exit.iter().map(|&e| 1.0 - e / lambda).collect();
        let mut v = vec![0.0; p.len()];
        let mut w_next = vec![0.0; p.len()];
        for _ in 0..steps {
            v.copy_from_slice(&p);
            let mut weight = (-mu).exp();
            let mut acc: Vec<f64> = v.iter().map(|&x| weight * x).collect();
            for k in 1..=terms {
                // v <- v P with P = I + Q / lambda
                for ((wn, &vi), &s) in w_next.iter_mut().zip(&v).zip(&stay) {
                    *wn = vi * s;
                }
                for &(from, to, r) in &self.edges {
                    w_next[to] += v[from] * r / lambda;
                }
                std::mem::swap(&mut v, &mut w_next);
                weight *= mu / k as f64;
                for (a, &vi) in acc.iter_mut().zip(&v) {
                    *a += weight * vi;
                }
            }
            p = acc;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RateKernel, Transition};
    use crate::schedule::TimeSchedule;

    fn mm_inf(lambda: f64, mu: f64) -> NetworkModel {
        NetworkModel::new(
            1,
            5.0,
            vec![0],
            vec![
                Transition::new(vec![1], TimeSchedule::constant(lambda), RateKernel::Constant),
                Transition::new(
                    vec![-1],
                    TimeSchedule::constant(mu),
                    RateKernel::Linear { coeffs: vec![1.0] },
                ),
            ],
        )
    }

    #[test]
    fn mm_inf_matches_poisson_transient() {
        let tr = exact_transient_moments(&mm_inf(1.0, 1.0), &[50], &[0.5, 1.0, 2.0]).unwrap();
        for s in &tr.samples {
            let exact = 1.0 - (-s.t).exp();
            assert!((s.mean[0] - exact).abs() < 1e-10, "t={}", s.t);
            assert!((s.cov[(0, 0)] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rate_model_is_point_mass() {
        let mut m = mm_inf(0.0, 0.0);
        m.initial_state = vec![4];
        let tr = exact_transient_moments(&m, &[10], &[0.0, 3.0]).unwrap();
        for s in &tr.samples {
            assert_eq!(s.mean[0], 4.0);
            assert_eq!(s.cov[(0, 0)], 0.0);
        }
    }

    #[test]
    fn cap_guard() {
        let m = NetworkModel::new(
            2,
            1.0,
            vec![0, 0],
            vec![Transition::new(
                vec![1, 0],
                TimeSchedule::constant(1.0),
                RateKernel::Constant,
            )],
        );
        assert!(matches!(
            exact_transient_moments(&m, &[2000, 2000], &[1.0]),
            Err(Error::Usage(_))
        ));
        assert!(exact_transient_moments(&m, &[1, 1], &[1.0]).is_ok());
    }

    #[test]
    fn lattice_roundtrip() {
        let l = Lattice::new(&[3, 4, 2]).unwrap();
        assert_eq!(l.size(), 60);
        for i in 0..l.size() {
            assert_eq!(l.index(&l.state(i)), Some(i));
        }
        assert_eq!(l.index(&[4, 0, 0]), None);
    }

    #[test]
    fn truncation_reflects_mass() {
        // arrivals only, cap 3: mass piles up at the cap but is conserved
        let m = NetworkModel::new(
            1,
            10.0,
            vec![0],
            vec![Transition::new(
                vec![1],
                TimeSchedule::constant(5.0),
                RateKernel::Constant,
            )],
        );
        let d = transient_distribution(&m, &[3], &[10.0]).unwrap();
        let total: f64 = d.probabilities[0].iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(d.boundary_mass()[0] > 0.99);
    }
}
