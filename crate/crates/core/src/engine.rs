//! Time stepping of the analytic moment equations.
//!
//! All three methods use classical fixed-step RK4. The integration grid is
//! aligned to every schedule breakpoint and every requested sample time, so
//! a step never straddles a parameter switch; within one interval the
//! parameters are read at its midpoint and therefore stay constant across
//! all RK stages.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::closure::{GaussianClosure, MomentPoint, DEFAULT_QUAD_ORDER};
use crate::error::{Error, Result};
use crate::model::NetworkModel;

/// Source of a set of moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Fluid,
    Adjusted,
    MeasureZero,
    Simulate,
    Exact,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Fluid,
        Method::Adjusted,
        Method::MeasureZero,
        Method::Simulate,
        Method::Exact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fluid => "fluid",
            Method::Adjusted => "adjusted",
            Method::MeasureZero => "measure-zero",
            Method::Simulate => "simulate",
            Method::Exact => "exact",
        }
    }

    /// True for the three ODE-based methods.
    pub fn is_analytic(self) -> bool {
        matches!(self, Method::Fluid | Method::Adjusted | Method::MeasureZero)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "fluid" => Ok(Method::Fluid),
            "adjusted" => Ok(Method::Adjusted),
            "measure-zero" | "measurezero" => Ok(Method::MeasureZero),
            "simulate" | "simulation" => Ok(Method::Simulate),
            "exact" => Ok(Method::Exact),
            other => Err(Error::Usage(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Maximum step length.
    pub dt: f64,
    pub method: Method,
    /// Ascending times in `[0, horizon]` at which moments are reported.
    pub sample_times: Vec<f64>,
    /// Nodes per piece for kernels integrated numerically.
    pub quad_order: usize,
}

impl SolverConfig {
    pub fn new(method: Method, sample_times: Vec<f64>) -> Self {
        SolverConfig {
            dt: 0.01,
            method,
            sample_times,
            quad_order: DEFAULT_QUAD_ORDER,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    fn check(&self, horizon: f64) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Usage(format!("dt must be positive, got {}", self.dt)));
        }
        check_grid(&self.sample_times, horizon)
    }
}

pub(crate) fn check_grid(times: &[f64], horizon: f64) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Usage("sample grid is empty".into()));
    }
    if times.iter().any(|&t| !(t >= 0.0) || t > horizon * (1.0 + 1e-12)) {
        return Err(Error::Usage(format!("sample times must lie in [0, {horizon}]")));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Usage("sample times must be strictly increasing".into()));
    }
    Ok(())
}

/// Moments at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSample {
    pub t: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub method: Method,
    pub samples: Vec<MomentSample>,
    /// Conditioning diagnostics collected during integration.
    pub warnings: Vec<String>,
}

impl MomentTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn dimension(&self) -> usize {
        self.samples.first().map_or(0, |s| s.mean.len())
    }

    /// Series of `mean[j]` over the samples.
    pub fn mean_series(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.mean[j]).collect()
    }

    /// Series of `cov[(i, j)]` over the samples.
    pub fn cov_series(&self, i: usize, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.cov[(i, j)]).collect()
    }
}

/// Dispatches on `cfg.method`; only the analytic methods are accepted.
pub fn solve(m: &NetworkModel, cfg: &SolverConfig) -> Result<MomentTrajectory> {
    match cfg.method {
        Method::Fluid => solve_fluid(m, cfg),
        Method::Adjusted => solve_adjusted(m, cfg),
        Method::MeasureZero => solve_measure_zero(m, cfg),
        other => Err(Error::Usage(format!("`{other}` is not an ODE method"))),
    }
}

/// Fluid limit: `dx/dt = F(t, x)` from the initial state; covariance zero.
pub fn solve_fluid(m: &NetworkModel, cfg: &SolverConfig) -> Result<MomentTrajectory> {
    let start = initial_point(m);
    solve_from(
        m,
        &SolverConfig {
            method: Method::Fluid,
            ..cfg.clone()
        },
        start,
        0.0,
    )
}

/// Gaussian-adjusted mean and covariance:
/// `dm/dt = G(t, m, S)`, `dS/dt = A S + S A^T + B B^T` with `A` the
/// mean-gradient of `G` and `B` the closed noise matrix.
pub fn solve_adjusted(m: &NetworkModel, cfg: &SolverConfig) -> Result<MomentTrajectory> {
    let start = initial_point(m);
    solve_from(
        m,
        &SolverConfig {
            method: Method::Adjusted,
            ..cfg.clone()
        },
        start,
        0.0,
    )
}

/// Fluid mean with the linear-noise covariance equation evaluated at the
/// fluid point, using one-sided derivatives at kinks.
pub fn solve_measure_zero(m: &NetworkModel, cfg: &SolverConfig) -> Result<MomentTrajectory> {
    let start = initial_point(m);
    solve_from(
        m,
        &SolverConfig {
            method: Method::MeasureZero,
            ..cfg.clone()
        },
        start,
        0.0,
    )
}

fn initial_point(m: &NetworkModel) -> MomentPoint {
    MomentPoint::degenerate(DVector::from_iterator(
        m.dimension,
        m.initial_state.iter().map(|&x| x as f64),
    ))
}

/// Integrates from `start` at time `t0`. Sample times before `t0` are
/// rejected.
pub fn solve_from(m: &NetworkModel, cfg: &SolverConfig, start: MomentPoint, t0: f64) -> Result<MomentTrajectory> {
    m.ensure_valid()?;
    cfg.check(m.horizon)?;
    if start.dimension() != m.dimension {
        return Err(Error::Usage("start point dimension does not match the model".into()));
    }
    if cfg.sample_times[0] < t0 {
        return Err(Error::Usage(format!(
            "sample time {} precedes start time {t0}",
            cfg.sample_times[0]
        )));
    }
    let rhs = Rhs::new(m, cfg)?;
    let d = m.dimension;

    let mut state: Vec<f64> = start.mean.iter().copied().collect();
    if rhs.with_cov() {
        state.extend(start.cov.iter().copied());
    }

    // integration nodes: t0, breakpoints after t0, sample times
    let t_end = *cfg.sample_times.last().unwrap();
    let mut nodes: Vec<f64> = m.breakpoints().into_iter().filter(|&b| b > t0 && b < t_end).collect();
    nodes.extend(cfg.sample_times.iter().copied().filter(|&s| s > t0));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let mut samples = Vec::with_capacity(cfg.sample_times.len());
    let mut warnings = Vec::new();
    let mut neg_eig_steps = 0usize;
    let mut next_sample = 0usize;
    let record = |t: f64, state: &[f64], samples: &mut Vec<MomentSample>| {
        let mean = DVector::from_column_slice(&state[..d]);
        let cov = if state.len() > d {
            DMatrix::from_column_slice(d, d, &state[d..])
        } else {
            DMatrix::zeros(d, d)
        };
        samples.push(MomentSample { t, mean, cov });
    };
    while next_sample < cfg.sample_times.len() && cfg.sample_times[next_sample] <= t0 {
        record(cfg.sample_times[next_sample], &state, &mut samples);
        next_sample += 1;
    }

    let mut t = t0;
    let mut stepper = Rk4::new(state.len());
    let mut trial = vec![0.0; state.len()];
    let locate = rhs.locates_kinks();
    let (mut kinks_now, mut kinks_next) = (Vec::new(), Vec::new());
    for &b in &nodes {
        // schedules are constant on (t, b); read them at the midpoint
        let t_par = 0.5 * (t + b);
        let mut t_cur = t;
        let mut steps = ((b - t_cur) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
        let mut h = (b - t_cur) / steps as f64;
        let mut s = 0;
        while s < steps {
            stepper.step(&rhs, t_par, &state, h, &mut trial)?;
            let mut t_now = if s + 1 == steps { b } else { t_cur + (s + 1) as f64 * h };
            if locate {
                m.kink_values(t_par, &state[..d], &mut kinks_now);
                m.kink_values(t_par, &trial[..d], &mut kinks_next);
                if side_changed(&kinks_now, &kinks_next) {
                    // bisect for the first kink crossing and stop just past it,
                    // so the next step starts on the new branch
                    let (mut lo, mut hi) = (0.0, h);
                    let mut past = trial.clone();
                    let mut probe = trial.clone();
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        stepper.step(&rhs, t_par, &state, mid, &mut probe)?;
                        m.kink_values(t_par, &probe[..d], &mut kinks_next);
                        if side_changed(&kinks_now, &kinks_next) {
                            hi = mid;
                            std::mem::swap(&mut past, &mut probe);
                        } else {
                            lo = mid;
                        }
                    }
                    if hi < h {
                        trial.copy_from_slice(&past);
                        t_now = t_cur + s as f64 * h + hi;
                        // re-grid the rest of the interval from the crossing
                        t_cur = t_now;
                        steps = ((b - t_cur) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
                        h = (b - t_cur) / steps as f64;
                        s = 0;
                        if b - t_cur <= 0.0 {
                            steps = 0;
                        }
                    } else {
                        s += 1;
                    }
                } else {
                    s += 1;
                }
            } else {
                s += 1;
            }
            if trial.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    last_good_time: t_cur,
                    reason: format!("{} state became non-finite", cfg.method),
                });
            }
            std::mem::swap(&mut state, &mut trial);
            if rhs.with_cov() {
                symmetrize(&mut state[d..], d);
                if min_eig_ratio(&state[d..], d) < -1e-4 {
                    if neg_eig_steps == 0 {
                        warnings.push(format!(
                            "covariance eigenvalue below -1e-4 * trace first at t = {t_now}"
                        ));
                    }
                    neg_eig_steps += 1;
                }
            }
        }
        t = b;
        while next_sample < cfg.sample_times.len() && cfg.sample_times[next_sample] <= t + 1e-12 {
            record(cfg.sample_times[next_sample], &state, &mut samples);
            next_sample += 1;
        }
    }
    if neg_eig_steps > 1 {
        warnings.push(format!("covariance conditioning warning on {neg_eig_steps} steps"));
    }
    Ok(MomentTrajectory {
        method: cfg.method,
        samples,
        warnings,
    })
}

fn side_changed(before: &[f64], after: &[f64]) -> bool {
    before.iter().zip(after).any(|(a, b)| (*a > 0.0) != (*b > 0.0))
}

/// Classical fourth-order Runge-Kutta with reusable stage buffers.
struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Rk4 {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, rhs: &Rhs, t: f64, y: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
        let [k1, k2, k3, k4] = &mut self.k;
        rhs.eval(t, y, k1)?;
        axpy(y, 0.5 * h, k1, &mut self.tmp);
        rhs.eval(t, &self.tmp, k2)?;
        axpy(y, 0.5 * h, k2, &mut self.tmp);
        rhs.eval(t, &self.tmp, k3)?;
        axpy(y, h, k3, &mut self.tmp);
        rhs.eval(t, &self.tmp, k4)?;
        for i in 0..y.len() {
            out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64], out: &mut [f64]) {
    for ((o, &yi), &xi) in out.iter_mut().zip(y).zip(x) {
        *o = yi + a * xi;
    }
}

fn symmetrize(cov: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
}

/// Smallest eigenvalue divided by the trace (0 for a zero matrix).
fn min_eig_ratio(cov: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_column_slice(d, d, cov);
    let tr = m.trace();
    if tr <= 0.0 {
        return 0.0;
    }
    let min = SymmetricEigen::new(m).eigenvalues.min();
    min / tr
}

/// Right-hand side of the moment ODE for one method.
struct Rhs<'a> {
    model: &'a NetworkModel,
    method: Method,
    closure: Option<GaussianClosure>,
}

impl<'a> Rhs<'a> {
    fn new(model: &'a NetworkModel, cfg: &SolverConfig) -> Result<Self> {
        let closure = match cfg.method {
            Method::Adjusted => Some(GaussianClosure::new(cfg.quad_order)?),
            Method::Fluid | Method::MeasureZero => None,
            other => return Err(Error::Usage(format!("`{other}` is not an ODE method"))),
        };
        Ok(Rhs {
            model,
            method: cfg.method,
            closure,
        })
    }

    /// Pointwise rates have kinks; the Gaussian-closed ones are smooth.
    fn locates_kinks(&self) -> bool {
        self.method != Method::Adjusted
    }

    fn with_cov(&self) -> bool {
        self.method != Method::Fluid
    }

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.model.dimension;
        match self.method {
            Method::Fluid => {
                self.model.drift_into(t, &state[..d], out);
            }
            Method::MeasureZero => {
                let x = &state[..d];
                self.model.drift_into(t, x, &mut out[..d]);
                let a = DMatrix::from_row_slice(d, d, &self.model.drift_subgradient(t, x));
                let mut diff = DMatrix::zeros(d, d);
                for tr in &self.model.transitions {
                    let r = tr.rate.eval(t, x).max(0.0);
                    if r == 0.0 {
                        continue;
                    }
                    for (i, &li) in tr.jump.iter().enumerate() {
                        for (j, &lj) in tr.jump.iter().enumerate() {
                            diff[(i, j)] += (li * lj) as f64 * r;
                        }
                    }
                }
                lyapunov_rhs(&a, &state[d..], &diff, &mut out[d..]);
            }
            Method::Adjusted => {
                let mean = DVector::from_column_slice(&state[..d]);
                let cov = DMatrix::from_column_slice(d, d, &state[d..]);
                let p = MomentPoint { mean, cov };
                let closure = self.closure.as_ref().expect("closure present for adjusted method");
                let terms = closure.evaluate(self.model, t, &p, true)?;
                out[..d].copy_from_slice(terms.drift.as_slice());
                lyapunov_rhs(&terms.jacobian, &state[d..], &terms.diffusion, &mut out[d..]);
            }
            _ => unreachable!("checked in Rhs::new"),
        }
        Ok(())
    }
}

/// `A S + S A^T + D`, with `S` and the output stored column-major.
fn lyapunov_rhs(a: &DMatrix<f64>, cov: &[f64], diffusion: &DMatrix<f64>, out: &mut [f64]) {
    let d = a.nrows();
    let s = DMatrix::from_column_slice(d, d, cov);
    let a_s = a * &s;
    let r = &a_s + a_s.transpose() + diffusion;
    out.copy_from_slice(r.as_slice());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RateKernel, Transition};
    use crate::schedule::TimeSchedule;

    fn mm_inf(lambda: TimeSchedule, mu: f64, horizon: f64) -> NetworkModel {
        NetworkModel::new(
            1,
            horizon,
            vec![0],
            vec![
                Transition::new(vec![1], lambda, RateKernel::Constant),
                Transition::new(
                    vec![-1],
                    TimeSchedule::constant(mu),
                    RateKernel::Linear { coeffs: vec![1.0] },
                ),
            ],
        )
    }

    #[test]
    fn fluid_mm_inf_analytic() {
        let m = mm_inf(TimeSchedule::constant(2.0), 1.0, 2.0);
        let tr = solve_fluid(&m, &SolverConfig::new(Method::Fluid, vec![0.0, 1.0])).unwrap();
        let exact = 2.0 * (1.0 - (-1.0f64).exp());
        assert!((tr.samples[1].mean[0] - exact).abs() < 1e-9);
        assert_eq!(tr.samples[0].mean[0], 0.0);
        assert_eq!(tr.samples[1].cov[(0, 0)], 0.0);
    }

    #[test]
    fn zero_rate_model_stays_put() {
        let mut m = mm_inf(TimeSchedule::constant(0.0), 0.0, 5.0);
        m.initial_state = vec![7];
        let tr = solve_fluid(&m, &SolverConfig::new(Method::Fluid, vec![1.0, 5.0])).unwrap();
        assert!(tr.samples.iter().all(|s| s.mean[0] == 7.0));
    }

    #[test]
    fn adjusted_mm_inf_poisson_variance() {
        let m = mm_inf(TimeSchedule::constant(2.0), 1.0, 2.0);
        let tr = solve_adjusted(&m, &SolverConfig::new(Method::Adjusted, vec![1.0])).unwrap();
        let exact = 2.0 * (1.0 - (-1.0f64).exp());
        assert!((tr.samples[0].mean[0] - exact).abs() < 1e-9);
        assert!((tr.samples[0].cov[(0, 0)] - exact).abs() < 1e-9);
    }

    #[test]
    fn breakpoint_alignment_matches_chained_segments() {
        let alt = mm_inf(TimeSchedule::new(vec![0.0, 2.0], vec![45.0, 55.0]).unwrap(), 1.0, 4.0);
        let cfg = SolverConfig::new(Method::Adjusted, vec![4.0]);
        let whole = solve_adjusted(&alt, &cfg).unwrap();

        let first = mm_inf(TimeSchedule::constant(45.0), 1.0, 4.0);
        let second = mm_inf(TimeSchedule::constant(55.0), 1.0, 4.0);
        let mid = solve_adjusted(&first, &SolverConfig::new(Method::Adjusted, vec![2.0])).unwrap();
        let s = &mid.samples[0];
        let start = MomentPoint {
            mean: s.mean.clone(),
            cov: s.cov.clone(),
        };
        let end = solve_from(&second, &cfg, start, 2.0).unwrap();
        assert!((whole.samples[0].mean[0] - end.samples[0].mean[0]).abs() <= 1e-12);
        assert!((whole.samples[0].cov[(0, 0)] - end.samples[0].cov[(0, 0)]).abs() <= 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        let m = mm_inf(TimeSchedule::constant(2.0), 1.0, 2.0);
        assert!(solve_fluid(&m, &SolverConfig::new(Method::Fluid, vec![3.0])).is_err());
        assert!(solve_fluid(&m, &SolverConfig::new(Method::Fluid, vec![1.0, 0.5])).is_err());
        assert!(solve_fluid(&m, &SolverConfig::new(Method::Fluid, vec![1.0]).with_dt(0.0)).is_err());
        assert!(solve(&m, &SolverConfig::new(Method::Simulate, vec![1.0])).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        // explosive linear growth with a huge step
        let m = NetworkModel::new(
            1,
            100.0,
            vec![1],
            vec![Transition::new(
                vec![1],
                TimeSchedule::constant(1e3),
                RateKernel::Linear { coeffs: vec![1.0] },
            )],
        );
        let r = solve_fluid(&m, &SolverConfig::new(Method::Fluid, vec![100.0]).with_dt(1.0));
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("measure_zero".parse::<Method>().unwrap(), Method::MeasureZero);
        assert!("bogus".parse::<Method>().is_err());
    }
}
