//! Declarative description of a Poisson-driven network.
//!
//! A network of dimension `d` is a list of transitions. Transition `i` moves
//! the state by the integer vector `jump` and fires at rate
//! `coefficient(t) * kernel(x)`, so the state obeys
//!
//! ```text
//! X(t) = x0 + sum_i jump_i * Y_i( integral_0^t coefficient_i(s) kernel_i(X(s)) ds )
//! ```
//!
//! with independent unit-rate Poisson processes `Y_i`. Kernels come from a
//! small closed family of piecewise-linear shapes, every one of which is
//! Lipschitz and has a tractable Gaussian expectation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::TimeSchedule;

/// Spatial shape of a transition rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelDoc", into = "KernelDoc")]
pub enum RateKernel {
    /// `1`
    Constant,
    /// `sum_j coeffs[j] * x_j`
    Linear { coeffs: Vec<f64> },
    /// `min(x_index, n_t)`
    MinThreshold { index: usize, threshold: TimeSchedule },
    /// `(x_index - n_t)^+`
    PosPart { index: usize, threshold: TimeSchedule },
    /// `min(x_first, x_second)`
    MinPair { first: usize, second: usize },
    /// `min(x_capped, (n_t - x_residual)^+)`
    CappedResidual {
        capped: usize,
        residual: usize,
        threshold: TimeSchedule,
    },
}

impl RateKernel {
    pub fn name(&self) -> &'static str {
        match self {
            RateKernel::Constant => "constant",
            RateKernel::Linear { .. } => "linear",
            RateKernel::MinThreshold { .. } => "min_threshold",
            RateKernel::PosPart { .. } => "pos_part",
            RateKernel::MinPair { .. } => "min_pair",
            RateKernel::CappedResidual { .. } => "capped_residual",
        }
    }

    /// State components the kernel reads.
    pub fn indices(&self) -> Vec<usize> {
        match self {
            RateKernel::Constant => Vec::new(),
            RateKernel::Linear { coeffs } => (0..coeffs.len()).filter(|&j| coeffs[j] != 0.0).collect(),
            RateKernel::MinThreshold { index, .. } | RateKernel::PosPart { index, .. } => vec![*index],
            RateKernel::MinPair { first, second } => vec![*first, *second],
            RateKernel::CappedResidual { capped, residual, .. } => vec![*capped, *residual],
        }
    }

    pub fn threshold(&self) -> Option<&TimeSchedule> {
        match self {
            RateKernel::MinThreshold { threshold, .. }
            | RateKernel::PosPart { threshold, .. }
            | RateKernel::CappedResidual { threshold, .. } => Some(threshold),
            _ => None,
        }
    }

    /// Kernel value at `x`, thresholds read at time `t`.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            RateKernel::Constant => 1.0,
            RateKernel::Linear { coeffs } => coeffs.iter().zip(x).map(|(c, v)| c * v).sum(),
            RateKernel::MinThreshold { index, threshold } => x[*index].min(threshold.value_unchecked(t)),
            RateKernel::PosPart { index, threshold } => (x[*index] - threshold.value_unchecked(t)).max(0.0),
            RateKernel::MinPair { first, second } => x[*first].min(x[*second]),
            RateKernel::CappedResidual {
                capped,
                residual,
                threshold,
            } => x[*capped].min((threshold.value_unchecked(t) - x[*residual]).max(0.0)),
        }
    }

    /// One-sided derivative of the kernel, added into `grad` with weight
    /// `scale`. At a kink the min-active branch wins: `d/dx min(x, n) = 1{x <= n}`,
    /// `d/dx (x - n)^+ = 1{x > n}`, and for `min(a, b)` a tie selects `a`.
    pub fn add_subgradient(&self, t: f64, x: &[f64], scale: f64, grad: &mut [f64]) {
        match self {
            RateKernel::Constant => {}
            RateKernel::Linear { coeffs } => {
                for (g, c) in grad.iter_mut().zip(coeffs) {
                    *g += scale * c;
                }
            }
            RateKernel::MinThreshold { index, threshold } => {
                if x[*index] <= threshold.value_unchecked(t) {
                    grad[*index] += scale;
                }
            }
            RateKernel::PosPart { index, threshold } => {
                if x[*index] > threshold.value_unchecked(t) {
                    grad[*index] += scale;
                }
            }
            RateKernel::MinPair { first, second } => {
                if x[*first] <= x[*second] {
                    grad[*first] += scale;
                } else {
                    grad[*second] += scale;
                }
            }
            RateKernel::CappedResidual {
                capped,
                residual,
                threshold,
            } => {
                let room = threshold.value_unchecked(t) - x[*residual];
                if x[*capped] <= room.max(0.0) {
                    grad[*capped] += scale;
                } else if room > 0.0 {
                    grad[*residual] -= scale;
                }
            }
        }
    }

    /// Signed distances to the kernel's kinks; the kernel is smooth while
    /// none of them changes sign.
    pub fn kink_values(&self, t: f64, x: &[f64], out: &mut Vec<f64>) {
        match self {
            RateKernel::Constant | RateKernel::Linear { .. } => {}
            RateKernel::MinThreshold { index, threshold } | RateKernel::PosPart { index, threshold } => {
                out.push(x[*index] - threshold.value_unchecked(t))
            }
            RateKernel::MinPair { first, second } => out.push(x[*first] - x[*second]),
            RateKernel::CappedResidual {
                capped,
                residual,
                threshold,
            } => {
                let n = threshold.value_unchecked(t);
                out.push(x[*residual] - n);
                out.push(x[*capped] + x[*residual] - n);
            }
        }
    }

    /// Lipschitz constant of the kernel in the Euclidean norm.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            RateKernel::Linear { coeffs } => coeffs.iter().map(|c| c.abs()).sum::<f64>().max(1.0),
            _ => 1.0,
        }
    }
}

/// Serialized form of a kernel: `{variant, indices, threshold, coeffs}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelDoc {
    variant: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<TimeSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coeffs: Option<Vec<f64>>,
}

impl TryFrom<KernelDoc> for RateKernel {
    type Error = Error;

    fn try_from(doc: KernelDoc) -> Result<Self> {
        let want = |n: usize| -> Result<()> {
            if doc.indices.len() != n {
                return Err(Error::Usage(format!(
                    "kernel `{}` expects {n} indices, got {}",
                    doc.variant,
                    doc.indices.len()
                )));
            }
            Ok(())
        };
        let threshold = || {
            doc.threshold
                .clone()
                .ok_or_else(|| Error::Usage(format!("kernel `{}` needs a threshold schedule", doc.variant)))
        };
        Ok(match doc.variant.as_str() {
            "constant" => RateKernel::Constant,
            "linear" => RateKernel::Linear {
                coeffs: doc
                    .coeffs
                    .clone()
                    .ok_or_else(|| Error::Usage("kernel `linear` needs `coeffs`".into()))?,
            },
            "min_threshold" => {
                want(1)?;
                RateKernel::MinThreshold {
                    index: doc.indices[0],
                    threshold: threshold()?,
                }
            }
            "pos_part" => {
                want(1)?;
                RateKernel::PosPart {
                    index: doc.indices[0],
                    threshold: threshold()?,
                }
            }
            "min_pair" => {
                want(2)?;
                RateKernel::MinPair {
                    first: doc.indices[0],
                    second: doc.indices[1],
                }
            }
            "capped_residual" => {
                want(2)?;
                RateKernel::CappedResidual {
                    capped: doc.indices[0],
                    residual: doc.indices[1],
                    threshold: threshold()?,
                }
            }
            other => return Err(Error::Usage(format!("unknown kernel variant `{other}`"))),
        })
    }
}

impl From<RateKernel> for KernelDoc {
    fn from(k: RateKernel) -> Self {
        let variant = k.name().to_string();
        match k {
            RateKernel::Constant => KernelDoc {
                variant,
                indices: vec![],
                threshold: None,
                coeffs: None,
            },
            RateKernel::Linear { coeffs } => KernelDoc {
                variant,
                indices: vec![],
                threshold: None,
                coeffs: Some(coeffs),
            },
            RateKernel::MinThreshold { index, threshold } | RateKernel::PosPart { index, threshold } => KernelDoc {
                variant,
                indices: vec![index],
                threshold: Some(threshold),
                coeffs: None,
            },
            RateKernel::MinPair { first, second } => KernelDoc {
                variant,
                indices: vec![first, second],
                threshold: None,
                coeffs: None,
            },
            RateKernel::CappedResidual {
                capped,
                residual,
                threshold,
            } => KernelDoc {
                variant,
                indices: vec![capped, residual],
                threshold: Some(threshold),
                coeffs: None,
            },
        }
    }
}

/// Time coefficient times spatial kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTerm {
    pub coefficient: TimeSchedule,
    pub kernel: RateKernel,
}

impl RateTerm {
    pub fn new(coefficient: TimeSchedule, kernel: RateKernel) -> Self {
        RateTerm { coefficient, kernel }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.coefficient.value_unchecked(t) * self.kernel.eval(t, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub jump: Vec<i64>,
    #[serde(flatten)]
    pub rate: RateTerm,
}

impl Transition {
    pub fn new(jump: Vec<i64>, coefficient: TimeSchedule, kernel: RateKernel) -> Self {
        Transition {
            jump,
            rate: RateTerm::new(coefficient, kernel),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub dimension: usize,
    pub horizon: f64,
    pub initial_state: Vec<i64>,
    pub transitions: Vec<Transition>,
}

/// A single structural problem found by [`NetworkModel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension,
    NoTransitions,
    Horizon(f64),
    InitialState(String),
    JumpLength {
        transition: usize,
        len: usize,
    },
    ZeroJump {
        transition: usize,
    },
    IndexOutOfRange {
        transition: usize,
        index: usize,
    },
    NonFiniteCoefficient {
        transition: usize,
    },
    NegativeCoefficient {
        transition: usize,
        value: f64,
    },
    NegativeThreshold {
        transition: usize,
        value: f64,
    },
    CoverageGap {
        transition: usize,
        schedule: &'static str,
        end: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension => write!(f, "dimension must be at least 1"),
            Violation::NoTransitions => write!(f, "model has no transitions"),
            Violation::Horizon(h) => write!(f, "horizon must be positive and finite, got {h}"),
            Violation::InitialState(msg) => write!(f, "initial state: {msg}"),
            Violation::JumpLength { transition, len } => {
                write!(f, "transition {transition}: jump has length {len}")
            }
            Violation::ZeroJump { transition } => write!(f, "transition {transition}: jump vector is zero"),
            Violation::IndexOutOfRange { transition, index } => {
                write!(f, "transition {transition}: kernel index {index} out of range")
            }
            Violation::NonFiniteCoefficient { transition } => {
                write!(f, "transition {transition}: non-finite linear coefficient")
            }
            Violation::NegativeCoefficient { transition, value } => {
                write!(f, "transition {transition}: negative rate coefficient {value}")
            }
            Violation::NegativeThreshold { transition, value } => {
                write!(f, "transition {transition}: negative threshold {value}")
            }
            Violation::CoverageGap {
                transition,
                schedule,
                end,
            } => {
                write!(
                    f,
                    "transition {transition}: {schedule} schedule ends at {end}, before the horizon"
                )
            }
        }
    }
}

/// Outcome of structural validation. Empty means the model is usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl NetworkModel {
    pub fn new(dimension: usize, horizon: f64, initial_state: Vec<i64>, transitions: Vec<Transition>) -> Self {
        NetworkModel {
            dimension,
            horizon,
            initial_state,
            transitions,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: NetworkModel = serde_json::from_str(text)?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    /// Structural checks: shapes, index ranges, sign of coefficients and
    /// schedule coverage of `[0, horizon]`. Every kernel in the family is
    /// Lipschitz with linear growth, so no further regularity check is made.
    pub fn validate(&self) -> ValidationReport {
        let d = self.dimension;
        let mut v = Vec::new();
        if d == 0 {
            v.push(Violation::Dimension);
        }
        if self.transitions.is_empty() {
            v.push(Violation::NoTransitions);
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            v.push(Violation::Horizon(self.horizon));
        }
        if self.initial_state.len() != d {
            v.push(Violation::InitialState(format!(
                "length {} does not match dimension {d}",
                self.initial_state.len()
            )));
        } else if self.initial_state.iter().any(|&x| x < 0) {
            v.push(Violation::InitialState("entries must be nonnegative".into()));
        }
        for (i, tr) in self.transitions.iter().enumerate() {
            if tr.jump.len() != d {
                v.push(Violation::JumpLength {
                    transition: i,
                    len: tr.jump.len(),
                });
            } else if tr.jump.iter().all(|&j| j == 0) {
                v.push(Violation::ZeroJump { transition: i });
            }
            let kernel = &tr.rate.kernel;
            let out_of_range: Vec<usize> = match kernel {
                RateKernel::Linear { coeffs } => (d..coeffs.len()).collect(),
                _ => kernel.indices().into_iter().filter(|&j| j >= d).collect(),
            };
            for index in out_of_range {
                v.push(Violation::IndexOutOfRange { transition: i, index });
            }
            if let RateKernel::Linear { coeffs } = kernel {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    v.push(Violation::NonFiniteCoefficient { transition: i });
                }
            }
            let coef = &tr.rate.coefficient;
            if coef.min_value() < 0.0 {
                v.push(Violation::NegativeCoefficient {
                    transition: i,
                    value: coef.min_value(),
                });
            }
            if !coef.covers(self.horizon) {
                v.push(Violation::CoverageGap {
                    transition: i,
                    schedule: "coefficient",
                    end: coef.end().unwrap_or(f64::NAN),
                });
            }
            if let Some(th) = kernel.threshold() {
                if th.min_value() < 0.0 {
                    v.push(Violation::NegativeThreshold {
                        transition: i,
                        value: th.min_value(),
                    });
                }
                if !th.covers(self.horizon) {
                    v.push(Violation::CoverageGap {
                        transition: i,
                        schedule: "threshold",
                        end: th.end().unwrap_or(f64::NAN),
                    });
                }
            }
        }
        ValidationReport { violations: v }
    }

    /// Returns an error listing every violation when the model is unusable.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::Usage(format!("invalid model: {report}")))
        }
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("negative time {t}")));
        }
        if t > self.horizon * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("time {t} beyond horizon {}", self.horizon)));
        }
        Ok(())
    }

    /// Rate of transition `i` at `(t, x)`.
    pub fn eval_rate(&self, i: usize, t: f64, x: &[f64]) -> Result<f64> {
        let tr = self.transitions.get(i).ok_or_else(|| {
            Error::Usage(format!(
                "transition index {i} out of range (k = {})",
                self.transitions.len()
            ))
        })?;
        self.check_time(t)?;
        Ok(tr.rate.eval(t, x))
    }

    /// Fluid drift `F(t, x) = sum_i jump_i * rate_i(t, x)`.
    pub fn drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let mut out = vec![0.0; self.dimension];
        self.drift_into(t, x, &mut out);
        Ok(out)
    }

    pub(crate) fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for tr in &self.transitions {
            let r = tr.rate.eval(t, x);
            if r != 0.0 {
                for (o, &l) in out.iter_mut().zip(&tr.jump) {
                    *o += l as f64 * r;
                }
            }
        }
    }

    /// Jacobian of the drift using the one-sided kernel derivatives of
    /// [`RateKernel::add_subgradient`], row-major `d x d`.
    pub fn drift_subgradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dimension;
        let mut jac = vec![0.0; d * d];
        let mut grad = vec![0.0; d];
        for tr in &self.transitions {
            let c = tr.rate.coefficient.value_unchecked(t);
            if c == 0.0 {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            tr.rate.kernel.add_subgradient(t, x, c, &mut grad);
            for (r, &l) in tr.jump.iter().enumerate() {
                if l != 0 {
                    for (c, g) in grad.iter().enumerate() {
                        jac[r * d + c] += l as f64 * g;
                    }
                }
            }
        }
        jac
    }

    /// Kink distances of all transitions with a non-zero coefficient.
    pub(crate) fn kink_values(&self, t: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for tr in &self.transitions {
            if tr.rate.coefficient.value_unchecked(t) != 0.0 {
                tr.rate.kernel.kink_values(t, x, out);
            }
        }
    }

    /// Every breakpoint of every schedule in the model that falls in `(0, horizon)`,
    /// sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .transitions
            .iter()
            .flat_map(|tr| {
                let th = tr.rate.kernel.threshold().map(|s| s.breakpoints()).unwrap_or(&[]);
                tr.rate.coefficient.breakpoints().iter().chain(th.iter()).copied()
            })
            .filter(|&b| b > 0.0 && b < self.horizon)
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}
