//! Piecewise-constant functions of time.
//!
//! Every time-varying parameter of a network (arrival rates, server counts,
//! abandonment probabilities, ...) is a [`TimeSchedule`]. A schedule is
//! right-continuous: on `[b_k, b_{k+1})` it takes `values[k]`, and the last
//! value applies from the last breakpoint up to `end` (or forever when no end
//! is set).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc")]
pub struct TimeSchedule {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<f64>,
}

#[derive(Deserialize)]
struct ScheduleDoc {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    #[serde(default)]
    end: Option<f64>,
}

impl TryFrom<ScheduleDoc> for TimeSchedule {
    type Error = Error;

    fn try_from(doc: ScheduleDoc) -> Result<Self> {
        let s = TimeSchedule {
            breakpoints: doc.breakpoints,
            values: doc.values,
            end: doc.end,
        };
        s.check()?;
        Ok(s)
    }
}

impl TimeSchedule {
    /// Builds a schedule, checking that breakpoints start at zero, increase
    /// strictly and pair up one-to-one with finite values.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = TimeSchedule {
            breakpoints,
            values,
            end: None,
        };
        s.check()?;
        Ok(s)
    }

    /// Same as [`TimeSchedule::new`] but defined only on `[0, end]`.
    pub fn with_end(breakpoints: Vec<f64>, values: Vec<f64>, end: f64) -> Result<Self> {
        let s = TimeSchedule {
            breakpoints,
            values,
            end: Some(end),
        };
        s.check()?;
        Ok(s)
    }

    pub fn constant(value: f64) -> Self {
        TimeSchedule {
            breakpoints: vec![0.0],
            values: vec![value],
            end: None,
        }
    }

    /// Alternates `first`, `second`, `first`, ... every `period` time units,
    /// with breakpoints laid out up to (and excluding) `horizon`.
    pub fn alternating(first: f64, second: f64, period: f64, horizon: f64) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::Usage(format!(
                "alternation period must be positive, got {period}"
            )));
        }
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        let mut k = 0usize;
        loop {
            let b = k as f64 * period;
            if k > 0 && b >= horizon {
                break;
            }
            breakpoints.push(b);
            values.push(if k.is_multiple_of(2) { first } else { second });
            k += 1;
        }
        Self::new(breakpoints, values)
    }

    /// Applies `f` to every value, keeping the breakpoints.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        TimeSchedule {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            end: self.end,
        }
    }

    /// Pointwise product of two schedules on the union of their breakpoints.
    pub fn product(&self, other: &TimeSchedule) -> Self {
        let mut breakpoints: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(other.breakpoints.iter())
            .copied()
            .collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        let values = breakpoints
            .iter()
            .map(|&b| self.value_unchecked(b) * other.value_unchecked(b))
            .collect();
        let end = match (self.end, other.end) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        TimeSchedule {
            breakpoints,
            values,
            end,
        }
    }

    fn check(&self) -> Result<()> {
        if self.breakpoints.is_empty() {
            return Err(Error::Usage("schedule needs at least one breakpoint".into()));
        }
        if self.breakpoints.len() != self.values.len() {
            return Err(Error::Usage(format!(
                "schedule has {} breakpoints but {} values",
                self.breakpoints.len(),
                self.values.len()
            )));
        }
        if self.breakpoints[0] != 0.0 {
            return Err(Error::Usage(format!(
                "first breakpoint must be 0, got {}",
                self.breakpoints[0]
            )));
        }
        if self.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Usage("breakpoints must be strictly increasing".into()));
        }
        if self.breakpoints.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(Error::Usage("schedule entries must be finite".into()));
        }
        if let Some(end) = self.end {
            if !(end > *self.breakpoints.last().unwrap()) {
                return Err(Error::Usage("schedule end must exceed its last breakpoint".into()));
            }
        }
        Ok(())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn end(&self) -> Option<f64> {
        self.end
    }

    /// True when the schedule is defined on all of `[0, horizon]`.
    pub fn covers(&self, horizon: f64) -> bool {
        self.end.is_none_or(|e| e >= horizon)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Value at time `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("schedule evaluated at negative time {t}")));
        }
        if let Some(end) = self.end {
            if t > end {
                return Err(Error::Domain(format!("schedule ends at {end}, evaluated at {t}")));
            }
        }
        Ok(self.value_unchecked(t))
    }

    pub(crate) fn value_unchecked(&self, t: f64) -> f64 {
        // index of the last breakpoint <= t
        let k = self.breakpoints.partition_point(|&b| b <= t);
        self.values[k.saturating_sub(1)]
    }

    /// First breakpoint strictly after `t`, if any.
    pub fn next_breakpoint(&self, t: f64) -> Option<f64> {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        self.breakpoints.get(k).copied()
    }
}
