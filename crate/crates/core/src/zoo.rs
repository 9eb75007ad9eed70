//! Builders for the retrial, priority and peer networks, plus the ten
//! retrial experiment presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkModel, RateKernel, Transition};
use crate::schedule::TimeSchedule;

/// Multiserver queue with abandonment and an infinite-server retrial orbit.
///
/// `x1` counts customers at the service station (in service or waiting),
/// `x2` customers in the orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrialParams {
    pub servers: TimeSchedule,
    pub arrival: TimeSchedule,
    pub service: TimeSchedule,
    pub retrial: TimeSchedule,
    pub abandonment: TimeSchedule,
    /// probability an abandoning customer leaves for good
    pub leave_prob: TimeSchedule,
    pub initial_state: [i64; 2],
    pub horizon: f64,
}

/// Two-class preemptive priority queue; class 1 has priority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityParams {
    pub servers: TimeSchedule,
    pub arrival1: TimeSchedule,
    pub arrival2: TimeSchedule,
    pub service1: TimeSchedule,
    pub service2: TimeSchedule,
    pub initial_state: [i64; 2],
    pub horizon: f64,
}

/// Peer network: queue `x1`, active servers `x2`, inactive servers `x3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerParams {
    pub arrival: TimeSchedule,
    pub service: TimeSchedule,
    /// rate at which an active server stops serving
    pub deactivation: TimeSchedule,
    pub reactivation: TimeSchedule,
    /// probability a stopping server stays in the system as inactive
    pub stay_prob: TimeSchedule,
    pub initial_state: [i64; 3],
    pub horizon: f64,
}

fn nonneg(name: &str, s: &TimeSchedule) -> Result<()> {
    if s.min_value() < 0.0 {
        return Err(Error::Usage(format!("{name} must be nonnegative")));
    }
    Ok(())
}

fn probability(name: &str, s: &TimeSchedule) -> Result<()> {
    if s.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Usage(format!("{name} must lie in [0, 1]")));
    }
    Ok(())
}

fn start(name: &str, x0: &[i64], horizon: f64) -> Result<()> {
    if x0.iter().any(|&v| v < 0) {
        return Err(Error::Usage(format!("{name}: initial state must be nonnegative")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Usage(format!("{name}: horizon must be positive")));
    }
    Ok(())
}

fn finish(m: NetworkModel) -> Result<NetworkModel> {
    let report = m.validate();
    if !report.is_empty() {
        return Err(Error::Usage(report.to_string()));
    }
    Ok(m)
}

pub fn build_retrial(p: &RetrialParams) -> Result<NetworkModel> {
    for (name, s) in [
        ("servers", &p.servers),
        ("arrival", &p.arrival),
        ("service", &p.service),
        ("retrial", &p.retrial),
        ("abandonment", &p.abandonment),
    ] {
        nonneg(name, s)?;
    }
    probability("leave_prob", &p.leave_prob)?;
    start("retrial", &p.initial_state, p.horizon)?;

    let to_orbit = p.abandonment.product(&p.leave_prob.map(|q| 1.0 - q));
    let leave = p.abandonment.product(&p.leave_prob);
    finish(NetworkModel::new(
        2,
        p.horizon,
        p.initial_state.to_vec(),
        vec![
            Transition::new(vec![1, 0], p.arrival.clone(), RateKernel::Constant),
            Transition::new(
                vec![1, -1],
                p.retrial.clone(),
                RateKernel::Linear { coeffs: vec![0.0, 1.0] },
            ),
            Transition::new(
                vec![-1, 0],
                p.service.clone(),
                RateKernel::MinThreshold {
                    index: 0,
                    threshold: p.servers.clone(),
                },
            ),
            Transition::new(
                vec![-1, 1],
                to_orbit,
                RateKernel::PosPart {
                    index: 0,
                    threshold: p.servers.clone(),
                },
            ),
            Transition::new(
                vec![-1, 0],
                leave,
                RateKernel::PosPart {
                    index: 0,
                    threshold: p.servers.clone(),
                },
            ),
        ],
    ))
}

pub fn build_priority(p: &PriorityParams) -> Result<NetworkModel> {
    for (name, s) in [
        ("servers", &p.servers),
        ("arrival1", &p.arrival1),
        ("arrival2", &p.arrival2),
        ("service1", &p.service1),
        ("service2", &p.service2),
    ] {
        nonneg(name, s)?;
    }
    start("priority", &p.initial_state, p.horizon)?;
    finish(NetworkModel::new(
        2,
        p.horizon,
        p.initial_state.to_vec(),
        vec![
            Transition::new(vec![1, 0], p.arrival1.clone(), RateKernel::Constant),
            Transition::new(vec![0, 1], p.arrival2.clone(), RateKernel::Constant),
            Transition::new(
                vec![-1, 0],
                p.service1.clone(),
                RateKernel::MinThreshold {
                    index: 0,
                    threshold: p.servers.clone(),
                },
            ),
            Transition::new(
                vec![0, -1],
                p.service2.clone(),
                RateKernel::CappedResidual {
                    capped: 1,
                    residual: 0,
                    threshold: p.servers.clone(),
                },
            ),
        ],
    ))
}

pub fn build_peer(p: &PeerParams) -> Result<NetworkModel> {
    for (name, s) in [
        ("arrival", &p.arrival),
        ("service", &p.service),
        ("deactivation", &p.deactivation),
        ("reactivation", &p.reactivation),
    ] {
        nonneg(name, s)?;
    }
    probability("stay_prob", &p.stay_prob)?;
    start("peer", &p.initial_state, p.horizon)?;
    let on_x2 = RateKernel::Linear {
        coeffs: vec![0.0, 1.0, 0.0],
    };
    finish(NetworkModel::new(
        3,
        p.horizon,
        p.initial_state.to_vec(),
        vec![
            Transition::new(vec![1, 0, 0], p.arrival.clone(), RateKernel::Constant),
            Transition::new(
                vec![-1, 1, 0],
                p.service.clone(),
                RateKernel::MinPair { first: 0, second: 1 },
            ),
            Transition::new(vec![0, -1, 1], p.deactivation.product(&p.stay_prob), on_x2.clone()),
            Transition::new(
                vec![0, -1, 0],
                p.deactivation.product(&p.stay_prob.map(|q| 1.0 - q)),
                on_x2,
            ),
            Transition::new(
                vec![0, 1, -1],
                p.reactivation.clone(),
                RateKernel::Linear {
                    coeffs: vec![0.0, 0.0, 1.0],
                },
            ),
        ],
    ))
}

/// `(servers, lambda first, lambda second, beta, p)` for each preset.
const RETRIAL_PRESETS: [(f64, f64, f64, f64, f64); 10] = [
    (50.0, 40.0, 80.0, 2.0, 0.5),
    (50.0, 40.0, 60.0, 2.0, 0.5),
    (100.0, 80.0, 120.0, 2.0, 0.7),
    (100.0, 90.0, 110.0, 2.0, 0.7),
    (50.0, 40.0, 80.0, 1.5, 0.7),
    (50.0, 40.0, 60.0, 1.5, 0.7),
    (50.0, 45.0, 55.0, 2.0, 0.5),
    (100.0, 95.0, 105.0, 2.0, 0.5),
    (150.0, 140.0, 160.0, 2.0, 0.5),
    (150.0, 100.0, 190.0, 2.0, 0.5),
];

pub const PRESET_HORIZON: f64 = 20.0;
const PRESET_ALTERNATION: f64 = 2.0;

/// Retrial experiment `id` (1..=10), its horizon and the sample grid 6..15.
///
/// Arrivals start with the first rate at `t = 0` and the system starts
/// empty.
pub fn retrial_preset(id: usize) -> Result<(RetrialParams, f64, Vec<f64>)> {
    let &(n, l1, l2, beta, p) = id
        .checked_sub(1)
        .and_then(|k| RETRIAL_PRESETS.get(k))
        .ok_or_else(|| Error::Usage(format!("preset id must be in 1..=10, got {id}")))?;
    let params = RetrialParams {
        servers: TimeSchedule::constant(n),
        arrival: TimeSchedule::alternating(l1, l2, PRESET_ALTERNATION, PRESET_HORIZON)?,
        service: TimeSchedule::constant(1.0),
        retrial: TimeSchedule::constant(0.2),
        abandonment: TimeSchedule::constant(beta),
        leave_prob: TimeSchedule::constant(p),
        initial_state: [0, 0],
        horizon: PRESET_HORIZON,
    };
    let grid = (6..=15).map(f64::from).collect();
    Ok((params, PRESET_HORIZON, grid))
}

/// Model for retrial preset `id`.
pub fn retrial_preset_model(id: usize) -> Result<NetworkModel> {
    build_retrial(&retrial_preset(id)?.0)
}

/// Priority study: 200 servers, class-1 arrivals alternating 120/200.
pub fn priority_study(horizon: f64) -> Result<PriorityParams> {
    Ok(PriorityParams {
        servers: TimeSchedule::constant(200.0),
        arrival1: TimeSchedule::alternating(120.0, 200.0, 2.0, horizon)?,
        arrival2: TimeSchedule::constant(20.0),
        service1: TimeSchedule::constant(1.0),
        service2: TimeSchedule::constant(1.0),
        initial_state: [0, 0],
        horizon,
    })
}

/// Peer study: 10 active servers at time 0 and heavy constant arrivals.
pub fn peer_study(horizon: f64) -> PeerParams {
    PeerParams {
        arrival: TimeSchedule::constant(400.0),
        service: TimeSchedule::constant(2.0),
        deactivation: TimeSchedule::constant(0.3),
        reactivation: TimeSchedule::constant(0.5),
        stay_prob: TimeSchedule::constant(0.9),
        initial_state: [0, 10, 0],
        horizon,
    }
}
