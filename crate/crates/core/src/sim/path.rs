use rand::Rng;
use rand_distr::Exp1;

use crate::engine::check_grid;
use crate::error::{Error, Result};
use crate::model::NetworkModel;

use super::RngStream;

/// One exact sample path of the network, recorded at `sample_times`.
///
/// Between events and schedule breakpoints every rate is constant, so the
/// next event is an exponential race; if the race outlasts the next
/// breakpoint, time advances to the breakpoint and the race restarts with
/// the new parameters. The value recorded at a sample time is the state of
/// the right-continuous path at that time.
pub fn simulate_path(m: &NetworkModel, stream: &RngStream, sample_times: &[f64]) -> Result<Vec<Vec<i64>>> {
    m.ensure_valid()?;
    check_grid(sample_times, m.horizon)?;
    let breakpoints = m.breakpoints();
    let mut rng = stream.rng();
    run_path(m, &breakpoints, &mut rng, sample_times)
}

pub(crate) fn run_path<R: Rng + ?Sized>(
    m: &NetworkModel,
    breakpoints: &[f64],
    rng: &mut R,
    sample_times: &[f64],
) -> Result<Vec<Vec<i64>>> {
    let t_end = *sample_times.last().expect("grid checked non-empty");
    let mut x: Vec<i64> = m.initial_state.clone();
    let mut xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut rates = vec![0.0; m.transitions.len()];
    let mut out = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0;
    let mut next_bp = 0;
    let mut t = 0.0;

    loop {
        while next_bp < breakpoints.len() && breakpoints[next_bp] <= t {
            next_bp += 1;
        }
        let t_switch = breakpoints.get(next_bp).copied().unwrap_or(f64::INFINITY);

        let mut total = 0.0;
        for (r, tr) in rates.iter_mut().zip(&m.transitions) {
            *r = tr.rate.eval(t, &xf).max(0.0);
            total += *r;
        }
        if !total.is_finite() {
            return Err(Error::Model(format!("total event rate is {total} at t = {t}")));
        }
        let t_event = if total > 0.0 {
            let e: f64 = rng.sample(Exp1);
            t + e / total
        } else {
            f64::INFINITY
        };
        let t_next = t_event.min(t_switch);

        while next_sample < sample_times.len() && sample_times[next_sample] < t_next {
            out.push(x.clone());
            next_sample += 1;
        }
        if next_sample == sample_times.len() || t_next > t_end {
            while out.len() < sample_times.len() {
                out.push(x.clone());
            }
            return Ok(out);
        }

        if t_event < t_switch {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = rates.len() - 1;
            for (i, &r) in rates.iter().enumerate() {
                if u < r {
                    chosen = i;
                    break;
                }
                u -= r;
            }
            // guard against rounding landing on a zero-rate transition
            if rates[chosen] == 0.0 {
                chosen = rates.iter().rposition(|&r| r > 0.0).expect("positive total rate");
            }
            for ((xi, xfi), &l) in x.iter_mut().zip(xf.iter_mut()).zip(&m.transitions[chosen].jump) {
                *xi += l;
                *xfi = *xi as f64;
            }
        }
        t = t_next;
    }
}
