use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::records::Record;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub experiment: String,
    pub method: String,
    pub stat: String,
    pub t: f64,
    pub value: f64,
    pub reference: f64,
    /// `value - reference`
    pub diff: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiffReport {
    pub rows: Vec<DiffRow>,
}

impl DiffReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rows for one method and statistic, in time order.
    pub fn series(&self, method: &str, stat: &str) -> Vec<&DiffRow> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.stat == stat)
            .collect()
    }
}

fn times_of(records: &[Record], method: &str) -> Vec<f64> {
    let mut t: Vec<f64> = records.iter().filter(|r| r.method == method).map(|r| r.t).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Differences `method - reference` for every statistic both carry.
///
/// The two methods must report on the same time grid.
pub fn diff_methods(records: &[Record], method: &str, reference: &str) -> Result<Vec<DiffRow>> {
    let (ta, tb) = (times_of(records, method), times_of(records, reference));
    if ta.is_empty() {
        return Err(Error::Usage(format!("no results for method `{method}`")));
    }
    if tb.is_empty() {
        return Err(Error::Usage(format!("no results for reference `{reference}`")));
    }
    if ta != tb {
        return Err(Error::Usage(format!(
            "grid mismatch between `{method}` and `{reference}`"
        )));
    }
    let reference_values: BTreeMap<(&str, u64), f64> = records
        .iter()
        .filter(|r| r.method == reference)
        .map(|r| ((r.stat.as_str(), r.t.to_bits()), r.value))
        .collect();
    Ok(records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| {
            reference_values
                .get(&(r.stat.as_str(), r.t.to_bits()))
                .map(|&b| DiffRow {
                    experiment: r.experiment.clone(),
                    method: r.method.clone(),
                    stat: r.stat.clone(),
                    t: r.t,
                    value: r.value,
                    reference: b,
                    diff: r.value - b,
                })
        })
        .collect())
}

/// Every method present in `records` against `reference` (normally
/// `simulate`), in order of first appearance.
pub fn diff_report(records: &[Record], reference: &str) -> Result<DiffReport> {
    if !records.iter().any(|r| r.method == reference) {
        return Err(Error::Usage(format!("results contain no `{reference}` block")));
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if r.method != reference && !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut rows = Vec::new();
    for m in methods {
        rows.extend(diff_methods(records, m, reference)?);
    }
    Ok(DiffReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, t: f64, stat: &str, value: f64) -> Record {
        Record {
            experiment: "x".into(),
            t,
            method: method.into(),
            stat: stat.into(),
            value,
            n: None,
        }
    }

    fn sample() -> Vec<Record> {
        vec![
            rec("adjusted", 1.0, "mean_0", 3.0),
            rec("adjusted", 2.0, "mean_0", 4.0),
            rec("simulate", 1.0, "mean_0", 2.5),
            rec("simulate", 2.0, "mean_0", 4.5),
        ]
    }

    #[test]
    fn differences() {
        let r = diff_report(&sample(), "simulate").unwrap();
        let d: Vec<f64> = r.rows.iter().map(|r| r.diff).collect();
        assert_eq!(d, vec![0.5, -0.5]);
    }

    #[test]
    fn antisymmetric_and_self_zero() {
        let s = sample();
        let ab = diff_methods(&s, "adjusted", "simulate").unwrap();
        let ba = diff_methods(&s, "simulate", "adjusted").unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            assert_eq!(x.diff, -y.diff);
        }
        assert!(diff_methods(&s, "adjusted", "adjusted")
            .unwrap()
            .iter()
            .all(|r| r.diff == 0.0));
    }

    #[test]
    fn grid_mismatch() {
        let mut s = sample();
        s.push(rec("adjusted", 3.0, "mean_0", 0.0));
        assert!(matches!(diff_report(&s, "simulate"), Err(Error::Usage(_))));
    }

    #[test]
    fn needs_reference() {
        let s: Vec<Record> = sample().into_iter().filter(|r| r.method != "simulate").collect();
        assert!(matches!(diff_report(&s, "simulate"), Err(Error::Usage(_))));
    }
}
