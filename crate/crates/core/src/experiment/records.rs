use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of the long-format result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub t: f64,
    pub method: String,
    /// `mean_<i>` or `cov_<i><j>` (`i <= j`), 0-based component indices
    pub stat: String,
    pub value: f64,
    /// Replications behind the value; empty for analytic methods.
    #[serde(rename = "N")]
    pub n: Option<usize>,
}

pub fn mean_stat(i: usize) -> String {
    format!("mean_{i}")
}

/// Indices are separated by `_` once the dimension exceeds 10.
pub fn cov_stat(i: usize, j: usize) -> String {
    let (i, j) = (i.min(j), i.max(j));
    if j < 10 {
        format!("cov_{i}{j}")
    } else {
        format!("cov_{i}_{j}")
    }
}

/// Statistic names in output order for a `d`-dimensional model.
pub fn stat_names(d: usize, with_cov: bool) -> Vec<String> {
    let mut names: Vec<String> = (0..d).map(mean_stat).collect();
    if with_cov {
        for i in 0..d {
            for j in i..d {
                names.push(cov_stat(i, j));
            }
        }
    }
    names
}

pub fn write_records<W: Write>(w: W, records: &[Record]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<Record>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Into::into))
        .collect()
}

/// Wide table for a single method: one row per time, one column per stat.
pub fn write_wide<W: Write>(w: W, records: &[Record]) -> Result<()> {
    let mut stats: Vec<&str> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    for r in records {
        if !stats.contains(&r.stat.as_str()) {
            stats.push(&r.stat);
        }
        if times.last() != Some(&r.t) && !times.contains(&r.t) {
            times.push(r.t);
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "N".to_string()];
    header.extend(stats.iter().map(|s| s.to_string()));
    out.write_record(&header)?;
    for &t in &times {
        let rows: Vec<&Record> = records.iter().filter(|r| r.t == t).collect();
        let mut line = vec![
            t.to_string(),
            rows.first().and_then(|r| r.n).map_or(String::new(), |n| n.to_string()),
        ];
        for s in &stats {
            line.push(
                rows.iter()
                    .find(|r| r.stat == *s)
                    .map_or(String::new(), |r| r.value.to_string()),
            );
        }
        out.write_record(&line)?;
    }
    out.flush()?;
    Ok(())
}
