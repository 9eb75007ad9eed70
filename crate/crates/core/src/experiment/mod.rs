//! Batch experiments: load a model, run a set of methods on a common grid,
//! write CSV tables and compare against simulation.

mod config;
mod records;
mod report;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub use config::{
    parse_caps, parse_config, parse_grid, parse_methods, ConfigOverrides, ExperimentConfig, ModelSource, DEFAULT_DT,
    DEFAULT_REPS, WORKERS_ENV,
};
pub use records::{cov_stat, mean_stat, read_records, stat_names, write_records, write_wide, Record};
pub use report::{diff_methods, diff_report, DiffReport, DiffRow};

use crate::engine::{solve, Method, MomentTrajectory, SolverConfig};
use crate::error::{Error, Result};
use crate::model::NetworkModel;
use crate::sim::{exact_transient_moments, simulate_ensemble, EnsembleStats};
use crate::zoo::retrial_preset;

/// Name of the combined long-format table inside an output directory.
pub const RESULTS_FILE: &str = "results.csv";
pub const STATUS_FILE: &str = "status.csv";
pub const DIFF_FILE: &str = "diff.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct MethodFailure {
    pub method: Method,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub experiment: String,
    pub methods: Vec<Method>,
    pub records: Vec<Record>,
    pub failures: Vec<MethodFailure>,
    pub warnings: Vec<(Method, String)>,
}

impl ExperimentResults {
    pub fn records_for(&self, method: Method) -> Vec<Record> {
        self.records
            .iter()
            .filter(|r| r.method == method.as_str())
            .cloned()
            .collect()
    }

    /// Worst exit code over the failed methods, 0 when all succeeded.
    pub fn exit_code(&self) -> i32 {
        self.failures.iter().map(|f| f.exit_code).max().unwrap_or(0)
    }
}

/// Model, experiment label and sample grid described by `cfg`.
pub fn load_model(cfg: &ExperimentConfig) -> Result<(NetworkModel, String, Vec<f64>)> {
    let (model, id, default_grid) = match &cfg.source {
        ModelSource::Preset(id) => {
            let (params, _, grid) = retrial_preset(*id)?;
            (crate::zoo::build_retrial(&params)?, format!("preset-{id}"), grid)
        }
        ModelSource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("model: cannot read {}: {e}", path.display())))?;
            let model = NetworkModel::from_json(&text)?;
            let id = path
                .file_stem()
                .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
            let grid = (1..=model.horizon.floor() as usize).map(|k| k as f64).collect();
            (model, id, grid)
        }
    };
    model.ensure_valid()?;
    Ok((model, id, cfg.grid.clone().unwrap_or(default_grid)))
}

fn trajectory_records(id: &str, tr: &MomentTrajectory, n: Option<usize>, with_cov: bool) -> Vec<Record> {
    let d = tr.dimension();
    let mut out = Vec::new();
    for s in &tr.samples {
        let mut push = |stat: String, value: f64| {
            out.push(Record {
                experiment: id.to_string(),
                t: s.t,
                method: tr.method.as_str().to_string(),
                stat,
                value,
                n,
            })
        };
        for i in 0..d {
            push(mean_stat(i), s.mean[i]);
        }
        if with_cov {
            for i in 0..d {
                for j in i..d {
                    push(cov_stat(i, j), s.cov[(i, j)]);
                }
            }
        }
    }
    out
}

fn ensemble_records(id: &str, stats: &EnsembleStats) -> Vec<Record> {
    trajectory_records(id, &stats.to_trajectory(), Some(stats.n), stats.cov.is_some())
}

fn run_method(
    cfg: &ExperimentConfig,
    model: &NetworkModel,
    id: &str,
    grid: &[f64],
    method: Method,
) -> Result<(Vec<Record>, Vec<String>)> {
    match method {
        Method::Simulate => {
            let stats = simulate_ensemble(model, cfg.reps, cfg.seed, grid, cfg.workers)?;
            Ok((ensemble_records(id, &stats), Vec::new()))
        }
        Method::Exact => {
            let caps = cfg
                .caps
                .as_deref()
                .ok_or_else(|| Error::Usage("caps: required by the exact method".into()))?;
            let tr = exact_transient_moments(model, caps, grid)?;
            Ok((trajectory_records(id, &tr, None, true), Vec::new()))
        }
        analytic => {
            let solver = SolverConfig {
                dt: cfg.dt,
                method: analytic,
                sample_times: grid.to_vec(),
                quad_order: cfg.quad_order,
            };
            let tr = solve(model, &solver)?;
            Ok((trajectory_records(id, &tr, None, true), tr.warnings))
        }
    }
}

/// Runs every configured method. A failing method is recorded in
/// `failures` and does not stop the others; only problems with the model or
/// the grid are returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let (model, id, grid) = load_model(cfg)?;
    crate::engine::check_grid(&grid, model.horizon)?;
    let mut results = ExperimentResults {
        experiment: id.clone(),
        methods: cfg.methods.clone(),
        records: Vec::new(),
        failures: Vec::new(),
        warnings: Vec::new(),
    };
    for &method in &cfg.methods {
        match run_method(cfg, &model, &id, &grid, method) {
            Ok((recs, warns)) => {
                results.records.extend(recs);
                results.warnings.extend(warns.into_iter().map(|w| (method, w)));
            }
            Err(e) => results.failures.push(MethodFailure {
                method,
                message: e.to_string(),
                exit_code: e.exit_code(),
            }),
        }
    }
    Ok(results)
}

/// Writes `results.csv`, one wide `<method>.csv` per successful method and
/// `status.csv` into `dir`.
pub fn write_results(results: &ExperimentResults, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records(BufWriter::new(File::create(dir.join(RESULTS_FILE))?), &results.records)?;
    let mut status = csv::Writer::from_path(dir.join(STATUS_FILE))?;
    status.write_record(["method", "status", "message"])?;
    for &m in &results.methods {
        match results.failures.iter().find(|f| f.method == m) {
            Some(f) => status.write_record([m.as_str(), "failed", f.message.as_str()])?,
            None => {
                write_wide(
                    BufWriter::new(File::create(dir.join(format!("{}.csv", m.as_str())))?),
                    &results.records_for(m),
                )?;
                status.write_record([m.as_str(), "ok", ""])?;
            }
        }
    }
    status.flush()?;
    Ok(())
}

pub fn load_results(dir: &Path) -> Result<Vec<Record>> {
    let path = dir.join(RESULTS_FILE);
    let file = File::open(&path).map_err(|e| Error::Usage(format!("in: cannot open {}: {e}", path.display())))?;
    read_records(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(methods: &str, reps: usize) -> ExperimentConfig {
        parse_config(
            None,
            ConfigOverrides {
                preset: Some(7),
                methods: Some(methods.into()),
                reps: Some(reps),
                seed: Some(3),
                grid: Some("6:8:1".into()),
                workers: Some(1),
                caps: Some("3,3".into()),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn single_replication_has_no_covariance() {
        let r = run_experiment(&cfg("simulate", 1)).unwrap();
        assert!(r.failures.is_empty());
        assert!(r.records.iter().all(|x| x.stat.starts_with("mean_")));
        assert_eq!(r.records.len(), 3 * 2);
        assert!(r.records.iter().all(|x| x.n == Some(1)));
    }

    #[test]
    fn five_blocks_and_files() {
        let c = cfg("fluid,adjusted,measure-zero,simulate,exact", 4);
        let r = run_experiment(&c).unwrap();
        // the exact method on preset 7 would need a far larger box; the
        // tiny caps run but are not meaningful, only presence matters here
        assert_eq!(r.methods.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        write_results(&r, dir.path()).unwrap();
        for m in Method::ALL {
            assert!(dir.path().join(format!("{}.csv", m.as_str())).exists());
        }
        assert_eq!(load_results(dir.path()).unwrap(), r.records);
    }

    #[test]
    fn failing_method_does_not_abort_others() {
        let mut c = cfg("adjusted,exact", 2);
        c.caps = Some(vec![5000, 5000]);
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].method, Method::Exact);
        assert!(!r.records_for(Method::Adjusted).is_empty());
        assert_eq!(r.exit_code(), 2);
    }
}
