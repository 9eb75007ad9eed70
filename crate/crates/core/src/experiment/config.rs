use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::engine::Method;
use crate::error::{Error, Result};

/// Environment variable holding the default number of simulation workers.
pub const WORKERS_ENV: &str = "QTRANSIENT_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Preset(usize),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: ModelSource,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    pub dt: f64,
    /// Sample grid; `None` uses the preset grid or the integer times of the
    /// model horizon.
    pub grid: Option<Vec<f64>>,
    pub out: PathBuf,
    pub quad_order: usize,
    /// Truncation box for the exact method.
    pub caps: Option<Vec<usize>>,
    pub workers: usize,
}

/// Every field optional; used both for config files and for command-line
/// flags, with flags taking precedence.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub preset: Option<usize>,
    pub model: Option<PathBuf>,
    pub methods: Option<String>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub grid: Option<String>,
    pub out: Option<PathBuf>,
    pub quad_order: Option<usize>,
    pub caps: Option<String>,
    pub workers: Option<usize>,
}

impl ConfigOverrides {
    /// `self` with every unset field taken from `base`.
    pub fn or(self, base: ConfigOverrides) -> ConfigOverrides {
        ConfigOverrides {
            preset: self.preset.or(base.preset),
            model: self.model.or(base.model),
            methods: self.methods.or(base.methods),
            reps: self.reps.or(base.reps),
            seed: self.seed.or(base.seed),
            dt: self.dt.or(base.dt),
            grid: self.grid.or(base.grid),
            out: self.out.or(base.out),
            quad_order: self.quad_order.or(base.quad_order),
            caps: self.caps.or(base.caps),
            workers: self.workers.or(base.workers),
        }
    }
}

pub const DEFAULT_REPS: usize = 1000;
pub const DEFAULT_DT: f64 = 0.01;

/// Reads the optional JSON config file, applies `flags` on top and validates
/// the result. A relative model path in the file is resolved against the
/// file's directory.
pub fn parse_config(file: Option<&Path>, flags: ConfigOverrides) -> Result<ExperimentConfig> {
    let merged = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("config: cannot read {}: {e}", path.display())))?;
            let mut base: ConfigOverrides =
                serde_json::from_str(&text).map_err(|e| Error::Usage(format!("config: {e}")))?;
            if let (Some(m), Some(dir)) = (&base.model, path.parent()) {
                if m.is_relative() {
                    base.model = Some(dir.join(m));
                }
            }
            flags.or(base)
        }
        None => flags,
    };
    build(merged)
}

fn build(c: ConfigOverrides) -> Result<ExperimentConfig> {
    let source = match (c.preset, c.model) {
        (Some(_), Some(_)) => return Err(Error::Usage("model: give either preset or model, not both".into())),
        (Some(id), None) => {
            if !(1..=10).contains(&id) {
                return Err(Error::Usage(format!("preset: must be in 1..=10, got {id}")));
            }
            ModelSource::Preset(id)
        }
        (None, Some(path)) => ModelSource::File(path),
        (None, None) => return Err(Error::Usage("model: missing, give --preset or --model".into())),
    };
    let methods = parse_methods(
        c.methods
            .as_deref()
            .ok_or_else(|| Error::Usage("methods: missing, give --methods".into()))?,
    )?;
    let reps = c.reps.unwrap_or(DEFAULT_REPS);
    if reps == 0 && methods.contains(&Method::Simulate) {
        return Err(Error::Usage("reps: at least one replication is required".into()));
    }
    let dt = c.dt.unwrap_or(DEFAULT_DT);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Usage(format!("dt: must be positive, got {dt}")));
    }
    let grid = c.grid.as_deref().map(parse_grid).transpose()?;
    let caps = c.caps.as_deref().map(parse_caps).transpose()?;
    if methods.contains(&Method::Exact) && caps.is_none() {
        return Err(Error::Usage("caps: required by the exact method".into()));
    }
    let quad_order = c.quad_order.unwrap_or(crate::closure::DEFAULT_QUAD_ORDER);
    if quad_order == 0 {
        return Err(Error::Usage("quad_order: must be positive".into()));
    }
    let workers = match c.workers {
        Some(w) => w,
        None => default_workers()?,
    }
    .max(1);
    Ok(ExperimentConfig {
        source,
        methods,
        reps,
        seed: c.seed.unwrap_or(0),
        dt,
        grid,
        out: c.out.unwrap_or_else(|| PathBuf::from("qtransient-out")),
        quad_order,
        caps,
        workers,
    })
}

fn default_workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{WORKERS_ENV}: expected a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Comma-separated method names; duplicates are dropped, order kept.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let m: Method = name
            .parse()
            .map_err(|_| Error::Usage(format!("methods: unknown method `{name}`")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("methods: at least one method is required".into()));
    }
    Ok(out)
}

/// `t0:t1:step`, inclusive of `t1` up to rounding.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("grid: expected t0:t1:step, got `{s}`")))?;
    let [t0, t1, step] = parts[..] else {
        return Err(Error::Usage(format!("grid: expected t0:t1:step, got `{s}`")));
    };
    if !(step > 0.0) || !(t1 >= t0) || !(t0 >= 0.0) || !t1.is_finite() {
        return Err(Error::Usage(format!("grid: invalid range `{s}`")));
    }
    let count = ((t1 - t0) / step + 1e-9).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(Error::Usage("grid: too many points".into()));
    }
    Ok((0..count).map(|k| t0 + k as f64 * step).collect())
}

pub fn parse_caps(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("caps: expected comma-separated integers, got `{s}`")))
}
