//! Experiment specs, sweeps and CSV output behind the `risloc` binary.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use risloc::protocol::{compute_rmse, power_scaling_experiment, run_trials, PowerMode, ProtocolConfig};

pub const RMSE_HEADER: [&str; 8] =
    ["axis", "angle_rmse_nf_rad", "angle_rmse_ff_rad", "range_rmse_nf_m", "position_rmse_m", "cpu_s", "trials", "seed"];
pub const POWER_HEADER: [&str; 7] = ["n", "mode", "mean_power", "theory", "relative_error", "trials", "seed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerScalingSpec {
    pub n: Vec<usize>,
    pub rho_a: f64,
    pub rho_t: f64,
    pub trials: usize,
}

impl Default for PowerScalingSpec {
    fn default() -> Self {
        Self { n: vec![64, 256, 1024], rho_a: 1.0, rho_t: 1.0, trials: 10_000 }
    }
}

/// Everything a run needs; every field has a default so partial TOML files work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub trials: usize,
    /// Worker threads; `None` lets rayon decide.
    pub workers: Option<usize>,
    /// Off makes the CSV output byte-stable across runs.
    pub record_cpu_time: bool,
    /// Largest tolerated fraction of failed trials.
    pub failure_budget: f64,
    pub protocol: ProtocolConfig,
    pub power_scaling: PowerScalingSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 200,
            workers: None,
            record_cpu_time: true,
            failure_budget: 0.05,
            protocol: ProtocolConfig::default(),
            power_scaling: PowerScalingSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be positive");
        }
        if !(0.0..=1.0).contains(&self.failure_budget) {
            bail!("failure budget {} must lie in [0, 1]", self.failure_budget);
        }
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }
        self.protocol.validate()?;
        Ok(())
    }
}

/// Reads a TOML spec; a missing path yields the defaults.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentSpec> {
    let spec = match path {
        None => ExperimentSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Snr,
    Cycles,
    Spacing,
    RisSize,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "snr" => Self::Snr,
            "cycles" => Self::Cycles,
            "spacing" => Self::Spacing,
            "ris-size" => Self::RisSize,
            other => bail!("unknown sweep axis {other:?}"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Snr => "snr",
            Self::Cycles => "cycles",
            Self::Spacing => "spacing",
            Self::RisSize => "ris-size",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(&self) -> Vec<f64> {
        match self {
            Self::Snr => vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            Self::Cycles => vec![5.0, 10.0, 20.0, 30.0, 40.0],
            Self::Spacing => vec![0.005, 0.01, 0.02, 0.03],
            Self::RisSize => vec![6.0, 8.0, 10.0, 12.0],
        }
    }

    pub fn apply(&self, base: &ProtocolConfig, value: f64) -> Result<ProtocolConfig> {
        let mut cfg = *base;
        let as_count = |v: f64| -> Result<usize> {
            if v < 1.0 || v.fract() != 0.0 {
                bail!("{} value {v} must be a positive integer", self.name());
            }
            Ok(v as usize)
        };
        match self {
            Self::Snr => cfg.snr_db = value,
            Self::Cycles => cfg.cycles = as_count(value)?,
            Self::Spacing => cfg.panel.spacing = Some(value),
            Self::RisSize => {
                let side = as_count(value)?;
                cfg.panel.rows = side;
                cfg.panel.cols = side;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub angle_rmse_nf: f64,
    pub angle_rmse_ff: f64,
    pub range_rmse_nf: f64,
    pub position_rmse: f64,
    pub cpu_seconds: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Runs the protocol once and summarizes the final cycle.
pub fn run_point(spec: &ExperimentSpec, cfg: &ProtocolConfig, label: String) -> Result<SweepRow> {
    let runs = run_trials(cfg, spec.trials, spec.seed)?;
    let cpu_seconds = if spec.record_cpu_time { runs.iter().map(|r| r.cpu_seconds).sum() } else { 0.0 };
    let mut records = Vec::with_capacity(runs.len());
    let mut failed = 0;
    for (t, run) in runs.into_iter().enumerate() {
        match run.record {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{label}: trial {t} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed as f64 > spec.failure_budget * spec.trials as f64 {
        bail!("{label}: {failed} of {} trials failed, over the budget of {}", spec.trials, spec.failure_budget);
    }
    let r = compute_rmse(&records);
    Ok(SweepRow {
        label,
        angle_rmse_nf: r.angle_rmse_nf,
        angle_rmse_ff: r.angle_rmse_ff,
        range_rmse_nf: r.range_rmse_nf,
        position_rmse: r.position_rmse,
        cpu_seconds,
        trials: spec.trials,
        seed: spec.seed,
    })
}

pub fn run_sweep(spec: &ExperimentSpec, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            let cfg = axis.apply(&spec.protocol, v)?;
            run_point(spec, &cfg, format!("{}={v}", axis.name()))
        })
        .collect()
}

pub fn write_rmse_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RMSE_HEADER)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.angle_rmse_nf.to_string(),
            r.angle_rmse_ff.to_string(),
            r.range_rmse_nf.to_string(),
            r.position_rmse.to_string(),
            r.cpu_seconds.to_string(),
            r.trials.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_power_csv<W: Write>(out: W, spec: &ExperimentSpec) -> Result<()> {
    let p = &spec.power_scaling;
    if p.trials == 0 || p.n.is_empty() {
        bail!("power scaling needs positive trials and at least one element count");
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POWER_HEADER)?;
    for mode in [PowerMode::AllOnes, PowerMode::MaxSnr] {
        for row in power_scaling_experiment(&p.n, p.rho_a, p.rho_t, p.trials, mode, spec.seed) {
            w.write_record([
                row.n.to_string(),
                mode.name().to_string(),
                row.mean_power.to_string(),
                row.theory.to_string(),
                row.relative_error().to_string(),
                p.trials.to_string(),
                spec.seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Opens `path` for writing, or stdout when absent.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Runs `f` on a pool of `workers` threads, or the global pool when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    if workers.is_some_and(|n| n > 1) {
        log::warn!("built without the parallel feature; running on one thread");
    }
    Ok(f())
}
