use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use risloc::protocol::ProtocolConfig;
use risloc_cli::{
    load_config, output, run_point, run_sweep, with_workers, write_power_csv, write_rmse_csv, ExperimentSpec, SweepAxis,
};

#[derive(Parser)]
#[command(name = "risloc", version, about = "Monte Carlo experiments for RIS-aided multi-user localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol at the configured operating point.
    Run(Common),
    /// Sweep one parameter and write one CSV row per value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// snr, cycles, spacing, ris-size or power-scaling.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; each axis has its own defaults.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Mean received power versus element count.
    PowerScaling(Common),
    /// Small end-to-end smoke test.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// TOML experiment spec; defaults apply to anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    trials: Option<i64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "RISLOC_WORKERS")]
    workers: Option<usize>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = load_config(self.config.as_deref())?;
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(t) = self.trials {
            if t <= 0 {
                bail!("--trials must be positive, got {t}");
            }
            spec.trials = t as usize;
        }
        if self.workers.is_some() {
            spec.workers = self.workers;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn selftest() -> Result<()> {
    let spec = ExperimentSpec {
        trials: 4,
        record_cpu_time: false,
        protocol: ProtocolConfig { cycles: 3, ..Default::default() },
        ..Default::default()
    };
    let a = run_point(&spec, &spec.protocol, "selftest".into())?;
    let b = with_workers(Some(1), || run_point(&spec, &spec.protocol, "selftest".into()))??;
    if a != b {
        bail!("results depend on the worker count");
    }
    if !a.angle_rmse_nf.is_finite() || !a.angle_rmse_ff.is_finite() {
        bail!("non-finite RMSE: {a:?}");
    }
    let mut power = Vec::new();
    let small = ExperimentSpec {
        power_scaling: risloc_cli::PowerScalingSpec { n: vec![16], trials: 200, ..Default::default() },
        ..spec
    };
    write_power_csv(&mut power, &small)?;
    println!("selftest ok: angle RMSE nf {:.3} rad, ff {:.3} rad", a.angle_rmse_nf, a.angle_rmse_ff);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(c) => {
            let spec = c.spec()?;
            let row = with_workers(spec.workers, || run_point(&spec, &spec.protocol, "base".into()))??;
            write_rmse_csv(output(c.out.as_deref())?, &[row])
        }
        Command::Sweep { common, axis, values } => {
            let spec = common.spec()?;
            if axis == "power-scaling" {
                let mut spec = spec;
                if !values.is_empty() {
                    spec.power_scaling.n = values.iter().map(|&v| v as usize).collect();
                }
                return with_workers(spec.workers, || write_power_csv(output(common.out.as_deref())?, &spec))?;
            }
            let axis = SweepAxis::parse(&axis)?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let rows = with_workers(spec.workers, || run_sweep(&spec, axis, &values))??;
            write_rmse_csv(output(common.out.as_deref())?, &rows)
        }
        Command::PowerScaling(c) => {
            let mut spec = c.spec()?;
            if let Some(t) = c.trials {
                spec.power_scaling.trials = t as usize;
            }
            with_workers(spec.workers, || write_power_csv(output(c.out.as_deref())?, &spec))?
        }
        Command::Selftest => selftest(),
    }
}
