//! Cyclic transmit / localize / optimize protocol and the Monte Carlo harness.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ccm::{optimize_phase_shifts, CcmConfig};
use crate::channel::{cascaded_channel, complex_gaussian_vector, received_signal, reflect, ScenarioTruth};
use crate::crb::{CrbObjective, CrbWeights};
use crate::dictionary::{AtomDictionary, AtomLocation, AtomSignals, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{cartesian, classify_region, near_field_boundary, Region, RisConfig, SphericalPoint};
use crate::localizer::{localize_signals, LocalizerConfig};
use crate::parallel::map_trials;
use crate::phase::PhasePoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSpec {
    pub rows: usize,
    pub cols: usize,
    pub carrier_hz: f64,
    /// Element spacing in metres; half a wavelength when absent.
    pub spacing: Option<f64>,
}

impl Default for PanelSpec {
    fn default() -> Self {
        Self { rows: 10, cols: 10, carrier_hz: 5e9, spacing: None }
    }
}

impl PanelSpec {
    pub fn build(&self) -> Result<RisConfig> {
        if !(self.carrier_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("carrier {} must be positive", self.carrier_hz)));
        }
        let wavelength = crate::geometry::SPEED_OF_LIGHT / self.carrier_hz;
        RisConfig::new(self.rows, self.cols, self.spacing.unwrap_or(wavelength / 2.0), wavelength)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub users: usize,
    pub scatters: usize,
    /// Radius of the half-ball in front of the panel that holds users and scatters.
    pub localization_range: f64,
    /// `|α_kl| / |α_k|`.
    pub scatter_gain_ratio: f64,
    /// Standard deviation `ρ_A` of the RIS-BS channel entries.
    pub ris_bs_std: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { users: 2, scatters: 3, localization_range: 10.0, scatter_gain_ratio: 0.3, ris_bs_std: 1.0 }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::InvalidConfig("need at least one user".into()));
        }
        if !(self.localization_range > 0.0) {
            return Err(Error::InvalidConfig("localization range must be positive".into()));
        }
        if !(self.scatter_gain_ratio >= 0.0 && self.scatter_gain_ratio < 1.0) {
            return Err(Error::InvalidConfig("scatter gain ratio must lie in [0, 1)".into()));
        }
        if !(self.ris_bs_std > 0.0) {
            return Err(Error::InvalidConfig("RIS-BS channel deviation must be positive".into()));
        }
        Ok(())
    }

    /// Number of users drawn in the near field; the rest are far-field.
    pub fn near_users(&self) -> usize {
        self.users.div_ceil(2)
    }
}

/// Which atoms the localizer may choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictionaryMode {
    #[default]
    Hybrid,
    FarOnly,
    NearOnly,
}

/// How the phases of cycles after the first are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhasePolicy {
    /// Minimize the weighted CRB of the current estimates.
    #[default]
    Optimized,
    /// Fresh uniform random phases every cycle.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub cycles: usize,
    pub phases: PhasePolicy,
    pub snr_db: f64,
    pub dictionary: DictionaryMode,
    pub panel: PanelSpec,
    pub scenario: ScenarioConfig,
    pub grid: GridSpec,
    pub localizer: LocalizerConfig,
    pub ccm: CcmConfig,
    pub weights: CrbWeights,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            cycles: 20,
            phases: PhasePolicy::Optimized,
            snr_db: 0.0,
            dictionary: DictionaryMode::Hybrid,
            panel: PanelSpec::default(),
            scenario: ScenarioConfig::default(),
            grid: GridSpec::default(),
            localizer: LocalizerConfig::default(),
            ccm: CcmConfig::default(),
            weights: CrbWeights::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::InvalidConfig("need at least one cycle".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidConfig("SNR must be a number".into()));
        }
        self.panel.build()?;
        self.scenario.validate()?;
        self.grid.validate()?;
        self.localizer.validate()?;
        self.ccm.validate()?;
        self.weights.validate()
    }

    pub fn build_dictionary(&self, ris: &RisConfig) -> Result<AtomDictionary> {
        let full = AtomDictionary::build(ris, &self.grid)?;
        match self.dictionary {
            DictionaryMode::Hybrid => Ok(full),
            DictionaryMode::FarOnly => full.far_only(),
            DictionaryMode::NearOnly => full.near_only(),
        }
    }
}

/// Uniform-in-volume point of the half-ball `x > 0`, radius `radius`, range at least `r_min`.
fn sample_half_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64, r_min: f64) -> SphericalPoint {
    loop {
        let x = rng.random_range(0.0..radius);
        let y = rng.random_range(-radius..radius);
        let z = rng.random_range(-radius..radius);
        let r = (x * x + y * y + z * z).sqrt();
        if x > 0.0 && r <= radius && r >= r_min {
            if let Ok(p) = SphericalPoint::from_cartesian(x, y, z) {
                return p;
            }
        }
    }
}

fn unit_phase<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
}

/// Draws users (first `⌈K/2⌉` in the near field), scatters and gains.
///
/// The noise power is left at zero; see [`snr_calibration`].
pub fn scenario_sampler<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    ris: &RisConfig,
    r_min: f64,
    rng: &mut R,
) -> Result<ScenarioTruth> {
    cfg.validate()?;
    let near = cfg.near_users();
    let users = (0..cfg.users)
        .map(|k| {
            let want = if k < near { Region::NearField } else { Region::FarField };
            for _ in 0..1_000_000 {
                let p = sample_half_ball(rng, cfg.localization_range, r_min);
                if classify_region(&p, ris) == want {
                    return Ok(p);
                }
            }
            Err(Error::InvalidConfig(format!("no {want:?} point inside the localization range")))
        })
        .collect::<Result<Vec<_>>>()?;
    let scatters: Vec<SphericalPoint> =
        (0..cfg.scatters).map(|_| sample_half_ball(rng, cfg.localization_range, r_min)).collect();
    let direct_gains: Vec<Complex64> = (0..cfg.users).map(|_| unit_phase(rng)).collect();
    let scatter_gains = direct_gains
        .iter()
        .map(|a| (0..cfg.scatters).map(|_| cfg.scatter_gain_ratio * a.norm() * unit_phase(rng)).collect())
        .collect();
    let ris_bs_channels =
        (0..cfg.users).map(|_| complex_gaussian_vector(rng, ris.len(), cfg.ris_bs_std * cfg.ris_bs_std)).collect();
    let tx_symbols = (0..cfg.users).map(|_| unit_phase(rng)).collect();
    Ok(ScenarioTruth { users, scatters, direct_gains, scatter_gains, ris_bs_channels, noise_power: 0.0, tx_symbols })
}

/// `σ² = mean_k |h_Aᵀ h_t0|² / 10^(snr/10)`: direct-path power with all phases at one.
pub fn snr_calibration(truth: &ScenarioTruth, ris: &RisConfig, snr_db: f64) -> Result<f64> {
    let k = truth.num_users();
    if k == 0 {
        return Err(Error::ZeroDirectPath);
    }
    let mut power = 0.0;
    for u in 0..k {
        let h = cascaded_channel(&truth.ris_bs_channels[u], &truth.direct_channel(u, ris))?;
        power += h.iter().sum::<Complex64>().norm_sqr();
    }
    power /= k as f64;
    if !(power > 0.0) {
        return Err(Error::ZeroDirectPath);
    }
    Ok(power / 10f64.powf(snr_db / 10.0))
}

/// Error of one user's estimate at one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserError {
    pub region: Region,
    pub estimated_region: Region,
    pub polar_error: f64,
    pub azimuth_error: f64,
    /// Near-field users only; a far-field atom sits at the boundary range of its direction.
    pub range_error: Option<f64>,
    pub position_error: Option<f64>,
    pub estimated_index: usize,
    /// Grid point closest to the truth: Cartesian distance among near-field
    /// atoms for near-field users, angular distance among far-field atoms otherwise.
    pub nearest_index: usize,
    pub grid_distance: f64,
}

impl UserError {
    pub fn misjudged(&self) -> bool {
        self.estimated_index != self.nearest_index
    }
}

/// Range an estimate implies: the atom's range, or the near-field boundary along its direction.
pub fn implied_range(loc: &AtomLocation, ris: &RisConfig, r_min: f64) -> f64 {
    match loc {
        AtomLocation::Near(p) => p.range(),
        AtomLocation::Far { polar, azimuth } => near_field_boundary(*polar, *azimuth, ris).unwrap_or(r_min),
    }
}

fn direction(polar: f64, azimuth: f64) -> [f64; 3] {
    cartesian(1.0, polar, azimuth)
}

fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0).acos()
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Closest dictionary atom to `truth` under the metric of its region.
pub fn nearest_grid_point(truth: &SphericalPoint, region: Region, dict: &AtomDictionary) -> (usize, f64) {
    let xyz = truth.to_cartesian();
    let dir = direction(truth.polar(), truth.azimuth());
    let use_near = region == Region::NearField && dict.near_count() > 0 || dict.far_count() == 0;
    let mut best = (0, f64::INFINITY);
    for (i, loc) in dict.locations().iter().enumerate() {
        let d = match (use_near, loc) {
            (true, AtomLocation::Near(p)) => distance(xyz, p.to_cartesian()),
            (false, AtomLocation::Far { polar, azimuth }) => angle_between(dir, direction(*polar, *azimuth)),
            _ => continue,
        };
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn user_error(
    truth: &SphericalPoint,
    estimate_index: usize,
    dict: &AtomDictionary,
    ris: &RisConfig,
    r_min: f64,
) -> UserError {
    let region = classify_region(truth, ris);
    let est = dict.location(estimate_index);
    let (range_error, position_error) = if region == Region::NearField {
        let r = implied_range(est, ris, r_min);
        let xyz = cartesian(r, est.polar(), est.azimuth());
        (Some(r - truth.range()), Some(distance(xyz, truth.to_cartesian())))
    } else {
        (None, None)
    };
    let (nearest_index, grid_distance) = nearest_grid_point(truth, region, dict);
    UserError {
        region,
        estimated_region: est.region(),
        polar_error: est.polar() - truth.polar(),
        azimuth_error: est.azimuth() - truth.azimuth(),
        range_error,
        position_error,
        estimated_index: estimate_index,
        nearest_index,
        grid_distance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub coarse_indices: Vec<usize>,
    pub user_indices: Vec<usize>,
    pub support: Vec<usize>,
    pub coarse_loss: f64,
    pub refined_loss: f64,
    pub rank_deficient: bool,
    pub errors: Vec<UserError>,
    /// Objective before and after optimizing the next cycle's phases.
    pub objective_initial: Option<f64>,
    pub objective_final: Option<f64>,
    pub ccm_iterations: usize,
    /// Optimization failed and the next cycle uses random phases.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub truth: ScenarioTruth,
    pub cycles: Vec<CycleRecord>,
    /// Final estimated user locations.
    pub user_locations: Vec<AtomLocation>,
    pub fallbacks: usize,
}

impl TrialRecord {
    pub fn last(&self) -> &CycleRecord {
        self.cycles.last().expect("at least one cycle")
    }

    /// Record at 1-based cycle `c`.
    pub fn at(&self, c: usize) -> Option<&CycleRecord> {
        self.cycles.get(c.checked_sub(1)?)
    }
}

/// Runs all cycles of the protocol on one scenario.
pub fn run_protocol<R: Rng + ?Sized>(
    truth: &ScenarioTruth,
    dict: &AtomDictionary,
    ris: &RisConfig,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<TrialRecord> {
    truth.validate(ris)?;
    if dict.elements() != ris.len() {
        return Err(Error::Dimension("dictionary and panel disagree on element count".into()));
    }
    let k = truth.num_users();
    let channels = (0..k).map(|u| truth.cascaded(u, ris)).collect::<Result<Vec<_>>>()?;
    let mut signals: Vec<AtomSignals> = (0..k).map(|u| AtomSignals::new(u, dict.len())).collect();
    let mut received: Vec<Vec<Complex64>> = vec![Vec::with_capacity(cfg.cycles); k];
    let mut history: Vec<PhasePoint> = Vec::with_capacity(cfg.cycles);
    let mut beta = PhasePoint::random(ris.len(), rng);
    let mut cycles = Vec::with_capacity(cfg.cycles);
    let mut fallbacks = 0;
    let mut user_locations = Vec::new();

    for c in 1..=cfg.cycles {
        for u in 0..k {
            let s = truth.tx_symbols[u];
            received[u].push(received_signal(&beta, &channels[u], s, truth.noise_power, rng)?);
            signals[u].push_cycle(&beta, &truth.ris_bs_channels[u], dict, s)?;
        }
        history.push(beta.clone());
        let res = localize_signals(&received, &signals, dict, &cfg.localizer)?;
        let errors = truth
            .users
            .iter()
            .zip(&res.user_indices)
            .map(|(p, &i)| user_error(p, i, dict, ris, cfg.grid.r_min))
            .collect();

        let mut record = CycleRecord {
            cycle: c,
            coarse_indices: res.coarse_indices.clone(),
            user_indices: res.user_indices.clone(),
            support: res.support.clone(),
            coarse_loss: res.coarse_loss,
            refined_loss: res.refined_loss,
            rank_deficient: res.rank_deficient,
            errors,
            objective_initial: None,
            objective_final: None,
            ccm_iterations: 0,
            fallback: false,
        };

        if c < cfg.cycles && cfg.phases == PhasePolicy::Random {
            beta = PhasePoint::random(ris.len(), rng);
        } else if c < cfg.cycles {
            let objective = CrbObjective::from_estimates(
                &res.user_locations,
                &res.user_gains,
                &truth.ris_bs_channels,
                &truth.tx_symbols,
                &history,
                truth.noise_power,
                &cfg.weights,
                ris,
            );
            let outcome = objective.and_then(|o| optimize_phase_shifts(&o, beta.clone(), &cfg.ccm));
            match outcome {
                Ok(out) if out.objective.is_some() => {
                    record.objective_initial = out.initial_objective;
                    record.objective_final = out.objective;
                    record.ccm_iterations = out.iterations();
                    beta = out.beta;
                }
                other => {
                    let why = match other {
                        Err(e) => e.to_string(),
                        Ok(out) => out.diagnostic.map_or_else(|| "no objective".into(), |e| e.to_string()),
                    };
                    log::debug!("cycle {c}: phase optimization failed ({why}); using random phases");
                    record.fallback = true;
                    fallbacks += 1;
                    beta = PhasePoint::random(ris.len(), rng);
                }
            }
        }
        user_locations = res.user_locations;
        cycles.push(record);
    }

    Ok(TrialRecord { truth: truth.clone(), cycles, user_locations, fallbacks })
}

/// Samples a scenario, calibrates the noise and runs the protocol.
pub fn run_trial<R: Rng + ?Sized>(
    dict: &AtomDictionary,
    ris: &RisConfig,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<TrialRecord> {
    let mut truth = scenario_sampler(&cfg.scenario, ris, cfg.grid.r_min, rng)?;
    truth.noise_power = snr_calibration(&truth, ris, cfg.snr_db)?;
    run_protocol(&truth, dict, ris, cfg, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub record: Result<TrialRecord>,
    /// Wall time of the trial on its worker thread.
    pub cpu_seconds: f64,
}

/// Runs `trials` independent trials; trial `t` draws from stream `(seed, t)`.
pub fn run_trials(cfg: &ProtocolConfig, trials: usize, seed: u64) -> Result<Vec<TrialRun>> {
    cfg.validate()?;
    let ris = cfg.panel.build()?;
    let dict = cfg.build_dictionary(&ris)?;
    Ok(map_trials(trials, seed, |_, rng| {
        let start = Instant::now();
        let record = run_trial(&dict, &ris, cfg, rng);
        TrialRun { record, cpu_seconds: start.elapsed().as_secs_f64() }
    }))
}

/// Root-mean-square errors, pooled over users and trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    /// Pooled over the polar and azimuth axes.
    pub angle_rmse_nf: f64,
    pub angle_rmse_ff: f64,
    pub range_rmse_nf: f64,
    /// Near-field users only; far-field users have no range estimate.
    pub position_rmse: f64,
    pub nf_samples: usize,
    pub ff_samples: usize,
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// RMSE from per-user errors.
pub fn rmse_from_errors<'a>(errors: impl IntoIterator<Item = &'a UserError>) -> RmseReport {
    let (mut ang_nf, mut ang_ff, mut range, mut pos) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for e in errors {
        match e.region {
            Region::NearField => {
                ang_nf.extend([e.polar_error, e.azimuth_error]);
                range.extend(e.range_error);
                pos.extend(e.position_error);
            }
            Region::FarField => ang_ff.extend([e.polar_error, e.azimuth_error]),
        }
    }
    RmseReport {
        angle_rmse_nf: rms(&ang_nf),
        angle_rmse_ff: rms(&ang_ff),
        range_rmse_nf: rms(&range),
        position_rmse: rms(&pos),
        nf_samples: ang_nf.len() / 2,
        ff_samples: ang_ff.len() / 2,
    }
}

/// RMSE at 1-based cycle `c` (clamped to each trial's last cycle).
pub fn compute_rmse_at(records: &[TrialRecord], c: usize) -> RmseReport {
    rmse_from_errors(records.iter().flat_map(|r| {
        let rec = r.at(c).unwrap_or_else(|| r.last());
        rec.errors.iter()
    }))
}

/// RMSE at each trial's final cycle.
pub fn compute_rmse(records: &[TrialRecord]) -> RmseReport {
    rmse_from_errors(records.iter().flat_map(|r| r.last().errors.iter()))
}

/// Per-trial position RMSE over near-field users at cycle `c`; trials without one are skipped.
pub fn trial_position_errors(records: &[TrialRecord], c: usize) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| {
            let rec = r.at(c).unwrap_or_else(|| r.last());
            let v: Vec<f64> = rec.errors.iter().filter_map(|e| e.position_error).collect();
            (!v.is_empty()).then(|| rms(&v))
        })
        .collect()
}

/// Percentile bootstrap interval of `stat` at confidence `level`.
pub fn bootstrap_ci<R, F>(values: &[f64], stat: F, resamples: usize, level: f64, rng: &mut R) -> (f64, f64)
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    if values.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let sample: Vec<f64> = (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).collect();
            stat(&sample)
        })
        .collect();
    stats.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - level) / 2.0;
    let idx = |q: f64| ((q * (resamples - 1) as f64).round() as usize).min(resamples - 1);
    (stats[idx(tail)], stats[idx(1.0 - tail)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMode {
    /// All phases one.
    AllOnes,
    /// `β_n = exp(−j·arg(h_A,n h_t,n))`.
    MaxSnr,
}

impl PowerMode {
    pub fn name(&self) -> &'static str {
        match self {
            PowerMode::AllOnes => "all-ones",
            PowerMode::MaxSnr => "max-snr",
        }
    }

    /// Large-`N` mean power.
    pub fn theory(&self, n: usize, rho_a: f64, rho_t: f64) -> f64 {
        let p = rho_a * rho_a * rho_t * rho_t;
        let n = n as f64;
        match self {
            PowerMode::AllOnes => n * p,
            PowerMode::MaxSnr => n * n * PI * PI * p / 16.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerScalingRow {
    pub n: usize,
    pub mode: PowerMode,
    pub mean_power: f64,
    pub theory: f64,
}

impl PowerScalingRow {
    pub fn relative_error(&self) -> f64 {
        (self.mean_power - self.theory).abs() / self.theory
    }
}

/// `|h|²` for one draw of i.i.d. `h_A ~ CN(0, ρ_A²)`, `h_t ~ CN(0, ρ_t²)`.
pub fn power_draw<R: Rng + ?Sized>(n: usize, rho_a: f64, rho_t: f64, mode: PowerMode, rng: &mut R) -> f64 {
    let h_a = complex_gaussian_vector(rng, n, rho_a * rho_a);
    let h_t = complex_gaussian_vector(rng, n, rho_t * rho_t);
    let h: Vec<Complex64> = h_a.iter().zip(&h_t).map(|(a, t)| a * t).collect();
    let beta: Vec<Complex64> = match mode {
        PowerMode::AllOnes => vec![Complex64::new(1.0, 0.0); n],
        PowerMode::MaxSnr => h.iter().map(|x| Complex64::from_polar(1.0, -x.arg())).collect(),
    };
    reflect(&beta, &h).norm_sqr()
}

/// Mean received power per element count.
pub fn power_scaling_experiment(
    n_list: &[usize],
    rho_a: f64,
    rho_t: f64,
    trials: usize,
    mode: PowerMode,
    seed: u64,
) -> Vec<PowerScalingRow> {
    n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let stream_seed = seed.wrapping_add(i as u64);
            let draws = map_trials(trials, stream_seed, |_, rng| power_draw(n, rho_a, rho_t, mode, rng));
            let mean_power = draws.iter().sum::<f64>() / trials.max(1) as f64;
            PowerScalingRow { n, mode, mean_power, theory: mode.theory(n, rho_a, rho_t) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::trial_rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn sampler_splits_users_by_region() {
        let ris = RisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ScenarioConfig::default();
        for _ in 0..20 {
            let t = scenario_sampler(&cfg, &ris, 0.25, &mut rng).unwrap();
            assert_eq!(classify_region(&t.users[0], &ris), Region::NearField);
            assert_eq!(classify_region(&t.users[1], &ris), Region::FarField);
            assert_eq!(t.scatters.len(), 3);
            t.validate(&ris).unwrap();
            for p in t.users.iter().chain(&t.scatters) {
                assert!(p.range() <= 10.0 && p.range() >= 0.25);
            }
        }
        let none = ScenarioConfig { scatters: 0, ..cfg };
        let t = scenario_sampler(&none, &ris, 0.25, &mut rng).unwrap();
        assert!(t.scatters.is_empty() && t.scatter_gains.iter().all(|g| g.is_empty()));
    }

    #[test]
    fn region_split_statistics() {
        let ris = RisConfig::default();
        let cfg = ScenarioConfig { users: 4, scatters: 0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut near = 0;
        let total = 2500 * cfg.users;
        for _ in 0..2500 {
            let t = scenario_sampler(&cfg, &ris, 0.25, &mut rng).unwrap();
            near += t.users.iter().filter(|p| classify_region(p, &ris) == Region::NearField).count();
        }
        let frac = near as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02);
    }

    #[test]
    fn snr_calibration_examples() {
        let ris = RisConfig::new(1, 2, 0.03, 0.06).unwrap();
        let user = SphericalPoint::new(1.0, 1.2, 0.3).unwrap();
        let truth = ScenarioTruth {
            users: vec![user],
            scatters: vec![],
            direct_gains: vec![c(0.5, 0.5)],
            scatter_gains: vec![vec![]],
            ris_bs_channels: vec![vec![c(1.0, -1.0), c(0.0, 2.0)]],
            noise_power: 0.0,
            tx_symbols: vec![c(1.0, 0.0)],
        };
        let h = truth.direct_channel(0, &ris);
        let p = (c(1.0, -1.0) * h[0] + c(0.0, 2.0) * h[1]).norm_sqr();
        assert!((snr_calibration(&truth, &ris, 0.0).unwrap() - p).abs() < 1e-12 * p);
        assert!((snr_calibration(&truth, &ris, 10.0).unwrap() - p / 10.0).abs() < 1e-12 * p);
        let mut zero = truth.clone();
        zero.direct_gains = vec![c(0.0, 0.0)];
        assert_eq!(snr_calibration(&zero, &ris, 0.0), Err(Error::ZeroDirectPath));
    }

    #[test]
    fn rmse_examples() {
        let base = UserError {
            region: Region::NearField,
            estimated_region: Region::NearField,
            polar_error: 0.0,
            azimuth_error: 0.0,
            range_error: Some(0.0),
            position_error: Some(0.0),
            estimated_index: 0,
            nearest_index: 0,
            grid_distance: 0.0,
        };
        let r = rmse_from_errors([&base]);
        assert_eq!((r.angle_rmse_nf, r.range_rmse_nf, r.position_rmse), (0.0, 0.0, 0.0));
        assert!(r.angle_rmse_ff.is_nan());

        let e = UserError { polar_error: 0.3, azimuth_error: -0.3, range_error: Some(0.5), ..base };
        let r = rmse_from_errors([&e]);
        assert!((r.angle_rmse_nf - 0.3).abs() < 1e-15 && (r.range_rmse_nf - 0.5).abs() < 1e-15);

        let neg = UserError { polar_error: -0.3, azimuth_error: 0.3, range_error: Some(-0.5), ..base };
        let r = rmse_from_errors([&e, &neg]);
        assert!((r.angle_rmse_nf - 0.3).abs() < 1e-15 && (r.range_rmse_nf - 0.5).abs() < 1e-15);
    }

    #[test]
    fn median_and_bootstrap() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let (lo, hi) = bootstrap_ci(&v, median, 500, 0.95, &mut rng);
        assert!(lo < 99.5 && hi > 99.5 && hi - lo < 40.0);
    }

    #[test]
    fn single_cycle_skips_optimization() {
        let cfg = ProtocolConfig { cycles: 1, ..Default::default() };
        let ris = cfg.panel.build().unwrap();
        let dict = cfg.build_dictionary(&ris).unwrap();
        let mut rng = trial_rng(7, 0);
        let rec = run_trial(&dict, &ris, &cfg, &mut rng).unwrap();
        assert_eq!(rec.cycles.len(), 1);
        assert_eq!(rec.last().objective_initial, None);
        assert_eq!(rec.fallbacks, 0);
    }

    #[test]
    fn optimization_runs_between_cycles() {
        let cfg = ProtocolConfig { cycles: 4, ..Default::default() };
        let ris = cfg.panel.build().unwrap();
        let dict = cfg.build_dictionary(&ris).unwrap();
        let mut rng = trial_rng(8, 0);
        let rec = run_trial(&dict, &ris, &cfg, &mut rng).unwrap();
        assert_eq!(rec.cycles.len(), 4);
        for r in &rec.cycles[..3] {
            if let (Some(a), Some(b)) = (r.objective_initial, r.objective_final) {
                assert!(b <= a);
            } else {
                assert!(r.fallback);
            }
        }
        assert!(rec.last().objective_initial.is_none());
    }

    #[test]
    fn trials_are_deterministic() {
        let cfg = ProtocolConfig { cycles: 3, ..Default::default() };
        let a = run_trials(&cfg, 3, 11).unwrap();
        let b = run_trials(&cfg, 3, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record, y.record);
        }
    }

    #[test]
    fn far_estimate_sits_on_boundary() {
        let ris = RisConfig::default();
        let loc = AtomLocation::Far { polar: std::f64::consts::FRAC_PI_2, azimuth: 0.0 };
        let r = implied_range(&loc, &ris, 0.25);
        assert!((r - near_field_boundary(std::f64::consts::FRAC_PI_2, 0.0, &ris).unwrap()).abs() < 1e-12);
        assert!(r > 4.8 && r < 4.9);
    }

    #[test]
    fn power_scaling_small() {
        let rows = power_scaling_experiment(&[16], 1.0, 1.0, 4000, PowerMode::AllOnes, 5);
        assert!(rows[0].relative_error() < 0.1);
        // exact mean N + N(N-1)π²/16 for max-SNR phases
        let rows = power_scaling_experiment(&[16], 1.0, 1.0, 4000, PowerMode::MaxSnr, 5);
        let exact = 16.0 + 16.0 * 15.0 * PI * PI / 16.0;
        assert!((rows[0].mean_power - exact).abs() / exact < 0.05);
    }
}
