//! Three-step sparse-recovery localization.
//!
//! 1. Coarse user estimate: per user, the atom signal with the strongest
//!    correlation to the received vector, and its single-column LS gain.
//! 2. Scatter estimation with successive interference cancellation: after the
//!    direct path is removed, atoms are added greedily by their correlation with
//!    the residuals summed over users; all scatter gains are re-fitted jointly
//!    (OLS) against the post-direct-path residual after every addition.
//! 3. User refinement: project the received vector off the scatter atoms and
//!    re-pick the strongest atom.
//!
//! Argmax ties resolve to the lowest atom index.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dictionary::{build_atom_signals, AtomDictionary, AtomLocation, AtomSignals};
use crate::error::{Error, Result};
use crate::linalg::{energy, ls_residual};
use crate::phase::PhasePoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerConfig {
    /// Upper bound on the number of estimated scatters.
    pub max_scatters: usize,
    /// Scatter search stops once the residual energy drops below this
    /// fraction of the received energy.
    pub energy_fraction: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self { max_scatters: 3, energy_fraction: 0.05 }
    }
}

impl LocalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy_fraction > 0.0 && self.energy_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("energy fraction {} must lie in (0, 1)", self.energy_fraction)));
        }
        Ok(())
    }
}

fn argmax_abs(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn check_lengths(g: &[Complex64], signals: &AtomSignals) -> Result<()> {
    if g.len() != signals.cycles() {
        return Err(Error::Dimension(format!(
            "received vector has {} samples, atom signals have {} cycles",
            g.len(),
            signals.cycles()
        )));
    }
    if g.is_empty() || signals.atoms() == 0 {
        return Err(Error::Dimension("need at least one cycle and one atom".into()));
    }
    Ok(())
}

/// Strongest-correlation atom and its least-squares gain `(Λ_i^H g) / (Λ_i^H Λ_i)`.
pub fn coarse_user_estimate(g: &[Complex64], signals: &AtomSignals) -> Result<(usize, Complex64)> {
    check_lengths(g, signals)?;
    let corr = signals.correlate(g);
    let index = argmax_abs(corr.iter().map(|z| z.norm())).expect("nonempty");
    let e = signals.energies()[index];
    if e <= 0.0 {
        return Err(Error::DegenerateAtom(index));
    }
    Ok((index, corr[index] / e))
}

/// `g - gain * Λ_index`.
pub fn subtract_direct_path(g: &[Complex64], signals: &AtomSignals, index: usize, gain: Complex64) -> Vec<Complex64> {
    g.iter().enumerate().map(|(m, &gm)| gm - gain * signals.get(m, index)).collect()
}

/// Output of the joint scatter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterEstimate {
    /// Selected atom indices, in selection order.
    pub support: Vec<usize>,
    /// `gains[k][j]` is user `k`'s OLS gain on `support[j]`.
    pub gains: Vec<Vec<Complex64>>,
    /// Residuals after the final fit.
    pub residuals: Vec<Vec<Complex64>>,
    /// Summed residual energy before the search and after each accepted atom.
    pub energy_trace: Vec<f64>,
    /// Set when the newest atom made some user's `Λ_X` rank deficient and was dropped.
    pub rank_deficient: bool,
}

/// Greedy joint scatter search with OLS re-fitting against the initial residuals.
pub fn estimate_scatters(
    initial_residuals: &[Vec<Complex64>],
    signals: &[AtomSignals],
    received_energy: f64,
    cfg: &LocalizerConfig,
) -> Result<ScatterEstimate> {
    if initial_residuals.len() != signals.len() {
        return Err(Error::Dimension(format!("{} residuals for {} users", initial_residuals.len(), signals.len())));
    }
    for (e, s) in initial_residuals.iter().zip(signals) {
        check_lengths(e, s)?;
    }
    let users = signals.len();
    let atoms = signals.first().map_or(0, |s| s.atoms());
    let mut support: Vec<usize> = Vec::new();
    let mut gains: Vec<Vec<Complex64>> = vec![Vec::new(); users];
    let mut residuals = initial_residuals.to_vec();
    let mut current: f64 = residuals.iter().map(|r| energy(r)).sum();
    let mut energy_trace = vec![current];
    let mut rank_deficient = false;

    let threshold = cfg.energy_fraction * received_energy;
    while support.len() < cfg.max_scatters && current > 0.0 && current >= threshold {
        let mut score = vec![0.0; atoms];
        for (r, s) in residuals.iter().zip(signals) {
            for (acc, z) in score.iter_mut().zip(s.correlate(r)) {
                *acc += z.norm();
            }
        }
        for &i in &support {
            score[i] = f64::NEG_INFINITY;
        }
        let Some(next) = argmax_abs(score.iter().cloned()) else { break };
        if !score[next].is_finite() {
            break;
        }
        support.push(next);

        let mut fitted = Vec::with_capacity(users);
        let mut deficient = false;
        for (e_ini, s) in initial_residuals.iter().zip(signals) {
            let cols: Vec<Vec<Complex64>> = support.iter().map(|&i| s.column(i)).collect();
            let refs: Vec<&[Complex64]> = cols.iter().map(|c| c.as_slice()).collect();
            let (r, x, rank) = ls_residual(&refs, e_ini);
            if rank < support.len() {
                deficient = true;
                break;
            }
            fitted.push((r, x));
        }
        if deficient {
            support.pop();
            rank_deficient = true;
            break;
        }
        for (k, (r, x)) in fitted.into_iter().enumerate() {
            residuals[k] = r;
            gains[k] = x;
        }
        current = residuals.iter().map(|r| energy(r)).sum();
        energy_trace.push(current);
    }

    Ok(ScatterEstimate { support, gains, residuals, energy_trace, rank_deficient })
}

/// Refined user estimate after projecting out the scatter atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub index: usize,
    pub gain: Complex64,
    /// `r = g - Λ_X Λ_X^+ g`.
    pub residual: Vec<Complex64>,
}

pub fn refine_user(g: &[Complex64], signals: &AtomSignals, support: &[usize]) -> Result<Refinement> {
    check_lengths(g, signals)?;
    let residual = if support.is_empty() {
        g.to_vec()
    } else {
        let cols: Vec<Vec<Complex64>> = support.iter().map(|&i| signals.column(i)).collect();
        let refs: Vec<&[Complex64]> = cols.iter().map(|c| c.as_slice()).collect();
        let (r, _, rank) = ls_residual(&refs, g);
        if rank < support.len() {
            return Err(Error::Dimension(format!(
                "scatter atoms have rank {rank} < {} for user {}",
                support.len(),
                signals.user()
            )));
        }
        r
    };
    let corr = signals.correlate(&residual);
    let index = argmax_abs(corr.iter().map(|z| z.norm())).expect("nonempty");
    let e = signals.energies()[index];
    if e <= 0.0 {
        return Err(Error::DegenerateAtom(index));
    }
    Ok(Refinement { index, gain: corr[index] / e, residual })
}

/// Everything the localizer estimated in one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub coarse_indices: Vec<usize>,
    pub coarse_gains: Vec<Complex64>,
    /// Refined direct-path atom per user.
    pub user_indices: Vec<usize>,
    pub user_locations: Vec<AtomLocation>,
    /// LS gain of the refined atom against the scatter-free residual.
    pub user_gains: Vec<Complex64>,
    pub support: Vec<usize>,
    pub scatter_locations: Vec<AtomLocation>,
    pub scatter_gains: Vec<Vec<Complex64>>,
    /// Summed residual energy trace of the scatter search.
    pub residual_energies: Vec<f64>,
    /// Energy of the received signals.
    pub received_energy: f64,
    /// `Σ_k ‖g_k - û Λ_coarse‖²`.
    pub coarse_loss: f64,
    /// `Σ_k` residual of a joint LS fit on the refined user atom and the scatter atoms.
    pub refined_loss: f64,
    pub rank_deficient: bool,
    /// Users whose refined atom is also in the scatter support.
    pub reselected: Vec<bool>,
}

/// Runs all three steps on prepared atom signals.
pub fn localize_signals(
    received: &[Vec<Complex64>],
    signals: &[AtomSignals],
    dict: &AtomDictionary,
    cfg: &LocalizerConfig,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    if received.len() != signals.len() || received.is_empty() {
        return Err(Error::Dimension(format!("{} received vectors for {} users", received.len(), signals.len())));
    }
    if signals.iter().any(|s| s.atoms() != dict.len()) {
        return Err(Error::Dimension("atom signals do not match the dictionary".into()));
    }

    let mut coarse_indices = Vec::with_capacity(received.len());
    let mut coarse_gains = Vec::with_capacity(received.len());
    let mut initial = Vec::with_capacity(received.len());
    for (g, s) in received.iter().zip(signals) {
        let (i, u) = coarse_user_estimate(g, s)?;
        initial.push(subtract_direct_path(g, s, i, u));
        coarse_indices.push(i);
        coarse_gains.push(u);
    }
    let coarse_loss: f64 = initial.iter().map(|e| energy(e)).sum();
    let received_energy: f64 = received.iter().map(|g| energy(g)).sum();

    let scatter = estimate_scatters(&initial, signals, received_energy, cfg)?;

    let mut user_indices = Vec::with_capacity(received.len());
    let mut user_gains = Vec::with_capacity(received.len());
    let mut reselected = Vec::with_capacity(received.len());
    let mut refined_loss = 0.0;
    for (g, s) in received.iter().zip(signals) {
        let refined = refine_user(g, s, &scatter.support)?;
        let again = scatter.support.contains(&refined.index);
        if again {
            log::warn!("user {} refined onto scatter atom {}", s.user(), refined.index);
        }
        let mut idx = vec![refined.index];
        idx.extend(scatter.support.iter().filter(|&&i| i != refined.index));
        let cols: Vec<Vec<Complex64>> = idx.iter().map(|&i| s.column(i)).collect();
        let refs: Vec<&[Complex64]> = cols.iter().map(|c| c.as_slice()).collect();
        let (r, _, _) = ls_residual(&refs, g);
        refined_loss += energy(&r);
        user_indices.push(refined.index);
        user_gains.push(refined.gain);
        reselected.push(again);
    }

    Ok(LocalizationResult {
        user_locations: user_indices.iter().map(|&i| *dict.location(i)).collect(),
        scatter_locations: scatter.support.iter().map(|&i| *dict.location(i)).collect(),
        coarse_indices,
        coarse_gains,
        user_indices,
        user_gains,
        support: scatter.support,
        scatter_gains: scatter.gains,
        residual_energies: scatter.energy_trace,
        received_energy,
        coarse_loss,
        refined_loss,
        rank_deficient: scatter.rank_deficient,
        reselected,
    })
}

/// Localizes all users from their received vectors (`K x c`) and the phase history.
pub fn localize(
    received: &[Vec<Complex64>],
    history: &[PhasePoint],
    dict: &AtomDictionary,
    ris_bs_channels: &[Vec<Complex64>],
    symbols: &[Complex64],
    cfg: &LocalizerConfig,
) -> Result<LocalizationResult> {
    if ris_bs_channels.len() != received.len() || symbols.len() != received.len() {
        return Err(Error::Dimension(format!(
            "{} users but {} RIS-BS channels and {} symbols",
            received.len(),
            ris_bs_channels.len(),
            symbols.len()
        )));
    }
    let signals = ris_bs_channels
        .iter()
        .zip(symbols)
        .enumerate()
        .map(|(k, (h_a, &s))| build_atom_signals(history, h_a, dict, s, k))
        .collect::<Result<Vec<_>>>()?;
    localize_signals(received, &signals, dict, cfg)
}
