//! Steering vectors, multipath user-RIS channels and received-signal synthesis.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{classify_region, element_distance, Region, RisConfig, SphericalPoint};
use crate::phase::PhasePoint;

/// Per-element complex channel coefficients, indexed like `RisConfig::element_coords`.
pub type ComplexVector = Vec<Complex64>;

/// Spherical-wavefront steering vector, entry `n = exp(-j k d_n)`.
pub fn nf_steering(p: &SphericalPoint, cfg: &RisConfig) -> ComplexVector {
    let xyz = p.to_cartesian();
    let k = cfg.wavenumber();
    cfg.element_coords().iter().map(|&c| Complex64::from_polar(1.0, -k * element_distance(xyz, c))).collect()
}

/// Plane-wave steering vector; independent of range.
pub fn ff_steering(polar: f64, azimuth: f64, cfg: &RisConfig) -> ComplexVector {
    let (sp, cp) = polar.sin_cos();
    let sa = azimuth.sin();
    let k = cfg.wavenumber();
    cfg.element_coords().iter().map(|&(yn, zn)| Complex64::from_polar(1.0, k * (yn * sp * sa + zn * cp))).collect()
}

/// Steering vector under the model that applies at `p`.
pub fn steering(p: &SphericalPoint, cfg: &RisConfig) -> ComplexVector {
    match classify_region(p, cfg) {
        Region::NearField => nf_steering(p, cfg),
        Region::FarField => ff_steering(p.polar(), p.azimuth(), cfg),
    }
}

/// User-RIS channel: direct path plus one path per scatter.
pub fn user_ris_channel(
    user: &SphericalPoint,
    scatters: &[SphericalPoint],
    direct_gain: Complex64,
    scatter_gains: &[Complex64],
    cfg: &RisConfig,
) -> Result<ComplexVector> {
    if scatters.len() != scatter_gains.len() {
        return Err(Error::Dimension(format!("{} scatters but {} scatter gains", scatters.len(), scatter_gains.len())));
    }
    let mut h: ComplexVector = steering(user, cfg).into_iter().map(|b| b * direct_gain).collect();
    for (q, &gain) in scatters.iter().zip(scatter_gains) {
        for (hn, bn) in h.iter_mut().zip(steering(q, cfg)) {
            *hn += gain * bn;
        }
    }
    Ok(h)
}

/// Hadamard product of the RIS-BS and user-RIS channels.
pub fn cascaded_channel(h_a: &[Complex64], h_t: &[Complex64]) -> Result<ComplexVector> {
    if h_a.len() != h_t.len() {
        return Err(Error::Dimension(format!("cascading channels of length {} and {}", h_a.len(), h_t.len())));
    }
    Ok(h_a.iter().zip(h_t).map(|(a, t)| a * t).collect())
}

/// `beta^T h` without the transmit symbol.
pub fn reflect(beta: &[Complex64], h: &[Complex64]) -> Complex64 {
    beta.iter().zip(h).map(|(b, x)| b * x).sum()
}

/// Circularly-symmetric Gaussian draw with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

/// i.i.d. CN(0, variance) vector.
pub fn complex_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> ComplexVector {
    (0..len).map(|_| complex_gaussian(rng, variance)).collect()
}

/// One received sample `y = beta^T h s + noise`.
pub fn received_signal<R: Rng + ?Sized>(
    beta: &PhasePoint,
    h: &[Complex64],
    symbol: Complex64,
    noise_power: f64,
    rng: &mut R,
) -> Result<Complex64> {
    if beta.len() != h.len() {
        return Err(Error::Dimension(format!(
            "phase vector of length {} against channel of length {}",
            beta.len(),
            h.len()
        )));
    }
    if noise_power < 0.0 {
        return Err(Error::NoisePower(noise_power));
    }
    let clean = reflect(beta.as_slice(), h) * symbol;
    if noise_power == 0.0 {
        return Ok(clean);
    }
    Ok(clean + complex_gaussian(rng, noise_power))
}

/// Ground truth of one Monte Carlo scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub users: Vec<SphericalPoint>,
    pub scatters: Vec<SphericalPoint>,
    /// Direct-path gain per user.
    pub direct_gains: Vec<Complex64>,
    /// `scatter_gains[k][l]` couples user `k` to scatter `l`.
    pub scatter_gains: Vec<Vec<Complex64>>,
    /// RIS-BS channel per user.
    pub ris_bs_channels: Vec<ComplexVector>,
    pub noise_power: f64,
    pub tx_symbols: Vec<Complex64>,
}

impl ScenarioTruth {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Checks per-user list lengths, channel lengths and the direct-path dominance assumption.
    pub fn validate(&self, cfg: &RisConfig) -> Result<()> {
        let k = self.users.len();
        let lens =
            [self.direct_gains.len(), self.scatter_gains.len(), self.ris_bs_channels.len(), self.tx_symbols.len()];
        if lens.iter().any(|&l| l != k) {
            return Err(Error::Dimension(format!("per-user lists disagree with {k} users: {lens:?}")));
        }
        for (i, (gains, h_a)) in self.scatter_gains.iter().zip(&self.ris_bs_channels).enumerate() {
            if gains.len() != self.scatters.len() {
                return Err(Error::Dimension(format!(
                    "user {i} has {} scatter gains for {} scatters",
                    gains.len(),
                    self.scatters.len()
                )));
            }
            if h_a.len() != cfg.len() {
                return Err(Error::Dimension(format!(
                    "user {i} RIS-BS channel has length {}, panel has {}",
                    h_a.len(),
                    cfg.len()
                )));
            }
            let direct = self.direct_gains[i].norm();
            if let Some(l) = gains.iter().position(|g| g.norm() >= direct) {
                return Err(Error::InvalidConfig(format!(
                    "scatter {l} of user {i} is not weaker than the direct path"
                )));
            }
        }
        if self.noise_power < 0.0 {
            return Err(Error::NoisePower(self.noise_power));
        }
        Ok(())
    }

    /// User-RIS channel of user `k`.
    pub fn user_channel(&self, k: usize, cfg: &RisConfig) -> Result<ComplexVector> {
        user_ris_channel(&self.users[k], &self.scatters, self.direct_gains[k], &self.scatter_gains[k], cfg)
    }

    /// Direct-path-only user-RIS channel of user `k`.
    pub fn direct_channel(&self, k: usize, cfg: &RisConfig) -> ComplexVector {
        let g = self.direct_gains[k];
        steering(&self.users[k], cfg).into_iter().map(|b| b * g).collect()
    }

    /// Cascaded channel `h_A ⊙ h_t` of user `k`.
    pub fn cascaded(&self, k: usize, cfg: &RisConfig) -> Result<ComplexVector> {
        cascaded_channel(&self.ris_bs_channels[k], &self.user_channel(k, cfg)?)
    }
}
