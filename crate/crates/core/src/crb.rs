//! Fisher information and Cramér-Rao bounds for user locations.
//!
//! The parameter vector is `(R, θ, φ)` for a near-field user and `(θ, φ)` for a
//! far-field user. Only the direct path depends on the user location, so path
//! gains and scatter terms enter as constants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ff_steering;
use crate::dictionary::AtomLocation;
use crate::error::{Error, Result};
use crate::geometry::{element_distance, Region, RisConfig, SphericalPoint};
use crate::phase::PhasePoint;

/// Condition numbers above this make the bound numerically meaningless.
pub const MAX_CONDITION: f64 = 1e12;

/// `μ = βᵀ h s`.
pub fn noise_free_signal(beta: &[Complex64], h: &[Complex64], symbol: Complex64) -> Complex64 {
    beta.iter().zip(h).map(|(b, x)| b * x).sum::<Complex64>() * symbol
}

/// Derivatives of `α·nf_steering(p)` with respect to `(R, θ, φ)`.
pub fn nf_direct_derivatives(p: &SphericalPoint, gain: Complex64, cfg: &RisConfig) -> Result<[Vec<Complex64>; 3]> {
    let (r, polar, azimuth) = (p.range(), p.polar(), p.azimuth());
    let (st, ct) = polar.sin_cos();
    let (sp, cp) = azimuth.sin_cos();
    let xyz = p.to_cartesian();
    let k = cfg.wavenumber();
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (n, &(y, z)) in cfg.element_coords().iter().enumerate() {
        let d = element_distance(xyz, (y, z));
        if d == 0.0 {
            return Err(Error::CoincidentElement(n));
        }
        let common = gain * Complex64::new(0.0, -k) * Complex64::from_polar(1.0, -k * d);
        let dd = [(r - y * st * sp - z * ct) / d, r * (-y * ct * sp + z * st) / d, r * (-y * st * cp) / d];
        for (o, v) in out.iter_mut().zip(dd) {
            o.push(common * v);
        }
    }
    Ok(out)
}

/// Derivatives of a far-field direct path `h` with respect to `(θ, φ)`.
pub fn ff_direct_derivatives(
    polar: f64,
    azimuth: f64,
    h_direct: &[Complex64],
    cfg: &RisConfig,
) -> Result<[Vec<Complex64>; 2]> {
    if h_direct.len() != cfg.len() {
        return Err(Error::Dimension(format!("direct path has {} entries, panel has {}", h_direct.len(), cfg.len())));
    }
    let (st, ct) = polar.sin_cos();
    let (sp, cp) = azimuth.sin_cos();
    let mjk = Complex64::new(0.0, -cfg.wavenumber());
    let mut d_polar = Vec::with_capacity(cfg.len());
    let mut d_azimuth = Vec::with_capacity(cfg.len());
    for (&h, &(y, z)) in h_direct.iter().zip(cfg.element_coords()) {
        d_polar.push(h * mjk * (-y * ct * sp + z * st));
        d_azimuth.push(h * mjk * (-y * st * cp));
    }
    Ok([d_polar, d_azimuth])
}

/// Direct-path derivatives for an estimated location, with its estimated gain.
pub fn direct_derivatives(location: &AtomLocation, gain: Complex64, cfg: &RisConfig) -> Result<Vec<Vec<Complex64>>> {
    match location {
        AtomLocation::Near(p) => Ok(nf_direct_derivatives(p, gain, cfg)?.into()),
        AtomLocation::Far { polar, azimuth } => {
            let h: Vec<Complex64> = ff_steering(*polar, *azimuth, cfg).into_iter().map(|x| x * gain).collect();
            Ok(ff_direct_derivatives(*polar, *azimuth, &h, cfg)?.into())
        }
    }
}

/// `h_A ⊙ ∂h/∂p_i` for every parameter.
pub fn cascade_derivatives(h_a: &[Complex64], derivatives: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    derivatives.iter().map(|d| d.iter().zip(h_a).map(|(x, a)| x * a).collect()).collect()
}

/// Fisher information matrix of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Fim {
    pub region: Region,
    pub matrix: DMatrix<f64>,
}

impl Fim {
    pub fn zeros(region: Region) -> Self {
        let n = match region {
            Region::NearField => 3,
            Region::FarField => 2,
        };
        Self { region, matrix: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `βᵀ a_i` for each cascaded derivative.
pub(crate) fn projected(beta: &[Complex64], cascaded: &[Vec<Complex64>]) -> Vec<Complex64> {
    cascaded.iter().map(|a| a.iter().zip(beta).map(|(x, b)| x * b).sum()).collect()
}

/// Adds `2κ Re{v v^H}` (real part, conjugate on the left) to `j`.
pub(crate) fn accumulate(j: &mut DMatrix<f64>, v: &[Complex64], kappa: f64) {
    for r in 0..v.len() {
        for c in 0..v.len() {
            j[(r, c)] += 2.0 * kappa * (v[r].conj() * v[c]).re;
        }
    }
}

/// FIM over a phase history from cascaded derivatives `h_A ⊙ ∂h/∂p_i`.
pub fn fim(
    history: &[PhasePoint],
    cascaded: &[Vec<Complex64>],
    symbol: Complex64,
    noise_power: f64,
) -> Result<DMatrix<f64>> {
    if !(noise_power > 0.0) || !noise_power.is_finite() {
        return Err(Error::NoisePower(noise_power));
    }
    let n = cascaded.first().map_or(0, |a| a.len());
    if cascaded.iter().any(|a| a.len() != n) || history.iter().any(|b| b.len() != n) {
        return Err(Error::Dimension("derivatives and phase vectors must share one length".into()));
    }
    let kappa = symbol.norm_sqr() / noise_power;
    let mut j = DMatrix::zeros(cascaded.len(), cascaded.len());
    for beta in history {
        accumulate(&mut j, &projected(beta.as_slice(), cascaded), kappa);
    }
    Ok(j)
}

/// Symmetric positive-definite inverse with a conditioning check.
pub fn checked_inverse(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(j.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo > 0.0) || !(hi / lo <= MAX_CONDITION) {
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(Error::SingularFim(cond));
    }
    let inv_vals = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| 1.0 / l));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

/// Diagonal of `J⁻¹` in parameter order.
pub fn crb_from_fim(j: &DMatrix<f64>) -> Result<Vec<f64>> {
    let inv = checked_inverse(j)?;
    Ok(inv.diagonal().iter().cloned().collect())
}

/// Weights on the bounds: `w1..w3` for near-field `(R, θ, φ)`, `w4, w5` for far-field `(θ, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrbWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
}

impl Default for CrbWeights {
    fn default() -> Self {
        Self { w1: 1.0, w2: 1.0, w3: 1.0, w4: 1.0, w5: 1.0 }
    }
}

impl CrbWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w1, self.w2, self.w3, self.w4, self.w5];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(format!("CRB weights must be finite and nonnegative: {all:?}")));
        }
        Ok(())
    }

    pub fn for_region(&self, region: Region) -> Vec<f64> {
        match region {
            Region::NearField => vec![self.w1, self.w2, self.w3],
            Region::FarField => vec![self.w4, self.w5],
        }
    }

    pub fn is_zero(&self) -> bool {
        [self.w1, self.w2, self.w3, self.w4, self.w5].iter().all(|w| *w == 0.0)
    }
}

/// A real objective on the complex circle manifold.
pub trait ManifoldObjective {
    fn value(&self, beta: &[Complex64]) -> Result<f64>;
    /// `2 ∂f/∂β*`, the gradient under the real inner product `Re{xᴴy}`.
    fn euclidean_gradient(&self, beta: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// One user's contribution `tr(W (J_prior + J(β))⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTerm {
    /// Cascaded derivatives `h_A ⊙ ∂h/∂p_i`.
    pub derivatives: Vec<Vec<Complex64>>,
    /// Information already collected over the phase history.
    pub prior: DMatrix<f64>,
    pub weights: Vec<f64>,
    /// `|s|² / σ²`.
    pub kappa: f64,
}

impl UserTerm {
    fn fim(&self, beta: &[Complex64]) -> DMatrix<f64> {
        let mut j = self.prior.clone();
        accumulate(&mut j, &projected(beta, &self.derivatives), self.kappa);
        j
    }

    fn value(&self, beta: &[Complex64]) -> Result<f64> {
        if self.weights.iter().all(|w| *w == 0.0) {
            return Ok(0.0);
        }
        let inv = checked_inverse(&self.fim(beta))?;
        Ok(self.weights.iter().enumerate().map(|(i, w)| w * inv[(i, i)]).sum())
    }

    fn add_gradient(&self, beta: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        if self.weights.iter().all(|w| *w == 0.0) {
            return Ok(());
        }
        let inv = checked_inverse(&self.fim(beta))?;
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&self.weights));
        let q = &inv * w * &inv;
        let v = projected(beta, &self.derivatives);
        let qv: Vec<Complex64> = (0..v.len()).map(|a| (0..v.len()).map(|b| v[b] * q[(a, b)]).sum()).collect();
        for (a, deriv) in self.derivatives.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(deriv) {
                *o -= 4.0 * self.kappa * x.conj() * qv[a];
            }
        }
        Ok(())
    }
}

/// Weighted sum of per-user CRB traces as a function of the next phase vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrbObjective {
    pub terms: Vec<UserTerm>,
}

impl CrbObjective {
    /// Builds the objective from estimated locations and gains.
    ///
    /// `history` holds the phase vectors already used; their information is the prior.
    #[allow(clippy::too_many_arguments)]
    pub fn from_estimates(
        locations: &[AtomLocation],
        gains: &[Complex64],
        ris_bs_channels: &[Vec<Complex64>],
        symbols: &[Complex64],
        history: &[PhasePoint],
        noise_power: f64,
        weights: &CrbWeights,
        cfg: &RisConfig,
    ) -> Result<Self> {
        weights.validate()?;
        let k = locations.len();
        if gains.len() != k || ris_bs_channels.len() != k || symbols.len() != k {
            return Err(Error::Dimension("per-user inputs must have equal lengths".into()));
        }
        let mut terms = Vec::with_capacity(k);
        for (((loc, &gain), h_a), &s) in locations.iter().zip(gains).zip(ris_bs_channels).zip(symbols) {
            let derivatives = cascade_derivatives(h_a, &direct_derivatives(loc, gain, cfg)?);
            let prior = fim(history, &derivatives, s, noise_power)?;
            terms.push(UserTerm {
                derivatives,
                prior,
                weights: weights.for_region(loc.region()),
                kappa: s.norm_sqr() / noise_power,
            });
        }
        Ok(Self { terms })
    }
}

impl ManifoldObjective for CrbObjective {
    fn value(&self, beta: &[Complex64]) -> Result<f64> {
        self.terms.iter().map(|t| t.value(beta)).sum()
    }

    fn euclidean_gradient(&self, beta: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = vec![Complex64::new(0.0, 0.0); beta.len()];
        for t in &self.terms {
            t.add_gradient(beta, &mut out)?;
        }
        Ok(out)
    }
}

/// `Σ_NF tr(J⁻¹ W_NF) + Σ_FF tr(J⁻¹ W_FF)` with the candidate phases appended to the history.
#[allow(clippy::too_many_arguments)]
pub fn weighted_crb_objective(
    locations: &[AtomLocation],
    gains: &[Complex64],
    ris_bs_channels: &[Vec<Complex64>],
    symbols: &[Complex64],
    history: &[PhasePoint],
    candidate: &PhasePoint,
    noise_power: f64,
    weights: &CrbWeights,
    cfg: &RisConfig,
) -> Result<f64> {
    CrbObjective::from_estimates(locations, gains, ris_bs_channels, symbols, history, noise_power, weights, cfg)?
        .value(candidate.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::nf_steering;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel_err(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm().max(1e-12)
    }

    #[test]
    fn noise_free_signal_examples() {
        assert_eq!(noise_free_signal(&[c(1.0, 0.0)], &[c(0.3, -0.2)], c(2.0, 0.0)), c(0.6, -0.4));
        assert_eq!(noise_free_signal(&[c(1.0, 0.0)], &[c(0.3, -0.2)], c(0.0, 0.0)), c(0.0, 0.0));
        // (j)(1+j) + (-1)(2) = j - 1 - 2 = -3 + j ; times s = j gives -1 - 3j
        let mu = noise_free_signal(&[c(0.0, 1.0), c(-1.0, 0.0)], &[c(1.0, 1.0), c(2.0, 0.0)], c(0.0, 1.0));
        assert!((mu - c(-1.0, -3.0)).norm() < 1e-15);
    }

    #[test]
    fn nf_derivatives_match_central_differences() {
        let cfg = RisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let p = SphericalPoint::new(
                rng.random_range(0.5..4.0),
                rng.random_range(0.3..2.8),
                rng.random_range(-1.3..1.3),
            )
            .unwrap();
            let gain = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let d = nf_direct_derivatives(&p, gain, &cfg).unwrap();
            let delta = 1e-6;
            let steps = [(delta, 0.0, 0.0), (0.0, delta, 0.0), (0.0, 0.0, delta)];
            for (i, (dr, dt, dp)) in steps.into_iter().enumerate() {
                let plus = SphericalPoint::new(p.range() + dr, p.polar() + dt, p.azimuth() + dp).unwrap();
                let minus = SphericalPoint::new(p.range() - dr, p.polar() - dt, p.azimuth() - dp).unwrap();
                let hp = nf_steering(&plus, &cfg);
                let hm = nf_steering(&minus, &cfg);
                for n in 0..cfg.len() {
                    let fd = gain * (hp[n] - hm[n]) / (2.0 * delta);
                    if fd.norm() > 1e-3 * gain.norm() {
                        assert!(rel_err(d[i][n], fd) < 1e-5, "param {i} element {n}");
                    }
                }
            }
        }
    }

    #[test]
    fn nf_derivatives_single_element_at_origin() {
        let cfg = RisConfig::new(1, 1, 0.03, 0.06).unwrap();
        let p = SphericalPoint::new(2.0, 1.0, 0.4).unwrap();
        let d = nf_direct_derivatives(&p, c(1.0, 0.0), &cfg).unwrap();
        let k = cfg.wavenumber();
        // ∂d/∂R = 1 gives (-jk) e^{-jkR}
        let expected = c(0.0, -k) * Complex64::from_polar(1.0, -k * 2.0);
        assert!((d[0][0] - expected).norm() < 1e-9);
        assert_eq!(d[1][0], c(0.0, 0.0));
        assert_eq!(d[2][0], c(0.0, 0.0));
    }

    #[test]
    fn nf_derivative_symmetry_at_broadside() {
        // 1 x 2 panel: elements at y = ±d/2 on the z = 0 line
        let cfg = RisConfig::new(2, 1, 0.03, 0.06).unwrap();
        let p = SphericalPoint::new(1.5, FRAC_PI_2, 0.0).unwrap();
        let d = nf_direct_derivatives(&p, c(1.0, 0.0), &cfg).unwrap();
        assert!((d[2][0] + d[2][1]).norm() < 1e-12);
    }

    #[test]
    fn coincident_element_is_an_error() {
        let cfg = RisConfig::new(1, 1, 0.03, 0.06).unwrap();
        let p = SphericalPoint::from_cartesian(0.0, 0.0, 0.0);
        if let Ok(p) = p {
            assert_eq!(nf_direct_derivatives(&p, c(1.0, 0.0), &cfg), Err(Error::CoincidentElement(0)));
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn ff_derivatives_match_central_differences() {
        let cfg = RisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (t, p) = (rng.random_range(0.2..2.9), rng.random_range(-1.4..1.4));
            let gain = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let h: Vec<_> = ff_steering(t, p, &cfg).into_iter().map(|x| x * gain).collect();
            let d = ff_direct_derivatives(t, p, &h, &cfg).unwrap();
            let delta = 1e-6;
            let fd = |dt: f64, dp: f64, n: usize| {
                gain * (ff_steering(t + dt, p + dp, &cfg)[n] - ff_steering(t - dt, p - dp, &cfg)[n]) / (2.0 * delta)
            };
            for n in 0..cfg.len() {
                for (i, (dt, dp)) in [(delta, 0.0), (0.0, delta)].into_iter().enumerate() {
                    let f = fd(dt, dp, n);
                    if f.norm() > 1e-3 * gain.norm() {
                        assert!(rel_err(d[i][n], f) < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn ff_derivative_special_points() {
        let cfg = RisConfig::default();
        let h = ff_steering(FRAC_PI_2, FRAC_PI_2, &cfg);
        let d = ff_direct_derivatives(FRAC_PI_2, FRAC_PI_2, &h, &cfg).unwrap();
        assert!(d[1].iter().all(|x| x.norm() < 1e-12));

        let single = RisConfig::new(1, 1, 0.03, 0.06).unwrap();
        let d = ff_direct_derivatives(0.7, 0.2, &[c(1.0, 0.0)], &single).unwrap();
        assert_eq!((d[0][0], d[1][0]), (c(0.0, 0.0), c(0.0, 0.0)));
    }

    #[test]
    fn fim_hand_fixture() {
        // 2-element derivative vectors, one cycle, β = (1, j), s = 1, σ² = 2
        let a0 = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let a1 = vec![c(0.0, 2.0), c(1.0, 0.0)];
        let beta = PhasePoint::new(vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        let j = fim(&[beta], &[a0, a1], c(1.0, 0.0), 2.0).unwrap();
        // v0 = 1 + j·j = 0 ; v1 = 2j + j = 3j
        // J = (2/2) Re{conj(v) v^T} = diag(0, 9)
        assert!((j[(0, 0)]).abs() < 1e-15);
        assert!((j[(1, 1)] - 9.0).abs() < 1e-12);
        assert!((j[(0, 1)]).abs() < 1e-15 && (j[(1, 0)]).abs() < 1e-15);
    }

    #[test]
    fn fim_scales_inversely_with_noise_and_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a: Vec<Vec<Complex64>> = (0..3)
                .map(|_| (0..6).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
                .collect();
            let hist: Vec<PhasePoint> = (0..rng.random_range(1..5)).map(|_| PhasePoint::random(6, &mut rng)).collect();
            let j1 = fim(&hist, &a, c(0.0, 1.0), 1.0).unwrap();
            let j2 = fim(&hist, &a, c(0.0, 1.0), 4.0).unwrap();
            assert!((&j1 / 4.0 - &j2).amax() < 1e-12 * j1.amax().max(1.0));
            assert!((&j1 - j1.transpose()).amax() < 1e-12);
            let eig = SymmetricEigen::new(j1.clone());
            assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * j1.amax().max(1.0)));
        }
        assert_eq!(fim(&[], &[], c(1.0, 0.0), 0.0), Err(Error::NoisePower(0.0)));
    }

    #[test]
    fn fim_is_additive_over_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Vec<Complex64>> = (0..2)
            .map(|_| (0..4).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .collect();
        let hist: Vec<PhasePoint> = (0..5).map(|_| PhasePoint::random(4, &mut rng)).collect();
        let all = fim(&hist, &a, c(1.0, 0.0), 0.5).unwrap();
        let first = fim(&hist[..4], &a, c(1.0, 0.0), 0.5).unwrap();
        let last = fim(&hist[4..], &a, c(1.0, 0.0), 0.5).unwrap();
        assert!((all - first - last).amax() < 1e-12);
    }

    #[test]
    fn crb_examples() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0, 8.0]));
        let b = crb_from_fim(&j).unwrap();
        for (x, e) in b.iter().zip([0.5, 0.25, 0.125]) {
            assert!((x - e).abs() < 1e-15);
        }
        // [[a, b], [b, d]]⁻¹ diagonal = (d, a) / (ad - b²)
        let j = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = crb_from_fim(&j).unwrap();
        assert!((b[0] - 2.0 / 5.0).abs() < 1e-14 && (b[1] - 3.0 / 5.0).abs() < 1e-14);

        let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(crb_from_fim(&j), Err(Error::SingularFim(_))));
    }

    fn two_user_fixture(
        rng: &mut ChaCha8Rng,
    ) -> (Vec<AtomLocation>, Vec<Complex64>, Vec<Vec<Complex64>>, Vec<PhasePoint>) {
        let cfg = RisConfig::default();
        let locs = vec![
            AtomLocation::Near(SphericalPoint::new(2.0, 1.2, 0.3).unwrap()),
            AtomLocation::Far { polar: 1.9, azimuth: -0.5 },
        ];
        let gains = vec![c(0.8, 0.3), c(-0.2, 0.9)];
        let h_a: Vec<Vec<Complex64>> = (0..2)
            .map(|_| (0..cfg.len()).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .collect();
        let hist: Vec<PhasePoint> = (0..4).map(|_| PhasePoint::random(cfg.len(), rng)).collect();
        (locs, gains, h_a, hist)
    }

    #[test]
    fn weighted_objective_sums_per_user_traces() {
        let cfg = RisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (locs, gains, h_a, hist) = two_user_fixture(&mut rng);
        let cand = PhasePoint::random(cfg.len(), &mut rng);
        let symbols = [c(1.0, 0.0), c(0.0, 1.0)];
        let w = CrbWeights { w1: 0.5, w2: 2.0, w3: 1.0, w4: 3.0, w5: 0.25 };
        let f = weighted_crb_objective(&locs, &gains, &h_a, &symbols, &hist, &cand, 0.1, &w, &cfg).unwrap();

        let mut full = hist.clone();
        full.push(cand.clone());
        let mut expected = 0.0;
        for k in 0..2 {
            let d = cascade_derivatives(&h_a[k], &direct_derivatives(&locs[k], gains[k], &cfg).unwrap());
            let b = crb_from_fim(&fim(&full, &d, symbols[k], 0.1).unwrap()).unwrap();
            let ws = w.for_region(locs[k].region());
            expected += b.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>();
        }
        assert!((f - expected).abs() < 1e-9 * expected);

        let zero = CrbWeights { w1: 0.0, w2: 0.0, w3: 0.0, w4: 0.0, w5: 0.0 };
        assert_eq!(weighted_crb_objective(&locs, &gains, &h_a, &symbols, &hist, &cand, 0.1, &zero, &cfg).unwrap(), 0.0);

        // selector weight on the range of the near-field user
        let sel = CrbWeights { w1: 1.0, w2: 0.0, w3: 0.0, w4: 0.0, w5: 0.0 };
        let f =
            weighted_crb_objective(&locs[..1], &gains[..1], &h_a[..1], &symbols[..1], &hist, &cand, 0.1, &sel, &cfg)
                .unwrap();
        let d = cascade_derivatives(&h_a[0], &direct_derivatives(&locs[0], gains[0], &cfg).unwrap());
        let b = crb_from_fim(&fim(&full, &d, symbols[0], 0.1).unwrap()).unwrap();
        assert!((f - b[0]).abs() < 1e-9 * b[0]);

        // invariant to the global phase of the symbols
        let rotated = [c(0.0, -1.0), c(-1.0, 0.0)];
        let f1 = weighted_crb_objective(&locs, &gains, &h_a, &symbols, &hist, &cand, 0.1, &w, &cfg).unwrap();
        let f2 = weighted_crb_objective(&locs, &gains, &h_a, &rotated, &hist, &cand, 0.1, &w, &cfg).unwrap();
        assert!((f1 - f2).abs() < 1e-12 * f1);
    }

    #[test]
    fn ff_fim_ignores_range() {
        let cfg = RisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hist: Vec<PhasePoint> = (0..3).map(|_| PhasePoint::random(cfg.len(), &mut rng)).collect();
        let h = ff_steering(1.1, 0.4, &cfg);
        let d: Vec<Vec<Complex64>> = ff_direct_derivatives(1.1, 0.4, &h, &cfg).unwrap().into();
        let j1 = fim(&hist, &d, c(1.0, 0.0), 1.0).unwrap();
        // the far-field model has no range input, so two "ranges" produce the same FIM by construction
        let j2 = fim(&hist, &d, c(1.0, 0.0), 1.0).unwrap();
        assert_eq!(j1, j2);
        assert_eq!(j1.nrows(), 2);
    }

    /// Wirtinger finite-difference reconstruction of `2 ∂f/∂β*`.
    pub(crate) fn fd_gradient(f: &dyn ManifoldObjective, beta: &[Complex64], delta: f64) -> Vec<Complex64> {
        (0..beta.len())
            .map(|n| {
                let eval = |d: Complex64| {
                    let mut b = beta.to_vec();
                    b[n] += d;
                    f.value(&b).unwrap()
                };
                let dre = (eval(c(delta, 0.0)) - eval(c(-delta, 0.0))) / (2.0 * delta);
                let dim = (eval(c(0.0, delta)) - eval(c(0.0, -delta))) / (2.0 * delta);
                c(dre, dim)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = RisConfig::new(4, 4, 0.03, 0.06).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let locs = vec![
            AtomLocation::Near(SphericalPoint::new(0.8, 1.3, 0.2).unwrap()),
            AtomLocation::Far { polar: 1.9, azimuth: -0.5 },
        ];
        let h_a: Vec<Vec<Complex64>> = (0..2)
            .map(|_| (0..cfg.len()).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .collect();
        let hist: Vec<PhasePoint> = (0..3).map(|_| PhasePoint::random(cfg.len(), &mut rng)).collect();
        let obj = CrbObjective::from_estimates(
            &locs,
            &[c(1.0, 0.0), c(0.5, 0.5)],
            &h_a,
            &[c(1.0, 0.0), c(1.0, 0.0)],
            &hist,
            0.01,
            &CrbWeights::default(),
            &cfg,
        )
        .unwrap();
        let beta = PhasePoint::random(cfg.len(), &mut rng);
        let g = obj.euclidean_gradient(beta.as_slice()).unwrap();
        let fd = fd_gradient(&obj, beta.as_slice(), 1e-6);
        let scale = fd.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).norm() < 1e-4 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn scalar_chain_rule() {
        // 1 x 1 FIM: J = p + 2κ|βᵀa|², D = 1/J, 2 ∂D/∂β* = -2 J⁻² · 2κ conj(a) (βᵀa)
        let a = vec![c(0.3, -0.4), c(1.0, 0.2), c(-0.5, 0.5)];
        let term = UserTerm {
            derivatives: vec![a.clone()],
            prior: DMatrix::from_element(1, 1, 0.7),
            weights: vec![1.0],
            kappa: 2.5,
        };
        let beta = PhasePoint::from_angles(&[0.1, 2.0, -1.0]);
        let v: Complex64 = a.iter().zip(beta.as_slice()).map(|(x, b)| x * b).sum();
        let j = 0.7 + 2.0 * 2.5 * v.norm_sqr();
        let obj = CrbObjective { terms: vec![term] };
        assert!((obj.value(beta.as_slice()).unwrap() - 1.0 / j).abs() < 1e-15);
        let g = obj.euclidean_gradient(beta.as_slice()).unwrap();
        for (gn, an) in g.iter().zip(&a) {
            let expected = -2.0 / (j * j) * 2.0 * 2.5 * an.conj() * v;
            assert!((gn - expected).norm() < 1e-14);
        }
    }
}
