//! Riemannian descent on the complex circle manifold.
//!
//! Each iteration projects the Euclidean gradient onto the tangent space,
//! negates it, takes an Armijo-backtracked step and retracts back onto the
//! manifold. Raw CRB gradients can be many orders of magnitude away from unit
//! scale, so the step is taken along the direction rescaled to unit max-entry
//! modulus; the initial step of 1 then moves the largest entry by one radian's
//! worth of arc before retraction.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::crb::ManifoldObjective;
use crate::error::{Error, Result};
use crate::phase::PhasePoint;

pub use crate::phase::retract;

/// How the tangent projection becomes a search direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionRule {
    /// `d = −t`: descent along the negative projected gradient.
    #[default]
    ProjectedNegative,
    /// `d = +t`: the projection used without negation.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcmConfig {
    /// Absolute objective-change tolerance; `None` means `1e-6·|f0|`.
    pub zeta: Option<f64>,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub min_step: f64,
    pub direction: DirectionRule,
}

impl Default for CcmConfig {
    fn default() -> Self {
        Self {
            zeta: None,
            max_iterations: 200,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            min_step: 1e-10,
            direction: DirectionRule::ProjectedNegative,
        }
    }
}

impl CcmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if let Some(z) = self.zeta {
            if !(z > 0.0) {
                return bad("zeta must be positive");
            }
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.initial_step > 0.0) || !(self.min_step > 0.0) || self.min_step > self.initial_step {
            return bad("steps must satisfy 0 < min_step <= initial_step");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return bad("sufficient_decrease must lie in (0, 1)");
        }
        Ok(())
    }
}

/// `t = egrad − Re{egrad ⊙ conj(β)} ⊙ β`.
pub fn riemannian_gradient(egrad: &[Complex64], beta: &PhasePoint) -> Vec<Complex64> {
    egrad.iter().zip(beta.as_slice()).map(|(g, b)| g - (g * b.conj()).re * b).collect()
}

pub fn search_direction(tangent: &[Complex64], rule: DirectionRule) -> Vec<Complex64> {
    match rule {
        DirectionRule::ProjectedNegative => tangent.iter().map(|t| -t).collect(),
        DirectionRule::AsPrinted => tangent.to_vec(),
    }
}

/// `β + α·d`, generally off the manifold.
pub fn tangent_update(beta: &PhasePoint, direction: &[Complex64], step: f64) -> Vec<Complex64> {
    beta.as_slice().iter().zip(direction).map(|(b, d)| b + step * d).collect()
}

/// `max_n |Re{d_n conj(β_n)}|`.
pub fn tangency_error(direction: &[Complex64], beta: &PhasePoint) -> f64 {
    direction.iter().zip(beta.as_slice()).map(|(d, b)| (d * b.conj()).re.abs()).fold(0.0, f64::max)
}

/// One accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub objective: f64,
    pub step: f64,
    /// Modulus error of the retracted iterate.
    pub modulus_error: f64,
    /// Tangency error of the direction the step was taken along.
    pub tangency_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No step above the floor gave sufficient decrease.
    LineSearchFailed,
    /// The projected gradient vanished.
    Stationary,
    /// `ζ ≥ |f0|`: nothing to do.
    ToleranceExceedsObjective,
    ObjectiveFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcmOutcome {
    pub beta: PhasePoint,
    pub initial_objective: Option<f64>,
    pub objective: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub stop: StopReason,
    /// Error that ended the run, if any.
    pub diagnostic: Option<Error>,
}

impl CcmOutcome {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }
}

/// Minimizes `objective` over unit-modulus vectors starting from `initial`.
pub fn optimize_phase_shifts(
    objective: &dyn ManifoldObjective,
    initial: PhasePoint,
    cfg: &CcmConfig,
) -> Result<CcmOutcome> {
    cfg.validate()?;
    let f0 = match objective.value(initial.as_slice()) {
        Ok(f) if f.is_finite() => f,
        Ok(f) => return Ok(failed(initial, Error::SingularFim(f))),
        Err(e) => return Ok(failed(initial, e)),
    };
    let zeta = cfg.zeta.unwrap_or(1e-6 * f0.abs());
    let mut out = CcmOutcome {
        beta: initial,
        initial_objective: Some(f0),
        objective: Some(f0),
        steps: Vec::new(),
        stop: StopReason::MaxIterations,
        diagnostic: None,
    };
    if zeta >= f0.abs() {
        out.stop = StopReason::ToleranceExceedsObjective;
        return Ok(out);
    }

    let mut f = f0;
    for _ in 0..cfg.max_iterations {
        let egrad = match objective.euclidean_gradient(out.beta.as_slice()) {
            Ok(g) => g,
            Err(e) => {
                out.stop = StopReason::ObjectiveFailed;
                out.diagnostic = Some(e);
                break;
            }
        };
        let tangent = riemannian_gradient(&egrad, &out.beta);
        let direction = search_direction(&tangent, cfg.direction);
        let scale = direction.iter().map(|d| d.norm()).fold(0.0, f64::max);
        if !(scale > 0.0) || !scale.is_finite() {
            out.stop = StopReason::Stationary;
            break;
        }
        let direction: Vec<Complex64> = direction.iter().map(|d| d / scale).collect();
        let slope: f64 = egrad.iter().zip(&direction).map(|(g, d)| (g.conj() * d).re).sum();
        let tangency = tangency_error(&direction, &out.beta);
        if !(slope < 0.0) {
            // not a descent direction; sufficient decrease is undefined
            out.stop = StopReason::LineSearchFailed;
            break;
        }

        let mut step = cfg.initial_step;
        let mut accepted = None;
        while step >= cfg.min_step {
            if let Ok(cand) = retract(&tangent_update(&out.beta, &direction, step)) {
                if let Ok(fc) = objective.value(cand.as_slice()) {
                    if fc.is_finite() && fc <= f && fc <= f + cfg.sufficient_decrease * step * slope {
                        accepted = Some((cand, fc));
                        break;
                    }
                }
            }
            step *= cfg.shrink;
        }
        let Some((cand, fc)) = accepted else {
            out.stop = StopReason::LineSearchFailed;
            break;
        };
        out.steps.push(StepRecord {
            objective: fc,
            step,
            modulus_error: cand.modulus_error(),
            tangency_error: tangency,
        });
        let change = (f - fc).abs();
        out.beta = cand;
        f = fc;
        out.objective = Some(f);
        if change <= zeta {
            out.stop = StopReason::Converged;
            break;
        }
    }
    Ok(out)
}

fn failed(initial: PhasePoint, e: Error) -> CcmOutcome {
    log::debug!("phase optimization skipped: {e}");
    CcmOutcome {
        beta: initial,
        initial_objective: None,
        objective: None,
        steps: Vec::new(),
        stop: StopReason::ObjectiveFailed,
        diagnostic: Some(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crb::{CrbObjective, CrbWeights, UserTerm};
    use crate::dictionary::AtomLocation;
    use crate::geometry::{RisConfig, SphericalPoint};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn projection_examples() {
        let beta = PhasePoint::from_angles(&[0.4, -1.1, 2.5]);
        let t = riemannian_gradient(beta.as_slice(), &beta);
        assert!(t.iter().all(|z| z.norm() < 1e-15));

        let t = riemannian_gradient(&[c(3.0, -2.0)], &PhasePoint::ones(1));
        assert_eq!(t, vec![c(0.0, -2.0)]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let beta = PhasePoint::random(16, &mut rng);
        let g: Vec<_> = (0..16).map(|_| c(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
        let t = riemannian_gradient(&g, &beta);
        assert!(tangency_error(&t, &beta) < 1e-14);
        assert!(tangency_error(&search_direction(&t, DirectionRule::ProjectedNegative), &beta) < 1e-14);
    }

    #[test]
    fn update_examples() {
        let beta = PhasePoint::from_angles(&[0.3, 1.0]);
        let d = vec![c(1.0, 2.0), c(-0.5, 0.0)];
        assert_eq!(tangent_update(&beta, &d, 0.0), beta.as_slice().to_vec());
        assert_eq!(tangent_update(&beta, &[c(0.0, 0.0); 2], 0.7), beta.as_slice().to_vec());
        let r = tangent_update(&PhasePoint::ones(1), &[c(0.0, 2.0)], 0.25);
        assert_eq!(r, vec![c(1.0, 0.5)]);
    }

    fn nf_objective(rng: &mut ChaCha8Rng) -> CrbObjective {
        let cfg = RisConfig::new(4, 4, 0.03, 0.06).unwrap();
        let p =
            SphericalPoint::new(rng.random_range(0.3..1.2), rng.random_range(0.6..2.5), rng.random_range(-1.0..1.0))
                .unwrap();
        let h_a: Vec<Complex64> =
            (0..cfg.len()).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let hist: Vec<PhasePoint> = (0..2).map(|_| PhasePoint::random(cfg.len(), rng)).collect();
        CrbObjective::from_estimates(
            &[AtomLocation::Near(p)],
            &[c(1.0, 0.0)],
            &[h_a],
            &[c(1.0, 0.0)],
            &hist,
            0.1,
            &CrbWeights::default(),
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn descent_is_monotone_and_stays_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let obj = nf_objective(&mut rng);
            let init = PhasePoint::random(16, &mut rng);
            let out = optimize_phase_shifts(&obj, init, &CcmConfig::default()).unwrap();
            let f0 = out.initial_objective.unwrap();
            let mut prev = f0;
            for s in &out.steps {
                assert!(s.objective <= prev);
                assert!(s.modulus_error < 1e-12);
                assert!(s.tangency_error < 1e-10);
                prev = s.objective;
            }
            assert!(out.objective.unwrap() <= f0);
            assert!(!out.steps.is_empty());
        }
    }

    #[test]
    fn huge_tolerance_returns_initial_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obj = nf_objective(&mut rng);
        let init = PhasePoint::random(16, &mut rng);
        let cfg = CcmConfig { zeta: Some(1e30), ..Default::default() };
        let out = optimize_phase_shifts(&obj, init.clone(), &cfg).unwrap();
        assert_eq!(out.beta, init);
        assert_eq!(out.stop, StopReason::ToleranceExceedsObjective);
    }

    #[test]
    fn zero_weights_return_initial_point() {
        let term = UserTerm {
            derivatives: vec![vec![c(1.0, 0.0), c(0.0, 1.0)]],
            prior: DMatrix::from_element(1, 1, 1.0),
            weights: vec![0.0],
            kappa: 1.0,
        };
        let obj = CrbObjective { terms: vec![term] };
        let init = PhasePoint::from_angles(&[0.2, 0.9]);
        let out = optimize_phase_shifts(&obj, init.clone(), &CcmConfig::default()).unwrap();
        assert_eq!(out.beta, init);
        assert!(obj.euclidean_gradient(init.as_slice()).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn singular_objective_returns_initial_with_diagnostic() {
        // no history and a single candidate cycle cannot identify three parameters
        let term = UserTerm {
            derivatives: vec![vec![c(1.0, 0.0)], vec![c(0.0, 1.0)], vec![c(1.0, 1.0)]],
            prior: DMatrix::zeros(3, 3),
            weights: vec![1.0; 3],
            kappa: 1.0,
        };
        let obj = CrbObjective { terms: vec![term] };
        let out = optimize_phase_shifts(&obj, PhasePoint::ones(1), &CcmConfig::default()).unwrap();
        assert_eq!(out.beta, PhasePoint::ones(1));
        assert!(matches!(out.diagnostic, Some(Error::SingularFim(_))));
    }

    #[test]
    fn as_printed_direction_cannot_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obj = nf_objective(&mut rng);
        let init = PhasePoint::random(16, &mut rng);
        let cfg = CcmConfig { direction: DirectionRule::AsPrinted, ..Default::default() };
        let out = optimize_phase_shifts(&obj, init.clone(), &cfg).unwrap();
        assert_eq!(out.stop, StopReason::LineSearchFailed);
        assert_eq!(out.beta, init);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = CcmConfig { shrink: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = CcmConfig { max_iterations: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
