//! Unit-modulus RIS phase-shift vectors.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted deviation of `|beta_n|` from one.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;

/// A point on the complex circle manifold: every entry has modulus one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Complex64>", into = "Vec<Complex64>")]
pub struct PhasePoint(Vec<Complex64>);

impl PhasePoint {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if let Some((index, z)) = entries.iter().enumerate().find(|(_, z)| (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL) {
            return Err(Error::NotUnitModulus { index, modulus: z.norm() });
        }
        Ok(Self(entries))
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![Complex64::new(1.0, 0.0); len])
    }

    pub fn from_angles(angles: &[f64]) -> Self {
        Self(angles.iter().map(|&a| Complex64::from_polar(1.0, a)).collect())
    }

    /// Independent phases uniform on `[0, 2pi)`.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self((0..len).map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    /// `max_n | |beta_n| - 1 |`.
    pub fn modulus_error(&self) -> f64 {
        self.0.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Complex64>> for PhasePoint {
    type Error = Error;

    fn try_from(v: Vec<Complex64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PhasePoint> for Vec<Complex64> {
    fn from(p: PhasePoint) -> Self {
        p.0
    }
}

impl AsRef<[Complex64]> for PhasePoint {
    fn as_ref(&self) -> &[Complex64] {
        &self.0
    }
}

/// Entrywise radial normalisation `v_n / |v_n|`.
pub fn retract(v: &[Complex64]) -> Result<PhasePoint> {
    v.iter()
        .enumerate()
        .map(|(i, z)| {
            let m = z.norm();
            if m == 0.0 || !m.is_finite() {
                Err(Error::ZeroEntry(i))
            } else {
                Ok(z / m)
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(PhasePoint)
}
