//! Coordinate conventions, RIS element layout and near/far-field classification.
//!
//! The RIS lies on the Y-Z plane with its centre at the origin and illuminates
//! the half-space `x > 0`. A location is given in spherical coordinates
//! `(range, polar, azimuth)` with
//!
//! ```text
//! x = R sin(polar) cos(azimuth)
//! y = R sin(polar) sin(azimuth)
//! z = R cos(polar)
//! ```
//!
//! so the plane-wave path difference to element `(0, y_n, z_n)` is
//! `R - y_n sin(polar) sin(azimuth) - z_n cos(polar)`. The polar angle lives in
//! `(0, pi)` and the azimuth in `(-pi/2, pi/2)`; together they cover the front
//! half-space exactly once and the panel normal is `(pi/2, 0)`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Phase error above which a location belongs to the near field.
pub const NEAR_FIELD_PHASE_THRESHOLD: f64 = PI / 8.0;

/// Open polar-angle domain.
pub const POLAR_RANGE: (f64, f64) = (0.0, PI);

/// Open azimuth domain (front half-space).
pub const AZIMUTH_RANGE: (f64, f64) = (-FRAC_PI_2, FRAC_PI_2);

/// A user or scatter location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    range: f64,
    polar: f64,
    azimuth: f64,
}

impl SphericalPoint {
    pub fn new(range: f64, polar: f64, azimuth: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidLocation(format!("range must be positive, got {range}")));
        }
        if !(polar > POLAR_RANGE.0 && polar < POLAR_RANGE.1) {
            return Err(Error::InvalidLocation(format!("polar angle {polar} outside (0, pi)")));
        }
        if !(azimuth > AZIMUTH_RANGE.0 && azimuth < AZIMUTH_RANGE.1) {
            return Err(Error::InvalidLocation(format!("azimuth {azimuth} outside (-pi/2, pi/2)")));
        }
        Ok(Self { range, polar, azimuth })
    }

    /// Builds the point from Cartesian coordinates with `x > 0`.
    pub fn from_cartesian(x: f64, y: f64, z: f64) -> Result<Self> {
        let range = (x * x + y * y + z * z).sqrt();
        if range == 0.0 || x <= 0.0 {
            return Err(Error::InvalidLocation(format!("({x}, {y}, {z}) is not in front of the panel")));
        }
        let polar = (z / range).clamp(-1.0, 1.0).acos();
        let azimuth = y.atan2(x);
        Self::new(range, polar, azimuth)
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn polar(&self) -> f64 {
        self.polar
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    /// Same direction, different range.
    pub fn with_range(&self, range: f64) -> Result<Self> {
        Self::new(range, self.polar, self.azimuth)
    }

    pub fn to_cartesian(&self) -> [f64; 3] {
        cartesian(self.range, self.polar, self.azimuth)
    }
}

/// Spherical to Cartesian conversion on raw coordinates.
pub fn cartesian(range: f64, polar: f64, azimuth: f64) -> [f64; 3] {
    let (sp, cp) = polar.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    [range * sp * ca, range * sp * sa, range * cp]
}

pub fn spherical_to_cartesian(p: &SphericalPoint) -> [f64; 3] {
    p.to_cartesian()
}

/// Which propagation model applies at a location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    NearField,
    FarField,
}

/// Panel geometry. Elements are stored row-major: element `n = r * cols + c`
/// sits at `y = (r - (rows-1)/2) * spacing`, `z = (c - (cols-1)/2) * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct RisConfig {
    rows: usize,
    cols: usize,
    spacing: f64,
    wavelength: f64,
    element_coords: Vec<(f64, f64)>,
}

impl RisConfig {
    pub fn new(rows: usize, cols: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("RIS needs at least one row and one column".into()));
        }
        if !(spacing > 0.0) || !(wavelength > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spacing ({spacing}) and wavelength ({wavelength}) must be positive"
            )));
        }
        let y0 = (rows as f64 - 1.0) / 2.0;
        let z0 = (cols as f64 - 1.0) / 2.0;
        let element_coords = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| ((r as f64 - y0) * spacing, (c as f64 - z0) * spacing)))
            .collect();
        Ok(Self { rows, cols, spacing, wavelength, element_coords })
    }

    /// Panel with wavelength derived from a carrier frequency in Hz.
    pub fn with_carrier(rows: usize, cols: usize, spacing: f64, carrier_hz: f64) -> Result<Self> {
        if !(carrier_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("carrier frequency {carrier_hz} must be positive")));
        }
        Self::new(rows, cols, spacing, SPEED_OF_LIGHT / carrier_hz)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Number of elements `N = rows * cols`.
    pub fn len(&self) -> usize {
        self.element_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_coords.is_empty()
    }

    pub fn element_coords(&self) -> &[(f64, f64)] {
        &self.element_coords
    }

    /// Largest element distance from the panel centre.
    pub fn aperture_radius(&self) -> f64 {
        self.element_coords.iter().map(|&(y, z)| (y * y + z * z).sqrt()).fold(0.0, f64::max)
    }
}

impl Default for RisConfig {
    /// 10x10 panel at 5 GHz with 3 cm (half-wavelength) spacing.
    fn default() -> Self {
        Self::with_carrier(10, 10, 0.03, 5.0e9).expect("default panel is valid")
    }
}

pub fn ris_element_positions(cfg: &RisConfig) -> &[(f64, f64)] {
    cfg.element_coords()
}

#[inline]
pub(crate) fn element_distance(xyz: [f64; 3], (yn, zn): (f64, f64)) -> f64 {
    let dy = xyz[1] - yn;
    let dz = xyz[2] - zn;
    (xyz[0] * xyz[0] + dy * dy + dz * dz).sqrt()
}

pub fn distance_to_element(p: &SphericalPoint, n: usize, cfg: &RisConfig) -> Result<f64> {
    let coord = *cfg.element_coords().get(n).ok_or(Error::ElementIndex { index: n, len: cfg.len() })?;
    Ok(element_distance(p.to_cartesian(), coord))
}

/// Signed maximum over elements of the spherical-minus-planar phase.
pub fn max_phase_error(p: &SphericalPoint, cfg: &RisConfig) -> f64 {
    max_phase_error_raw(p.range, p.polar, p.azimuth, cfg)
}

fn max_phase_error_raw(range: f64, polar: f64, azimuth: f64, cfg: &RisConfig) -> f64 {
    let xyz = cartesian(range, polar, azimuth);
    let (sp, cp) = polar.sin_cos();
    let sa = azimuth.sin();
    let k = cfg.wavenumber();
    cfg.element_coords()
        .iter()
        .map(|&(yn, zn)| {
            let planar = range - yn * sp * sa - zn * cp;
            k * (element_distance(xyz, (yn, zn)) - planar)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `NearField` iff the maximum phase error exceeds pi/8; ties go to the far field.
pub fn classify_region(p: &SphericalPoint, cfg: &RisConfig) -> Region {
    if max_phase_error(p, cfg) > NEAR_FIELD_PHASE_THRESHOLD {
        Region::NearField
    } else {
        Region::FarField
    }
}

/// Outermost range along the ray `(polar, azimuth)` that is still near field,
/// or `None` when the ray has no near-field segment.
pub fn near_field_boundary(polar: f64, azimuth: f64, cfg: &RisConfig) -> Option<f64> {
    let is_near = |r: f64| max_phase_error_raw(r, polar, azimuth, cfg) > NEAR_FIELD_PHASE_THRESHOLD;
    // beyond this range the second-order term alone is below the threshold
    let aperture = cfg.aperture_radius();
    let far = (16.0 * aperture * aperture / cfg.wavelength()).max(4.0 * aperture).max(cfg.wavelength());
    if aperture == 0.0 {
        return None;
    }
    // walk inwards geometrically until a near-field sample is found
    let mut hi = far;
    let mut lo = far;
    loop {
        lo *= 0.8;
        if lo < 1e-3 * cfg.wavelength() {
            return None;
        }
        if is_near(lo) {
            break;
        }
        hi = lo;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if is_near(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}
