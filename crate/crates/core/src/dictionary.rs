//! Candidate-location grids, atom channels `F = [F_near, F_far]` and the
//! per-user atom signals `Λ^k = B^T diag(h_A) F s`.
//!
//! Angles are sampled at cell midpoints of a `polar_cells x azimuth_cells`
//! lattice covering `(0, pi) x (-pi/2, pi/2)`. Near-field candidates add a range
//! axis `r_min, r_min + dr, ...` clipped per direction at the exact pi/8
//! boundary, so every near-field atom really is near field. Near atoms are
//! ordered by (polar cell, azimuth cell, range); far atoms by (polar cell,
//! azimuth cell).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ff_steering, nf_steering};
use crate::error::{Error, Result};
use crate::geometry::{classify_region, near_field_boundary, Region, RisConfig, SphericalPoint, AZIMUTH_RANGE};
use crate::phase::PhasePoint;

/// Sampling parameters of the candidate grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Innermost near-field range sample, meters.
    pub r_min: f64,
    /// Near-field range spacing, meters.
    pub range_step: f64,
    pub polar_cells: usize,
    pub azimuth_cells: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { r_min: 0.25, range_step: 0.25, polar_cells: 10, azimuth_cells: 10 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0) || !(self.range_step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid r_min ({}) and range_step ({}) must be positive",
                self.r_min, self.range_step
            )));
        }
        if self.polar_cells == 0 || self.azimuth_cells == 0 {
            return Err(Error::InvalidConfig("grid needs at least one angular cell per axis".into()));
        }
        Ok(())
    }

    pub fn polar_step(&self) -> f64 {
        PI / self.polar_cells as f64
    }

    pub fn azimuth_step(&self) -> f64 {
        PI / self.azimuth_cells as f64
    }
}

/// A candidate location: a full point in the near field, a direction in the far field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AtomLocation {
    Near(SphericalPoint),
    Far { polar: f64, azimuth: f64 },
}

impl AtomLocation {
    pub fn region(&self) -> Region {
        match self {
            AtomLocation::Near(_) => Region::NearField,
            AtomLocation::Far { .. } => Region::FarField,
        }
    }

    pub fn polar(&self) -> f64 {
        match self {
            AtomLocation::Near(p) => p.polar(),
            AtomLocation::Far { polar, .. } => *polar,
        }
    }

    pub fn azimuth(&self) -> f64 {
        match self {
            AtomLocation::Near(p) => p.azimuth(),
            AtomLocation::Far { azimuth, .. } => *azimuth,
        }
    }

    /// Range of a near-field atom; far-field atoms carry none.
    pub fn range(&self) -> Option<f64> {
        match self {
            AtomLocation::Near(p) => Some(p.range()),
            AtomLocation::Far { .. } => None,
        }
    }

    pub fn steering(&self, cfg: &RisConfig) -> Vec<Complex64> {
        match self {
            AtomLocation::Near(p) => nf_steering(p, cfg),
            AtomLocation::Far { polar, azimuth } => ff_steering(*polar, *azimuth, cfg),
        }
    }
}

/// Midpoint angular lattice shared by both sub-grids, polar-major.
pub fn angle_lattice(polar_cells: usize, azimuth_cells: usize) -> Vec<(f64, f64)> {
    let dp = PI / polar_cells as f64;
    let da = PI / azimuth_cells as f64;
    (0..polar_cells)
        .flat_map(|i| (0..azimuth_cells).map(move |j| ((i as f64 + 0.5) * dp, AZIMUTH_RANGE.0 + (j as f64 + 0.5) * da)))
        .collect()
}

/// Near-field candidates. Empty when the panel has no near-field region beyond `r_min`.
pub fn sample_nf_grid(
    cfg: &RisConfig,
    r_min: f64,
    range_step: f64,
    polar_cells: usize,
    azimuth_cells: usize,
) -> Result<Vec<SphericalPoint>> {
    GridSpec { r_min, range_step, polar_cells, azimuth_cells }.validate()?;
    let mut points = Vec::new();
    for (polar, azimuth) in angle_lattice(polar_cells, azimuth_cells) {
        let Some(boundary) = near_field_boundary(polar, azimuth, cfg) else {
            continue;
        };
        let mut i = 0usize;
        loop {
            let r = r_min + i as f64 * range_step;
            if r > boundary {
                break;
            }
            let p = SphericalPoint::new(r, polar, azimuth)?;
            if classify_region(&p, cfg) == Region::NearField {
                points.push(p);
            }
            i += 1;
        }
    }
    Ok(points)
}

/// Far-field candidate directions.
pub fn sample_ff_grid(polar_cells: usize, azimuth_cells: usize) -> Result<Vec<(f64, f64)>> {
    if polar_cells == 0 || azimuth_cells == 0 {
        return Err(Error::InvalidConfig("grid needs at least one angular cell per axis".into()));
    }
    Ok(angle_lattice(polar_cells, azimuth_cells))
}

/// Candidate locations and their atom channels, stored column-major (`N x M`).
#[derive(Debug, Clone, PartialEq)]
pub struct AtomDictionary {
    locations: Vec<AtomLocation>,
    atoms: Vec<Complex64>,
    elements: usize,
    near_count: usize,
}

impl AtomDictionary {
    /// Builds the `[F_near, F_far]` dictionary for the given grid.
    pub fn build(cfg: &RisConfig, grid: &GridSpec) -> Result<Self> {
        let near = sample_nf_grid(cfg, grid.r_min, grid.range_step, grid.polar_cells, grid.azimuth_cells)?;
        let far = sample_ff_grid(grid.polar_cells, grid.azimuth_cells)?;
        build_atom_channels(&near, &far, cfg)
    }

    pub fn from_locations(locations: Vec<AtomLocation>, cfg: &RisConfig) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidConfig("dictionary needs at least one candidate".into()));
        }
        let near_count = locations.iter().take_while(|l| l.region() == Region::NearField).count();
        if locations[near_count..].iter().any(|l| l.region() == Region::NearField) {
            return Err(Error::InvalidConfig("near-field atoms must precede far-field atoms".into()));
        }
        let elements = cfg.len();
        let mut atoms = Vec::with_capacity(elements * locations.len());
        for loc in &locations {
            atoms.extend(loc.steering(cfg));
        }
        Ok(Self { locations, atoms, elements, near_count })
    }

    /// Far-field sub-dictionary (`F_far` only).
    pub fn far_only(&self) -> Result<Self> {
        self.select(self.near_count..self.len())
    }

    /// Near-field sub-dictionary (`F_near` only).
    pub fn near_only(&self) -> Result<Self> {
        self.select(0..self.near_count)
    }

    fn select(&self, cols: std::ops::Range<usize>) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::InvalidConfig("sub-dictionary would be empty".into()));
        }
        let locations = self.locations[cols.clone()].to_vec();
        let near_count = locations.iter().filter(|l| l.region() == Region::NearField).count();
        let atoms = self.atoms[cols.start * self.elements..cols.end * self.elements].to_vec();
        Ok(Self { locations, atoms, elements: self.elements, near_count })
    }

    /// Number of atoms `M`.
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Number of RIS elements `N`.
    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn near_count(&self) -> usize {
        self.near_count
    }

    pub fn far_count(&self) -> usize {
        self.len() - self.near_count
    }

    pub fn locations(&self) -> &[AtomLocation] {
        &self.locations
    }

    pub fn location(&self, i: usize) -> &AtomLocation {
        &self.locations[i]
    }

    pub fn column(&self, i: usize) -> &[Complex64] {
        &self.atoms[i * self.elements..(i + 1) * self.elements]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex64]> {
        self.atoms.chunks_exact(self.elements)
    }
}

/// Concatenates near-field and far-field atom channels.
pub fn build_atom_channels(near: &[SphericalPoint], far: &[(f64, f64)], cfg: &RisConfig) -> Result<AtomDictionary> {
    let locations = near
        .iter()
        .map(|&p| AtomLocation::Near(p))
        .chain(far.iter().map(|&(polar, azimuth)| AtomLocation::Far { polar, azimuth }))
        .collect();
    AtomDictionary::from_locations(locations, cfg)
}

/// Atom signals of one user, `c x M`, grown one row per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSignals {
    user: usize,
    atoms: usize,
    rows: Vec<Complex64>,
    energies: Vec<f64>,
}

impl AtomSignals {
    pub fn new(user: usize, atoms: usize) -> Self {
        Self { user, atoms, rows: Vec::new(), energies: vec![0.0; atoms] }
    }

    /// Appends row `(beta)^T diag(h_A) F s`.
    pub fn push_cycle(
        &mut self,
        beta: &PhasePoint,
        h_a: &[Complex64],
        dict: &AtomDictionary,
        symbol: Complex64,
    ) -> Result<()> {
        if dict.len() != self.atoms {
            return Err(Error::Dimension(format!(
                "dictionary has {} atoms, signals expect {}",
                dict.len(),
                self.atoms
            )));
        }
        if beta.len() != dict.elements() || h_a.len() != dict.elements() {
            return Err(Error::Dimension(format!(
                "phase vector ({}) and RIS-BS channel ({}) must match {} elements",
                beta.len(),
                h_a.len(),
                dict.elements()
            )));
        }
        let weights: Vec<Complex64> = beta.as_slice().iter().zip(h_a).map(|(b, a)| b * a * symbol).collect();
        self.rows.reserve(self.atoms);
        for (col, energy) in dict.columns().zip(self.energies.iter_mut()) {
            let v: Complex64 = weights.iter().zip(col).map(|(w, f)| w * f).sum();
            *energy += v.norm_sqr();
            self.rows.push(v);
        }
        Ok(())
    }

    /// Appends a precomputed row of atom signals.
    pub fn push_row(&mut self, row: &[Complex64]) -> Result<()> {
        if row.len() != self.atoms {
            return Err(Error::Dimension(format!("row has {} entries, expected {}", row.len(), self.atoms)));
        }
        for (v, energy) in row.iter().zip(self.energies.iter_mut()) {
            *energy += v.norm_sqr();
        }
        self.rows.extend_from_slice(row);
        Ok(())
    }

    pub fn user(&self) -> usize {
        self.user
    }

    /// Number of cycles `c` (rows).
    pub fn cycles(&self) -> usize {
        self.rows.len().checked_div(self.atoms).unwrap_or(0)
    }

    /// Number of atoms `M` (columns).
    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.rows[m * self.atoms..(m + 1) * self.atoms]
    }

    pub fn get(&self, m: usize, i: usize) -> Complex64 {
        self.rows[m * self.atoms + i]
    }

    pub fn column(&self, i: usize) -> Vec<Complex64> {
        (0..self.cycles()).map(|m| self.get(m, i)).collect()
    }

    /// Column energies `‖Λ_i‖²`.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `Λ^H v` for a length-`c` vector.
    pub fn correlate(&self, v: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(v.len(), self.cycles());
        let mut out = vec![Complex64::new(0.0, 0.0); self.atoms];
        for (m, &vm) in v.iter().enumerate() {
            for (o, l) in out.iter_mut().zip(self.row(m)) {
                *o += l.conj() * vm;
            }
        }
        out
    }
}

/// `Λ = B^T diag(h_A) F s` for a full phase history.
pub fn build_atom_signals(
    history: &[PhasePoint],
    h_a: &[Complex64],
    dict: &AtomDictionary,
    symbol: Complex64,
    user: usize,
) -> Result<AtomSignals> {
    let mut signals = AtomSignals::new(user, dict.len());
    for beta in history {
        signals.push_cycle(beta, h_a, dict, symbol)?;
    }
    Ok(signals)
}
