//! Detector response model and synthetic count generation.
//!
//! The uncollided flux from an isotropic point source reaching a detector
//! face is `S0 * dt * eff * A / (4 pi d^2) * exp(-tau)`, where `tau` is the
//! optical depth of the straight ray between them. A constant background
//! rate is added to form the Poisson mean.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{optical_depth, trace_path, Building, DomainGeometry, Point2};
use crate::likelihood::FeasibleBox;
use crate::rng::SimRng;

/// Source and detector closer than this are treated as coincident.
pub const SINGULAR_DISTANCE: f64 = 1e-6;

/// Face area of a 3-inch diameter circular detector (m^2).
pub const DEFAULT_FACE_AREA: f64 = PI * 0.0381 * 0.0381;
pub const DEFAULT_EFFICIENCY: f64 = 0.62;
pub const DEFAULT_DWELL_TIME: f64 = 1.0;
pub const DEFAULT_BACKGROUND_CPS: f64 = 300.0;
/// Narrow-beam attenuation of dry air at 662 keV (1/m).
pub const DEFAULT_AIR_SIGMA_T: f64 = 9.3e-3;
pub const DEFAULT_INTENSITY_SCALE: f64 = 5e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub position: Point2,
    pub face_area: f64,
    pub efficiency: f64,
    pub dwell_time: f64,
}

impl Detector {
    pub fn new(position: Point2, face_area: f64, efficiency: f64, dwell_time: f64) -> Result<Self> {
        let d = Self {
            position,
            face_area,
            efficiency,
            dwell_time,
        };
        d.validate()?;
        Ok(d)
    }

    /// Detector with the default face area, efficiency and one-second dwell.
    pub fn standard(position: Point2) -> Self {
        Self {
            position,
            face_area: DEFAULT_FACE_AREA,
            efficiency: DEFAULT_EFFICIENCY,
            dwell_time: DEFAULT_DWELL_TIME,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position.x.is_finite() && self.position.y.is_finite()) {
            return Err(Error::InvalidInput("non-finite detector position".into()));
        }
        if !(self.face_area > 0.0 && self.face_area.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "face area must be positive, got {}",
                self.face_area
            )));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidInput(format!(
                "efficiency must lie in [0, 1], got {}",
                self.efficiency
            )));
        }
        if !(self.dwell_time > 0.0 && self.dwell_time.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "dwell time must be positive, got {}",
                self.dwell_time
            )));
        }
        Ok(())
    }
}

/// Source position (m) and intensity (decays/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub x: f64,
    pub y: f64,
    pub s0: f64,
}

impl SourceParams {
    pub const fn new(x: f64, y: f64, s0: f64) -> Self {
        Self { x, y, s0 }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.s0]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Euclidean distance between the two positions.
    pub fn location_error(&self, truth: &SourceParams) -> f64 {
        (self.x - truth.x).hypot(self.y - truth.y)
    }

    pub fn relative_intensity_error(&self, truth: &SourceParams) -> f64 {
        ((self.s0 - truth.s0) / truth.s0).abs()
    }
}

/// Geometry, detectors and the search box for one localization problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub provenance: String,
    pub geometry: DomainGeometry,
    pub detectors: Vec<Detector>,
    /// Background count rate (counts/s).
    pub background: f64,
    /// Admissible `(x, y, s0)` in unscaled units.
    pub feasible_box: FeasibleBox,
    pub intensity_scale: f64,
    pub true_source: Option<SourceParams>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::InvalidInput("scenario needs at least one detector".into()));
        }
        if !(self.background >= 0.0 && self.background.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "background must be finite and >= 0, got {}",
                self.background
            )));
        }
        if !(self.intensity_scale > 0.0 && self.intensity_scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "intensity scale must be positive, got {}",
                self.intensity_scale
            )));
        }
        let bounds = self.geometry.bounds();
        for (i, d) in self.detectors.iter().enumerate() {
            d.validate()?;
            if !bounds.contains(&d.position) {
                return Err(Error::InvalidInput(format!("detector {i} outside domain")));
            }
        }
        self.feasible_box.validate()?;
        if self.feasible_box.lower[2] <= 0.0 {
            return Err(Error::InvalidInput(
                "intensity lower bound must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Poisson mean for every detector.
    pub fn mean_counts(&self, theta: &SourceParams) -> Result<Vec<f64>> {
        self.detectors
            .iter()
            .enumerate()
            .map(|(i, d)| {
                mean_count(d, theta, &self.geometry, self.background).map_err(|e| match e {
                    Error::SingularConfiguration { distance, .. } => {
                        Error::SingularConfiguration {
                            detector: i,
                            distance,
                        }
                    }
                    other => other,
                })
            })
            .collect()
    }
}

/// Detector-by-repetition matrix of counts, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationSet {
    counts: Vec<u64>,
    n_det: usize,
    n_rep: usize,
}

impl ObservationSet {
    pub fn new(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n_det = rows.len();
        if n_det == 0 {
            return Err(Error::InvalidInput("observation set has no detectors".into()));
        }
        let n_rep = rows[0].len();
        if n_rep == 0 {
            return Err(Error::InvalidInput("observation set has no repetitions".into()));
        }
        if rows.iter().any(|r| r.len() != n_rep) {
            return Err(Error::InvalidInput("ragged observation matrix".into()));
        }
        Ok(Self {
            counts: rows.into_iter().flatten().collect(),
            n_det,
            n_rep,
        })
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn n_rep(&self) -> usize {
        self.n_rep
    }

    pub fn row(&self, detector: usize) -> &[u64] {
        &self.counts[detector * self.n_rep..(detector + 1) * self.n_rep]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_rep).map(|c| c.to_vec()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &u64> {
        self.counts.iter()
    }
}

/// Expected source counts at `d` over its dwell time, without background.
pub fn detector_response(d: &Detector, theta: &SourceParams, geom: &DomainGeometry) -> Result<f64> {
    let src = theta.position();
    let dist = src.distance(&d.position);
    if !(dist >= SINGULAR_DISTANCE) {
        return Err(Error::SingularConfiguration {
            detector: 0,
            distance: dist,
        });
    }
    if theta.s0 == 0.0 {
        return Ok(0.0);
    }
    let path = trace_path(geom, &src, &d.position)?;
    let tau = optical_depth(&path);
    let geometric = d.dwell_time * d.efficiency * d.face_area / (4.0 * PI * dist * dist);
    Ok(theta.s0 * geometric * (-tau).exp())
}

/// Source response plus background accumulated over the dwell time.
pub fn mean_count(
    d: &Detector,
    theta: &SourceParams,
    geom: &DomainGeometry,
    background: f64,
) -> Result<f64> {
    Ok(detector_response(d, theta, geom)? + background * d.dwell_time)
}

/// Draws `n_rep` independent Poisson counts per detector.
pub fn simulate_observations(
    scn: &Scenario,
    theta_true: &SourceParams,
    n_rep: usize,
    rng: &mut SimRng,
) -> Result<ObservationSet> {
    if n_rep == 0 {
        return Err(Error::InvalidInput("n_rep must be at least 1".into()));
    }
    let means = scn.mean_counts(theta_true)?;
    let rows = means
        .iter()
        .map(|&mu| (0..n_rep).map(|_| poisson_draw(mu, rng)).collect())
        .collect();
    ObservationSet::new(rows)
}

/// One Poisson variate; a zero mean yields zero.
pub fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .map(|p| p.sample(rng) as u64)
        .unwrap_or(0)
}

/// Cross-section that gives a building of `area` the optical thickness `tau`
/// across its characteristic length `sqrt(area)`.
pub fn sigma_from_thickness(tau: f64, area: f64) -> Result<f64> {
    if !(area > 0.0) {
        return Err(Error::InvalidInput(format!(
            "building area must be positive, got {area}"
        )));
    }
    Ok(tau / area.sqrt())
}

/// Samples an optical thickness in `mfp_range` for every building, biased
/// toward the top of the range for larger footprints, and sets `sigma_t`.
///
/// With area rank `r` (1 = smallest) among `n` buildings the weight is
/// `w = 2r / (n + 1)` and `tau = lo + (hi - lo) * u^(1/w)`.
pub fn assign_cross_sections(
    buildings: &[Building],
    mfp_range: (f64, f64),
    rng: &mut SimRng,
) -> Result<Vec<Building>> {
    let (lo, hi) = mfp_range;
    if buildings.is_empty() {
        return Err(Error::InvalidInput("no buildings to assign".into()));
    }
    if !(lo >= 0.0 && hi >= lo) {
        return Err(Error::InvalidInput(format!(
            "invalid optical thickness range [{lo}, {hi}]"
        )));
    }
    let areas: Vec<f64> = buildings.iter().map(Building::area).collect();
    if let Some(i) = areas.iter().position(|a| !(*a > 0.0)) {
        return Err(Error::InvalidInput(format!("building {i} has zero area")));
    }
    let mut order: Vec<usize> = (0..buildings.len()).collect();
    order.sort_by(|&a, &b| areas[a].total_cmp(&areas[b]));
    let mut rank = vec![0usize; buildings.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    let n = buildings.len() as f64;
    buildings
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let w = 2.0 * rank[i] as f64 / (n + 1.0);
            let u: f64 = rng.random();
            let tau = lo + (hi - lo) * u.powf(1.0 / w);
            b.with_sigma_t(sigma_from_thickness(tau, areas[i])?)
        })
        .collect()
}
