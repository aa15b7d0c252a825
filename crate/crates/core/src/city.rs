//! Synthetic city layouts.
//!
//! Rectangular footprints, some axis-aligned and some rotated, are dropped at
//! random into the domain and rejected when they come within `gap` meters of
//! an existing footprint. Detectors are then scattered over the open ground
//! with a minimum pairwise spacing.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{interiors_overlap, Building, DomainBounds, DomainGeometry, Point2};
use crate::likelihood::FeasibleBox;
use crate::rng::{substream, SimRng};
use crate::transport::{
    assign_cross_sections, Detector, Scenario, SourceParams, DEFAULT_AIR_SIGMA_T,
    DEFAULT_BACKGROUND_CPS, DEFAULT_INTENSITY_SCALE,
};

pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CitySpec {
    pub width: f64,
    pub height: f64,
    pub n_buildings: usize,
    pub n_detectors: usize,
    /// Side lengths are drawn from this range (m).
    pub side_range: (f64, f64),
    /// Minimum clearance between footprints (m).
    pub gap: f64,
    /// Optical thickness range in mean free paths.
    pub mfp_range: (f64, f64),
    /// Points that stay at least `clearance` from buildings and detectors.
    pub keep_clear: Vec<Point2>,
    pub clearance: f64,
    pub true_source: Option<SourceParams>,
    pub seed: u64,
}

impl CitySpec {
    pub fn new(width: f64, height: f64, n_buildings: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            n_buildings,
            n_detectors: 10,
            side_range: (8.0, 30.0),
            gap: 2.0,
            mfp_range: (1.0, 5.0),
            keep_clear: Vec::new(),
            clearance: 5.0,
            true_source: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    angle: f64,
}

impl Rect {
    fn corners(&self, pad: f64) -> Vec<Point2> {
        let (s, c) = self.angle.sin_cos();
        let (hw, hh) = (self.half_w + pad, self.half_h + pad);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .iter()
            .map(|&(u, v)| Point2::new(self.cx + c * u - s * v, self.cy + s * u + c * v))
            .collect()
    }

    fn padded(&self, pad: f64) -> Building {
        Building::new(self.corners(pad), 0.0).expect("rectangle is a valid polygon")
    }
}

/// Builds a scenario with `spec.n_buildings` footprints and detectors.
pub fn generate_city(spec: &CitySpec) -> Result<Scenario> {
    if !(spec.width > 0.0 && spec.height > 0.0) {
        return Err(Error::InvalidInput("city bounds must be positive".into()));
    }
    let (smin, smax) = spec.side_range;
    if !(smin > 0.0 && smax >= smin) || smax >= spec.width.min(spec.height) {
        return Err(Error::InvalidInput(format!(
            "side range [{smin}, {smax}] does not fit the domain"
        )));
    }
    let bounds = DomainBounds {
        width: spec.width,
        height: spec.height,
    };
    let mut rng = substream(spec.seed, 0);
    let rects = place_buildings(spec, &mut rng)?;
    let footprints: Vec<Building> = rects.iter().map(|r| r.padded(0.0)).collect();
    let buildings = if footprints.is_empty() {
        footprints
    } else {
        assign_cross_sections(&footprints, spec.mfp_range, &mut substream(spec.seed, 1))?
    };
    let geometry = DomainGeometry::new(bounds, buildings, DEFAULT_AIR_SIGMA_T)?;
    let detectors = place_detectors(spec, &geometry, &mut substream(spec.seed, 2))?;

    let scenario = Scenario {
        name: format!("city-{}x{}-n{}-s{}", spec.width, spec.height, spec.n_buildings, spec.seed),
        provenance: "synthetic".into(),
        geometry,
        detectors,
        background: DEFAULT_BACKGROUND_CPS,
        feasible_box: FeasibleBox::new([0.0, 0.0, 5e8], [spec.width, spec.height, 5e10])?,
        intensity_scale: DEFAULT_INTENSITY_SCALE,
        true_source: spec.true_source,
        seed: spec.seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn place_buildings(spec: &CitySpec, rng: &mut SimRng) -> Result<Vec<Rect>> {
    let (smin, smax) = spec.side_range;
    let mut rects: Vec<Rect> = Vec::with_capacity(spec.n_buildings);
    let mut padded: Vec<Building> = Vec::with_capacity(spec.n_buildings);
    let mut attempts = 0;
    while rects.len() < spec.n_buildings {
        if attempts == MAX_ATTEMPTS {
            return Err(Error::Packing {
                placed: rects.len(),
                requested: spec.n_buildings,
            });
        }
        attempts += 1;
        let half_w = 0.5 * rng.random_range(smin..=smax);
        let half_h = 0.5 * rng.random_range(smin..=smax);
        let angle = if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..FRAC_PI_2)
        };
        let rect = Rect {
            cx: rng.random_range(0.0..spec.width),
            cy: rng.random_range(0.0..spec.height),
            half_w,
            half_h,
            angle,
        };
        let corners = rect.corners(0.0);
        if corners
            .iter()
            .any(|p| p.x < 0.0 || p.x > spec.width || p.y < 0.0 || p.y > spec.height)
        {
            continue;
        }
        let clear = rect.padded(spec.clearance);
        if spec.keep_clear.iter().any(|k| clear.contains(k)) {
            continue;
        }
        let cand = rect.padded(0.5 * spec.gap);
        if padded.iter().any(|b| interiors_overlap(b, &cand)) {
            continue;
        }
        rects.push(rect);
        padded.push(cand);
    }
    Ok(rects)
}

fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    p.distance(&a.lerp(b, t))
}

/// Distance from `p` to the nearest building outline, 0 when inside.
fn distance_to_buildings(p: &Point2, geom: &DomainGeometry) -> f64 {
    geom.buildings()
        .iter()
        .map(|b| {
            if b.contains(p) {
                return 0.0;
            }
            let v = b.vertices();
            (0..v.len())
                .map(|i| point_segment_distance(p, &v[i], &v[(i + 1) % v.len()]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

fn place_detectors(spec: &CitySpec, geom: &DomainGeometry, rng: &mut SimRng) -> Result<Vec<Detector>> {
    let n = spec.n_detectors;
    if n == 0 {
        return Err(Error::InvalidInput("at least one detector is required".into()));
    }
    let spacing = 0.5 * (spec.width * spec.height / n as f64).sqrt();
    let margin = 1.0;
    let mut placed: Vec<Point2> = Vec::with_capacity(n);
    let mut attempts = 0;
    while placed.len() < n {
        if attempts == MAX_ATTEMPTS {
            return Err(Error::InvalidInput(format!(
                "placed only {} of {n} detectors",
                placed.len()
            )));
        }
        attempts += 1;
        let p = Point2::new(
            rng.random_range(margin..spec.width - margin),
            rng.random_range(margin..spec.height - margin),
        );
        if distance_to_buildings(&p, geom) < 0.5 * spec.gap {
            continue;
        }
        if placed.iter().any(|q| q.distance(&p) < spacing) {
            continue;
        }
        if spec.keep_clear.iter().any(|k| k.distance(&p) < spec.clearance) {
            continue;
        }
        placed.push(p);
    }
    Ok(placed.into_iter().map(Detector::standard).collect())
}
