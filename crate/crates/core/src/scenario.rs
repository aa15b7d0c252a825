//! JSON documents for scenarios and observation sets.
//!
//! Field names carry their units. Reading a file and writing it back gives a
//! byte-identical document.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Building, DomainBounds, DomainGeometry, Point2};
use crate::likelihood::FeasibleBox;
use crate::transport::{Detector, ObservationSet, Scenario, SourceParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingRecord {
    pub vertices_m: Vec<[f64; 2]>,
    pub sigma_t_per_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorRecord {
    pub position_m: [f64; 2],
    pub face_area_m2: f64,
    pub efficiency: f64,
    pub dwell_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub x_m: [f64; 2],
    pub y_m: [f64; 2],
    pub s0_bq: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRecord {
    pub x_m: f64,
    pub y_m: f64,
    pub s0_bq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub provenance: String,
    pub bounds_m: [f64; 2],
    pub air_sigma_t_per_m: f64,
    pub buildings: Vec<BuildingRecord>,
    pub detectors: Vec<DetectorRecord>,
    pub background_cps: f64,
    pub feasible_box: BoxRecord,
    pub intensity_scale_bq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_source: Option<SourceRecord>,
    pub seed: u64,
}

impl ScenarioFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        let b = s.geometry.bounds();
        let fb = &s.feasible_box;
        Self {
            schema_version: SCHEMA_VERSION,
            name: s.name.clone(),
            provenance: s.provenance.clone(),
            bounds_m: [b.width, b.height],
            air_sigma_t_per_m: s.geometry.air_sigma_t(),
            buildings: s
                .geometry
                .buildings()
                .iter()
                .map(|b| BuildingRecord {
                    vertices_m: b.vertices().iter().map(|p| [p.x, p.y]).collect(),
                    sigma_t_per_m: b.sigma_t(),
                })
                .collect(),
            detectors: s
                .detectors
                .iter()
                .map(|d| DetectorRecord {
                    position_m: [d.position.x, d.position.y],
                    face_area_m2: d.face_area,
                    efficiency: d.efficiency,
                    dwell_time_s: d.dwell_time,
                })
                .collect(),
            background_cps: s.background,
            feasible_box: BoxRecord {
                x_m: [fb.lower[0], fb.upper[0]],
                y_m: [fb.lower[1], fb.upper[1]],
                s0_bq: [fb.lower[2], fb.upper[2]],
            },
            intensity_scale_bq: s.intensity_scale,
            true_source: s.true_source.map(|t| SourceRecord {
                x_m: t.x,
                y_m: t.y,
                s0_bq: t.s0,
            }),
            seed: s.seed,
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported scenario schema version {}",
                self.schema_version
            )));
        }
        let buildings = self
            .buildings
            .iter()
            .map(|b| {
                Building::new(
                    b.vertices_m.iter().map(|v| Point2::new(v[0], v[1])).collect(),
                    b.sigma_t_per_m,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let geometry = DomainGeometry::new(
            DomainBounds {
                width: self.bounds_m[0],
                height: self.bounds_m[1],
            },
            buildings,
            self.air_sigma_t_per_m,
        )?;
        let detectors = self
            .detectors
            .iter()
            .map(|d| {
                Detector::new(
                    Point2::new(d.position_m[0], d.position_m[1]),
                    d.face_area_m2,
                    d.efficiency,
                    d.dwell_time_s,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fb = &self.feasible_box;
        let scenario = Scenario {
            name: self.name.clone(),
            provenance: self.provenance.clone(),
            geometry,
            detectors,
            background: self.background_cps,
            feasible_box: FeasibleBox::new(
                [fb.x_m[0], fb.y_m[0], fb.s0_bq[0]],
                [fb.x_m[1], fb.y_m[1], fb.s0_bq[1]],
            )?,
            intensity_scale: self.intensity_scale_bq,
            true_source: self
                .true_source
                .as_ref()
                .map(|t| SourceParams::new(t.x_m, t.y_m, t.s0_bq)),
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn scenario_to_json(s: &Scenario) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&ScenarioFile::from_scenario(s))?;
    text.push('\n');
    Ok(text)
}

pub fn scenario_from_json(text: &str) -> Result<Scenario> {
    serde_json::from_str::<ScenarioFile>(text)?.to_scenario()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    scenario_from_json(&fs::read_to_string(path)?)
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, scenario_to_json(s)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFile {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub n_det: usize,
    pub n_rep: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ObservationFile {
    pub fn new(scenario: &str, seed: u64, obs: &ObservationSet) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.to_string(),
            seed,
            n_det: obs.n_det(),
            n_rep: obs.n_rep(),
            counts: obs.rows(),
        }
    }

    pub fn to_observations(&self) -> Result<ObservationSet> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported observation schema version {}",
                self.schema_version
            )));
        }
        let obs = ObservationSet::new(self.counts.clone())?;
        if obs.n_det() != self.n_det || obs.n_rep() != self.n_rep {
            return Err(Error::InvalidInput(format!(
                "declared {}x{} counts, found {}x{}",
                self.n_det,
                self.n_rep,
                obs.n_det(),
                obs.n_rep()
            )));
        }
        Ok(obs)
    }
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<ObservationFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_observations(file: &ObservationFile, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string(file)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
