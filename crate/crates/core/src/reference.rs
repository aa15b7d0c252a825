//! The 250 m x 180 m reference city used by the acceptance checks and the
//! examples: 12 buildings, 10 detectors and a 3.219e9 Bq source at
//! (158, 98), observed 10 times.

use crate::city::{generate_city, CitySpec};
use crate::error::Result;
use crate::rng::substream;
use crate::transport::{simulate_observations, ObservationSet, Scenario, SourceParams};

pub const REFERENCE_SEED: u64 = 25;
pub const REFERENCE_BUILDINGS: usize = 12;
pub const REFERENCE_REPLICATES: usize = 10;
/// Stream of the city seed that drives the observation draws.
pub const OBSERVATION_STREAM: u64 = 3;

pub fn reference_source() -> SourceParams {
    SourceParams::new(158.0, 98.0, 3.219e9)
}

pub fn reference_spec() -> CitySpec {
    let mut spec = CitySpec::new(250.0, 180.0, REFERENCE_BUILDINGS, REFERENCE_SEED);
    spec.keep_clear.push(reference_source().position());
    spec.true_source = Some(reference_source());
    spec
}

pub fn reference_scenario() -> Result<Scenario> {
    generate_city(&reference_spec())
}

pub fn reference_observations(scn: &Scenario) -> Result<ObservationSet> {
    simulate_observations(
        scn,
        &reference_source(),
        REFERENCE_REPLICATES,
        &mut substream(REFERENCE_SEED, OBSERVATION_STREAM),
    )
}
