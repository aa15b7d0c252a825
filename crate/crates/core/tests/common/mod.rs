#![allow(dead_code)]

use radloc::geometry::{Building, DomainBounds, DomainGeometry, Point2};
use radloc::likelihood::FeasibleBox;
use radloc::reference::{reference_observations, reference_scenario};
use radloc::transport::{Detector, Scenario, DEFAULT_BACKGROUND_CPS, DEFAULT_INTENSITY_SCALE};
use radloc::ObjectiveContext;

pub fn reference_ctx() -> ObjectiveContext {
    let scn = reference_scenario().unwrap();
    let obs = reference_observations(&scn).unwrap();
    ObjectiveContext::new(scn, obs).unwrap()
}

/// 100 m square, one 20 m block at the centre, detectors on three sides.
pub fn one_block_scenario(sigma: f64) -> Scenario {
    let block = Building::new(
        vec![
            Point2::new(40.0, 40.0),
            Point2::new(60.0, 40.0),
            Point2::new(60.0, 60.0),
            Point2::new(40.0, 60.0),
        ],
        sigma,
    )
    .unwrap();
    let bounds = DomainBounds { width: 100.0, height: 100.0 };
    Scenario {
        name: "one-block".into(),
        provenance: "test".into(),
        geometry: DomainGeometry::new(bounds, vec![block], 0.0).unwrap(),
        detectors: [(10.0, 50.0), (50.0, 90.0), (90.0, 20.0)]
            .iter()
            .map(|&(x, y)| Detector::standard(Point2::new(x, y)))
            .collect(),
        background: DEFAULT_BACKGROUND_CPS,
        feasible_box: FeasibleBox::new([0.0, 0.0, 5e8], [100.0, 100.0, 5e10]).unwrap(),
        intensity_scale: DEFAULT_INTENSITY_SCALE,
        true_source: None,
        seed: 0,
    }
}
