#![allow(dead_code)]

use wip_core::course::{CourseSpec, Rect};
use wip_core::mapping::MappingConfig;
use wip_core::model::RobotParams;
use wip_core::synthesis::GainSet;
use wip_core::world::{RunSetup, SimConfig};

pub fn setup_with(mapping: MappingConfig, course: CourseSpec) -> RunSetup {
    let params = RobotParams::default();
    RunSetup { gains: GainSet::synthesized(&params).unwrap(), params, mapping, course, sim: SimConfig::default() }
}

pub fn setup() -> RunSetup {
    setup_with(MappingConfig::default(), CourseSpec::three_cone())
}

/// Open field with no countdown, for free driving.
pub fn field() -> CourseSpec {
    CourseSpec {
        name: "field".into(),
        goal_line: 1000.0,
        cones: Vec::new(),
        bounds: Rect { x_min: -100.0, y_min: -100.0, x_max: 1001.0, y_max: 100.0 },
        countdown: 0.0,
        timeout: 600.0,
        ..CourseSpec::straight_line()
    }
}
