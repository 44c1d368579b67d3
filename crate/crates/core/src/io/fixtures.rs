//! Model documents shipped with the crate.

use crate::pipeline::ConfigurationModel;

/// Aerial conveyor: 24 requirements, 14 functions, 29 solutions.
pub const CONVEYOR: &str = include_str!("../../fixtures/conveyor.toml");
/// The conveyor with internal relations and a two-expert constraint domain
/// that ties two slots once the experts are merged.
pub const CONVEYOR_GENERALIZED: &str = include_str!("../../fixtures/conveyor-generalized.toml");
/// Small model with an invented requirement weighting.
pub const DESK_LAMP: &str = include_str!("../../fixtures/desk-lamp.toml");

pub const ALL: [(&str, &str); 3] = [
    ("conveyor", CONVEYOR),
    ("conveyor-generalized", CONVEYOR_GENERALIZED),
    ("desk-lamp", DESK_LAMP),
];

fn load(text: &str) -> ConfigurationModel {
    match super::parse_model(text) {
        Ok(p) => p.model,
        Err(e) => panic!("bundled fixture is invalid: {e}"),
    }
}

pub fn conveyor() -> ConfigurationModel {
    load(CONVEYOR)
}

pub fn conveyor_generalized() -> ConfigurationModel {
    load(CONVEYOR_GENERALIZED)
}

pub fn desk_lamp() -> ConfigurationModel {
    load(DESK_LAMP)
}
