//! Shared fixtures for the criterion benches (see `benches/pipeline.rs`).

use eprkit::presets::preset;
use eprkit::{ExcitationGeometry, SpinSystem, ThermalModel};

pub fn system() -> SpinSystem {
    preset("this_work").expect("bundled preset exists")
}

pub fn geometry() -> ExcitationGeometry {
    ExcitationGeometry::voigt([0.0, 0.0, 1.0]).expect("c-axis is a valid direction")
}

pub fn thermal() -> ThermalModel {
    ThermalModel::new(0.020, 0.020).expect("20 mK is a valid temperature")
}
