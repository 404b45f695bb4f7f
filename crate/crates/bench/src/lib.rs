//! Fixtures shared by the criterion benches.

use crossphase::netmodel::apply_instance;
use crossphase::{bundled, Feeder};

/// Peak-PV hour used for the control benches.
pub const PEAK: &str = "h12";

/// High-PV feeder scaled to one profile instance.
pub fn hipv_at(label: &str) -> Feeder {
    apply_instance(&bundled::hipv(), &bundled::day(), label).expect("bundled profile covers hipv")
}

/// Bundled feeders by name, in increasing size.
pub fn feeders() -> Vec<(&'static str, Feeder)> {
    vec![
        ("twobus", bundled::twobus()),
        ("coupled30", bundled::coupled30()),
        ("hipv", bundled::hipv()),
    ]
}
