//! Feeders and profiles shipped with the crate.

use crate::netmodel::{Feeder, TimeSeriesProfile};

pub const TWOBUS_JSON: &str = include_str!("../../../assets/twobus.json");
pub const COUPLED30_JSON: &str = include_str!("../../../assets/coupled30.json");
pub const HIPV_JSON: &str = include_str!("../../../assets/hipv.json");
pub const DAY_CSV: &str = include_str!("../../../assets/day.csv");

/// Bundled file contents by file name.
pub fn asset(name: &str) -> Option<&'static str> {
    match name {
        "twobus.json" => Some(TWOBUS_JSON),
        "coupled30.json" => Some(COUPLED30_JSON),
        "hipv.json" => Some(HIPV_JSON),
        "day.csv" => Some(DAY_CSV),
        _ => None,
    }
}

pub fn names() -> [&'static str; 4] {
    ["twobus.json", "coupled30.json", "hipv.json", "day.csv"]
}

pub fn twobus() -> Feeder {
    Feeder::from_json_str(TWOBUS_JSON).expect("bundled twobus.json is valid")
}

pub fn coupled30() -> Feeder {
    Feeder::from_json_str(COUPLED30_JSON).expect("bundled coupled30.json is valid")
}

pub fn hipv() -> Feeder {
    Feeder::from_json_str(HIPV_JSON).expect("bundled hipv.json is valid")
}

pub fn day() -> TimeSeriesProfile {
    TimeSeriesProfile::from_csv_reader(DAY_CSV.as_bytes()).expect("bundled day.csv is valid")
}
