#![allow(dead_code)]

use crossphase::bundled;
use crossphase::netmodel::{
    BusSpec, Connection, Feeder, LineSegment, LoadSpec, NeutralBonding, Phase, PvSpec, RegulatorSpec,
};

/// Feeder on the two-bus line geometry with the given `(from, to, miles)`
/// segments; segment ids are `s01`, `s02`, ... in input order.
pub fn radial(source: &str, edges: &[(&str, &str, f64)]) -> Feeder {
    let mut f = bundled::twobus();
    f.name = "synthetic".into();
    f.notes.clear();
    f.neutral_bonding = NeutralBonding::BothEnds;
    f.source_bus = source.into();
    let mut buses = vec![source.to_string()];
    for (a, b, _) in edges {
        for x in [a, b] {
            if !buses.iter().any(|y| y == x) {
                buses.push(x.to_string());
            }
        }
    }
    f.buses = buses.into_iter().map(|id| BusSpec { id }).collect();
    f.segments = edges
        .iter()
        .enumerate()
        .map(|(i, (a, b, l))| LineSegment {
            id: format!("s{:02}", i + 1),
            from_bus: a.to_string(),
            to_bus: b.to_string(),
            length_miles: *l,
            geometry: "pole_4w".into(),
        })
        .collect();
    f.loads.clear();
    f.pvs.clear();
    f.regulators.clear();
    f.capacitors.clear();
    f
}

/// Chain `b00`, `b01`, ..., `b{n-1}` with equal segment lengths.
pub fn chain(n: usize, miles: f64) -> Feeder {
    let names: Vec<String> = (0..n).map(|i| format!("b{i:02}")).collect();
    let edges: Vec<(&str, &str, f64)> = names.windows(2).map(|w| (w[0].as_str(), w[1].as_str(), miles)).collect();
    radial("b00", &edges)
}

pub fn load(id: &str, bus: &str, phase: Connection, p_kw: f64) -> LoadSpec {
    LoadSpec {
        id: id.into(),
        bus: bus.into(),
        phase,
        p_kw,
        q_kvar: None,
        pf: Some(0.95),
        model: Default::default(),
    }
}

pub fn pv(id: &str, bus: &str, phase: Phase, p_kw: f64, s_kva: f64) -> PvSpec {
    PvSpec {
        id: id.into(),
        bus: bus.into(),
        phase,
        p_kw,
        s_rating_kva: s_kva,
        q_kvar: 0.0,
    }
}

pub fn regulator(id: &str, segment: &str, phase: Phase, tap: f64) -> RegulatorSpec {
    RegulatorSpec {
        id: id.into(),
        segment: segment.into(),
        phase,
        tap_ratio: tap,
    }
}
