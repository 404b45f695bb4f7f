//! Feeder data model, topology validation and time-series profiles.
//!
//! A [`Feeder`] mirrors the JSON feeder file one-to-one: elements refer to
//! each other by identifier and are resolved on demand. Field names carry
//! their units (`length_miles`, `p_kw`, ...).
//!
//! Reactive power sign convention: a positive `q_kvar` on a PV means the
//! inverter *absorbs* reactive power, i.e. it adds to the bus's reactive
//! demand exactly like an inductive load would.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed feeder description: {0}")]
    Parse(String),
    #[error("invalid feeder: {0}")]
    Invalid(String),
    #[error("unknown {kind} '{id}'")]
    UnknownReference { kind: &'static str, id: String },
    #[error("segment '{segment}' closes a cycle")]
    Cycle { segment: String },
    #[error("bus '{bus}' is not connected to the source")]
    Disconnected { bus: String },
    #[error("phase {phase} is not supplied at bus '{bus}'")]
    PhaseNotSupplied { bus: String, phase: Phase },
    #[error("malformed profile: {0}")]
    Profile(String),
    #[error("unknown instance label '{0}'")]
    UnknownInstance(String),
}

fn invalid(msg: impl Into<String>) -> NetError {
    NetError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Phase {
        Self::ALL[i]
    }

    /// Nominal angle of this phase's source voltage, degrees (ABC sequence).
    pub fn nominal_angle_deg(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120.0,
            Phase::C => 120.0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Phase::A),
            "B" => Ok(Phase::B),
            "C" => Ok(Phase::C),
            other => Err(format!("unknown phase '{other}'")),
        }
    }
}

/// One phase at one bus, written `bus.phase` (e.g. `N4.A`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodePhase {
    pub bus: String,
    pub phase: Phase,
}

impl NodePhase {
    pub fn new(bus: impl Into<String>, phase: Phase) -> Self {
        Self {
            bus: bus.into(),
            phase,
        }
    }
}

impl fmt::Display for NodePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.bus, self.phase)
    }
}

impl std::str::FromStr for NodePhase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (bus, phase) = s
            .rsplit_once('.')
            .ok_or_else(|| format!("expected bus.phase, got '{s}'"))?;
        Ok(NodePhase::new(bus, phase.parse()?))
    }
}

/// What a conductor position in a line geometry carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConductorLabel {
    A,
    B,
    C,
    N,
}

impl ConductorLabel {
    pub fn phase(self) -> Option<Phase> {
        match self {
            ConductorLabel::A => Some(Phase::A),
            ConductorLabel::B => Some(Phase::B),
            ConductorLabel::C => Some(Phase::C),
            ConductorLabel::N => None,
        }
    }

    pub fn is_neutral(self) -> bool {
        self == ConductorLabel::N
    }
}

impl From<Phase> for ConductorLabel {
    fn from(p: Phase) -> Self {
        match p {
            Phase::A => ConductorLabel::A,
            Phase::B => ConductorLabel::B,
            Phase::C => ConductorLabel::C,
        }
    }
}

impl fmt::Display for ConductorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.phase() {
            Some(p) => p.fmt(f),
            None => f.write_str("N"),
        }
    }
}

/// Phase connection of a load or capacitor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connection {
    A,
    B,
    C,
    ABC,
}

impl Connection {
    /// Phases served; three-phase elements are split equally across them.
    pub fn phases(self) -> &'static [Phase] {
        match self {
            Connection::A => &[Phase::A],
            Connection::B => &[Phase::B],
            Connection::C => &[Phase::C],
            Connection::ABC => &Phase::ALL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductorSpec {
    pub name: String,
    pub gmr_ft: f64,
    pub resistance_ohm_per_mile: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ampacity_a: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductorPosition {
    pub label: ConductorLabel,
    pub x_ft: f64,
    pub y_ft: f64,
    pub conductor: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineGeometry {
    pub name: String,
    pub conductors: Vec<ConductorPosition>,
}

impl LineGeometry {
    pub fn phases(&self) -> [bool; 3] {
        let mut out = [false; 3];
        for c in &self.conductors {
            if let Some(p) = c.label.phase() {
                out[p.index()] = true;
            }
        }
        out
    }

    pub fn has_neutral(&self) -> bool {
        self.conductors.iter().any(|c| c.label.is_neutral())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub length_miles: f64,
    pub geometry: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    #[default]
    ConstantPower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub id: String,
    pub bus: String,
    pub phase: Connection,
    pub p_kw: f64,
    /// Reactive demand; mutually exclusive with `pf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_kvar: Option<f64>,
    /// Lagging power factor; mutually exclusive with `q_kvar`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pf: Option<f64>,
    #[serde(default)]
    pub model: LoadModel,
}

impl LoadSpec {
    pub fn q_total_kvar(&self) -> f64 {
        match (self.q_kvar, self.pf) {
            (Some(q), _) => q,
            (None, Some(pf)) => self.p_kw * (pf.acos()).tan(),
            (None, None) => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvSpec {
    pub id: String,
    pub bus: String,
    pub phase: Phase,
    pub p_kw: f64,
    pub s_rating_kva: f64,
    /// Reactive setpoint, absorption positive.
    #[serde(default)]
    pub q_kvar: f64,
}

impl PvSpec {
    /// Largest |q| the inverter can hold at its present real output.
    pub fn q_capability_kvar(&self) -> f64 {
        (self.s_rating_kva.powi(2) - self.p_kw.powi(2)).max(0.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulatorSpec {
    pub id: String,
    pub segment: String,
    pub phase: Phase,
    pub tap_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitorSpec {
    pub id: String,
    pub bus: String,
    pub phase: Connection,
    pub q_kvar: f64,
}

/// How the neutral conductor of a multi-conductor line is tied to earth.
///
/// The radial sweep Kron-reduces the neutral for `BothEnds` and drops it for
/// `SourceOnly`, so both formulations describe the same circuit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeutralBonding {
    /// Neutral at 0 V at both ends; return current splits between the
    /// neutral conductor and earth.
    #[default]
    BothEnds,
    /// Neutral bonded at the source only. The load star point is earthed
    /// locally, the neutral conductor carries no current and the whole
    /// return flows through earth.
    SourceOnly,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feeder {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub source_bus: String,
    pub source_voltage_kv_ll: f64,
    /// Per-unit base (line-to-line); defaults to the source voltage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_voltage_kv_ll: Option<f64>,
    #[serde(default)]
    pub neutral_bonding: NeutralBonding,
    pub conductors: Vec<ConductorSpec>,
    pub geometries: Vec<LineGeometry>,
    pub buses: Vec<BusSpec>,
    pub segments: Vec<LineSegment>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub pvs: Vec<PvSpec>,
    #[serde(default)]
    pub regulators: Vec<RegulatorSpec>,
    #[serde(default)]
    pub capacitors: Vec<CapacitorSpec>,
}

/// One edge of the radial tree, oriented away from the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeEdge {
    pub segment: usize,
    pub upstream: usize,
    pub downstream: usize,
}

/// Breadth-first traversal of a radial feeder.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeOrder {
    pub source: usize,
    pub edges: Vec<TreeEdge>,
    /// Phases present at each bus (indexed like `Feeder::buses`).
    pub bus_phases: Vec<[bool; 3]>,
}

impl TreeOrder {
    pub fn segment_ids<'a>(&self, feeder: &'a Feeder) -> Vec<&'a str> {
        self.edges
            .iter()
            .map(|e| feeder.segments[e.segment].id.as_str())
            .collect()
    }
}

impl Feeder {
    pub fn from_json_str(s: &str) -> Result<Self, NetError> {
        let feeder: Feeder = serde_json::from_str(s).map_err(|e| NetError::Parse(e.to_string()))?;
        feeder.validate()?;
        Ok(feeder)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("feeder serializes")
    }

    /// Phase-to-neutral voltage of the source, volts.
    pub fn source_phase_voltage_v(&self) -> f64 {
        self.source_voltage_kv_ll * 1000.0 / 3f64.sqrt()
    }

    /// Phase-to-neutral per-unit base, volts.
    pub fn base_voltage_v(&self) -> f64 {
        self.base_voltage_kv_ll.unwrap_or(self.source_voltage_kv_ll) * 1000.0 / 3f64.sqrt()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    pub fn pv_index(&self, id: &str) -> Option<usize> {
        self.pvs.iter().position(|p| p.id == id)
    }

    pub fn pv(&self, id: &str) -> Option<&PvSpec> {
        self.pvs.iter().find(|p| p.id == id)
    }

    pub fn geometry(&self, name: &str) -> Option<&LineGeometry> {
        self.geometries.iter().find(|g| g.name == name)
    }

    pub fn conductor(&self, name: &str) -> Option<&ConductorSpec> {
        self.conductors.iter().find(|c| c.name == name)
    }

    pub fn segment_geometry(&self, seg: &LineSegment) -> Result<&LineGeometry, NetError> {
        self.geometry(&seg.geometry)
            .ok_or_else(|| NetError::UnknownReference {
                kind: "geometry",
                id: seg.geometry.clone(),
            })
    }

    /// Tap ratio per phase for a segment (1.0 where no regulator sits).
    pub fn segment_taps(&self, segment_id: &str) -> [f64; 3] {
        let mut taps = [1.0; 3];
        for r in self.regulators.iter().filter(|r| r.segment == segment_id) {
            taps[r.phase.index()] = r.tap_ratio;
        }
        taps
    }

    /// Returns a copy with the given PV reactive setpoints replaced.
    pub fn with_pv_setpoints<'a>(
        &self,
        setpoints: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Feeder, NetError> {
        let mut out = self.clone();
        for (id, q) in setpoints {
            let pv = out
                .pvs
                .iter_mut()
                .find(|p| p.id == id)
                .ok_or_else(|| NetError::UnknownReference {
                    kind: "pv",
                    id: id.to_string(),
                })?;
            pv.q_kvar = q;
        }
        Ok(out)
    }

    pub fn total_load_kw(&self) -> f64 {
        self.loads.iter().map(|l| l.p_kw).sum()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.source_voltage_kv_ll > 0.0) {
            return Err(invalid("source_voltage_kv_ll must be positive"));
        }
        if let Some(b) = self.base_voltage_kv_ll {
            if !(b > 0.0) {
                return Err(invalid("base_voltage_kv_ll must be positive"));
            }
        }

        unique(self.conductors.iter().map(|c| c.name.as_str()), "conductor")?;
        for c in &self.conductors {
            if !(c.gmr_ft > 0.0) {
                return Err(invalid(format!("conductor '{}': gmr_ft must be > 0", c.name)));
            }
            if !(c.resistance_ohm_per_mile > 0.0) {
                return Err(invalid(format!(
                    "conductor '{}': resistance_ohm_per_mile must be > 0",
                    c.name
                )));
            }
        }

        unique(self.geometries.iter().map(|g| g.name.as_str()), "geometry")?;
        for g in &self.geometries {
            self.validate_geometry(g)?;
        }

        unique(self.buses.iter().map(|b| b.id.as_str()), "bus")?;
        if self.bus_index(&self.source_bus).is_none() {
            return Err(NetError::UnknownReference {
                kind: "bus",
                id: self.source_bus.clone(),
            });
        }

        unique(self.segments.iter().map(|s| s.id.as_str()), "segment")?;
        for s in &self.segments {
            if !(s.length_miles > 0.0) {
                return Err(invalid(format!("segment '{}': length_miles must be > 0", s.id)));
            }
            if s.from_bus == s.to_bus {
                return Err(invalid(format!(
                    "segment '{}' connects bus '{}' to itself",
                    s.id, s.from_bus
                )));
            }
            self.require_bus(&s.from_bus)?;
            self.require_bus(&s.to_bus)?;
            self.segment_geometry(s)?;
        }

        let tree = validate_radial(self)?;

        unique(self.loads.iter().map(|l| l.id.as_str()), "load")?;
        for l in &self.loads {
            if !(l.p_kw >= 0.0) {
                return Err(invalid(format!("load '{}': p_kw must be >= 0", l.id)));
            }
            match (l.q_kvar, l.pf) {
                (Some(_), Some(_)) => {
                    return Err(invalid(format!("load '{}': give q_kvar or pf, not both", l.id)))
                }
                (None, Some(pf)) if !(pf > 0.0 && pf <= 1.0) => {
                    return Err(invalid(format!("load '{}': pf must be in (0, 1]", l.id)))
                }
                (Some(q), None) if !q.is_finite() => {
                    return Err(invalid(format!("load '{}': q_kvar must be finite", l.id)))
                }
                _ => {}
            }
            self.require_phases(&tree, &l.bus, l.phase.phases())?;
        }

        unique(self.pvs.iter().map(|p| p.id.as_str()), "pv")?;
        for p in &self.pvs {
            if !(p.p_kw >= 0.0) {
                return Err(invalid(format!("pv '{}': p_kw must be >= 0", p.id)));
            }
            if !(p.s_rating_kva > 0.0) {
                return Err(invalid(format!("pv '{}': s_rating_kva must be > 0", p.id)));
            }
            let s = p.p_kw.hypot(p.q_kvar);
            if !s.is_finite() || s > p.s_rating_kva * (1.0 + 1e-9) {
                return Err(invalid(format!(
                    "pv '{}': |p + jq| = {s:.3} kVA exceeds rating {} kVA",
                    p.id, p.s_rating_kva
                )));
            }
            self.require_phases(&tree, &p.bus, &[p.phase])?;
        }

        unique(self.regulators.iter().map(|r| r.id.as_str()), "regulator")?;
        let mut seen = HashSet::new();
        for r in &self.regulators {
            let seg = self
                .segment_index(&r.segment)
                .ok_or_else(|| NetError::UnknownReference {
                    kind: "segment",
                    id: r.segment.clone(),
                })?;
            if !(0.9..=1.1).contains(&r.tap_ratio) {
                return Err(invalid(format!(
                    "regulator '{}': tap_ratio {} outside [0.9, 1.1]",
                    r.id, r.tap_ratio
                )));
            }
            let geo = self.segment_geometry(&self.segments[seg])?;
            if !geo.phases()[r.phase.index()] {
                return Err(invalid(format!(
                    "regulator '{}': segment '{}' does not carry phase {}",
                    r.id, r.segment, r.phase
                )));
            }
            if !seen.insert((r.segment.as_str(), r.phase)) {
                return Err(invalid(format!(
                    "more than one regulator on segment '{}' phase {}",
                    r.segment, r.phase
                )));
            }
        }

        unique(self.capacitors.iter().map(|c| c.id.as_str()), "capacitor")?;
        for c in &self.capacitors {
            if !(c.q_kvar >= 0.0) {
                return Err(invalid(format!("capacitor '{}': q_kvar must be >= 0", c.id)));
            }
            self.require_phases(&tree, &c.bus, c.phase.phases())?;
        }
        Ok(())
    }

    fn validate_geometry(&self, g: &LineGeometry) -> Result<(), NetError> {
        if g.conductors.is_empty() || g.conductors.len() > 4 {
            return Err(invalid(format!(
                "geometry '{}' must have 1 to 4 conductors",
                g.name
            )));
        }
        let mut labels = HashSet::new();
        for c in &g.conductors {
            if !labels.insert(c.label) {
                return Err(invalid(format!(
                    "geometry '{}' has more than one conductor labelled {}",
                    g.name, c.label
                )));
            }
            if self.conductor(&c.conductor).is_none() {
                return Err(NetError::UnknownReference {
                    kind: "conductor",
                    id: c.conductor.clone(),
                });
            }
        }
        if !g.phases().iter().any(|&p| p) {
            return Err(invalid(format!("geometry '{}' has no phase conductor", g.name)));
        }
        for (i, a) in g.conductors.iter().enumerate() {
            for b in &g.conductors[i + 1..] {
                if !((a.x_ft - b.x_ft).hypot(a.y_ft - b.y_ft) > 0.0) {
                    return Err(invalid(format!(
                        "geometry '{}': conductors {} and {} share a position",
                        g.name, a.label, b.label
                    )));
                }
            }
        }
        Ok(())
    }

    fn require_bus(&self, id: &str) -> Result<usize, NetError> {
        self.bus_index(id).ok_or_else(|| NetError::UnknownReference {
            kind: "bus",
            id: id.to_string(),
        })
    }

    fn require_phases(&self, tree: &TreeOrder, bus: &str, phases: &[Phase]) -> Result<(), NetError> {
        let b = self.require_bus(bus)?;
        for &p in phases {
            if !tree.bus_phases[b][p.index()] {
                return Err(NetError::PhaseNotSupplied {
                    bus: bus.to_string(),
                    phase: p,
                });
            }
        }
        Ok(())
    }
}

fn unique<'a>(ids: impl Iterator<Item = &'a str>, kind: &str) -> Result<(), NetError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(invalid(format!("duplicate {kind} identifier '{id}'")));
        }
    }
    Ok(())
}

/// Reads, parses and validates a feeder file.
pub fn load_feeder(path: impl AsRef<Path>) -> Result<Feeder, NetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Feeder::from_json_str(&text)
}

/// Breadth-first order of segments from the source.
///
/// Segments incident to a bus are visited in identifier order, so the result
/// is deterministic. Fails on cycles and on buses the source cannot reach.
pub fn validate_radial(feeder: &Feeder) -> Result<TreeOrder, NetError> {
    let index: HashMap<&str, usize> = feeder
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();
    let lookup = |id: &str| {
        index.get(id).copied().ok_or_else(|| NetError::UnknownReference {
            kind: "bus",
            id: id.to_string(),
        })
    };
    let source = lookup(&feeder.source_bus)?;

    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); feeder.buses.len()];
    for (k, s) in feeder.segments.iter().enumerate() {
        incident[lookup(&s.from_bus)?].push(k);
        incident[lookup(&s.to_bus)?].push(k);
    }
    for list in &mut incident {
        list.sort_by(|&a, &b| feeder.segments[a].id.cmp(&feeder.segments[b].id));
    }

    let mut visited = vec![false; feeder.buses.len()];
    let mut used = vec![false; feeder.segments.len()];
    let mut bus_phases = vec![[false; 3]; feeder.buses.len()];
    let mut edges = Vec::with_capacity(feeder.segments.len());
    let mut queue = VecDeque::from([source]);
    visited[source] = true;
    bus_phases[source] = [true; 3];

    while let Some(bus) = queue.pop_front() {
        for &k in &incident[bus] {
            if used[k] {
                continue;
            }
            used[k] = true;
            let seg = &feeder.segments[k];
            let other = if lookup(&seg.from_bus)? == bus {
                lookup(&seg.to_bus)?
            } else {
                lookup(&seg.from_bus)?
            };
            if visited[other] {
                return Err(NetError::Cycle {
                    segment: seg.id.clone(),
                });
            }
            visited[other] = true;
            let carried = feeder.segment_geometry(seg)?.phases();
            for p in 0..3 {
                if carried[p] && !bus_phases[bus][p] {
                    return Err(NetError::PhaseNotSupplied {
                        bus: feeder.buses[bus].id.clone(),
                        phase: Phase::from_index(p),
                    });
                }
                bus_phases[other][p] = carried[p];
            }
            edges.push(TreeEdge {
                segment: k,
                upstream: bus,
                downstream: other,
            });
            queue.push_back(other);
        }
    }

    if let Some(b) = visited.iter().position(|v| !v) {
        return Err(NetError::Disconnected {
            bus: feeder.buses[b].id.clone(),
        });
    }
    debug_assert_eq!(edges.len(), feeder.buses.len() - 1);
    Ok(TreeOrder {
        source,
        edges,
        bus_phases,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProfileTarget {
    Load(String),
    Pv(String),
}

impl fmt::Display for ProfileTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileTarget::Load(id) => write!(f, "load:{id}"),
            ProfileTarget::Pv(id) => write!(f, "pv:{id}"),
        }
    }
}

/// Per-instance multipliers for loads and PV output.
///
/// CSV layout: first column is the instance label, every other column is
/// named `load:<id>` or `pv:<id>`. Elements without a column keep their
/// nominal value.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesProfile {
    pub labels: Vec<String>,
    pub targets: Vec<ProfileTarget>,
    pub rows: Vec<Vec<f64>>,
}

impl TimeSeriesProfile {
    pub fn from_csv_reader(reader: impl Read) -> Result<Self, NetError> {
        let perr = |e: csv::Error| NetError::Profile(e.to_string());
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(perr)?.clone();
        if headers.len() < 1 {
            return Err(NetError::Profile("empty header".into()));
        }
        let mut targets = Vec::new();
        for h in headers.iter().skip(1) {
            let t = if let Some(id) = h.strip_prefix("load:") {
                ProfileTarget::Load(id.to_string())
            } else if let Some(id) = h.strip_prefix("pv:") {
                ProfileTarget::Pv(id.to_string())
            } else {
                return Err(NetError::Profile(format!(
                    "column '{h}' is neither load:<id> nor pv:<id>"
                )));
            };
            if targets.contains(&t) {
                return Err(NetError::Profile(format!("duplicate column '{h}'")));
            }
            targets.push(t);
        }

        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(perr)?;
            let label = rec.get(0).unwrap_or_default().to_string();
            if labels.contains(&label) {
                return Err(NetError::Profile(format!("duplicate instance '{label}'")));
            }
            let mut row = Vec::with_capacity(targets.len());
            for (k, t) in targets.iter().enumerate() {
                let raw = rec.get(k + 1).unwrap_or_default();
                let v: f64 = raw.parse().map_err(|_| {
                    NetError::Profile(format!("instance '{label}', {t}: bad number '{raw}'"))
                })?;
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(NetError::Profile(format!(
                        "instance '{label}', {t}: multiplier must be >= 0"
                    )));
                }
                if matches!(t, ProfileTarget::Pv(_)) && v > 1.0 {
                    return Err(NetError::Profile(format!(
                        "instance '{label}', {t}: PV multiplier must be <= 1"
                    )));
                }
                row.push(v);
            }
            labels.push(label);
            rows.push(row);
        }
        Ok(Self {
            labels,
            targets,
            rows,
        })
    }

    pub fn multipliers(&self, label: &str) -> Result<BTreeMap<&ProfileTarget, f64>, NetError> {
        let row = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| NetError::UnknownInstance(label.to_string()))?;
        Ok(self.targets.iter().zip(self.rows[row].iter().copied()).collect())
    }

    /// Every referenced load and PV must exist in `feeder`.
    pub fn check_against(&self, feeder: &Feeder) -> Result<(), NetError> {
        for t in &self.targets {
            let ok = match t {
                ProfileTarget::Load(id) => feeder.loads.iter().any(|l| &l.id == id),
                ProfileTarget::Pv(id) => feeder.pv(id).is_some(),
            };
            if !ok {
                return Err(NetError::Profile(format!("{t} does not exist in the feeder")));
            }
        }
        Ok(())
    }
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<TimeSeriesProfile, NetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TimeSeriesProfile::from_csv_reader(file)
}

/// Scales loads and PV output by the profile's multipliers at `label`.
pub fn apply_instance(
    feeder: &Feeder,
    profile: &TimeSeriesProfile,
    label: &str,
) -> Result<Feeder, NetError> {
    profile.check_against(feeder)?;
    let mult = profile.multipliers(label)?;
    let mut out = feeder.clone();
    for load in &mut out.loads {
        if let Some(&m) = mult.get(&ProfileTarget::Load(load.id.clone())) {
            load.p_kw *= m;
            if let Some(q) = load.q_kvar.as_mut() {
                *q *= m;
            }
        }
    }
    for pv in &mut out.pvs {
        if let Some(&m) = mult.get(&ProfileTarget::Pv(pv.id.clone())) {
            pv.p_kw *= m;
        }
    }
    Ok(out)
}
