//! Unbalanced power flow.
//!
//! Two formulations share one fixed-point scheme (load currents from the
//! last voltages, then a voltage update):
//!
//! * [`solve_two_bus`] keeps every conductor of the single segment explicit,
//!   with the neutral handled according to [`NeutralBonding`]. This is the
//!   model the earth/mutual decomposition works on.
//! * [`solve_radial`] is a backward/forward sweep over any radial feeder using
//!   Kron-reduced 3×3 segment matrices and ideal per-phase regulators.
//!
//! Loads are constant power. Voltages are phase-to-neutral, in volts.

use std::collections::BTreeSet;
use std::ops::{Add, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carson::{phase_block, phase_impedance, segment_primitive, CarsonError, PhaseImpedance};
use crate::netmodel::{
    validate_radial, ConductorLabel, Feeder, NetError, NeutralBonding, NodePhase, Phase, TreeOrder,
};

/// Growth streak after which the iteration is declared divergent.
pub const DIVERGENCE_STREAK: usize = 10;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Impedance(#[from] CarsonError),
    #[error("invalid convergence settings: {0}")]
    Config(String),
    #[error("two-bus formulation needs exactly 2 buses and 1 segment (got {buses} and {segments})")]
    NotTwoBus { buses: usize, segments: usize },
    #[error("no convergence after {iterations} iterations (residual {residual_pu:.3e} p.u.)")]
    NotConverged { iterations: usize, residual_pu: f64 },
    #[error("iteration diverged at step {iterations} (residual {residual_pu:.3e} p.u.); load likely exceeds deliverable power")]
    Diverged { iterations: usize, residual_pu: f64 },
    #[error("result did not converge")]
    Unconverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Largest voltage-magnitude change per iteration, p.u.
    pub tolerance_pu: f64,
    pub max_iterations: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            tolerance_pu: 1e-9,
            max_iterations: 100,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.tolerance_pu > 0.0) {
            return Err(SolveError::Config("tolerance must be > 0".into()));
        }
        if self.max_iterations < 1 {
            return Err(SolveError::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageLimits {
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for VoltageLimits {
    fn default() -> Self {
        Self {
            v_min: 0.95,
            v_max: 1.05,
        }
    }
}

impl VoltageLimits {
    pub fn new(v_min: f64, v_max: f64) -> Result<Self, String> {
        if !(0.0 < v_min && v_min < v_max) {
            return Err(format!("need 0 < v_min < v_max, got ({v_min}, {v_max})"));
        }
        Ok(Self { v_min, v_max })
    }
}

impl std::str::FromStr for VoltageLimits {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| format!("expected vmin,vmax, got '{s}'"))?;
        let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
        Self::new(parse(lo)?, parse(hi)?)
    }
}

/// Complex power in kW / kVAr.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Power {
    pub p_kw: f64,
    pub q_kvar: f64,
}

impl Power {
    pub fn from_va(s: Complex64) -> Self {
        Self {
            p_kw: s.re / 1000.0,
            q_kvar: s.im / 1000.0,
        }
    }
}

impl Add for Power {
    type Output = Power;
    fn add(self, o: Power) -> Power {
        Power {
            p_kw: self.p_kw + o.p_kw,
            q_kvar: self.q_kvar + o.q_kvar,
        }
    }
}

impl Sub for Power {
    type Output = Power;
    fn sub(self, o: Power) -> Power {
        Power {
            p_kw: self.p_kw - o.p_kw,
            q_kvar: self.q_kvar - o.q_kvar,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusVoltage {
    pub bus: String,
    /// `None` for phases the bus does not have.
    pub phases: [Option<Complex64>; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductorCurrent {
    pub label: ConductorLabel,
    pub current: Complex64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentCurrents {
    pub segment: String,
    pub conductors: Vec<ConductorCurrent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasorSet {
    /// Per-unit base, phase-to-neutral volts.
    pub base_voltage_v: f64,
    /// In feeder bus order.
    pub buses: Vec<BusVoltage>,
    pub segments: Vec<SegmentCurrents>,
}

impl PhasorSet {
    pub fn voltage(&self, bus: &str, phase: Phase) -> Option<Complex64> {
        self.buses
            .iter()
            .find(|b| b.bus == bus)
            .and_then(|b| b.phases[phase.index()])
    }

    pub fn voltage_pu(&self, node: &NodePhase) -> Option<f64> {
        self.voltage(&node.bus, node.phase)
            .map(|v| v.norm() / self.base_voltage_v)
    }

    pub fn node_phases(&self) -> Vec<NodePhase> {
        self.buses
            .iter()
            .flat_map(|b| {
                Phase::ALL
                    .into_iter()
                    .filter(|p| b.phases[p.index()].is_some())
                    .map(|p| NodePhase::new(b.bus.clone(), p))
            })
            .collect()
    }

    pub fn segment_currents(&self, segment: &str) -> Option<&SegmentCurrents> {
        self.segments.iter().find(|s| s.segment == segment)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TwoBus,
    Radial,
}

/// Scheduled demand and generation the solve was run against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduledPower {
    pub load: Power,
    pub pv_generation_kw: f64,
    /// Σ PV reactive setpoints (absorption positive).
    pub pv_absorption_kvar: f64,
    pub capacitor_kvar: f64,
}

impl ScheduledPower {
    /// Net power drawn by all buses.
    pub fn net_demand(&self) -> Power {
        Power {
            p_kw: self.load.p_kw - self.pv_generation_kw,
            q_kvar: self.load.q_kvar + self.pv_absorption_kvar - self.capacitor_kvar,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowResult {
    pub method: Method,
    pub phasors: PhasorSet,
    pub iterations: usize,
    pub converged: bool,
    pub residual_pu: f64,
    /// Power delivered by the source, per phase.
    pub source_power: [Power; 3],
    pub losses: Power,
    pub scheduled: ScheduledPower,
}

impl PowerFlowResult {
    pub fn total_source_power(&self) -> Power {
        self.source_power.iter().fold(Power::default(), |a, &b| a + b)
    }
}

/// Net complex demand (VA) per bus and phase, loads minus generation.
fn bus_demand(feeder: &Feeder) -> (Vec<[Complex64; 3]>, ScheduledPower) {
    let zero = Complex64::new(0.0, 0.0);
    let mut demand = vec![[zero; 3]; feeder.buses.len()];
    let mut sched = ScheduledPower::default();
    let idx = |id: &str| feeder.bus_index(id).expect("validated feeder");

    for l in &feeder.loads {
        let phases = l.phase.phases();
        let share = 1000.0 / phases.len() as f64;
        let s = Complex64::new(l.p_kw, l.q_total_kvar()) * share;
        for p in phases {
            demand[idx(&l.bus)][p.index()] += s;
        }
        sched.load.p_kw += l.p_kw;
        sched.load.q_kvar += l.q_total_kvar();
    }
    for pv in &feeder.pvs {
        demand[idx(&pv.bus)][pv.phase.index()] += Complex64::new(-pv.p_kw, pv.q_kvar) * 1000.0;
        sched.pv_generation_kw += pv.p_kw;
        sched.pv_absorption_kvar += pv.q_kvar;
    }
    for c in &feeder.capacitors {
        let phases = c.phase.phases();
        let share = 1000.0 / phases.len() as f64;
        for p in phases {
            demand[idx(&c.bus)][p.index()] -= Complex64::new(0.0, c.q_kvar * share);
        }
        sched.capacitor_kvar += c.q_kvar;
    }
    (demand, sched)
}

fn source_voltages(feeder: &Feeder) -> [Complex64; 3] {
    let mag = feeder.source_phase_voltage_v();
    Phase::ALL.map(|p| Complex64::from_polar(mag, p.nominal_angle_deg().to_radians()))
}

fn load_current(s: Complex64, v: Complex64) -> Complex64 {
    if s == Complex64::new(0.0, 0.0) {
        Complex64::new(0.0, 0.0)
    } else {
        (s / v).conj()
    }
}

/// Tracks the residual sequence for convergence and divergence.
struct Monitor {
    cfg: ConvergenceConfig,
    last: f64,
    streak: usize,
}

enum Step {
    Continue,
    Converged,
}

impl Monitor {
    fn new(cfg: ConvergenceConfig) -> Self {
        Self {
            cfg,
            last: f64::INFINITY,
            streak: 0,
        }
    }

    fn observe(&mut self, iteration: usize, residual_pu: f64) -> Result<Step, SolveError> {
        if !residual_pu.is_finite() {
            return Err(SolveError::Diverged {
                iterations: iteration,
                residual_pu,
            });
        }
        if residual_pu < self.cfg.tolerance_pu {
            return Ok(Step::Converged);
        }
        if residual_pu > self.last {
            self.streak += 1;
            if self.streak >= DIVERGENCE_STREAK {
                return Err(SolveError::Diverged {
                    iterations: iteration,
                    residual_pu,
                });
            }
        } else {
            self.streak = 0;
        }
        self.last = residual_pu;
        if iteration >= self.cfg.max_iterations {
            return Err(SolveError::NotConverged {
                iterations: iteration,
                residual_pu,
            });
        }
        Ok(Step::Continue)
    }
}

/// Picks the explicit two-bus formulation for two-bus feeders and the
/// radial sweep for everything else.
pub fn default_method(feeder: &Feeder) -> Method {
    if feeder.buses.len() == 2 && feeder.segments.len() == 1 {
        Method::TwoBus
    } else {
        Method::Radial
    }
}

pub fn solve(feeder: &Feeder, cfg: &ConvergenceConfig) -> Result<PowerFlowResult, SolveError> {
    solve_with(feeder, cfg, default_method(feeder))
}

pub fn solve_with(
    feeder: &Feeder,
    cfg: &ConvergenceConfig,
    method: Method,
) -> Result<PowerFlowResult, SolveError> {
    match method {
        Method::TwoBus => solve_two_bus(feeder, cfg),
        Method::Radial => solve_radial(feeder, cfg),
    }
}

/// Fixed point of `I = (S / V)*`, `V = V_S − Z I` over one multi-conductor
/// segment with every conductor explicit.
pub fn solve_two_bus(feeder: &Feeder, cfg: &ConvergenceConfig) -> Result<PowerFlowResult, SolveError> {
    cfg.validate()?;
    if feeder.buses.len() != 2 || feeder.segments.len() != 1 {
        return Err(SolveError::NotTwoBus {
            buses: feeder.buses.len(),
            segments: feeder.segments.len(),
        });
    }
    let tree = validate_radial(feeder)?;
    let edge = &tree.edges[0];
    let seg = &feeder.segments[edge.segment];
    let prim = segment_primitive(feeder, seg)?;
    let z = &prim.z;
    let n = z.dim();
    let neutral = prim.neutral_index();
    let rows = prim.phase_rows();
    let taps = feeder.segment_taps(&seg.id);
    let (demand, scheduled) = bus_demand(feeder);
    let load = demand[edge.downstream];
    let vb = feeder.base_voltage_v();
    let zero = Complex64::new(0.0, 0.0);

    let vs = source_voltages(feeder);
    let sending: Vec<Complex64> = rows.iter().map(|&(_, p)| vs[p.index()] * taps[p.index()]).collect();
    let mut v = sending.clone();
    let mut currents = vec![zero; n];
    let mut monitor = Monitor::new(*cfg);
    let mut iterations = 0;
    let mut residual;

    loop {
        iterations += 1;
        for (k, &(i, p)) in rows.iter().enumerate() {
            currents[i] = load_current(load[p.index()], v[k]);
        }
        if let Some(nr) = neutral {
            currents[nr] = match feeder.neutral_bonding {
                // Neutral held at 0 V at both ends: row n of Z·I must vanish.
                NeutralBonding::BothEnds => {
                    let coupled: Complex64 = rows.iter().map(|&(i, _)| z[(nr, i)] * currents[i]).sum();
                    -coupled / z[(nr, nr)]
                }
                NeutralBonding::SourceOnly => zero,
            };
        }
        let drop = z.mul_vec(&currents);
        residual = 0.0f64;
        for (k, &(i, _)) in rows.iter().enumerate() {
            let next = sending[k] - drop[i];
            residual = residual.max((next - v[k]).norm() / vb);
            v[k] = next;
        }
        if let Step::Converged = monitor.observe(iterations, residual)? {
            break;
        }
    }

    let drop = z.mul_vec(&currents);
    let mut losses = zero;
    for i in 0..n {
        losses += drop[i] * currents[i].conj();
    }
    let mut source = [zero; 3];
    for &(i, p) in &rows {
        source[p.index()] = vs[p.index()] * (currents[i] * taps[p.index()]).conj();
    }
    for p in 0..3 {
        source[p] += demand[edge.upstream][p];
    }

    let mut buses = vec![
        BusVoltage {
            bus: feeder.buses[0].id.clone(),
            phases: [None; 3],
        },
        BusVoltage {
            bus: feeder.buses[1].id.clone(),
            phases: [None; 3],
        },
    ];
    buses[edge.upstream].phases = vs.map(Some);
    for (k, &(_, p)) in rows.iter().enumerate() {
        buses[edge.downstream].phases[p.index()] = Some(v[k]);
    }

    Ok(PowerFlowResult {
        method: Method::TwoBus,
        phasors: PhasorSet {
            base_voltage_v: vb,
            buses,
            segments: vec![SegmentCurrents {
                segment: seg.id.clone(),
                conductors: prim
                    .labels
                    .iter()
                    .zip(&currents)
                    .map(|(&label, &current)| ConductorCurrent { label, current })
                    .collect(),
            }],
        },
        iterations,
        converged: true,
        residual_pu: residual,
        source_power: source.map(Power::from_va),
        losses: Power::from_va(losses),
        scheduled,
    })
}

struct SweepEdge {
    z: PhaseImpedance,
    taps: [f64; 3],
}

/// Backward/forward sweep over a radial feeder. Segments are Kron-reduced
/// for [`NeutralBonding::BothEnds`]; with [`NeutralBonding::SourceOnly`] the
/// neutral carries nothing and only the phase block is kept.
pub fn solve_radial(feeder: &Feeder, cfg: &ConvergenceConfig) -> Result<PowerFlowResult, SolveError> {
    cfg.validate()?;
    let tree: TreeOrder = validate_radial(feeder)?;
    let edges: Vec<SweepEdge> = tree
        .edges
        .iter()
        .map(|e| {
            let seg = &feeder.segments[e.segment];
            let prim = segment_primitive(feeder, seg)?;
            let z = match feeder.neutral_bonding {
                NeutralBonding::BothEnds => phase_impedance(&prim)?,
                NeutralBonding::SourceOnly => phase_block(&prim),
            };
            Ok(SweepEdge {
                z,
                taps: feeder.segment_taps(&seg.id),
            })
        })
        .collect::<Result<_, SolveError>>()?;
    let (demand, scheduled) = bus_demand(feeder);
    let vb = feeder.base_voltage_v();
    let zero = Complex64::new(0.0, 0.0);
    let nb = feeder.buses.len();
    let present = &tree.bus_phases;

    let vs = source_voltages(feeder);
    let mut v = vec![[zero; 3]; nb];
    v[tree.source] = vs;
    for (e, se) in tree.edges.iter().zip(&edges) {
        for p in 0..3 {
            if present[e.downstream][p] {
                v[e.downstream][p] = v[e.upstream][p] * se.taps[p];
            }
        }
    }

    let mut line = vec![[zero; 3]; edges.len()];
    let mut through = vec![[zero; 3]; nb];
    let mut monitor = Monitor::new(*cfg);
    let mut iterations = 0;
    let mut residual;

    loop {
        iterations += 1;
        // backward: accumulate currents leaf to source
        for b in 0..nb {
            for p in 0..3 {
                through[b][p] = if present[b][p] {
                    load_current(demand[b][p], v[b][p])
                } else {
                    zero
                };
            }
        }
        for (k, e) in tree.edges.iter().enumerate().rev() {
            line[k] = through[e.downstream];
            for p in 0..3 {
                through[e.upstream][p] += line[k][p] * edges[k].taps[p];
            }
        }
        // forward: voltages source to leaf
        residual = 0.0f64;
        for (k, e) in tree.edges.iter().enumerate() {
            let drop = edges[k].z.drop(&line[k]);
            for p in 0..3 {
                if present[e.downstream][p] {
                    let next = v[e.upstream][p] * edges[k].taps[p] - drop[p];
                    residual = residual.max((next - v[e.downstream][p]).norm() / vb);
                    v[e.downstream][p] = next;
                }
            }
        }
        if let Step::Converged = monitor.observe(iterations, residual)? {
            break;
        }
    }

    let mut losses = zero;
    for (k, se) in edges.iter().enumerate() {
        let drop = se.z.drop(&line[k]);
        for p in 0..3 {
            losses += drop[p] * line[k][p].conj();
        }
    }
    let mut source = [zero; 3];
    for p in 0..3 {
        source[p] = vs[p] * through[tree.source][p].conj();
    }

    let buses = feeder
        .buses
        .iter()
        .enumerate()
        .map(|(b, spec)| BusVoltage {
            bus: spec.id.clone(),
            phases: std::array::from_fn(|p| present[b][p].then_some(v[b][p])),
        })
        .collect();
    let segments = tree
        .edges
        .iter()
        .enumerate()
        .map(|(k, e)| SegmentCurrents {
            segment: feeder.segments[e.segment].id.clone(),
            conductors: Phase::ALL
                .into_iter()
                .filter(|p| edges[k].z.present[p.index()])
                .map(|p| ConductorCurrent {
                    label: p.into(),
                    current: line[k][p.index()],
                })
                .collect(),
        })
        .collect();

    Ok(PowerFlowResult {
        method: Method::Radial,
        phasors: PhasorSet {
            base_voltage_v: vb,
            buses,
            segments,
        },
        iterations,
        converged: true,
        residual_pu: residual,
        source_power: source.map(Power::from_va),
        losses: Power::from_va(losses),
        scheduled,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Over,
    Under,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub node: NodePhase,
    pub v_pu: f64,
    pub kind: LimitKind,
    /// Distance beyond the violated limit, p.u. (always > 0).
    pub excess_pu: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounts {
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "C")]
    pub c: usize,
}

impl PhaseCounts {
    pub fn get(&self, p: Phase) -> usize {
        match p {
            Phase::A => self.a,
            Phase::B => self.b,
            Phase::C => self.c,
        }
    }

    fn bump(&mut self, p: Phase) {
        match p {
            Phase::A => self.a += 1,
            Phase::B => self.b += 1,
            Phase::C => self.c += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.a + self.b + self.c
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// Sorted by bus id, then phase.
    pub violations: Vec<Violation>,
    pub counts: PhaseCounts,
    /// Extremes over every monitored bus-phase, violated or not.
    pub max_v_pu: f64,
    pub min_v_pu: f64,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    /// Largest excess; the first in report order wins ties.
    pub fn worst(&self) -> Option<&Violation> {
        self.violations
            .iter()
            .fold(None, |best: Option<&Violation>, v| match best {
                Some(b) if b.excess_pu >= v.excess_pu => Some(b),
                _ => Some(v),
            })
    }

    pub fn worst_excess_pu(&self) -> f64 {
        self.worst().map_or(0.0, |v| v.excess_pu)
    }

    pub fn phases(&self) -> BTreeSet<Phase> {
        self.violations.iter().map(|v| v.node.phase).collect()
    }

    pub fn nodes(&self) -> BTreeSet<NodePhase> {
        self.violations.iter().map(|v| v.node.clone()).collect()
    }
}

/// Lists every bus-phase outside `[v_min, v_max]`.
pub fn check_violations(
    result: &PowerFlowResult,
    limits: &VoltageLimits,
) -> Result<ViolationReport, SolveError> {
    if !result.converged {
        return Err(SolveError::Unconverged);
    }
    let mut report = ViolationReport {
        max_v_pu: f64::NEG_INFINITY,
        min_v_pu: f64::INFINITY,
        ..Default::default()
    };
    let vb = result.phasors.base_voltage_v;
    for node in result.phasors.node_phases() {
        let v_pu = result.phasors.voltage(&node.bus, node.phase).unwrap().norm() / vb;
        report.max_v_pu = report.max_v_pu.max(v_pu);
        report.min_v_pu = report.min_v_pu.min(v_pu);
        let hit = if v_pu > limits.v_max {
            Some((LimitKind::Over, v_pu - limits.v_max))
        } else if v_pu < limits.v_min {
            Some((LimitKind::Under, limits.v_min - v_pu))
        } else {
            None
        };
        if let Some((kind, excess_pu)) = hit {
            report.counts.bump(node.phase);
            report.violations.push(Violation {
                node,
                v_pu,
                kind,
                excess_pu,
            });
        }
    }
    report.violations.sort_by(|a, b| a.node.cmp(&b.node));
    Ok(report)
}

/// Source injection minus net demand minus losses (should vanish).
pub fn source_power_balance(result: &PowerFlowResult) -> Power {
    result.total_source_power() - result.scheduled.net_demand() - result.losses
}
