//! Reactive-power voltage control: greedy intervention, the PV addition
//! study built on it, a linearised minimum-Q controller with optional phase
//! partitioning, and its iterative refinement.
//!
//! Setpoints are absorption positive throughout. Every plan's residual comes
//! from a nonlinear solve of the feeder with the plan applied.

use std::collections::BTreeMap;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{apply_instance, Feeder, NetError, Phase, PvSpec, TimeSeriesProfile};
use crate::report::{csv_string, sig6};
use crate::sensitivity::{build_vqsm, rank_pvs_for_node, SensitivityError, SensitivityMatrix};
use crate::solver::{
    check_violations, solve, ConvergenceConfig, LimitKind, PowerFlowResult, SolveError, ViolationReport,
    VoltageLimits,
};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("invalid control settings: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlOptions {
    pub limits: VoltageLimits,
    /// Greedy increment, kVAr.
    pub step_q_kvar: f64,
    /// Greedy round limit.
    pub max_rounds: usize,
    /// Perturbation used for sensitivity builds, kVAr.
    pub delta_q_kvar: f64,
    /// Amount the LP tightens each limit by, p.u.
    pub margin_pu: f64,
    pub max_outer: usize,
    pub convergence: ConvergenceConfig,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            limits: VoltageLimits::default(),
            step_q_kvar: 10.0,
            max_rounds: 200,
            delta_q_kvar: crate::sensitivity::DEFAULT_DELTA_Q_KVAR,
            margin_pu: 0.0005,
            max_outer: 5,
            convergence: ConvergenceConfig::default(),
        }
    }
}

impl ControlOptions {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.step_q_kvar > 0.0) {
            return Err(ControlError::Config("step_q must be > 0".into()));
        }
        if !(self.margin_pu >= 0.0) || self.limits.v_min + self.margin_pu >= self.limits.v_max - self.margin_pu {
            return Err(ControlError::Config("margin leaves no admissible band".into()));
        }
        if self.max_outer == 0 {
            return Err(ControlError::Config("max_outer must be >= 1".into()));
        }
        self.convergence.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// One problem over every monitored node-phase and every PV.
    Full,
    /// Three independent problems, each restricted to one phase.
    PerPhase,
}

impl std::str::FromStr for PartitionScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "per-phase" | "per_phase" | "perphase" => Ok(Self::PerPhase),
            o => Err(format!("unknown partition '{o}' (full|per-phase)")),
        }
    }
}

/// Row and column indices of one sub-problem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub phase: Option<Phase>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl PartitionScheme {
    pub fn cells(self, sm: &SensitivityMatrix) -> Vec<Cell> {
        match self {
            PartitionScheme::Full => vec![Cell {
                phase: None,
                rows: (0..sm.rows.len()).collect(),
                cols: (0..sm.columns.len()).collect(),
            }],
            PartitionScheme::PerPhase => Phase::ALL
                .into_iter()
                .map(|p| Cell {
                    phase: Some(p),
                    rows: (0..sm.rows.len()).filter(|&i| sm.rows[i].phase == p).collect(),
                    cols: (0..sm.columns.len()).filter(|&j| sm.columns[j].phase == p).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub pv: String,
    pub phase: Phase,
    /// Reactive setpoint, kVAr, absorption positive.
    pub q_set_kvar: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    /// No violations remain.
    Solved,
    /// Violations remain and no helpful capability was left.
    Residual,
    /// A linear sub-problem had no feasible point; its max violation was minimised.
    Infeasible,
    /// The worst violation grew, or a violation set kept recurring.
    Oscillation,
    /// Round or outer-iteration limit reached with violations left.
    RoundLimit,
}

/// One row of a controller's per-round log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    /// PV moved in this round (greedy only).
    pub pv: Option<String>,
    pub q_set_kvar: Option<f64>,
    pub violations: usize,
    pub violated_phases: Vec<Phase>,
    pub worst_excess_pu: f64,
    pub max_v_pu: f64,
    pub min_v_pu: f64,
    pub total_q_kvar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPlan {
    /// PVs with a non-zero setpoint, in feeder order.
    pub actions: Vec<ControlAction>,
    pub residual: ViolationReport,
    pub total_q_kvar: f64,
    pub iterations: usize,
    pub status: PlanStatus,
    pub trace: Vec<RoundTrace>,
    /// Partition cells whose linear program was infeasible.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub infeasible_cells: Vec<String>,
}

impl ControlPlan {
    /// Phases that appear in some round's violations but not in the first.
    pub fn emerging_phases(&self) -> Vec<Phase> {
        let Some(first) = self.trace.first() else {
            return vec![];
        };
        let mut out: Vec<Phase> = self
            .trace
            .iter()
            .flat_map(|t| t.violated_phases.iter().copied())
            .filter(|p| !first.violated_phases.contains(p))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn acts_on_phase(&self, phase: Phase) -> bool {
        self.actions.iter().any(|a| a.phase == phase)
    }
}

/// Copy of `feeder` with the plan's setpoints applied (all others at zero).
pub fn apply_plan(feeder: &Feeder, plan: &ControlPlan) -> Result<Feeder, ControlError> {
    let zeroed = feeder.with_pv_setpoints(feeder.pvs.iter().map(|p| (p.id.as_str(), 0.0)))?;
    Ok(zeroed.with_pv_setpoints(plan.actions.iter().map(|a| (a.pv.as_str(), a.q_set_kvar)))?)
}

/// Solves `feeder` and lists its violations.
pub fn verify(
    feeder: &Feeder,
    opts: &ControlOptions,
) -> Result<(PowerFlowResult, ViolationReport), ControlError> {
    let r = solve(feeder, &opts.convergence)?;
    let rep = check_violations(&r, &opts.limits)?;
    Ok((r, rep))
}

fn actions_of(feeder: &Feeder) -> Vec<ControlAction> {
    feeder
        .pvs
        .iter()
        .filter(|p| p.q_kvar != 0.0)
        .map(|p| ControlAction {
            pv: p.id.clone(),
            phase: p.phase,
            q_set_kvar: p.q_kvar,
        })
        .collect()
}

fn total_q(feeder: &Feeder) -> f64 {
    // an empty f64 sum is -0.0
    feeder.pvs.iter().map(|p| p.q_kvar.abs()).sum::<f64>() + 0.0
}

fn trace_row(round: usize, feeder: &Feeder, rep: &ViolationReport, moved: Option<(&str, f64)>) -> RoundTrace {
    RoundTrace {
        round,
        pv: moved.map(|m| m.0.to_string()),
        q_set_kvar: moved.map(|m| m.1),
        violations: rep.len(),
        violated_phases: rep.phases().into_iter().collect(),
        worst_excess_pu: rep.worst_excess_pu(),
        max_v_pu: rep.max_v_pu,
        min_v_pu: rep.min_v_pu,
        total_q_kvar: total_q(feeder),
    }
}

fn plan_from(
    feeder: &Feeder,
    residual: ViolationReport,
    iterations: usize,
    status: PlanStatus,
    trace: Vec<RoundTrace>,
) -> ControlPlan {
    ControlPlan {
        actions: actions_of(feeder),
        residual,
        total_q_kvar: total_q(feeder),
        iterations,
        status,
        trace,
        infeasible_cells: vec![],
    }
}

/// Remaining room for `pv` to move in the direction of `sign`.
fn room(pv: &PvSpec, sign: f64) -> f64 {
    (pv.q_capability_kvar() - sign * pv.q_kvar).max(0.0)
}

/// Greedy loop: each round takes the worst violation, picks the PV with the
/// largest helpful sensitivity at that node-phase (sm < 0, ties by id) that
/// still has capability, and moves it one step (absorb for over-voltage,
/// inject for under-voltage).
pub fn prioritized_q_intervention(
    feeder: &Feeder,
    sm: &SensitivityMatrix,
    opts: &ControlOptions,
) -> Result<ControlPlan, ControlError> {
    opts.validate()?;
    let mut f = feeder.clone();
    let (_, mut rep) = verify(&f, opts)?;
    let mut trace = vec![trace_row(0, &f, &rep, None)];
    let mut round = 0;
    let status = loop {
        if rep.is_empty() {
            break PlanStatus::Solved;
        }
        if round >= opts.max_rounds {
            break PlanStatus::RoundLimit;
        }
        let worst = rep.worst().expect("non-empty report").clone();
        let sign = match worst.kind {
            LimitKind::Over => 1.0,
            LimitKind::Under => -1.0,
        };
        let pick = match sm.row_index(&worst.node) {
            Some(_) => rank_pvs_for_node(sm, &worst.node)?
                .into_iter()
                .filter(|(_, s)| *s < 0.0)
                .find_map(|(id, _)| {
                    let pv = f.pv(&id)?;
                    let r = room(pv, sign);
                    (r > 1e-9).then(|| (id, pv.q_kvar + sign * opts.step_q_kvar.min(r)))
                }),
            None => None,
        };
        let Some((id, q)) = pick else {
            break PlanStatus::Residual;
        };
        f = f.with_pv_setpoints([(id.as_str(), q)])?;
        round += 1;
        let before = rep.worst_excess_pu();
        rep = verify(&f, opts)?.1;
        trace.push(trace_row(round, &f, &rep, Some((&id, q))));
        if rep.worst_excess_pu() > before + 1e-12 {
            break PlanStatus::Oscillation;
        }
    };
    Ok(plan_from(&f, rep, round, status, trace))
}

/// Minimum Σ|q| setpoints keeping the linearised voltages inside the limits
/// (tightened by `margin_pu`), solved independently per partition cell and
/// verified with a nonlinear solve.
///
/// The model is `|V| ≈ |V⁰| + SM (q − q⁰)` around the present operating
/// point of `feeder`. A cell with no feasible point instead minimises its
/// largest linearised violation.
pub fn lp_min_q(
    feeder: &Feeder,
    sm: &SensitivityMatrix,
    partition: PartitionScheme,
    opts: &ControlOptions,
) -> Result<ControlPlan, ControlError> {
    opts.validate()?;
    let (base, rep0) = verify(feeder, opts)?;
    let trace0 = trace_row(0, feeder, &rep0, None);
    if rep0.is_empty() {
        return Ok(plan_from(feeder, rep0, 0, PlanStatus::Solved, vec![trace0]));
    }
    let vb = base.phasors.base_voltage_v;
    let v0: Vec<f64> = sm
        .rows
        .iter()
        .map(|n| {
            base.phasors
                .voltage(&n.bus, n.phase)
                .map(|v| v.norm())
                .ok_or_else(|| SensitivityError::UnknownNode(n.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let hi = (opts.limits.v_max - opts.margin_pu) * vb;
    let lo = (opts.limits.v_min + opts.margin_pu) * vb;

    let mut setpoints: BTreeMap<String, f64> = BTreeMap::new();
    let mut infeasible = vec![];
    for cell in partition.cells(sm) {
        if cell.cols.is_empty() || cell.rows.is_empty() {
            continue;
        }
        let pvs: Vec<&PvSpec> = cell
            .cols
            .iter()
            .map(|&j| feeder.pv(&sm.columns[j].pv).ok_or_else(|| SensitivityError::UnknownPv(sm.columns[j].pv.clone())))
            .collect::<Result<_, _>>()?;
        let q = match solve_cell(sm, &cell, &pvs, &v0, lo, hi, false)? {
            Some(q) => q,
            None => {
                infeasible.push(cell.phase.map_or("full".to_string(), |p| p.to_string()));
                solve_cell(sm, &cell, &pvs, &v0, lo, hi, true)?
                    .ok_or_else(|| ControlError::Lp("fallback problem infeasible".into()))?
            }
        };
        for (pv, q) in pvs.iter().zip(q) {
            setpoints.insert(pv.id.clone(), q);
        }
    }

    let f = feeder.with_pv_setpoints(setpoints.iter().map(|(k, &v)| (k.as_str(), v)))?;
    let (_, rep) = verify(&f, opts)?;
    let status = if rep.is_empty() {
        PlanStatus::Solved
    } else if !infeasible.is_empty() {
        PlanStatus::Infeasible
    } else {
        PlanStatus::Residual
    };
    let trace = vec![trace0, trace_row(1, &f, &rep, None)];
    let mut plan = plan_from(&f, rep, 1, status, trace);
    plan.infeasible_cells = infeasible;
    Ok(plan)
}

/// `q = a − b`, `a, b ∈ [0, cap]`. Returns `None` when infeasible. With
/// `minimax`, violations are allowed up to a shared slack `t` which is
/// minimised first.
fn solve_cell(
    sm: &SensitivityMatrix,
    cell: &Cell,
    pvs: &[&PvSpec],
    v0: &[f64],
    lo: f64,
    hi: f64,
    minimax: bool,
) -> Result<Option<Vec<f64>>, ControlError> {
    // keeps the |q| term from competing with the slack
    const EPS: f64 = 1e-6;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let w = if minimax { EPS } else { 1.0 };
    let vars: Vec<_> = pvs
        .iter()
        .map(|pv| {
            let cap = pv.q_capability_kvar();
            (lp.add_var(w, (0.0, cap)), lp.add_var(w, (0.0, cap)))
        })
        .collect();
    let t = minimax.then(|| lp.add_var(1.0, (0.0, f64::INFINITY)));

    for &i in &cell.rows {
        // v0 + Σ sm (a − b − q0) within [lo, hi]
        let mut shift = v0[i];
        let mut terms = Vec::with_capacity(2 * vars.len() + 1);
        for (k, &j) in cell.cols.iter().enumerate() {
            let s = sm.values[i][j];
            shift -= s * pvs[k].q_kvar;
            terms.push((vars[k].0, s));
            terms.push((vars[k].1, -s));
        }
        let mut upper = terms.clone();
        let mut lower = terms;
        if let Some(t) = t {
            upper.push((t, -1.0));
            lower.push((t, 1.0));
        }
        lp.add_constraint(upper, ComparisonOp::Le, hi - shift);
        lp.add_constraint(lower, ComparisonOp::Ge, lo - shift);
    }
    match lp.solve() {
        Ok(sol) => Ok(Some(vars.iter().map(|&(a, b)| sol[a] - sol[b]).collect())),
        Err(minilp::Error::Infeasible) => Ok(None),
        Err(e) => Err(ControlError::Lp(e.to_string())),
    }
}

/// Setpoint change below which an outer round counts as no progress, kVAr.
pub const SETPOINT_TOL_KVAR: f64 = 1e-3;

/// Repeats `lp_min_q`, refreshing stale sensitivity columns at each new
/// operating point, until no violations remain or `max_outer` rounds pass.
pub fn iterative_control(
    feeder: &Feeder,
    partition: PartitionScheme,
    opts: &ControlOptions,
    instance: &str,
) -> Result<ControlPlan, ControlError> {
    opts.validate()?;
    let (_, rep0) = verify(feeder, opts)?;
    let mut trace = vec![trace_row(0, feeder, &rep0, None)];
    if rep0.is_empty() {
        return Ok(plan_from(feeder, rep0, 0, PlanStatus::Solved, trace));
    }
    let mut sm = build_vqsm(feeder, None, None, opts.delta_q_kvar, &opts.convergence, instance)?;
    let mut f = feeder.clone();
    let mut seen: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    let mut infeasible = vec![];
    let mut rep = rep0;
    let mut status = PlanStatus::RoundLimit;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let plan = lp_min_q(&f, &sm, partition, opts)?;
        let next = apply_plan(&f, &plan)?;
        let stalled = next
            .pvs
            .iter()
            .zip(&f.pvs)
            .all(|(a, b)| (a.q_kvar - b.q_kvar).abs() <= SETPOINT_TOL_KVAR);
        f = next;
        rep = plan.residual;
        trace.push(trace_row(outer, &f, &rep, None));
        let stuck = !plan.infeasible_cells.is_empty();
        infeasible.extend(plan.infeasible_cells);
        if rep.is_empty() {
            status = PlanStatus::Solved;
            break;
        }
        if stalled {
            // nothing moved: another round would only repeat this one
            status = if stuck { PlanStatus::Infeasible } else { PlanStatus::Residual };
            break;
        }
        let key = rep.nodes().iter().map(|n| n.to_string()).collect();
        let count = seen.entry(key).or_insert(0);
        *count += 1;
        if *count >= 3 {
            status = if stuck { PlanStatus::Infeasible } else { PlanStatus::Oscillation };
            break;
        }
        if outer < opts.max_outer {
            sm.refresh(&f, &opts.convergence, opts.step_q_kvar)?;
        }
    }
    infeasible.sort();
    infeasible.dedup();
    let mut plan = plan_from(&f, rep, outer, status, trace);
    plan.infeasible_cells = infeasible;
    Ok(plan)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditionStage {
    /// Every PV at unity power factor.
    Upf,
    /// Setpoints from the previous step, new PVs at unity power factor.
    CarriedOver,
    /// After greedy intervention.
    Final,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditionRow {
    pub step: usize,
    pub stage: AdditionStage,
    pub pv_count: usize,
    pub violations: usize,
    #[serde(rename = "violations_A")]
    pub violations_a: usize,
    #[serde(rename = "violations_B")]
    pub violations_b: usize,
    #[serde(rename = "violations_C")]
    pub violations_c: usize,
    pub worst_excess_pu: f64,
    pub max_v_pu: f64,
    pub active_interventions: usize,
    pub total_q_kvar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditionStep {
    pub step: usize,
    pub added: Vec<String>,
    pub rows: Vec<AdditionRow>,
    /// Greedy plan for this step; absent for the base step and when nothing is violated.
    pub plan: Option<ControlPlan>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdditionStudy {
    pub steps: Vec<AdditionStep>,
    /// Set when a step failed; the steps before it are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl AdditionStudy {
    pub fn rows(&self) -> impl Iterator<Item = &AdditionRow> {
        self.steps.iter().flat_map(|s| s.rows.iter())
    }

    /// PV count of the last step whose final plan leaves no violations.
    pub fn hosting_capacity(&self) -> Option<usize> {
        self.steps
            .iter()
            .filter_map(|s| s.rows.last())
            .filter(|r| r.violations == 0)
            .map(|r| r.pv_count)
            .last()
    }

    pub fn to_csv(&self) -> String {
        csv_string(
            &[
                "step",
                "stage",
                "pv_count",
                "violations",
                "violations_A",
                "violations_B",
                "violations_C",
                "worst_excess_pu",
                "max_v_pu",
                "active_interventions",
                "total_q_kvar",
            ],
            self.rows().map(|r| {
                vec![
                    r.step.to_string(),
                    serde_json::to_value(r.stage).unwrap().as_str().unwrap().to_string(),
                    r.pv_count.to_string(),
                    r.violations.to_string(),
                    r.violations_a.to_string(),
                    r.violations_b.to_string(),
                    r.violations_c.to_string(),
                    sig6(r.worst_excess_pu),
                    sig6(r.max_v_pu),
                    r.active_interventions.to_string(),
                    sig6(r.total_q_kvar),
                ]
            }),
        )
    }
}

fn addition_row(step: usize, stage: AdditionStage, f: &Feeder, rep: &ViolationReport) -> AdditionRow {
    AdditionRow {
        step,
        stage,
        pv_count: f.pvs.len(),
        violations: rep.len(),
        violations_a: rep.counts.a,
        violations_b: rep.counts.b,
        violations_c: rep.counts.c,
        worst_excess_pu: rep.worst_excess_pu(),
        max_v_pu: rep.max_v_pu,
        active_interventions: f.pvs.iter().filter(|p| p.q_kvar != 0.0).count(),
        total_q_kvar: total_q(f),
    }
}

/// Adds `pool` to `feeder` in batches of `batch` PVs. Each step solves at
/// unity power factor, then from the previous step's setpoints, and runs the
/// greedy intervention from there with a sensitivity matrix built at that
/// operating point.
///
/// PVs of `pool` already present in `feeder` are removed first, so passing
/// a feeder's own PV list studies its build-up from zero.
pub fn pv_addition_study(
    feeder: &Feeder,
    pool: &[PvSpec],
    batch: usize,
    opts: &ControlOptions,
) -> Result<AdditionStudy, ControlError> {
    opts.validate()?;
    if batch == 0 {
        return Err(ControlError::Config("batch size must be >= 1".into()));
    }
    for pv in pool {
        if feeder.bus_index(&pv.bus).is_none() {
            return Err(NetError::UnknownReference {
                kind: "bus",
                id: pv.bus.clone(),
            }
            .into());
        }
    }
    let mut current = feeder.clone();
    current.pvs.retain(|p| pool.iter().all(|q| q.id != p.id));
    current.validate()?;

    let mut study = AdditionStudy::default();
    let batches: Vec<&[PvSpec]> = std::iter::once(&pool[..0]).chain(pool.chunks(batch)).collect();
    for (step, added) in batches.into_iter().enumerate() {
        match addition_step(&mut current, step, added, opts) {
            Ok(s) => study.steps.push(s),
            Err(e) => {
                study.aborted = Some(format!("step {step}: {e}"));
                break;
            }
        }
    }
    Ok(study)
}

fn addition_step(
    current: &mut Feeder,
    step: usize,
    added: &[PvSpec],
    opts: &ControlOptions,
) -> Result<AdditionStep, ControlError> {
    let mut carried = current.clone();
    carried.pvs.extend(added.iter().map(|p| PvSpec { q_kvar: 0.0, ..p.clone() }));
    carried.validate()?;
    let upf = carried.with_pv_setpoints(carried.pvs.iter().map(|p| (p.id.as_str(), 0.0)))?;

    let (_, rep_upf) = verify(&upf, opts)?;
    if added.is_empty() {
        *current = carried;
        return Ok(AdditionStep {
            step,
            added: vec![],
            rows: vec![addition_row(step, AdditionStage::Upf, &upf, &rep_upf)],
            plan: None,
        });
    }
    let (_, rep_carried) = verify(&carried, opts)?;
    let mut rows = vec![
        addition_row(step, AdditionStage::Upf, &upf, &rep_upf),
        addition_row(step, AdditionStage::CarriedOver, &carried, &rep_carried),
    ];
    let plan = if rep_carried.is_empty() || carried.pvs.is_empty() {
        *current = carried;
        rows.push(addition_row(step, AdditionStage::Final, current, &rep_carried));
        None
    } else {
        let sm = build_vqsm(
            &carried,
            None,
            None,
            opts.delta_q_kvar,
            &opts.convergence,
            &format!("step{step}"),
        )?;
        let plan = prioritized_q_intervention(&carried, &sm, opts)?;
        *current = apply_plan(&carried, &plan)?;
        rows.push(addition_row(step, AdditionStage::Final, current, &plan.residual));
        Some(plan)
    };
    Ok(AdditionStep {
        step,
        added: added.iter().map(|p| p.id.clone()).collect(),
        rows,
        plan,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Upf,
    PerPhase,
    Full,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Upf, Strategy::PerPhase, Strategy::Full];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Upf => "upf",
            Strategy::PerPhase => "per_phase",
            Strategy::Full => "full",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub instance: String,
    pub strategy: Strategy,
    pub violations: usize,
    pub max_v_pu: f64,
    pub min_v_pu: f64,
    pub total_q_kvar: f64,
    pub rounds: usize,
    pub status: Option<PlanStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceComparison {
    pub instance: String,
    pub rows: Vec<ComparisonRow>,
    /// Plans for the two controlled strategies, when they ran.
    pub plans: BTreeMap<String, ControlPlan>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub instances: Vec<InstanceComparison>,
}

pub const COMPARISON_HEADER: [&str; 9] = [
    "instance",
    "strategy",
    "violations",
    "max_v_pu",
    "min_v_pu",
    "total_q_kvar",
    "rounds",
    "status",
    "error",
];

fn comparison_record(r: &ComparisonRow) -> Vec<String> {
    vec![
        r.instance.clone(),
        r.strategy.name().to_string(),
        r.violations.to_string(),
        sig6(r.max_v_pu),
        sig6(r.min_v_pu),
        sig6(r.total_q_kvar),
        r.rounds.to_string(),
        r.status
            .map(|s| serde_json::to_value(s).unwrap().as_str().unwrap().to_string())
            .unwrap_or_default(),
        r.error.clone().unwrap_or_default(),
    ]
}

impl Comparison {
    pub fn rows(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.instances.iter().flat_map(|i| i.rows.iter())
    }

    pub fn row(&self, instance: &str, strategy: Strategy) -> Option<&ComparisonRow> {
        self.rows().find(|r| r.instance == instance && r.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        csv_string(&COMPARISON_HEADER, self.rows().map(comparison_record))
    }
}

impl InstanceComparison {
    pub fn to_csv(&self) -> String {
        csv_string(&COMPARISON_HEADER, self.rows.iter().map(comparison_record))
    }
}

fn error_row(instance: &str, strategy: Strategy, e: &ControlError) -> ComparisonRow {
    ComparisonRow {
        instance: instance.to_string(),
        strategy,
        violations: 0,
        max_v_pu: f64::NAN,
        min_v_pu: f64::NAN,
        total_q_kvar: 0.0,
        rounds: 0,
        status: None,
        error: Some(e.to_string()),
    }
}

fn plan_row(instance: &str, strategy: Strategy, p: &ControlPlan) -> ComparisonRow {
    let last = p.trace.last();
    ComparisonRow {
        instance: instance.to_string(),
        strategy,
        violations: p.residual.len(),
        max_v_pu: last.map_or(f64::NAN, |t| t.max_v_pu),
        min_v_pu: last.map_or(f64::NAN, |t| t.min_v_pu),
        total_q_kvar: p.total_q_kvar,
        rounds: p.iterations,
        status: Some(p.status),
        error: None,
    }
}

fn compare_instance(
    feeder: &Feeder,
    profile: &TimeSeriesProfile,
    label: &str,
    opts: &ControlOptions,
) -> InstanceComparison {
    let mut out = InstanceComparison {
        instance: label.to_string(),
        ..Default::default()
    };
    let f = match apply_instance(feeder, profile, label)
        .map_err(ControlError::from)
        .and_then(|f| Ok(f.with_pv_setpoints(f.pvs.iter().map(|p| (p.id.as_str(), 0.0)))?))
    {
        Ok(f) => f,
        Err(e) => {
            out.rows = Strategy::ALL.iter().map(|&s| error_row(label, s, &e)).collect();
            return out;
        }
    };
    match verify(&f, opts) {
        Ok((_, rep)) => out.rows.push(ComparisonRow {
            instance: label.to_string(),
            strategy: Strategy::Upf,
            violations: rep.len(),
            max_v_pu: rep.max_v_pu,
            min_v_pu: rep.min_v_pu,
            total_q_kvar: 0.0,
            rounds: 0,
            status: Some(if rep.is_empty() { PlanStatus::Solved } else { PlanStatus::Residual }),
            error: None,
        }),
        Err(e) => out.rows.push(error_row(label, Strategy::Upf, &e)),
    }
    for (strategy, partition) in [
        (Strategy::PerPhase, PartitionScheme::PerPhase),
        (Strategy::Full, PartitionScheme::Full),
    ] {
        match iterative_control(&f, partition, opts, label) {
            Ok(p) => {
                out.rows.push(plan_row(label, strategy, &p));
                out.plans.insert(strategy.name().to_string(), p);
            }
            Err(e) => out.rows.push(error_row(label, strategy, &e)),
        }
    }
    out
}

/// UPF against per-phase and full iterative control for each instance.
/// Instances run in parallel; failures are recorded per row.
pub fn compare_controllers(
    feeder: &Feeder,
    profile: &TimeSeriesProfile,
    instances: &[String],
    opts: &ControlOptions,
) -> Result<Comparison, ControlError> {
    opts.validate()?;
    profile.check_against(feeder)?;
    Ok(Comparison {
        instances: instances
            .par_iter()
            .map(|label| compare_instance(feeder, profile, label, opts))
            .collect(),
    })
}

pub fn trace_csv(trace: &[RoundTrace]) -> String {
    csv_string(
        &[
            "round",
            "pv",
            "q_set_kvar",
            "violations",
            "violated_phases",
            "worst_excess_pu",
            "max_v_pu",
            "min_v_pu",
            "total_q_kvar",
        ],
        trace.iter().map(|t| {
            vec![
                t.round.to_string(),
                t.pv.clone().unwrap_or_default(),
                t.q_set_kvar.map(sig6).unwrap_or_default(),
                t.violations.to_string(),
                t.violated_phases.iter().map(|p| p.to_string()).collect::<String>(),
                sig6(t.worst_excess_pu),
                sig6(t.max_v_pu),
                sig6(t.min_v_pu),
                sig6(t.total_q_kvar),
            ]
        }),
    )
}
