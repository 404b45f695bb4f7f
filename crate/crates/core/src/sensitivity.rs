//! Voltage/reactive-power sensitivities by perturbation, and the split of a
//! two-bus voltage change into earth-return and mutual parts.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carson::{decompose, segment_primitive, CarsonError, SplitReference};
use crate::netmodel::{ConductorLabel, Feeder, NetError, NodePhase, Phase};
use crate::report::{csv_string, sig6};
use crate::solver::{solve, solve_two_bus, ConductorCurrent, ConvergenceConfig, PowerFlowResult, SolveError};

pub const DEFAULT_DELTA_Q_KVAR: f64 = 100.0;

/// Setpoint movement (in multiples of the control step) that makes a column stale.
pub const REFRESH_STEPS: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Impedance(#[from] CarsonError),
    #[error("perturbation size must be non-zero and finite")]
    ZeroDelta,
    #[error("unknown PV '{0}'")]
    UnknownPv(String),
    #[error("node-phase {0} is not monitored")]
    UnknownNode(String),
    #[error("feeders differ in more than PV reactive setpoints")]
    TopologyMismatch,
    #[error("inputs do not belong to the same study: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmColumn {
    pub pv: String,
    pub phase: Phase,
    /// Perturbation actually applied, kVAr (absorption positive). Zero when
    /// the inverter had no capability left in either direction.
    pub delta_q_kvar: f64,
    /// PV setpoint at the operating point the column was measured at.
    pub q_at_build_kvar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub rows: Vec<NodePhase>,
    pub columns: Vec<SmColumn>,
    /// `values[i][j]`: change of |V| at row i per kVAr absorbed by PV j, V/kVAr.
    pub values: Vec<Vec<f64>>,
    /// Requested perturbation, kVAr.
    pub delta_q_kvar: f64,
    pub base_instance: String,
    /// |V| at each row for the base solve, volts.
    pub base_voltage_v: Vec<f64>,
}

impl SensitivityMatrix {
    pub fn row_index(&self, node: &NodePhase) -> Option<usize> {
        self.rows.iter().position(|r| r == node)
    }

    pub fn column_index(&self, pv: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.pv == pv)
    }

    pub fn get(&self, node: &NodePhase, pv: &str) -> Option<f64> {
        Some(self.values[self.row_index(node)?][self.column_index(pv)?])
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    /// Rows labelled `bus.phase`, columns `pv:<id>`, values in V/kVAr.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["node".to_string()];
        header.extend(self.columns.iter().map(|c| format!("pv:{}", c.pv)));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        csv_string(
            &header,
            self.rows.iter().zip(&self.values).map(|(node, vals)| {
                std::iter::once(node.to_string()).chain(vals.iter().map(|&v| sig6(v)))
            }),
        )
    }

    /// Columns whose PV setpoint in `feeder` moved more than
    /// `REFRESH_STEPS * step_q_kvar` since they were measured.
    pub fn stale_columns(&self, feeder: &Feeder, step_q_kvar: f64) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                feeder
                    .pv(&c.pv)
                    .is_some_and(|pv| (pv.q_kvar - c.q_at_build_kvar).abs() > REFRESH_STEPS * step_q_kvar)
            })
            .map(|(j, _)| j)
            .collect()
    }

    /// Re-measures the stale columns at the operating point of `feeder`;
    /// the others are kept. Returns the refreshed column indices.
    pub fn refresh(
        &mut self,
        feeder: &Feeder,
        cfg: &ConvergenceConfig,
        step_q_kvar: f64,
    ) -> Result<Vec<usize>, SensitivityError> {
        let stale = self.stale_columns(feeder, step_q_kvar);
        if stale.is_empty() {
            return Ok(stale);
        }
        let base = solve(feeder, cfg)?;
        let v0 = magnitudes(&base, &self.rows)?;
        let fresh = stale
            .par_iter()
            .map(|&j| perturb_column(feeder, &self.columns[j].pv, self.delta_q_kvar, &self.rows, &v0, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        for (&j, (col, vals)) in stale.iter().zip(fresh) {
            self.columns[j] = col;
            for (row, v) in self.values.iter_mut().zip(vals) {
                row[j] = v;
            }
        }
        Ok(stale)
    }
}

fn magnitudes(result: &PowerFlowResult, rows: &[NodePhase]) -> Result<Vec<f64>, SensitivityError> {
    rows.iter()
        .map(|n| {
            result
                .phasors
                .voltage(&n.bus, n.phase)
                .map(|v| v.norm())
                .ok_or_else(|| SensitivityError::UnknownNode(n.to_string()))
        })
        .collect()
}

/// Perturbation that fits the inverter: `dq` if possible, otherwise what
/// remains in that direction, otherwise the opposite direction.
fn feasible_delta(q0: f64, cap: f64, dq: f64) -> f64 {
    let room = |d: f64| if d > 0.0 { (cap - q0).max(0.0) } else { (cap + q0).max(0.0) };
    let forward = dq.abs().min(room(dq)).copysign(dq);
    if forward.abs() > 1e-9 {
        return forward;
    }
    let back = dq.abs().min(room(-dq)).copysign(-dq);
    if back.abs() > 1e-9 {
        back
    } else {
        0.0
    }
}

fn perturb_column(
    feeder: &Feeder,
    pv_id: &str,
    delta_q: f64,
    rows: &[NodePhase],
    v0: &[f64],
    cfg: &ConvergenceConfig,
) -> Result<(SmColumn, Vec<f64>), SensitivityError> {
    let pv = feeder
        .pv(pv_id)
        .ok_or_else(|| SensitivityError::UnknownPv(pv_id.to_string()))?;
    let dq = feasible_delta(pv.q_kvar, pv.q_capability_kvar(), delta_q);
    let col = SmColumn {
        pv: pv.id.clone(),
        phase: pv.phase,
        delta_q_kvar: dq,
        q_at_build_kvar: pv.q_kvar,
    };
    if dq == 0.0 {
        return Ok((col, vec![0.0; rows.len()]));
    }
    let scratch = feeder.with_pv_setpoints([(pv_id, pv.q_kvar + dq)])?;
    let v1 = magnitudes(&solve(&scratch, cfg)?, rows)?;
    Ok((col, v1.iter().zip(v0).map(|(a, b)| (a - b) / dq).collect()))
}

/// One extra solve per PV, perturbing its absorption by `delta_q_kvar`.
///
/// `monitored = None` monitors every node-phase; `controllable = None` uses
/// every PV in feeder order.
pub fn build_vqsm(
    feeder: &Feeder,
    monitored: Option<&[NodePhase]>,
    controllable: Option<&[String]>,
    delta_q_kvar: f64,
    cfg: &ConvergenceConfig,
    instance: &str,
) -> Result<SensitivityMatrix, SensitivityError> {
    if delta_q_kvar == 0.0 || !delta_q_kvar.is_finite() {
        return Err(SensitivityError::ZeroDelta);
    }
    let pvs: Vec<String> = match controllable {
        Some(ids) => ids.to_vec(),
        None => feeder.pvs.iter().map(|p| p.id.clone()).collect(),
    };
    if let Some(bad) = pvs.iter().find(|id| feeder.pv(id).is_none()) {
        return Err(SensitivityError::UnknownPv(bad.clone()));
    }
    let base = solve(feeder, cfg)?;
    let rows = match monitored {
        Some(r) => r.to_vec(),
        None => base.phasors.node_phases(),
    };
    let v0 = magnitudes(&base, &rows)?;
    let cols = pvs
        .par_iter()
        .map(|id| perturb_column(feeder, id, delta_q_kvar, &rows, &v0, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut values = vec![vec![0.0; cols.len()]; rows.len()];
    for (j, (_, col)) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            values[i][j] = *v;
        }
    }
    Ok(SensitivityMatrix {
        rows,
        columns: cols.into_iter().map(|(c, _)| c).collect(),
        values,
        delta_q_kvar,
        base_instance: instance.to_string(),
        base_voltage_v: v0,
    })
}

/// PVs by descending |sm| at `node`, ties broken by id.
pub fn rank_pvs_for_node(
    sm: &SensitivityMatrix,
    node: &NodePhase,
) -> Result<Vec<(String, f64)>, SensitivityError> {
    let i = sm
        .row_index(node)
        .ok_or_else(|| SensitivityError::UnknownNode(node.to_string()))?;
    let mut out: Vec<(String, f64)> = sm
        .columns
        .iter()
        .zip(&sm.values[i])
        .map(|(c, &v)| (c.pv.clone(), v))
        .collect();
    out.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaDecomposition {
    pub reference: SplitReference,
    pub bus: String,
    /// Change of every conductor current, A.
    pub delta_i_l: Vec<ConductorCurrent>,
    /// Voltage change at the receiving bus per phase, V.
    pub dv_earth: [Complex64; 3],
    pub dv_mut: [Complex64; 3],
    pub dv_total: [Complex64; 3],
}

fn comparable(f: &Feeder) -> Feeder {
    let mut f = f.clone();
    for pv in &mut f.pvs {
        pv.q_kvar = 0.0;
    }
    f
}

/// Splits the receiving-end voltage change between two two-bus solves into
/// `−Z_earth ΔI` and `−Z_mut ΔI`.
pub fn decompose_delta(
    feeder: &Feeder,
    perturbed: &Feeder,
    cfg: &ConvergenceConfig,
    reference: SplitReference,
) -> Result<(DeltaDecomposition, PowerFlowResult, PowerFlowResult), SensitivityError> {
    if comparable(feeder) != comparable(perturbed) {
        return Err(SensitivityError::TopologyMismatch);
    }
    let r0 = solve_two_bus(feeder, cfg)?;
    let r1 = solve_two_bus(perturbed, cfg)?;
    let seg = &feeder.segments[0];
    let prim = segment_primitive(feeder, seg)?;
    let split = decompose(&prim, reference);

    let i0 = &r0.phasors.segments[0].conductors;
    let i1 = &r1.phasors.segments[0].conductors;
    let delta: Vec<Complex64> = i0.iter().zip(i1).map(|(a, b)| b.current - a.current).collect();
    let de = split.z_earth.mul_vec(&delta);
    let dm = split.z_mut.mul_vec(&delta);

    let zero = Complex64::new(0.0, 0.0);
    let mut out = DeltaDecomposition {
        reference,
        bus: seg.to_bus.clone(),
        delta_i_l: i0
            .iter()
            .zip(&delta)
            .map(|(c, &d)| ConductorCurrent {
                label: c.label,
                current: d,
            })
            .collect(),
        dv_earth: [zero; 3],
        dv_mut: [zero; 3],
        dv_total: [zero; 3],
    };
    for (k, &(_, p)) in prim.phase_rows().iter().enumerate() {
        debug_assert_eq!(prim.labels[k], ConductorLabel::from(p));
        let i = p.index();
        out.dv_earth[i] = -de[k];
        out.dv_mut[i] = -dm[k];
        out.dv_total[i] = out.dv_earth[i] + out.dv_mut[i];
    }
    Ok((out, r0, r1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polar {
    pub magnitude: f64,
    pub angle_deg: f64,
}

impl From<Complex64> for Polar {
    fn from(z: Complex64) -> Self {
        Polar {
            magnitude: z.norm(),
            angle_deg: if z.norm() == 0.0 { 0.0 } else { z.arg().to_degrees() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasorRow {
    pub phase: Phase,
    pub v0: Polar,
    pub v1: Polar,
    pub dv_earth: Polar,
    pub dv_mut: Polar,
    /// |V1| − |V0|, V.
    pub magnitude_change_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasorReport {
    pub bus: String,
    pub reference: SplitReference,
    pub phases: Vec<PhasorRow>,
    /// Largest |V0 + dv_earth + dv_mut − V1| over the phases, V.
    pub closure_error_v: f64,
    #[serde(skip)]
    pub complex: Vec<[Complex64; 4]>,
}

/// Closure tolerance between the decomposition and the two solves, V.
pub const CLOSURE_TOL_V: f64 = 1e-6;

pub fn phasor_report(
    decomp: &DeltaDecomposition,
    base: &PowerFlowResult,
    perturbed: &PowerFlowResult,
) -> Result<PhasorReport, SensitivityError> {
    let mut phases = Vec::new();
    let mut complex = Vec::new();
    let mut closure = 0.0f64;
    for p in Phase::ALL {
        let (Some(v0), Some(v1)) = (
            base.phasors.voltage(&decomp.bus, p),
            perturbed.phasors.voltage(&decomp.bus, p),
        ) else {
            continue;
        };
        let (de, dm) = (decomp.dv_earth[p.index()], decomp.dv_mut[p.index()]);
        closure = closure.max((v0 + de + dm - v1).norm());
        phases.push(PhasorRow {
            phase: p,
            v0: v0.into(),
            v1: v1.into(),
            dv_earth: de.into(),
            dv_mut: dm.into(),
            magnitude_change_v: v1.norm() - v0.norm(),
        });
        complex.push([v0, v1, de, dm]);
    }
    if phases.is_empty() {
        return Err(SensitivityError::Mismatch(format!("bus {} not in results", decomp.bus)));
    }
    if closure > CLOSURE_TOL_V {
        return Err(SensitivityError::Mismatch(format!(
            "V0 + dv_earth + dv_mut misses V1 by {closure:.3e} V"
        )));
    }
    Ok(PhasorReport {
        bus: decomp.bus.clone(),
        reference: decomp.reference,
        phases,
        closure_error_v: closure,
        complex,
    })
}

impl PhasorReport {
    /// Arrow endpoints for a phasor diagram: base and perturbed from the
    /// origin, earth and mutual parts chained head to tail from V0.
    pub fn endpoints_csv(&self) -> String {
        let mut rows = Vec::new();
        for (row, &[v0, v1, de, dm]) in self.phases.iter().zip(&self.complex) {
            let origin = Complex64::new(0.0, 0.0);
            for (name, a, b) in [
                ("v0", origin, v0),
                ("v1", origin, v1),
                ("dv_earth", v0, v0 + de),
                ("dv_mut", v0 + de, v0 + de + dm),
            ] {
                rows.push(vec![
                    row.phase.to_string(),
                    name.to_string(),
                    sig6(a.re),
                    sig6(a.im),
                    sig6(b.re),
                    sig6(b.im),
                ]);
            }
        }
        csv_string(&["phase", "vector", "x0", "y0", "x1", "y1"], rows)
    }
}
