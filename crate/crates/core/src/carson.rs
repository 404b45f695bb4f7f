//! Series impedance of overhead line segments from the modified Carson
//! equations (60 Hz, 100 Ω·m earth resistivity).
//!
//! Per-mile quantities live only inside this module; every matrix it hands
//! out is already scaled by segment length and expressed in ohms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::CMatrix;
use crate::netmodel::{ConductorLabel, ConductorSpec, Feeder, LineSegment, NetError, Phase};

/// Carson earth-return resistance, Ω/mile.
pub const EARTH_RESISTANCE: f64 = 0.09530;
/// Reactance coefficient, Ω/mile per neper of the log term.
pub const REACTANCE_COEFF: f64 = 0.12134;
/// ln of the equivalent earth-return depth in feet.
pub const EARTH_LOG_TERM: f64 = 7.93402;
pub const FEET_PER_METRE: f64 = 1.0 / 0.3048;

#[derive(Debug, Error)]
pub enum CarsonError {
    #[error("geometric mean radius must be positive, got {0} ft")]
    NonPositiveGmr(f64),
    #[error("conductor spacing must be positive, got {0} ft")]
    NonPositiveDistance(f64),
    #[error("conductors {0} and {1} occupy the same position")]
    CoincidentConductors(ConductorLabel, ConductorLabel),
    #[error("matrix has no neutral conductor to eliminate")]
    NoNeutral,
    #[error("neutral self-impedance is singular")]
    SingularNeutral,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Self impedance of one conductor with earth return, Ω/mile.
pub fn carson_self(c: &ConductorSpec) -> Result<Complex64, CarsonError> {
    if !(c.gmr_ft > 0.0) {
        return Err(CarsonError::NonPositiveGmr(c.gmr_ft));
    }
    Ok(Complex64::new(
        c.resistance_ohm_per_mile + EARTH_RESISTANCE,
        REACTANCE_COEFF * ((1.0 / c.gmr_ft).ln() + EARTH_LOG_TERM),
    ))
}

/// Mutual impedance between two conductors `d_ft` apart, Ω/mile.
pub fn carson_mutual(d_ft: f64) -> Result<Complex64, CarsonError> {
    if !(d_ft > 0.0) {
        return Err(CarsonError::NonPositiveDistance(d_ft));
    }
    Ok(Complex64::new(
        EARTH_RESISTANCE,
        REACTANCE_COEFF * ((1.0 / d_ft).ln() + EARTH_LOG_TERM),
    ))
}

/// A conductor placed in a line cross-section.
#[derive(Clone, Debug)]
pub struct Wire {
    pub label: ConductorLabel,
    pub x_ft: f64,
    pub y_ft: f64,
    pub conductor: ConductorSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveImpedance {
    /// Ω, already multiplied by `length_miles`.
    pub z: CMatrix,
    pub labels: Vec<ConductorLabel>,
    pub length_miles: f64,
}

impl PrimitiveImpedance {
    pub fn neutral_index(&self) -> Option<usize> {
        self.labels.iter().position(|l| l.is_neutral())
    }

    pub fn phase_rows(&self) -> Vec<(usize, Phase)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.phase().map(|p| (i, p)))
            .collect()
    }
}

pub fn build_primitive(length_miles: f64, wires: &[Wire]) -> Result<PrimitiveImpedance, CarsonError> {
    let n = wires.len();
    let mut z = CMatrix::zeros(n);
    for i in 0..n {
        z[(i, i)] = carson_self(&wires[i].conductor)? * length_miles;
        for j in (i + 1)..n {
            let d = (wires[i].x_ft - wires[j].x_ft).hypot(wires[i].y_ft - wires[j].y_ft);
            if d == 0.0 {
                return Err(CarsonError::CoincidentConductors(wires[i].label, wires[j].label));
            }
            let m = carson_mutual(d)? * length_miles;
            z[(i, j)] = m;
            z[(j, i)] = m;
        }
    }
    Ok(PrimitiveImpedance {
        z,
        labels: wires.iter().map(|w| w.label).collect(),
        length_miles,
    })
}

/// Resolves a segment's geometry and conductors into wires.
pub fn segment_wires(feeder: &Feeder, seg: &LineSegment) -> Result<Vec<Wire>, CarsonError> {
    let geo = feeder.segment_geometry(seg)?;
    geo.conductors
        .iter()
        .map(|c| {
            let spec = feeder
                .conductor(&c.conductor)
                .ok_or_else(|| NetError::UnknownReference {
                    kind: "conductor",
                    id: c.conductor.clone(),
                })?;
            Ok(Wire {
                label: c.label,
                x_ft: c.x_ft,
                y_ft: c.y_ft,
                conductor: spec.clone(),
            })
        })
        .collect()
}

pub fn segment_primitive(feeder: &Feeder, seg: &LineSegment) -> Result<PrimitiveImpedance, CarsonError> {
    build_primitive(seg.length_miles, &segment_wires(feeder, seg)?)
}

/// Length unit the earth-return log term is referenced to.
///
/// `ln(De/D)` splits into `ln(De) + ln(1/D)`, and where the constant part
/// ends depends on the unit `De` and `D` are expressed in. The total matrix
/// is the same either way; only the earth/mutual split moves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitReference {
    Foot,
    #[default]
    Metre,
}

impl SplitReference {
    fn reference_ft(self) -> f64 {
        match self {
            SplitReference::Foot => 1.0,
            SplitReference::Metre => 1.0 / FEET_PER_METRE,
        }
    }

    /// Common earth-return term, Ω/mile.
    pub fn earth_term(self) -> Complex64 {
        Complex64::new(
            EARTH_RESISTANCE,
            REACTANCE_COEFF * (EARTH_LOG_TERM + self.reference_ft().ln()),
        )
    }
}

impl std::str::FromStr for SplitReference {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "foot" | "ft" => Ok(SplitReference::Foot),
            "metre" | "meter" | "m" => Ok(SplitReference::Metre),
            other => Err(format!("unknown split reference '{other}' (foot|metre)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceDecomposition {
    pub reference: SplitReference,
    /// Every element equals the earth term times length.
    pub z_earth: CMatrix,
    pub z_mut: CMatrix,
}

/// Splits `z` into the constant earth-return matrix and the remainder.
pub fn decompose(z: &PrimitiveImpedance, reference: SplitReference) -> ImpedanceDecomposition {
    let e = reference.earth_term() * z.length_miles;
    let elems: Vec<Complex64> = (0..z.z.dim()).flat_map(|i| (0..z.z.dim()).map(move |j| (i, j))).map(|k| z.z[k]).collect();
    // on the coarsest ulp grid of the matrix, `t − e` is exact whenever |t| ≥ |e|/2
    let e = Complex64::new(
        snap(e.re, elems.iter().map(|t| t.re)),
        snap(e.im, elems.iter().map(|t| t.im)),
    );
    let z_earth = CMatrix::filled(z.z.dim(), e);
    let z_mut = &z.z - &z_earth;
    ImpedanceDecomposition {
        reference,
        z_earth,
        z_mut,
    }
}

/// Rounds `e` to a multiple of the largest ulp among `values` and `e`.
fn snap(e: f64, values: impl Iterator<Item = f64>) -> f64 {
    let ulp = |x: f64| {
        let a = x.abs();
        a.next_up() - a
    };
    let q = values.map(ulp).fold(ulp(e), f64::max);
    (e / q).round() * q
}

/// 3×3 phase-frame impedance; rows and columns of absent phases are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseImpedance {
    pub z: CMatrix,
    pub present: [bool; 3],
}

impl PhaseImpedance {
    pub fn drop(&self, current: &[Complex64; 3]) -> [Complex64; 3] {
        let v = self.z.mul_vec(current);
        [v[0], v[1], v[2]]
    }
}

/// Eliminates the grounded neutral: `Z_abc = Z_pp − Z_pn Z_nn⁻¹ Z_np`.
pub fn kron_reduce(z: &PrimitiveImpedance) -> Result<PhaseImpedance, CarsonError> {
    let n = z.neutral_index().ok_or(CarsonError::NoNeutral)?;
    let znn = z.z[(n, n)];
    if znn.norm() < f64::EPSILON {
        return Err(CarsonError::SingularNeutral);
    }
    let rows = z.phase_rows();
    let mut out = PhaseImpedance {
        z: CMatrix::zeros(3),
        present: [false; 3],
    };
    for &(i, pi) in &rows {
        out.present[pi.index()] = true;
        for &(j, pj) in &rows {
            out.z[(pi.index(), pj.index())] = z.z[(i, j)] - z.z[(i, n)] * z.z[(n, j)] / znn;
        }
    }
    Ok(out)
}

/// Phase block of `z` without any reduction.
pub fn phase_block(z: &PrimitiveImpedance) -> PhaseImpedance {
    let rows = z.phase_rows();
    let mut out = PhaseImpedance {
        z: CMatrix::zeros(3),
        present: [false; 3],
    };
    for &(i, pi) in &rows {
        out.present[pi.index()] = true;
        for &(j, pj) in &rows {
            out.z[(pi.index(), pj.index())] = z.z[(i, j)];
        }
    }
    out
}

/// Kron-reduced when a neutral is present, phase block otherwise.
pub fn phase_impedance(z: &PrimitiveImpedance) -> Result<PhaseImpedance, CarsonError> {
    match z.neutral_index() {
        Some(_) => kron_reduce(z),
        None => Ok(phase_block(z)),
    }
}
