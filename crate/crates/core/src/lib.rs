//! Unbalanced distribution feeder analysis with explicit cross-phase
//! coupling: Carson line impedances, power flow, voltage/reactive-power
//! sensitivities and reactive-power voltage control.
//!
//! Reactive setpoints are absorption positive everywhere: `q_kvar > 0`
//! means the inverter absorbs reactive power.

pub mod bundled;
pub mod carson;
pub mod control;
pub mod matrix;
pub mod netmodel;
pub mod report;
pub mod sensitivity;
pub mod solver;

pub use carson::{ImpedanceDecomposition, PhaseImpedance, PrimitiveImpedance, SplitReference};
pub use control::{
    AdditionStudy, Comparison, ControlAction, ControlOptions, ControlPlan, PartitionScheme, PlanStatus, Strategy,
};
pub use matrix::CMatrix;
pub use netmodel::{Feeder, NeutralBonding, NodePhase, Phase, PvSpec, TimeSeriesProfile};
pub use num_complex::Complex64;
pub use sensitivity::{DeltaDecomposition, PhasorReport, SensitivityMatrix};
pub use solver::{ConvergenceConfig, PowerFlowResult, ViolationReport, VoltageLimits};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Net(#[from] netmodel::NetError),
    #[error(transparent)]
    Impedance(#[from] carson::CarsonError),
    #[error(transparent)]
    Solve(#[from] solver::SolveError),
    #[error(transparent)]
    Sensitivity(#[from] sensitivity::SensitivityError),
    #[error(transparent)]
    Control(#[from] control::ControlError),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        use control::ControlError as C;
        use netmodel::NetError as N;
        use sensitivity::SensitivityError as S;
        use solver::SolveError as V;
        fn net(e: &N) -> &'static str {
            match e {
                N::Io { .. } => "io",
                N::Parse(_) => "parse",
                N::Profile(_) | N::UnknownInstance(_) => "profile",
                _ => "invalid_feeder",
            }
        }
        fn solve(e: &V) -> &'static str {
            match e {
                V::Net(n) => net(n),
                V::Impedance(_) => "impedance",
                V::Config(_) => "config",
                V::NotTwoBus { .. } => "not_two_bus",
                V::NotConverged { .. } | V::Unconverged => "not_converged",
                V::Diverged { .. } => "diverged",
            }
        }
        fn sens(e: &S) -> &'static str {
            match e {
                S::Solve(v) => solve(v),
                S::Net(n) => net(n),
                S::Impedance(_) => "impedance",
                _ => "sensitivity",
            }
        }
        match self {
            Error::Net(e) => net(e),
            Error::Impedance(_) => "impedance",
            Error::Solve(e) => solve(e),
            Error::Sensitivity(e) => sens(e),
            Error::Control(e) => match e {
                C::Solve(v) => solve(v),
                C::Sensitivity(s) => sens(s),
                C::Net(n) => net(n),
                C::Lp(_) => "lp",
                C::Config(_) => "config",
            },
        }
    }
}
