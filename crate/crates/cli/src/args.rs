use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crossphase::{ControlOptions, ConvergenceConfig, NodePhase, PartitionScheme, SplitReference, VoltageLimits};

pub const SIGN_NOTE: &str = "Sign convention: reactive power is absorption positive. q = +100 kVAr means \
the inverter absorbs 100 kVAr (acts like extra reactive load); negative q injects.";

#[derive(Debug, Parser)]
#[command(
    name = "crossphase",
    version,
    about = "Unbalanced feeder power flow, Q-V sensitivities and cross-phase aware voltage control",
    after_help = SIGN_NOTE,
    arg_required_else_help = true,
    args_override_self = true
)]
pub struct Cli {
    /// JSON file whose keys supply flag values (command-line flags win).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Also write JSON, CSV and a run manifest into this directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Print the run manifest and full result as JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Primitive, earth/mutual and Kron-reduced impedance matrices per segment.
    #[command(after_help = SIGN_NOTE)]
    Impedance(ImpedanceArgs),
    /// Solve the power flow and list voltages per bus and phase.
    #[command(after_help = SIGN_NOTE)]
    Powerflow(PowerflowArgs),
    /// Voltage/reactive-power sensitivity matrix (V per kVAr absorbed) as CSV.
    #[command(after_help = SIGN_NOTE)]
    Sensitivity(SensitivityArgs),
    /// Split the voltage change of a Q perturbation on a two-bus feeder into earth and mutual parts.
    #[command(after_help = SIGN_NOTE)]
    Decompose(DecomposeArgs),
    /// Compute reactive setpoints that remove voltage violations.
    #[command(after_help = SIGN_NOTE)]
    Control(ControlArgs),
    /// UPF against per-phase and full control over profile instances.
    #[command(after_help = SIGN_NOTE)]
    Compare(CompareArgs),
    /// Add PVs in batches with greedy Q intervention after each batch.
    #[command(after_help = SIGN_NOTE)]
    AdditionStudy(AdditionArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Impedance(_) => "impedance",
            Command::Powerflow(_) => "powerflow",
            Command::Sensitivity(_) => "sensitivity",
            Command::Decompose(_) => "decompose",
            Command::Control(_) => "control",
            Command::Compare(_) => "compare",
            Command::AdditionStudy(_) => "addition-study",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FeederArgs {
    /// Feeder JSON. A bare bundled name (twobus.json, coupled30.json, hipv.json) works anywhere.
    #[arg(long, value_name = "PATH")]
    pub feeder: PathBuf,
    /// Time-series profile CSV (needs --instance).
    #[arg(long, value_name = "PATH", requires = "instance")]
    pub profile: Option<PathBuf>,
    /// Profile row to apply.
    #[arg(long, value_name = "LABEL", requires = "profile")]
    pub instance: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SolverArgs {
    /// Convergence tolerance, p.u.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
}

impl SolverArgs {
    pub fn config(&self) -> ConvergenceConfig {
        ConvergenceConfig {
            tolerance_pu: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ControlFlags {
    /// Voltage limits as vmin,vmax in p.u.
    #[arg(long, default_value = "0.95,1.05")]
    pub limits: VoltageLimits,
    /// Greedy step, kVAr.
    #[arg(long, default_value_t = 10.0)]
    pub step_q: f64,
    #[arg(long, default_value_t = 200)]
    pub max_rounds: usize,
    /// Perturbation for sensitivity builds, kVAr absorbed.
    #[arg(long, default_value_t = 100.0)]
    pub delta_q: f64,
    /// Tightening of each limit inside the LP, p.u.
    #[arg(long, default_value_t = 0.0005)]
    pub margin: f64,
    /// Outer rounds of iterative control.
    #[arg(long, default_value_t = 5)]
    pub max_outer: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

impl ControlFlags {
    pub fn options(&self) -> ControlOptions {
        ControlOptions {
            limits: self.limits,
            step_q_kvar: self.step_q,
            max_rounds: self.max_rounds,
            delta_q_kvar: self.delta_q,
            margin_pu: self.margin,
            max_outer: self.max_outer,
            convergence: self.solver.config(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ImpedanceArgs {
    #[arg(long, value_name = "PATH")]
    pub feeder: PathBuf,
    /// Only this segment.
    #[arg(long)]
    pub segment: Option<String>,
    /// Length unit the earth-return term is referenced to (foot|metre).
    #[arg(long, default_value = "metre")]
    pub split_reference: SplitReference,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    #[default]
    Auto,
    TwoBus,
    Radial,
}

#[derive(Debug, Args, Serialize)]
pub struct PowerflowArgs {
    #[command(flatten)]
    pub input: FeederArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    /// Voltage limits for the violation report, vmin,vmax in p.u.
    #[arg(long, default_value = "0.95,1.05")]
    pub limits: VoltageLimits,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub input: FeederArgs,
    /// Perturbation, kVAr absorbed.
    #[arg(long, default_value_t = 100.0)]
    pub delta_q: f64,
    /// Controllable PVs (default: all), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub pvs: Vec<String>,
    /// Monitored node-phases such as N4.A (default: all), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Vec<NodePhase>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// `pv:±kvar`, added to the PV's present setpoint.
#[derive(Clone, Debug, Serialize)]
pub struct Perturbation {
    pub pv: String,
    pub delta_kvar: f64,
}

impl std::str::FromStr for Perturbation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (pv, q) = s.rsplit_once(':').ok_or_else(|| format!("expected pv:kvar, got '{s}'"))?;
        let delta_kvar = q.trim().parse().map_err(|e| format!("'{q}': {e}"))?;
        Ok(Self {
            pv: pv.to_string(),
            delta_kvar,
        })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    #[arg(long, value_name = "PATH")]
    pub feeder: PathBuf,
    /// Setpoint change such as pvA:+100 (absorb 100 kVAr more); repeatable.
    #[arg(long, required = true, value_delimiter = ',')]
    pub perturb: Vec<Perturbation>,
    #[arg(long, default_value = "metre")]
    pub split_reference: SplitReference,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    /// Step the most sensitive PV until violations clear.
    Greedy,
    /// One linearised minimum-Q solve over the whole matrix, verified by power flow.
    LpFull,
    /// One linearised minimum-Q solve per phase, verified by power flow.
    #[value(name = "lp-perphase")]
    #[serde(rename = "lp-perphase")]
    LpPerphase,
    /// Repeated LP solves with sensitivity refresh.
    Iterative,
}

#[derive(Debug, Args, Serialize)]
pub struct ControlArgs {
    #[command(flatten)]
    pub input: FeederArgs,
    #[arg(long, value_enum, default_value_t = StrategyArg::Iterative)]
    pub strategy: StrategyArg,
    /// full or per-phase (iterative only).
    #[arg(long, default_value = "full")]
    pub partition: PartitionScheme,
    #[command(flatten)]
    pub control: ControlFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long, value_name = "PATH")]
    pub feeder: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub profile: PathBuf,
    /// Instance labels, comma separated (default: every profile row; "" for none).
    #[arg(long)]
    pub instances: Option<String>,
    #[command(flatten)]
    pub control: ControlFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct AdditionArgs {
    #[arg(long, value_name = "PATH")]
    pub feeder: PathBuf,
    /// JSON array of PVs to add (default: the feeder's own PVs, in file order).
    #[arg(long, value_name = "PATH")]
    pub pool: Option<PathBuf>,
    /// PVs added per step.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[command(flatten)]
    pub control: ControlFlags,
}
