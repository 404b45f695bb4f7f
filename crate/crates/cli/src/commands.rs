use serde::Serialize;
use serde_json::{json, Value};

use crossphase::carson::{decompose, phase_impedance, segment_primitive};
use crossphase::control::{
    compare_controllers, iterative_control, lp_min_q, prioritized_q_intervention, pv_addition_study, trace_csv,
    PartitionScheme,
};
use crossphase::netmodel::apply_instance;
use crossphase::report::{csv_string, sig6};
use crossphase::sensitivity::{build_vqsm, decompose_delta, phasor_report};
use crossphase::solver::{check_violations, default_method, solve_with, source_power_balance, Method};
use crossphase::{CMatrix, ControlPlan, Feeder, PowerFlowResult, ViolationReport};

use crate::args::*;
use crate::inputs::{self, InputRef};
use crate::manifest::{slug, OutFile};
use crate::table;
use crate::CliError;

pub struct Output {
    /// File stem of the JSON bundle.
    pub stem: String,
    pub stdout: String,
    pub result: Value,
    pub files: Vec<OutFile>,
    pub inputs: Vec<InputRef>,
    pub instances: Vec<String>,
    pub strategy: Option<String>,
}

fn to_value(x: &impl Serialize) -> Value {
    serde_json::to_value(x).expect("result serializes")
}

pub fn execute(cmd: &Command) -> Result<Output, CliError> {
    match cmd {
        Command::Impedance(a) => impedance(a),
        Command::Powerflow(a) => powerflow(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Decompose(a) => decomposition(a),
        Command::Control(a) => control(a),
        Command::Compare(a) => compare(a),
        Command::AdditionStudy(a) => addition(a),
    }
}

struct Loaded {
    feeder: Feeder,
    inputs: Vec<InputRef>,
    instance: Option<String>,
}

impl Loaded {
    fn stem(&self, base: &str) -> String {
        match &self.instance {
            Some(i) => format!("{base}-{}", slug(i)),
            None => base.to_string(),
        }
    }

    fn label(&self) -> &str {
        self.instance.as_deref().unwrap_or("base")
    }

    fn instances(&self) -> Vec<String> {
        self.instance.iter().cloned().collect()
    }
}

fn load(a: &FeederArgs) -> Result<Loaded, CliError> {
    let (feeder, fr) = inputs::feeder(&a.feeder)?;
    let mut inputs = vec![fr];
    let feeder = match (&a.profile, &a.instance) {
        (Some(p), Some(label)) => {
            let (prof, pr) = inputs::profile(p)?;
            inputs.push(pr);
            apply_instance(&feeder, &prof, label)?
        }
        _ => feeder,
    };
    Ok(Loaded {
        feeder,
        inputs,
        instance: a.instance.clone(),
    })
}

#[derive(Serialize)]
struct SegmentImpedance {
    segment: String,
    length_miles: f64,
    labels: Vec<String>,
    z_prim: CMatrix,
    z_earth: CMatrix,
    z_mut: CMatrix,
    /// Rows/columns A, B, C; absent phases are zero.
    z_abc: CMatrix,
}

fn matrix_text(name: &str, labels: &[String], m: &CMatrix) -> String {
    let mut header = vec![name];
    header.extend(labels.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..m.dim())
        .map(|i| {
            std::iter::once(labels[i].clone())
                .chain((0..m.dim()).map(|j| table::complex(m[(i, j)])))
                .collect()
        })
        .collect();
    table::render(&header, &rows)
}

fn impedance(a: &ImpedanceArgs) -> Result<Output, CliError> {
    let (f, fr) = inputs::feeder(&a.feeder)?;
    let segs: Vec<_> = f
        .segments
        .iter()
        .filter(|s| a.segment.as_ref().map_or(true, |id| &s.id == id))
        .collect();
    if segs.is_empty() {
        return Err(CliError::new(
            "invalid_feeder",
            format!("unknown segment '{}'", a.segment.clone().unwrap_or_default()),
        ));
    }
    let mut out = vec![];
    for s in segs {
        let z = segment_primitive(&f, s)?;
        let d = decompose(&z, a.split_reference);
        out.push(SegmentImpedance {
            segment: s.id.clone(),
            length_miles: s.length_miles,
            labels: z.labels.iter().map(|l| l.to_string()).collect(),
            z_abc: phase_impedance(&z)?.z,
            z_prim: z.z,
            z_earth: d.z_earth,
            z_mut: d.z_mut,
        });
    }
    let abc: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
    let mut text = String::new();
    let mut rows = vec![];
    for s in &out {
        text.push_str(&format!("segment {} ({} mi), ohms\n", s.segment, sig6(s.length_miles)));
        for (name, m, labels) in [
            ("z_prim", &s.z_prim, &s.labels),
            ("z_earth", &s.z_earth, &s.labels),
            ("z_mut", &s.z_mut, &s.labels),
            ("z_abc", &s.z_abc, &abc),
        ] {
            text.push_str(&matrix_text(name, labels, m));
            text.push('\n');
            for i in 0..m.dim() {
                for j in 0..m.dim() {
                    rows.push(vec![
                        s.segment.clone(),
                        name.to_string(),
                        labels[i].clone(),
                        labels[j].clone(),
                        sig6(m[(i, j)].re),
                        sig6(m[(i, j)].im),
                    ]);
                }
            }
        }
    }
    let csv = csv_string(&["segment", "matrix", "row", "col", "re_ohm", "im_ohm"], rows);
    Ok(Output {
        stem: "impedance".into(),
        stdout: text,
        result: json!({ "split_reference": a.split_reference, "segments": out }),
        files: vec![OutFile::new("impedance.csv", csv)],
        inputs: vec![fr],
        instances: vec![],
        strategy: None,
    })
}

fn voltage_rows(r: &PowerFlowResult) -> Vec<[String; 5]> {
    let vb = r.phasors.base_voltage_v;
    r.phasors
        .node_phases()
        .into_iter()
        .map(|n| {
            let v = r.phasors.voltage(&n.bus, n.phase).unwrap();
            [
                n.bus.clone(),
                n.phase.to_string(),
                sig6(v.norm()),
                sig6(v.arg().to_degrees()),
                sig6(v.norm() / vb),
            ]
        })
        .collect()
}

fn violations_text(rep: &ViolationReport) -> String {
    if rep.is_empty() {
        return "no voltage violations\n".into();
    }
    let rows: Vec<Vec<String>> = rep
        .violations
        .iter()
        .map(|v| {
            vec![
                v.node.to_string(),
                format!("{:?}", v.kind).to_lowercase(),
                sig6(v.v_pu),
                sig6(v.excess_pu),
            ]
        })
        .collect();
    format!(
        "{} violations (A {}, B {}, C {})\n{}",
        rep.len(),
        rep.counts.a,
        rep.counts.b,
        rep.counts.c,
        table::render(&["node", "kind", "v_pu", "excess_pu"], &rows)
    )
}

fn powerflow(a: &PowerflowArgs) -> Result<Output, CliError> {
    let l = load(&a.input)?;
    let method = match a.method {
        MethodArg::Auto => default_method(&l.feeder),
        MethodArg::TwoBus => Method::TwoBus,
        MethodArg::Radial => Method::Radial,
    };
    let r = solve_with(&l.feeder, &a.solver.config(), method)?;
    let rep = check_violations(&r, &a.limits)?;
    let balance = source_power_balance(&r);
    let src = r.total_source_power();
    let rows = voltage_rows(&r);

    let mut text = format!(
        "{}: {} solve, {} iterations, residual {} p.u.\n",
        l.feeder.name,
        to_value(&r.method).as_str().unwrap_or_default(),
        r.iterations,
        sig6(r.residual_pu)
    );
    let human: Vec<Vec<String>> = rows.iter().map(|r| r.to_vec()).collect();
    text.push_str(&table::render(&["bus", "phase", "|V| (V)", "angle (deg)", "|V| (p.u.)"], &human));
    text.push_str(&format!(
        "source {} kW {} kVAr, losses {} kW {} kVAr, balance mismatch {} kW {} kVAr\n",
        sig6(src.p_kw),
        sig6(src.q_kvar),
        sig6(r.losses.p_kw),
        sig6(r.losses.q_kvar),
        sig6(balance.p_kw),
        sig6(balance.q_kvar)
    ));
    text.push_str(&format!("limits {}-{} p.u.: ", sig6(a.limits.v_min), sig6(a.limits.v_max)));
    text.push_str(&violations_text(&rep));

    let stem = l.stem("powerflow");
    let csv = csv_string(&["bus", "phase", "v_mag_v", "v_angle_deg", "v_pu"], rows);
    Ok(Output {
        files: vec![OutFile::new(format!("{stem}.csv"), csv)],
        stem,
        stdout: text,
        result: json!({ "power_flow": r, "violations": rep, "balance": balance }),
        instances: l.instances(),
        inputs: l.inputs,
        strategy: None,
    })
}

fn sensitivity(a: &SensitivityArgs) -> Result<Output, CliError> {
    let l = load(&a.input)?;
    let nodes = (!a.nodes.is_empty()).then_some(a.nodes.as_slice());
    let pvs = (!a.pvs.is_empty()).then_some(a.pvs.as_slice());
    let sm = build_vqsm(&l.feeder, nodes, pvs, a.delta_q, &a.solver.config(), l.label())?;
    let csv = sm.to_csv();
    let stem = l.stem("sensitivity");
    Ok(Output {
        files: vec![OutFile::new(format!("{stem}.csv"), csv.clone())],
        stem,
        stdout: csv,
        result: to_value(&sm),
        instances: l.instances(),
        inputs: l.inputs,
        strategy: None,
    })
}

fn decomposition(a: &DecomposeArgs) -> Result<Output, CliError> {
    let (base, fr) = inputs::feeder(&a.feeder)?;
    let mut moves = vec![];
    for p in &a.perturb {
        let pv = base
            .pv(&p.pv)
            .ok_or_else(|| CliError::new("invalid_feeder", format!("unknown PV '{}'", p.pv)))?;
        moves.push((p.pv.as_str(), pv.q_kvar + p.delta_kvar));
    }
    let perturbed = base.with_pv_setpoints(moves)?;
    let (d, r0, r1) = decompose_delta(&base, &perturbed, &a.solver.config(), a.split_reference)?;
    let rep = phasor_report(&d, &r0, &r1)?;
    let text = serde_json::to_string_pretty(&rep).expect("report serializes") + "\n";
    Ok(Output {
        stem: "decompose".into(),
        stdout: text,
        result: json!({ "report": rep, "decomposition": d }),
        files: vec![OutFile::new("decompose-phasors.csv", rep.endpoints_csv())],
        inputs: vec![fr],
        instances: vec![],
        strategy: None,
    })
}

fn plan_text(plan: &ControlPlan) -> String {
    let mut text = format!(
        "status {}, {} rounds, total |q| {} kVAr\n",
        to_value(&plan.status).as_str().unwrap_or_default(),
        plan.iterations,
        sig6(plan.total_q_kvar)
    );
    if !plan.actions.is_empty() {
        let rows: Vec<Vec<String>> = plan
            .actions
            .iter()
            .map(|a| vec![a.pv.clone(), a.phase.to_string(), sig6(a.q_set_kvar)])
            .collect();
        text.push_str(&table::render(&["pv", "phase", "q_set_kvar (+absorb)"], &rows));
    }
    if !plan.infeasible_cells.is_empty() {
        text.push_str(&format!("linear model infeasible in: {}\n", plan.infeasible_cells.join(", ")));
    }
    text.push_str("after control: ");
    text.push_str(&violations_text(&plan.residual));
    text
}

fn actions_csv(plan: &ControlPlan) -> String {
    csv_string(
        &["pv", "phase", "q_set_kvar"],
        plan.actions
            .iter()
            .map(|a| vec![a.pv.clone(), a.phase.to_string(), sig6(a.q_set_kvar)]),
    )
}

fn control(a: &ControlArgs) -> Result<Output, CliError> {
    let l = load(&a.input)?;
    let opts = a.control.options();
    let sm = |f: &Feeder| build_vqsm(f, None, None, opts.delta_q_kvar, &opts.convergence, l.label());
    let plan = match a.strategy {
        StrategyArg::Greedy => prioritized_q_intervention(&l.feeder, &sm(&l.feeder)?, &opts)?,
        StrategyArg::LpFull => lp_min_q(&l.feeder, &sm(&l.feeder)?, PartitionScheme::Full, &opts)?,
        StrategyArg::LpPerphase => lp_min_q(&l.feeder, &sm(&l.feeder)?, PartitionScheme::PerPhase, &opts)?,
        StrategyArg::Iterative => iterative_control(&l.feeder, a.partition, &opts, l.label())?,
    };
    let strategy = match a.strategy {
        StrategyArg::Greedy => "greedy".to_string(),
        StrategyArg::LpFull => "lp-full".to_string(),
        StrategyArg::LpPerphase => "lp-perphase".to_string(),
        StrategyArg::Iterative => format!("iterative/{}", to_value(&a.partition).as_str().unwrap_or_default()),
    };
    let stem = l.stem("control");
    Ok(Output {
        files: vec![
            OutFile::new(format!("{stem}-actions.csv"), actions_csv(&plan)),
            OutFile::new(format!("{stem}-trace.csv"), trace_csv(&plan.trace)),
        ],
        stem,
        stdout: format!("{}: {strategy}\n{}", l.feeder.name, plan_text(&plan)),
        result: to_value(&plan),
        instances: l.instances(),
        inputs: l.inputs,
        strategy: Some(strategy),
    })
}

fn compare(a: &CompareArgs) -> Result<Output, CliError> {
    let (f, fr) = inputs::feeder(&a.feeder)?;
    let (prof, pr) = inputs::profile(&a.profile)?;
    let instances: Vec<String> = match &a.instances {
        None => prof.labels.clone(),
        Some(s) => s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect(),
    };
    let c = compare_controllers(&f, &prof, &instances, &a.control.options())?;
    let summary = c.to_csv();
    let mut files = vec![OutFile::new("compare-summary.csv", summary.clone())];
    for inst in &c.instances {
        files.push(OutFile::new(format!("compare-{}.csv", slug(&inst.instance)), inst.to_csv()));
    }
    Ok(Output {
        stem: "compare".into(),
        stdout: summary,
        result: to_value(&c),
        files,
        inputs: vec![fr, pr],
        instances,
        strategy: Some("upf,per_phase,full".into()),
    })
}

fn addition(a: &AdditionArgs) -> Result<Output, CliError> {
    let (f, fr) = inputs::feeder(&a.feeder)?;
    let mut input_refs = vec![fr];
    let pool = match &a.pool {
        Some(p) => {
            let (pool, r) = inputs::pool(p)?;
            input_refs.push(r);
            pool
        }
        None => f.pvs.clone(),
    };
    let study = pv_addition_study(&f, &pool, a.batch, &a.control.options())?;
    let csv = study.to_csv();
    let mut text = csv.clone();
    match study.hosting_capacity() {
        Some(n) => text.push_str(&format!("# hosting capacity: {n} PVs without violations\n")),
        None => text.push_str("# hosting capacity: no step without violations\n"),
    }
    if let Some(why) = &study.aborted {
        text.push_str(&format!("# aborted at {why}\n"));
    }
    Ok(Output {
        stem: "addition-study".into(),
        stdout: text,
        result: json!({ "study": study, "hosting_capacity_pvs": study.hosting_capacity() }),
        files: vec![OutFile::new("addition-study.csv", csv)],
        inputs: input_refs,
        instances: vec![],
        strategy: Some("greedy".into()),
    })
}
