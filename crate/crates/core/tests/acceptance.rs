//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use crossphase::bundled;
use crossphase::carson::SplitReference;
use crossphase::control::{
    compare_controllers, lp_min_q, pv_addition_study, ControlOptions, PartitionScheme, Strategy,
};
use crossphase::netmodel::{apply_instance, Feeder, NodePhase, Phase, PvSpec};
use crossphase::sensitivity::{build_vqsm, decompose_delta, phasor_report};
use crossphase::solver::{solve, solve_radial, solve_two_bus, source_power_balance, ConvergenceConfig};

type Outcome = Result<String, String>;

fn cfg() -> ConvergenceConfig {
    ConvergenceConfig::default()
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    ((x - target) / target).abs() <= rel
}

fn n4(feeder: &Feeder) -> [f64; 3] {
    let r = solve_two_bus(feeder, &cfg()).expect("two-bus solve");
    Phase::ALL.map(|p| r.phasors.voltage("N4", p).unwrap().norm())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn base_voltages() -> Outcome {
    let f = bundled::twobus();
    let t = Instant::now();
    let v = n4(&f);
    let dt = t.elapsed();
    let target = [2103.0, 2206.0, 2150.0];
    let ok = v.iter().zip(target).all(|(&a, b)| within(a, b, 0.01)) && dt < Duration::from_secs(1);
    check(ok, format!("|V_N4| = ({:.1}, {:.1}, {:.1}) V in {dt:?}", v[0], v[1], v[2]))
}

fn perturbed() -> Feeder {
    bundled::twobus().with_pv_setpoints([("pvA", 100.0)]).unwrap()
}

fn perturbed_voltages() -> Outcome {
    let v0 = n4(&bundled::twobus());
    let v1 = n4(&perturbed());
    let target = [2068.0, 2217.0, 2160.0];
    let diff_target: [f64; 3] = [-35.3, 11.6, 10.0];
    let d: Vec<f64> = v1.iter().zip(v0).map(|(a, b)| a - b).collect();
    let ok = v1.iter().zip(target).all(|(&a, b)| within(a, b, 0.01))
        && d.iter().zip(diff_target).all(|(&x, t): (&f64, f64)| x.signum() == t.signum() && within(x.abs(), t.abs(), 0.15));
    check(
        ok,
        format!(
            "|V_N4| = ({:.1}, {:.1}, {:.1}) V, differences ({:+.1}, {:+.1}, {:+.1}) V",
            v1[0], v1[1], v1[2], d[0], d[1], d[2]
        ),
    )
}

fn decomposition() -> Outcome {
    let (d, r0, r1) =
        decompose_delta(&bundled::twobus(), &perturbed(), &cfg(), SplitReference::default()).map_err(|e| e.to_string())?;
    let rep = phasor_report(&d, &r0, &r1).map_err(|e| e.to_string())?;
    let e = d.dv_earth;
    let spread = (e[0] - e[1]).norm().max((e[0] - e[2]).norm());
    let earth_mag = e[0].norm();
    let earth_ang = e[0].arg().to_degrees();
    let mut ok = spread <= 1e-9 && within(earth_mag, 19.2, 0.15) && earth_ang.abs() > 170.0;
    let targets = [(16.4, 165.0), (2.1, -57.0), (3.4, 57.0)];
    let mut parts = vec![];
    for (k, (mag, ang)) in targets.into_iter().enumerate() {
        let m = d.dv_mut[k];
        let a = m.arg().to_degrees();
        ok &= within(m.norm(), mag, 0.20) && a.signum() == f64::signum(ang) && (a - ang).abs() < 15.0;
        parts.push(format!("{:.2}∠{:.1}°", m.norm(), a));
    }
    ok &= rep.closure_error_v <= 1e-6;
    check(
        ok,
        format!(
            "dv_earth {earth_mag:.2} V ∠{earth_ang:.1}° (phase spread {spread:.1e} V), dv_mut [{}]",
            parts.join(", ")
        ),
    )
}

fn imbalance() -> Outcome {
    let v = n4(&bundled::twobus());
    let span = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    check(span >= 40.0, format!("balanced load, magnitude span {span:.1} V"))
}

fn sm_column(feeder: &Feeder, dq: f64) -> Result<[f64; 3], String> {
    let rows: Vec<NodePhase> = Phase::ALL.iter().map(|&p| NodePhase::new("N4", p)).collect();
    let sm = build_vqsm(feeder, Some(&rows), None, dq, &cfg(), "base").map_err(|e| e.to_string())?;
    Ok([sm.values[0][0], sm.values[1][0], sm.values[2][0]])
}

fn sign_structure() -> Outcome {
    let f = bundled::twobus();
    let mut ok = true;
    let mut parts = vec![];
    for dq in [10.0, 50.0, 100.0, 200.0] {
        let s = sm_column(&f, dq)?;
        ok &= s[0] < 0.0 && s[1] > 0.0 && s[2] > 0.0;
        parts.push(format!("{dq}: ({:+.3}, {:+.3}, {:+.3})", s[0], s[1], s[2]));
    }
    check(ok, format!("sm V/kVAr {}", parts.join("; ")))
}

fn linearity() -> Outcome {
    let f = bundled::twobus();
    let a = sm_column(&f, 50.0)?;
    let b = sm_column(&f, 100.0)?;
    let worst = (0..3).map(|k| ((a[k] - b[k]) / b[k]).abs()).fold(0.0, f64::max);
    check(worst < 0.05, format!("max relative change {:.2}%", worst * 100.0))
}

fn conservation() -> Outcome {
    let mut cases: Vec<(String, Feeder)> = vec![
        ("twobus".into(), bundled::twobus()),
        ("twobus+100".into(), perturbed()),
        ("coupled30".into(), bundled::coupled30()),
    ];
    let hipv = bundled::hipv();
    let day = bundled::day();
    for l in &day.labels {
        cases.push((format!("hipv/{l}"), apply_instance(&hipv, &day, l).map_err(|e| e.to_string())?));
    }
    let mut worst = 0.0f64;
    for (name, f) in &cases {
        let r = solve(f, &cfg()).map_err(|e| format!("{name}: {e}"))?;
        let m = source_power_balance(&r);
        let load = r.scheduled.load.p_kw.abs().max(1e-9);
        let rel = m.p_kw.abs().max(m.q_kvar.abs()) / load;
        if load > 1e-6 {
            worst = worst.max(rel);
        }
    }
    check(worst < 1e-6, format!("{} cases, worst mismatch {worst:.2e} x total load", cases.len()))
}

fn comparison() -> Outcome {
    let f = bundled::hipv();
    let day = bundled::day();
    let t = Instant::now();
    let c = compare_controllers(&f, &day, &day.labels, &ControlOptions::default()).map_err(|e| e.to_string())?;
    let dt = t.elapsed();
    let rows = |s: Strategy| c.rows().filter(move |r| r.strategy == s);
    let upf_bad = rows(Strategy::Upf).filter(|r| r.violations > 0).count();
    let upf_max = rows(Strategy::Upf).map(|r| r.max_v_pu).fold(0.0, f64::max);
    let pp_bad = rows(Strategy::PerPhase).filter(|r| r.violations > 0).count();
    let full_ok = rows(Strategy::Full).all(|r| r.error.is_none() && r.violations == 0 && r.rounds <= 5);
    let full_rounds = rows(Strategy::Full).map(|r| r.rounds).max().unwrap_or(0);
    let ok = upf_bad >= 1 && upf_max > 1.05 && pp_bad >= 1 && full_ok && dt < Duration::from_secs(60);
    check(
        ok,
        format!(
            "{} instances: UPF violating in {upf_bad} (max {upf_max:.4} p.u.), per-phase residual in {pp_bad}, \
             full clear everywhere: {full_ok} (max {full_rounds} rounds), {dt:.1?}",
            day.labels.len()
        ),
    )
}

fn recruitment() -> Outcome {
    let f = bundled::coupled30();
    let study = pv_addition_study(&f, &f.pvs, 4, &ControlOptions::default()).map_err(|e| e.to_string())?;
    if let Some(a) = &study.aborted {
        return Err(format!("study aborted: {a}"));
    }
    for s in &study.steps {
        let Some(plan) = &s.plan else { continue };
        for p in plan.emerging_phases() {
            if plan.residual.is_empty() && plan.acts_on_phase(p) {
                let n = plan.actions.iter().filter(|a| a.phase == p).count();
                return Ok(format!(
                    "step {}: phase {p} violations appeared while fixing {:?}; final plan clear with {n} phase-{p} action(s)",
                    s.step, plan.trace[0].violated_phases
                ));
            }
        }
    }
    Err("no step showed cross-phase recruitment".into())
}

fn oracle_equivalence() -> Outcome {
    let f = bundled::twobus();
    let a = solve_two_bus(&f, &cfg()).map_err(|e| e.to_string())?;
    let b = solve_radial(&f, &cfg()).map_err(|e| e.to_string())?;
    let worst = Phase::ALL
        .iter()
        .map(|&p| {
            let (x, y) = (a.phasors.voltage("N4", p).unwrap(), b.phasors.voltage("N4", p).unwrap());
            (x - y).norm() / x.norm()
        })
        .fold(0.0, f64::max);

    // reverse flow on phase B puts N4.B above the source; the limit sits just below it
    let mut g = bundled::twobus();
    g.loads.retain(|l| l.id != "loadB");
    g.pvs = vec![PvSpec {
        id: "pvB".into(),
        bus: "N4".into(),
        phase: Phase::B,
        p_kw: 600.0,
        s_rating_kva: 700.0,
        q_kvar: 0.0,
    }];
    let node = NodePhase::new("N4", Phase::B);
    let vb = g.base_voltage_v();
    let v_b = solve(&g, &cfg()).unwrap().phasors.voltage("N4", Phase::B).unwrap().norm();
    let overshoot = 7.06;
    let mut opts = ControlOptions::default();
    opts.limits.v_min = 0.5;
    opts.limits.v_max = (v_b - overshoot) / vb;
    let sm = build_vqsm(&g, None, None, 10.0, &cfg(), "base").map_err(|e| e.to_string())?;
    let s = sm.get(&node, "pvB").unwrap();
    let plan = lp_min_q(&g, &sm, PartitionScheme::Full, &opts).map_err(|e| e.to_string())?;
    let q = plan.actions.first().map_or(0.0, |a| a.q_set_kvar);
    let closed = overshoot / s.abs();
    let ok = worst <= 0.002 && (q - closed).abs() <= opts.step_q_kvar;
    check(
        ok,
        format!(
            "radial vs two-bus max deviation {:.2e}; LP q = {q:.2} kVAr vs overshoot/|sm| = {closed:.2} kVAr",
            worst
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("two-bus base voltages", base_voltages),
        ("two-bus +100 kVAr voltages and differences", perturbed_voltages),
        ("earth/mutual decomposition", decomposition),
        ("imbalance from balanced load", imbalance),
        ("sensitivity sign structure", sign_structure),
        ("sensitivity linearity", linearity),
        ("power conservation", conservation),
        ("controller comparison pattern", comparison),
        ("cross-phase recruitment", recruitment),
        ("oracle equivalence", oracle_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let out = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match out {
            Ok(d) => println!("PASS [{:>2}] {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {d}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
