mod common;

use crossphase::bundled;
use crossphase::control::{
    apply_plan, compare_controllers, iterative_control, lp_min_q, prioritized_q_intervention, pv_addition_study,
    trace_csv, verify, AdditionStage, ControlOptions, PartitionScheme, PlanStatus, Strategy,
};
use crossphase::netmodel::{apply_instance, Connection, Feeder, Phase};
use crossphase::sensitivity::build_vqsm;
use crossphase::solver::ConvergenceConfig;

use common::{chain, load, pv};

fn cfg() -> ConvergenceConfig {
    ConvergenceConfig::default()
}

/// Phase-C PVs at the far end of a lightly loaded chain.
fn c_heavy() -> (Feeder, Vec<crossphase::PvSpec>) {
    let mut f = chain(8, 0.1);
    f.base_voltage_kv_ll = Some(4.16);
    f.source_voltage_kv_ll = 4.16 * 1.03;
    for i in 1..8 {
        f.loads.push(load(&format!("l{i}"), &format!("b{i:02}"), Connection::ABC, 30.0));
    }
    let pool = vec![
        pv("pvc5", "b05", Phase::C, 200.0, 250.0),
        pv("pvc6", "b06", Phase::C, 200.0, 250.0),
        pv("pvc7", "b07", Phase::C, 200.0, 250.0),
    ];
    (f, pool)
}

#[test]
fn quiet_feeder_needs_no_action() {
    let f = bundled::twobus().with_pv_setpoints([("pvA", 0.0)]).unwrap();
    let mut f = f;
    for l in &mut f.loads {
        l.p_kw = 10.0;
    }
    let opts = ControlOptions::default();
    assert!(verify(&f, &opts).unwrap().1.is_empty());
    let sm = build_vqsm(&f, None, None, 10.0, &cfg(), "t").unwrap();
    for plan in [
        prioritized_q_intervention(&f, &sm, &opts).unwrap(),
        lp_min_q(&f, &sm, PartitionScheme::Full, &opts).unwrap(),
        iterative_control(&f, PartitionScheme::PerPhase, &opts, "t").unwrap(),
    ] {
        assert!(plan.actions.is_empty());
        assert_eq!(plan.iterations, 0);
        assert_eq!(plan.status, PlanStatus::Solved);
        assert_eq!(plan.total_q_kvar, 0.0);
    }
}

#[test]
fn empty_pool_gives_single_upf_row() {
    let f = bundled::coupled30();
    let study = pv_addition_study(&f, &[], 4, &ControlOptions::default()).unwrap();
    assert_eq!(study.steps.len(), 1);
    assert_eq!(study.steps[0].rows.len(), 1);
    assert_eq!(study.steps[0].rows[0].stage, AdditionStage::Upf);
}

#[test]
fn single_phase_pool_acts_in_that_phase() {
    let (f, pool) = c_heavy();
    let opts = ControlOptions::default();
    let study = pv_addition_study(&f, &pool, 1, &opts).unwrap();
    assert!(study.aborted.is_none());
    let mut violated = false;
    for step in &study.steps {
        for r in &step.rows {
            assert_eq!(r.violations_a + r.violations_b, 0, "{r:?}");
            violated |= r.violations_c > 0;
        }
        if let Some(plan) = &step.plan {
            assert!(plan.actions.iter().all(|a| a.phase == Phase::C));
            assert!(plan.residual.is_empty());
        }
    }
    assert!(violated);

    // no grid allocation on the pool beats the greedy total by more than a step
    let last = study.steps.last().unwrap();
    let greedy = last.plan.as_ref().unwrap().total_q_kvar;
    let full = f.with_pv_setpoints([]).unwrap();
    let mut g = full.clone();
    g.pvs = pool.clone();
    let grid: Vec<f64> = (0..=12).map(|k| 10.0 * k as f64).collect();
    let mut best = f64::INFINITY;
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                if a + b + c >= best {
                    continue;
                }
                let h = g.with_pv_setpoints([("pvc5", a), ("pvc6", b), ("pvc7", c)]).unwrap();
                if verify(&h, &opts).unwrap().1.is_empty() {
                    best = a + b + c;
                }
            }
        }
    }
    assert!(best.is_finite());
    assert!(greedy <= best + opts.step_q_kvar, "greedy {greedy}, grid optimum {best}");
}

#[test]
fn hosting_capacity_and_greedy_progress() {
    let f = bundled::coupled30();
    let study = pv_addition_study(&f, &f.pvs, 4, &ControlOptions::default()).unwrap();
    let hc = study.hosting_capacity().unwrap();
    let last_clean = study
        .steps
        .iter()
        .filter(|s| s.rows.last().unwrap().violations == 0)
        .last()
        .unwrap();
    assert_eq!(hc, last_clean.rows.last().unwrap().pv_count);
    for s in &study.steps {
        if let Some(plan) = &s.plan {
            let ex: Vec<f64> = plan.trace.iter().map(|t| t.worst_excess_pu).collect();
            if plan.status != PlanStatus::Oscillation {
                assert!(ex.windows(2).all(|w| w[1] <= w[0] + 1e-12), "step {}: {ex:?}", s.step);
            }
        }
    }
    let csv = study.to_csv();
    assert!(csv.starts_with("step,stage,pv_count,violations,violations_A,violations_B,violations_C"));
}

#[test]
fn recruitment_on_coupled_feeder() {
    let f = bundled::coupled30();
    let study = pv_addition_study(&f, &f.pvs, 4, &ControlOptions::default()).unwrap();
    let recruited = study.steps.iter().filter_map(|s| s.plan.as_ref()).any(|p| {
        p.trace[0].violated_phases == vec![Phase::B]
            && p.residual.is_empty()
            && p.emerging_phases().contains(&Phase::A)
            && p.acts_on_phase(Phase::A)
    });
    assert!(recruited);
}

#[test]
fn hipv_comparison_ordering() {
    let f = bundled::hipv();
    let day = bundled::day();
    let opts = ControlOptions::default();
    let c = compare_controllers(&f, &day, &day.labels, &opts).unwrap();
    assert_eq!(c.instances.len(), 24);
    for inst in &c.instances {
        let row = |s| c.row(&inst.instance, s).unwrap();
        let (u, p, fl) = (row(Strategy::Upf), row(Strategy::PerPhase), row(Strategy::Full));
        assert!(u.error.is_none() && p.error.is_none() && fl.error.is_none());
        assert_eq!(u.total_q_kvar, 0.0);
        assert!(u.violations >= p.violations, "{}", inst.instance);
        assert!(p.violations >= fl.violations, "{}", inst.instance);
        assert_eq!(fl.violations, 0);
        if u.violations == 0 {
            assert_eq!(p.total_q_kvar + fl.total_q_kvar, 0.0);
            assert!(inst.plans.values().all(|pl| pl.actions.is_empty()));
        } else {
            assert!(fl.total_q_kvar > 0.0);
        }
    }
    let csv = c.to_csv();
    assert!(csv.starts_with("instance,strategy,violations,max_v_pu,min_v_pu,total_q_kvar,rounds,status,error"));
    assert_eq!(csv.lines().count(), 1 + 72);
}

#[test]
fn full_mode_clears_in_one_linear_step() {
    let f = bundled::hipv();
    let day = bundled::day();
    let g = apply_instance(&f, &day, "h12").unwrap();
    let plan = iterative_control(&g, PartitionScheme::Full, &ControlOptions::default(), "h12").unwrap();
    assert_eq!(plan.status, PlanStatus::Solved);
    assert_eq!(plan.iterations, 1);
    let again = verify(&apply_plan(&g, &plan).unwrap(), &ControlOptions::default()).unwrap().1;
    assert_eq!(again, plan.residual);
    let per = iterative_control(&g, PartitionScheme::PerPhase, &ControlOptions::default(), "h12").unwrap();
    assert!(!per.residual.is_empty());
    assert!(per.residual.len() >= plan.residual.len());
    assert!(trace_csv(&per.trace).starts_with("round,"));
}

#[test]
fn bad_options_are_rejected() {
    let f = bundled::twobus();
    let sm = build_vqsm(&f, None, None, 10.0, &cfg(), "t").unwrap();
    let mut opts = ControlOptions::default();
    opts.step_q_kvar = 0.0;
    assert!(prioritized_q_intervention(&f, &sm, &opts).is_err());
    let opts = ControlOptions::default();
    assert!(pv_addition_study(&f, &f.pvs, 0, &opts).is_err());
}
