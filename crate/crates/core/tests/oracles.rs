//! Checks against independently computed reference values.

mod common;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::visit::Bfs;

use crossphase::bundled;
use crossphase::carson::{
    build_primitive, carson_mutual, carson_self, decompose, kron_reduce, segment_primitive, segment_wires,
    SplitReference,
};
use crossphase::control::{lp_min_q, prioritized_q_intervention, verify, ControlOptions, PartitionScheme};
use crossphase::netmodel::{validate_radial, Connection, ConductorSpec, Feeder, NeutralBonding, NodePhase, Phase};
use crossphase::sensitivity::{build_vqsm, decompose_delta, phasor_report, rank_pvs_for_node};
use crossphase::solver::{check_violations, solve, source_power_balance, ConvergenceConfig, LimitKind, VoltageLimits};
use crossphase::Complex64;

use common::{chain, load, pv, radial, regulator};

fn cfg() -> ConvergenceConfig {
    ConvergenceConfig::default()
}

fn conductor(r: f64, gmr: f64) -> ConductorSpec {
    ConductorSpec {
        name: "c".into(),
        gmr_ft: gmr,
        resistance_ohm_per_mile: r,
        ampacity_a: None,
    }
}

fn hand_self(r: f64, gmr: f64) -> Complex64 {
    Complex64::new(r + 0.09530, 0.12134 * ((1.0 / gmr).ln() + 7.93402))
}

fn hand_mutual(d: f64) -> Complex64 {
    Complex64::new(0.09530, 0.12134 * ((1.0 / d).ln() + 7.93402))
}

#[test]
fn carson_reference_values() {
    let z = carson_self(&conductor(0.306, 0.0244)).unwrap();
    assert_abs_diff_eq!(z.re, 0.4013, epsilon = 1e-4);
    assert_abs_diff_eq!(z.im, 1.4133, epsilon = 1e-4);
    let z = carson_self(&conductor(0.592, 0.00814)).unwrap();
    assert_abs_diff_eq!(z.re, 0.6873, epsilon = 1e-4);
    assert_abs_diff_eq!(z.im, 1.5465, epsilon = 1e-4);
    assert_abs_diff_eq!(carson_mutual(1.0).unwrap().im, 0.9627, epsilon = 1e-4);
    assert_abs_diff_eq!(carson_mutual(2.5).unwrap().im, 0.8515, epsilon = 1e-4);
    for d in [0.5, 1.0, 2.5, 4.27, 7.0, 50.0] {
        let m = carson_mutual(d).unwrap();
        assert_eq!(m.re, 0.09530);
        assert_abs_diff_eq!(m.im, hand_mutual(d).im, epsilon = 1e-12);
    }
}

#[test]
fn log_cancellation_zeroes_reactance() {
    let g = 7.93402f64.exp();
    assert_abs_diff_eq!(carson_self(&conductor(0.3, g)).unwrap().im, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(carson_mutual(g).unwrap().im, 0.0, epsilon = 1e-12);
}

#[test]
fn two_bus_primitive_matches_formula_elementwise() {
    let f = bundled::twobus();
    let seg = &f.segments[0];
    let wires = segment_wires(&f, seg).unwrap();
    let z = segment_primitive(&f, seg).unwrap();
    assert_eq!(z.z.dim(), 4);
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j {
                let c = &wires[i].conductor;
                hand_self(c.resistance_ohm_per_mile, c.gmr_ft)
            } else {
                let d = (wires[i].x_ft - wires[j].x_ft).hypot(wires[i].y_ft - wires[j].y_ft);
                hand_mutual(d)
            } * seg.length_miles;
            assert!((z.z[(i, j)] - want).norm() < 1e-12, "({i},{j})");
        }
    }
    // A-B is 2.5 ft apart, B-C 4.5 ft
    assert!(z.z[(0, 1)].im > z.z[(1, 2)].im);
}

#[test]
fn decomposition_off_diagonals_are_log_spacing() {
    let f = bundled::twobus();
    let seg = &f.segments[0];
    let wires = segment_wires(&f, seg).unwrap();
    let z = segment_primitive(&f, seg).unwrap();
    let d = decompose(&z, SplitReference::Foot);
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                let dist = (wires[i].x_ft - wires[j].x_ft).hypot(wires[i].y_ft - wires[j].y_ft);
                let want = Complex64::new(0.0, 0.12134 * (1.0 / dist).ln() * seg.length_miles);
                assert!((d.z_mut[(i, j)] - want).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn kron_matches_dense_algebra() {
    let f = bundled::twobus();
    let z = segment_primitive(&f, &f.segments[0]).unwrap();
    let full = DMatrix::from_fn(4, 4, |i, j| z.z[(i, j)]);
    let zpp = full.view((0, 0), (3, 3)).into_owned();
    let zpn = full.view((0, 3), (3, 1)).into_owned();
    let znp = full.view((3, 0), (1, 3)).into_owned();
    let znn_inv = full.view((3, 3), (1, 1)).into_owned().try_inverse().unwrap();
    let want = zpp - zpn * znn_inv * znp;
    let got = kron_reduce(&z).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((got.z[(i, j)] - want[(i, j)]).norm() < 1e-12);
        }
    }
}

#[test]
fn kron_of_decoupled_neutral_is_phase_block() {
    let f = bundled::twobus();
    let mut z = segment_primitive(&f, &f.segments[0]).unwrap();
    for k in 0..3 {
        z.z[(k, 3)] = Complex64::new(0.0, 0.0);
        z.z[(3, k)] = Complex64::new(0.0, 0.0);
    }
    let r = kron_reduce(&z).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(r.z[(i, j)], z.z[(i, j)]);
        }
    }
}

#[test]
fn single_conductor_primitive() {
    let f = bundled::twobus();
    let w = segment_wires(&f, &f.segments[0]).unwrap();
    let z = build_primitive(0.3, &w[..1]).unwrap();
    assert_eq!(z.z.dim(), 1);
    assert_eq!(z.z[(0, 0)], carson_self(&w[0].conductor).unwrap() * 0.3);
}

#[test]
fn star_order_matches_graph_bfs() {
    let f = radial(
        "S",
        &[
            ("S", "x1", 0.1),
            ("x1", "x2", 0.1),
            ("S", "y1", 0.1),
            ("y1", "y2", 0.1),
            ("y2", "y3", 0.1),
            ("S", "z1", 0.1),
            ("z1", "z2", 0.1),
        ],
    );
    let order = validate_radial(&f).unwrap();

    let mut g = UnGraph::<&str, ()>::new_undirected();
    let nodes: Vec<NodeIndex> = f.buses.iter().map(|b| g.add_node(b.id.as_str())).collect();
    for s in &f.segments {
        g.add_edge(nodes[f.bus_index(&s.from_bus).unwrap()], nodes[f.bus_index(&s.to_bus).unwrap()], ());
    }
    let mut depth = vec![usize::MAX; nodes.len()];
    let mut parent = vec![None; nodes.len()];
    depth[0] = 0;
    let mut bfs = Bfs::new(&g, nodes[0]);
    while let Some(n) = bfs.next(&g) {
        for m in g.neighbors(n) {
            if depth[m.index()] == usize::MAX {
                depth[m.index()] = depth[n.index()] + 1;
                parent[m.index()] = Some(n.index());
            }
        }
    }

    assert_eq!(order.edges.len(), f.segments.len());
    let ids = order.segment_ids(&f);
    assert_eq!(&ids[..3], &["s01", "s03", "s06"]);
    let mut last = 0;
    for e in &order.edges {
        assert_eq!(parent[e.downstream], Some(e.upstream));
        assert!(depth[e.downstream] >= last);
        last = depth[e.downstream];
    }
}

#[test]
fn regulator_scales_downstream_phase() {
    let mut f = chain(6, 0.1);
    for c in [Connection::A, Connection::B, Connection::C] {
        f.loads.push(load(&format!("l{c:?}"), "b05", c, 5.0));
    }
    let run = |tap: f64| {
        let mut g = f.clone();
        g.regulators = vec![regulator("r", "s01", Phase::B, tap)];
        solve(&g, &cfg()).unwrap()
    };
    let (a, b) = (run(1.0), run(1.05));
    for bus in ["b01", "b03", "b05"] {
        let ratio = b.phasors.voltage(bus, Phase::B).unwrap().norm() / a.phasors.voltage(bus, Phase::B).unwrap().norm();
        assert!((1.04..=1.06).contains(&ratio), "{bus}: {ratio}");
    }
}

#[test]
fn table_base_phase_a_under_voltage() {
    let r = solve(&bundled::twobus(), &cfg()).unwrap();
    let rep = check_violations(&r, &VoltageLimits::default()).unwrap();
    let a = rep.violations.iter().find(|v| v.node == NodePhase::new("N4", Phase::A)).unwrap();
    assert_eq!(a.kind, LimitKind::Under);
    let direct = r.phasors.voltage("N4", Phase::A).unwrap().norm() / 2401.777;
    assert_abs_diff_eq!(a.v_pu, direct, epsilon = 1e-6);
    assert_abs_diff_eq!(a.v_pu, 0.8756, epsilon = 1e-3);
    assert_eq!(r.phasors.base_voltage_v, 4160.0 / 3f64.sqrt());
}

#[test]
fn table_base_power_balance() {
    let r = solve(&bundled::twobus(), &cfg()).unwrap();
    let m = source_power_balance(&r);
    assert!(m.p_kw.abs() < 0.1 && m.q_kvar.abs() < 0.1, "{m:?}");
}

#[test]
fn perturbed_phase_b_grows_with_small_angle_change() {
    let base = bundled::twobus();
    let pert = base.with_pv_setpoints([("pvA", 100.0)]).unwrap();
    let (d, r0, r1) = decompose_delta(&base, &pert, &cfg(), SplitReference::default()).unwrap();
    let rep = phasor_report(&d, &r0, &r1).unwrap();
    let b = &rep.phases[1];
    assert!(b.v1.magnitude > b.v0.magnitude);
    assert!((b.v1.angle_deg - b.v0.angle_deg).abs() < 1.0);
}

/// Physically nearer PV on a lateral ranks below a farther one on the trunk.
#[test]
fn ranking_not_monotone_in_distance() {
    let mut edges: Vec<(String, String, f64)> =
        (1..15).map(|i| (format!("b{:02}", i - 1), format!("b{i:02}"), 0.1)).collect();
    edges.push(("b03".into(), "b15".into(), 0.05));
    for i in 16..20 {
        edges.push((format!("b{:02}", i - 1), format!("b{i:02}"), 0.05));
    }
    let refs: Vec<(&str, &str, f64)> = edges.iter().map(|(a, b, l)| (a.as_str(), b.as_str(), *l)).collect();
    let mut f = radial("b00", &refs);
    assert_eq!(f.buses.len(), 20);
    f.regulators = vec![regulator("r", "s04", Phase::A, 1.03)];
    for i in 1..20 {
        f.loads.push(load(&format!("l{i}"), &format!("b{i:02}"), Connection::ABC, 15.0));
    }
    f.pvs = vec![pv("pv_lateral", "b15", Phase::A, 0.0, 100.0), pv("pv_trunk", "b14", Phase::A, 0.0, 100.0)];

    let node = NodePhase::new("b08", Phase::A);
    let sm = build_vqsm(&f, Some(&[node.clone()]), None, 20.0, &cfg(), "t").unwrap();
    let ranked = rank_pvs_for_node(&sm, &node).unwrap();

    let mut g = UnGraph::<(), f64>::new_undirected();
    let nodes: Vec<NodeIndex> = f.buses.iter().map(|_| g.add_node(())).collect();
    for s in &f.segments {
        g.add_edge(nodes[f.bus_index(&s.from_bus).unwrap()], nodes[f.bus_index(&s.to_bus).unwrap()], s.length_miles);
    }
    let dist = petgraph::algo::dijkstra(&g, nodes[f.bus_index("b08").unwrap()], None, |e| *e.weight());
    let d = |id: &str| dist[&nodes[f.bus_index(&f.pv(id).unwrap().bus).unwrap()]];

    let inversions = ranked
        .windows(2)
        .filter(|w| d(&w[0].0) > d(&w[1].0) + 1e-12)
        .count();
    assert!(inversions >= 1, "{ranked:?}");
}

/// A-phase over-voltage of 1% on the two-bus line, fixed by the phase-A PV.
fn over_voltage_twobus() -> Feeder {
    let mut f = bundled::twobus();
    f.neutral_bonding = NeutralBonding::BothEnds;
    f.base_voltage_kv_ll = Some(4.16);
    f.source_voltage_kv_ll = 4.16 * 1.03;
    f.loads = vec![load("lb", "N4", Connection::B, 100.0), load("lc", "N4", Connection::C, 400.0)];
    f.pvs = vec![pv("pvA", "N4", Phase::A, 0.0, 1500.0)];
    let target = 1.06;
    let va = |p: f64| {
        let g = Feeder {
            pvs: vec![pv("pvA", "N4", Phase::A, p, 1500.0)],
            ..f.clone()
        };
        solve(&g, &cfg()).unwrap().phasors.voltage_pu(&NodePhase::new("N4", Phase::A)).unwrap()
    };
    let (mut lo, mut hi) = (0.0, 1400.0);
    assert!(va(hi) > target);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if va(mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    f.pvs[0].p_kw = hi;
    f
}

#[test]
fn greedy_matches_brute_force_grid() {
    let f = over_voltage_twobus();
    let opts = ControlOptions::default();
    let (_, rep) = verify(&f, &opts).unwrap();
    assert_eq!(rep.phases().into_iter().collect::<Vec<_>>(), vec![Phase::A]);

    let sm = build_vqsm(&f, None, None, 10.0, &cfg(), "t").unwrap();
    let plan = prioritized_q_intervention(&f, &sm, &opts).unwrap();
    assert!(plan.residual.is_empty());
    assert!(plan.actions.iter().all(|a| a.pv == "pvA"));
    let q = plan.actions[0].q_set_kvar;

    let cap = f.pvs[0].q_capability_kvar();
    let brute = (0..)
        .map(|k| k as f64 * opts.step_q_kvar)
        .take_while(|&q| q <= cap)
        .find(|&q| verify(&f.with_pv_setpoints([("pvA", q)]).unwrap(), &opts).unwrap().1.is_empty())
        .unwrap();
    assert!((q - brute).abs() <= opts.step_q_kvar + 1e-9, "greedy {q}, grid {brute}");
}

#[test]
fn lp_single_pv_closed_form() {
    let f = over_voltage_twobus();
    let opts = ControlOptions::default();
    let node = NodePhase::new("N4", Phase::A);
    let sm = build_vqsm(&f, Some(&[node.clone()]), None, 10.0, &cfg(), "t").unwrap();
    let s = sm.get(&node, "pvA").unwrap();
    let r = solve(&f, &cfg()).unwrap();
    let vb = r.phasors.base_voltage_v;
    let overshoot = r.phasors.voltage("N4", Phase::A).unwrap().norm() - (opts.limits.v_max - opts.margin_pu) * vb;
    let plan = lp_min_q(&f, &sm, PartitionScheme::Full, &opts).unwrap();
    assert_eq!(plan.actions.len(), 1);
    assert_abs_diff_eq!(plan.actions[0].q_set_kvar, overshoot / s.abs(), epsilon = 1e-6);
}
