mod common;

use common::{basis_acc, flat_walk_plan, gauss_integral, re_evaluate};
use proptest::prelude::*;
use terraplan::com_spline::*;
use terraplan::foothold::{FootStep, FootholdPlan};
use terraplan::geom::{Leg, Vec2, Vec3};
use terraplan::preview::shrunk_support_lines;
use terraplan::qp::QpOptions;

fn plan_with_legs(legs: &[Leg]) -> FootholdPlan {
    let stance = terraplan::geom::StanceGeometry::default();
    let initial = stance.footholds(Vec2::zeros(), 0.0).map(|p| Vec3::new(p.x, p.y, 0.0));
    let steps = legs
        .iter()
        .enumerate()
        .map(|(i, l)| FootStep {
            leg: *l,
            position: initial[l.index()] + Vec3::new(0.1, 0.0, 0.0),
            body_index: i + 1,
            action: "forward".into(),
            cost: 0.0,
        })
        .collect();
    FootholdPlan { initial, steps, body_states: vec![] }
}

#[test]
fn hessian_blocks_are_weighted_gram_integrals() {
    let t = 0.83;
    let pp = PhasePlan {
        phases: vec![SplinePhase {
            kind: SplinePhaseKind::LeadIn,
            duration: t,
            support: vec![],
            lines: vec![],
        }],
        margin: 0.0,
        dt: 0.02,
    };
    let prob = assemble_qp(&pp, &ComState::default(), &SplineParams::default()).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            let g = gauss_integral(t, |tau| basis_acc(i, tau) * basis_acc(j, tau));
            assert!((prob.h[(i, j)] - g).abs() < 1e-12 * g.abs().max(1.0));
            assert!((prob.h[(6 + i, 6 + j)] - 1.5 * prob.h[(i, j)]).abs() < 1e-12 * g.abs().max(1.0));
        }
    }
    assert!((prob.h[(2, 2)] - 12.0 * t.powi(3)).abs() < 1e-12);
}

#[test]
fn four_leg_phase_only_between_diagonal_swings() {
    let timing = PhaseTiming::default();
    let pp = build_phase_plan(&plan_with_legs(&[Leg::LF, Leg::RH]), 0.1, &timing).unwrap();
    let kinds: Vec<SplinePhaseKind> = pp.phases.iter().map(|p| p.kind).collect();
    assert_eq!(
        kinds,
        vec![SplinePhaseKind::LeadIn, SplinePhaseKind::Swing(Leg::LF), SplinePhaseKind::FourLeg, SplinePhaseKind::Swing(Leg::RH)]
    );
    assert!((pp.phases[2].duration - 0.1 * timing.t_swing).abs() < 1e-15);
    let same_side = build_phase_plan(&plan_with_legs(&[Leg::LF, Leg::LH]), 0.1, &timing).unwrap();
    assert!(same_side.phases.iter().all(|p| p.kind != SplinePhaseKind::FourLeg));
    let zero = build_phase_plan(&plan_with_legs(&[Leg::LF, Leg::RH, Leg::RF, Leg::LH]), 0.0, &timing).unwrap();
    let four: Vec<f64> = zero.phases.iter().filter(|p| p.kind == SplinePhaseKind::FourLeg).map(|p| p.duration).collect();
    assert_eq!(four, vec![0.0, 0.0]);
    assert!(matches!(
        build_phase_plan(&plan_with_legs(&[]), 0.1, &timing),
        Err(ComSplineError::EmptyPlan)
    ));
}

#[test]
fn resting_inside_every_region_gives_constant_spline() {
    let feet: Vec<Vec2> = terraplan::geom::StanceGeometry::default().footholds(Vec2::zeros(), 0.0).to_vec();
    let lines = shrunk_support_lines(&feet, 0.1).unwrap();
    let phase = |d| SplinePhase { kind: SplinePhaseKind::FourLeg, duration: d, support: feet.clone(), lines: lines.clone() };
    let pp = PhasePlan { phases: vec![phase(0.5), phase(0.3), phase(0.7)], margin: 0.1, dt: 0.02 };
    let s0 = ComState::at_rest(Vec2::new(0.05, -0.02));
    let sol = generate_com_trajectory(&pp, &s0, &SplineParams::default(), &QpOptions::default()).unwrap();
    assert!(sol.objective.abs() < 1e-12);
    for j in 0..=75 {
        let st = sol.spline.state(j as f64 * 0.02);
        assert!((st.pos - s0.pos).norm() < 1e-9);
        assert!(st.vel.norm() < 1e-9);
    }
}

#[test]
fn four_step_walk_is_smooth_and_stable() {
    let plan = flat_walk_plan(4);
    let pp = build_phase_plan(&plan, 0.1, &PhaseTiming::default()).unwrap();
    let s0 = ComState::at_rest(Vec2::zeros());
    let params = SplineParams::default();
    let sol = generate_com_trajectory(&pp, &s0, &params, &QpOptions::default()).unwrap();
    assert!(sol.spline.junction_gap() <= 1e-9, "{}", sol.spline.junction_gap());
    assert!(sol.min_slack >= -1e-6);
    assert!(sol.qp.kkt.max() <= 1e-8, "{:?}", sol.qp.kkt);
    let direct = re_evaluate(&sol.spline, (params.w_x, params.w_y));
    assert!((direct - sol.objective).abs() <= 1e-8, "{direct} vs {}", sol.objective);
    // Independent COP sweep over every sample.
    let active: Vec<&SplinePhase> = pp.active().map(|(_, p)| p).collect();
    for (k, tau) in sample_schedule(&pp) {
        let seg = &sol.spline.segments[k];
        let t = seg.start + tau;
        let cop = sol.spline.cop(t);
        for l in &active[k].lines {
            assert!(l.slack(cop) >= -1e-6);
        }
    }
    let st = sol.spline.state(0.0);
    assert!(st.pos.norm() < 1e-12 && st.vel.norm() < 1e-12 && st.acc.norm() < 1e-12);
    let mut csv = Vec::new();
    sol.spline.write_csv(0.02, &mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("t,x,y,vx,vy,ax,ay,px,py,phase_id"));
}

#[test]
fn oversized_margin_is_rejected() {
    let plan = flat_walk_plan(4);
    let r = build_phase_plan(&plan, 0.2, &PhaseTiming::default());
    assert!(matches!(r, Err(ComSplineError::MarginTooLarge(_))), "{r:?}");
}

#[test]
fn swing_arcs() {
    let a = Vec3::new(0.2, 0.1, 0.05);
    let b = Vec3::new(0.6, 0.1, 0.05);
    let p = swing_profile(a, b, 0.08, Vec2::zeros(), 20);
    assert!((p[10].z - (a.z + 0.08)).abs() < 1e-12);
    let up = Vec3::new(0.6, 0.1, 0.19);
    let q = swing_profile(a, up, 0.08, Vec2::new(0.0, 0.02), 20);
    let apex = q.iter().map(|v| v.z).fold(f64::MIN, f64::max);
    assert!(apex >= up.z + 0.08 - 1e-12);
    assert_eq!((q[0], q[20]), (a, up));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn coarser_sampling_never_costs_more(t_swing in 0.4f64..0.9, r in 0.03f64..0.09) {
        let plan = flat_walk_plan(4);
        let s0 = ComState::at_rest(Vec2::zeros());
        let solve = |dt: f64| {
            let timing = PhaseTiming { t_swing, lead_in: t_swing, four_leg_ratio: None, dt };
            let pp = build_phase_plan(&plan, r, &timing).unwrap();
            generate_com_trajectory(&pp, &s0, &SplineParams::default(), &QpOptions::default()).map(|s| s.objective)
        };
        let (fine, coarse) = (solve(0.02).unwrap(), solve(0.04).unwrap());
        prop_assert!(coarse <= fine + 1e-9 * fine.abs().max(1.0), "{coarse} > {fine}");
    }
}
