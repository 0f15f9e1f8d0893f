mod common;

use common::{rk4, rng};
use proptest::prelude::*;
use rand::Rng;
use terraplan::geom::{Leg, StanceGeometry, Vec2};
use terraplan::preview::*;

fn nominal_state(com: Vec2) -> PreviewState {
    let stance = StanceGeometry::default();
    let feet = Leg::ALL.map(|l| com + stance.offset(l));
    PreviewState::at_rest(com, feet, 0.05).unwrap()
}

#[test]
fn closed_form_matches_rk4() {
    let mut r = rng(5);
    for _ in 0..50 {
        let h = r.random_range(0.3..0.8);
        let cart = CartTable::new(h, 9.81).unwrap();
        let x0 = Vec2::new(r.random_range(-0.1..0.1), r.random_range(-0.1..0.1));
        let v0 = Vec2::new(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3));
        let p0 = x0 + Vec2::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
        let dp = Vec2::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2));
        let duration = r.random_range(0.1..1.4);
        let mut s = nominal_state(x0);
        s.com_vel = v0;
        s.cop = p0;
        let phase = PreviewPhase::stance(duration, dp);
        let (x, v) = com_trajectory(&s, &phase, &cart, duration).unwrap();
        let (xr, vr) = rk4(x0, v0, p0, dp, duration, cart.omega(), 1e-4);
        assert!((x - xr).norm() <= 1e-6, "x err {}", (x - xr).norm());
        assert!((v - vr).norm() <= 1e-5);
    }
}

#[test]
fn standing_still_stays_still() {
    let s = nominal_state(Vec2::new(0.3, -0.2));
    let phase = PreviewPhase::stance(0.8, Vec2::zeros());
    let (x, v) = com_trajectory(&s, &phase, &CartTable::default(), 0.8).unwrap();
    assert!((x - s.com).norm() < 1e-14);
    assert!(v.norm() < 1e-14);
}

#[test]
fn zero_duration_and_range_errors() {
    let s = nominal_state(Vec2::zeros());
    let cart = CartTable::default();
    assert!(matches!(
        com_trajectory(&s, &PreviewPhase::stance(0.0, Vec2::zeros()), &cart, 0.0),
        Err(PreviewError::ZeroDuration)
    ));
    assert!(com_trajectory(&s, &PreviewPhase::stance(0.5, Vec2::zeros()), &cart, 0.6).is_err());
    assert!(CartTable::new(0.0, 9.81).is_err());
}

#[test]
fn cop_reaches_shift_exactly() {
    let ph = PreviewPhase::stance(0.7, Vec2::new(0.1, -0.03));
    let p0 = Vec2::new(0.2, 0.4);
    assert_eq!(cop_at(&ph, p0, 0.7).unwrap(), p0 + ph.cop_shift);
    assert!((cop_at(&ph, p0, 0.35).unwrap() - (p0 + ph.cop_shift * 0.5)).norm() < 1e-15);
}

#[test]
fn shrunk_square_margin() {
    let feet = [
        Vec2::new(0.5, 0.5),
        Vec2::new(-0.5, 0.5),
        Vec2::new(-0.5, -0.5),
        Vec2::new(0.5, -0.5),
    ];
    let lines = shrunk_support_lines(&feet, 0.1).unwrap();
    assert_eq!(lines.len(), 4);
    for l in &lines {
        assert!((l.slack(Vec2::zeros()) - 0.4).abs() < 1e-12);
    }
    let min = lines.iter().map(|l| l.slack(Vec2::new(0.45, 0.0))).fold(f64::INFINITY, f64::min);
    assert!((min + 0.05).abs() < 1e-12);
}

#[test]
fn swing_lands_relative_to_phase_start_com() {
    let s0 = nominal_state(Vec2::zeros());
    let stance = StanceGeometry::default();
    let cart = CartTable::default();
    let u = [
        PreviewPhase::stance(0.4, Vec2::new(0.02, 0.05)),
        PreviewPhase::swing(Leg::LH, 0.5, Vec2::new(0.03, 0.0), Vec2::new(0.04, -0.01)),
    ];
    let ro = rollout(&s0, &u, 0.05, &cart, &stance).unwrap();
    let com1 = ro.states[1].com;
    assert_eq!(ro.footholds.len(), 1);
    let (leg, at, k) = ro.footholds[0];
    assert_eq!((leg, k), (Leg::LH, 1));
    assert!((at - (com1 + stance.offset(Leg::LH) + Vec2::new(0.04, -0.01))).norm() < 1e-15);
    // The swing support excludes the swinging leg.
    assert_eq!(ro.states[1].support.feet.len(), 3);
    assert!(ro.states[1].support.feet.iter().all(|(l, _)| *l != Leg::LH));
}

#[test]
fn rollout_skips_zero_duration_phases() {
    let s0 = nominal_state(Vec2::zeros());
    let cart = CartTable::default();
    let stance = StanceGeometry::default();
    let a = PreviewPhase::stance(0.4, Vec2::new(0.02, 0.0));
    let z = PreviewPhase::swing(Leg::RF, 0.0, Vec2::new(0.5, 0.5), Vec2::new(0.1, 0.1));
    let b = PreviewPhase::stance(0.3, Vec2::new(0.01, 0.01));
    let with = rollout(&s0, &[a, z, b], 0.05, &cart, &stance).unwrap();
    let without = rollout(&s0, &[a, b], 0.05, &cart, &stance).unwrap();
    assert_eq!(with.final_state(), without.final_state());
    assert_eq!(with.source, vec![0, 2]);
    assert!(with.footholds.is_empty());
}

#[test]
fn sampled_csv_has_phase_ids() {
    let s0 = nominal_state(Vec2::zeros());
    let cart = CartTable::default();
    let u = [
        PreviewPhase::stance(0.2, Vec2::new(0.01, 0.0)),
        PreviewPhase::stance(0.2, Vec2::new(0.01, 0.0)),
    ];
    let ro = rollout(&s0, &u, 0.05, &cart, &StanceGeometry::default()).unwrap();
    let mut buf = Vec::new();
    ro.write_csv(&cart, 0.1, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "t,x,y,vx,vy,px,py,phase_id");
    assert_eq!(rows.len(), 1 + 5);
    assert!(rows.last().unwrap().ends_with(",1"));
}

fn arb_phase() -> impl Strategy<Value = PreviewPhase> {
    (0.05f64..0.4, -0.1f64..0.1, -0.1f64..0.1, 0usize..5, -0.05f64..0.05, -0.05f64..0.05).prop_map(
        |(t, px, py, leg, fx, fy)| {
            if leg == 4 {
                PreviewPhase::stance(t, Vec2::new(px, py))
            } else {
                PreviewPhase::swing(Leg::ALL[leg], t, Vec2::new(px, py), Vec2::new(fx, fy))
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rollout_composes(u in proptest::collection::vec(arb_phase(), 1..6), split in 0usize..6) {
        let s0 = nominal_state(Vec2::zeros());
        let cart = CartTable::default();
        let stance = StanceGeometry::default();
        let split = split.min(u.len());
        let whole = rollout(&s0, &u, 0.05, &cart, &stance);
        prop_assume!(whole.is_ok());
        let whole = whole.unwrap();
        let first = rollout(&s0, &u[..split], 0.05, &cart, &stance).unwrap();
        let rest = rollout(first.final_state(), &u[split..], 0.05, &cart, &stance).unwrap();
        let (a, b) = (whole.final_state(), rest.final_state());
        prop_assert!((a.com - b.com).norm() < 1e-9);
        prop_assert!((a.com_vel - b.com_vel).norm() < 1e-9);
        prop_assert!((a.cop - b.cop).norm() < 1e-12);
        prop_assert_eq!(a.feet, b.feet);
    }

    #[test]
    fn rollout_is_translation_equivariant(
        u in proptest::collection::vec(arb_phase(), 1..5),
        dx in -2.0f64..2.0,
        dy in -2.0f64..2.0,
    ) {
        let d = Vec2::new(dx, dy);
        let s0 = nominal_state(Vec2::zeros());
        let cart = CartTable::default();
        let stance = StanceGeometry::default();
        let a = rollout(&s0, &u, 0.05, &cart, &stance);
        prop_assume!(a.is_ok());
        let a = a.unwrap();
        let b = rollout(&s0.translated(d).unwrap(), &u, 0.05, &cart, &stance).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            prop_assert!((sa.com + d - sb.com).norm() < 1e-9);
            prop_assert!((sa.com_vel - sb.com_vel).norm() < 1e-9);
            prop_assert!((sa.support.min_slack(sa.cop) - sb.support.min_slack(sb.cop)).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_endpoints_are_continuous(ph in arb_phase(), vx in -0.3f64..0.3) {
        let mut s0 = nominal_state(Vec2::zeros());
        s0.com_vel = Vec2::new(vx, 0.0);
        let cart = CartTable::default();
        let (x, v) = com_trajectory(&s0, &ph, &cart, ph.duration).unwrap();
        let (xe, ve) = com_trajectory(&s0, &ph, &cart, ph.duration * (1.0 - 1e-9)).unwrap();
        prop_assert!((x - xe).norm() < 1e-6);
        prop_assert!((v - ve).norm() < 1e-6);
    }
}
