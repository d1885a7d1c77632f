use std::collections::BTreeMap;

use proptest::prelude::*;

use actf_core::calibration::geh;
use actf_core::controller::{controller_init, services, DetectorInputs, Indication, SignalTrace};
use actf_core::experiment::compute_drp;
use actf_core::phase::{Phase, Ring};
use actf_core::timing::{apply_actf, validate_plan, IntersectionTiming, PhaseTiming, Provenance, TimingPlan};

/// Single-intersection plan from a main/minor side split and per-ring left shares.
fn plan(cycle: f64, main_share: f64, lefts: [f64; 2], minor_lefts: [f64; 2]) -> TimingPlan {
    let main = 22.0 + main_share * (cycle - 45.0);
    let minor = cycle - main;
    let mut phases = BTreeMap::new();
    for (r, ring) in Ring::BOTH.into_iter().enumerate() {
        let [l, c, ml, mt] = ring.sequence();
        let g_l = 7.0 + lefts[r] * (main - 22.0);
        let g_ml = 7.0 + minor_lefts[r] * (minor - 22.0);
        let t = |g: f64, min: f64, coord: bool| PhaseTiming {
            green_s: g,
            yellow_s: 3.0,
            rc_s: 1.0,
            min_green_s: min,
            coordinated: coord,
        };
        phases.insert(l, t(g_l, 7.0, false));
        phases.insert(c, t(main - 8.0 - g_l, 2.0, true));
        phases.insert(ml, t(g_ml, 7.0, false));
        phases.insert(mt, t(minor - 8.0 - g_ml, 7.0, false));
    }
    TimingPlan {
        cycle_s: cycle,
        intersections: vec![IntersectionTiming { id: "A".into(), offset_s: 0.0, phases }],
        provenance: Provenance::Base,
    }
}

fn plans() -> impl Strategy<Value = TimingPlan> {
    (60.0..150.0f64, 0.0..1.0f64, [0.0..1.0f64, 0.0..1.0], [0.0..1.0f64, 0.0..1.0])
        .prop_map(|(c, m, l, ml)| plan((c * 10.0).round() / 10.0, m, l, ml))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transform_conserves_rings(base in plans(), actf in 1.0..1.3f64) {
        prop_assume!(validate_plan(&base).is_valid());
        let out = apply_actf(&base, actf).unwrap();
        for ring in Ring::BOTH {
            let d = out.plan.intersections[0].ring_length(ring) - base.intersections[0].ring_length(ring);
            prop_assert!(d.abs() <= 1e-9);
        }
        prop_assert!(validate_plan(&out.plan).is_valid());
    }

    #[test]
    fn geh_symmetric_and_scales(e in 0.0..5000.0f64, v in 0.0..5000.0f64, k in 0.01..50.0f64) {
        prop_assert_eq!(geh(e, v), geh(v, e));
        let scaled = geh(k * e, k * v);
        prop_assert!((scaled - k.sqrt() * geh(e, v)).abs() <= 1e-9 * (1.0 + scaled));
    }

    #[test]
    fn drp_sign_follows_delay_change(base in 0.1..500.0f64, factored in 0.0..500.0f64) {
        let d = compute_drp(base, factored).unwrap();
        prop_assert_eq!(d > 0.0, factored < base);
        prop_assert_eq!(d == 0.0, factored == base);
    }

    /// Arbitrary call patterns never break min green, clearance or the barrier.
    #[test]
    fn controller_safe_under_random_calls(
        base in plans(),
        actf in prop_oneof![Just(1.0), 1.0..1.3f64],
        pattern in prop::collection::vec(any::<u8>(), 60..240),
    ) {
        prop_assume!(validate_plan(&base).is_valid());
        let plan = apply_actf(&base, actf).unwrap().plan;
        let mut c = controller_init(&plan, "A").unwrap();
        let mut trace = SignalTrace::new("A", c.tick_s());
        let per_step = (5.0 / c.tick_s()).round() as usize;
        for bits in &pattern {
            let mut d = DetectorInputs::none();
            for (k, ph) in Phase::ACTUATED.iter().enumerate() {
                d.set(*ph, bits & (1 << k) != 0);
            }
            for _ in 0..per_step {
                c.tick_traced(&d, &mut trace);
            }
        }
        for row in &trace.rows {
            let on: Vec<_> = Phase::ALL.iter().filter(|p| row.indications[p.index()] != Indication::Red).collect();
            prop_assert!(on.windows(2).all(|w| w[0].side() == w[1].side()), "barrier at t={}", row.t);
            prop_assert!(on.len() <= 2);
        }
        let int = &plan.intersections[0];
        for s in services(&trace).iter().filter(|s| !s.truncated) {
            prop_assert!(s.green_s + 1e-9 >= int.phases[&s.phase].min_green_s, "{:?}", s);
            prop_assert!((s.yellow_s - 3.0).abs() < 1e-9 && (s.red_s - 1.0).abs() < 1e-9, "{:?}", s);
        }
    }
}
