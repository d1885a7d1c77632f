use actf_core::design::{
    coordinate_exchange, d_efficiency, generate_design, load_design, random_design, DesignOptions, Factor,
    FactorSpace, ScenarioDesign,
};
use actf_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit() -> FactorSpace {
    FactorSpace::new(vec![Factor::continuous("x", -1.0, 1.0)]).unwrap()
}

#[test]
fn three_point_quadratic_design() {
    let d = generate_design(&unit(), 3, 11).unwrap();
    let mut xs: Vec<f64> = d.runs.iter().map(|r| r[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert_eq!(xs, vec![-1.0, 0.0, 1.0]);

    // Brute force over every 3-point multiset of the candidates.
    let c = [-1.0, 0.0, 1.0];
    let mut best = 0.0f64;
    for a in c {
        for b in c {
            for e in c {
                let cand = ScenarioDesign::new(unit(), vec![vec![a], vec![b], vec![e]]).unwrap();
                if let Ok(eff) = d_efficiency(&cand) {
                    best = best.max(eff);
                }
            }
        }
    }
    assert!((d_efficiency(&d).unwrap() - best).abs() < 1e-12);
}

#[test]
fn standard_design_is_full_rank() {
    let d = generate_design(&FactorSpace::standard(), 72, 2024).unwrap();
    let x = d.model_matrix();
    assert_eq!(x.shape(), (72, 66));
    assert_eq!(x.rank(1e-9), 66);
    for run in &d.runs {
        for (f, &v) in d.space.factors().iter().zip(run) {
            assert!(f.contains(v), "{} = {v}", f.name);
        }
    }
}

#[test]
fn exchange_never_lowers_the_determinant() {
    let space = FactorSpace::standard_subset(&["VolEB".into(), "LT".into(), "ActF".into()]).unwrap();
    let r = coordinate_exchange(&space, 15, 3, 0, &DesignOptions::default()).unwrap();
    assert!(r.history.len() > 1);
    for w in r.history.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{w:?}");
    }
}

#[test]
fn deterministic_and_order_invariant() {
    let names: Vec<String> = ["ActF", "VolWB", "LT", "VolSS_NB1"].iter().map(|s| s.to_string()).collect();
    let fwd = FactorSpace::standard_subset(&names).unwrap();
    let rev_names: Vec<String> = names.iter().rev().cloned().collect();
    let rev = FactorSpace::standard_subset(&rev_names).unwrap();
    let a = generate_design(&fwd, 20, 9).unwrap();
    assert_eq!(a, generate_design(&fwd, 20, 9).unwrap());
    let b = generate_design(&rev, 20, 9).unwrap();
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        let back: Vec<f64> = rb.iter().rev().copied().collect();
        assert_eq!(ra, &back);
    }
}

#[test]
fn beats_random_designs() {
    let space = FactorSpace::standard();
    let d = generate_design(&space, 72, 5).unwrap();
    let eff = d_efficiency(&d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let wins = (0..100).filter(|_| eff > d_efficiency(&random_design(&space, 72, &mut rng).unwrap()).unwrap()).count();
    assert!(wins >= 95, "{wins}");
}

#[test]
fn aliased_model_is_a_rank_error() {
    // Two levels: the coded square equals the intercept.
    let s = FactorSpace::new(vec![Factor::discrete("a", vec![0.0, 1.0])]).unwrap();
    let d = ScenarioDesign::new(s, vec![vec![0.0], vec![1.0], vec![0.0]]).unwrap();
    assert!(matches!(d_efficiency(&d), Err(Error::RankDeficient { .. })));
}

#[test]
fn csv_round_trip() {
    let space = FactorSpace::standard_subset(&["VolEB".into(), "ActF".into()]).unwrap();
    let d = generate_design(&space, 8, 1).unwrap();
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# actf-design/1"));
    assert_eq!(load_design(&text).unwrap(), d);

    let bare = text.split_once('\n').unwrap().1;
    assert_eq!(load_design(bare).unwrap(), d);

    let bad = "VolEB,ActF\n800,1.12\n";
    match load_design(bad) {
        Err(Error::Parse { path, .. }) => assert_eq!(path, "row 1.ActF"),
        other => panic!("{other:?}"),
    }
    assert!(load_design("Foo\n1\n").is_err());
}
