use proptest::prelude::*;

use lindlearn::model::{gamma_rotation, Direction};
use lindlearn::pipeline::{Constants, LearnConfig, Mode, SkeletonSpec};
use lindlearn::schedule::{extrapolation_factor, markov_constant};
use lindlearn::shadows::{ShadowBatch, ShadowHeader, ShadowSnapshot};
use lindlearn::{Axis, FitMode, GraphSpec, PauliString, Phase, PhasedPauli, PolySchedule};

fn pauli(n: usize) -> impl Strategy<Value = PauliString> {
    (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)).prop_map(|(x, z)| PauliString::from_bits(&x, &z).unwrap())
}

fn triple() -> impl Strategy<Value = (PauliString, PauliString, PauliString)> {
    (1usize..80).prop_flat_map(|n| (pauli(n), pauli(n), pauli(n)))
}

fn axis() -> impl Strategy<Value = Axis> {
    (0usize..3).prop_map(Axis::from_index)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn multiply_is_associative((a, b, c) in triple()) {
        let left = a.multiply(&b).unwrap().multiply(&PhasedPauli::new(Phase::ONE, c.clone())).unwrap();
        let right = PhasedPauli::new(Phase::ONE, a.clone()).multiply(&b.multiply(&c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn commutation_is_symmetric((a, b, _) in triple()) {
        let ab = a.multiply(&b).unwrap();
        let ba = b.multiply(&a).unwrap();
        prop_assert_eq!(&ab.pauli, &ba.pauli);
        let anti = a.anticommutes(&b).unwrap();
        prop_assert_eq!(ab.phase == ba.phase, !anti);
        prop_assert_eq!(a.commutator_half(&b).unwrap().is_some(), anti);
    }
}

proptest! {
    #[test]
    fn text_and_index_round_trip(p in (1usize..=20).prop_flat_map(pauli)) {
        let text = p.to_string();
        prop_assert_eq!(text.parse::<PauliString>().unwrap(), p.clone());
        if p.n() <= 16 {
            prop_assert_eq!(PauliString::from_index(p.n(), p.index()), p);
        }
    }

    #[test]
    fn chebyshev_monomial_round_trip(c in prop::collection::vec(-2.0f64..2.0, 1..8), t_max in 0.2f64..4.0) {
        let p = PolySchedule::from_monomial(t_max, &c);
        let back = p.monomial_coeffs();
        for (x, y) in c.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-8 * (1.0 + t_max.powi(c.len() as i32)));
        }
    }

    #[test]
    fn markov_bound_holds(c in prop::collection::vec(-1.0f64..1.0, 2..10), t_max in 0.1f64..3.0) {
        let p = PolySchedule::from_chebyshev(t_max, c);
        let m = p.degree();
        prop_assert!(p.derivative().sup_norm() <= markov_constant(m, t_max) * p.sup_norm() * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn extrapolation_factor_is_monotone(m in 0usize..6, a in 1.0f64..3.0, b in 1.0f64..3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(extrapolation_factor(m, 1.0, lo) <= extrapolation_factor(m, 1.0, hi) * (1.0 + 1e-12));
        prop_assert!((extrapolation_factor(m, 1.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_round_trip(v in prop::array::uniform3(-1.0f64..1.0)) {
        let w = gamma_rotation(gamma_rotation(v, Direction::Forward), Direction::Inverse);
        for k in 0..3 {
            prop_assert!((w[k] - v[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn snapshot_file_round_trip(
        n in 1usize..4,
        rows in prop::collection::vec((0usize..3, prop::collection::vec((axis(), any::<bool>(), axis(), any::<bool>()), 3)), 0..40),
    ) {
        let header = ShadowHeader { n, times: vec![0.1, 0.4, 0.9], seed: 7, ansatz: 11 };
        let mut batch = ShadowBatch::new(header);
        for (ti, sites) in rows {
            let sites = &sites[..n];
            let sign = |b: bool| if b { -1i8 } else { 1 };
            batch
                .push(ShadowSnapshot {
                    time_index: ti,
                    b1: sites.iter().map(|s| s.0).collect(),
                    s1: sites.iter().map(|s| sign(s.1)).collect(),
                    b2: sites.iter().map(|s| s.2).collect(),
                    s2: sites.iter().map(|s| sign(s.3)).collect(),
                })
                .unwrap();
        }
        let text = batch.serialize();
        let back = ShadowBatch::parse(&text).unwrap();
        prop_assert_eq!(back.serialize(), text);
        prop_assert_eq!(back, batch);
    }
}

#[test]
fn config_json_round_trip() {
    let cfg = LearnConfig {
        truth: None,
        snapshots: Some("shots.txt".into()),
        skeleton: SkeletonSpec {
            graph: GraphSpec::Ring { n: 4 },
            k: 2,
            t_max: 1.5,
            m: 2,
            h_bound: 1.0,
            tau: 0.5,
            hamiltonian: vec!["ZZII".parse().unwrap(), "XIII".parse().unwrap()],
        },
        eps: 0.1,
        delta: 0.05,
        mode: Mode::Sampled,
        seed: 9,
        region_cap: 5,
        clamp_regions: true,
        constants: Constants::default(),
        fit_mode: FitMode::L1Robust,
        degree_cap: 100,
        ode_tol: 1e-10,
        eps_sdp: Some(1e-3),
    };
    assert_eq!(LearnConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn config_defaults_fill_in() {
    let text = r#"{
        "skeleton": {"graph": {"kind": "path", "n": 2}, "k": 2, "T": 1.0, "m": 1, "h_bound": 1.0, "tau": 1.0, "hamiltonian": ["ZZ"]},
        "eps": 0.1, "delta": 0.1, "mode": "oracle"
    }"#;
    let cfg = LearnConfig::from_json(text).unwrap();
    assert_eq!(cfg.region_cap, 6);
    assert_eq!(cfg.fit_mode, FitMode::LeastSquares);
    assert!(LearnConfig::from_json(&text.replace("0.1, \"delta\"", "1.5, \"delta\"")).is_err());
}
