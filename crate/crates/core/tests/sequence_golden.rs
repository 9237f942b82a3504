use proptest::prelude::*;

use spinecho::sequence::{build, parse_sequence, render_sequence, SequenceParams};
use spinecho::spinops::SpinAxis;

const GOLDEN: &[(&str, &str)] = &[
    ("hahn", "90(X) ; [ d(10u) 180(Y) d(10u) echo(+Y) ]*1"),
    ("cp", "90(X) ; [ d(10u) 180(X) d(10u) echo(-Y) d(10u) 180(X) d(10u) echo(+Y) ]*2"),
    ("apcp", "90(X) ; [ d(10u) 180(-X) d(10u) echo(-Y) d(10u) 180(X) d(10u) echo(+Y) ]*2"),
    ("cpmg", "90(X) ; [ d(10u) 180(Y) d(10u) echo(+Y) d(10u) 180(Y) d(10u) echo(+Y) ]*2"),
    ("apcpmg", "90(X) ; [ d(10u) 180(-Y) d(10u) echo(+Y) d(10u) 180(Y) d(10u) echo(+Y) ]*2"),
    (
        "bb1_cpmg",
        "90(X) ; [ d(10u) 180(194.47751218592992) 360(43.4325365577898) 180(194.47751218592992) 180(Y) d(10u) echo(+Y) \
         d(10u) 180(194.47751218592992) 360(43.4325365577898) 180(194.47751218592992) 180(Y) d(10u) echo(+Y) ]*2",
    ),
    ("ostroff_waugh", "90(X) ; [ d(10u) 90(Y) d(10u) echo(+Y) d(10u) 90(Y) d(10u) echo(+Y) ]*2"),
];

fn params() -> SequenceParams {
    SequenceParams {
        tau: 10e-6,
        n_echoes: 4,
        n_cycles: 2,
    }
}

#[test]
fn builders_render_to_golden_text() {
    for (name, text) in GOLDEN {
        let seq = build(name, &params()).unwrap();
        assert_eq!(render_sequence(&seq), *text, "{name}");
        assert_eq!(parse_sequence(text).unwrap(), seq, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phase_changes_keep_total_time(
        idx in 0usize..7,
        tau in 1e-7f64..1e-3,
        n in 1usize..20,
        shift in 0.0f64..std::f64::consts::TAU,
        f1 in 1e3f64..1e6,
    ) {
        let (name, _) = GOLDEN[idx];
        let seq = build(name, &SequenceParams { tau, n_echoes: 2 * n, n_cycles: n }).unwrap();
        let shifted = seq.map_phases(|p| match p.phase() {
            Some(phi) => SpinAxis::from_phase((phi + shift).rem_euclid(std::f64::consts::TAU)),
            None => p,
        });
        let omega1 = std::f64::consts::TAU * f1;
        for w in [None, Some(omega1)] {
            let (a, b) = (seq.total_time(w), shifted.total_time(w));
            prop_assert!((a - b).abs() <= 1e-15 * a.max(1e-12));
        }
    }
}
