use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use proptest::prelude::*;

use spinecho::aht::exact_cycle_propagator;
use spinecho::engine::{
    create_model, realization_seed, run_dr, run_dr_with, run_ensemble, trotter_oracle, Detection, EnsembleSpec,
    Interaction, ModelConfig, Piece, RunOptions,
};
use spinecho::lattice::{sample_realization, CouplingTable, DisorderConfig, DisorderRealization, LatticeSpec};
use spinecho::sequence::{bb1_composite, build, build_bb1, build_table1, SequenceEvent, SequenceParams, TableSequence};
use spinecho::spinops::{
    collective_op, free_hamiltonian, pulse_hamiltonian, propagator, Operator, SpinAxis,
};

fn couplings(values: &[(usize, usize, f64)], n: usize) -> CouplingTable {
    let mut t = CouplingTable::zeros(n);
    for &(i, j, b) in values {
        t.set(i, j, b);
    }
    t
}

fn three_spins() -> CouplingTable {
    couplings(&[(0, 1, 1200.0), (0, 2, -700.0), (1, 2, 350.0)], 3)
}

#[test]
fn trotter_validates_a_finite_pulse_cpmg_cycle() {
    let h0 = free_hamiltonian(&three_spins(), 300.0).unwrap();
    let t_p = 5e-6;
    let omega1 = PI / t_p;
    let tau = 2e-6;
    let cycle = build_table1(TableSequence::Cpmg, tau, 2).unwrap().cycle;
    let pieces: Vec<Piece> = cycle
        .iter()
        .filter_map(|e| match *e {
            SequenceEvent::Delay { tau } => Some(Piece {
                terms: vec![h0.clone()],
                duration: tau,
            }),
            SequenceEvent::Pulse { angle, phase, .. } => Some(Piece {
                terms: vec![pulse_hamiltonian(phase, omega1, &h0).unwrap()],
                duration: angle / omega1,
            }),
            SequenceEvent::Echo { .. } => None,
        })
        .collect();
    let trotter = trotter_oracle(&pieces, 1e-9).unwrap();
    let exact = exact_cycle_propagator(&h0, &cycle, omega1).unwrap();
    assert!(trotter.distance(&exact) < 1e-6, "{}", trotter.distance(&exact));
}

#[test]
fn propagator_matches_trotter_on_random_hamiltonian() {
    let h = free_hamiltonian(&three_spins(), -450.0).unwrap();
    let rf = collective_op(3, SpinAxis::PlusX).unwrap().scaled(2e4);
    let h = h.plus(&rf);
    let t = 3e-6;
    let trotter = trotter_oracle(
        &[Piece {
            terms: vec![h.clone()],
            duration: t,
        }],
        1e-9,
    )
    .unwrap();
    assert!(trotter.distance(&propagator(&h, t).unwrap()) < 1e-6);
}

fn si_realization(n: usize, seed: u64, fwhm: f64) -> DisorderRealization {
    let config = DisorderConfig {
        n_spins: n,
        abundance: 0.2,
        offset_fwhm: fwhm,
        ..Default::default()
    };
    sample_realization(&LatticeSpec::silicon(), &config, seed).unwrap()
}

#[test]
fn finite_pulses_approach_the_delta_limit() {
    let r = si_realization(4, 11, 0.0);
    let seq = build_table1(TableSequence::Cpmg, 40e-6, 20).unwrap();
    let delta = run_dr(&r, &seq, create_model(&ModelConfig::default()).unwrap().as_ref(), Detection::Total).unwrap();
    let deviation = |f1: f64| -> f64 {
        let m = create_model(&ModelConfig::named("exact_finite", Some(f1))).unwrap();
        let t = run_dr(&r, &seq, m.as_ref(), Detection::Total).unwrap();
        t.signed
            .iter()
            .zip(&delta.signed)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let coarse = deviation(40e3);
    let fine = deviation(400e3);
    assert!(coarse > 0.0);
    assert!(coarse >= 5.0 * fine, "{coarse} vs {fine}");
}

/// `exp(+i α (cos φ σx + sin φ σy)/2)` written out by hand.
fn rotation_2x2(alpha: f64, phi: f64) -> [[C64; 2]; 2] {
    let (c, s) = ((alpha / 2.0).cos(), (alpha / 2.0).sin());
    let i = C64::new(0.0, 1.0);
    [
        [C64::new(c, 0.0), i * s * C64::new(phi.cos(), -phi.sin())],
        [i * s * C64::new(phi.cos(), phi.sin()), C64::new(c, 0.0)],
    ]
}

fn mul(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let mut m = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

/// Overlap of `U I_z U†` with `−I_z`, normalized to 1 for a perfect inversion.
fn inversion_fidelity(u: &[[C64; 2]; 2]) -> f64 {
    // (U σz U†)_zz = |u00|² − |u01|²; the target is −1.
    -(u[0][0].norm_sqr() - u[0][1].norm_sqr())
}

fn library_composite(events: &[SequenceEvent], omega1: f64, scale: f64) -> Operator {
    let zero = Operator::zeros(2);
    let mut u = Operator::identity(2);
    for e in events {
        if let SequenceEvent::Pulse { angle, phase, .. } = *e {
            let h = pulse_hamiltonian(phase, omega1 * scale, &zero).unwrap();
            u = propagator(&h, angle / omega1).unwrap().product(&u);
        }
    }
    u
}

#[test]
fn bb1_is_robust_to_amplitude_error() {
    let omega1 = TAU * 40e3;
    let scale = 1.1;
    let composite = bb1_composite(SpinAxis::PlusY);
    let mut oracle = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];
    for e in &composite {
        if let SequenceEvent::Pulse { angle, phase, .. } = *e {
            oracle = mul(&rotation_2x2(angle * scale, phase.phase().unwrap()), &oracle);
        }
    }
    let lib = library_composite(&composite, omega1, scale);
    for i in 0..2 {
        for j in 0..2 {
            assert!((lib.matrix()[(i, j)] - oracle[i][j]).norm() < 1e-12);
        }
    }
    let plain = rotation_2x2(PI * scale, PI / 2.0);
    let f_bb1 = inversion_fidelity(&oracle);
    let f_plain = inversion_fidelity(&plain);
    assert!(f_bb1 > f_plain, "{f_bb1} vs {f_plain}");
    assert!(1.0 - f_bb1 < 0.01 * (1.0 - f_plain));

    // With the nominal amplitude the composite is a π rotation about Y.
    let exact = library_composite(&composite, omega1, 1.0);
    let target = library_composite(&[SequenceEvent::pulse(PI, SpinAxis::PlusY)], omega1, 1.0);
    let overlap = exact.adjoint().product(&target).trace().norm() / 2.0;
    assert!((overlap - 1.0).abs() < 1e-10);
}

#[test]
fn delta_bb1_train_equals_cpmg() {
    let r = si_realization(4, 5, 290.0);
    let delta = create_model(&ModelConfig::default()).unwrap();
    let a = run_dr(&r, &build_bb1(30e-6, 10).unwrap(), delta.as_ref(), Detection::Total).unwrap();
    let b = run_dr(&r, &build_table1(TableSequence::Cpmg, 30e-6, 10).unwrap(), delta.as_ref(), Detection::Total).unwrap();
    for (x, y) in a.signed.iter().zip(&b.signed) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn delta_hahn_echo_ignores_offset() {
    let mut r = si_realization(4, 8, 0.0);
    let delta = create_model(&ModelConfig::default()).unwrap();
    let seq = build("hahn", &SequenceParams { tau: 2e-3, ..Default::default() }).unwrap();
    let base = run_dr(&r, &seq, delta.as_ref(), Detection::Total).unwrap().signed[0];
    for offset in [-180.0, 75.0, 1234.5] {
        r.omega_z = offset;
        let s = run_dr(&r, &seq, delta.as_ref(), Detection::Total).unwrap().signed[0];
        assert!((s - base).abs() < 1e-10);
    }
}

#[test]
fn two_spin_ising_echo_vanishes_at_quarter_period() {
    let b = 500.0;
    let r = DisorderRealization::from_couplings(couplings(&[(0, 1, b)], 2), 40.0);
    let seq = build("hahn", &SequenceParams { tau: 1.0 / (8.0 * b), ..Default::default() }).unwrap();
    let delta = create_model(&ModelConfig::default()).unwrap();
    let options = RunOptions {
        detection: Detection::Total,
        interaction: Interaction::Ising,
    };
    let out = run_dr_with(&r, &seq, delta.as_ref(), options, None).unwrap();
    assert!(out.train.signed[0].abs() < 1e-10);
}

fn ensemble_spec<'a>(
    lattice: &'a LatticeSpec,
    disorder: &'a DisorderConfig,
    seq: &'a spinecho::sequence::Sequence,
    model: &'a dyn spinecho::engine::PulseModel,
    n_dr: usize,
    workers: usize,
) -> EnsembleSpec<'a> {
    EnsembleSpec {
        lattice,
        disorder,
        sequence: seq,
        model,
        n_dr,
        master_seed: 77,
        options: RunOptions::default(),
        workers,
    }
}

#[test]
fn single_realization_ensemble_is_run_dr() {
    let lattice = LatticeSpec::silicon();
    let disorder = DisorderConfig {
        n_spins: 3,
        abundance: 0.3,
        ..Default::default()
    };
    let seq = build_table1(TableSequence::Cpmg, 20e-6, 6).unwrap();
    let model = create_model(&ModelConfig::named("exact_finite", Some(50e3))).unwrap();
    let e = run_ensemble(&ensemble_spec(&lattice, &disorder, &seq, model.as_ref(), 1, 1)).unwrap();
    let r = sample_realization(&lattice, &disorder, realization_seed(77, 0)).unwrap();
    let t = run_dr(&r, &seq, model.as_ref(), Detection::Total).unwrap();
    assert_eq!(e.mean, t.signed);
    assert!(e.stderr.iter().all(|&s| s == 0.0));
}

#[test]
fn ensemble_is_independent_of_worker_count() {
    let lattice = LatticeSpec::silicon();
    let disorder = DisorderConfig {
        n_spins: 3,
        abundance: 0.3,
        offset_fwhm: 290.0,
        ..Default::default()
    };
    let seq = build_table1(TableSequence::Apcp, 20e-6, 8).unwrap();
    let model = create_model(&ModelConfig::named("exact_finite", Some(50e3))).unwrap();
    let a = run_ensemble(&ensemble_spec(&lattice, &disorder, &seq, model.as_ref(), 17, 1)).unwrap();
    let b = run_ensemble(&ensemble_spec(&lattice, &disorder, &seq, model.as_ref(), 17, 3)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unitary_runs_conserve_trace_and_purity(
        n in 2usize..=4,
        b in prop::collection::vec(-2000.0f64..2000.0, 6),
        offset in -400.0f64..400.0,
        model_idx in 0usize..3,
        seq_idx in 0usize..4,
        tau in 5e-6f64..60e-6,
    ) {
        let mut table = CouplingTable::zeros(n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                table.set(i, j, b[k]);
                k += 1;
            }
        }
        let r = DisorderRealization::from_couplings(table, offset);
        let model = create_model(&match model_idx {
            0 => ModelConfig::default(),
            1 => ModelConfig::named("exact_finite", Some(40e3)),
            _ => ModelConfig::named("interrupted_h0", Some(40e3)),
        }).unwrap();
        let seq = build_table1(TableSequence::ALL[seq_idx], tau, 8).unwrap();
        let out = run_dr_with(&r, &seq, model.as_ref(), RunOptions::default(), None).unwrap();
        prop_assert!(out.diagnostics.trace_drift < 1e-12);
        prop_assert!(out.diagnostics.purity_drift < 1e-10);
        prop_assert!(out.diagnostics.max_unitary_deviation < 1e-12);
        let train = &out.train;
        for i in 0..train.len() {
            prop_assert!(train.signed[i].abs() <= train.magnitudes[i] + 1e-12);
            if i > 0 {
                prop_assert!(train.times[i] > train.times[i - 1]);
            }
        }
    }
}
