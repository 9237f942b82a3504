//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinecho::aht::{
    cpmg_closed_forms, cpmg_offset_commutator, defect_for_hamiltonian, magnus0, magnus1, toggling_frame, MagnusOrder,
};
use spinecho::engine::{
    analytic_ising_echo, create_model, realization_seed, run_dr, run_dr_with, run_ensemble_with, Detection,
    EnsembleSpec, Interaction, ModelConfig, RunDiagnostics, RunOptions,
};
use spinecho::lattice::{CouplingTable, DisorderRealization, RealizationSampler};
use spinecho::observables::coherence_orders;
use spinecho::sequence::{build, build_table1, SequenceParams, TableSequence};
use spinecho::spinops::{free_hamiltonian, Operator};
use spinecho_cli::commands;
use spinecho_cli::config::{load_jobs, Job, Source};

type Outcome = Result<String, String>;

fn job(preset: &str, variant: Option<&str>, sets: &[&str]) -> Job {
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    let variants: Vec<String> = variant.into_iter().map(str::to_string).collect();
    let mut jobs = load_jobs(&Source {
        config: None,
        preset: Some(preset),
        sets: &sets,
        variants: &variants,
        workers: None,
        seed: None,
    })
    .expect("preset loads");
    assert_eq!(jobs.len(), 1);
    jobs.remove(0)
}

/// Per-realization signed trains and diagnostics, in realization order.
struct Ensemble {
    echo_index: Vec<usize>,
    signed: Vec<Vec<f64>>,
    diagnostics: Vec<RunDiagnostics>,
}

fn ensemble(job: &Job) -> Ensemble {
    let lattice = job.lattice().unwrap();
    let model = job.model().unwrap();
    let seq = job.sequence(None).unwrap();
    let spec = EnsembleSpec {
        lattice: &lattice,
        disorder: &job.config.disorder,
        sequence: &seq,
        model: model.as_ref(),
        n_dr: job.config.n_dr,
        master_seed: job.config.master_seed,
        options: RunOptions {
            detection: job.config.detection,
            interaction: job.config.interaction,
        },
        workers: 0,
    };
    let per_dr = Mutex::new(Vec::new());
    let result = run_ensemble_with(&spec, |k, _, out| {
        per_dr
            .lock()
            .unwrap()
            .push((k, out.train.signed.clone(), out.diagnostics.clone()));
        Ok(())
    })
    .expect("ensemble runs");
    let mut per_dr = per_dr.into_inner().unwrap();
    per_dr.sort_by_key(|(k, _, _)| *k);
    Ensemble {
        echo_index: result.echo_index,
        signed: per_dr.iter().map(|(_, s, _)| s.clone()).collect(),
        diagnostics: per_dr.into_iter().map(|(_, _, d)| d).collect(),
    }
}

impl Ensemble {
    /// Per-realization mean over recorded echoes numbered (from 1) in `window`.
    fn window_means(&self, window: std::ops::RangeInclusive<usize>) -> Vec<f64> {
        let picks: Vec<usize> = (0..self.echo_index.len())
            .filter(|&i| window.contains(&(self.echo_index[i] + 1)))
            .collect();
        assert!(!picks.is_empty(), "no echoes in window");
        self.signed
            .iter()
            .map(|s| picks.iter().map(|&i| s[i]).sum::<f64>() / picks.len() as f64)
            .collect()
    }
}

fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of `a − b` over shared realizations.
fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_stderr(&d)
}

/// Mean and standard error of `a − b` for independent ensembles.
fn unpaired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, sa) = mean_stderr(a);
    let (mb, sb) = mean_stderr(b);
    (ma - mb, sa.hypot(sb))
}

fn random_couplings(rng: &mut ChaCha8Rng, n: usize) -> CouplingTable {
    let mut t = CouplingTable::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            t.set(i, j, sign * rng.random_range(50.0..1500.0));
        }
    }
    t
}

fn relative(a: &Operator, b: &Operator) -> f64 {
    a.distance(b) / b.frobenius_norm()
}

// Criteria 1 and 8 share the fig2 ensembles.
fn fig2_ensembles() -> Vec<(String, Ensemble)> {
    ["cp", "apcp", "cpmg", "apcpmg"]
        .iter()
        .map(|v| (v.to_string(), ensemble(&job("fig2", Some(v), &["n_dr=200"]))))
        .collect()
}

fn criterion_1(fig2: &[(String, Ensemble)]) -> Outcome {
    let mut worst = RunDiagnostics::default();
    for (_, e) in fig2 {
        for d in e.diagnostics.iter().take(100) {
            worst.trace_drift = worst.trace_drift.max(d.trace_drift);
            worst.purity_drift = worst.purity_drift.max(d.purity_drift);
            worst.max_unitary_deviation = worst.max_unitary_deviation.max(d.max_unitary_deviation);
        }
    }
    let msg = format!(
        "trace drift {:.2e}, purity drift {:.2e}, unitarity {:.2e} (4 sequences x 100 DRs)",
        worst.trace_drift, worst.purity_drift, worst.max_unitary_deviation
    );
    if worst.trace_drift < 1e-10 && worst.purity_drift < 1e-10 && worst.max_unitary_deviation < 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_2() -> Outcome {
    let j = job("fig2", Some("cpmg"), &["disorder.n_spins=6"]);
    let sampler = RealizationSampler::new(&j.lattice().unwrap(), &j.config.disorder).unwrap();
    let delta = create_model(&ModelConfig::default()).unwrap();
    let tau = j.config.sequence.tau;
    let n = 10;
    let (mut dev_a, mut dev_b) = (0.0f64, 0.0f64);
    for k in 0..3 {
        let r = sampler.sample(realization_seed(j.config.master_seed, k)).unwrap();
        assert!(r.omega_z != 0.0);
        let cpmg = run_dr(&r, &build_table1(TableSequence::Cpmg, tau, n).unwrap(), delta.as_ref(), Detection::Total)
            .unwrap();
        for m in 1..=n {
            let hahn = build("hahn", &SequenceParams { tau: m as f64 * tau, ..Default::default() }).unwrap();
            let h = run_dr(&r, &hahn, delta.as_ref(), Detection::Total).unwrap();
            dev_a = dev_a.max((h.signed[0] - cpmg.signed[m - 1]).abs());
        }
        for kind in TableSequence::ALL {
            let t = run_dr(&r, &build_table1(kind, tau, n).unwrap(), delta.as_ref(), Detection::Total).unwrap();
            for (x, y) in t.magnitudes.iter().zip(&cpmg.magnitudes) {
                dev_b = dev_b.max((x - y).abs());
            }
        }
    }
    let msg = format!("CPMG vs Hahn {dev_a:.2e}, |amplitude| across sequences {dev_b:.2e}");
    if dev_a < 1e-10 && dev_b < 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criteria_3_4() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst0, mut worst1) = (0.0f64, 0.0f64);
    let mut offset_zero_norm = 0.0f64;
    for case in 0..20 {
        let n = 3 + case % 2;
        let couplings = random_couplings(&mut rng, n);
        let tau = rng.random_range(10e-6..100e-6);
        let t_p = rng.random_range(5e-6..30e-6);
        let omega_z = if case % 4 == 0 { 0.0 } else { rng.random_range(-500.0..500.0) };
        let h0 = free_hamiltonian(&couplings, omega_z).unwrap();
        let cycle = build_table1(TableSequence::Cpmg, tau, 2).unwrap().cycle;
        let frame = toggling_frame(&cycle, &h0, PI / t_p).unwrap();
        let closed = cpmg_closed_forms(&couplings, omega_z, tau, t_p).unwrap();
        worst0 = worst0.max(relative(&magnus0(&frame).unwrap(), &closed.h0));
        worst1 = worst1.max(relative(&magnus1(&frame).unwrap(), &closed.h1));
        if omega_z == 0.0 {
            offset_zero_norm = offset_zero_norm.max(cpmg_offset_commutator(n, &couplings, 0.0).unwrap().max_abs());
        }
    }
    let c3 = format!("max relative error {worst0:.2e} over 20 cases");
    let c4 = format!("max relative error {worst1:.2e}; offset term at zero offset {offset_zero_norm:.1e}");
    (
        if worst0 < 1e-10 { Ok(c3) } else { Err(c3) },
        if worst1 < 1e-6 && offset_zero_norm == 0.0 { Ok(c4) } else { Err(c4) },
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let j = job("fig2", Some("cpmg"), &[]);
    let omega1 = 2.0 * PI * j.config.pulse_model.omega1_over_2pi.unwrap();
    let cycle = j.sequence(None).unwrap().cycle;
    let mut ratios = Vec::new();
    for _ in 0..10 {
        let couplings = random_couplings(&mut rng, 3);
        let omega_z = rng.random_range(-300.0..300.0);
        let h0 = free_hamiltonian(&couplings, omega_z).unwrap();
        let d1 = defect_for_hamiltonian(&h0, &cycle, omega1, MagnusOrder::ZerothPlusFirst).unwrap();
        let d2 = defect_for_hamiltonian(&h0.scaled(0.5), &cycle, omega1, MagnusOrder::ZerothPlusFirst).unwrap();
        ratios.push(d1 / d2);
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let msg = format!("defect ratio range [{lo:.3}, {hi:.3}] over 10 instances");
    if lo >= 6.0 && hi <= 10.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

const TAIL: std::ops::RangeInclusive<usize> = 80..=120;

fn criteria_6_7() -> (Outcome, Outcome) {
    let tails: Vec<(&str, Vec<f64>)> = ["n4-interrupted_h0", "n4-avg_h0", "n4-avg_h0_h1", "n4-exact_finite"]
        .iter()
        .map(|v| (*v, ensemble(&job("fig3", Some(v), &[])).window_means(TAIL)))
        .collect();
    let summary: Vec<String> = tails
        .iter()
        .map(|(v, t)| {
            let (m, s) = mean_stderr(t);
            format!("{}={m:.4}±{s:.4}", &v[3..])
        })
        .collect();
    let mut ok6 = true;
    let mut gaps = Vec::new();
    for w in tails.windows(2).take(2) {
        let (d, se) = paired(&w[1].1, &w[0].1);
        ok6 &= d > 3.0 * se;
        gaps.push(format!("{:.1}σ", d / se));
    }
    // "Within 3x stderr" uses the tails' own error bars; the paired figure is
    // printed alongside.
    let (d, se_paired) = paired(&tails[3].1, &tails[2].1);
    let bar = mean_stderr(&tails[3].1).1.max(mean_stderr(&tails[2].1).1);
    ok6 &= d >= -3.0 * bar;
    let c6 = format!(
        "{}; ladder gaps {}; exact - avg_h0_h1 {d:+.4} ({:+.1} tail stderr, {:+.1}σ paired)",
        summary.join(" "),
        gaps.join(", "),
        d / bar,
        d / se_paired
    );

    let n4 = &tails[3].1;
    let n6 = ensemble(&job("fig3", Some("n6-exact_finite"), &[])).window_means(TAIL);
    let n8 = ensemble(&job("fig3", Some("n8-exact_finite"), &[])).window_means(TAIL);
    let (d64, se64) = unpaired(&n6, n4);
    let (d86, se86) = unpaired(&n8, &n6);
    let (m6, s6) = mean_stderr(&n6);
    let (m8, s8) = mean_stderr(&n8);
    let c7 = format!(
        "N6={m6:.4}±{s6:.4} N8={m8:.4}±{s8:.4}; N6-N4 {d64:+.4} ({:.1}σ); N8-N6 {d86:+.4} ({:+.1}σ)",
        d64 / se64,
        d86 / se86
    );
    let ok7 = d64 > 3.0 * se64 && d86 >= -3.0 * se86;
    (if ok6 { Ok(c6) } else { Err(c6) }, if ok7 { Ok(c7) } else { Err(c7) })
}

fn criterion_8(fig2: &[(String, Ensemble)]) -> Outcome {
    let at50 = |name: &str| -> Vec<f64> {
        fig2.iter()
            .find(|(v, _)| v == name)
            .map(|(_, e)| e.window_means(50..=50))
            .unwrap()
    };
    let (cp, apcp, cpmg, apcpmg) = (at50("cp"), at50("apcp"), at50("cpmg"), at50("apcpmg"));
    let (d1, s1) = paired(&cpmg, &cp);
    let (d2, s2) = paired(&apcp, &apcpmg);
    let means: Vec<String> = [("cp", &cp), ("apcp", &apcp), ("cpmg", &cpmg), ("apcpmg", &apcpmg)]
        .iter()
        .map(|(n, v)| format!("{n}={:.4}", mean_stderr(v).0))
        .collect();
    let msg = format!(
        "{}; cpmg-cp {d1:+.4} ({:.2}σ); apcp-apcpmg {d2:+.4} ({:.2}σ); paired over 200 DRs",
        means.join(" "),
        d1 / s1,
        d2 / s2
    );
    if d1 > 3.0 * s1 && d2 > 3.0 * s2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_9() -> Outcome {
    let j = job("fig4", None, &[]);
    let sampler = RealizationSampler::new(&j.lattice().unwrap(), &j.config.disorder).unwrap();
    let r = sampler.sample(realization_seed(j.config.master_seed, 0)).unwrap();
    let seq = j.sequence(None).unwrap();
    let outside = |model: &ModelConfig| -> Vec<f64> {
        let model = create_model(model).unwrap();
        let mut values = Vec::new();
        let mut observer = |_: &spinecho::engine::EchoPoint, _: f64, rho: &spinecho::linalg::CMatrix| {
            values.push(coherence_orders(rho).unwrap().outside_single_quantum());
        };
        run_dr_with(&r, &seq, model.as_ref(), RunOptions::default(), Some(&mut observer)).unwrap();
        values
    };
    let delta = outside(&ModelConfig::default());
    let exact = outside(&j.config.pulse_model);
    let delta_max = delta.iter().cloned().fold(0.0, f64::max);
    let exact_by_10 = exact.iter().take(10).cloned().fold(0.0, f64::max);
    let msg = format!(
        "delta max {delta_max:.2e} over {} echoes; exact_finite max by echo 10 {exact_by_10:.2e}",
        delta.len()
    );
    if delta.len() == 48 && delta_max < 1e-10 && exact_by_10 > 1e-3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_10() -> Outcome {
    let j = job("fig4", None, &[]);
    let sampler = RealizationSampler::new(&j.lattice().unwrap(), &j.config.disorder).unwrap();
    let delta = create_model(&ModelConfig::default()).unwrap();
    let options = RunOptions {
        detection: Detection::Total,
        interaction: Interaction::Ising,
    };
    let seq = build_table1(TableSequence::Cpmg, 5e-6, 20).unwrap();
    let mut dev_n6 = 0.0f64;
    for k in 0..3 {
        let r = sampler.sample(realization_seed(1, k)).unwrap();
        let out = run_dr_with(&r, &seq, delta.as_ref(), options, None).unwrap();
        let analytic = analytic_ising_echo(&r.couplings, &out.train.times, Detection::Total).unwrap();
        for (a, b) in analytic.iter().zip(&out.train.signed) {
            dev_n6 = dev_n6.max((a - b).abs());
        }
    }
    let b = 730.0;
    let mut pair = CouplingTable::zeros(2);
    pair.set(0, 1, b);
    let r = DisorderRealization::from_couplings(pair.clone(), 0.0);
    let hahn = build_table1(TableSequence::Cpmg, 40e-6, 20).unwrap();
    let out = run_dr_with(&r, &hahn, delta.as_ref(), options, None).unwrap();
    let analytic = analytic_ising_echo(&pair, &out.train.times, Detection::Total).unwrap();
    let mut dev_2 = 0.0f64;
    for ((t, a), s) in out.train.times.iter().zip(&analytic).zip(&out.train.signed) {
        let closed = (2.0 * PI * b * t).cos();
        dev_2 = dev_2.max((a - closed).abs()).max((s - closed).abs());
    }
    let msg = format!("N=6 simulation vs analytic {dev_n6:.2e}; 2-spin vs cos {dev_2:.2e}");
    if dev_n6 < 1e-8 && dev_2 < 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut worst = 0.0f64;
    for seed in 1..=5u64 {
        let s = format!("master_seed={seed}");
        let report = commands::aht(&job("ostroff-waugh-aht", None, &[&s]), dir.path()).unwrap();
        worst = worst.max(report["checks"]["ostroff_waugh"]["magnus0_residual"].as_f64().unwrap());
    }
    let msg = format!("max residual {worst:.2e} over 5 realizations");
    if worst < 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for workers in [1usize, 8] {
        let jobs = load_jobs(&Source {
            config: None,
            preset: Some("fig3"),
            sets: &[],
            variants: &["n4-exact_finite".to_string()],
            workers: Some(workers),
            seed: None,
        })
        .unwrap();
        let out = dir.path().join(format!("w{workers}"));
        let path = commands::run(&jobs[0], &out).unwrap();
        csvs.push(std::fs::read(path).unwrap());
    }
    let msg = format!("{} bytes per CSV", csvs[0].len());
    if csvs[0] == csvs[1] {
        Ok(msg)
    } else {
        Err(format!("CSV differs ({msg})"))
    }
}

fn report(results: &mut Vec<bool>, id: usize, start: Instant, outcome: Outcome) {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(msg) => {
            println!("criterion {id:>2}: PASS  {msg}  [{secs:.1}s]");
            results.push(true);
        }
        Err(msg) => {
            println!("criterion {id:>2}: FAIL  {msg}  [{secs:.1}s]");
            results.push(false);
        }
    }
}

fn main() {
    let mut results = Vec::new();

    let t = Instant::now();
    let fig2 = fig2_ensembles();
    report(&mut results, 1, t, criterion_1(&fig2));
    let t = Instant::now();
    report(&mut results, 2, t, criterion_2());
    let t = Instant::now();
    let (c3, c4) = criteria_3_4();
    report(&mut results, 3, t, c3);
    report(&mut results, 4, t, c4);
    let t = Instant::now();
    report(&mut results, 5, t, criterion_5());
    let t = Instant::now();
    let (c6, c7) = criteria_6_7();
    report(&mut results, 6, t, c6);
    report(&mut results, 7, t, c7);
    let t = Instant::now();
    report(&mut results, 8, t, criterion_8(&fig2));
    let t = Instant::now();
    report(&mut results, 9, t, criterion_9());
    let t = Instant::now();
    report(&mut results, 10, t, criterion_10());
    let t = Instant::now();
    report(&mut results, 11, t, criterion_11());
    let t = Instant::now();
    report(&mut results, 12, t, criterion_12());

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
