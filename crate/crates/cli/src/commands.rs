use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use spinecho::aht::{
    average_hamiltonian, cpmg_closed_forms, defect_for_hamiltonian, magnus0, magnus1, toggling_frame, MagnusOrder,
};
use spinecho::engine::{
    analytic_ising_echo, create_model, realization_hamiltonian, realization_seed, run_ensemble, EnsembleResult,
    EnsembleSpec, ModelConfig, PulseModel, RunDiagnostics, RunOptions,
};
use spinecho::lattice::RealizationSampler;
use spinecho::observables::{coherence_orders, ensemble_snapshots, export_snapshot, Snapshot, SnapshotSource};
use spinecho::sequence::{render_sequence, Sequence, SequenceEvent};
use spinecho::spinops::rotated_dipolar_ops;

use crate::config::{config_err, CliError, CliResult, Job};

#[derive(Serialize)]
struct Row {
    echo_index: usize,
    time_s: f64,
    mean: f64,
    stderr: f64,
    magnitude_mean: f64,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    sequence: String,
    model: &'static str,
    n_dr: usize,
    seeds: &'a [u64],
    diagnostics: &'a RunDiagnostics,
}

fn options(job: &Job) -> RunOptions {
    RunOptions {
        detection: job.config.detection,
        interaction: job.config.interaction,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// The runs a job expands to: one per swept `tau`, or the configured sequence.
fn sequences(job: &Job) -> CliResult<Vec<(Option<f64>, Sequence)>> {
    let sweep = &job.config.sequence.tau_sweep;
    if sweep.is_empty() {
        Ok(vec![(None, job.sequence(None)?)])
    } else {
        sweep.iter().map(|&t| Ok((Some(t), job.sequence(Some(t))?))).collect()
    }
}

pub fn run(job: &Job, out: &Path) -> CliResult<PathBuf> {
    let lattice = job.lattice()?;
    let model = job.model()?;
    let dir = job.output_dir(out);
    fs::create_dir_all(&dir)?;

    let mut results: Vec<(Option<f64>, Sequence, EnsembleResult)> = Vec::new();
    for (tau, seq) in sequences(job)? {
        let spec = EnsembleSpec {
            lattice: &lattice,
            disorder: &job.config.disorder,
            sequence: &seq,
            model: model.as_ref(),
            n_dr: job.config.n_dr,
            master_seed: job.config.master_seed,
            options: options(job),
            workers: job.config.workers,
        };
        let result = run_ensemble(&spec)?;
        results.push((tau, seq, result));
    }

    let csv_path = dir.join(&job.config.outputs.csv);
    let mut writer = csv::Writer::from_path(&csv_path)?;
    for (_, _, r) in &results {
        for i in 0..r.times.len() {
            writer.serialize(Row {
                echo_index: r.echo_index[i] + 1,
                time_s: r.times[i],
                mean: r.mean[i],
                stderr: r.stderr[i],
                magnitude_mean: r.magnitude_mean[i],
            })?;
        }
    }
    writer.flush()?;

    let runs: Vec<RunRecord<'_>> = results
        .iter()
        .map(|(tau, seq, r)| RunRecord {
            tau: *tau,
            sequence: render_sequence(seq),
            model: model.name(),
            n_dr: r.n_dr,
            seeds: &r.seeds,
            diagnostics: &r.diagnostics,
        })
        .collect();
    let sidecar = json!({
        "label": job.label,
        "input_sha256": job.input_hash()?,
        "csv": job.config.outputs.csv,
        "config": job.config,
        "runs": runs,
    });
    write_json(&dir.join("run.json"), &sidecar)?;
    Ok(csv_path)
}

fn relative(a: &spinecho::spinops::Operator, b: &spinecho::spinops::Operator) -> f64 {
    let scale = b.frobenius_norm();
    if scale == 0.0 {
        a.frobenius_norm()
    } else {
        a.distance(b) / scale
    }
}

const DEFECT_SCALES: [f64; 3] = [1.0, 0.5, 0.25];

pub fn aht(job: &Job, out: &Path) -> CliResult<Value> {
    let lattice = job.lattice()?;
    let model = job.model()?;
    let omega1 = model
        .omega1()
        .ok_or_else(|| config_err("aht needs a finite-pulse model with pulse_model.omega1_over_2pi"))?;
    let seq = job.sequence(None)?;
    let (cycle, copies) = seq.aht_cycle().map_err(config_err)?;

    let sampler = RealizationSampler::new(&lattice, &job.config.disorder)?;
    let realization = sampler.sample(realization_seed(job.config.master_seed, 0))?;
    let h0 = realization_hamiltonian(&realization, job.config.interaction)?;
    let frame = toggling_frame(&cycle, &h0, omega1)?;
    let hbar0 = magnus0(&frame)?;
    let hbar1 = magnus1(&frame)?;

    let intervals: Vec<Value> = frame
        .intervals()
        .iter()
        .map(|iv| json!({ "tag": iv.tag(), "start_s": iv.start, "duration_s": iv.duration }))
        .collect();

    let mut checks = serde_json::Map::new();
    let builder = job.config.sequence.builder.as_deref();
    if builder == Some("cpmg") && copies == 1 && realization.spin_offsets.is_none() {
        let t_p = PI / omega1;
        let closed = cpmg_closed_forms(&realization.couplings, realization.omega_z, job.config.sequence.tau, t_p)?;
        checks.insert(
            "cpmg".into(),
            json!({
                "magnus0_residual": relative(&hbar0, &closed.h0),
                "magnus1_residual": relative(&hbar1, &closed.h1),
            }),
        );
    }
    if builder == Some("ostroff_waugh") {
        let target = rotated_dipolar_ops(&realization.couplings)?.h_yy.scaled(-0.5);
        checks.insert(
            "ostroff_waugh".into(),
            json!({ "magnus0_residual": relative(&hbar0, &target) }),
        );
    }

    let mut defects = Vec::new();
    for &scale in &DEFECT_SCALES {
        let h = h0.scaled(scale);
        defects.push(json!({
            "scale": scale,
            "zeroth": defect_for_hamiltonian(&h, &cycle, omega1, MagnusOrder::Zeroth)?,
            "zeroth_plus_first": defect_for_hamiltonian(&h, &cycle, omega1, MagnusOrder::ZerothPlusFirst)?,
        }));
    }
    let total = average_hamiltonian(&frame, MagnusOrder::ZerothPlusFirst)?;

    let report = json!({
        "label": job.label,
        "input_sha256": job.input_hash()?,
        "sequence": render_sequence(&seq),
        "cycle_copies": copies,
        "cycle_time_s": frame.cycle_time(),
        "omega1_rad_s": omega1,
        "realization_seed": realization.seed,
        "intervals": intervals,
        "norms": {
            "h0": h0.frobenius_norm(),
            "magnus0": hbar0.frobenius_norm(),
            "magnus1": hbar1.frobenius_norm(),
            "magnus0_plus_1": total.frobenius_norm(),
        },
        "checks": checks,
        "defects": defects,
    });
    let dir = job.output_dir(out);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("aht.json"), &report)?;
    Ok(report)
}

fn snapshot_entry(snap: &Snapshot, base: &Path, threshold: f64, model: &str) -> CliResult<Value> {
    let (json_path, ppm_path) = export_snapshot(snap, base, threshold)?;
    let coherence = coherence_orders(&snap.rho)?;
    let amplitudes: BTreeMap<i32, f64> = coherence.orders().map(|m| (m, coherence.amplitude(m))).collect();
    Ok(json!({
        "json": json_path.file_name().map(|f| f.to_string_lossy().into_owned()),
        "ppm": ppm_path.file_name().map(|f| f.to_string_lossy().into_owned()),
        "model": model,
        "source": snap.source,
        "echo": snap.echo_index + 1,
        "time_s": snap.time,
        "pulse_count": snap.pulse_count,
        "coherence": amplitudes,
        "outside_single_quantum": coherence.outside_single_quantum(),
    }))
}

/// Writes snapshot files and returns how many were written.
pub fn snapshot(job: &Job, out: &Path) -> CliResult<usize> {
    let schedule = &job.config.outputs.snapshot_echoes;
    if schedule.is_empty() {
        return Ok(0);
    }
    let seq = job.sequence(None)?;
    let n = seq.n_echoes();
    if let Some(&bad) = schedule.iter().find(|&&e| e == 0 || e > n) {
        return Err(CliError::Config(format!(
            "outputs.snapshot_echoes: echo {bad} outside 1..={n}"
        )));
    }
    let echoes: Vec<usize> = schedule.iter().map(|e| e - 1).collect();
    let lattice = job.lattice()?;
    let configured = job.model()?;
    let delta = create_model(&ModelConfig::default())?;
    let mut models: Vec<&dyn PulseModel> = vec![delta.as_ref()];
    if configured.name() != delta.name() {
        models.push(configured.as_ref());
    }

    let dir = job.output_dir(out);
    fs::create_dir_all(&dir)?;
    let threshold = job.config.outputs.snapshot_threshold;
    let mut entries = Vec::new();
    for model in models {
        let spec = EnsembleSpec {
            lattice: &lattice,
            disorder: &job.config.disorder,
            sequence: &seq,
            model,
            n_dr: job.config.n_dr,
            master_seed: job.config.master_seed,
            options: options(job),
            workers: job.config.workers,
        };
        let set = ensemble_snapshots(&spec, &echoes)?;
        for snap in set.single.iter().chain(&set.averaged) {
            let kind = match snap.source {
                SnapshotSource::Averaged => "averaged",
                SnapshotSource::Realization(_) => "single",
            };
            let base = dir.join(format!("echo{:04}_{}_{kind}", snap.echo_index + 1, model.name()));
            entries.push(snapshot_entry(snap, &base, threshold, model.name())?);
        }
    }
    let count = entries.len();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "label": job.label,
            "input_sha256": job.input_hash()?,
            "n_dr": job.config.n_dr,
            "threshold": threshold,
            "snapshots": entries,
        }),
    )?;
    Ok(count)
}

/// Echo times (s after the prologue) with instantaneous pulses.
fn delta_echo_times(seq: &Sequence) -> Vec<f64> {
    let mut t = 0.0;
    let mut times = Vec::new();
    for _ in 0..seq.repeats {
        for e in &seq.cycle {
            match *e {
                SequenceEvent::Delay { tau } => t += tau,
                SequenceEvent::Echo { .. } => times.push(t),
                SequenceEvent::Pulse { .. } => {}
            }
        }
    }
    times
}

/// Flip-flop-free envelope averaged over realizations, at the echo times of
/// the configured sequence (or of every swept `tau`).
pub fn analytic(job: &Job, out: &Path) -> CliResult<PathBuf> {
    let lattice = job.lattice()?;
    let mut times = Vec::new();
    let mut index = Vec::new();
    for (_, seq) in sequences(job)? {
        for (i, t) in delta_echo_times(&seq).into_iter().enumerate() {
            index.push(i + 1);
            times.push(t);
        }
    }
    let sampler = RealizationSampler::new(&lattice, &job.config.disorder)?;
    let n_dr = job.config.n_dr;
    let mut sum = vec![0.0; times.len()];
    let mut sum_sq = vec![0.0; times.len()];
    for k in 0..n_dr {
        let r = sampler.sample(realization_seed(job.config.master_seed, k))?;
        let s = analytic_ising_echo(&r.couplings, &times, job.config.detection)?;
        for (i, v) in s.into_iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let dir = job.output_dir(out);
    fs::create_dir_all(&dir)?;
    let path = dir.join("analytic.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["echo_index", "time_s", "mean", "stderr"])?;
    let n = n_dr as f64;
    for i in 0..times.len() {
        let mean = sum[i] / n;
        let stderr = if n_dr > 1 {
            ((sum_sq[i] - n * mean * mean).max(0.0) / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        writer.serialize((index[i], times[i], mean, stderr))?;
    }
    writer.flush()?;
    Ok(path)
}
