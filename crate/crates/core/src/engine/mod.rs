//! Density-matrix propagation through sequences and disorder ensembles.
//!
//! The initial state is `I_zT`; prologue pulses are always instantaneous and
//! the clock starts after the prologue. Echo amplitudes are
//! `Tr(ρ D_φ) / Tr(I_yT D_y)` with `D = I_T` or `I_0` projected on the marker
//! phase `φ`.

mod cache;
mod models;
mod oracle;

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::PropagatorCache;
pub use models::{
    create_model, model_names, Averaged, Delta, ExactFinite, InterruptedH0, ModelConfig, PulseModel,
};
pub use oracle::{analytic_ising_echo, trotter_oracle, Piece};

use crate::aht::{average_hamiltonian, toggling_frame};
use crate::error::{Error, Result};
use crate::lattice::{DisorderConfig, DisorderRealization, LatticeSpec, RealizationSampler};
use crate::linalg::{self, CMatrix, HermitianEigen};
use crate::sequence::{PulseWidth, Sequence, SequenceEvent};
use crate::spinops::{
    collective_op, delta_pulse, dipolar_hamiltonian, ising_hamiltonian, single_spin_op, zeeman_term,
    Operator, SpinAxis,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    #[default]
    Total,
    Central,
}

/// Spin-spin interaction used for free evolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    #[default]
    Dipolar,
    /// Flip-flop terms dropped.
    Ising,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub detection: Detection,
    pub interaction: Interaction,
}

/// `H_int + Σ_i 2π Ω_i I_zi` of a realization (rad/s).
pub fn realization_hamiltonian(realization: &DisorderRealization, interaction: Interaction) -> Result<Operator> {
    let h_int = match interaction {
        Interaction::Dipolar => dipolar_hamiltonian(&realization.couplings)?,
        Interaction::Ising => ising_hamiltonian(&realization.couplings)?,
    };
    let offsets = realization.offsets();
    if offsets.iter().all(|&o| o == 0.0) {
        return Ok(h_int);
    }
    Ok(h_int.plus(&zeeman_term(&offsets)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EchoPoint {
    /// Ordinal of the echo marker in the whole sequence.
    pub index: usize,
    pub phase: SpinAxis,
    /// Pulses applied since the end of the prologue.
    pub pulse_count: usize,
}

#[derive(Clone, Debug)]
pub struct Step {
    pub segment: usize,
    pub duration: f64,
    pub echo: EchoPoint,
}

/// Compiled propagation plan of one realization.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub prologue: CMatrix,
    pub segments: Vec<Arc<CMatrix>>,
    pub steps: Vec<Step>,
    /// Distinct event propagators after the prologue.
    pub distinct_propagators: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum EventKey {
    Delay(u64),
    Pulse(u64, u64, bool),
}

fn prologue_propagator(cache: &mut PropagatorCache, prologue: &[SequenceEvent]) -> Result<CMatrix> {
    let n = cache.n_spins();
    let mut u = CMatrix::identity(1 << n, 1 << n);
    for event in prologue {
        let step = match *event {
            SequenceEvent::Pulse { angle, phase, .. } => delta_pulse(n, angle, phase)?.into_matrix(),
            SequenceEvent::Delay { tau } if tau > 0.0 => cache.delay(tau)?.as_ref().clone(),
            _ => continue,
        };
        u = linalg::matmul(&step, &u);
    }
    Ok(u)
}

/// Builds the propagation plan: one step per echo marker for event-wise
/// models, one step per rf cycle for averaged models.
pub fn precompute_propagators(
    cache: &mut PropagatorCache,
    sequence: &Sequence,
    model: &dyn PulseModel,
) -> Result<Schedule> {
    sequence.validate()?;
    let prologue = prologue_propagator(cache, &sequence.prologue)?;
    match model.average_order() {
        Some(order) => stroboscopic_schedule(cache, sequence, model, order, prologue),
        None => eventwise_schedule(cache, sequence, model, prologue),
    }
}

fn eventwise_schedule(
    cache: &mut PropagatorCache,
    sequence: &Sequence,
    model: &dyn PulseModel,
    prologue: CMatrix,
) -> Result<Schedule> {
    let dim = prologue.nrows();
    let mut segment_index: HashMap<Vec<EventKey>, (usize, f64)> = HashMap::new();
    let mut segments = Vec::new();
    let mut distinct = std::collections::HashSet::new();
    let mut steps = Vec::new();
    let mut keys: Vec<EventKey> = Vec::new();
    let mut pending: Vec<SequenceEvent> = Vec::new();
    let mut pulse_count = 0;
    let mut echo_index = 0;
    for _ in 0..sequence.repeats {
        for event in &sequence.cycle {
            match *event {
                SequenceEvent::Delay { tau } => {
                    if tau > 0.0 {
                        keys.push(EventKey::Delay(tau.to_bits()));
                        pending.push(*event);
                    }
                }
                SequenceEvent::Pulse { angle, phase, width } => {
                    let ideal = width == PulseWidth::Delta;
                    keys.push(EventKey::Pulse(
                        angle.to_bits(),
                        phase.phase().unwrap_or(f64::NAN).to_bits(),
                        ideal,
                    ));
                    pending.push(*event);
                    pulse_count += 1;
                }
                SequenceEvent::Echo { expected_phase } => {
                    let (segment, duration) = match segment_index.get(&keys) {
                        Some(&found) => found,
                        None => {
                            let mut u = CMatrix::identity(dim, dim);
                            let mut duration = 0.0;
                            for e in &pending {
                                let (step, dt) = match *e {
                                    SequenceEvent::Delay { tau } => (cache.delay(tau)?, tau),
                                    SequenceEvent::Pulse {
                                        angle,
                                        phase,
                                        width: PulseWidth::Delta,
                                    } => (cache.ideal_pulse(angle, phase)?, 0.0),
                                    SequenceEvent::Pulse { angle, phase, .. } => model.pulse(cache, angle, phase)?,
                                    SequenceEvent::Echo { .. } => unreachable!("echo ends a segment"),
                                };
                                u = linalg::matmul(&step, &u);
                                duration += dt;
                            }
                            distinct.extend(keys.iter().copied());
                            segments.push(Arc::new(u));
                            let entry = (segments.len() - 1, duration);
                            segment_index.insert(keys.clone(), entry);
                            entry
                        }
                    };
                    steps.push(Step {
                        segment,
                        duration,
                        echo: EchoPoint {
                            index: echo_index,
                            phase: expected_phase,
                            pulse_count,
                        },
                    });
                    echo_index += 1;
                    keys.clear();
                    pending.clear();
                }
            }
        }
    }
    Ok(Schedule {
        prologue,
        segments,
        steps,
        distinct_propagators: distinct.len(),
    })
}

fn stroboscopic_schedule(
    cache: &mut PropagatorCache,
    sequence: &Sequence,
    model: &dyn PulseModel,
    order: crate::aht::MagnusOrder,
    prologue: CMatrix,
) -> Result<Schedule> {
    let omega1 = model
        .omega1()
        .ok_or_else(|| Error::Parameter(format!("model '{}' needs omega1", model.name())))?;
    let (events, k) = sequence.aht_cycle()?;
    let frame = toggling_frame(&events, cache.h0(), omega1)?;
    let h_avg = average_hamiltonian(&frame, order)?;
    let eig = HermitianEigen::new(h_avg.matrix())?;
    cache.count_eigendecomposition();
    let u = linalg::matmul(frame.final_frame().matrix(), &eig.evolve(frame.cycle_time()));

    let echoes: Vec<SpinAxis> = events
        .iter()
        .filter_map(|e| match e {
            SequenceEvent::Echo { expected_phase } => Some(*expected_phase),
            _ => None,
        })
        .collect();
    let pulses = events.iter().filter(|e| matches!(e, SequenceEvent::Pulse { .. })).count();
    let steps = (0..sequence.repeats / k)
        .map(|c| Step {
            segment: 0,
            duration: frame.cycle_time(),
            echo: EchoPoint {
                index: (c + 1) * echoes.len() - 1,
                phase: *echoes.last().expect("cycle has echoes"),
                pulse_count: (c + 1) * pulses,
            },
        })
        .collect();
    Ok(Schedule {
        prologue,
        segments: vec![Arc::new(u)],
        steps,
        distinct_propagators: 1,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EchoTrain {
    pub echo_index: Vec<usize>,
    /// Cumulative time after the prologue (s).
    pub times: Vec<f64>,
    /// Amplitude along the marker's expected phase; ideal echoes read +1.
    pub signed: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub pulse_counts: Vec<usize>,
    pub n_detected: usize,
}

impl EchoTrain {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunDiagnostics {
    /// `max |Tr ρ(t) − Tr ρ(0)| / ‖ρ(0)‖_F`
    pub trace_drift: f64,
    /// `max |Tr ρ² − Tr ρ(0)²| / Tr ρ(0)²`
    pub purity_drift: f64,
    pub max_unitary_deviation: f64,
    pub eigendecompositions: usize,
    pub distinct_propagators: usize,
    pub segments: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub train: EchoTrain,
    pub diagnostics: RunDiagnostics,
}

pub type Observer<'a> = &'a mut dyn FnMut(&EchoPoint, f64, &CMatrix);

struct Detector {
    dx: CMatrix,
    dy: CMatrix,
    norm: f64,
    n_detected: usize,
}

impl Detector {
    fn new(n: usize, detection: Detection) -> Result<Self> {
        let (dx, dy, n_detected) = match detection {
            Detection::Total => (
                collective_op(n, SpinAxis::PlusX)?,
                collective_op(n, SpinAxis::PlusY)?,
                n,
            ),
            Detection::Central => (
                single_spin_op(n, 0, SpinAxis::PlusX)?,
                single_spin_op(n, 0, SpinAxis::PlusY)?,
                1,
            ),
        };
        let iy = collective_op(n, SpinAxis::PlusY)?;
        let norm = linalg::trace_product(iy.matrix(), dy.matrix()).re;
        Ok(Self {
            dx: dx.into_matrix(),
            dy: dy.into_matrix(),
            norm,
            n_detected,
        })
    }

    fn measure(&self, rho: &CMatrix, phase: SpinAxis) -> (f64, f64) {
        let sx = linalg::trace_product(rho, &self.dx).re / self.norm;
        let sy = linalg::trace_product(rho, &self.dy).re / self.norm;
        let (c, s) = phase.transverse_components().expect("transverse echo phase");
        (c * sx + s * sy, sx.hypot(sy))
    }
}

pub fn run_dr(
    realization: &DisorderRealization,
    sequence: &Sequence,
    model: &dyn PulseModel,
    detection: Detection,
) -> Result<EchoTrain> {
    let options = RunOptions {
        detection,
        ..Default::default()
    };
    Ok(run_dr_with(realization, sequence, model, options, None)?.train)
}

pub fn run_dr_with(
    realization: &DisorderRealization,
    sequence: &Sequence,
    model: &dyn PulseModel,
    options: RunOptions,
    observer: Option<Observer<'_>>,
) -> Result<RunOutput> {
    let h0 = realization_hamiltonian(realization, options.interaction)?;
    run_hamiltonian(h0, sequence, model, options.detection, observer)
}

/// Propagates `I_zT` under free Hamiltonian `h0`.
pub fn run_hamiltonian(
    h0: Operator,
    sequence: &Sequence,
    model: &dyn PulseModel,
    detection: Detection,
    mut observer: Option<Observer<'_>>,
) -> Result<RunOutput> {
    let n = h0.n_spins();
    let mut cache = PropagatorCache::new(h0);
    let schedule = precompute_propagators(&mut cache, sequence, model)?;
    let detector = Detector::new(n, detection)?;

    let mut max_unitary = linalg::unitary_deviation(&schedule.prologue);
    for u in &schedule.segments {
        max_unitary = max_unitary.max(linalg::unitary_deviation(u));
    }

    let rho0 = collective_op(n, SpinAxis::Z)?.into_matrix();
    let trace0 = linalg::trace(&rho0).re;
    let purity0 = linalg::trace_product(&rho0, &rho0).re;
    let scale = purity0.sqrt();
    let mut rho = linalg::conjugate(&schedule.prologue, &rho0);
    let mut train = EchoTrain {
        n_detected: detector.n_detected,
        ..Default::default()
    };
    let mut diagnostics = RunDiagnostics {
        max_unitary_deviation: max_unitary,
        distinct_propagators: schedule.distinct_propagators,
        segments: schedule.segments.len(),
        ..Default::default()
    };
    let track = |rho: &CMatrix, d: &mut RunDiagnostics| {
        d.trace_drift = d.trace_drift.max((linalg::trace(rho).re - trace0).abs() / scale);
        let purity = linalg::trace_product(rho, rho).re;
        d.purity_drift = d.purity_drift.max((purity - purity0).abs() / purity0);
    };
    track(&rho, &mut diagnostics);

    let mut time = 0.0;
    for step in &schedule.steps {
        rho = linalg::conjugate(&schedule.segments[step.segment], &rho);
        time += step.duration;
        track(&rho, &mut diagnostics);
        let (signed, magnitude) = detector.measure(&rho, step.echo.phase);
        train.echo_index.push(step.echo.index);
        train.times.push(time);
        train.signed.push(signed);
        train.magnitudes.push(magnitude);
        train.pulse_counts.push(step.echo.pulse_count);
        if let Some(obs) = observer.as_mut() {
            obs(&step.echo, time, &rho);
        }
    }
    diagnostics.eigendecompositions = cache.eigendecompositions();
    Ok(RunOutput { train, diagnostics })
}

const SEED_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of realization `k`: the splitmix64 finalizer applied to
/// `master + (k + 1)·0x9E3779B97F4A7C15`.
pub fn realization_seed(master: u64, k: usize) -> u64 {
    let mut z = master.wrapping_add((k as u64).wrapping_add(1).wrapping_mul(SEED_INCREMENT));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct EnsembleSpec<'a> {
    pub lattice: &'a LatticeSpec,
    pub disorder: &'a DisorderConfig,
    pub sequence: &'a Sequence,
    pub model: &'a dyn PulseModel,
    pub n_dr: usize,
    pub master_seed: u64,
    pub options: RunOptions,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub echo_index: Vec<usize>,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub magnitude_mean: Vec<f64>,
    pub n_dr: usize,
    pub detection: Detection,
    pub seeds: Vec<u64>,
    pub diagnostics: RunDiagnostics,
}

/// Runs `n_dr` realizations in parallel and reduces in ascending index
/// order, so the result does not depend on the worker count.
pub fn run_ensemble(spec: &EnsembleSpec<'_>) -> Result<EnsembleResult> {
    run_ensemble_with(spec, |_, _, _| Ok(()))
}

/// Like [`run_ensemble`], also handing every realization's output to
/// `inspect` (called from worker threads).
pub fn run_ensemble_with<F>(spec: &EnsembleSpec<'_>, inspect: F) -> Result<EnsembleResult>
where
    F: Fn(usize, &DisorderRealization, &RunOutput) -> Result<()> + Sync,
{
    if spec.n_dr == 0 {
        return Err(Error::Parameter("n_dr must be at least 1".into()));
    }
    let sampler = RealizationSampler::new(spec.lattice, spec.disorder)?;
    let seeds: Vec<u64> = (0..spec.n_dr).map(|k| realization_seed(spec.master_seed, k)).collect();
    let work = |k: usize| -> Result<RunOutput> {
        let wrap = |e: Error| Error::Realization {
            index: k,
            source: Box::new(e),
        };
        let realization = sampler.sample(seeds[k]).map_err(wrap)?;
        let out = run_dr_with(&realization, spec.sequence, spec.model, spec.options, None).map_err(wrap)?;
        inspect(k, &realization, &out).map_err(wrap)?;
        Ok(out)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
    let outputs: Vec<Result<RunOutput>> = pool.install(|| (0..spec.n_dr).into_par_iter().map(work).collect());
    let outputs: Vec<RunOutput> = outputs.into_iter().collect::<Result<_>>()?;
    Ok(reduce(outputs, seeds, spec.options.detection))
}

fn reduce(outputs: Vec<RunOutput>, seeds: Vec<u64>, detection: Detection) -> EnsembleResult {
    let n = outputs.len();
    let first = &outputs[0].train;
    let m = first.len();
    let mut mean = vec![0.0; m];
    let mut magnitude_mean = vec![0.0; m];
    let mut diagnostics = RunDiagnostics::default();
    for out in &outputs {
        for j in 0..m {
            mean[j] += out.train.signed[j];
            magnitude_mean[j] += out.train.magnitudes[j];
        }
        let d = &out.diagnostics;
        diagnostics.trace_drift = diagnostics.trace_drift.max(d.trace_drift);
        diagnostics.purity_drift = diagnostics.purity_drift.max(d.purity_drift);
        diagnostics.max_unitary_deviation = diagnostics.max_unitary_deviation.max(d.max_unitary_deviation);
        diagnostics.eigendecompositions = diagnostics.eigendecompositions.max(d.eigendecompositions);
        diagnostics.distinct_propagators = diagnostics.distinct_propagators.max(d.distinct_propagators);
        diagnostics.segments = diagnostics.segments.max(d.segments);
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    magnitude_mean.iter_mut().for_each(|v| *v /= n as f64);
    let stderr = (0..m)
        .map(|j| {
            if n < 2 {
                return 0.0;
            }
            let ss: f64 = outputs.iter().map(|o| (o.train.signed[j] - mean[j]).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        })
        .collect();
    EnsembleResult {
        echo_index: first.echo_index.clone(),
        times: first.times.clone(),
        mean,
        stderr,
        magnitude_mean,
        n_dr: n,
        detection,
        seeds,
        diagnostics,
    }
}
