//! Toggling-frame Hamiltonians and the first two Magnus (average
//! Hamiltonian) terms of an rf-cyclic pulse cycle.
//!
//! All operators are in rad/s. With `H̃(t) = U_rf†(t) H0 U_rf(t)` over a
//! cycle of length `t_c`:
//!
//! ```text
//! H̄⁽⁰⁾ = (1/t_c) ∫ H̃(t) dt
//! H̄⁽¹⁾ = (−i / 2t_c) ∫dt₂ ∫^{t₂}dt₁ [H̃(t₂), H̃(t₁)]
//! ```
//!
//! Interval pairs factorize: for `k > l` the double integral is `[Q_k, Q_l]`
//! with `Q_k = ∫_k H̃`. Delays contribute exactly; pulse intervals use the
//! finite Fourier series of `H̃` in the nutation angle, falling back to
//! nested Gauss-Legendre quadrature.

use std::f64::consts::{PI, TAU};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{CouplingTable, DisorderRealization};
use crate::linalg::{self, spectral_norm, CMatrix, HermitianEigen, C64, I};
use crate::quadrature::{self, GaussLegendre, RULE_ORDER};
use crate::sequence::{check_cyclic, PulseWidth, SequenceEvent};
use crate::spinops::{
    collective_op, delta_pulse, free_hamiltonian, pulse_hamiltonian, rotated_dipolar_ops,
    zeeman_term, Operator, OperatorKind, SpinAxis,
};

/// Relative tolerance for single integrals over pulse intervals.
pub const MAGNUS0_TOL: f64 = 1e-12;
/// Relative tolerance for the nested within-pulse integrals.
pub const MAGNUS1_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum IntervalKind {
    /// Free evolution; the toggled Hamiltonian is constant.
    Delay { h: Operator },
    /// Constant-axis rotation at `omega1` starting from `frame`.
    Pulse {
        phase: SpinAxis,
        omega1: f64,
        angle: f64,
        frame: Operator,
    },
}

#[derive(Clone, Debug)]
pub struct Interval {
    pub start: f64,
    pub duration: f64,
    pub kind: IntervalKind,
}

impl Interval {
    /// Short label: `delay` or `pulse <angle>_<phase>`.
    pub fn tag(&self) -> String {
        match &self.kind {
            IntervalKind::Delay { .. } => "delay".into(),
            IntervalKind::Pulse { phase, angle, .. } => {
                format!("pulse {}_{}", format_angle(*angle), phase)
            }
        }
    }
}

fn format_angle(angle: f64) -> String {
    let deg = angle.to_degrees();
    if (deg - deg.round()).abs() < 1e-9 {
        format!("{}", deg.round())
    } else {
        format!("{deg:.4}")
    }
}

#[derive(Clone, Debug)]
pub struct TogglingFrame {
    h0: Operator,
    intervals: Vec<Interval>,
    cycle_time: f64,
    final_frame: Operator,
}

impl TogglingFrame {
    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn cycle_time(&self) -> f64 {
        self.cycle_time
    }

    pub fn h0(&self) -> &Operator {
        &self.h0
    }

    /// Rf-only propagator over the whole cycle (a global phase when cyclic).
    pub fn final_frame(&self) -> &Operator {
        &self.final_frame
    }

    /// `H̃` at local time `t` within interval `k`.
    pub fn sample(&self, k: usize, t: f64) -> Operator {
        Operator::hermitian(self.sample_matrix(k, t))
    }

    fn sample_matrix(&self, k: usize, t: f64) -> CMatrix {
        match &self.intervals[k].kind {
            IntervalKind::Delay { h } => h.matrix().clone(),
            IntervalKind::Pulse {
                phase,
                omega1,
                frame,
                ..
            } => {
                let n = self.h0.n_spins();
                let rot = delta_pulse(n, omega1 * t, *phase).expect("valid spin count");
                let u = linalg::matmul(rot.matrix(), frame.matrix());
                linalg::conjugate_adj(&u, self.h0.matrix())
            }
        }
    }
}

/// Builds the toggling frame of an rf-cyclic `cycle` with finite pulses of
/// width `angle/omega1`. Echo markers are ignored; adjacent delays merge.
pub fn toggling_frame(cycle: &[SequenceEvent], h0: &Operator, omega1: f64) -> Result<TogglingFrame> {
    check_cyclic(cycle)?;
    if !(omega1 > 0.0) {
        return Err(Error::Parameter(format!("omega1 must be positive, got {omega1}")));
    }
    let n = h0.n_spins();
    let mut frame = Operator::identity(h0.dim());
    let mut intervals: Vec<Interval> = Vec::new();
    let mut t = 0.0;
    for event in cycle {
        match *event {
            SequenceEvent::Delay { tau } => {
                if tau == 0.0 {
                    continue;
                }
                if let Some(Interval {
                    duration,
                    kind: IntervalKind::Delay { .. },
                    ..
                }) = intervals.last_mut()
                {
                    *duration += tau;
                } else {
                    let h = Operator::hermitian(linalg::conjugate_adj(frame.matrix(), h0.matrix()));
                    intervals.push(Interval {
                        start: t,
                        duration: tau,
                        kind: IntervalKind::Delay { h },
                    });
                }
                t += tau;
            }
            SequenceEvent::Pulse { angle, phase, width } => {
                let rot = delta_pulse(n, angle, phase)?;
                if width == PulseWidth::Finite {
                    let tp = angle / omega1;
                    intervals.push(Interval {
                        start: t,
                        duration: tp,
                        kind: IntervalKind::Pulse {
                            phase,
                            omega1,
                            angle,
                            frame: frame.clone(),
                        },
                    });
                    t += tp;
                }
                frame = rot.product(&frame);
            }
            SequenceEvent::Echo { .. } => {}
        }
    }
    if t <= 0.0 {
        return Err(Error::Sequence("cycle has zero duration".into()));
    }
    Ok(TogglingFrame {
        h0: h0.clone(),
        intervals,
        cycle_time: t,
        final_frame: frame,
    })
}

/// Fourier coefficients of `H̃` over a pulse interval. `H0` built from
/// one- and two-spin terms only carries rotation frequencies `q ∈ {−2..2}`,
/// so `H̃(t) = Σ_q C_q e^{iqω₁t}` exactly.
struct PulseSeries {
    coeffs: Vec<CMatrix>,
    omega: f64,
    duration: f64,
}

const MAX_FREQ: i32 = 2;

impl PulseSeries {
    fn new(frame: &TogglingFrame, k: usize) -> Option<Self> {
        let IntervalKind::Pulse { omega1, .. } = frame.intervals[k].kind else {
            return None;
        };
        let m = (2 * MAX_FREQ + 1) as usize;
        let dim = frame.h0.dim();
        let samples: Vec<CMatrix> = (0..m)
            .map(|j| frame.sample_matrix(k, TAU * j as f64 / m as f64 / omega1))
            .collect();
        let coeffs: Vec<CMatrix> = (-MAX_FREQ..=MAX_FREQ)
            .map(|q| {
                let mut c = CMatrix::zeros(dim, dim);
                for (j, s) in samples.iter().enumerate() {
                    let w = C64::from_polar(1.0 / m as f64, -TAU * (q as f64) * j as f64 / m as f64);
                    c += s * w;
                }
                c
            })
            .collect();
        let series = Self {
            coeffs,
            omega: omega1,
            duration: frame.intervals[k].duration,
        };
        // band-limit check away from the sample grid
        let t = 0.6180339887 * series.duration;
        let direct = frame.sample_matrix(k, t);
        let scale = linalg::frobenius_norm(&direct).max(linalg::frobenius_norm(frame.h0.matrix()));
        let err = linalg::frobenius_norm(&(&direct - series.eval(t)));
        (err <= 1e-12 * scale.max(f64::MIN_POSITIVE)).then_some(series)
    }

    fn eval(&self, t: f64) -> CMatrix {
        let dim = self.coeffs[0].nrows();
        let mut acc = CMatrix::zeros(dim, dim);
        for (c, q) in self.coeffs.iter().zip(-MAX_FREQ..=MAX_FREQ) {
            acc += c * C64::from_polar(1.0, q as f64 * self.omega * t);
        }
        acc
    }

    /// `∫_0^T e^{iqωt} dt`
    fn e1(&self, q: i32) -> C64 {
        let t = self.duration;
        if q == 0 {
            return C64::new(t, 0.0);
        }
        let y = q as f64 * self.omega * t;
        let half = (0.5 * y).sin();
        let expm1 = C64::new(-2.0 * half * half, y.sin());
        expm1 / C64::new(0.0, q as f64 * self.omega)
    }

    /// `∫_0^T dt₂ e^{ipωt₂} ∫_0^{t₂} e^{iqωt₁} dt₁`
    fn e2(&self, p: i32, q: i32) -> C64 {
        let t = self.duration;
        if q != 0 {
            return (self.e1(p + q) - self.e1(p)) / C64::new(0.0, q as f64 * self.omega);
        }
        if p == 0 {
            return C64::new(0.5 * t * t, 0.0);
        }
        let a = C64::new(0.0, p as f64 * self.omega);
        let e = C64::from_polar(1.0, p as f64 * self.omega * t);
        e * t / a - self.e1(p) / a
    }

    fn integral(&self) -> CMatrix {
        let dim = self.coeffs[0].nrows();
        let mut acc = CMatrix::zeros(dim, dim);
        for (c, q) in self.coeffs.iter().zip(-MAX_FREQ..=MAX_FREQ) {
            acc += c * self.e1(q);
        }
        acc
    }

    fn nested_commutator(&self) -> CMatrix {
        let dim = self.coeffs[0].nrows();
        let mut acc = CMatrix::zeros(dim, dim);
        let freqs: Vec<i32> = (-MAX_FREQ..=MAX_FREQ).collect();
        for a in 0..freqs.len() {
            for b in (a + 1)..freqs.len() {
                let (p, q) = (freqs[a], freqs[b]);
                let w = self.e2(p, q) - self.e2(q, p);
                acc += linalg::commutator(&self.coeffs[a], &self.coeffs[b]) * w;
            }
        }
        acc
    }
}

/// `Q_k = ∫_k H̃` for every interval, with the series of pulse intervals.
fn interval_integrals(frame: &TogglingFrame) -> Result<(Vec<CMatrix>, Vec<Option<PulseSeries>>)> {
    let mut integrals = Vec::with_capacity(frame.intervals.len());
    let mut series = Vec::with_capacity(frame.intervals.len());
    for (k, iv) in frame.intervals.iter().enumerate() {
        match &iv.kind {
            IntervalKind::Delay { h } => {
                integrals.push(h.matrix() * C64::new(iv.duration, 0.0));
                series.push(None);
            }
            IntervalKind::Pulse { .. } => match PulseSeries::new(frame, k) {
                Some(s) => {
                    integrals.push(s.integral());
                    series.push(Some(s));
                }
                None => {
                    integrals.push(quadrature::integrate(iv.duration, MAGNUS0_TOL, |t| {
                        frame.sample_matrix(k, t)
                    })?);
                    series.push(None);
                }
            },
        }
    }
    Ok((integrals, series))
}

fn hermitian_part(m: CMatrix) -> Operator {
    let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    Operator::new(h, OperatorKind::Hermitian)
}

pub fn magnus0(frame: &TogglingFrame) -> Result<Operator> {
    let (q, _) = interval_integrals(frame)?;
    let dim = frame.h0.dim();
    let sum = q.into_iter().fold(CMatrix::zeros(dim, dim), |acc, m| acc + m);
    Ok(hermitian_part(sum / C64::new(frame.cycle_time, 0.0)))
}

/// `∫_0^T dt₂ ∫_0^{t₂} dt₁ [H̃(t₂), H̃(t₁)]` over one pulse interval by
/// nested composite Gauss-Legendre.
fn within_pulse_quadrature(frame: &TogglingFrame, k: usize) -> Result<CMatrix> {
    let length = frame.intervals[k].duration;
    let rule = GaussLegendre::new(RULE_ORDER);
    let sample = |t: f64| frame.sample_matrix(k, t);
    let nested = |panels: usize| -> CMatrix {
        let h = length / panels as f64;
        let dim = frame.h0.dim();
        let mut prefix = CMatrix::zeros(dim, dim);
        let mut acc = CMatrix::zeros(dim, dim);
        for p in 0..panels {
            let a = p as f64 * h;
            for (t2, w2) in rule.on(a, a + h) {
                let h2 = sample(t2);
                let mut partial = prefix.clone();
                for (t1, w1) in rule.on(a, t2) {
                    partial += sample(t1) * C64::new(w1, 0.0);
                }
                acc += linalg::commutator(&h2, &partial) * C64::new(w2, 0.0);
            }
            let mut panel = CMatrix::zeros(dim, dim);
            for (t, w) in rule.on(a, a + h) {
                panel += sample(t) * C64::new(w, 0.0);
            }
            prefix += panel;
        }
        acc
    };
    let mut panels = 1;
    let mut previous = nested(panels);
    let scale = {
        let h_norm = linalg::frobenius_norm(frame.h0.matrix());
        (h_norm * h_norm * length * length).max(f64::MIN_POSITIVE)
    };
    loop {
        panels *= 2;
        let current = nested(panels);
        let diff = linalg::frobenius_norm(&(&current - &previous));
        if diff <= MAGNUS1_TOL * scale {
            return Ok(current);
        }
        if panels >= 64 {
            return Err(Error::Quadrature(diff / scale));
        }
        previous = current;
    }
}

pub fn magnus1(frame: &TogglingFrame) -> Result<Operator> {
    let (q, series) = interval_integrals(frame)?;
    let dim = frame.h0.dim();
    let mut total = CMatrix::zeros(dim, dim);
    let mut prefix = CMatrix::zeros(dim, dim);
    for (k, qk) in q.iter().enumerate() {
        if matches!(frame.intervals[k].kind, IntervalKind::Pulse { .. }) {
            total += match &series[k] {
                Some(s) => s.nested_commutator(),
                None => within_pulse_quadrature(frame, k)?,
            };
        }
        total += linalg::commutator(qk, &prefix);
        prefix += qk;
    }
    let factor = -I / C64::new(2.0 * frame.cycle_time, 0.0);
    Ok(hermitian_part(total * factor))
}

#[derive(Clone, Debug)]
pub struct MagnusTerms {
    pub h0: Operator,
    pub h1: Operator,
    pub t_c: f64,
}

/// CPMG cycle `{τ-180_Y-2τ-180_Y-τ}` average Hamiltonian in closed form:
///
/// ```text
/// H̄⁽⁰⁾ = (4τ H_zz − t_p H_yy) / t_c
/// H̄⁽¹⁾ = (−i/2t_c)(t_p/π) { t_p [H_Y^A, H_Y^S + H_yy]
///                            + (8τ + 2t_p) [Ω I_xT, Ω I_zT + H_yy] }
/// ```
/// with `Ω = 2π Ω_z` and `t_c = 4τ + 2t_p`.
pub fn cpmg_closed_forms(couplings: &CouplingTable, omega_z_hz: f64, tau: f64, t_p: f64) -> Result<MagnusTerms> {
    if !(tau > 0.0 && t_p > 0.0) {
        return Err(Error::Parameter("tau and t_p must be positive".into()));
    }
    let n = couplings.n();
    let t_c = 4.0 * tau + 2.0 * t_p;
    let h_zz = crate::spinops::dipolar_hamiltonian(couplings)?;
    let rot = rotated_dipolar_ops(couplings)?;
    let h0 = h_zz.scaled(4.0 * tau).minus(&rot.h_yy.scaled(t_p)).scaled(1.0 / t_c);

    let omega = 2.0 * PI * omega_z_hz;
    let ix = collective_op(n, SpinAxis::PlusX)?.scaled(omega);
    let iz = collective_op(n, SpinAxis::Z)?.scaled(omega);
    let pulse_term = rot.h_y_a.commutator(&rot.h_y_s.plus(&rot.h_yy)).scaled(t_p);
    let offset_term = if omega_z_hz == 0.0 {
        Operator::new(CMatrix::zeros(h_zz.dim(), h_zz.dim()), OperatorKind::General)
    } else {
        ix.commutator(&iz.plus(&rot.h_yy)).scaled(8.0 * tau + 2.0 * t_p)
    };
    let bracket = pulse_term.matrix() + offset_term.matrix();
    let factor = -I / C64::new(2.0 * t_c, 0.0) * (t_p / PI);
    Ok(MagnusTerms {
        h0,
        h1: hermitian_part(bracket * factor),
        t_c,
    })
}

/// Offset commutator of the CPMG first-order term alone (zero when Ω_z = 0).
pub fn cpmg_offset_commutator(n_spins: usize, couplings: &CouplingTable, omega_z_hz: f64) -> Result<Operator> {
    let omega = 2.0 * PI * omega_z_hz;
    let ix = collective_op(n_spins, SpinAxis::PlusX)?.scaled(omega);
    let iz = collective_op(n_spins, SpinAxis::Z)?.scaled(omega);
    let h_yy = rotated_dipolar_ops(couplings)?.h_yy;
    Ok(ix.commutator(&iz.plus(&h_yy)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MagnusOrder {
    Zeroth,
    ZerothPlusFirst,
}

/// Average Hamiltonian of a cycle to the requested order.
pub fn average_hamiltonian(frame: &TogglingFrame, order: MagnusOrder) -> Result<Operator> {
    let h0 = magnus0(frame)?;
    match order {
        MagnusOrder::Zeroth => Ok(h0),
        MagnusOrder::ZerothPlusFirst => Ok(h0.plus(&magnus1(frame)?)),
    }
}

/// Free Hamiltonian of a realization, honoring per-spin offsets.
pub fn realization_hamiltonian(realization: &DisorderRealization) -> Result<Operator> {
    match &realization.spin_offsets {
        None => free_hamiltonian(&realization.couplings, realization.omega_z),
        Some(offsets) => {
            let h_zz = crate::spinops::dipolar_hamiltonian(&realization.couplings)?;
            Ok(h_zz.plus(&zeeman_term(offsets)?))
        }
    }
}

/// Exact propagator of `cycle` with finite pulses (H0 kept on during pulses).
pub fn exact_cycle_propagator(h0: &Operator, cycle: &[SequenceEvent], omega1: f64) -> Result<Operator> {
    let n = h0.n_spins();
    let free = HermitianEigen::new(h0.matrix())?;
    let mut u = Operator::identity(h0.dim());
    for event in cycle {
        let step = match *event {
            SequenceEvent::Delay { tau } => Operator::unitary(free.evolve(tau)),
            SequenceEvent::Pulse { angle, phase, width } => match width {
                PulseWidth::Delta => delta_pulse(n, angle, phase)?,
                PulseWidth::Finite => {
                    let hp = pulse_hamiltonian(phase, omega1, h0)?;
                    Operator::unitary(HermitianEigen::new(hp.matrix())?.evolve(angle / omega1))
                }
            },
            SequenceEvent::Echo { .. } => continue,
        };
        u = step.product(&u);
    }
    Ok(u)
}

/// Spectral norm of `U_exact − U_rf · exp(−i H̄ t_c)` over one cycle.
pub fn cycle_defect(
    realization: &DisorderRealization,
    cycle: &[SequenceEvent],
    omega1: f64,
    order: MagnusOrder,
) -> Result<f64> {
    let h0 = realization_hamiltonian(realization)?;
    defect_for_hamiltonian(&h0, cycle, omega1, order)
}

pub fn defect_for_hamiltonian(h0: &Operator, cycle: &[SequenceEvent], omega1: f64, order: MagnusOrder) -> Result<f64> {
    let frame = toggling_frame(cycle, h0, omega1)?;
    let avg = average_hamiltonian(&frame, order)?;
    let approx = HermitianEigen::new(avg.matrix())?.evolve(frame.cycle_time());
    let approx = linalg::matmul(frame.final_frame().matrix(), &approx);
    let exact = exact_cycle_propagator(h0, cycle, omega1)?;
    Ok(spectral_norm(&(exact.matrix() - approx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{build_ostroff_waugh, build_table1, TableSequence};
    use crate::spinops::dipolar_hamiltonian;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn couplings(n: usize, seed: u64, scale: f64) -> CouplingTable {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let mut t = CouplingTable::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                t.set(i, j, scale * next());
            }
        }
        t
    }

    fn cpmg_cycle(tau: f64) -> Vec<SequenceEvent> {
        build_table1(TableSequence::Cpmg, tau, 2).unwrap().cycle
    }

    #[test]
    fn cpmg_frame_matches_toggling_table() {
        let t = couplings(3, 1, 800.0);
        let omega_z = 150.0;
        let omega1 = TAU * 40e3;
        let h0 = free_hamiltonian(&t, omega_z).unwrap();
        let frame = toggling_frame(&cpmg_cycle(1e-6), &h0, omega1).unwrap();
        let tags: Vec<String> = frame.intervals().iter().map(|i| i.tag()).collect();
        assert_eq!(tags, ["delay", "pulse 180_+Y", "delay", "pulse 180_+Y", "delay"]);
        assert!((frame.intervals()[2].duration - 2e-6).abs() < 1e-20);

        let h_zz = dipolar_hamiltonian(&t).unwrap();
        let iz = collective_op(3, SpinAxis::Z).unwrap().scaled(TAU * omega_z);
        let ix = collective_op(3, SpinAxis::PlusX).unwrap().scaled(TAU * omega_z);
        let rot = rotated_dipolar_ops(&t).unwrap();
        let tol = 1e-10 * h0.frobenius_norm();
        assert!(frame.sample(0, 0.3e-6).distance(&iz.plus(&h_zz)) < tol);
        assert!(frame.sample(2, 1.0e-6).distance(&h_zz.minus(&iz)) < tol);
        let mid = frame.sample(1, FRAC_PI_2 / omega1);
        let expected = ix.minus(&rot.h_yy.scaled(0.5)).minus(&rot.h_y_s);
        assert!(mid.distance(&expected) < tol);
    }

    #[test]
    fn non_cyclic_cycle_is_rejected() {
        let seq = build_ostroff_waugh(1e-6, 1).unwrap();
        let h0 = free_hamiltonian(&couplings(2, 3, 100.0), 0.0).unwrap();
        assert!(matches!(toggling_frame(&seq.cycle, &h0, 1e5), Err(Error::NotCyclic { .. })));
    }

    #[test]
    fn magnus0_matches_cpmg_closed_form() {
        let t = couplings(3, 5, 1500.0);
        let omega1 = TAU * 40e3;
        let (tau, tp) = (1e-6, PI / omega1);
        for omega_z in [0.0, 300.0] {
            let h0 = free_hamiltonian(&t, omega_z).unwrap();
            let frame = toggling_frame(&cpmg_cycle(tau), &h0, omega1).unwrap();
            let generic = magnus0(&frame).unwrap();
            let closed = cpmg_closed_forms(&t, omega_z, tau, tp).unwrap();
            assert!((frame.cycle_time() - closed.t_c).abs() < 1e-18);
            assert!(generic.relative_distance(&closed.h0) < 1e-10);
            assert!(generic.hermitian_deviation() < 1e-10 * generic.max_abs());
        }
    }

    #[test]
    fn short_pulse_limit_of_magnus0_is_h_zz() {
        let t = couplings(3, 8, 1000.0);
        let h0 = dipolar_hamiltonian(&t).unwrap();
        let frame = toggling_frame(&cpmg_cycle(5e-6), &h0, TAU * 1e9).unwrap();
        assert!(magnus0(&frame).unwrap().relative_distance(&h0) < 1e-4);
    }

    #[test]
    fn magnus1_vanishes_without_interactions() {
        let h0 = Operator::zeros(8);
        let frame = toggling_frame(&cpmg_cycle(1e-6), &h0, TAU * 40e3).unwrap();
        assert_eq!(magnus1(&frame).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn magnus1_is_quadratic_in_h0() {
        let t = couplings(3, 2, 900.0);
        let omega1 = TAU * 40e3;
        let h0 = free_hamiltonian(&t, 200.0).unwrap();
        let h0x2 = free_hamiltonian(&t.scaled(2.0), 400.0).unwrap();
        let m1 = magnus1(&toggling_frame(&cpmg_cycle(2e-6), &h0, omega1).unwrap()).unwrap();
        let m2 = magnus1(&toggling_frame(&cpmg_cycle(2e-6), &h0x2, omega1).unwrap()).unwrap();
        assert!(m2.relative_distance(&m1.scaled(4.0)) < 1e-8);
    }

    #[test]
    fn closed_form_quoted_timing() {
        let omega1 = TAU * 40e3;
        let tp = PI / omega1;
        assert!((tp - 12.5e-6).abs() < 1e-15);
        let terms = cpmg_closed_forms(&couplings(2, 1, 10.0), 0.0, 1e-6, tp).unwrap();
        assert!((terms.t_c - 29e-6).abs() < 1e-15);
        let offset = cpmg_offset_commutator(2, &couplings(2, 1, 10.0), 0.0).unwrap();
        assert_eq!(offset.max_abs(), 0.0);
    }

    #[test]
    fn defect_vanishes_without_interactions() {
        let r = DisorderRealization::from_couplings(CouplingTable::zeros(3), 0.0);
        let d = cycle_defect(&r, &cpmg_cycle(1e-6), TAU * 40e3, MagnusOrder::ZerothPlusFirst).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn magnus1_matches_cpmg_closed_form() {
        let t = couplings(3, 11, 1200.0);
        let omega1 = TAU * 40e3;
        let (tau, tp) = (1e-6, PI / omega1);
        for omega_z in [0.0, 250.0] {
            let h0 = free_hamiltonian(&t, omega_z).unwrap();
            let frame = toggling_frame(&cpmg_cycle(tau), &h0, omega1).unwrap();
            let generic = magnus1(&frame).unwrap();
            let closed = cpmg_closed_forms(&t, omega_z, tau, tp).unwrap();
            let d = generic.relative_distance(&closed.h1);
            assert!(d < 1e-6, "omega_z={omega_z}: {d}");
        }
    }

    #[test]
    fn ostroff_waugh_magnus0_is_minus_half_h_yy() {
        let t = couplings(3, 4, 900.0);
        let seq = build_ostroff_waugh(2e-6, 1).unwrap();
        let (cycle, _) = seq.aht_cycle().unwrap();
        let h0 = dipolar_hamiltonian(&t).unwrap();
        let expected = rotated_dipolar_ops(&t).unwrap().h_yy.scaled(-0.5);
        for omega1 in [TAU * 40e3, TAU * 1e9] {
            let frame = toggling_frame(&cycle, &h0, omega1).unwrap();
            let m0 = magnus0(&frame).unwrap();
            assert!(m0.relative_distance(&expected) < 1e-10, "{}", m0.relative_distance(&expected));
        }
    }

    #[test]
    fn first_order_defect_scales_as_third_power() {
        let t = couplings(3, 9, 800.0);
        let omega1 = TAU * 40e3;
        let cycle = cpmg_cycle(1e-6);
        let r1 = DisorderRealization::from_couplings(t.clone(), 150.0);
        let r2 = DisorderRealization::from_couplings(t.scaled(0.5), 75.0);
        let d1 = cycle_defect(&r1, &cycle, omega1, MagnusOrder::ZerothPlusFirst).unwrap();
        let d2 = cycle_defect(&r2, &cycle, omega1, MagnusOrder::ZerothPlusFirst).unwrap();
        let ratio = d1 / d2;
        assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
        let d0 = cycle_defect(&r1, &cycle, omega1, MagnusOrder::Zeroth).unwrap();
        assert!(d1 <= d0, "{d1} > {d0}");
    }

    #[test]
    fn pulse_series_agrees_with_quadrature() {
        let t = couplings(3, 21, 1500.0);
        let h0 = free_hamiltonian(&t, 400.0).unwrap();
        let seq = crate::sequence::build_bb1(1e-6, 2).unwrap();
        let frame = toggling_frame(&seq.cycle, &h0, TAU * 40e3).unwrap();
        for (k, iv) in frame.intervals().iter().enumerate() {
            if let IntervalKind::Pulse { .. } = iv.kind {
                let s = PulseSeries::new(&frame, k).expect("band limited");
                let q = quadrature::integrate(iv.duration, 1e-13, |x| frame.sample_matrix(k, x)).unwrap();
                assert!(linalg::frobenius_norm(&(s.integral() - &q)) < 1e-11 * linalg::frobenius_norm(&q));
                let w = within_pulse_quadrature(&frame, k).unwrap();
                let d = linalg::frobenius_norm(&(s.nested_commutator() - &w));
                assert!(d < 1e-9 * linalg::frobenius_norm(&w).max(1e-300), "{d}");
            }
        }
    }
}
