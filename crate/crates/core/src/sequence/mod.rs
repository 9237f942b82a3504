//! Pulse sequences as event lists.

mod builders;
mod dsl;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use builders::{
    bb1_composite, build, build_bb1, build_hahn, build_ostroff_waugh, build_table1, builder_names, SequenceParams,
    TableSequence, BB1_PHASE,
};
pub use dsl::{parse_sequence, render_sequence};

use crate::error::{Error, Result};
use crate::linalg::{C64, ONE, ZERO};
use crate::spinops::{single_spin_rotation, SpinAxis};

/// Whether a pulse follows the run's pulse model or is always instantaneous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseWidth {
    Delta,
    Finite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceEvent {
    Pulse {
        angle: f64,
        phase: SpinAxis,
        width: PulseWidth,
    },
    Delay {
        tau: f64,
    },
    Echo {
        expected_phase: SpinAxis,
    },
}

impl SequenceEvent {
    pub fn pulse(angle: f64, phase: SpinAxis) -> Self {
        SequenceEvent::Pulse {
            angle,
            phase,
            width: PulseWidth::Finite,
        }
    }

    pub fn ideal_pulse(angle: f64, phase: SpinAxis) -> Self {
        SequenceEvent::Pulse {
            angle,
            phase,
            width: PulseWidth::Delta,
        }
    }

    pub fn delay(tau: f64) -> Self {
        SequenceEvent::Delay { tau }
    }

    pub fn echo(expected_phase: SpinAxis) -> Self {
        SequenceEvent::Echo { expected_phase }
    }

    /// Wall-clock duration with finite pulses lasting `angle/ω1`.
    pub fn duration(&self, omega1: Option<f64>) -> f64 {
        match *self {
            SequenceEvent::Delay { tau } => tau,
            SequenceEvent::Pulse {
                angle,
                width: PulseWidth::Finite,
                ..
            } => omega1.map_or(0.0, |w| angle / w),
            _ => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SequenceEvent::Pulse { angle, phase, .. } => {
                if !(angle > 0.0) || !angle.is_finite() {
                    return Err(Error::Sequence(format!("pulse angle must be positive, got {angle}")));
                }
                if !phase.is_transverse() {
                    return Err(Error::LongitudinalPulse);
                }
            }
            SequenceEvent::Delay { tau } => {
                if !(tau >= 0.0) || !tau.is_finite() {
                    return Err(Error::Sequence(format!("delay must be non-negative, got {tau}")));
                }
            }
            SequenceEvent::Echo { expected_phase } => {
                if !expected_phase.is_transverse() {
                    return Err(Error::Sequence("echo phase must be transverse".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub prologue: Vec<SequenceEvent>,
    pub cycle: Vec<SequenceEvent>,
    pub repeats: usize,
}

impl Sequence {
    pub fn new(prologue: Vec<SequenceEvent>, cycle: Vec<SequenceEvent>, repeats: usize) -> Result<Self> {
        let seq = Self {
            prologue,
            cycle,
            repeats,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        for e in self.prologue.iter().chain(&self.cycle) {
            e.validate()?;
        }
        if self.prologue.iter().any(|e| matches!(e, SequenceEvent::Echo { .. })) {
            return Err(Error::Sequence("echo markers are not allowed in the prologue".into()));
        }
        if self.repeats > 0 && self.echoes_per_cycle() == 0 {
            return Err(Error::Sequence("cycle contains no echo marker".into()));
        }
        Ok(())
    }

    pub fn echoes_per_cycle(&self) -> usize {
        self.cycle
            .iter()
            .filter(|e| matches!(e, SequenceEvent::Echo { .. }))
            .count()
    }

    pub fn n_echoes(&self) -> usize {
        self.echoes_per_cycle() * self.repeats
    }

    /// Prologue followed by every repetition of the cycle.
    pub fn events(&self) -> impl Iterator<Item = &SequenceEvent> {
        self.prologue
            .iter()
            .chain((0..self.repeats).flat_map(move |_| self.cycle.iter()))
    }

    /// Σ delays + Σ finite pulse widths over the whole sequence.
    pub fn total_time(&self, omega1: Option<f64>) -> f64 {
        self.events().map(|e| e.duration(omega1)).sum()
    }

    /// Copy with every pulse phase replaced by `f(phase)`.
    pub fn map_phases(&self, f: impl Fn(SpinAxis) -> SpinAxis) -> Sequence {
        let map = |events: &[SequenceEvent]| {
            events
                .iter()
                .map(|e| match *e {
                    SequenceEvent::Pulse { angle, phase, width } => SequenceEvent::Pulse {
                        angle,
                        phase: f(phase),
                        width,
                    },
                    other => other,
                })
                .collect()
        };
        Sequence {
            prologue: map(&self.prologue),
            cycle: map(&self.cycle),
            repeats: self.repeats,
        }
    }

    /// The shortest repetition of the cycle (at most four copies) whose net
    /// rf rotation is the identity, with the number of copies.
    pub fn aht_cycle(&self) -> Result<(Vec<SequenceEvent>, usize)> {
        let mut last_err = None;
        for k in 1..=4 {
            let events: Vec<SequenceEvent> = (0..k).flat_map(|_| self.cycle.iter().cloned()).collect();
            match check_cyclic(&events) {
                Ok(()) => return Ok((events, k)),
                Err(e) => {
                    if k == 1 {
                        last_err = Some(e);
                    }
                }
            }
        }
        Err(last_err.expect("first attempt recorded"))
    }
}

/// Net rotation of a pulse train.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetRotation {
    /// Rotation angle in [0, 2π].
    pub angle: f64,
    pub axis: [f64; 3],
}

/// Single-spin rf propagator of the pulses in `events`, in time order.
pub fn rf_unitary(events: &[SequenceEvent]) -> [[C64; 2]; 2] {
    let mut u = [[ONE, ZERO], [ZERO, ONE]];
    for e in events {
        if let SequenceEvent::Pulse { angle, phase, .. } = *e {
            let r = single_spin_rotation(angle, phase);
            u = mul2(&r, &u);
        }
    }
    u
}

fn mul2(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let mut c = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn net_rotation(events: &[SequenceEvent]) -> NetRotation {
    let u = rf_unitary(events);
    // u = cos(θ/2) + i sin(θ/2) n·σ
    let c = u[0][0].re;
    let s_n = [u[0][1].im, u[0][1].re, u[0][0].im];
    let s = (s_n[0] * s_n[0] + s_n[1] * s_n[1] + s_n[2] * s_n[2]).sqrt();
    let angle = 2.0 * s.atan2(c);
    let axis = if s > 1e-15 {
        [s_n[0] / s, s_n[1] / s, s_n[2] / s]
    } else {
        [0.0, 0.0, 1.0]
    };
    NetRotation { angle, axis }
}

/// Rf-cyclicity: `|Tr U_rf| / 2 = 1` within 1e-10.
pub fn check_cyclic(events: &[SequenceEvent]) -> Result<()> {
    let u = rf_unitary(events);
    let tr = (u[0][0] + u[1][1]).norm() / 2.0;
    if (tr - 1.0).abs() <= 1e-10 {
        return Ok(());
    }
    let rot = net_rotation(events);
    let angle = if rot.angle > PI { 2.0 * PI - rot.angle } else { rot.angle };
    let sign = if rot.angle > PI { -1.0 } else { 1.0 };
    Err(Error::NotCyclic {
        angle_deg: angle.to_degrees(),
        axis_x: sign * rot.axis[0],
        axis_y: sign * rot.axis[1],
        axis_z: sign * rot.axis[2],
    })
}
