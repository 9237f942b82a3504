use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Sequence, SequenceEvent};
use crate::error::{Error, Result};
use crate::spinops::SpinAxis;

/// BB1 correction phase relative to the nominal pulse axis, `arccos(−1/4)`.
pub const BB1_PHASE: f64 = 1.823_476_581_936_975_3;

/// The four π-pulse trains distinguished only by pulse and echo phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableSequence {
    Cp,
    Apcp,
    Cpmg,
    Apcpmg,
}

impl TableSequence {
    pub const ALL: [TableSequence; 4] = [
        TableSequence::Cp,
        TableSequence::Apcp,
        TableSequence::Cpmg,
        TableSequence::Apcpmg,
    ];

    /// (φ1, φ2, SE1, SE2)
    pub fn phases(self) -> [SpinAxis; 4] {
        use SpinAxis::*;
        match self {
            TableSequence::Cp => [PlusX, PlusX, MinusY, PlusY],
            TableSequence::Apcp => [MinusX, PlusX, MinusY, PlusY],
            TableSequence::Cpmg => [PlusY, PlusY, PlusY, PlusY],
            TableSequence::Apcpmg => [MinusY, PlusY, PlusY, PlusY],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TableSequence::Cp => "cp",
            TableSequence::Apcp => "apcp",
            TableSequence::Cpmg => "cpmg",
            TableSequence::Apcpmg => "apcpmg",
        }
    }
}

impl FromStr for TableSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TableSequence::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Unknown {
                kind: "sequence",
                name: s.to_string(),
            })
    }
}

fn excitation() -> Vec<SequenceEvent> {
    vec![SequenceEvent::ideal_pulse(FRAC_PI_2, SpinAxis::PlusX)]
}

/// `90_X - τ - 180_Y - τ - echo(+Y)`
pub fn build_hahn(tau: f64) -> Result<Sequence> {
    positive("tau", tau)?;
    Sequence::new(
        excitation(),
        vec![
            SequenceEvent::delay(tau),
            SequenceEvent::pulse(PI, SpinAxis::PlusY),
            SequenceEvent::delay(tau),
            SequenceEvent::echo(SpinAxis::PlusY),
        ],
        1,
    )
}

/// `90_X - {τ - 180_φ1 - τ - SE1 - τ - 180_φ2 - τ - SE2}^(n/2)`
pub fn build_table1(kind: TableSequence, tau: f64, n_echoes: usize) -> Result<Sequence> {
    positive("tau", tau)?;
    if n_echoes % 2 != 0 {
        return Err(Error::Sequence(format!(
            "{} needs an even echo count, got {n_echoes}",
            kind.name()
        )));
    }
    let [p1, p2, se1, se2] = kind.phases();
    Sequence::new(
        excitation(),
        vec![
            SequenceEvent::delay(tau),
            SequenceEvent::pulse(PI, p1),
            SequenceEvent::delay(tau),
            SequenceEvent::echo(se1),
            SequenceEvent::delay(tau),
            SequenceEvent::pulse(PI, p2),
            SequenceEvent::delay(tau),
            SequenceEvent::echo(se2),
        ],
        n_echoes / 2,
    )
}

/// BB1 composite π pulse about `axis`, contiguous sub-pulses in time order:
/// `180_(φ+β) 360_(φ+3β) 180_(φ+β) 180_φ` with β = arccos(−1/4).
pub fn bb1_composite(axis: SpinAxis) -> Vec<SequenceEvent> {
    let phi = axis.phase().expect("transverse axis");
    let side = SpinAxis::from_phase((phi + BB1_PHASE).rem_euclid(TAU));
    let middle = SpinAxis::from_phase((phi + 3.0 * BB1_PHASE).rem_euclid(TAU));
    vec![
        SequenceEvent::pulse(PI, side),
        SequenceEvent::pulse(TAU, middle),
        SequenceEvent::pulse(PI, side),
        SequenceEvent::pulse(PI, axis),
    ]
}

/// CPMG with every `180_Y` replaced by a BB1 composite.
pub fn build_bb1(tau: f64, n_echoes: usize) -> Result<Sequence> {
    let plain = build_table1(TableSequence::Cpmg, tau, n_echoes)?;
    let cycle = plain
        .cycle
        .iter()
        .flat_map(|e| match *e {
            SequenceEvent::Pulse { phase, .. } => bb1_composite(phase),
            other => vec![other],
        })
        .collect();
    Sequence::new(plain.prologue, cycle, plain.repeats)
}

/// `90_X - {τ - 90_Y - τ - echo}` in cycles of two blocks.
pub fn build_ostroff_waugh(tau: f64, n_cycles: usize) -> Result<Sequence> {
    positive("tau", tau)?;
    let block = [
        SequenceEvent::delay(tau),
        SequenceEvent::pulse(FRAC_PI_2, SpinAxis::PlusY),
        SequenceEvent::delay(tau),
        SequenceEvent::echo(SpinAxis::PlusY),
    ];
    let cycle = block.iter().chain(block.iter()).cloned().collect();
    Sequence::new(excitation(), cycle, n_cycles)
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive, got {value}")))
    }
}

/// Parameters accepted by the named builders.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceParams {
    /// Half the interpulse spacing (s).
    pub tau: f64,
    pub n_echoes: usize,
    /// Two-block cycles for Ostroff-Waugh.
    pub n_cycles: usize,
}

type Builder = fn(&SequenceParams) -> Result<Sequence>;

const BUILDERS: &[(&str, Builder)] = &[
    ("hahn", |p| build_hahn(p.tau)),
    ("cp", |p| build_table1(TableSequence::Cp, p.tau, p.n_echoes)),
    ("apcp", |p| build_table1(TableSequence::Apcp, p.tau, p.n_echoes)),
    ("cpmg", |p| build_table1(TableSequence::Cpmg, p.tau, p.n_echoes)),
    ("apcpmg", |p| build_table1(TableSequence::Apcpmg, p.tau, p.n_echoes)),
    ("bb1_cpmg", |p| build_bb1(p.tau, p.n_echoes)),
    ("ostroff_waugh", |p| build_ostroff_waugh(p.tau, p.n_cycles)),
];

pub fn builder_names() -> impl Iterator<Item = &'static str> {
    BUILDERS.iter().map(|(name, _)| *name)
}

/// Builds a sequence by registered name.
pub fn build(name: &str, params: &SequenceParams) -> Result<Sequence> {
    let (_, builder) = BUILDERS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Unknown {
            kind: "sequence builder",
            name: name.to_string(),
        })?;
    builder(params)
}
