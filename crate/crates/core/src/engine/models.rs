//! Pulse models: how a finite-width pulse in a sequence is propagated.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cache::PropagatorCache;
use crate::aht::MagnusOrder;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::spinops::SpinAxis;

pub trait PulseModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Nutation rate in rad/s, when the model has finite pulses.
    fn omega1(&self) -> Option<f64>;

    /// Propagator of a pulse and the time it takes.
    fn pulse(&self, cache: &mut PropagatorCache, angle: f64, phase: SpinAxis) -> Result<(Arc<CMatrix>, f64)>;

    /// Magnus order for stroboscopic evolution; `None` propagates event by event.
    fn average_order(&self) -> Option<MagnusOrder> {
        None
    }
}

/// Instantaneous rotations.
#[derive(Clone, Copy, Debug, Default)]
pub struct Delta;

impl PulseModel for Delta {
    fn name(&self) -> &'static str {
        "delta"
    }

    fn omega1(&self) -> Option<f64> {
        None
    }

    fn pulse(&self, cache: &mut PropagatorCache, angle: f64, phase: SpinAxis) -> Result<(Arc<CMatrix>, f64)> {
        Ok((cache.ideal_pulse(angle, phase)?, 0.0))
    }
}

/// `exp(−i(H0 − s·ω1 I_φT)·angle/ω1)`; `s ≠ 1` models a miscalibrated nutation rate.
#[derive(Clone, Copy, Debug)]
pub struct ExactFinite {
    pub omega1: f64,
    pub rotation_scale: f64,
}

impl PulseModel for ExactFinite {
    fn name(&self) -> &'static str {
        "exact_finite"
    }

    fn omega1(&self) -> Option<f64> {
        Some(self.omega1)
    }

    fn pulse(&self, cache: &mut PropagatorCache, angle: f64, phase: SpinAxis) -> Result<(Arc<CMatrix>, f64)> {
        let t = angle / self.omega1;
        Ok((cache.finite_pulse(t, phase, self.omega1 * self.rotation_scale)?, t))
    }
}

/// Ideal rotation with `H0` switched off, but the pulse width still elapses.
#[derive(Clone, Copy, Debug)]
pub struct InterruptedH0 {
    pub omega1: f64,
}

impl PulseModel for InterruptedH0 {
    fn name(&self) -> &'static str {
        "interrupted_h0"
    }

    fn omega1(&self) -> Option<f64> {
        Some(self.omega1)
    }

    fn pulse(&self, cache: &mut PropagatorCache, angle: f64, phase: SpinAxis) -> Result<(Arc<CMatrix>, f64)> {
        Ok((cache.ideal_pulse(angle, phase)?, angle / self.omega1))
    }
}

/// Stroboscopic evolution under the cycle's average Hamiltonian.
#[derive(Clone, Copy, Debug)]
pub struct Averaged {
    pub omega1: f64,
    pub order: MagnusOrder,
}

impl PulseModel for Averaged {
    fn name(&self) -> &'static str {
        match self.order {
            MagnusOrder::Zeroth => "avg_h0",
            MagnusOrder::ZerothPlusFirst => "avg_h0_h1",
        }
    }

    fn omega1(&self) -> Option<f64> {
        Some(self.omega1)
    }

    fn pulse(&self, cache: &mut PropagatorCache, angle: f64, phase: SpinAxis) -> Result<(Arc<CMatrix>, f64)> {
        let t = angle / self.omega1;
        Ok((cache.finite_pulse(t, phase, self.omega1)?, t))
    }

    fn average_order(&self) -> Option<MagnusOrder> {
        Some(self.order)
    }
}

/// Serializable model selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// ω1/2π in Hz.
    pub omega1_over_2pi: Option<f64>,
    pub rotation_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            name: "delta".into(),
            omega1_over_2pi: None,
            rotation_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn named(name: &str, omega1_over_2pi: Option<f64>) -> Self {
        Self {
            name: name.into(),
            omega1_over_2pi,
            rotation_scale: 1.0,
        }
    }

    fn omega1(&self) -> Result<f64> {
        let f = self.omega1_over_2pi.ok_or_else(|| {
            Error::Parameter(format!("pulse model '{}' needs omega1_over_2pi", self.name))
        })?;
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Parameter(format!("omega1_over_2pi must be positive, got {f}")));
        }
        Ok(std::f64::consts::TAU * f)
    }
}

type Constructor = fn(&ModelConfig) -> Result<Box<dyn PulseModel>>;

const MODELS: &[(&str, Constructor)] = &[
    ("delta", |_| Ok(Box::new(Delta))),
    ("exact_finite", |c| {
        if !(c.rotation_scale > 0.0 && c.rotation_scale.is_finite()) {
            return Err(Error::Parameter("rotation_scale must be positive".into()));
        }
        Ok(Box::new(ExactFinite {
            omega1: c.omega1()?,
            rotation_scale: c.rotation_scale,
        }))
    }),
    ("interrupted_h0", |c| Ok(Box::new(InterruptedH0 { omega1: c.omega1()? }))),
    ("avg_h0", |c| {
        Ok(Box::new(Averaged {
            omega1: c.omega1()?,
            order: MagnusOrder::Zeroth,
        }))
    }),
    ("avg_h0_h1", |c| {
        Ok(Box::new(Averaged {
            omega1: c.omega1()?,
            order: MagnusOrder::ZerothPlusFirst,
        }))
    }),
];

pub fn model_names() -> impl Iterator<Item = &'static str> {
    MODELS.iter().map(|(n, _)| *n)
}

pub fn create_model(config: &ModelConfig) -> Result<Box<dyn PulseModel>> {
    let (_, ctor) = MODELS
        .iter()
        .find(|(n, _)| *n == config.name)
        .ok_or_else(|| Error::Unknown {
            kind: "pulse model",
            name: config.name.clone(),
        })?;
    ctor(config)
}
