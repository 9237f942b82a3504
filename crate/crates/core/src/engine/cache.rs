use std::collections::HashMap;
use std::sync::Arc;

use crate::error::Result;
use crate::linalg::{CMatrix, HermitianEigen};
use crate::spinops::{delta_pulse, pulse_hamiltonian, Operator, SpinAxis};

/// Per-realization propagators. One eigendecomposition of `H0` serves every
/// delay; each distinct `(phase, ω1)` pulse Hamiltonian is decomposed once.
#[derive(Debug)]
pub struct PropagatorCache {
    h0: Operator,
    free: Option<HermitianEigen>,
    pulse_eigen: HashMap<(u64, u64), HermitianEigen>,
    delays: HashMap<u64, Arc<CMatrix>>,
    finite: HashMap<(u64, u64, u64), Arc<CMatrix>>,
    ideal: HashMap<(u64, u64), Arc<CMatrix>>,
    eigendecompositions: usize,
}

fn phase_key(phase: SpinAxis) -> u64 {
    phase.phase().unwrap_or(f64::NAN).to_bits()
}

impl PropagatorCache {
    pub fn new(h0: Operator) -> Self {
        Self {
            h0,
            free: None,
            pulse_eigen: HashMap::new(),
            delays: HashMap::new(),
            finite: HashMap::new(),
            ideal: HashMap::new(),
            eigendecompositions: 0,
        }
    }

    pub fn h0(&self) -> &Operator {
        &self.h0
    }

    pub fn n_spins(&self) -> usize {
        self.h0.n_spins()
    }

    pub fn eigendecompositions(&self) -> usize {
        self.eigendecompositions
    }

    pub fn count_eigendecomposition(&mut self) {
        self.eigendecompositions += 1;
    }

    /// `exp(−i H0 τ)`
    pub fn delay(&mut self, tau: f64) -> Result<Arc<CMatrix>> {
        if let Some(u) = self.delays.get(&tau.to_bits()) {
            return Ok(u.clone());
        }
        if self.free.is_none() {
            self.free = Some(HermitianEigen::new(self.h0.matrix())?);
            self.eigendecompositions += 1;
        }
        let u = Arc::new(self.free.as_ref().expect("decomposed").evolve(tau));
        self.delays.insert(tau.to_bits(), u.clone());
        Ok(u)
    }

    /// `exp(−i (H0 − ω1 I_φT) t)`
    pub fn finite_pulse(&mut self, t: f64, phase: SpinAxis, omega1: f64) -> Result<Arc<CMatrix>> {
        let key = (t.to_bits(), phase_key(phase), omega1.to_bits());
        if let Some(u) = self.finite.get(&key) {
            return Ok(u.clone());
        }
        let eig_key = (key.1, key.2);
        if !self.pulse_eigen.contains_key(&eig_key) {
            let h = pulse_hamiltonian(phase, omega1, &self.h0)?;
            self.pulse_eigen.insert(eig_key, HermitianEigen::new(h.matrix())?);
            self.eigendecompositions += 1;
        }
        let u = Arc::new(self.pulse_eigen[&eig_key].evolve(t));
        self.finite.insert(key, u.clone());
        Ok(u)
    }

    /// `exp(+i angle I_φT)`
    pub fn ideal_pulse(&mut self, angle: f64, phase: SpinAxis) -> Result<Arc<CMatrix>> {
        let key = (angle.to_bits(), phase_key(phase));
        if let Some(u) = self.ideal.get(&key) {
            return Ok(u.clone());
        }
        let u = Arc::new(delta_pulse(self.n_spins(), angle, phase)?.into_matrix());
        self.ideal.insert(key, u.clone());
        Ok(u)
    }
}
