//! Reference propagators independent of the eigendecomposition path.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::lattice::CouplingTable;
use crate::linalg::{self, CMatrix, C64};
use crate::spinops::Operator;

use super::Detection;

/// A constant Hamiltonian `Σ terms` held for `duration`.
#[derive(Clone, Debug)]
pub struct Piece {
    pub terms: Vec<Operator>,
    pub duration: f64,
}

/// `exp(−i H dt)` by scaled Taylor series and repeated squaring.
fn taylor_exp(h: &CMatrix, dt: f64) -> CMatrix {
    let dim = h.nrows();
    let norm = linalg::frobenius_norm(h) * dt.abs();
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.25 {
        squarings += 1;
    }
    let a = h * C64::new(0.0, -dt / 2f64.powi(squarings));
    let mut result = CMatrix::identity(dim, dim);
    let mut term = CMatrix::identity(dim, dim);
    for k in 1..=30 {
        term = linalg::matmul(&term, &a) / C64::new(k as f64, 0.0);
        result += &term;
        if linalg::max_abs(&term) < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = linalg::matmul(&result, &result);
    }
    result
}

/// First-order Lie-Trotter propagator: for every step of every piece,
/// `Π_terms exp(−i H_term dt)` in order.
pub fn trotter_oracle(pieces: &[Piece], dt: f64) -> Result<Operator> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    let dim = pieces
        .iter()
        .flat_map(|p| p.terms.first())
        .map(|t| t.dim())
        .next()
        .ok_or_else(|| Error::Parameter("no Hamiltonian terms".into()))?;
    let mut u = CMatrix::identity(dim, dim);
    for piece in pieces {
        let steps = (piece.duration / dt).round();
        if (steps * dt - piece.duration).abs() > 1e-9 * piece.duration.max(dt) {
            return Err(Error::Parameter(format!(
                "dt {dt} does not divide duration {}",
                piece.duration
            )));
        }
        let mut step = CMatrix::identity(dim, dim);
        for term in &piece.terms {
            if term.dim() != dim {
                return Err(Error::Dimension(format!("term of dimension {} in a {dim} system", term.dim())));
            }
            step = linalg::matmul(&taylor_exp(term.matrix(), dt), &step);
        }
        for _ in 0..steps as usize {
            u = linalg::matmul(&step, &u);
        }
    }
    Ok(Operator::unitary(u))
}

/// Flip-flop-free echo envelope `S_i(t) = Π_{j≠i} cos(2π B_ij t)`, averaged
/// over `i` for total detection or `S_0` for central detection.
pub fn analytic_ising_echo(couplings: &CouplingTable, times: &[f64], detection: Detection) -> Result<Vec<f64>> {
    couplings.validate()?;
    if times.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::Parameter("times must be non-negative".into()));
    }
    let n = couplings.n();
    let spin_signal = |i: usize, t: f64| -> f64 {
        (0..n)
            .filter(|&j| j != i)
            .map(|j| (TAU * couplings.get(i, j) * t).cos())
            .product()
    };
    Ok(times
        .iter()
        .map(|&t| match detection {
            Detection::Central => spin_signal(0, t),
            Detection::Total => (0..n).map(|i| spin_signal(i, t)).sum::<f64>() / n as f64,
        })
        .collect())
}
