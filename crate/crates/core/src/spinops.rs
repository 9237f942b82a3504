//! Spin-1/2 operators and Hamiltonians on the 2^N product basis.
//!
//! Basis index bit `N-1-i` holds spin `i` (spin 0 is the most significant
//! qubit); a clear bit is spin up (`I_z = +1/2`). Hamiltonians are stored as
//! `H/ħ` in rad/s; couplings and offsets enter in Hz and are multiplied by 2π
//! here.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::CouplingTable;
use crate::linalg::{self, CMatrix, HermitianEigen, C64, ONE, ZERO};

pub const MAX_SPINS: usize = 12;

/// Rotation or measurement axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpinAxis {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
    Z,
    /// Transverse axis at phase angle φ (radians) from +X toward +Y.
    Phase(f64),
}

impl SpinAxis {
    /// Transverse phase in radians, `None` for `Z`.
    pub fn phase(self) -> Option<f64> {
        match self {
            SpinAxis::PlusX => Some(0.0),
            SpinAxis::PlusY => Some(FRAC_PI_2),
            SpinAxis::MinusX => Some(PI),
            SpinAxis::MinusY => Some(3.0 * FRAC_PI_2),
            SpinAxis::Z => None,
            SpinAxis::Phase(phi) => Some(phi),
        }
    }

    /// `(cos φ, sin φ)`, exact for the principal axes.
    pub fn transverse_components(self) -> Option<(f64, f64)> {
        match self {
            SpinAxis::PlusX => Some((1.0, 0.0)),
            SpinAxis::MinusX => Some((-1.0, 0.0)),
            SpinAxis::PlusY => Some((0.0, 1.0)),
            SpinAxis::MinusY => Some((0.0, -1.0)),
            SpinAxis::Z => None,
            SpinAxis::Phase(phi) => Some((phi.cos(), phi.sin())),
        }
    }

    /// Maps a phase onto a principal axis when it is one (to 1e-12 rad).
    pub fn from_phase(phi: f64) -> Self {
        let wrapped = phi.rem_euclid(TAU);
        let principal = [
            (0.0, SpinAxis::PlusX),
            (FRAC_PI_2, SpinAxis::PlusY),
            (PI, SpinAxis::MinusX),
            (3.0 * FRAC_PI_2, SpinAxis::MinusY),
            (TAU, SpinAxis::PlusX),
        ];
        for (angle, axis) in principal {
            if (wrapped - angle).abs() < 1e-12 {
                return axis;
            }
        }
        SpinAxis::Phase(phi)
    }

    pub fn is_transverse(self) -> bool {
        self != SpinAxis::Z
    }
}

impl fmt::Display for SpinAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpinAxis::PlusX => write!(f, "+X"),
            SpinAxis::MinusX => write!(f, "-X"),
            SpinAxis::PlusY => write!(f, "+Y"),
            SpinAxis::MinusY => write!(f, "-Y"),
            SpinAxis::Z => write!(f, "Z"),
            SpinAxis::Phase(phi) => write!(f, "{}deg", phi.to_degrees()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    Hermitian,
    Unitary,
    General,
}

/// Dense operator on the 2^N product basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    kind: OperatorKind,
}

impl Operator {
    pub fn new(matrix: CMatrix, kind: OperatorKind) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "operators are square");
        Self { matrix, kind }
    }

    pub fn hermitian(matrix: CMatrix) -> Self {
        Self::new(matrix, OperatorKind::Hermitian)
    }

    pub fn unitary(matrix: CMatrix) -> Self {
        Self::new(matrix, OperatorKind::Unitary)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::hermitian(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(CMatrix::identity(dim, dim), OperatorKind::Unitary)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_spins(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn adjoint(&self) -> Operator {
        Operator::new(self.matrix.adjoint(), self.kind)
    }

    pub fn scaled(&self, factor: f64) -> Operator {
        let kind = match self.kind {
            OperatorKind::Hermitian => OperatorKind::Hermitian,
            _ => OperatorKind::General,
        };
        Operator::new(&self.matrix * C64::new(factor, 0.0), kind)
    }

    pub fn plus(&self, other: &Operator) -> Operator {
        Operator::new(&self.matrix + &other.matrix, combined_kind(self, other))
    }

    pub fn minus(&self, other: &Operator) -> Operator {
        Operator::new(&self.matrix - &other.matrix, combined_kind(self, other))
    }

    pub fn product(&self, other: &Operator) -> Operator {
        let kind = if self.kind == OperatorKind::Unitary && other.kind == OperatorKind::Unitary {
            OperatorKind::Unitary
        } else {
            OperatorKind::General
        };
        Operator::new(linalg::matmul(&self.matrix, &other.matrix), kind)
    }

    /// `[self, other]`
    pub fn commutator(&self, other: &Operator) -> Operator {
        Operator::new(
            linalg::commutator(&self.matrix, &other.matrix),
            OperatorKind::General,
        )
    }

    /// `U A U†`
    pub fn conjugated_by(&self, u: &Operator) -> Operator {
        Operator::new(linalg::conjugate(&u.matrix, &self.matrix), self.kind)
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.matrix)
    }

    pub fn frobenius_norm(&self) -> f64 {
        linalg::frobenius_norm(&self.matrix)
    }

    pub fn max_abs(&self) -> f64 {
        linalg::max_abs(&self.matrix)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        linalg::hermitian_deviation(&self.matrix)
    }

    pub fn unitary_deviation(&self) -> f64 {
        linalg::unitary_deviation(&self.matrix)
    }

    pub fn distance(&self, other: &Operator) -> f64 {
        linalg::frobenius_norm(&(&self.matrix - &other.matrix))
    }

    /// `Frobenius(self - other) / max(Frobenius(other), tiny)`
    pub fn relative_distance(&self, other: &Operator) -> f64 {
        self.distance(other) / other.frobenius_norm().max(f64::MIN_POSITIVE)
    }
}

fn combined_kind(a: &Operator, b: &Operator) -> OperatorKind {
    if a.kind == OperatorKind::Hermitian && b.kind == OperatorKind::Hermitian {
        OperatorKind::Hermitian
    } else {
        OperatorKind::General
    }
}

/// A product of single-spin operators: one nonzero per column.
#[derive(Clone, Debug)]
struct Monomial {
    rows: Vec<usize>,
    vals: Vec<C64>,
}

impl Monomial {
    fn spin(n_spins: usize, index: usize, axis: SpinAxis) -> Self {
        let dim = 1usize << n_spins;
        let mask = 1usize << (n_spins - 1 - index);
        let mut rows = Vec::with_capacity(dim);
        let mut vals = Vec::with_capacity(dim);
        for col in 0..dim {
            let down = col & mask != 0;
            match axis.transverse_components() {
                None => {
                    rows.push(col);
                    vals.push(C64::new(if down { -0.5 } else { 0.5 }, 0.0));
                }
                Some((c, s)) => {
                    // (cos φ σx + sin φ σy)/2: <up|.|down> = e^{-iφ}/2
                    rows.push(col ^ mask);
                    let v = if down { C64::new(c, -s) } else { C64::new(c, s) };
                    vals.push(v * 0.5);
                }
            }
        }
        Self { rows, vals }
    }

    fn times(&self, rhs: &Monomial) -> Monomial {
        let rows = rhs.rows.iter().map(|&r| self.rows[r]).collect();
        let vals = rhs
            .vals
            .iter()
            .zip(&rhs.rows)
            .map(|(&v, &r)| self.vals[r] * v)
            .collect();
        Monomial { rows, vals }
    }

    fn accumulate(&self, target: &mut CMatrix, coeff: f64) {
        for (col, (&row, &val)) in self.rows.iter().zip(&self.vals).enumerate() {
            target[(row, col)] += val * coeff;
        }
    }
}

fn check_size(n_spins: usize) -> Result<()> {
    if n_spins > MAX_SPINS {
        return Err(Error::TooManySpins {
            n_spins,
            max: MAX_SPINS,
        });
    }
    if n_spins == 0 {
        return Err(Error::Parameter("spin count must be at least 1".into()));
    }
    Ok(())
}

/// Spin-1/2 operator `I_axis` acting on spin `index`.
pub fn single_spin_op(n_spins: usize, index: usize, axis: SpinAxis) -> Result<Operator> {
    check_size(n_spins)?;
    if index >= n_spins {
        return Err(Error::SpinIndex { index, n_spins });
    }
    let dim = 1 << n_spins;
    let mut m = CMatrix::zeros(dim, dim);
    Monomial::spin(n_spins, index, axis).accumulate(&mut m, 1.0);
    Ok(Operator::hermitian(m))
}

/// `Σ_i I_axis,i`
pub fn collective_op(n_spins: usize, axis: SpinAxis) -> Result<Operator> {
    check_size(n_spins)?;
    let dim = 1 << n_spins;
    let mut m = CMatrix::zeros(dim, dim);
    for i in 0..n_spins {
        Monomial::spin(n_spins, i, axis).accumulate(&mut m, 1.0);
    }
    Ok(Operator::hermitian(m))
}

/// Builds `Σ_{i<j} 2π B_ij Σ_k c_k I_{a_k,i} I_{b_k,j}`.
fn pair_sum(couplings: &CouplingTable, terms: &[(f64, SpinAxis, SpinAxis)]) -> Result<Operator> {
    couplings.validate()?;
    let n = couplings.n();
    check_size(n)?;
    let dim = 1 << n;
    let mut m = CMatrix::zeros(dim, dim);
    let singles: Vec<[Monomial; 3]> = (0..n)
        .map(|i| {
            [
                Monomial::spin(n, i, SpinAxis::PlusX),
                Monomial::spin(n, i, SpinAxis::PlusY),
                Monomial::spin(n, i, SpinAxis::Z),
            ]
        })
        .collect();
    let pick = |i: usize, axis: SpinAxis| -> &Monomial {
        match axis {
            SpinAxis::PlusX => &singles[i][0],
            SpinAxis::PlusY => &singles[i][1],
            SpinAxis::Z => &singles[i][2],
            _ => unreachable!("pair terms use x, y, z"),
        }
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let b = couplings.get(i, j);
            if b == 0.0 {
                continue;
            }
            for &(c, a1, a2) in terms {
                pick(i, a1).times(pick(j, a2)).accumulate(&mut m, TAU * b * c);
            }
        }
    }
    Ok(Operator::hermitian(m))
}

const X: SpinAxis = SpinAxis::PlusX;
const Y: SpinAxis = SpinAxis::PlusY;
const Z: SpinAxis = SpinAxis::Z;

/// Secular dipolar Hamiltonian `Σ_{i<j} 2π B_ij (3 I_zi I_zj − I_i·I_j)` in rad/s.
pub fn dipolar_hamiltonian(couplings: &CouplingTable) -> Result<Operator> {
    pair_sum(couplings, &[(2.0, Z, Z), (-1.0, X, X), (-1.0, Y, Y)])
}

/// Flip-flop-free (Ising) part: `Σ_{i<j} 2π B_ij · 2 I_zi I_zj`.
pub fn ising_hamiltonian(couplings: &CouplingTable) -> Result<Operator> {
    pair_sum(couplings, &[(2.0, Z, Z)])
}

/// Dipolar operators rotated by the rf toggling frame of a Y pulse.
#[derive(Clone, Debug)]
pub struct RotatedDipolar {
    /// `Σ 2π B (3 I_yi I_yj − I_i·I_j)`
    pub h_yy: Operator,
    /// `Σ 2π (3/2) B (I_xi I_zj + I_zi I_xj)`
    pub h_y_a: Operator,
    /// `Σ 2π (3/2) B (I_zi I_zj − I_xi I_xj)`
    pub h_y_s: Operator,
}

pub fn rotated_dipolar_ops(couplings: &CouplingTable) -> Result<RotatedDipolar> {
    Ok(RotatedDipolar {
        h_yy: pair_sum(couplings, &[(2.0, Y, Y), (-1.0, X, X), (-1.0, Z, Z)])?,
        h_y_a: pair_sum(couplings, &[(1.5, X, Z), (1.5, Z, X)])?,
        h_y_s: pair_sum(couplings, &[(1.5, Z, Z), (-1.5, X, X)])?,
    })
}

/// `Σ_i 2π Ω_i I_zi` for per-spin offsets in Hz.
pub fn zeeman_term(offsets_hz: &[f64]) -> Result<Operator> {
    check_size(offsets_hz.len())?;
    if offsets_hz.iter().any(|o| !o.is_finite()) {
        return Err(Error::NonFinite("offset"));
    }
    let n = offsets_hz.len();
    let dim = 1 << n;
    let mut m = CMatrix::zeros(dim, dim);
    for (i, &omega) in offsets_hz.iter().enumerate() {
        Monomial::spin(n, i, Z).accumulate(&mut m, TAU * omega);
    }
    Ok(Operator::hermitian(m))
}

/// Free-evolution Hamiltonian `H_zz + 2π Ω_z I_zT` (rad/s), Ω_z in Hz.
pub fn free_hamiltonian(couplings: &CouplingTable, omega_z_hz: f64) -> Result<Operator> {
    if !omega_z_hz.is_finite() {
        return Err(Error::NonFinite("omega_z"));
    }
    let h_zz = dipolar_hamiltonian(couplings)?;
    if omega_z_hz == 0.0 {
        return Ok(h_zz);
    }
    let zeeman = zeeman_term(&vec![omega_z_hz; couplings.n()])?;
    Ok(h_zz.plus(&zeeman))
}

/// Hamiltonian during a pulse: `−ω1 I_φT + H0` (rad/s).
pub fn pulse_hamiltonian(phase: SpinAxis, omega1: f64, h0: &Operator) -> Result<Operator> {
    if !phase.is_transverse() {
        return Err(Error::LongitudinalPulse);
    }
    if !(omega1 > 0.0) || !omega1.is_finite() {
        return Err(Error::Parameter(format!("omega1 must be positive, got {omega1}")));
    }
    let rf = collective_op(h0.n_spins(), phase)?;
    Ok(h0.minus(&rf.scaled(omega1)))
}

/// `exp(−i H t)` via hermitian eigendecomposition.
pub fn propagator(h: &Operator, t: f64) -> Result<Operator> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("duration must be finite and non-negative, got {t}")));
    }
    let eig = HermitianEigen::new(h.matrix())?;
    Ok(Operator::unitary(eig.evolve(t)))
}

/// Instantaneous collective rotation `exp(+i·angle·I_φT)`.
///
/// This is the `ω1 → ∞` limit of the propagator of `−ω1 I_φT` over
/// `angle/ω1`, so a `90_X` pulse takes `I_zT` to `+I_yT`.
pub fn delta_pulse(n_spins: usize, angle: f64, phase: SpinAxis) -> Result<Operator> {
    check_size(n_spins)?;
    let r = single_spin_rotation(angle, phase);
    let dim = 1usize << n_spins;
    let mut m = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        for row in 0..dim {
            let mut v = ONE;
            for spin in 0..n_spins {
                let shift = n_spins - 1 - spin;
                v *= r[(row >> shift) & 1][(col >> shift) & 1];
                if v == ZERO {
                    break;
                }
            }
            m[(row, col)] = v;
        }
    }
    Ok(Operator::unitary(m))
}

/// 2×2 matrix of `exp(+i·angle·I_axis)` in the (up, down) basis.
pub fn single_spin_rotation(angle: f64, axis: SpinAxis) -> [[C64; 2]; 2] {
    let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
    match axis.transverse_components() {
        None => [
            [C64::new(c, s), ZERO],
            [ZERO, C64::new(c, -s)],
        ],
        Some((cp, sp)) => {
            // cos(θ/2) + i sin(θ/2) (cos φ σx + sin φ σy)
            let off_up = C64::new(0.0, s) * C64::new(cp, -sp);
            let off_down = C64::new(0.0, s) * C64::new(cp, sp);
            [[C64::new(c, 0.0), off_up], [off_down, C64::new(c, 0.0)]]
        }
    }
}
