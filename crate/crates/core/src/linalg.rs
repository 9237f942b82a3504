//! Dense complex matrix kernels.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>` (column-major). Products go
//! through `matrixmultiply::zgemm`, which is an order of magnitude faster
//! than nalgebra's generic complex path for the 64..4096 dimensions used
//! here.

use matrixmultiply::CGemmOption;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Which side of a product is taken as its conjugate transpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adj {
    None,
    Left,
    Right,
}

/// `op(a) * op(b)` with `op` selected by `adj`.
pub fn matmul_adj(a: &CMatrix, b: &CMatrix, adj: Adj) -> CMatrix {
    let (am, ak) = match adj {
        Adj::Left => (a.ncols(), a.nrows()),
        _ => (a.nrows(), a.ncols()),
    };
    let (bk, bn) = match adj {
        Adj::Right => (b.ncols(), b.nrows()),
        _ => (b.nrows(), b.ncols()),
    };
    assert_eq!(ak, bk, "inner dimensions differ");
    let mut c = CMatrix::zeros(am, bn);
    if am == 0 || bn == 0 || ak == 0 {
        return c;
    }
    // zgemm has no conjugate flag: conjugate a copy and transpose via strides
    let a_conj;
    let a_src = if adj == Adj::Left {
        a_conj = a.map(|z| z.conj());
        &a_conj
    } else {
        a
    };
    let b_conj;
    let b_src = if adj == Adj::Right {
        b_conj = b.map(|z| z.conj());
        &b_conj
    } else {
        b
    };
    // column-major: element (i, j) at i + j * nrows
    let (ars, acs) = match adj {
        Adj::Left => (a.nrows() as isize, 1),
        _ => (1, a.nrows() as isize),
    };
    let (brs, bcs) = match adj {
        Adj::Right => (b.nrows() as isize, 1),
        _ => (1, b.nrows() as isize),
    };
    let crs = 1;
    let ccs = am as isize;
    // SAFETY: Complex64 is #[repr(C)] { re, im }, layout-identical to [f64; 2];
    // strides describe the column-major storage of each matrix exactly.
    unsafe {
        matrixmultiply::zgemm(
            CGemmOption::Standard,
            CGemmOption::Standard,
            am,
            ak,
            bn,
            [1.0, 0.0],
            a_src.as_ptr() as *const [f64; 2],
            ars,
            acs,
            b_src.as_ptr() as *const [f64; 2],
            brs,
            bcs,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            crs,
            ccs,
        );
    }
    c
}

pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    matmul_adj(a, b, Adj::None)
}

/// `u * m * u†`
pub fn conjugate(u: &CMatrix, m: &CMatrix) -> CMatrix {
    let um = matmul(u, m);
    matmul_adj(&um, u, Adj::Right)
}

/// `u† * m * u`
pub fn conjugate_adj(u: &CMatrix, m: &CMatrix) -> CMatrix {
    let m_u = matmul(m, u);
    matmul_adj(u, &m_u, Adj::Left)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    matmul(a, b) - matmul(b, a)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// `Tr(a * b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entrywise deviation of `m` from hermiticity.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for i in 0..=j {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Largest entrywise deviation of `u† u` from the identity.
pub fn unitary_deviation(u: &CMatrix) -> f64 {
    let p = matmul_adj(u, u, Adj::Left);
    let n = p.nrows();
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { ONE } else { ZERO };
            dev = dev.max((p[(i, j)] - target).norm());
        }
    }
    dev
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &CMatrix) -> f64 {
    let gram = matmul_adj(m, m, Adj::Left);
    let gram = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let eig = gram.symmetric_eigenvalues();
    eig.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

/// Eigendecomposition `H = V diag(λ) V†` of a hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(h: &CMatrix) -> Result<Self> {
        let scale = max_abs(h).max(f64::MIN_POSITIVE);
        let deviation = hermitian_deviation(h);
        if !deviation.is_finite() || deviation > 1e-9 * scale {
            return Err(Error::NotHermitian { deviation });
        }
        let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
        let eig = sym.symmetric_eigen();
        Ok(Self {
            values: eig.eigenvalues.iter().cloned().collect(),
            vectors: eig.eigenvectors,
        })
    }

    /// `exp(-i H t)`
    pub fn evolve(&self, t: f64) -> CMatrix {
        self.apply_fn(|lambda| C64::from_polar(1.0, -lambda * t))
    }

    /// `V diag(f(λ)) V†`
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let w = f(lambda);
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= w);
        }
        matmul_adj(&scaled, &self.vectors, Adj::Right)
    }
}
