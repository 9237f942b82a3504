//! Gauss-Legendre rules and adaptive composite integration of
//! operator-valued functions.

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, CMatrix, C64};

/// Nodes and weights on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Nodes and weights mapped to [a, b].
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

/// `(P_n(x), P_n'(x))`
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub const RULE_ORDER: usize = 12;
const MAX_PANELS: usize = 256;

/// Composite Gauss-Legendre over `[0, length]` with panel doubling until two
/// successive refinements agree to `rel_tol` (relative Frobenius norm).
pub fn integrate(
    length: f64,
    rel_tol: f64,
    mut f: impl FnMut(f64) -> CMatrix,
) -> Result<CMatrix> {
    let rule = GaussLegendre::new(RULE_ORDER);
    let mut panels = 1;
    let mut previous = composite(&rule, length, panels, &mut f);
    loop {
        panels *= 2;
        let current = composite(&rule, length, panels, &mut f);
        let scale = frobenius_norm(&current).max(f64::MIN_POSITIVE);
        let diff = frobenius_norm(&(&current - &previous));
        if diff <= rel_tol * scale || diff == 0.0 {
            return Ok(current);
        }
        if panels >= MAX_PANELS {
            return Err(Error::Quadrature(diff / scale));
        }
        previous = current;
    }
}

fn composite(rule: &GaussLegendre, length: f64, panels: usize, f: &mut impl FnMut(f64) -> CMatrix) -> CMatrix {
    let h = length / panels as f64;
    let mut acc: Option<CMatrix> = None;
    for p in 0..panels {
        let a = p as f64 * h;
        for (t, w) in rule.on(a, a + h) {
            let v = f(t) * C64::new(w, 0.0);
            acc = Some(match acc {
                Some(s) => s + v,
                None => v,
            });
        }
    }
    acc.expect("at least one node")
}
