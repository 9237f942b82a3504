//! Coherence-order decomposition, ensemble-averaged density matrices and
//! snapshot export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{realization_seed, run_dr_with, EnsembleSpec};
use crate::error::{Error, Result};
use crate::lattice::RealizationSampler;
use crate::linalg::{CMatrix, C64};

fn spin_count(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::Dimension(format!("{dim} is not a power of two")));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// Total `I_z` eigenvalue of every basis state (bit 0 = spin up).
pub fn basis_m(n_spins: usize) -> Vec<f64> {
    (0..1usize << n_spins)
        .map(|s| n_spins as f64 / 2.0 - s.count_ones() as f64)
        .collect()
}

/// Basis permutation sorted by `M` descending, then index.
pub fn basis_order(n_spins: usize) -> Vec<usize> {
    let m = basis_m(n_spins);
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&a, &b| m[b].total_cmp(&m[a]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoherenceDecomposition {
    pub n_spins: usize,
    /// `A_m` for `m = −N..=N`.
    pub amplitudes: Vec<f64>,
}

impl CoherenceDecomposition {
    pub fn amplitude(&self, m: i32) -> f64 {
        let n = self.n_spins as i32;
        if m.abs() > n {
            return 0.0;
        }
        self.amplitudes[(m + n) as usize]
    }

    pub fn orders(&self) -> impl Iterator<Item = i32> {
        let n = self.n_spins as i32;
        -n..=n
    }

    /// `Σ_{|m|≠1} A_m`
    pub fn outside_single_quantum(&self) -> f64 {
        self.orders().filter(|m| m.abs() != 1).map(|m| self.amplitude(m)).sum()
    }
}

/// `A_m = sqrt(Σ |ρ_ab|²)` over elements with `M_a − M_b = m`.
pub fn coherence_orders(rho: &CMatrix) -> Result<CoherenceDecomposition> {
    if rho.nrows() != rho.ncols() {
        return Err(Error::Dimension("density matrix must be square".into()));
    }
    let n = spin_count(rho.nrows())?;
    let mut sums = vec![0.0; 2 * n + 1];
    for b in 0..rho.ncols() {
        for a in 0..rho.nrows() {
            // M_a − M_b = popcount(b) − popcount(a)
            let m = b.count_ones() as i64 - a.count_ones() as i64;
            sums[(m + n as i64) as usize] += rho[(a, b)].norm_sqr();
        }
    }
    Ok(CoherenceDecomposition {
        n_spins: n,
        amplitudes: sums.into_iter().map(f64::sqrt).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotSource {
    Realization(usize),
    Averaged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub echo_index: usize,
    pub pulse_count: usize,
    pub source: SnapshotSource,
    pub rho: CMatrix,
}

/// Entrywise mean of snapshots taken at the same instant.
pub fn average_density_matrix(snapshots: &[Snapshot]) -> Result<Snapshot> {
    let first = snapshots
        .first()
        .ok_or_else(|| Error::Parameter("no snapshots to average".into()))?;
    let mut sum = CMatrix::zeros(first.rho.nrows(), first.rho.ncols());
    for s in snapshots {
        if s.rho.shape() != first.rho.shape() {
            return Err(Error::Dimension(format!(
                "snapshot of shape {:?} among {:?}",
                s.rho.shape(),
                first.rho.shape()
            )));
        }
        if (s.time - first.time).abs() > 1e-12 * first.time.abs().max(1e-300) || s.echo_index != first.echo_index {
            return Err(Error::Parameter(format!(
                "snapshot times differ: {} vs {}",
                s.time, first.time
            )));
        }
        sum += &s.rho;
    }
    Ok(Snapshot {
        time: first.time,
        echo_index: first.echo_index,
        pulse_count: first.pulse_count,
        source: SnapshotSource::Averaged,
        rho: sum / C64::new(snapshots.len() as f64, 0.0),
    })
}

#[derive(Serialize, Deserialize)]
struct BasisJson {
    m: Vec<f64>,
    order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotJson {
    n_spins: usize,
    dim: usize,
    time_s: f64,
    echo_index: usize,
    pulse_count: usize,
    realization: serde_json::Value,
    basis: BasisJson,
    /// Row-major `[re, im]` pairs.
    rho: Vec<[f64; 2]>,
}

pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// Pixel colour for a complex entry: white at phase 0, red at +π/2, blue at
/// −π/2, purple (128, 0, 128) at ±π, linear in between.
pub fn phase_color(z: C64) -> [u8; 3] {
    use std::f64::consts::FRAC_PI_2;
    let phi = z.arg();
    let lerp = |a: [f64; 3], b: [f64; 3], f: f64| -> [u8; 3] {
        let mut out = [0u8; 3];
        for i in 0..3 {
            out[i] = (a[i] + (b[i] - a[i]) * f).round().clamp(0.0, 255.0) as u8;
        }
        out
    };
    const WHITE: [f64; 3] = [255.0, 255.0, 255.0];
    const RED: [f64; 3] = [255.0, 0.0, 0.0];
    const BLUE: [f64; 3] = [0.0, 0.0, 255.0];
    const PURPLE: [f64; 3] = [128.0, 0.0, 128.0];
    if phi >= 0.0 {
        if phi <= FRAC_PI_2 {
            lerp(WHITE, RED, phi / FRAC_PI_2)
        } else {
            lerp(RED, PURPLE, (phi - FRAC_PI_2) / FRAC_PI_2)
        }
    } else if phi >= -FRAC_PI_2 {
        lerp(WHITE, BLUE, -phi / FRAC_PI_2)
    } else {
        lerp(BLUE, PURPLE, (-phi - FRAC_PI_2) / FRAC_PI_2)
    }
}

/// P6 image bytes with rows and columns in [`basis_order`].
pub fn render_ppm(rho: &CMatrix, threshold: f64) -> Result<Vec<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let n = spin_count(rho.nrows())?;
    let dim = rho.nrows();
    let order = basis_order(n);
    let max = rho.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let cut = threshold * max;
    let mut out = format!("P6\n{dim} {dim}\n255\n").into_bytes();
    for &a in &order {
        for &b in &order {
            let z = rho[(a, b)];
            let px = if max == 0.0 || z.norm() < cut {
                [0, 0, 0]
            } else {
                phase_color(z)
            };
            out.extend_from_slice(&px);
        }
    }
    Ok(out)
}

fn snapshot_json(s: &Snapshot) -> Result<SnapshotJson> {
    let n = spin_count(s.rho.nrows())?;
    let dim = s.rho.nrows();
    let mut rho = Vec::with_capacity(dim * dim);
    for a in 0..dim {
        for b in 0..dim {
            let z = s.rho[(a, b)];
            rho.push([z.re, z.im]);
        }
    }
    Ok(SnapshotJson {
        n_spins: n,
        dim,
        time_s: s.time,
        echo_index: s.echo_index,
        pulse_count: s.pulse_count,
        realization: match s.source {
            SnapshotSource::Realization(k) => serde_json::Value::from(k),
            SnapshotSource::Averaged => serde_json::Value::from("averaged"),
        },
        basis: BasisJson {
            m: basis_m(n),
            order: basis_order(n),
        },
        rho,
    })
}

/// Writes `<base>.json` and `<base>.ppm`.
pub fn export_snapshot(snapshot: &Snapshot, base: &Path, threshold: f64) -> Result<(PathBuf, PathBuf)> {
    let image = render_ppm(&snapshot.rho, threshold)?;
    let json_path = base.with_extension("json");
    let ppm_path = base.with_extension("ppm");
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(&json_path)?;
    serde_json::to_writer(&mut f, &snapshot_json(snapshot)?)?;
    f.write_all(b"\n")?;
    fs::write(&ppm_path, image)?;
    Ok((json_path, ppm_path))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let parsed: SnapshotJson = serde_json::from_slice(&fs::read(path)?)?;
    if parsed.rho.len() != parsed.dim * parsed.dim {
        return Err(Error::Dimension(format!(
            "{} entries for dimension {}",
            parsed.rho.len(),
            parsed.dim
        )));
    }
    let rho = CMatrix::from_fn(parsed.dim, parsed.dim, |a, b| {
        let [re, im] = parsed.rho[a * parsed.dim + b];
        C64::new(re, im)
    });
    let source = match &parsed.realization {
        serde_json::Value::Number(k) => SnapshotSource::Realization(
            k.as_u64()
                .ok_or_else(|| Error::Parameter("realization id must be an integer".into()))? as usize,
        ),
        _ => SnapshotSource::Averaged,
    };
    Ok(Snapshot {
        time: parsed.time_s,
        echo_index: parsed.echo_index,
        pulse_count: parsed.pulse_count,
        source,
        rho,
    })
}

/// Realization 0 and the ensemble average at each scheduled echo.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub single: Vec<Snapshot>,
    pub averaged: Vec<Snapshot>,
}

/// Records the density matrix at `echo_indices` for every realization of
/// `spec` and averages them in ascending realization order.
pub fn ensemble_snapshots(spec: &EnsembleSpec<'_>, echo_indices: &[usize]) -> Result<SnapshotSet> {
    if echo_indices.is_empty() {
        return Ok(SnapshotSet {
            single: Vec::new(),
            averaged: Vec::new(),
        });
    }
    if spec.n_dr == 0 {
        return Err(Error::Parameter("n_dr must be at least 1".into()));
    }
    let sampler = RealizationSampler::new(spec.lattice, spec.disorder)?;
    let work = |k: usize| -> Result<Vec<Snapshot>> {
        let wrap = |e: Error| Error::Realization {
            index: k,
            source: Box::new(e),
        };
        let realization = sampler.sample(realization_seed(spec.master_seed, k)).map_err(wrap)?;
        let taken = Mutex::new(Vec::new());
        let mut observer = |p: &crate::engine::EchoPoint, t: f64, rho: &CMatrix| {
            if echo_indices.contains(&p.index) {
                taken.lock().expect("not poisoned").push(Snapshot {
                    time: t,
                    echo_index: p.index,
                    pulse_count: p.pulse_count,
                    source: SnapshotSource::Realization(k),
                    rho: rho.clone(),
                });
            }
        };
        run_dr_with(&realization, spec.sequence, spec.model, spec.options, Some(&mut observer)).map_err(wrap)?;
        let taken = taken.into_inner().expect("not poisoned");
        for &e in echo_indices {
            if !taken.iter().any(|s| s.echo_index == e) {
                return Err(wrap(Error::Parameter(format!(
                    "echo {e} is not recorded by model '{}'",
                    spec.model.name()
                ))));
            }
        }
        Ok(taken)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
    let per: Vec<Result<Vec<Snapshot>>> = pool.install(|| (0..spec.n_dr).into_par_iter().map(work).collect());
    let per: Vec<Vec<Snapshot>> = per.into_iter().collect::<Result<_>>()?;
    let single = per[0].clone();
    let averaged = (0..single.len())
        .map(|j| {
            let column: Vec<Snapshot> = per.iter().map(|v| v[j].clone()).collect();
            average_density_matrix(&column)
        })
        .collect::<Result<_>>()?;
    Ok(SnapshotSet { single, averaged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinops::{collective_op, SpinAxis};

    fn snap(rho: CMatrix) -> Snapshot {
        Snapshot {
            time: 1e-3,
            echo_index: 2,
            pulse_count: 2,
            source: SnapshotSource::Realization(0),
            rho,
        }
    }

    #[test]
    fn collective_operators_have_expected_orders() {
        let iy = collective_op(3, SpinAxis::PlusY).unwrap().into_matrix();
        let d = coherence_orders(&iy).unwrap();
        for m in d.orders() {
            assert_eq!(d.amplitude(m) > 0.0, m.abs() == 1, "order {m}");
        }
        assert_eq!(d.amplitude(1), d.amplitude(-1));
        let iz = collective_op(3, SpinAxis::Z).unwrap().into_matrix();
        let d = coherence_orders(&iz).unwrap();
        assert!(d.orders().all(|m| (d.amplitude(m) > 0.0) == (m == 0)));
    }

    #[test]
    fn basis_order_sorts_by_m() {
        assert_eq!(basis_m(2), vec![1.0, 0.0, 0.0, -1.0]);
        assert_eq!(basis_order(2), vec![0, 1, 2, 3]);
        assert_eq!(basis_order(3), vec![0, 1, 2, 4, 3, 5, 6, 7]);
    }

    #[test]
    fn averaging() {
        let iy = collective_op(2, SpinAxis::PlusY).unwrap().into_matrix();
        let a = snap(iy.clone());
        assert_eq!(average_density_matrix(std::slice::from_ref(&a)).unwrap().rho, iy);
        let b = snap(-iy.clone());
        let avg = average_density_matrix(&[a.clone(), b]).unwrap();
        assert_eq!(avg.source, SnapshotSource::Averaged);
        assert_eq!(avg.rho.iter().map(|z| z.norm()).fold(0.0, f64::max), 0.0);
        let mut late = a.clone();
        late.time = 2e-3;
        assert!(average_density_matrix(&[a, late]).is_err());
    }

    #[test]
    fn palette() {
        assert_eq!(phase_color(C64::new(1.0, 0.0)), [255, 255, 255]);
        assert_eq!(phase_color(C64::new(0.0, 1.0)), [255, 0, 0]);
        assert_eq!(phase_color(C64::new(0.0, -1.0)), [0, 0, 255]);
        assert_eq!(phase_color(C64::new(-1.0, 0.0)), [128, 0, 128]);
    }

    #[test]
    fn iy_image_colours_single_quantum_cells() {
        let iy = collective_op(2, SpinAxis::PlusY).unwrap().into_matrix();
        let img = render_ppm(&iy, DEFAULT_THRESHOLD).unwrap();
        let header = b"P6\n4 4\n255\n";
        assert_eq!(&img[..header.len()], header);
        let px = &img[header.len()..];
        assert_eq!(px.len(), 48);
        let m = basis_m(2);
        let order = basis_order(2);
        for (r, &a) in order.iter().enumerate() {
            for (c, &b) in order.iter().enumerate() {
                let p = &px[3 * (4 * r + c)..3 * (4 * r + c) + 3];
                if (m[a] - m[b]).abs() == 1.0 {
                    assert!(p == [255, 0, 0] || p == [0, 0, 255], "{p:?}");
                } else {
                    assert_eq!(p, [0, 0, 0]);
                }
            }
        }
        let zero = render_ppm(&CMatrix::zeros(4, 4), DEFAULT_THRESHOLD).unwrap();
        assert!(zero[header.len()..].iter().all(|&v| v == 0));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = std::env::temp_dir().join(format!("spinecho-snap-{}", std::process::id()));
        let rho = CMatrix::from_fn(8, 8, |a, b| C64::new((a as f64 + 0.1).sin() / 3.0, (b as f64 * 0.7).cos() / 7.0));
        let s = snap(rho);
        let (json, ppm) = export_snapshot(&s, &dir.join("frame"), 1e-3).unwrap();
        assert!(ppm.exists());
        let back = read_snapshot(&json).unwrap();
        assert_eq!(back, s);
        fs::remove_dir_all(dir).unwrap();
    }
}
