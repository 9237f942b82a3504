//! Disordered spin clusters on crystal lattices and their dipolar couplings.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Silicon cubic lattice constant (m).
pub const SILICON_LATTICE_CONSTANT: f64 = 5.431e-10;
/// Solid C60 fcc lattice constant (m).
pub const C60_LATTICE_CONSTANT: f64 = 14.17e-10;
/// ²⁹Si gyromagnetic ratio over 2π (Hz/T): 99.5 MHz at 11.75 T.
pub const SI29_GAMMA_OVER_2PI: f64 = 99.5e6 / 11.75;
/// ¹³C gyromagnetic ratio over 2π (Hz/T).
pub const C13_GAMMA_OVER_2PI: f64 = 10.7084e6;
/// FWHM = 2 sqrt(2 ln 2) σ for a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// μ0/4π in T·m/A.
    pub mu0_over_4pi: f64,
    /// ħ in J·s.
    pub hbar: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            mu0_over_4pi: 1e-7,
            hbar: 1.054_571_817e-34,
        }
    }
}

/// Symmetric table of pairwise couplings `B_ij/h` in Hz with zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTable {
    n: usize,
    b_over_h: Vec<f64>,
}

impl CouplingTable {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            b_over_h: vec![0.0; n * n],
        }
    }

    /// Builds a table from a full row-major matrix, validating it.
    pub fn from_matrix(n: usize, b_over_h: Vec<f64>) -> Result<Self> {
        if b_over_h.len() != n * n {
            return Err(Error::Couplings(format!(
                "expected {} entries, got {}",
                n * n,
                b_over_h.len()
            )));
        }
        let table = Self { n, b_over_h };
        table.validate()?;
        Ok(table)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.b_over_h[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert_ne!(i, j, "diagonal couplings are zero by definition");
        self.b_over_h[i * self.n + j] = value;
        self.b_over_h[j * self.n + i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.b_over_h
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::Couplings(format!("nonzero diagonal at {i}")));
            }
            for j in 0..self.n {
                let b = self.get(i, j);
                if !b.is_finite() {
                    return Err(Error::Couplings(format!("non-finite entry at ({i}, {j})")));
                }
                if b != self.get(j, i) {
                    return Err(Error::Couplings(format!("asymmetric entry at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Every coupling multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            b_over_h: self.b_over_h.iter().map(|b| b * factor).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeName {
    Diamond,
    Fcc,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub name: LatticeName,
    /// Cubic lattice constant (m); scales `lattice_vectors` for built-ins.
    pub lattice_constant: f64,
    /// Cell vectors in meters (rows).
    pub lattice_vectors: [Vec3; 3],
    /// Fractional coordinates of the basis; the first entry is the origin site.
    pub basis: Vec<Vec3>,
    /// Explicit site positions (m); when present they replace the periodic lattice.
    #[serde(default)]
    pub site_list: Option<Vec<Vec3>>,
}

const FCC_BASIS: [Vec3; 4] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
];

fn cubic(a: f64) -> [Vec3; 3] {
    [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]]
}

impl LatticeSpec {
    pub fn diamond(a: f64) -> Self {
        let mut basis: Vec<Vec3> = FCC_BASIS.to_vec();
        basis.extend(FCC_BASIS.iter().map(|p| [p[0] + 0.25, p[1] + 0.25, p[2] + 0.25]));
        Self {
            name: LatticeName::Diamond,
            lattice_constant: a,
            lattice_vectors: cubic(a),
            basis,
            site_list: None,
        }
    }

    pub fn silicon() -> Self {
        Self::diamond(SILICON_LATTICE_CONSTANT)
    }

    pub fn fcc(a: f64) -> Self {
        Self {
            name: LatticeName::Fcc,
            lattice_constant: a,
            lattice_vectors: cubic(a),
            basis: FCC_BASIS.to_vec(),
            site_list: None,
        }
    }

    pub fn c60() -> Self {
        Self::fcc(C60_LATTICE_CONSTANT)
    }

    /// Reads a custom lattice file: either `{lattice_vectors, basis}` or `{sites}`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct CustomFile {
            lattice_vectors: Option<[Vec3; 3]>,
            basis: Option<Vec<Vec3>>,
            sites: Option<Vec<Vec3>>,
        }
        let file: CustomFile = serde_json::from_str(text)?;
        let spec = match (file.sites, file.lattice_vectors) {
            (Some(sites), _) => {
                let scale = nearest_spacing(&sites).unwrap_or(1e-10);
                Self {
                    name: LatticeName::Custom,
                    lattice_constant: scale,
                    lattice_vectors: cubic(scale),
                    basis: vec![[0.0; 3]],
                    site_list: Some(sites),
                }
            }
            (None, Some(vectors)) => {
                let a = vectors.iter().map(|v| norm(*v)).fold(0.0, f64::max);
                Self {
                    name: LatticeName::Custom,
                    lattice_constant: a,
                    lattice_vectors: vectors,
                    basis: file.basis.unwrap_or_else(|| vec![[0.0; 3]]),
                    site_list: None,
                }
            }
            (None, None) => {
                return Err(Error::Lattice(
                    "custom lattice needs either 'sites' or 'lattice_vectors'".into(),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lattice_constant > 0.0) {
            return Err(Error::Lattice("lattice constant must be positive".into()));
        }
        match &self.site_list {
            Some(sites) if sites.is_empty() => Err(Error::Lattice("empty site list".into())),
            Some(_) => Ok(()),
            None if self.basis.is_empty() => Err(Error::Lattice("empty basis".into())),
            None if cell_volume(&self.lattice_vectors).abs() < 1e-60 => {
                Err(Error::Lattice("degenerate lattice vectors".into()))
            }
            None => Ok(()),
        }
    }

    /// Number of sites per unit volume (1/m³), used to size the shell.
    fn site_density(&self) -> Option<f64> {
        match self.site_list {
            Some(_) => None,
            None => Some(self.basis.len() as f64 / cell_volume(&self.lattice_vectors).abs()),
        }
    }
}

fn norm(v: Vec3) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cell_volume(v: &[Vec3; 3]) -> f64 {
    dot(v[0], cross(v[1], v[2]))
}

fn nearest_spacing(sites: &[Vec3]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (i, a) in sites.iter().enumerate() {
        for b in &sites[i + 1..] {
            let d = norm(sub(*a, *b));
            if d > 0.0 {
                best = Some(best.map_or(d, |x| x.min(d)));
            }
        }
    }
    best
}

/// All sites within `radius` of the origin site, ordered by distance then
/// lexicographic position. The origin site is first.
pub fn generate_sites(spec: &LatticeSpec, radius: f64) -> Result<Vec<Vec3>> {
    spec.validate()?;
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Lattice(format!("invalid radius {radius}")));
    }
    let limit = radius * (1.0 + 1e-12);
    let mut sites: Vec<Vec3> = Vec::new();
    if let Some(list) = &spec.site_list {
        let origin = list[0];
        sites.extend(
            list.iter()
                .map(|p| sub(*p, origin))
                .filter(|p| norm(*p) <= limit),
        );
    } else {
        let v = &spec.lattice_vectors;
        let volume = cell_volume(v).abs();
        let heights = [
            volume / norm(cross(v[1], v[2])),
            volume / norm(cross(v[2], v[0])),
            volume / norm(cross(v[0], v[1])),
        ];
        let reach: Vec<i64> = heights
            .iter()
            .map(|h| (radius / h).ceil() as i64 + 1)
            .collect();
        let b0 = spec.basis[0];
        for n0 in -reach[0]..=reach[0] {
            for n1 in -reach[1]..=reach[1] {
                for n2 in -reach[2]..=reach[2] {
                    for b in &spec.basis {
                        let f = [
                            n0 as f64 + b[0] - b0[0],
                            n1 as f64 + b[1] - b0[1],
                            n2 as f64 + b[2] - b0[2],
                        ];
                        let p = [
                            f[0] * v[0][0] + f[1] * v[1][0] + f[2] * v[2][0],
                            f[0] * v[0][1] + f[1] * v[1][1] + f[2] * v[2][1],
                            f[0] * v[0][2] + f[1] * v[1][2] + f[2] * v[2][2],
                        ];
                        if norm(p) <= limit {
                            sites.push(p);
                        }
                    }
                }
            }
        }
    }
    let quantum = spec.lattice_constant * 1e-9;
    sites.sort_by(|a, b| {
        let da = (norm(*a) / quantum).round() as i64;
        let db = (norm(*b) / quantum).round() as i64;
        da.cmp(&db)
            .then(a[0].total_cmp(&b[0]))
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
    });
    sites.dedup_by(|a, b| norm(sub(*a, *b)) < quantum);
    Ok(sites)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    StrongestCoupling,
    NearestDistance,
}

/// How the offset width parameter is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthKind {
    Fwhm,
    Sigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisorderConfig {
    pub abundance: f64,
    pub n_spins: usize,
    /// Shell radius in meters; `None` sizes it automatically.
    pub shell_radius: Option<f64>,
    pub gamma_over_2pi: f64,
    pub gamma_scale: f64,
    /// Offset distribution width in Hz.
    pub offset_fwhm: f64,
    pub offset_width: WidthKind,
    /// One independent offset per spin instead of a shared one.
    pub per_spin_offsets: bool,
    pub selection: Selection,
    pub constants: PhysicalConstants,
}

impl Default for DisorderConfig {
    fn default() -> Self {
        Self {
            abundance: 0.0467,
            n_spins: 4,
            shell_radius: None,
            gamma_over_2pi: SI29_GAMMA_OVER_2PI,
            gamma_scale: 1.0,
            offset_fwhm: 0.0,
            offset_width: WidthKind::Fwhm,
            per_spin_offsets: false,
            selection: Selection::StrongestCoupling,
            constants: PhysicalConstants::default(),
        }
    }
}

impl DisorderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abundance > 0.0 && self.abundance <= 1.0) {
            return Err(Error::Parameter(format!(
                "abundance must be in (0, 1], got {}",
                self.abundance
            )));
        }
        if self.n_spins == 0 {
            return Err(Error::Parameter("n_spins must be at least 1".into()));
        }
        if !(self.offset_fwhm >= 0.0) {
            return Err(Error::Parameter("offset width must be non-negative".into()));
        }
        if !(self.gamma_over_2pi.is_finite() && self.gamma_scale.is_finite()) {
            return Err(Error::NonFinite("gamma"));
        }
        Ok(())
    }

    /// γ in rad/s/T including the scale factor.
    pub fn gamma(&self) -> f64 {
        TAU * self.gamma_over_2pi * self.gamma_scale
    }

    pub fn offset_sigma(&self) -> f64 {
        match self.offset_width {
            WidthKind::Fwhm => self.offset_fwhm / FWHM_PER_SIGMA,
            WidthKind::Sigma => self.offset_fwhm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    /// Rotated positions (m); spin 0 is the central spin at the origin.
    pub positions: Vec<Vec3>,
    /// Unit quaternion `(w, x, y, z)` applied to the lattice.
    pub rotation: [f64; 4],
    /// Shared resonance offset in Hz.
    pub omega_z: f64,
    /// Per-spin offsets in Hz when enabled.
    pub spin_offsets: Option<Vec<f64>>,
    pub seed: u64,
    pub couplings: CouplingTable,
}

impl DisorderRealization {
    pub fn n_spins(&self) -> usize {
        self.couplings.n()
    }

    /// Offsets per spin (Hz).
    pub fn offsets(&self) -> Vec<f64> {
        self.spin_offsets
            .clone()
            .unwrap_or_else(|| vec![self.omega_z; self.n_spins()])
    }

    /// A realization defined directly by its couplings (no geometry).
    pub fn from_couplings(couplings: CouplingTable, omega_z: f64) -> Self {
        Self {
            positions: Vec::new(),
            rotation: [1.0, 0.0, 0.0, 0.0],
            omega_z,
            spin_offsets: None,
            seed: 0,
            couplings,
        }
    }
}

/// `B_ij/h` (Hz) for spins at `positions`, θ measured from `z_axis`.
pub fn coupling_constants(
    positions: &[Vec3],
    gamma: f64,
    z_axis: Vec3,
    constants: &PhysicalConstants,
) -> Result<CouplingTable> {
    let zn = norm(z_axis);
    if (zn - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("z axis must be a unit vector, |z| = {zn}")));
    }
    let n = positions.len();
    let prefactor = constants.mu0_over_4pi * gamma * gamma * constants.hbar / TAU / 2.0;
    let mut table = CouplingTable::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = sub(positions[j], positions[i]);
            let dist = norm(r);
            if dist == 0.0 {
                return Err(Error::CoincidentSpins(i, j));
            }
            let cos_theta = dot(r, z_axis) / dist;
            let b = prefactor / (dist * dist * dist) * (1.0 - 3.0 * cos_theta * cos_theta);
            if !b.is_finite() {
                return Err(Error::NonFinite("coupling"));
            }
            table.set(i, j, b);
        }
    }
    Ok(table)
}

/// One Gaussian offset of the given FWHM (Hz).
pub fn sample_offset(fwhm: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian(&mut rng, fwhm / FWHM_PER_SIGMA)
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma is finite and positive").sample(rng)
}

/// Uniform random rotation (Shoemake's method), quaternion `(w, x, y, z)`.
fn random_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = [
        b * (TAU * u3).cos(),
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
    ];
    let n = (q.iter().map(|x| x * x).sum::<f64>()).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub fn rotate(q: [f64; 4], v: Vec3) -> Vec3 {
    let [w, x, y, z] = q;
    let m = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

const MAX_SHELL_ATTEMPTS: u32 = 4;
const SHELL_GROWTH: f64 = 1.5;

/// Precomputed site shell reused across many realizations.
#[derive(Clone, Debug)]
pub struct RealizationSampler {
    spec: LatticeSpec,
    config: DisorderConfig,
    radius: f64,
    sites: Vec<Vec3>,
}

impl RealizationSampler {
    pub fn new(spec: &LatticeSpec, config: &DisorderConfig) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let radius = match config.shell_radius {
            Some(r) => r,
            None => auto_radius(spec, config),
        };
        let sites = generate_sites(spec, radius)?;
        if config.shell_radius.is_some() && config.abundance == 1.0 && sites.len() < config.n_spins {
            return Err(Error::NotEnoughSites {
                found: sites.len(),
                needed: config.n_spins,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            config: config.clone(),
            radius,
            sites,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn sites(&self) -> &[Vec3] {
        &self.sites
    }

    pub fn sample(&self, seed: u64) -> Result<DisorderRealization> {
        let mut sites = std::borrow::Cow::Borrowed(&self.sites);
        let mut radius = self.radius;
        for attempt in 0..MAX_SHELL_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(attempt as u64);
            match self.try_sample(&sites, &mut rng, seed) {
                Ok(r) => return Ok(r),
                Err(Error::NotEnoughSites { .. }) if attempt + 1 < MAX_SHELL_ATTEMPTS => {
                    radius *= SHELL_GROWTH;
                    sites = std::borrow::Cow::Owned(generate_sites(&self.spec, radius)?);
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("the last attempt returns")
    }

    fn try_sample(&self, sites: &[Vec3], rng: &mut ChaCha8Rng, seed: u64) -> Result<DisorderRealization> {
        let cfg = &self.config;
        let needed = cfg.n_spins - 1;
        let occupied: Vec<Vec3> = sites[1..]
            .iter()
            .filter(|_| cfg.abundance >= 1.0 || rng.random::<f64>() < cfg.abundance)
            .cloned()
            .collect();
        if occupied.len() < needed {
            return Err(Error::NotEnoughSites {
                found: occupied.len(),
                needed,
            });
        }
        let rotation = random_quaternion(rng);
        let sigma = cfg.offset_sigma();
        let omega_z = gaussian(rng, sigma);
        let spin_offsets = cfg
            .per_spin_offsets
            .then(|| (0..cfg.n_spins).map(|_| gaussian(rng, sigma)).collect::<Vec<_>>());

        let rotated: Vec<Vec3> = occupied.iter().map(|p| rotate(rotation, *p)).collect();
        let z = [0.0, 0.0, 1.0];
        let chosen: Vec<usize> = match cfg.selection {
            Selection::NearestDistance => (0..needed).collect(),
            Selection::StrongestCoupling => {
                let gamma = cfg.gamma();
                let prefactor = cfg.constants.mu0_over_4pi * gamma * gamma * cfg.constants.hbar / TAU / 2.0;
                let mut strength: Vec<(usize, f64)> = rotated
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let d = norm(*p);
                        let c = p[2] / d;
                        (k, (prefactor / (d * d * d) * (1.0 - 3.0 * c * c)).abs())
                    })
                    .collect();
                // stable sort keeps site order on ties
                strength.sort_by(|a, b| b.1.total_cmp(&a.1));
                let mut picked: Vec<usize> = strength[..needed].iter().map(|s| s.0).collect();
                picked.sort_unstable();
                picked
            }
        };
        let mut positions = vec![[0.0; 3]];
        positions.extend(chosen.iter().map(|&k| rotated[k]));
        let couplings = coupling_constants(&positions, cfg.gamma(), z, &cfg.constants)?;
        Ok(DisorderRealization {
            positions,
            rotation,
            omega_z,
            spin_offsets,
            seed,
            couplings,
        })
    }
}

/// Smallest radius (grown from one lattice constant) whose shell holds enough
/// sites that the expected number of occupied neighbours is at least `4·n_spins`.
fn auto_radius(spec: &LatticeSpec, config: &DisorderConfig) -> f64 {
    let wanted = (4.0 * config.n_spins as f64 / config.abundance).ceil();
    let mut radius = spec.lattice_constant;
    match spec.site_density() {
        Some(density) => {
            while density * 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3) < wanted {
                radius *= 1.1;
            }
            radius
        }
        None => {
            // explicit site lists: take everything
            let sites = spec.site_list.as_ref().expect("site list present");
            let origin = sites[0];
            sites.iter().map(|p| norm(sub(*p, origin))).fold(0.0, f64::max)
        }
    }
}

/// One realization from scratch; see [`RealizationSampler`] for bulk sampling.
pub fn sample_realization(spec: &LatticeSpec, config: &DisorderConfig, seed: u64) -> Result<DisorderRealization> {
    RealizationSampler::new(spec, config)?.sample(seed)
}
