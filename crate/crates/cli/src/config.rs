use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use spinecho::engine::{create_model, Detection, Interaction, ModelConfig, PulseModel};
use spinecho::lattice::{DisorderConfig, LatticeSpec};
use spinecho::sequence::{self, parse_sequence, Sequence, SequenceParams};

use crate::presets;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(#[from] spinecho::error::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    /// silicon, diamond, fcc, c60 or custom
    pub name: String,
    /// Meters; overrides the built-in constant.
    pub lattice_constant: Option<f64>,
    /// JSON site file for `custom`.
    pub file: Option<PathBuf>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            name: "silicon".into(),
            lattice_constant: None,
            file: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    pub builder: Option<String>,
    pub tau: f64,
    pub n_echoes: usize,
    pub n_cycles: usize,
    pub dsl: Option<String>,
    pub dsl_file: Option<PathBuf>,
    /// One run per value of `tau`.
    pub tau_sweep: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: String,
    /// Echo numbers (from 1) at which snapshots are written.
    pub snapshot_echoes: Vec<usize>,
    pub snapshot_threshold: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            csv: "echoes.csv".into(),
            snapshot_echoes: Vec::new(),
            snapshot_threshold: spinecho::observables::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    #[serde(default)]
    pub set: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub description: String,
    pub lattice: LatticeConfig,
    pub disorder: DisorderConfig,
    pub sequence: SequenceConfig,
    pub pulse_model: ModelConfig,
    pub n_dr: usize,
    pub master_seed: u64,
    pub detection: Detection,
    pub interaction: Interaction,
    /// 0 uses every core.
    pub workers: usize,
    pub outputs: OutputConfig,
    pub variants: Vec<Variant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            description: String::new(),
            lattice: LatticeConfig::default(),
            disorder: DisorderConfig::default(),
            sequence: SequenceConfig::default(),
            pulse_model: ModelConfig::default(),
            n_dr: 1,
            master_seed: 1,
            detection: Detection::Total,
            interaction: Interaction::Dipolar,
            workers: 0,
            outputs: OutputConfig::default(),
            variants: Vec::new(),
        }
    }
}

/// One fully resolved run.
#[derive(Debug)]
pub struct Job {
    pub label: Option<String>,
    pub config: RunConfig,
    base_dir: PathBuf,
}

pub struct Source<'a> {
    pub config: Option<&'a Path>,
    pub preset: Option<&'a str>,
    pub sets: &'a [String],
    pub variants: &'a [String],
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c = value`, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> CliResult<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("invalid key path '{path}'")));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().expect("just created")
            }
            _ => {
                return Err(CliError::Config(format!(
                    "{}: not an object",
                    keys[..i].join(".")
                )))
            }
        };
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key")
}

fn parse_set(raw: &str) -> CliResult<(String, Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{raw}'")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

fn deserialize(value: Value) -> CliResult<RunConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })
}

pub fn load_jobs(source: &Source<'_>) -> CliResult<Vec<Job>> {
    let (text, base_dir) = match (source.config, source.preset) {
        (Some(_), Some(_)) => return Err(config_err("use either --config or --preset, not both")),
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, dir)
        }
        (None, Some(name)) => {
            let text = presets::get(name).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown preset '{name}' (available: {})",
                    presets::names().collect::<Vec<_>>().join(", ")
                ))
            })?;
            (text.to_string(), PathBuf::from("."))
        }
        (None, None) => return Err(config_err("one of --config or --preset is required")),
    };
    let mut base: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    if !base.is_object() {
        return Err(config_err("config must be a JSON object"));
    }
    let variants = base
        .as_object_mut()
        .expect("checked")
        .remove("variants")
        .map(|v| serde_json::from_value::<Vec<Variant>>(v).map_err(|e| CliError::Config(format!("variants: {e}"))))
        .transpose()?
        .unwrap_or_default();

    let mut overrides: Vec<(String, Value)> = source.sets.iter().map(|s| parse_set(s)).collect::<CliResult<_>>()?;
    if let Some(w) = source.workers {
        overrides.push(("workers".into(), Value::from(w)));
    }
    if let Some(s) = source.seed {
        overrides.push(("master_seed".into(), Value::from(s)));
    }

    for wanted in source.variants {
        if !variants.iter().any(|v| &v.label == wanted) {
            return Err(CliError::Config(format!("no variant labelled '{wanted}'")));
        }
    }
    let selected: Vec<Option<&Variant>> = if variants.is_empty() {
        vec![None]
    } else {
        variants
            .iter()
            .filter(|v| source.variants.is_empty() || source.variants.contains(&v.label))
            .map(Some)
            .collect()
    };
    selected
        .into_iter()
        .map(|variant| {
            let mut value = base.clone();
            if let Some(v) = variant {
                for (k, val) in &v.set {
                    set_path(&mut value, k, val.clone())?;
                }
            }
            for (k, val) in &overrides {
                set_path(&mut value, k, val.clone())?;
            }
            let config = deserialize(value).map_err(|e| match (variant, e) {
                (Some(v), CliError::Config(msg)) => CliError::Config(format!("variant '{}': {msg}", v.label)),
                (_, e) => e,
            })?;
            let job = Job {
                label: variant.map(|v| v.label.clone()),
                config,
                base_dir: base_dir.clone(),
            };
            job.validate()?;
            Ok(job)
        })
        .collect()
}

impl Job {
    fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> CliResult<()> {
        let c = &self.config;
        if c.n_dr == 0 {
            return Err(config_err("n_dr: must be at least 1"));
        }
        c.disorder.validate().map_err(|e| CliError::Config(format!("disorder: {e}")))?;
        if let Some(file) = &c.sequence.dsl_file {
            if !self.resolve_path(file).exists() {
                return Err(CliError::Config(format!("sequence.dsl_file: {} does not exist", file.display())));
            }
        }
        if let Some(file) = &c.lattice.file {
            if !self.resolve_path(file).exists() {
                return Err(CliError::Config(format!("lattice.file: {} does not exist", file.display())));
            }
        }
        if !(c.outputs.snapshot_threshold > 0.0 && c.outputs.snapshot_threshold < 1.0) {
            return Err(config_err("outputs.snapshot_threshold: must be in (0, 1)"));
        }
        self.lattice()?;
        self.model()?;
        if c.sequence.tau_sweep.is_empty() {
            let seq = self.sequence(None)?;
            if seq.n_echoes() == 0 {
                return Err(config_err("sequence: needs at least one echo"));
            }
        } else {
            for &tau in &c.sequence.tau_sweep {
                self.sequence(Some(tau))?;
            }
        }
        Ok(())
    }

    pub fn lattice(&self) -> CliResult<LatticeSpec> {
        let l = &self.config.lattice;
        use spinecho::lattice::{C60_LATTICE_CONSTANT, SILICON_LATTICE_CONSTANT};
        let spec = match l.name.as_str() {
            "silicon" | "diamond" => LatticeSpec::diamond(l.lattice_constant.unwrap_or(SILICON_LATTICE_CONSTANT)),
            "c60" | "fcc" => LatticeSpec::fcc(l.lattice_constant.unwrap_or(C60_LATTICE_CONSTANT)),
            "custom" => {
                let file = l
                    .file
                    .as_ref()
                    .ok_or_else(|| config_err("lattice.file: required for a custom lattice"))?;
                LatticeSpec::from_json_file(&self.resolve_path(file))
                    .map_err(|e| CliError::Config(format!("lattice.file: {e}")))?
            }
            other => return Err(CliError::Config(format!("lattice.name: unknown lattice '{other}'"))),
        };
        spec.validate().map_err(|e| CliError::Config(format!("lattice: {e}")))?;
        Ok(spec)
    }

    pub fn model(&self) -> CliResult<Box<dyn PulseModel>> {
        create_model(&self.config.pulse_model).map_err(|e| CliError::Config(format!("pulse_model: {e}")))
    }

    pub fn dsl_text(&self) -> CliResult<Option<String>> {
        let s = &self.config.sequence;
        match (&s.dsl, &s.dsl_file) {
            (Some(_), Some(_)) => Err(config_err("sequence: give either dsl or dsl_file")),
            (Some(text), None) => Ok(Some(text.clone())),
            (None, Some(file)) => Ok(Some(fs::read_to_string(self.resolve_path(file))?)),
            (None, None) => Ok(None),
        }
    }

    /// The configured sequence, with `tau` replaced for sweeps.
    pub fn sequence(&self, tau: Option<f64>) -> CliResult<Sequence> {
        let s = &self.config.sequence;
        if let Some(text) = self.dsl_text()? {
            if s.builder.is_some() || tau.is_some() {
                return Err(config_err("sequence: dsl cannot be combined with builder or tau_sweep"));
            }
            return parse_sequence(&text).map_err(|e| CliError::Config(format!("sequence.dsl: {e}")));
        }
        let builder = s
            .builder
            .as_deref()
            .ok_or_else(|| config_err("sequence: needs builder, dsl or dsl_file"))?;
        let params = SequenceParams {
            tau: tau.unwrap_or(s.tau),
            n_echoes: s.n_echoes,
            n_cycles: s.n_cycles,
        };
        sequence::build(builder, &params).map_err(|e| CliError::Config(format!("sequence: {e}")))
    }

    pub fn output_dir(&self, out: &Path) -> PathBuf {
        match &self.label {
            Some(l) => out.join(l),
            None => out.to_path_buf(),
        }
    }

    /// Git-style blob hash (`sha256("blob <len>\0" + bytes)`) of the resolved
    /// config with the worker count cleared, followed by referenced files.
    pub fn input_hash(&self) -> CliResult<String> {
        let mut canonical = self.config.clone();
        canonical.workers = 0;
        let mut bytes = serde_json::to_vec(&canonical)?;
        if let Some(text) = self.dsl_text()? {
            bytes.extend_from_slice(text.as_bytes());
        }
        if let Some(file) = &self.config.lattice.file {
            bytes.extend(fs::read(self.resolve_path(file))?);
        }
        let mut hasher = Sha256::new();
        hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
        hasher.update(&bytes);
        Ok(hex::encode(hasher.finalize()))
    }
}
