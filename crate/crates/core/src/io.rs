//! Pipeline configuration, checkpoints and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Domain, EigenBasis};
use crate::error::{Error, Result};
use crate::model::LenoModel;
use crate::synth::{RDParams, Species};
use crate::train::TrainConfig;
use crate::transfer::TransferConfig;
use crate::treatment::{Scenario, TreatmentConfig};

/// Exactly one of `mesh` and `graph`; relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    pub modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub patients: usize,
    pub t_end: f64,
    pub dt_obs: f64,
    pub inner_dt: f64,
    /// Number of leading modes mixed into each initial field.
    pub ic_modes: usize,
    /// Per-patient clock multipliers; empty means 1 for everyone.
    pub timescales: Vec<f64>,
    /// Import trajectories from this directory instead of simulating.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            patients: 5,
            t_end: 10.0,
            dt_obs: 0.2,
            inner_dt: crate::synth::DEFAULT_INNER_DT,
            ic_modes: 8,
            timescales: Vec::new(),
            data_dir: None,
        }
    }
}

impl CohortConfig {
    pub fn times(&self) -> Result<Vec<f64>> {
        if !(self.dt_obs > 0.0 && self.t_end > 0.0) {
            return Err(Error::Config("cohort needs positive t_end and dt_obs".into()));
        }
        let n = (self.t_end / self.dt_obs).round() as usize;
        if ((n as f64) * self.dt_obs - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(Error::Config(format!(
                "t_end {} is not a multiple of dt_obs {}",
                self.t_end, self.dt_obs
            )));
        }
        Ok((0..=n).map(|k| k as f64 * self.dt_obs).collect())
    }

    pub fn gammas(&self) -> Result<Vec<f64>> {
        match self.timescales.len() {
            0 => Ok(vec![1.0; self.patients]),
            n if n == self.patients => Ok(self.timescales.clone()),
            n => Err(Error::Config(format!("{n} timescales given for {} patients", self.patients))),
        }
    }
}

/// Synthetic patients for the time-scale fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    pub fit: TransferConfig,
    pub gammas: Vec<f64>,
    /// Seeds of the transfer patients start here.
    pub seed_offset: u64,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection {
            fit: TransferConfig::default(),
            gammas: vec![0.5, 1.5, 2.0],
            seed_offset: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreatmentSection {
    pub policy: TreatmentConfig,
    pub scenarios: Vec<Scenario>,
    /// Patient whose last observation starts the treated rollout.
    pub patient: usize,
}

impl Default for TreatmentSection {
    fn default() -> Self {
        TreatmentSection {
            policy: TreatmentConfig::default(),
            scenarios: Scenario::ALL.to_vec(),
            patient: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub threshold: f64,
    /// Fractions of the observation window used as representative states.
    pub stages: Vec<f64>,
    pub patient: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            threshold: 0.5,
            stages: vec![0.0, 0.5, 1.0],
            patient: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub domain: DomainConfig,
    #[serde(default = "default_species")]
    pub species: Vec<Species>,
    #[serde(default)]
    pub params: RDParams,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub transfer: TransferSection,
    #[serde(default)]
    pub treatment: TreatmentSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_species() -> Vec<Species> {
    Species::ALL.to_vec()
}

impl PipelineConfig {
    /// Parses TOML; unknown keys are errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Reads, resolves relative paths against the file's directory and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.domain.mesh.as_mut().map(fix);
        self.domain.graph.as_mut().map(fix);
        self.cohort.data_dir.as_mut().map(fix);
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        let path = match (&d.mesh, &d.graph) {
            (Some(p), None) | (None, Some(p)) => p,
            _ => return Err(Error::Config("domain needs exactly one of `mesh` or `graph`".into())),
        };
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        if let Some(dir) = &self.cohort.data_dir {
            if !dir.is_dir() {
                return Err(Error::io(dir, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        if d.modes == 0 {
            return Err(Error::Config("domain.modes must be positive".into()));
        }
        if self.cohort.patients == 0 {
            return Err(Error::Config("cohort.patients must be positive".into()));
        }
        let order: Vec<usize> = self.species.iter().map(|s| s.index()).collect();
        if order.iter().enumerate().any(|(i, s)| *s != i) {
            return Err(Error::Config("species must be a prefix of [A, tau, N, C]".into()));
        }
        self.params.validate()?;
        self.cohort.times()?;
        self.cohort.gammas()?;
        self.train.validate()?;
        self.transfer.fit.validate()?;
        self.treatment.policy.validate()?;
        if !(0.0..=1.0).contains(&self.analysis.threshold) {
            return Err(Error::Config("analysis.threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn load_domain(&self) -> Result<Domain> {
        match (&self.domain.mesh, &self.domain.graph) {
            (Some(p), _) => Domain::load_mesh(p),
            (_, Some(p)) => Domain::load_graph(p),
            _ => Err(Error::Config("no domain given".into())),
        }
    }

    /// Canonical TOML of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }
}

pub const CHECKPOINT_FORMAT: &str = "leno-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMeta {
    pub id: String,
    pub modes: usize,
    pub nodes: usize,
    pub graph: bool,
}

impl BasisMeta {
    pub fn of(basis: &EigenBasis) -> Self {
        BasisMeta {
            id: basis.id().to_string(),
            modes: basis.n_modes(),
            nodes: basis.n_nodes(),
            graph: basis.is_graph(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub basis: BasisMeta,
    pub model: LenoModel,
    pub config_hash: String,
    pub seed: u64,
    pub final_losses: BTreeMap<String, f64>,
}

impl Checkpoint {
    pub fn new(model: LenoModel, basis: &EigenBasis, config_hash: String, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            basis: BasisMeta::of(basis),
            model,
            config_hash,
            seed,
            final_losses: BTreeMap::new(),
        }
    }

    /// The model, after checking it was trained on `basis`.
    pub fn model_for(&self, basis: &EigenBasis) -> Result<&LenoModel> {
        self.model.check_basis(basis)?;
        Ok(&self.model)
    }
}

/// JSON with shortest round-trip float formatting, so loading restores
/// every parameter bitwise.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(ckpt).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    write_file(path, &text)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::CorruptCheckpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))
}

/// Machine-readable record of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Resolved config that reproduces this run.
    pub config_file: PathBuf,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path.as_ref(), &text)
    }
}

/// Writes `text`, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
