use std::path::{Path, PathBuf};

use egopose::network::TrainConfig;
use egopose::synth::{SynthConfig, Split};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// Heatmaps rendered from the 2D annotations.
    #[default]
    Heatmaps,
    /// Detector heatmaps from the drawn images.
    Images,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: Split,
    /// Score the ground truth against itself.
    pub oracle: bool,
    pub root_relative: bool,
    pub input: InputSource,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { split: Split::Test, oracle: false, root_relative: false, input: InputSource::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub modes: Vec<String>,
    pub seeds: Vec<u64>,
    /// Latent sizes to sweep with every branch enabled.
    pub z_grid: Vec<usize>,
    /// Reconstruction sizes to sweep with every branch enabled.
    pub hm_grid: Vec<usize>,
    /// Fraction of 3D labels kept for the mixed-supervision pair of runs.
    pub mixed_fraction: Option<f64>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            modes: ["p3d", "p3d+rot", "p3d+hm", "p3d+hm+rot"].map(String::from).to_vec(),
            seeds: Vec::new(),
            z_grid: Vec::new(),
            hm_grid: Vec::new(),
            mixed_fraction: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionSource {
    #[default]
    Prediction,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnimateSection {
    pub split: Split,
    /// Defaults to the first character of the split.
    pub character: Option<u32>,
    pub max_frames: Option<usize>,
    pub source: MotionSource,
}

impl Default for AnimateSection {
    fn default() -> Self {
        AnimateSection { split: Split::Test, character: None, max_frames: None, source: MotionSource::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { sigmas: vec![0.0, 0.05, 0.1, 0.2, 0.4], seeds: vec![0, 1, 2] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory read by every command but `generate`.
    pub data: PathBuf,
    /// Skeleton definition for `generate`; the shipped one when absent.
    pub skeleton: Option<PathBuf>,
    /// Lifter checkpoint for eval/animate/noise-sweep, or to resume training.
    pub lifter_checkpoint: Option<PathBuf>,
    pub detector_checkpoint: Option<PathBuf>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub ablate: AblateSection,
    pub animate: AnimateSection,
    pub noise: NoiseSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: PathBuf::from("data"),
            skeleton: None,
            lifter_checkpoint: None,
            detector_checkpoint: None,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
            animate: AnimateSection::default(),
            noise: NoiseSection::default(),
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_value(text: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Recursive table merge; values from `over` win.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, value) = spec.split_once('=').ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("override key {key:?}: {p} is not a table")))?;
    }
    let leaf = parts[parts.len() - 1].to_string();
    match (table.get_mut(&leaf), parse_value(value.trim())) {
        (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
        (_, v) => {
            table.insert(leaf, v);
        }
    }
    Ok(())
}

impl RunConfig {
    /// File (if any), then `--set` overrides, then `--seed`.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<RunConfig> {
        // start from the defaults so partial nested tables are accepted
        let mut table = toml::Table::try_from(RunConfig::default()).expect("defaults serialise");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            let file = toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            merge(&mut table, file);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.train.validate()?;
        for m in &self.ablate.modes {
            egopose::network::BranchConfig::parse(m)?;
        }
        if let Some(f) = self.ablate.mixed_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(CliError::Config("ablate.mixed_fraction must lie in [0, 1)".into()));
            }
        }
        if self.noise.seeds.is_empty() || self.noise.sigmas.first() != Some(&0.0) {
            return Err(CliError::Config("noise.sigmas must start at 0 and noise.seeds must be non-empty".into()));
        }
        if self.noise.sigmas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CliError::Config("noise.sigmas must ascend strictly".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Short digest of the resolved configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Writes the resolved-config echo into `out`.
    pub fn echo(&self, out: &Path) -> CliResult<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(RESOLVED_CONFIG_FILE), self.to_toml())?;
        Ok(())
    }
}
