//! Pipeline configuration, loaded from JSON.

use std::fs;
use std::path::{Path, PathBuf};

use qgaf_core::cnn::TrainConfig;
use qgaf_core::imaging::ValueRange;
use qgaf_core::marketdata::{CleaningPolicy, CsvSchema};
use qgaf_core::qgaf::{QgafConfig, SignMode};
use qgaf_core::qsim::DEFAULT_SHOTS;
use qgaf_core::windowing::WindowConfig;
use qgaf_core::{FieldKind, NormRange};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default)]
    pub schema: CsvSchema,
    /// Label used in comparison tables; defaults to the file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl SourceConfig {
    pub fn display_name(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let stem = |s: &str| {
            Path::new(s)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
        };
        self.path
            .as_ref()
            .and_then(|p| stem(&p.to_string_lossy()))
            .or_else(|| self.url.as_deref().and_then(|u| stem(u.rsplit('/').next().unwrap_or(u))))
            .unwrap_or_else(|| "series".to_owned())
    }
}

/// Quantum encoder settings. The stream seed is the pipeline's global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumConfig {
    pub shots: u64,
    pub sign_mode: SignMode,
    pub exact: bool,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        Self {
            shots: DEFAULT_SHOTS,
            sign_mode: SignMode::Analytic,
            exact: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub export_pgm: bool,
    pub export_png: bool,
    /// Pixel mapping range; the per-kind default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<ValueRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub baseline: FieldKind,
    pub candidate: FieldKind,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            baseline: FieldKind::Gasf,
            candidate: FieldKind::Qgasf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub source: SourceConfig,
    #[serde(default)]
    pub cleaning: CleaningPolicy,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default = "default_encoder")]
    pub encoder: FieldKind,
    #[serde(default)]
    pub quantum: QuantumConfig,
    #[serde(default)]
    pub normalization: NormRange,
    #[serde(default)]
    pub imaging: ImagingConfig,
    /// `train.shuffle_seed` is ignored; splits follow `seed`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_encoder() -> FieldKind {
    FieldKind::Qgasf
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("qgaf-out")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub exact: bool,
    pub encoder: Option<FieldKind>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    /// Defaults everywhere except the data source.
    pub fn for_path(path: impl Into<PathBuf>) -> Self {
        let source = SourceConfig {
            path: Some(path.into()),
            url: None,
            schema: CsvSchema::default(),
            name: None,
        };
        serde_json::from_value(serde_json::json!({ "source": source })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
        cfg.train.shuffle_seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.exact {
            self.quantum.exact = true;
        }
        if let Some(kind) = o.encoder {
            self.encoder = kind;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        self.train.shuffle_seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn with_encoder(&self, kind: FieldKind) -> Self {
        Self {
            encoder: kind,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.source.path, &self.source.url) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(CliError::usage("source needs exactly one of `path` or `url`")),
        }
        self.window.validate()?;
        self.train.validate()?;
        if self.quantum.shots == 0 && !self.quantum.exact {
            return Err(CliError::usage("quantum.shots must be positive"));
        }
        if let Some(r) = self.imaging.range {
            ValueRange::new(r.lo, r.hi)?;
        }
        let c = self.compare;
        if c.baseline == c.candidate {
            return Err(CliError::usage("compare.baseline and compare.candidate must differ"));
        }
        Ok(())
    }

    pub fn qgaf_config(&self) -> QgafConfig {
        QgafConfig {
            shots: self.quantum.shots,
            sign_mode: self.quantum.sign_mode,
            seed: self.seed,
            exact: self.quantum.exact,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            shuffle_seed: self.seed,
            ..self.train
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_vec(&value).expect("value serializes");
        hex(&Sha256::digest(&canonical))
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
