use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendConfig, Backends, Capability, HealthBackend, HttpBackend, MockBackend, MockSettings,
};
use crate::dataset::Include;
use crate::generate::GenerationParams;
use crate::maskgen::MaskgenConfig;
use crate::select::SelectionConfig;
use crate::taxonomy::ClassTaxonomy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub root: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
    /// Caption JSONL; defaults to `captions.jsonl` in the corpus root when present.
    #[serde(default)]
    pub captions: Option<PathBuf>,
}

fn default_split() -> String {
    "train".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub num_batches: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            batch_size: 8,
            num_batches: 100,
            seed: 42,
        }
    }
}

impl SamplingConfig {
    /// Appendix hyperparameter default.
    pub const ALPHA_DEFAULT: f64 = 0.5;
    /// Main-text comparison and ablation optimum.
    pub const ALPHA_ABLATION: f64 = 0.4;
}

/// `"mock"`, `{"kind": "mock", ...settings}` or
/// `{"kind": "http", "base_url": ..., "endpoints": {"generate": ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BackendsRepr", tag = "kind", rename_all = "snake_case")]
pub enum BackendsSpec {
    Mock {
        #[serde(flatten)]
        settings: MockSettings,
    },
    Http {
        #[serde(flatten)]
        config: BackendConfig,
        /// Per-capability base URL overrides.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        endpoints: BTreeMap<Capability, String>,
    },
}

impl Default for BackendsSpec {
    fn default() -> Self {
        BackendsSpec::Mock {
            settings: MockSettings::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TaggedSpec {
    Mock {
        #[serde(flatten)]
        settings: MockSettings,
    },
    Http {
        #[serde(flatten)]
        config: BackendConfig,
        #[serde(default)]
        endpoints: BTreeMap<Capability, String>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BackendsRepr {
    Name(String),
    Spec(TaggedSpec),
}

impl TryFrom<BackendsRepr> for BackendsSpec {
    type Error = String;

    fn try_from(repr: BackendsRepr) -> Result<Self, String> {
        match repr {
            BackendsRepr::Name(name) if name == "mock" => Ok(BackendsSpec::default()),
            BackendsRepr::Name(url) if url.starts_with("http://") || url.starts_with("https://") => {
                Ok(BackendsSpec::Http {
                    config: BackendConfig::with_url(url),
                    endpoints: BTreeMap::new(),
                })
            }
            BackendsRepr::Name(other) => Err(format!("unknown backends `{other}` (expected \"mock\" or a URL)")),
            BackendsRepr::Spec(TaggedSpec::Mock { settings }) => Ok(BackendsSpec::Mock { settings }),
            BackendsRepr::Spec(TaggedSpec::Http { config, endpoints }) => Ok(BackendsSpec::Http { config, endpoints }),
        }
    }
}

impl BackendsSpec {
    /// Parses a command-line value: `mock` or a base URL.
    pub fn parse_flag(value: &str) -> Result<Self, String> {
        BackendsSpec::try_from(BackendsRepr::Name(value.to_string()))
    }

    fn http_config(config: &BackendConfig, endpoints: &BTreeMap<Capability, String>, cap: Capability) -> BackendConfig {
        let mut c = config.clone();
        if let Some(url) = endpoints.get(&cap) {
            c.base_url = url.clone();
        }
        c
    }

    /// Instantiates the clients. HTTP services are health-checked for the
    /// capability each one is used for.
    pub fn build(&self, taxonomy: &ClassTaxonomy) -> Result<Backends, ConfigError> {
        match self {
            BackendsSpec::Mock { settings } => Ok(Backends::uniform(Arc::new(MockBackend::new(
                taxonomy.clone(),
                settings.clone(),
            )))),
            BackendsSpec::Http { config, endpoints } => {
                // One client per distinct URL so in-flight limits are per service.
                let mut clients: BTreeMap<String, Arc<HttpBackend>> = BTreeMap::new();
                let mut pick = |cap: Capability| -> Result<Arc<HttpBackend>, ConfigError> {
                    let c = Self::http_config(config, endpoints, cap);
                    if let Some(existing) = clients.get(&c.base_url) {
                        return Ok(existing.clone());
                    }
                    let client = Arc::new(HttpBackend::new(c.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?);
                    let served = client
                        .capabilities()
                        .map_err(|e| ConfigError::Invalid(format!("{}: health check failed: {e}", c.base_url)))?;
                    log::info!("{} serves {:?}", c.base_url, served);
                    clients.insert(c.base_url.clone(), client.clone());
                    Ok(client)
                };
                let mut require = |cap: Capability| -> Result<Arc<HttpBackend>, ConfigError> {
                    let client = pick(cap)?;
                    let served = client.capabilities().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    if !served.contains(&cap) {
                        return Err(ConfigError::Invalid(format!(
                            "{} does not serve {}",
                            client.config().base_url,
                            cap.as_str()
                        )));
                    }
                    Ok(client)
                };
                Ok(Backends {
                    caption: require(Capability::Caption)?,
                    detect: require(Capability::Detect)?,
                    segment: require(Capability::Segment)?,
                    generate: require(Capability::Generate)?,
                    embed: require(Capability::Embed)?,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    /// Taxonomy JSON; the built-in PASCAL VOC classes when absent.
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub backends: BackendsSpec,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub maskgen: MaskgenConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub jobs: usize,
    /// Abort once more than this fraction of records is quarantined.
    #[serde(default = "default_failure_budget")]
    pub failure_budget: f64,
    /// Prefer a corpus caption over the captioner when one exists.
    #[serde(default = "default_true")]
    pub use_real_captions: bool,
    #[serde(default = "default_include")]
    pub include: Include,
}

fn default_failure_budget() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

fn default_include() -> Include {
    Include::KeptOnly
}

impl PipelineConfig {
    /// Defaults everywhere except the two required locations.
    pub fn new(corpus_root: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus: CorpusConfig {
                root: corpus_root.into(),
                split: default_split(),
                captions: None,
            },
            taxonomy: None,
            output_dir: output_dir.into(),
            backends: BackendsSpec::default(),
            generation: GenerationParams::default(),
            selection: SelectionConfig::default(),
            maskgen: MaskgenConfig::default(),
            sampling: SamplingConfig::default(),
            jobs: 0,
            failure_budget: default_failure_budget(),
            use_real_captions: true,
            include: Include::KeptOnly,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.corpus.root);
        resolve(&mut config.output_dir);
        if let Some(p) = config.corpus.captions.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.taxonomy.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.generation.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.selection.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.maskgen.score_threshold) {
            return invalid(format!("maskgen.score_threshold {} not in [0, 1]", self.maskgen.score_threshold));
        }
        if !(0.0..=1.0).contains(&self.sampling.alpha) {
            return invalid(format!("sampling.alpha {} not in [0, 1]", self.sampling.alpha));
        }
        if self.sampling.batch_size == 0 {
            return invalid("sampling.batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.failure_budget) {
            return invalid(format!("failure_budget {} not in [0, 1]", self.failure_budget));
        }
        if let BackendsSpec::Http { config, endpoints } = &self.backends {
            config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            for url in endpoints.values() {
                BackendConfig::with_url(url.clone())
                    .validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn load_taxonomy(&self) -> Result<ClassTaxonomy, ConfigError> {
        match &self.taxonomy {
            None => Ok(ClassTaxonomy::pascal_voc()),
            Some(p) => ClassTaxonomy::load(p).map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }
}
