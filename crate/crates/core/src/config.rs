//! TOML experiment manifests.
//!
//! ```toml
//! strategy = "perm_samp"
//! provider = "synthetic"
//! steps = 4
//! mode = "constrained"
//! window_size = 20
//! step_size = 10
//! top_k = 100
//! seed = 7
//!
//! [oracle]
//! beta = 5.0
//! gamma = 0.0
//! lambda = 0.0
//! relevance_path = "data/oracle.json"
//!
//! [data]
//! corpus = "data/corpus.jsonl"
//! queries = "data/queries.tsv"
//! candidates = "data/candidates.run"
//! qrels = "data/qrels.txt"
//! ```
//!
//! Relative paths resolve against the directory of the manifest.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalx::Gain;
use crate::orchestrate::{RerankJob, Strategy, WindowConfig};
use crate::provider::{
    LogitsProvider, OracleConfig, RemoteProvider, ReplayStore, SyntheticOracle,
    DEFAULT_TEMPLATE_ID, REMOTE_URL_ENV,
};
use crate::sampler::{SamplerConfig, SamplingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Synthetic,
    Remote,
    Replay,
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(ProviderKind::Synthetic),
            "remote" => Ok(ProviderKind::Remote),
            "replay" => Ok(ProviderKind::Replay),
            _ => Err(Error::validation(format!("unknown provider {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub seed: Option<u64>,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// JSON file holding an [`OracleConfig`]; its relevance table is used and
    /// its scalar parameters are overridden by this section.
    pub relevance_path: Option<PathBuf>,
}

impl Default for OracleSection {
    fn default() -> Self {
        let d = OracleConfig::default();
        OracleSection {
            seed: None,
            beta: d.beta,
            gamma: d.gamma,
            lambda: d.lambda,
            relevance_path: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub strategy: Strategy,
    pub provider: ProviderKind,
    /// Denoising steps `K` for `perm_samp`.
    pub steps: usize,
    pub mode: SamplingMode,
    pub window_size: usize,
    pub step_size: usize,
    pub top_k: usize,
    pub seed: u64,
    pub template_id: String,
    pub gain: Gain,
    /// Falls back to `DIFFURANK_REMOTE_URL` when absent.
    pub remote_url: Option<String>,
    pub timeout_secs: u64,
    pub replay_path: Option<PathBuf>,
    pub oracle: OracleSection,
    pub data: DataSection,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let w = WindowConfig::default();
        EngineConfig {
            strategy: Strategy::PermAssign,
            provider: ProviderKind::Synthetic,
            steps: 4,
            mode: SamplingMode::Constrained,
            window_size: w.window_size,
            step_size: w.step_size,
            top_k: w.top_k,
            seed: 0,
            template_id: DEFAULT_TEMPLATE_ID.to_string(),
            gain: Gain::default(),
            remote_url: None,
            timeout_secs: 30,
            replay_path: None,
            oracle: OracleSection::default(),
            data: DataSection::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: EngineConfig =
            toml::from_str(s).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses the manifest and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: EngineConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.replay_path);
        fix(&mut self.oracle.relevance_path);
        fix(&mut self.data.corpus);
        fix(&mut self.data.queries);
        fix(&mut self.data.candidates);
        fix(&mut self.data.qrels);
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            window_size: self.window_size,
            step_size: self.step_size,
            top_k: self.top_k,
        }
    }

    pub fn job(&self) -> RerankJob {
        let mut job = RerankJob::new(self.strategy, self.window());
        if self.strategy == Strategy::PermSamp {
            job = job.with_sampler(SamplerConfig {
                steps: self.steps,
                mode: self.mode,
            });
        }
        job.template_id = self.template_id.clone();
        job.seed = self.seed;
        job
    }

    pub fn validate(&self) -> Result<()> {
        self.job().validate()?;
        if self.timeout_secs == 0 {
            return Err(Error::validation("timeout_secs must be positive"));
        }
        if self.provider == ProviderKind::Replay && self.replay_path.is_none() {
            return Err(Error::validation("replay provider needs replay_path"));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn oracle_config(&self) -> Result<OracleConfig> {
        let mut cfg = match &self.oracle.relevance_path {
            Some(p) => serde_json::from_str::<OracleConfig>(&std::fs::read_to_string(p)?)?,
            None => OracleConfig::default(),
        };
        cfg.seed = self.oracle.seed.unwrap_or(self.seed);
        cfg.beta = self.oracle.beta;
        cfg.gamma = self.oracle.gamma;
        cfg.lambda = self.oracle.lambda;
        cfg.validate().map_err(Error::Validation)?;
        Ok(cfg)
    }

    pub fn build_provider(&self) -> Result<Box<dyn LogitsProvider>> {
        Ok(match self.provider {
            ProviderKind::Synthetic => Box::new(SyntheticOracle::new(self.oracle_config()?)?),
            ProviderKind::Remote => match &self.remote_url {
                Some(url) => Box::new(RemoteProvider::new(url, self.timeout())),
                None => Box::new(RemoteProvider::from_env(self.timeout()).map_err(|_| {
                    Error::validation(format!(
                        "remote provider needs remote_url or {REMOTE_URL_ENV}"
                    ))
                })?),
            },
            ProviderKind::Replay => {
                let path = self
                    .replay_path
                    .as_ref()
                    .ok_or_else(|| Error::validation("replay provider needs replay_path"))?;
                Box::new(ReplayStore::open(path)?)
            }
        })
    }
}
