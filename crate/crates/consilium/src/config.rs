//! Runtime configuration. One TOML file drives every subcommand; secrets
//! never appear in it, only the names of environment variables that hold
//! them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::ReflectionConfig;
use crate::dataset::Fixture;
use crate::kb::ChunkParams;
use crate::retrieval::RetrievalParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Departments the doctor may route a case to; plans naming anything
    /// else are recorded as "unknown".
    pub departments: Vec<String>,
    pub embedding_dim: usize,
    pub chunking: ChunkParams,
    pub retrieval: RetrievalParams,
    pub reflection: ReflectionConfig,
    pub data: DataConfig,
    pub kb: KbConfig,
    pub backends: BackendsConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 1,
            out_dir: PathBuf::from("out"),
            departments: Fixture::departments(),
            embedding_dim: 64,
            chunking: ChunkParams::default(),
            retrieval: RetrievalParams::default(),
            reflection: ReflectionConfig::default(),
            data: DataConfig::default(),
            kb: KbConfig::default(),
            backends: BackendsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub cases: PathBuf,
    pub corpus: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cases: PathBuf::from("fixtures/cases.jsonl"),
            corpus: PathBuf::from("fixtures/corpus.jsonl"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbConfig {
    pub dir: PathBuf,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("kb"),
        }
    }
}

impl KbConfig {
    pub fn doctor_index(&self) -> PathBuf {
        self.dir.join("doctor.idx")
    }

    pub fn pharmacist_index(&self) -> PathBuf {
        self.dir.join("pharmacist.idx")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub chat: ChatBackendConfig,
    pub embedding: EmbeddingBackendConfig,
    pub rerank: RerankBackendConfig,
    pub judge: JudgeBackendConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChatBackendConfig {
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<PathBuf>,
    },
    Http {
        base_url: String,
        model: String,
        api_key_env: String,
    },
}

impl Default for ChatBackendConfig {
    fn default() -> Self {
        Self::Mock { script: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingBackendConfig {
    /// Seeded hash embeddings; dimension comes from `embedding_dim`.
    #[default]
    Mock,
    Http {
        base_url: String,
        model: String,
        api_key_env: String,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RerankBackendConfig {
    /// Token-overlap scoring.
    #[default]
    Mock,
    Http {
        base_url: String,
        model: String,
        api_key_env: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JudgeBackendConfig {
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<PathBuf>,
    },
    Http {
        base_url: String,
        model: String,
        api_key_env: String,
    },
}

impl Default for JudgeBackendConfig {
    fn default() -> Self {
        Self::Mock { script: None }
    }
}

impl SystemConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let config: SystemConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// A config wired to a generated fixture directory: mock backends fed
    /// by its scripts, outputs kept inside the directory.
    pub fn for_fixture_dir(dir: &Path) -> Self {
        Self {
            out_dir: dir.join("out"),
            data: DataConfig {
                cases: dir.join(crate::dataset::CASES_FILE),
                corpus: dir.join(crate::dataset::CORPUS_FILE),
            },
            kb: KbConfig {
                dir: dir.join("kb"),
            },
            backends: BackendsConfig {
                chat: ChatBackendConfig::Mock {
                    script: Some(dir.join(crate::dataset::CHAT_SCRIPT_FILE)),
                },
                judge: JudgeBackendConfig::Mock {
                    script: Some(dir.join(crate::dataset::JUDGE_SCRIPT_FILE)),
                },
                ..BackendsConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 || self.workers > 64 {
            return Err(ConfigError::Invalid(format!(
                "workers must be in 1..=64, got {}",
                self.workers
            )));
        }
        if self.embedding_dim < 4 || self.embedding_dim > 4096 {
            return Err(ConfigError::Invalid(format!(
                "embedding_dim must be in 4..=4096, got {}",
                self.embedding_dim
            )));
        }
        if self.departments.is_empty() || self.departments.iter().any(|d| d.trim().is_empty()) {
            return Err(ConfigError::Invalid("departments must be non-empty".into()));
        }
        self.chunking
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.retrieval
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.reflection
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, backend) in [
            ("chat", http_fields(&self.backends.chat)),
            ("embedding", http_fields_embed(&self.backends.embedding)),
            ("rerank", http_fields_rerank(&self.backends.rerank)),
            ("judge", http_fields_judge(&self.backends.judge)),
        ] {
            if let Some((base_url, model, api_key_env)) = backend {
                for (field, value) in [
                    ("base_url", base_url),
                    ("model", model),
                    ("api_key_env", api_key_env),
                ] {
                    if value.trim().is_empty() {
                        return Err(ConfigError::Invalid(format!(
                            "backends.{name}.{field} must not be empty"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn http_fields(c: &ChatBackendConfig) -> Option<(&str, &str, &str)> {
    match c {
        ChatBackendConfig::Http {
            base_url,
            model,
            api_key_env,
        } => Some((base_url, model, api_key_env)),
        ChatBackendConfig::Mock { .. } => None,
    }
}

fn http_fields_embed(c: &EmbeddingBackendConfig) -> Option<(&str, &str, &str)> {
    match c {
        EmbeddingBackendConfig::Http {
            base_url,
            model,
            api_key_env,
        } => Some((base_url, model, api_key_env)),
        EmbeddingBackendConfig::Mock => None,
    }
}

fn http_fields_rerank(c: &RerankBackendConfig) -> Option<(&str, &str, &str)> {
    match c {
        RerankBackendConfig::Http {
            base_url,
            model,
            api_key_env,
        } => Some((base_url, model, api_key_env)),
        RerankBackendConfig::Mock => None,
    }
}

fn http_fields_judge(c: &JudgeBackendConfig) -> Option<(&str, &str, &str)> {
    match c {
        JudgeBackendConfig::Http {
            base_url,
            model,
            api_key_env,
        } => Some((base_url, model, api_key_env)),
        JudgeBackendConfig::Mock { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let config = SystemConfig::default();
        let text = config.to_toml().unwrap();
        let back: SystemConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.retrieval, config.retrieval);
        assert_eq!(back.reflection.tau, config.reflection.tau);
        back.validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let config: SystemConfig = toml::from_str(
            r#"
            seed = 7
            [retrieval]
            top_k = 8
            top_n = 2
            "#,
        )
        .unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.retrieval.top_k, 8);
        assert_eq!(config.reflection.r_max, 2);
        assert_eq!(config.workers, 1);
    }

    #[test]
    fn http_backend_parses() {
        let config: SystemConfig = toml::from_str(
            r#"
            [backends.chat]
            kind = "http"
            base_url = "http://localhost:9000/v1"
            model = "demo"
            api_key_env = "DEMO_KEY"
            "#,
        )
        .unwrap();
        config.validate().unwrap();
        match config.backends.chat {
            ChatBackendConfig::Http { ref model, .. } => assert_eq!(model, "demo"),
            _ => panic!("expected http chat backend"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<SystemConfig>("retrieval_depth = 3").is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        let config = SystemConfig {
            workers: 0,
            ..Default::default()
        };
        assert!(config.validate().is_err());
        let mut config = SystemConfig::default();
        config.retrieval.top_n = 0;
        assert!(config.validate().is_err());
        let mut config = SystemConfig::default();
        config.backends.rerank = RerankBackendConfig::Http {
            base_url: String::new(),
            model: "m".into(),
            api_key_env: "K".into(),
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn fixture_config_points_into_the_directory() {
        let config = SystemConfig::for_fixture_dir(Path::new("fx"));
        assert_eq!(config.data.cases, Path::new("fx/cases.jsonl"));
        assert_eq!(config.kb.doctor_index(), Path::new("fx/kb/doctor.idx"));
        match config.backends.chat {
            ChatBackendConfig::Mock {
                script: Some(ref p),
            } => {
                assert_eq!(p, Path::new("fx/chat_script.jsonl"));
            }
            _ => panic!("expected scripted mock chat backend"),
        }
    }
}
