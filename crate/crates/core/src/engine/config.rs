use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::db::Database;
use crate::gateway::{Gateway, Provider, ProviderConfig};
use crate::pipeline::PipelineConfig;
use crate::sqlgen::StrategyThresholds;
use crate::tables::ScoringParams;
use crate::{Error, Result};

/// Prefix of environment overrides. `ENGINE_A__B=v` sets `a.b`; the value
/// is read as a TOML literal when it parses as one, else as a string.
pub const ENV_PREFIX: &str = "ENGINE_";

/// Names the configuration file itself, so it is never an override.
pub const CONFIG_PATH_VAR: &str = "ENGINE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Providers {
    pub chat: ProviderConfig,
    /// Defaults to `chat`.
    #[serde(default)]
    pub embed: Option<ProviderConfig>,
    /// Defaults to `embed`.
    #[serde(default)]
    pub rerank: Option<ProviderConfig>,
    /// Defaults to `chat`.
    #[serde(default)]
    pub judge: Option<ProviderConfig>,
    #[serde(default)]
    pub one_step: Option<ProviderConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub n_threshold: u64,
    pub s_threshold: f64,
    /// Labeled question/SQL pairs available for the deployment.
    pub n_labeled: u64,
    pub target_keywords: Vec<String>,
    pub source_keywords: Vec<String>,
    pub force_one_step: bool,
}

impl StrategyConfig {
    pub fn thresholds(&self) -> StrategyThresholds {
        StrategyThresholds { n_threshold: self.n_threshold, s_threshold: self.s_threshold }
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            n_threshold: StrategyThresholds::default().n_threshold,
            s_threshold: StrategyThresholds::default().s_threshold,
            n_labeled: 0,
            target_keywords: Vec::new(),
            source_keywords: Vec::new(),
            force_one_step: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub n: usize,
    pub column_filter: bool,
    pub demonstrations_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 20, n: 10, column_filter: false, demonstrations_k: 3 }
    }
}

/// Stage switches, used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Features {
    pub history_completion: bool,
    pub clarification: bool,
    pub mirror_history: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self { history_completion: true, clarification: true, mirror_history: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub knowledge_dir: PathBuf,
    pub schema_file: PathBuf,
    pub database_dir: PathBuf,
    /// Database the engine answers over, resolved inside `database_dir`.
    pub database: String,
    pub sessions_dir: PathBuf,
    #[serde(default)]
    pub demonstrations_file: Option<PathBuf>,
    pub providers: Providers,
    #[serde(default)]
    pub scoring: ScoringParams,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub features: Features,
    #[serde(default = "default_clarify_rounds")]
    pub max_clarify_rounds: u32,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_max_rows")]
    pub max_rows: usize,
    /// Relative paths resolve against this; the config file's directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_clarify_rounds() -> u32 {
    3
}
fn default_max_steps() -> usize {
    crate::insight::DEFAULT_MAX_STEPS
}
fn default_max_rows() -> usize {
    1000
}

fn override_path(root: &mut toml::Table, path: &[String], value: toml::Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut cur = root;
    for p in parents {
        let slot = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = slot.as_table_mut().ok_or_else(|| format!("{p} is not a table"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl EngineConfig {
    /// Parses TOML text and applies `ENGINE_` overrides from `vars`.
    pub fn parse_with_env<I>(text: &str, base_dir: &Path, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut root: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Config(vec![format!("toml: {}", e.message())]))?;
        let mut problems = Vec::new();
        let mut vars: Vec<(String, String)> =
            vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != CONFIG_PATH_VAR).collect();
        vars.sort();
        for (key, raw) in vars {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_ascii_lowercase).collect();
            if path.iter().any(String::is_empty) {
                problems.push(format!("{key}: malformed override name"));
                continue;
            }
            if let Err(e) = override_path(&mut root, &path, literal(&raw)) {
                problems.push(format!("{key}: {e}"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut cfg: EngineConfig =
            root.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_with_env(&text, &base, std::env::vars())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Every invalid field as `path: message`; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.listen.parse::<SocketAddr>().is_err() {
            p.push(format!("listen: `{}` is not a socket address", self.listen));
        }
        if !self.resolve(&self.knowledge_dir).is_dir() {
            p.push(format!("knowledge_dir: directory {} not found", self.knowledge_dir.display()));
        }
        if !self.resolve(&self.schema_file).is_file() {
            p.push(format!("schema_file: file {} not found", self.schema_file.display()));
        }
        let db_dir = self.resolve(&self.database_dir);
        if !db_dir.is_dir() {
            p.push(format!("database_dir: directory {} not found", self.database_dir.display()));
        } else if Database::resolve(&db_dir, &self.database).is_none() {
            p.push(format!("database: no database `{}` in {}", self.database, self.database_dir.display()));
        }
        if let Some(d) = &self.demonstrations_file {
            if !self.resolve(d).is_file() {
                p.push(format!("demonstrations_file: file {} not found", d.display()));
            }
        }
        p.extend(self.providers.chat.problems("providers.chat", &self.base_dir));
        for (name, c) in [
            ("embed", &self.providers.embed),
            ("rerank", &self.providers.rerank),
            ("judge", &self.providers.judge),
            ("one_step", &self.providers.one_step),
        ] {
            if let Some(c) = c {
                p.extend(c.problems(&format!("providers.{name}"), &self.base_dir));
            }
        }
        p.extend(self.scoring.problems("scoring"));
        let t = self.strategy.thresholds();
        if t.n_threshold == 0 {
            p.push("strategy.n_threshold: must be positive".into());
        }
        if !(0.0..=1.0).contains(&t.s_threshold) {
            p.push("strategy.s_threshold: must be within [0, 1]".into());
        }
        if self.strategy.target_keywords.is_empty() != self.strategy.source_keywords.is_empty() {
            p.push("strategy.source_keywords: target and source keywords must be given together".into());
        }
        if self.strategy.force_one_step && self.providers.one_step.is_none() {
            p.push("strategy.force_one_step: requires providers.one_step".into());
        }
        p.extend(self.pipeline.problems("pipeline"));
        if self.retrieval.k == 0 {
            p.push("retrieval.k: must be positive".into());
        }
        if self.retrieval.n == 0 {
            p.push("retrieval.n: must be positive".into());
        }
        if self.max_clarify_rounds == 0 {
            p.push("max_clarify_rounds: must be positive".into());
        }
        if self.max_steps == 0 {
            p.push("max_steps: must be positive".into());
        }
        if self.max_rows == 0 {
            p.push("max_rows: must be positive".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Builds the provider set; unset roles inherit as documented on [`Providers`].
    pub fn gateway(&self) -> Result<Gateway> {
        let build = |c: &ProviderConfig| Provider::from_config(c, &self.base_dir);
        let pr = &self.providers;
        let chat = build(&pr.chat)?;
        let embed = pr.embed.as_ref().map(build).transpose()?.unwrap_or_else(|| chat.clone());
        let rerank = pr.rerank.as_ref().map(build).transpose()?.unwrap_or_else(|| embed.clone());
        let judge = pr.judge.as_ref().map(build).transpose()?.unwrap_or_else(|| chat.clone());
        let one_step = pr.one_step.as_ref().map(build).transpose()?;
        Ok(Gateway { chat, embed, rerank, judge, one_step })
    }
}
