//! Audit configuration file (TOML).

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::endpoint::{ArchiveEndpoint, EndpointError, Roster};
use crate::era::{EraError, EraTimeline};
use crate::fetch::{NetworkMode, RetryPolicy};
use crate::metrics::DateRange;
use crate::probe::{LowercaseRule, ProbeOptions, DEFAULT_WORD_THRESHOLD};
use crate::resolve::Threshold;
use crate::zones::ZoneSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Era(#[from] EraError),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// The first base capture of each UTC day.
    #[default]
    FirstPerDay,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneEntry {
    pub id: String,
    #[serde(default)]
    pub uri: Option<String>,
    #[serde(default)]
    pub base_uri: Option<String>,
}

impl ZoneEntry {
    pub fn to_spec(&self) -> ZoneSpec {
        let mut z = ZoneSpec::new(self.id.clone());
        z.uri = self.uri.clone();
        if let Some(b) = &self.base_uri {
            z.base_uri = b.clone();
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZoneSource {
    /// `zones = "auto"`: read from the newest probed page's `CNN.Zones`.
    Auto(AutoTag),
    Explicit(Vec<ZoneEntry>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for ZoneSource {
    fn default() -> Self {
        ZoneSource::Explicit(
            ["homepage1-zone-1", "homepage2-zone-1", "homepage3-zone-1"]
                .into_iter()
                .map(|id| ZoneEntry {
                    id: id.into(),
                    uri: None,
                    base_uri: None,
                })
                .collect(),
        )
    }
}

fn default_target() -> String {
    "http://www.cnn.com/".into()
}
fn default_archive() -> String {
    "web.archive.org".into()
}
fn default_thresholds() -> Vec<Threshold> {
    Threshold::presets()
}
fn default_violation_threshold() -> Threshold {
    Threshold::DEFAULT
}
fn default_cache_root() -> PathBuf {
    PathBuf::from("cache")
}
fn default_concurrency() -> usize {
    4
}
fn default_network() -> NetworkMode {
    NetworkMode::Online
}
fn default_true() -> bool {
    true
}
fn default_max_attempts() -> u32 {
    4
}
fn default_retry_backoff() -> String {
    "2s".into()
}
fn default_word_threshold() -> usize {
    DEFAULT_WORD_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_target")]
    pub target_url: String,
    /// Roster endpoint whose captures replay is resolved against.
    #[serde(default = "default_archive")]
    pub archive: String,
    /// Roster file path; ignored when `endpoint` entries are given inline.
    #[serde(default)]
    pub roster: Option<PathBuf>,
    #[serde(default, rename = "endpoint")]
    pub endpoints: Vec<ArchiveEndpoint>,
    #[serde(default)]
    pub zones: ZoneSource,
    /// Era timeline file; the built-in timeline when absent.
    #[serde(default)]
    pub era_timeline: Option<PathBuf>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<Threshold>,
    /// Threshold used for per-memento classification rows.
    #[serde(default = "default_violation_threshold")]
    pub violation_threshold: Threshold,
    pub date_range: DateRange,
    /// Extra ranges for threshold tables; `date_range` is always included.
    #[serde(default)]
    pub impact_ranges: Vec<DateRange>,
    #[serde(default = "default_cache_root")]
    pub cache_root: PathBuf,
    /// Cache entry lifetime in online mode, e.g. `"7days"`; never expires when absent.
    #[serde(default)]
    pub cache_ttl: Option<String>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_network")]
    pub network: NetworkMode,
    #[serde(default)]
    pub sampling: Sampling,
    /// Fetch and probe raw HTML of sampled base captures.
    #[serde(default = "default_true")]
    pub probe_html: bool,
    #[serde(default = "default_word_threshold")]
    pub word_threshold: usize,
    #[serde(default)]
    pub lowercase: LowercaseRule,
    /// Aggregate TimeMaps of the target from every roster endpoint.
    #[serde(default)]
    pub timemap_summary: bool,
    /// CDX rows per request; enables resume-key pagination.
    #[serde(default)]
    pub page_size: Option<usize>,
    /// Tries per request on 429, 5xx and transport errors.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// Wait before the first retry, doubled after each; e.g. `"2s"`.
    #[serde(default = "default_retry_backoff")]
    pub retry_backoff: String,
}

/// A config with its relative paths resolved and referenced files loaded.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: AuditConfig,
    pub roster: Roster,
    pub timeline: EraTimeline,
    pub cache_root: PathBuf,
    pub cache_ttl: Option<chrono::Duration>,
    pub retry: RetryPolicy,
}

impl ResolvedConfig {
    pub fn endpoint(&self) -> &ArchiveEndpoint {
        self.roster.get(&self.config.archive).expect("validated")
    }

    pub fn probe_options(&self) -> ProbeOptions {
        ProbeOptions {
            word_threshold: self.config.word_threshold,
            lowercase: self.config.lowercase,
        }
    }

    /// Every threshold-table range, `date_range` first, without repeats.
    pub fn impact_ranges(&self) -> Vec<DateRange> {
        let mut out = vec![self.config.date_range];
        for r in &self.config.impact_ranges {
            if !out.contains(r) {
                out.push(*r);
            }
        }
        out
    }
}

impl AuditConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: AuditConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        AuditConfig::parse(&text)
    }

    /// Minimal config for `date_range` with every other field defaulted.
    pub fn for_range(start: NaiveDate, end: NaiveDate) -> Self {
        AuditConfig::parse(&format!(
            "date_range = {{ start = \"{}\", end = \"{}\" }}",
            start.format("%Y-%m-%d"),
            end.format("%Y-%m-%d")
        ))
        .expect("static config parses")
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Validates and loads referenced files, resolving relative paths
    /// against `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedConfig, ConfigError> {
        let abs = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        if self.date_range.start >= self.date_range.end {
            return Err(ConfigError::Invalid(format!(
                "date_range {}..{} is empty",
                self.date_range.start, self.date_range.end
            )));
        }
        for r in &self.impact_ranges {
            if r.start >= r.end {
                return Err(ConfigError::Invalid(format!(
                    "impact range {}..{} is empty",
                    r.start, r.end
                )));
            }
        }
        if self.thresholds.is_empty() {
            return Err(ConfigError::Invalid("thresholds must not be empty".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        if crate::urlkey::canonical_urlkey(&self.target_url).is_err() {
            return Err(ConfigError::Invalid(format!(
                "target_url `{}` is not an http(s) URL",
                self.target_url
            )));
        }
        if let ZoneSource::Explicit(list) = &self.zones {
            if list.iter().any(|z| z.id.is_empty()) {
                return Err(ConfigError::Invalid("zone ids must be non-empty".into()));
            }
        }
        let roster = if !self.endpoints.is_empty() {
            let r = Roster {
                endpoints: self.endpoints.clone(),
            };
            r.validate()?;
            r
        } else if let Some(p) = &self.roster {
            Roster::load(&abs(p))?
        } else {
            Roster {
                endpoints: vec![ArchiveEndpoint::wayback()],
            }
        };
        let endpoint = roster
            .get(&self.archive)
            .ok_or_else(|| ConfigError::Invalid(format!("archive `{}` is not in the roster", self.archive)))?;
        if endpoint.cdx_url_template.is_none() {
            return Err(ConfigError::Invalid(format!(
                "archive `{}` has no cdx template",
                self.archive
            )));
        }
        let timeline = match &self.era_timeline {
            Some(p) => EraTimeline::load(&abs(p))?,
            None => EraTimeline::default(),
        };
        let cache_ttl = match &self.cache_ttl {
            Some(s) => {
                let d = humantime::parse_duration(s).map_err(|e| ConfigError::Invalid(format!("cache_ttl: {e}")))?;
                Some(chrono::Duration::from_std(d).map_err(|e| ConfigError::Invalid(format!("cache_ttl: {e}")))?)
            }
            None => None,
        };
        if self.max_attempts == 0 {
            return Err(ConfigError::Invalid("max_attempts must be at least 1".into()));
        }
        let initial_backoff = humantime::parse_duration(&self.retry_backoff)
            .map_err(|e| ConfigError::Invalid(format!("retry_backoff: {e}")))?;
        Ok(ResolvedConfig {
            config: self.clone(),
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                initial_backoff,
            },
            roster,
            timeline,
            cache_root: abs(&self.cache_root),
            cache_ttl,
        })
    }
}
