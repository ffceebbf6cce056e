//! Archive endpoints and the roster file that lists them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const URL_PLACEHOLDER: &str = "{url}";
pub const TIMESTAMP_PLACEHOLDER: &str = "{timestamp}";

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("endpoint `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("roster: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("reading roster: {0}")]
    Io(#[from] std::io::Error),
}

/// One archive and how to query it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveEndpoint {
    /// Also the cache subdirectory, so limited to `[A-Za-z0-9._-]`.
    pub name: String,
    /// TimeMap URL with one `{url}` placeholder.
    #[serde(rename = "timemap")]
    pub timemap_url_template: String,
    /// CDX API URL with one `{url}` placeholder (query-encoded on use).
    #[serde(rename = "cdx", default, skip_serializing_if = "Option::is_none")]
    pub cdx_url_template: Option<String>,
    /// URI-M pattern with `{timestamp}` and `{url}`.
    #[serde(rename = "replay", default, skip_serializing_if = "Option::is_none")]
    pub replay_template: Option<String>,
    /// Unmodified-bytes (`id_`) pattern with `{timestamp}` and `{url}`.
    #[serde(rename = "raw", default, skip_serializing_if = "Option::is_none")]
    pub raw_template: Option<String>,
    /// Maximum requests per second.
    pub rate_limit: f64,
}

impl ArchiveEndpoint {
    /// The Internet Archive's Wayback Machine.
    pub fn wayback() -> Self {
        ArchiveEndpoint {
            name: "web.archive.org".into(),
            timemap_url_template: "https://web.archive.org/web/timemap/link/{url}".into(),
            cdx_url_template: Some("https://web.archive.org/cdx/search/cdx?url={url}".into()),
            replay_template: Some("https://web.archive.org/web/{timestamp}/{url}".into()),
            raw_template: Some("https://web.archive.org/web/{timestamp}id_/{url}".into()),
            rate_limit: 1.0,
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> EndpointError {
        EndpointError::Invalid {
            name: self.name.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        if self.name.is_empty()
            || self.name.starts_with('.')
            || !self
                .name
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
        {
            return Err(self.invalid("name must be non-empty [A-Za-z0-9._-] not starting with `.`"));
        }
        if !(self.rate_limit.is_finite() && self.rate_limit > 0.0) {
            return Err(self.invalid("rate_limit must be positive"));
        }
        let single_url = |field: &str, t: &str| {
            if t.matches(URL_PLACEHOLDER).count() != 1 {
                Err(self.invalid(format!("{field} template must contain exactly one {URL_PLACEHOLDER}")))
            } else {
                Ok(())
            }
        };
        single_url("timemap", &self.timemap_url_template)?;
        if let Some(t) = &self.cdx_url_template {
            single_url("cdx", t)?;
        }
        for (field, t) in [("replay", &self.replay_template), ("raw", &self.raw_template)] {
            if let Some(t) = t {
                single_url(field, t)?;
                if t.matches(TIMESTAMP_PLACEHOLDER).count() != 1 {
                    return Err(self.invalid(format!(
                        "{field} template must contain exactly one {TIMESTAMP_PLACEHOLDER}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn timemap_url(&self, original: &str) -> String {
        self.timemap_url_template.replace(URL_PLACEHOLDER, original)
    }

    pub fn cdx_url(&self, original: &str) -> Option<String> {
        let encoded: String = url::form_urlencoded::byte_serialize(original.as_bytes()).collect();
        self.cdx_url_template
            .as_ref()
            .map(|t| t.replace(URL_PLACEHOLDER, &encoded))
    }

    pub fn replay_template_or_default(&self) -> &str {
        self.replay_template
            .as_deref()
            .unwrap_or(crate::cdx::DEFAULT_REPLAY_TEMPLATE)
    }

    pub fn raw_url(&self, stamp: &str, original: &str) -> Option<String> {
        self.raw_template.as_ref().map(|t| {
            t.replace(TIMESTAMP_PLACEHOLDER, stamp)
                .replace(URL_PLACEHOLDER, original)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    #[serde(rename = "endpoint")]
    pub endpoints: Vec<ArchiveEndpoint>,
}

impl Roster {
    pub fn parse(text: &str) -> Result<Self, EndpointError> {
        let roster: Roster = toml::from_str(text)?;
        roster.validate()?;
        Ok(roster)
    }

    pub fn load(path: &Path) -> Result<Self, EndpointError> {
        Roster::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        let mut names = std::collections::HashSet::new();
        for e in &self.endpoints {
            e.validate()?;
            if !names.insert(e.name.as_str()) {
                return Err(e.invalid("duplicate endpoint name"));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEndpoint> {
        self.endpoints.iter().find(|e| e.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wayback_is_valid() {
        let e = ArchiveEndpoint::wayback();
        e.validate().unwrap();
        assert_eq!(
            e.timemap_url("http://www.cnn.com/"),
            "https://web.archive.org/web/timemap/link/http://www.cnn.com/"
        );
        assert_eq!(
            e.cdx_url("http://www.cnn.com/?a=1&b=2").unwrap(),
            "https://web.archive.org/cdx/search/cdx?url=http%3A%2F%2Fwww.cnn.com%2F%3Fa%3D1%26b%3D2"
        );
        assert_eq!(
            e.raw_url("20150424150304", "http://www.cnn.com/").unwrap(),
            "https://web.archive.org/web/20150424150304id_/http://www.cnn.com/"
        );
    }

    #[test]
    fn template_placeholder_count() {
        let mut e = ArchiveEndpoint::wayback();
        e.timemap_url_template = "https://x/{url}/{url}".into();
        assert!(e.validate().is_err());
        e.timemap_url_template = "https://x/".into();
        assert!(e.validate().is_err());
        let mut e = ArchiveEndpoint::wayback();
        e.raw_template = Some("https://x/{url}".into());
        assert!(e.validate().is_err());
        let mut e = ArchiveEndpoint::wayback();
        e.rate_limit = 0.0;
        assert!(e.validate().is_err());
        e.rate_limit = 0.5;
        e.name = "../escape".into();
        assert!(e.validate().is_err());
    }

    #[test]
    fn roster_file() {
        let text = r#"
[[endpoint]]
name = "web.archive.org"
timemap = "https://web.archive.org/web/timemap/link/{url}"
cdx = "https://web.archive.org/cdx/search/cdx?url={url}"
rate_limit = 1.0

[[endpoint]]
name = "arquivo.pt"
timemap = "https://arquivo.pt/wayback/timemap/link/{url}"
rate_limit = 0.5
"#;
        let r = Roster::parse(text).unwrap();
        assert_eq!(r.endpoints.len(), 2);
        assert!(r.get("arquivo.pt").unwrap().cdx_url_template.is_none());
        let dup =
            format!("{text}\n[[endpoint]]\nname = \"arquivo.pt\"\ntimemap = \"https://a/{{url}}\"\nrate_limit = 1.0\n");
        assert!(Roster::parse(&dup).is_err());
        assert!(Roster::parse("[[endpoint]]\nname = \"x\"\n").is_err());
    }
}
