//! SURT-style URL keys used to match captures across scheme and host-case
//! variants.
//!
//! The key drops the scheme, userinfo, fragment and default port, reverses
//! the lowercased host labels, normalizes percent-escapes (uppercase hex,
//! unreserved characters decoded) and sorts query parameters. `www.` is kept.

use thiserror::Error;
use url::{Host, Url};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UrlKeyError {
    #[error("invalid URL `{url}`: {reason}")]
    InvalidUrl { url: String, reason: String },
}

fn invalid(url: &str, reason: impl Into<String>) -> UrlKeyError {
    UrlKeyError::InvalidUrl {
        url: url.to_string(),
        reason: reason.into(),
    }
}

/// Computes the canonical key, e.g. `https://WWW.CNN.com/` → `com,cnn,www)/`.
pub fn canonical_urlkey(input: &str) -> Result<String, UrlKeyError> {
    let parsed = Url::parse(input.trim()).map_err(|e| invalid(input, e.to_string()))?;
    match parsed.scheme() {
        "http" | "https" => {}
        other => return Err(invalid(input, format!("unsupported scheme `{other}`"))),
    }
    let host = match parsed.host() {
        Some(Host::Domain(d)) => {
            let d = d.trim_end_matches('.').to_ascii_lowercase();
            if d.is_empty() {
                return Err(invalid(input, "empty host"));
            }
            d.rsplit('.').collect::<Vec<_>>().join(",")
        }
        Some(Host::Ipv4(ip)) => ip.to_string(),
        Some(Host::Ipv6(ip)) => format!("[{ip}]"),
        None => return Err(invalid(input, "missing host")),
    };

    let mut key = host;
    // `Url::port` is already `None` for the scheme's default port.
    if let Some(port) = parsed.port() {
        key.push(':');
        key.push_str(&port.to_string());
    }
    key.push(')');
    key.push_str(&normalize_escapes(parsed.path()));

    if let Some(query) = parsed.query() {
        let mut params: Vec<String> = query
            .split('&')
            .filter(|p| !p.is_empty())
            .map(normalize_escapes)
            .collect();
        if !params.is_empty() {
            params.sort();
            key.push('?');
            key.push_str(&params.join("&"));
        }
    }
    Ok(key)
}

/// Expands a key back into an `http` URL with the same key.
pub fn urlkey_to_url(key: &str) -> Option<String> {
    let (host_part, rest) = key.split_once(')')?;
    let (host_labels, port) = match host_part.rsplit_once(':') {
        Some((h, p))
            if !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()) && (!h.starts_with('[') || h.ends_with(']')) =>
        {
            (h, Some(p))
        }
        _ => (host_part, None),
    };
    let host = if host_labels.starts_with('[') || host_labels.parse::<std::net::Ipv4Addr>().is_ok() {
        host_labels.to_string()
    } else {
        host_labels.rsplit(',').collect::<Vec<_>>().join(".")
    };
    let mut out = format!("http://{host}");
    if let Some(p) = port {
        out.push(':');
        out.push_str(p);
    }
    out.push_str(rest);
    Some(out)
}

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~')
}

fn normalize_escapes(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            let hi = (bytes[i + 1] as char).to_digit(16);
            let lo = (bytes[i + 2] as char).to_digit(16);
            if let (Some(hi), Some(lo)) = (hi, lo) {
                let value = (hi * 16 + lo) as u8;
                if is_unreserved(value) {
                    out.push(value as char);
                } else {
                    out.push_str(&format!("%{value:02X}"));
                }
                i += 3;
                continue;
            }
        }
        // Input comes from `Url`, which is valid UTF-8; copy whole chars.
        let ch = s[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}
