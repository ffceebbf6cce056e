//! Zone declarations read from the inline `CNN.Zones = {...}` object in
//! base-page HTML.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Desktop breakpoint whose zone list is audited.
pub const DESKTOP_MIN_WIDTH: u32 = 800;

const ASSIGNMENT: &str = "CNN.Zones";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub id: String,
    /// Per-zone override of `base_uri`.
    pub uri: Option<String>,
    pub base_uri: String,
    pub min_width: u32,
}

impl ZoneSpec {
    pub fn new(id: impl Into<String>) -> Self {
        ZoneSpec {
            id: id.into(),
            uri: None,
            base_uri: "index.html".into(),
            min_width: DESKTOP_MIN_WIDTH,
        }
    }

    pub fn with_uri(mut self, uri: impl Into<String>) -> Self {
        self.uri = Some(uri.into());
        self
    }

    /// `uri` when present, else `base_uri`.
    pub fn effective_uri(&self) -> &str {
        self.uri.as_deref().unwrap_or(&self.base_uri)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ZoneExtraction {
    pub zones: Vec<ZoneSpec>,
    pub diagnostics: Vec<String>,
}

/// Zones of the desktop (800px) list, in declaration order. Empty when the
/// page declares none or the structure is malformed.
pub fn extract_zones(html: &str) -> Vec<ZoneSpec> {
    extract_zones_at(html, DESKTOP_MIN_WIDTH).zones
}

pub fn extract_zones_at(html: &str, min_width: u32) -> ZoneExtraction {
    let mut out = ZoneExtraction::default();
    let mut search_from = 0;
    while let Some(rel) = html[search_from..].find(ASSIGNMENT) {
        let at = search_from + rel;
        search_from = at + ASSIGNMENT.len();
        let Some(object) = assigned_object(&html[search_from..]) else {
            continue;
        };
        match json5::from_str::<Value>(object) {
            Ok(value) => match zones_from_value(&value, min_width) {
                Ok(zones) => {
                    out.zones = zones.0;
                    out.diagnostics.extend(zones.1);
                    return out;
                }
                Err(msg) => out.diagnostics.push(msg),
            },
            Err(e) => out
                .diagnostics
                .push(format!("CNN.Zones at byte {at} is not an object literal: {e}")),
        }
    }
    if out.diagnostics.is_empty() {
        out.diagnostics.push("no CNN.Zones declaration".into());
    }
    out
}

/// Given text just after the assignment target, returns the balanced
/// `{...}` literal that is assigned, if any.
fn assigned_object(rest: &str) -> Option<&str> {
    let trimmed = rest.trim_start();
    let after_eq = trimmed.strip_prefix('=')?;
    if after_eq.starts_with('=') {
        return None;
    }
    let body = after_eq.trim_start();
    if !body.starts_with('{') {
        return None;
    }
    let end = balanced_end(body)?;
    Some(&body[..end])
}

/// Index just past the brace matching the `{` at index 0. Braces inside
/// string literals and comments are ignored.
fn balanced_end(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' | b'\'' | b'`' => {
                let quote = bytes[i];
                i += 1;
                while i < bytes.len() && bytes[i] != quote {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 1;
            }
            b'{' => depth += 1,
            b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

type Extracted = (Vec<ZoneSpec>, Vec<String>);

fn zones_from_value(value: &Value, min_width: u32) -> Result<Extracted, String> {
    let zones_obj = value
        .get("zones")
        .filter(|z| z.is_object())
        .or_else(|| value.get("minWidth").map(|_| value))
        .ok_or("CNN.Zones has no `zones` object")?;
    let mut diagnostics = Vec::new();
    let base_uri = match zones_obj.get("baseUri").and_then(Value::as_str) {
        Some(b) => b.to_string(),
        None => {
            diagnostics.push("CNN.Zones has no baseUri; assuming index.html".to_string());
            "index.html".to_string()
        }
    };
    let key = min_width.to_string();
    let list = zones_obj
        .get("minWidth")
        .and_then(|m| m.get(&key))
        .and_then(Value::as_array)
        .ok_or_else(|| format!("CNN.Zones has no minWidth list for {key}"))?;
    let mut zones = Vec::with_capacity(list.len());
    for (n, entry) in list.iter().enumerate() {
        let Some(id) = entry.get("id").and_then(Value::as_str).filter(|s| !s.is_empty()) else {
            diagnostics.push(format!("zone entry {n} has no id"));
            continue;
        };
        zones.push(ZoneSpec {
            id: id.to_string(),
            uri: entry.get("uri").and_then(Value::as_str).map(str::to_string),
            base_uri: base_uri.clone(),
            min_width,
        });
    }
    Ok((zones, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_declaration() {
        let ex = extract_zones_at("<html><script>var x = {};</script></html>", 800);
        assert!(ex.zones.is_empty());
        assert_eq!(ex.diagnostics, vec!["no CNN.Zones declaration".to_string()]);
    }

    #[test]
    fn minified_relaxed_literal() {
        let html = r#"<script>CNN.Zones={zones:{baseUri:'index.html',minWidth:{'800':[{id:'a',uri:'x/index.html'},{id:'b'}],'0':[]}}};</script>"#;
        let zones = extract_zones(html);
        assert_eq!(zones.len(), 2);
        assert_eq!(zones[0].effective_uri(), "x/index.html");
        assert_eq!(zones[1].effective_uri(), "index.html");
    }

    #[test]
    fn braces_inside_strings_ignored() {
        let html = r#"CNN.Zones = {"zones": {"baseUri": "a}b{", "minWidth": {"800": [{"id": "z}"}]}}}; trailing }"#;
        let zones = extract_zones(html);
        assert_eq!(zones[0].id, "z}");
        assert_eq!(zones[0].base_uri, "a}b{");
    }

    #[test]
    fn malformed_gives_empty_with_diagnostic() {
        let ex = extract_zones_at(r#"CNN.Zones = {"zones": {"minWidth": {"800": [ {"id": }]}}}"#, 800);
        assert!(ex.zones.is_empty());
        assert!(!ex.diagnostics.is_empty());
        let unbalanced = extract_zones_at(r#"CNN.Zones = {"zones": {"#, 800);
        assert!(unbalanced.zones.is_empty());
        let comparison = extract_zones_at("if (CNN.Zones == null) {}", 800);
        assert!(comparison.zones.is_empty());
    }

    #[test]
    fn missing_breakpoint_and_ids() {
        let html = r#"CNN.Zones = {"zones": {"baseUri": "index.html", "minWidth": {"640": [{"id": "a"}]}}}"#;
        assert!(extract_zones(html).is_empty());
        let html = r#"CNN.Zones = {"zones": {"minWidth": {"800": [{"uri": "q"}, {"id": "ok"}]}}}"#;
        let ex = extract_zones_at(html, 800);
        assert_eq!(ex.zones.len(), 1);
        assert_eq!(ex.zones[0].base_uri, "index.html");
        assert_eq!(ex.diagnostics.len(), 2);
    }
}
