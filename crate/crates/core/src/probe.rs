//! Heuristics over raw (unreplayed) base-page HTML: is the Hero section
//! server-rendered, and is the page a client-side template with almost no
//! prose of its own?

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::zones::{extract_zones, ZoneSpec};

/// Zone id of the Hero section.
pub const HERO_ZONE_ID: &str = "homepage1-zone-1";

/// Pages with this many lowercase-initial words or fewer are templates.
pub const DEFAULT_WORD_THRESHOLD: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsrVerdict {
    ServerRendered,
    CsrTemplate,
    Indeterminate,
}

impl CsrVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            CsrVerdict::ServerRendered => "server_rendered",
            CsrVerdict::CsrTemplate => "csr_template",
            CsrVerdict::Indeterminate => "indeterminate",
        }
    }
}

/// What counts as a lowercase initial letter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowercaseRule {
    /// Unicode general category Ll.
    #[default]
    Unicode,
    /// `a`-`z` only.
    Ascii,
}

impl LowercaseRule {
    fn matches(self, c: char) -> bool {
        match self {
            LowercaseRule::Unicode => get_general_category(c) == GeneralCategory::LowercaseLetter,
            LowercaseRule::Ascii => c.is_ascii_lowercase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub word_threshold: usize,
    pub lowercase: LowercaseRule,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            word_threshold: DEFAULT_WORD_THRESHOLD,
            lowercase: LowercaseRule::Unicode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtmlProbeResult {
    pub has_hero_section_id: bool,
    pub content_word_count: usize,
    pub zones_declared: Vec<ZoneSpec>,
    pub csr_verdict: CsrVerdict,
}

pub fn probe_html(html: &str, word_threshold: usize) -> HtmlProbeResult {
    probe_html_with(
        html,
        &ProbeOptions {
            word_threshold,
            ..ProbeOptions::default()
        },
    )
}

pub fn probe_html_with(html: &str, opts: &ProbeOptions) -> HtmlProbeResult {
    let scan = scan_html(html);
    let content_word_count = scan
        .text
        .split_whitespace()
        .filter(|w| w.chars().next().is_some_and(|c| opts.lowercase.matches(c)))
        .count();
    let csr_verdict = if content_word_count <= opts.word_threshold {
        CsrVerdict::CsrTemplate
    } else if scan.hero_section {
        CsrVerdict::ServerRendered
    } else {
        CsrVerdict::Indeterminate
    };
    HtmlProbeResult {
        has_hero_section_id: scan.hero_section,
        content_word_count,
        zones_declared: extract_zones(html),
        csr_verdict,
    }
}

struct Scan {
    text: String,
    hero_section: bool,
}

fn find_ci(hay: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || from > hay.len() {
        return None;
    }
    hay[from..]
        .windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle))
        .map(|p| p + from)
}

/// Forgiving single pass: tags become whitespace, comments and the bodies
/// of `script`/`style` are dropped, everything else is text.
fn scan_html(html: &str) -> Scan {
    let bytes = html.as_bytes();
    let mut text = String::with_capacity(html.len() / 2);
    let mut hero_section = false;
    let mut i = 0;
    let mut text_start = 0;

    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let next = bytes.get(i + 1).copied();
        let is_markup = matches!(next, Some(b'!' | b'?' | b'/')) || next.is_some_and(|b| b.is_ascii_alphabetic());
        if !is_markup {
            i += 1;
            continue;
        }
        push_text(&mut text, &html[text_start..i]);
        text.push(' ');

        if bytes[i..].starts_with(b"<!--") {
            i = find_ci(bytes, i + 4, b"-->").map_or(bytes.len(), |p| p + 3);
        } else if matches!(next, Some(b'!' | b'?')) {
            i = find_ci(bytes, i, b">").map_or(bytes.len(), |p| p + 1);
        } else if next == Some(b'/') {
            i = skip_tag(bytes, i + 2).0;
        } else {
            let (end, name, attrs) = skip_tag(bytes, i + 1);
            i = end;
            if name.eq_ignore_ascii_case("section")
                && attrs
                    .iter()
                    .any(|(k, v)| k.eq_ignore_ascii_case("id") && v.trim() == HERO_ZONE_ID)
            {
                hero_section = true;
            }
            if name.eq_ignore_ascii_case("script") || name.eq_ignore_ascii_case("style") {
                let close = format!("</{name}");
                i = match find_ci(bytes, i, close.as_bytes()) {
                    Some(p) => find_ci(bytes, p, b">").map_or(bytes.len(), |q| q + 1),
                    None => bytes.len(),
                };
            }
        }
        text_start = i;
    }
    if text_start < bytes.len() {
        push_text(&mut text, &html[text_start..]);
    }
    Scan { text, hero_section }
}

fn push_text(out: &mut String, raw: &str) {
    // Non-breaking space entities separate words like real whitespace.
    out.push_str(&raw.replace("&nbsp;", " ").replace("&#160;", " "));
}

/// Reads a tag name and attributes starting at `start` (just past `<` or
/// `</`). Returns the index after the closing `>` (or end of input).
fn skip_tag(bytes: &[u8], start: usize) -> (usize, String, Vec<(String, String)>) {
    let mut i = start;
    while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' && bytes[i] != b'/' {
        i += 1;
    }
    let name = String::from_utf8_lossy(&bytes[start..i]).into_owned();
    let mut attrs = Vec::new();
    loop {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'/') {
            i += 1;
        }
        if i >= bytes.len() {
            return (bytes.len(), name, attrs);
        }
        if bytes[i] == b'>' {
            return (i + 1, name, attrs);
        }
        let key_start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !matches!(bytes[i], b'=' | b'>' | b'/') {
            i += 1;
        }
        let key = String::from_utf8_lossy(&bytes[key_start..i]).into_owned();
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if i < bytes.len() && bytes[i] == b'=' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
                let quote = bytes[i];
                let v_start = i + 1;
                let v_end = bytes[v_start..]
                    .iter()
                    .position(|&b| b == quote)
                    .map_or(bytes.len(), |p| p + v_start);
                value = String::from_utf8_lossy(&bytes[v_start..v_end]).into_owned();
                i = (v_end + 1).min(bytes.len());
            } else {
                let v_start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' {
                    i += 1;
                }
                value = String::from_utf8_lossy(&bytes[v_start..i]).into_owned();
            }
        }
        if key.is_empty() {
            // Stray `=`; step over it so the loop advances.
            i += 1;
        } else {
            attrs.push((key, value));
        }
    }
}
