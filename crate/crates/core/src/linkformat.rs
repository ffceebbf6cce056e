//! Tokenizer for `application/link-format` bodies as served by Memento
//! TimeMaps: comma-separated `<uri>; name="value"; name=token` entries.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkFormatError {
    #[error("expected `<` at byte {0}")]
    ExpectedTarget(usize),
    #[error("unterminated `<` target starting at byte {0}")]
    UnterminatedTarget(usize),
    #[error("unterminated quoted value starting at byte {0}")]
    UnterminatedQuote(usize),
    #[error("empty parameter name at byte {0}")]
    EmptyParam(usize),
    #[error("unexpected byte `{1}` at {0}")]
    Unexpected(usize, char),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkValue {
    pub target: String,
    pub params: Vec<(String, String)>,
}

impl LinkValue {
    /// First value of a parameter, matched case-insensitively.
    pub fn param(&self, name: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Whitespace-separated relation types from `rel`, lowercased.
    pub fn rels(&self) -> Vec<String> {
        self.param("rel")
            .map(|r| r.split_ascii_whitespace().map(str::to_ascii_lowercase).collect())
            .unwrap_or_default()
    }

    pub fn has_rel(&self, rel: &str) -> bool {
        self.rels().iter().any(|r| r == rel)
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn take_while(&mut self, mut f: impl FnMut(char) -> bool) -> &'a str {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if f(c)) {
            self.bump();
        }
        &self.src[start..self.pos]
    }
}

pub fn parse_links(body: &str) -> Result<Vec<LinkValue>, LinkFormatError> {
    let mut cur = Cursor { src: body, pos: 0 };
    let mut links = Vec::new();
    loop {
        // Separators between entries.
        while matches!(cur.peek(), Some(c) if c.is_whitespace() || c == ',') {
            cur.bump();
        }
        match cur.peek() {
            None => break,
            Some('<') => {}
            Some(_) => return Err(LinkFormatError::ExpectedTarget(cur.pos)),
        }
        let start = cur.pos;
        cur.bump();
        let target = cur.take_while(|c| c != '>');
        if cur.bump() != Some('>') {
            return Err(LinkFormatError::UnterminatedTarget(start));
        }
        let mut link = LinkValue {
            target: target.trim().to_string(),
            params: Vec::new(),
        };
        loop {
            cur.skip_ws();
            match cur.peek() {
                None | Some(',') => break,
                Some(';') => {
                    cur.bump();
                }
                Some(c) => return Err(LinkFormatError::Unexpected(cur.pos, c)),
            }
            cur.skip_ws();
            let name_pos = cur.pos;
            let name = cur.take_while(|c| !(c == '=' || c == ';' || c == ',' || c.is_whitespace()));
            if name.is_empty() {
                // Tolerate a trailing `;` before the separator.
                if matches!(cur.peek(), None | Some(',')) {
                    break;
                }
                return Err(LinkFormatError::EmptyParam(name_pos));
            }
            cur.skip_ws();
            let value = if cur.peek() == Some('=') {
                cur.bump();
                cur.skip_ws();
                if cur.peek() == Some('"') {
                    let quote_pos = cur.pos;
                    cur.bump();
                    let mut value = String::new();
                    loop {
                        match cur.bump() {
                            None => return Err(LinkFormatError::UnterminatedQuote(quote_pos)),
                            Some('"') => break,
                            Some('\\') => match cur.bump() {
                                Some(c) => value.push(c),
                                None => return Err(LinkFormatError::UnterminatedQuote(quote_pos)),
                            },
                            Some(c) => value.push(c),
                        }
                    }
                    value
                } else {
                    cur.take_while(|c| !(c == ';' || c == ',' || c.is_whitespace()))
                        .to_string()
                }
            } else {
                String::new()
            };
            link.params.push((name.to_ascii_lowercase(), value));
        }
        links.push(link);
    }
    Ok(links)
}

/// Renders one entry; values are always quoted.
pub fn format_link(link: &LinkValue) -> String {
    let mut out = format!("<{}>", link.target);
    for (k, v) in &link.params {
        out.push_str("; ");
        out.push_str(k);
        out.push_str("=\"");
        for c in v.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
    }
    out
}
