use serde::{Deserialize, Serialize};

/// Number of skip reasons kept verbatim; the rest are only counted.
const KEPT_REASONS: usize = 16;

/// Tally of entries a lenient parser accepted or skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub accepted: usize,
    pub skipped: usize,
    pub reasons: Vec<String>,
}

impl ParseReport {
    pub fn skip(&mut self, reason: impl Into<String>) {
        self.skipped += 1;
        if self.reasons.len() < KEPT_REASONS {
            self.reasons.push(reason.into());
        }
    }

    pub fn merge(&mut self, other: &ParseReport) {
        self.accepted += other.accepted;
        self.skipped += other.skipped;
        for r in &other.reasons {
            if self.reasons.len() >= KEPT_REASONS {
                break;
            }
            self.reasons.push(r.clone());
        }
    }
}
