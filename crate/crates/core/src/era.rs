//! Zone-delivery eras and zone-manager URL generation.
//!
//! The timeline is data: a list of dated delivery changes that can be
//! loaded from a `YYYY-MM-DD = descriptor` file. Each era is half-open,
//! `[start, next start)`, at UTC midnight boundaries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::HERO_ZONE_ID;
use crate::timestamp::{day_start, format_iso};
use crate::zones::ZoneSpec;

pub const ZONE_URL_ROOT: &str = "http://www.cnn.com/data/ocs/section/";
pub const ZONE_URL_SUFFIX: &str = "/views/zones/common/zone-manager";

#[derive(Debug, Error)]
pub enum EraError {
    #[error("timeline does not cover {0}")]
    UncoveredInstant(String),
    #[error("timeline line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("timeline dates must be strictly increasing ({0} after {1})")]
    NotIncreasing(NaiveDate, NaiveDate),
    #[error("timeline is empty")]
    Empty,
    #[error("reading timeline: {0}")]
    Io(#[from] std::io::Error),
}

/// A change in how zone content is delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Delivery {
    /// All content in the base HTML, divided into zones.
    BaseHtmlZones,
    /// Every zone but the Hero fetched client-side as `zone-manager.html`.
    CsrExceptHero,
    /// The Hero is sometimes fetched client-side too.
    HeroSometimesCsr,
    /// Zone-manager files become JSON, named `.izl.json`.
    IzlJson,
    /// Every zone, Hero included, fetched client-side.
    AllZonesCsr,
    /// Zone-manager extension becomes `.izl`.
    Izl,
}

impl Delivery {
    pub const ALL: [Delivery; 6] = [
        Delivery::BaseHtmlZones,
        Delivery::CsrExceptHero,
        Delivery::HeroSometimesCsr,
        Delivery::IzlJson,
        Delivery::AllZonesCsr,
        Delivery::Izl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Delivery::BaseHtmlZones => "base-html-zones",
            Delivery::CsrExceptHero => "csr-except-hero",
            Delivery::HeroSometimesCsr => "hero-sometimes-csr",
            Delivery::IzlJson => "izl-json",
            Delivery::AllZonesCsr => "all-zones-csr",
            Delivery::Izl => "izl",
        }
    }
}

impl fmt::Display for Delivery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Delivery {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Delivery::ALL
            .into_iter()
            .find(|d| d.as_str() == s.trim())
            .ok_or_else(|| format!("unknown delivery descriptor `{}`", s.trim()))
    }
}

/// How the Hero zone reaches the page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeroDelivery {
    InHtml,
    Sometimes,
    ClientSide,
}

/// Whether a given zone is fetched client-side in some era.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneLoading {
    Never,
    /// Depends on the individual page; probe its HTML.
    Sometimes,
    Always,
}

/// Cumulative delivery state at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraState {
    pub delivery: Delivery,
    pub since: Option<NaiveDate>,
    /// Zone-manager extension, or `None` before client-side loading.
    pub extension: Option<&'static str>,
    pub hero: HeroDelivery,
}

impl EraState {
    pub fn zone_loading(&self, zone_id: &str) -> ZoneLoading {
        if self.extension.is_none() {
            return ZoneLoading::Never;
        }
        if zone_id != HERO_ZONE_ID {
            return ZoneLoading::Always;
        }
        match self.hero {
            HeroDelivery::InHtml => ZoneLoading::Never,
            HeroDelivery::Sometimes => ZoneLoading::Sometimes,
            HeroDelivery::ClientSide => ZoneLoading::Always,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraTimeline {
    boundaries: Vec<(NaiveDate, Delivery)>,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for EraTimeline {
    /// CNN.com's observed zone-manager history.
    fn default() -> Self {
        EraTimeline {
            boundaries: vec![
                (ymd(2015, 2, 18), Delivery::BaseHtmlZones),
                (ymd(2015, 4, 24), Delivery::CsrExceptHero),
                (ymd(2015, 9, 17), Delivery::HeroSometimesCsr),
                (ymd(2016, 10, 18), Delivery::IzlJson),
                (ymd(2016, 11, 1), Delivery::AllZonesCsr),
                (ymd(2017, 1, 31), Delivery::Izl),
            ],
        }
    }
}

impl EraTimeline {
    pub fn new(boundaries: Vec<(NaiveDate, Delivery)>) -> Result<Self, EraError> {
        if boundaries.is_empty() {
            return Err(EraError::Empty);
        }
        for w in boundaries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(EraError::NotIncreasing(w[1].0, w[0].0));
            }
        }
        Ok(EraTimeline { boundaries })
    }

    pub fn boundaries(&self) -> &[(NaiveDate, Delivery)] {
        &self.boundaries
    }

    /// Parses `YYYY-MM-DD = descriptor` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EraError> {
        let mut boundaries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| EraError::Config { line: n + 1, reason };
            let (date, desc) = line
                .split_once('=')
                .ok_or_else(|| err("expected `YYYY-MM-DD = descriptor`".into()))?;
            let date = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
                .map_err(|e| err(format!("bad date `{}`: {e}", date.trim())))?;
            let delivery = desc.parse::<Delivery>().map_err(err)?;
            boundaries.push((date, delivery));
        }
        EraTimeline::new(boundaries)
    }

    pub fn load(path: &Path) -> Result<Self, EraError> {
        EraTimeline::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_config(&self) -> String {
        let mut out = String::from("# zone-delivery timeline: YYYY-MM-DD = descriptor\n");
        for (d, delivery) in &self.boundaries {
            out.push_str(&format!("{} = {}\n", d.format("%Y-%m-%d"), delivery));
        }
        out
    }

    /// Delivery state in force at `at`. Instants before the first boundary
    /// are covered only when the timeline opens with a non-client-side era,
    /// since nothing was fetched client-side before it either.
    pub fn state_at(&self, at: DateTime<Utc>) -> Result<EraState, EraError> {
        let idx = self.boundaries.partition_point(|(d, _)| day_start(*d) <= at);
        if idx == 0 {
            let (_, first) = self.boundaries[0];
            if first == Delivery::BaseHtmlZones {
                return Ok(EraState {
                    delivery: first,
                    since: None,
                    extension: None,
                    hero: HeroDelivery::InHtml,
                });
            }
            return Err(EraError::UncoveredInstant(format_iso(&at)));
        }
        let mut extension: Option<&'static str> = None;
        let mut hero = HeroDelivery::InHtml;
        for (_, delivery) in &self.boundaries[..idx] {
            match delivery {
                Delivery::BaseHtmlZones => {
                    extension = None;
                    hero = HeroDelivery::InHtml;
                }
                Delivery::CsrExceptHero => {
                    extension = Some(".html");
                    hero = HeroDelivery::InHtml;
                }
                Delivery::HeroSometimesCsr => {
                    extension.get_or_insert(".html");
                    hero = HeroDelivery::Sometimes;
                }
                Delivery::IzlJson => extension = Some(".izl.json"),
                Delivery::AllZonesCsr => {
                    extension.get_or_insert(".html");
                    hero = HeroDelivery::ClientSide;
                }
                Delivery::Izl => extension = Some(".izl"),
            }
        }
        let (since, delivery) = self.boundaries[idx - 1];
        Ok(EraState {
            delivery,
            since: Some(since),
            extension,
            hero,
        })
    }
}

/// A generated zone-manager URL and the era it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneUrl {
    pub zone_id: String,
    pub url: String,
    pub extension: String,
    pub era: Delivery,
}

pub fn zone_manager_url_for_extension(zone: &ZoneSpec, extension: &str) -> String {
    format!(
        "{ZONE_URL_ROOT}{}:{}{ZONE_URL_SUFFIX}{extension}",
        zone.effective_uri(),
        zone.id
    )
}

/// The zone-manager URL a page captured at `at` would request for `zone`,
/// or `None` when zones were not yet fetched client-side.
pub fn zone_manager_url(
    zone: &ZoneSpec,
    at: DateTime<Utc>,
    timeline: &EraTimeline,
) -> Result<Option<ZoneUrl>, EraError> {
    let state = timeline.state_at(at)?;
    Ok(state.extension.map(|ext| ZoneUrl {
        zone_id: zone.id.clone(),
        url: zone_manager_url_for_extension(zone, ext),
        extension: ext.to_string(),
        era: state.delivery,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timestamp::parse_stamp;

    #[test]
    fn earliest_zone_manager_file() {
        let zone = ZoneSpec::new("homepage4-zone-5");
        let url = zone_manager_url(&zone, parse_stamp("20150427").unwrap(), &EraTimeline::default())
            .unwrap()
            .unwrap();
        assert_eq!(
            url.url,
            "http://www.cnn.com/data/ocs/section/index.html:homepage4-zone-5/views/zones/common/zone-manager.html"
        );
    }

    #[test]
    fn izl_era() {
        let zone = ZoneSpec::new("homepage1-zone-1");
        let url = zone_manager_url(&zone, parse_stamp("20200618234848").unwrap(), &EraTimeline::default())
            .unwrap()
            .unwrap();
        assert_eq!(
            url.url,
            "http://www.cnn.com/data/ocs/section/index.html:homepage1-zone-1/views/zones/common/zone-manager.izl"
        );
        assert_eq!(url.era, Delivery::Izl);
    }

    #[test]
    fn before_csr_is_none() {
        let zone = ZoneSpec::new("homepage2-zone-1");
        let t = EraTimeline::default();
        assert_eq!(
            zone_manager_url(&zone, parse_stamp("20150101").unwrap(), &t).unwrap(),
            None
        );
        assert_eq!(
            zone_manager_url(&zone, parse_stamp("20150301").unwrap(), &t).unwrap(),
            None
        );
    }

    #[test]
    fn uncovered_when_timeline_opens_client_side() {
        let t = EraTimeline::new(vec![(ymd(2016, 10, 18), Delivery::IzlJson)]).unwrap();
        let zone = ZoneSpec::new("homepage2-zone-1");
        assert!(matches!(
            zone_manager_url(&zone, parse_stamp("20160101").unwrap(), &t),
            Err(EraError::UncoveredInstant(_))
        ));
    }

    #[test]
    fn hero_loading_by_era() {
        let t = EraTimeline::default();
        let at = |s: &str| t.state_at(parse_stamp(s).unwrap()).unwrap();
        assert_eq!(at("20150601").zone_loading(HERO_ZONE_ID), ZoneLoading::Never);
        assert_eq!(at("20150601").zone_loading("homepage2-zone-1"), ZoneLoading::Always);
        assert_eq!(at("20160601").zone_loading(HERO_ZONE_ID), ZoneLoading::Sometimes);
        assert_eq!(at("20161020").zone_loading(HERO_ZONE_ID), ZoneLoading::Sometimes);
        assert_eq!(at("20161020").extension, Some(".izl.json"));
        assert_eq!(at("20161102").zone_loading(HERO_ZONE_ID), ZoneLoading::Always);
        assert_eq!(at("20150301").zone_loading("homepage2-zone-1"), ZoneLoading::Never);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let t = EraTimeline::default();
        assert_eq!(EraTimeline::parse(&t.to_config()).unwrap(), t);
        assert!(matches!(
            EraTimeline::parse("2015-01-01 = nope"),
            Err(EraError::Config { line: 1, .. })
        ));
        assert!(matches!(EraTimeline::parse("garbage"), Err(EraError::Config { .. })));
        assert!(matches!(
            EraTimeline::parse("2016-01-01 = izl\n2015-01-01 = izl-json"),
            Err(EraError::NotIncreasing(..))
        ));
        assert!(matches!(EraTimeline::parse("# only comments\n"), Err(EraError::Empty)));
    }
}
