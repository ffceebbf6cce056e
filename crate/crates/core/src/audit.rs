//! The end-to-end audit: base captures, HTML probes, zone-manager captures,
//! resolution and aggregate metrics, assembled into an [`AuditReport`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use thiserror::Error;

use crate::cache::Cache;
use crate::cdx::{CaptureSet, FilterSpec};
use crate::config::{ConfigError, ResolvedConfig, Sampling, ZoneSource};
use crate::endpoint::ArchiveEndpoint;
use crate::era::{zone_manager_url, EraTimeline, ZoneLoading, ZoneUrl};
use crate::fetch::{fetch_captures, fetch_raw, fetch_timemap, FetchError, Fetcher, HttpTransport, Transport};
use crate::memento::{aggregate_timemaps, MementoRecord};
use crate::metrics::{
    day_series_from_spreads, hero_violation_scan_with, threshold_impact_from_spreads, DateRange, HeroViolationReport,
};
use crate::probe::{probe_html_with, HtmlProbeResult, ProbeOptions, HERO_ZONE_ID};
use crate::report::{
    AuditReport, BaseSummary, FetchRecord, ProbeRow, Provenance, ZoneCaptureSource, ZoneReport, SCHEMA_VERSION,
};
use crate::resolve::{Classification, ResolutionResult, Resolver, Threshold};
use crate::timestamp::{day_start, format_iso};
use crate::zones::ZoneSpec;

pub const RESOLUTION_MODEL: &str = "nearest-instant; ties to the earlier capture";

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("offline and not cached: {url} ({endpoint})")]
    CacheMiss { endpoint: String, url: String },
    #[error("base captures of {url}: {source}")]
    Base { url: String, source: FetchError },
    #[error("cache: {0}")]
    Io(#[from] std::io::Error),
}

impl AuditError {
    /// Process exit status: 1 for configuration problems, 3 for an offline
    /// cache miss, 2 when the run could not produce a report.
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Config(_) => 1,
            AuditError::CacheMiss { .. } => 3,
            AuditError::Base { .. } | AuditError::Io(_) => 2,
        }
    }
}

/// Exit status for a completed run.
pub fn report_exit_code(report: &AuditReport) -> i32 {
    if report.partial_failures > 0 {
        2
    } else {
        0
    }
}

/// Splits off the errors that abort a run; the rest degrade to diagnostics.
fn fatal(err: FetchError) -> Result<FetchError, AuditError> {
    match err {
        FetchError::CacheMiss { endpoint, url } => Err(AuditError::CacheMiss { endpoint, url }),
        FetchError::Io(e) => Err(AuditError::Io(e)),
        other => Ok(other),
    }
}

/// Runs the audit against the live network (or the cache, offline).
pub fn run_audit(resolved: &ResolvedConfig) -> Result<AuditReport, AuditError> {
    run_audit_with(resolved, Arc::new(HttpTransport::default()))
}

struct Run<'a> {
    cfg: &'a ResolvedConfig,
    endpoint: &'a ArchiveEndpoint,
    fetcher: Fetcher,
    diagnostics: Vec<String>,
    partial_failures: usize,
    fetches: Vec<FetchRecord>,
}

impl Run<'_> {
    fn degrade(&mut self, what: String, err: FetchError) -> Result<(), AuditError> {
        let err = fatal(err)?;
        self.diagnostics.push(format!("{what}: {err}"));
        self.partial_failures += 1;
        Ok(())
    }
}

/// First capture of each UTC day, or every capture.
pub fn sample(records: &[MementoRecord], sampling: Sampling) -> Vec<MementoRecord> {
    match sampling {
        Sampling::All => records.to_vec(),
        Sampling::FirstPerDay => {
            let mut seen = BTreeSet::new();
            records
                .iter()
                .filter(|m| seen.insert(m.capture_datetime.date_naive()))
                .cloned()
                .collect()
        }
    }
}

/// Maps `f` over `items` on up to `workers` scoped threads, keeping input order.
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

/// Days covered by the main range and every impact range.
fn fetch_window(ranges: &[DateRange]) -> (NaiveDate, NaiveDate) {
    let start = ranges.iter().map(|r| r.start).min().expect("at least one range");
    let end = ranges.iter().map(|r| r.end).max().expect("at least one range");
    (start, end)
}

/// Runs the audit with an explicit transport (tests use stubs).
pub fn run_audit_with(cfg: &ResolvedConfig, transport: Arc<dyn Transport>) -> Result<AuditReport, AuditError> {
    let endpoint = cfg.endpoint();
    let cache = Arc::new(Cache::open(&cfg.cache_root, cfg.cache_ttl)?);
    let fetcher = Fetcher::new(transport, cache, cfg.config.network).with_retry(cfg.retry);
    let mut run = Run {
        cfg,
        endpoint,
        fetcher,
        diagnostics: Vec::new(),
        partial_failures: 0,
        fetches: Vec::new(),
    };
    let c = &cfg.config;
    let ranges = cfg.impact_ranges();
    let (win_start, win_end) = fetch_window(&ranges);

    // Base captures.
    let filter = FilterSpec {
        status: Some(200),
        from: Some(win_start),
        to: Some(win_end - Duration::days(1)),
        page_size: c.page_size,
    };
    let base = match fetch_captures(&run.fetcher, endpoint, &c.target_url, &filter) {
        Ok(b) => b,
        Err(e) => {
            return Err(AuditError::Base {
                url: c.target_url.clone(),
                source: fatal(e)?,
            })
        }
    };
    if let Some(at) = base.fetched_at {
        run.fetches.push(FetchRecord {
            what: "cdx".into(),
            url: c.target_url.clone(),
            fetched_at: at,
        });
    }
    if base.report.skipped > 0 {
        run.diagnostics
            .push(format!("base CDX: {} line(s) skipped", base.report.skipped));
    }
    let population: Vec<MementoRecord> = base.captures.records.iter().map(|r| base.captures.memento(r)).collect();
    let in_range: Vec<MementoRecord> = population
        .iter()
        .filter(|m| c.date_range.contains(m.capture_datetime))
        .cloned()
        .collect();
    let sampled = sample(&in_range, c.sampling);

    // HTML probes.
    let probes = if c.probe_html {
        probe_all(&mut run, &sampled, cfg.probe_options())?
    } else {
        Vec::new()
    };
    let probe_by_access: HashMap<&str, &HtmlProbeResult> =
        probes.iter().map(|(m, p)| (m.access_url.as_str(), p)).collect();

    // Zones to audit.
    let zones: Vec<ZoneSpec> = match &c.zones {
        ZoneSource::Explicit(list) => list.iter().map(|z| z.to_spec()).collect(),
        ZoneSource::Auto(_) => {
            let newest = probes.iter().rev().find(|(_, p)| !p.zones_declared.is_empty());
            match newest {
                Some((m, p)) => {
                    run.diagnostics.push(format!("zones read from {}", m.access_url));
                    p.zones_declared.clone()
                }
                None => {
                    run.diagnostics
                        .push("no probed page declares CNN.Zones; using the default zone list".into());
                    match ZoneSource::default() {
                        ZoneSource::Explicit(list) => list.iter().map(|z| z.to_spec()).collect(),
                        ZoneSource::Auto(_) => unreachable!(),
                    }
                }
            }
        }
    };

    // Zone-manager captures per era URL, fetched once each.
    let mut capture_sets: BTreeMap<String, (ZoneUrl, CaptureSet, Option<String>)> = BTreeMap::new();
    let mut warned_uncovered = false;
    let mut wanted: Vec<ZoneSpec> = zones.clone();
    if c.probe_html && !wanted.iter().any(|z| z.id == HERO_ZONE_ID) {
        wanted.push(ZoneSpec::new(HERO_ZONE_ID));
    }
    let mut zone_urls_at: HashMap<(usize, DateTime<Utc>), Option<String>> = HashMap::new();
    for (zi, zone) in wanted.iter().enumerate() {
        for m in &population {
            let url = match zone_manager_url(zone, m.capture_datetime, &cfg.timeline) {
                Ok(u) => u,
                Err(e) => {
                    if !warned_uncovered {
                        run.diagnostics.push(format!("era timeline: {e}"));
                        warned_uncovered = true;
                    }
                    None
                }
            };
            if let Some(u) = &url {
                if !capture_sets.contains_key(&u.url) {
                    let fetched = fetch_zone(&mut run, u)?;
                    capture_sets.insert(u.url.clone(), fetched);
                }
            }
            zone_urls_at.insert((zi, m.capture_datetime), url.map(|u| u.url));
        }
    }
    let resolvers: BTreeMap<&str, Resolver> = capture_sets
        .iter()
        .map(|(url, (_, set, _))| (url.as_str(), Resolver::new(set)))
        .collect();

    // Per-zone resolution.
    let sampled_access: BTreeSet<&str> = sampled.iter().map(|m| m.access_url.as_str()).collect();
    let mut zone_reports = Vec::new();
    for (zi, zone) in zones.iter().enumerate() {
        let mut observations = Vec::new();
        let mut results = Vec::new();
        let mut undetermined = 0;
        let mut used_urls = BTreeSet::new();
        for m in &population {
            let Some(Some(url)) = zone_urls_at.get(&(zi, m.capture_datetime)) else {
                continue;
            };
            let state = match cfg.timeline.state_at(m.capture_datetime) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let include = match state.zone_loading(&zone.id) {
                ZoneLoading::Never => false,
                ZoneLoading::Always => true,
                ZoneLoading::Sometimes => match probe_by_access.get(m.access_url.as_str()) {
                    Some(p) => !p.has_hero_section_id,
                    None => {
                        if c.date_range.contains(m.capture_datetime) {
                            undetermined += 1;
                        }
                        false
                    }
                },
            };
            if !include {
                continue;
            }
            used_urls.insert(url.clone());
            let resolver = &resolvers[url.as_str()];
            observations.push((m.capture_datetime, resolver.spread(m.capture_datetime)));
            if sampled_access.contains(m.access_url.as_str()) {
                let mut r = resolver.classify(m.capture_datetime, c.violation_threshold);
                r.base_access_url = Some(m.access_url.clone());
                results.push(r);
            }
        }
        let in_main: Vec<_> = observations
            .iter()
            .filter(|(t, _)| c.date_range.contains(*t))
            .cloned()
            .collect();
        let day_series = day_series_from_spreads(in_main);
        let threshold_impact = ranges
            .iter()
            .flat_map(|r| threshold_impact_from_spreads(&observations, *r, &c.thresholds))
            .collect();
        let sources = used_urls
            .iter()
            .map(|u| {
                let (zu, set, err) = &capture_sets[u];
                ZoneCaptureSource {
                    url: zu.clone(),
                    captures: set.len(),
                    error: err.clone(),
                }
            })
            .collect();
        zone_reports.push(ZoneReport {
            zone: zone.clone(),
            sources,
            results,
            day_series,
            threshold_impact,
            undetermined,
        });
    }

    // Hero scan over probed pages whose era may load the Hero client-side.
    let hero = if c.probe_html {
        let hero_idx = wanted
            .iter()
            .position(|z| z.id == HERO_ZONE_ID)
            .expect("hero zone added");
        let candidates: Vec<(MementoRecord, HtmlProbeResult)> = probes
            .iter()
            .filter(|(m, _)| {
                cfg.timeline
                    .state_at(m.capture_datetime)
                    .map(|s| s.zone_loading(HERO_ZONE_ID) != ZoneLoading::Never)
                    .unwrap_or(false)
            })
            .cloned()
            .collect();
        Some(hero_scan(
            &candidates,
            hero_idx,
            &zone_urls_at,
            &resolvers,
            c.violation_threshold,
        ))
    } else {
        None
    };

    let timemap_summary = if c.timemap_summary {
        Some(timemap_summary(&mut run)?)
    } else {
        None
    };

    let mut endpoints = BTreeMap::new();
    for e in &cfg.roster.endpoints {
        endpoints.insert(format!("{}.timemap", e.name), e.timemap_url_template.clone());
        for (k, v) in [
            ("cdx", &e.cdx_url_template),
            ("replay", &e.replay_template),
            ("raw", &e.raw_template),
        ] {
            if let Some(v) = v {
                endpoints.insert(format!("{}.{k}", e.name), v.clone());
            }
        }
    }
    run.fetches.sort_by(|a, b| (&a.what, &a.url).cmp(&(&b.what, &b.url)));

    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        target_url: c.target_url.clone(),
        archive: c.archive.clone(),
        date_range: c.date_range,
        base: BaseSummary {
            url: c.target_url.clone(),
            filter: base.captures.filter_applied.clone(),
            total_captures: in_range.len(),
            sampled: sampled.len(),
            sampling: c.sampling,
            parse_report: base.report.clone(),
        },
        timemap_summary,
        zones: zone_reports,
        hero,
        probes: probes
            .iter()
            .map(|(m, p)| ProbeRow {
                datetime: m.capture_datetime,
                access_url: m.access_url.clone(),
                has_hero_section_id: p.has_hero_section_id,
                content_word_count: p.content_word_count,
                zones_declared: p.zones_declared.len(),
                csr_verdict: p.csr_verdict,
            })
            .collect(),
        diagnostics: run.diagnostics,
        partial_failures: run.partial_failures,
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: c.hash(),
            endpoints,
            fetches: run.fetches,
            resolution_model: RESOLUTION_MODEL.into(),
            generated_at: Some(format_iso(&Utc::now())),
        },
    })
}

fn probe_all(
    run: &mut Run<'_>,
    sampled: &[MementoRecord],
    opts: ProbeOptions,
) -> Result<Vec<(MementoRecord, HtmlProbeResult)>, AuditError> {
    let endpoint = run.endpoint;
    let fetcher = &run.fetcher;
    let outcomes = parallel_map(sampled, run.cfg.config.concurrency, |m| {
        fetch_raw(fetcher, endpoint, &m.stamp(), &m.original_url)
    });
    let mut probes = Vec::new();
    for (m, outcome) in sampled.iter().zip(outcomes) {
        match outcome {
            Ok(Some(resp)) if resp.status == 200 => {
                let html = String::from_utf8_lossy(&resp.body);
                probes.push((m.clone(), probe_html_with(&html, &opts)));
            }
            Ok(Some(resp)) => {
                run.diagnostics
                    .push(format!("probe {}: HTTP {}", m.access_url, resp.status));
                run.partial_failures += 1;
            }
            Ok(None) => {
                run.diagnostics.push(format!(
                    "probe skipped: endpoint `{}` has no raw template",
                    endpoint.name
                ));
                run.partial_failures += 1;
                break;
            }
            Err(e) => run.degrade(format!("probe {}", m.access_url), e)?,
        }
    }
    Ok(probes)
}

fn fetch_zone(run: &mut Run<'_>, url: &ZoneUrl) -> Result<(ZoneUrl, CaptureSet, Option<String>), AuditError> {
    let filter = FilterSpec {
        page_size: run.cfg.config.page_size,
        ..FilterSpec::status_ok()
    };
    match fetch_captures(&run.fetcher, run.endpoint, &url.url, &filter) {
        Ok(f) => {
            if let Some(at) = f.fetched_at {
                run.fetches.push(FetchRecord {
                    what: "cdx".into(),
                    url: url.url.clone(),
                    fetched_at: at,
                });
            }
            if f.report.skipped > 0 {
                run.diagnostics
                    .push(format!("{}: {} CDX line(s) skipped", url.url, f.report.skipped));
            }
            Ok((url.clone(), f.captures, None))
        }
        Err(e) => {
            let msg = e.to_string();
            run.degrade(format!("zone captures {}", url.url), e)?;
            let empty = CaptureSet::empty(url.url.clone())
                .with_archive(run.endpoint.name.clone(), run.endpoint.replay_template_or_default());
            Ok((url.clone(), empty, Some(msg)))
        }
    }
}

fn hero_scan(
    candidates: &[(MementoRecord, HtmlProbeResult)],
    hero_idx: usize,
    zone_urls_at: &HashMap<(usize, DateTime<Utc>), Option<String>>,
    resolvers: &BTreeMap<&str, Resolver>,
    threshold: Threshold,
) -> HeroViolationReport {
    hero_violation_scan_with(
        candidates,
        |t| match zone_urls_at.get(&(hero_idx, t)).cloned().flatten() {
            Some(url) => resolvers[url.as_str()].classify(t, threshold),
            None => ResolutionResult {
                base_datetime: t,
                base_access_url: None,
                resource_url: String::new(),
                resolved: None,
                spread_seconds: None,
                classification: Classification::Unresolvable,
                threshold,
            },
        },
        threshold,
    )
}

fn timemap_summary(run: &mut Run<'_>) -> Result<BTreeMap<String, usize>, AuditError> {
    let target = run.cfg.config.target_url.clone();
    let since = day_start(run.cfg.config.date_range.start);
    let until = day_start(run.cfg.config.date_range.end);
    let mut maps = Vec::new();
    let mut counts = BTreeMap::new();
    for e in &run.cfg.roster.endpoints {
        counts.insert(e.name.clone(), 0);
        match fetch_timemap(&run.fetcher, e, &target) {
            Ok(f) => {
                if let Some(at) = f.timemap.retrieved_at {
                    run.fetches.push(FetchRecord {
                        what: format!("timemap {}", e.name),
                        url: target.clone(),
                        fetched_at: at,
                    });
                }
                let mut tm = f.timemap.since(since);
                tm.mementos.retain(|m| m.capture_datetime < until);
                maps.push(tm);
            }
            Err(err) => run.degrade(format!("timemap {}", e.name), err)?,
        }
    }
    if !maps.is_empty() {
        match aggregate_timemaps(&maps) {
            Ok(tm) => counts.extend(tm.archive_counts()),
            Err(err) => {
                run.diagnostics.push(format!("timemap aggregation: {err}"));
                run.partial_failures += 1;
            }
        }
    }
    Ok(counts)
}

/// The timeline's client-side zone-manager URLs for `zone`, one per extension era.
pub fn era_zone_urls(zone: &ZoneSpec, timeline: &EraTimeline) -> Vec<ZoneUrl> {
    let mut out: Vec<ZoneUrl> = Vec::new();
    for (d, _) in timeline.boundaries() {
        if let Ok(Some(u)) = zone_manager_url(zone, day_start(*d), timeline) {
            if !out.iter().any(|o| o.url == u.url) {
                out.push(u);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timestamp::parse_stamp;

    fn m(stamp: &str) -> MementoRecord {
        MementoRecord {
            original_url: "http://www.cnn.com/".into(),
            capture_datetime: parse_stamp(stamp).unwrap(),
            access_url: format!("https://web.archive.org/web/{stamp}/http://www.cnn.com/"),
            source_archive: "web.archive.org".into(),
        }
    }

    #[test]
    fn first_per_day_sampling() {
        let recs = vec![m("20150101010000"), m("20150101020000"), m("20150102000000")];
        let s = sample(&recs, Sampling::FirstPerDay);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].stamp(), "20150101010000");
        assert_eq!(sample(&recs, Sampling::All).len(), 3);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..100).collect();
        let out = parallel_map(&items, 7, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u32>::new(), 3, |x| *x).is_empty());
    }

    #[test]
    fn default_timeline_has_three_zone_urls() {
        let urls = era_zone_urls(&ZoneSpec::new("homepage2-zone-1"), &EraTimeline::default());
        let exts: Vec<&str> = urls.iter().map(|u| u.extension.as_str()).collect();
        assert_eq!(exts, [".html", ".izl.json", ".izl"]);
    }

    #[test]
    fn exit_codes() {
        let e = AuditError::CacheMiss {
            endpoint: "a".into(),
            url: "u".into(),
        };
        assert_eq!(e.exit_code(), 3);
        assert_eq!(AuditError::Config(ConfigError::Invalid("x".into())).exit_code(), 1);
    }
}
