//! Regenerates `fixtures/bundle` and `fixtures/corpus`.
//!
//! A seeded synthetic archive is served through the library's `Transport`
//! trait while an online audit fills the bundle cache. Expected counts are
//! computed separately by linear scans and written to `expected.json`.
//!
//!     cargo run -p replay-audit --example make_fixture_bundle

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use replay_audit::audit::run_audit_with;
use replay_audit::config::AuditConfig;
use replay_audit::fetch::{HttpResponse, NetworkMode, Transport, TransportError};
use replay_audit::timestamp::{day_start, format_stamp, parse_stamp};
use replay_audit::urlkey::canonical_urlkey;

const TARGET: &str = "http://www.cnn.com/";
const SEED: u64 = 4887;
const ZONES: [&str; 3] = ["homepage1-zone-1", "homepage2-zone-1", "homepage3-zone-1"];
const THRESHOLDS_H: [i64; 5] = [1, 2, 6, 24, 48];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Page {
    HeroInHtml,
    NoHeroProse,
    Skeleton,
}

#[derive(Clone)]
struct Cap {
    ts: DateTime<Utc>,
    status: u16,
    digest: String,
}

struct World {
    base: Vec<Cap>,
    pages: BTreeMap<DateTime<Utc>, Page>,
    zones: BTreeMap<String, Vec<Cap>>,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn zone_url(id: &str, ext: &str) -> String {
    format!("http://www.cnn.com/data/ocs/section/index.html:{id}/views/zones/common/zone-manager{ext}")
}

fn digest(rng: &mut StdRng) -> String {
    const ALPHA: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";
    (0..32).map(|_| ALPHA[rng.gen_range(0..32)] as char).collect()
}

fn at(day: NaiveDate, rng: &mut StdRng) -> DateTime<Utc> {
    day_start(day) + Duration::seconds(rng.gen_range(0..86_400))
}

fn days(from: NaiveDate, to: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    from.iter_days().take_while(move |d| *d < to)
}

fn page_kind(t: DateTime<Utc>, rng: &mut StdRng) -> Page {
    let d = t.date_naive();
    if d < ymd(2015, 9, 17) {
        Page::HeroInHtml
    } else if d < ymd(2016, 11, 1) {
        if rng.gen_bool(0.5) {
            Page::HeroInHtml
        } else {
            Page::NoHeroProse
        }
    } else {
        Page::Skeleton
    }
}

fn build_world() -> World {
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut base = Vec::new();
    let mut pages = BTreeMap::new();
    for day in days(ymd(2015, 4, 20), ymd(2016, 12, 26)) {
        for _ in 0..rng.gen_range(1..=4) {
            let ts = at(day, &mut rng);
            base.push(Cap {
                ts,
                status: 200,
                digest: digest(&mut rng),
            });
            pages.insert(ts, page_kind(ts, &mut rng));
        }
        if rng.gen_bool(0.05) {
            let ts = at(day, &mut rng);
            base.push(Cap {
                ts,
                status: 302,
                digest: digest(&mut rng),
            });
        }
    }

    let mut zones: BTreeMap<String, Vec<Cap>> = BTreeMap::new();
    let mut add = |url: String, ts: DateTime<Utc>, status: u16, rng: &mut StdRng| {
        zones.entry(url).or_default().push(Cap {
            ts,
            status,
            digest: digest(rng),
        });
    };
    let fixed = |s: &str| parse_stamp(s).unwrap();

    // Sparse 2015 holdings, then denser coverage from late July 2016.
    let hp2 = zone_url("homepage2-zone-1", ".html");
    for s in ["20150710001845", "20160106233405", "20160314101500", "20160502180000"] {
        add(hp2.clone(), fixed(s), 200, &mut rng);
    }
    add(hp2.clone(), fixed("20150901000000"), 404, &mut rng);
    let hp3 = zone_url("homepage3-zone-1", ".html");
    for s in ["20150601120000", "20151120083000", "20160415000000"] {
        add(hp3.clone(), fixed(s), 200, &mut rng);
    }
    let hp1 = zone_url("homepage1-zone-1", ".html");
    add(hp1.clone(), fixed("20160729003156"), 200, &mut rng);

    for (id, p) in [
        ("homepage1-zone-1", 0.6),
        ("homepage2-zone-1", 0.8),
        ("homepage3-zone-1", 0.7),
    ] {
        let html = zone_url(id, ".html");
        for day in days(ymd(2016, 7, 30), ymd(2016, 10, 18)) {
            if rng.gen_bool(p) {
                for _ in 0..rng.gen_range(1..=3) {
                    let ts = at(day, &mut rng);
                    add(html.clone(), ts, 200, &mut rng);
                }
            }
        }
        let json = zone_url(id, ".izl.json");
        for day in days(ymd(2016, 10, 18), ymd(2017, 1, 31)) {
            let gap = id == "homepage1-zone-1" && day >= ymd(2016, 11, 10) && day < ymd(2016, 11, 20);
            if !gap && rng.gen_bool(0.85) {
                for _ in 0..rng.gen_range(1..=4) {
                    let ts = at(day, &mut rng);
                    add(json.clone(), ts, 200, &mut rng);
                }
            }
        }
    }
    World { base, pages, zones }
}

fn hero_page(stamp: &str) -> String {
    format!(
        r#"<!DOCTYPE html><html><head><title>CNN.com</title>
<script>var CNN = CNN || {{}}; CNN.contentModel = {{"pageType": "section"}};</script></head>
<body class="pg-homepage">
<section class="zn zn-homepage1-zone-1 zn--idx-0 t-light zn-loaded" id="homepage1-zone-1" data-zone-label="Hero">
<h2 class="banner-text"><strong>Top story for {stamp}</strong></h2>
<ul><li>the latest reporting from our correspondents around the world as events unfold</li>
<li>analysis and live updates throughout the day with video and photos</li></ul>
</section>
<section class="zn zn-homepage2-zone-1" id="homepage2-zone-1"></section>
</body></html>
"#
    )
}

fn prose_page(stamp: &str) -> String {
    format!(
        r#"<!DOCTYPE html><html><head><title>CNN.com</title>
<script>CNN.Zones = {{"zones": {{"baseUri": "index.html", "minWidth": {{"800": [{{"id": "homepage1-zone-1"}}, {{"id": "homepage2-zone-1"}}, {{"id": "homepage3-zone-1"}}]}}}}}};</script></head>
<body class="pg-homepage">
<div class="zn-loading" data-zone="homepage1-zone-1"></div>
<div class="pg-rail"><p>Capture {stamp}: more stories from around the world, updated through the day with the latest news and video from our team</p></div>
</body></html>
"#
    )
}

fn skeleton_page(_stamp: &str) -> String {
    r#"<!DOCTYPE html><html><head><title>CNN</title>
<script>CNN.Zones = {"zones": {"baseUri": "index.html", "minWidth": {"800": [{"id": "homepage-injection-zone-1", "uri": "_homepage-zone-injection/index.html"}, {"id": "homepage1-zone-1"}, {"id": "homepage2-zone-1"}, {"id": "homepage3-zone-1"}]}}};</script></head>
<body><div class="zn-loading"></div><noscript>Please enable JavaScript to view the homepage.</noscript></body></html>
"#
    .to_string()
}

fn render(kind: Page, stamp: &str) -> String {
    match kind {
        Page::HeroInHtml => hero_page(stamp),
        Page::NoHeroProse => prose_page(stamp),
        Page::Skeleton => skeleton_page(stamp),
    }
}

/// Answers CDX queries (with resume keys) and `id_` raw fetches.
struct SyntheticArchive {
    world: World,
}

impl SyntheticArchive {
    fn cdx(&self, query: &str) -> HttpResponse {
        let params: BTreeMap<String, String> = url::form_urlencoded::parse(query.as_bytes()).into_owned().collect();
        let target = params.get("url").cloned().unwrap_or_default();
        let caps: Vec<Cap> = if target == TARGET {
            self.world.base.clone()
        } else {
            self.world.zones.get(&target).cloned().unwrap_or_default()
        };
        let mut caps = caps;
        caps.sort_by_key(|c| c.ts);
        let key = canonical_urlkey(&target).unwrap();
        let offset: usize = params.get("resumeKey").and_then(|k| k.parse().ok()).unwrap_or(0);
        let limit: usize = params.get("limit").and_then(|l| l.parse().ok()).unwrap_or(usize::MAX);
        let end = offset.saturating_add(limit).min(caps.len());
        let mime = if target.ends_with(".izl.json") {
            "application/json"
        } else {
            "text/html"
        };
        let mut body = String::new();
        for c in &caps[offset.min(end)..end] {
            body.push_str(&format!(
                "{key} {} {target} {mime} {} {} {}\n",
                format_stamp(&c.ts),
                c.status,
                c.digest,
                2000 + c.digest.len()
            ));
        }
        if end < caps.len() {
            body.push_str(&format!("\n{end}\n"));
        }
        HttpResponse {
            status: 200,
            body: body.into_bytes(),
        }
    }

    fn raw(&self, stamp: &str) -> HttpResponse {
        match parse_stamp(stamp).ok().and_then(|t| self.world.pages.get(&t)) {
            Some(kind) => HttpResponse {
                status: 200,
                body: render(*kind, stamp).into_bytes(),
            },
            None => HttpResponse {
                status: 404,
                body: Vec::new(),
            },
        }
    }
}

impl Transport for SyntheticArchive {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        if let Some(q) = url.strip_prefix("https://web.archive.org/cdx/search/cdx?") {
            return Ok(self.cdx(q));
        }
        if let Some(rest) = url.strip_prefix("https://web.archive.org/web/") {
            if let Some((stamp, _)) = rest.split_once("id_/") {
                return Ok(self.raw(stamp));
            }
        }
        Ok(HttpResponse {
            status: 404,
            body: Vec::new(),
        })
    }
}

/// Linear-scan nearest with ties to the earlier capture.
fn brute_spread(base: DateTime<Utc>, caps: &[DateTime<Utc>]) -> Option<i64> {
    let mut best: Option<(i64, DateTime<Utc>)> = None;
    for &t in caps {
        let d = (t - base).num_seconds().abs();
        best = match best {
            Some((bd, bt)) if bd < d || (bd == d && bt <= t) => Some((bd, bt)),
            _ => Some((d, t)),
        };
    }
    best.map(|(_, t)| (t - base).num_seconds())
}

fn expected(world: &World, start: NaiveDate, end: NaiveDate) -> serde_json::Value {
    let in_range: Vec<&Cap> = world
        .base
        .iter()
        .filter(|c| c.status == 200 && c.ts >= day_start(start) && c.ts < day_start(end))
        .collect();
    let mut seen = BTreeSet::new();
    let sampled: BTreeSet<DateTime<Utc>> = in_range
        .iter()
        .map(|c| c.ts)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|t| seen.insert(t.date_naive()))
        .collect();
    let ok_caps = |url: &str| -> Vec<DateTime<Utc>> {
        world
            .zones
            .get(url)
            .map(|v| v.iter().filter(|c| c.status == 200).map(|c| c.ts).collect())
            .unwrap_or_default()
    };
    let ext_at = |d: NaiveDate| if d < ymd(2016, 10, 18) { ".html" } else { ".izl.json" };
    let limit = 48 * 3600;

    let mut zones = serde_json::Map::new();
    for id in ZONES {
        let mut obs = Vec::new();
        let mut undetermined = 0;
        let mut rows = 0;
        let mut row_violations = 0;
        for c in &in_range {
            let d = c.ts.date_naive();
            if d < ymd(2015, 4, 24) {
                continue;
            }
            let include = if id != "homepage1-zone-1" || d >= ymd(2016, 11, 1) {
                true
            } else if d < ymd(2015, 9, 17) {
                false
            } else if sampled.contains(&c.ts) {
                world.pages[&c.ts] != Page::HeroInHtml
            } else {
                undetermined += 1;
                false
            };
            if !include {
                continue;
            }
            let spread = brute_spread(c.ts, &ok_caps(&zone_url(id, ext_at(d))));
            obs.push((c.ts, spread));
            if sampled.contains(&c.ts) {
                rows += 1;
                if spread.is_none_or(|s| s.abs() > limit) {
                    row_violations += 1;
                }
            }
        }
        let total_days: BTreeSet<NaiveDate> = obs.iter().map(|(t, _)| t.date_naive()).collect();
        let mut affected = Vec::new();
        let mut affected_days = Vec::new();
        for h in THRESHOLDS_H {
            let hits: Vec<&(DateTime<Utc>, Option<i64>)> = obs
                .iter()
                .filter(|(_, s)| s.is_none_or(|s| s.abs() > h * 3600))
                .collect();
            affected.push(hits.len());
            affected_days.push(hits.iter().map(|(t, _)| t.date_naive()).collect::<BTreeSet<_>>().len());
        }
        zones.insert(
            id.to_string(),
            json!({
                "total_mementos": obs.len(),
                "total_days": total_days.len(),
                "affected_mementos": affected,
                "affected_days": affected_days,
                "result_rows": rows,
                "row_violations_48h": row_violations,
                "undetermined": undetermined,
            }),
        );
    }

    let mut scanned = 0;
    let mut excluded = 0;
    let mut violating = 0;
    for t in &sampled {
        let d = t.date_naive();
        if d < ymd(2015, 9, 17) {
            continue;
        }
        if world.pages[t] == Page::HeroInHtml {
            excluded += 1;
            continue;
        }
        scanned += 1;
        let spread = brute_spread(*t, &ok_caps(&zone_url("homepage1-zone-1", ext_at(d))));
        if spread.is_none_or(|s| s.abs() > limit) {
            violating += 1;
        }
    }

    json!({
        "base_total": in_range.len(),
        "sampled": sampled.len(),
        "thresholds_hours": THRESHOLDS_H,
        "zones": zones,
        "hero": {"scanned": scanned, "excluded_server_rendered": excluded, "violating": violating},
    })
}

const BUNDLE_CONFIG: &str = r#"# Offline audit over the vendored synthetic cache.
target_url = "http://www.cnn.com/"
archive = "web.archive.org"
network = "offline-cache-only"
cache_root = "cache"
sampling = "first-per-day"
page_size = 500
concurrency = 4
thresholds = ["1h", "2h", "6h", "24h", "48h"]
violation_threshold = "48h"
date_range = { start = "2015-05-01", end = "2016-12-22" }

zones = [
  { id = "homepage1-zone-1" },
  { id = "homepage2-zone-1" },
  { id = "homepage3-zone-1" },
]

[[endpoint]]
name = "web.archive.org"
timemap = "https://web.archive.org/web/timemap/link/{url}"
cdx = "https://web.archive.org/cdx/search/cdx?url={url}"
replay = "https://web.archive.org/web/{timestamp}/{url}"
raw = "https://web.archive.org/web/{timestamp}id_/{url}"
rate_limit = 1000.0
"#;

fn write_corpus(dir: &Path) {
    let _ = fs::remove_dir_all(dir);
    fs::create_dir_all(dir).unwrap();
    let mut rng = StdRng::seed_from_u64(SEED + 1);
    let mut labels = String::from("file,era,expected_verdict\n");
    let picks = [
        ("2014-06-01", Page::HeroInHtml, "base-html-zones"),
        ("2014-11-15", Page::HeroInHtml, "base-html-zones"),
        ("2015-02-20", Page::HeroInHtml, "base-html-zones"),
        ("2015-04-24", Page::HeroInHtml, "csr-except-hero"),
        ("2015-06-10", Page::HeroInHtml, "csr-except-hero"),
        ("2015-08-30", Page::HeroInHtml, "csr-except-hero"),
        ("2015-09-17", Page::HeroInHtml, "hero-sometimes-csr"),
        ("2015-11-02", Page::NoHeroProse, "hero-sometimes-csr"),
        ("2016-01-06", Page::HeroInHtml, "hero-sometimes-csr"),
        ("2016-03-14", Page::NoHeroProse, "hero-sometimes-csr"),
        ("2016-06-01", Page::HeroInHtml, "hero-sometimes-csr"),
        ("2016-07-29", Page::NoHeroProse, "hero-sometimes-csr"),
        ("2016-10-20", Page::HeroInHtml, "izl-json"),
        ("2016-10-28", Page::NoHeroProse, "izl-json"),
        ("2016-11-01", Page::Skeleton, "all-zones-csr"),
        ("2016-12-12", Page::Skeleton, "all-zones-csr"),
        ("2017-01-31", Page::Skeleton, "izl"),
        ("2018-05-05", Page::Skeleton, "izl"),
        ("2020-06-18", Page::Skeleton, "izl"),
        ("2022-09-23", Page::Skeleton, "izl"),
    ];
    for (day, kind, era) in picks {
        let d = NaiveDate::parse_from_str(day, "%Y-%m-%d").unwrap();
        let stamp = format_stamp(&at(d, &mut rng));
        let verdict = match kind {
            Page::HeroInHtml => "server_rendered",
            Page::NoHeroProse => "indeterminate",
            Page::Skeleton => "csr_template",
        };
        fs::write(dir.join(format!("{stamp}.html")), render(kind, &stamp)).unwrap();
        labels.push_str(&format!("{stamp}.html,{era},{verdict}\n"));
    }
    fs::write(dir.parent().unwrap().join("corpus_labels.csv"), labels).unwrap();
}

/// A 1,000-line CDX file in mixed classic layouts, and two-page CDX and
/// TimeMap responses with their concatenations.
fn write_index_fixtures(root: &Path, world: &World) {
    let cdx_dir = root.join("cdx");
    fs::create_dir_all(&cdx_dir).unwrap();
    let key = canonical_urlkey(TARGET).unwrap();
    let mut lines = Vec::new();
    for (i, c) in world.base.iter().take(1000).enumerate() {
        let stamp = format_stamp(&c.ts);
        let line = match i % 10 {
            0 => format!("{key} {stamp} {TARGET} text/html {} - -", c.status),
            1 => format!(
                "{key} {stamp} {TARGET} text/html {} {} - 1234 IA-{i:05}.warc.gz",
                c.status, c.digest
            ),
            2 => format!(
                "{key} {stamp} {TARGET} text/html {} {} - - {} 4321 IA-{i:05}.warc.gz",
                c.status,
                c.digest,
                2000 + i
            ),
            _ => format!(
                "{key} {stamp} {TARGET} text/html {} {} {}",
                c.status,
                c.digest,
                2000 + i
            ),
        };
        lines.push(line);
    }
    fs::write(cdx_dir.join("cnn_1000.cdx"), lines.join("\n") + "\n").unwrap();
    fs::write(
        cdx_dir.join("page1.cdx"),
        lines[..20].join("\n") + "\n\n" + "resume-20\n",
    )
    .unwrap();
    fs::write(cdx_dir.join("page2.cdx"), lines[20..30].join("\n") + "\n").unwrap();

    let tm_dir = root.join("timemap");
    fs::create_dir_all(&tm_dir).unwrap();
    let entry = |c: &Cap| {
        let stamp = format_stamp(&c.ts);
        format!(
            "<https://web.archive.org/web/{stamp}/{TARGET}>; rel=\"memento\"; datetime=\"{}\"",
            c.ts.format("%a, %d %b %Y %H:%M:%S GMT")
        )
    };
    let head = format!("<{TARGET}>; rel=\"original\",\n");
    let page1: Vec<String> = world
        .base
        .iter()
        .filter(|c| c.status == 200)
        .take(6)
        .map(entry)
        .collect();
    let page2: Vec<String> = world
        .base
        .iter()
        .filter(|c| c.status == 200)
        .skip(6)
        .take(5)
        .map(entry)
        .collect();
    fs::write(
        tm_dir.join("page1.link"),
        format!(
            "{head}<https://web.archive.org/web/timemap/link/{TARGET}?page=2>; rel=\"timemap\"; type=\"application/link-format\",\n{}\n",
            page1.join(",\n")
        ),
    )
    .unwrap();
    fs::write(tm_dir.join("page2.link"), format!("{head}{}\n", page2.join(",\n"))).unwrap();
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let bundle = root.join("bundle");
    let _ = fs::remove_dir_all(bundle.join("cache"));
    fs::create_dir_all(&bundle).unwrap();
    fs::write(bundle.join("audit.toml"), BUNDLE_CONFIG).unwrap();

    let world = build_world();
    let cfg = AuditConfig::parse(BUNDLE_CONFIG).unwrap();
    let exp = expected(&world, cfg.date_range.start, cfg.date_range.end);
    fs::write(
        bundle.join("expected.json"),
        serde_json::to_string_pretty(&exp).unwrap() + "\n",
    )
    .unwrap();

    let mut online = cfg.clone();
    online.network = NetworkMode::Online;
    let resolved = online.resolve(&bundle).unwrap();
    let report = run_audit_with(&resolved, Arc::new(SyntheticArchive { world })).unwrap();
    assert_eq!(report.partial_failures, 0, "{:?}", report.diagnostics);
    println!(
        "bundle: {} base captures, {} sampled, {} result rows",
        report.base.total_captures,
        report.base.sampled,
        report.result_rows()
    );

    write_corpus(&root.join("corpus"));
    write_index_fixtures(&root, &build_world());
    println!("corpus: 20 files");
}
