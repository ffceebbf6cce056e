mod common;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, NaiveDate, Utc};
use proptest::prelude::*;

use common::{at, brute_nearest, brute_spread, capture_set};
use replay_audit::cdx::parse_cdx_line;
use replay_audit::memento::{aggregate_timemaps, parse_link_timemap, MementoRecord, TimeMap};
use replay_audit::metrics::{day_series, hero_violation_scan, threshold_impact, DateRange, SECONDS_PER_DAY};
use replay_audit::probe::{CsrVerdict, HtmlProbeResult};
use replay_audit::resolve::{resolve_nearest, Classification, Resolver, Threshold};
use replay_audit::timestamp::{day_start, format_stamp};

const T0: i64 = 1_436_486_400; // 2015-07-10T00:00:00Z
const SPAN: i64 = 40 * 86_400;

fn instants(max: usize) -> impl Strategy<Value = Vec<DateTime<Utc>>> {
    // Few distinct values on a coarse grid so ties and duplicates are common.
    prop::collection::vec((0..SPAN / 1800).prop_map(|k| at(T0 + k * 1800)), 0..=max)
}

fn base_instant() -> impl Strategy<Value = DateTime<Utc>> {
    (-86_400..SPAN + 86_400).prop_map(|s| at(T0 + s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn nearest_matches_linear_scan(caps in instants(64), base in base_instant()) {
        let set = capture_set("http://r.example/", &caps);
        let sorted: Vec<DateTime<Utc>> = set.timestamps().collect();
        let got = resolve_nearest(base, &set).map(|m| m.capture_datetime);
        let want = brute_nearest(base, &sorted).map(|i| sorted[i]);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn nearest_is_an_argmin(caps in instants(32), base in base_instant()) {
        let set = capture_set("http://r.example/", &caps);
        match resolve_nearest(base, &set) {
            None => prop_assert!(caps.is_empty()),
            Some(m) => {
                prop_assert!(caps.contains(&m.capture_datetime));
                let spread = (m.capture_datetime - base).num_seconds().abs();
                for t in &caps {
                    prop_assert!(spread <= (*t - base).num_seconds().abs());
                }
            }
        }
    }

    #[test]
    fn adding_a_capture_never_widens_the_spread(caps in instants(32), extra in base_instant(), base in base_instant()) {
        let before = Resolver::new(&capture_set("http://r.example/", &caps)).spread(base);
        let mut more = caps.clone();
        more.push(extra);
        let after = Resolver::new(&capture_set("http://r.example/", &more)).spread(base).unwrap();
        if let Some(b) = before {
            prop_assert!(after.abs() <= b.abs());
        }
    }

    #[test]
    fn day_series_ignores_input_order(
        (base, res, perm_b, perm_r) in (instants(40), instants(20)).prop_flat_map(|(b, r)| {
            let pb = Just(b.clone()).prop_shuffle();
            let pr = Just(r.clone()).prop_shuffle();
            (Just(b), Just(r), pb, pr)
        })
    ) {
        let a = day_series(&capture_set("http://b/", &base), &capture_set("http://r/", &res));
        let b = day_series(&capture_set("http://b/", &perm_b), &capture_set("http://r/", &perm_r));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn day_series_matches_per_day_mean(base in instants(40), res in instants(10)) {
        let series = day_series(&capture_set("http://b/", &base), &capture_set("http://r/", &res));
        let sorted_res: Vec<DateTime<Utc>> = capture_set("http://r/", &res).timestamps().collect();
        let mut oracle: BTreeMap<NaiveDate, Vec<i64>> = BTreeMap::new();
        for t in &base {
            if let Some(s) = brute_spread(*t, &sorted_res) {
                oracle.entry(t.date_naive()).or_default().push(s);
            }
        }
        prop_assert_eq!(series.len(), oracle.len());
        for p in &series {
            let v = &oracle[&p.day];
            let mean = v.iter().sum::<i64>() as f64 / v.len() as f64 / SECONDS_PER_DAY as f64;
            prop_assert!((p.mean_spread_days - mean).abs() < 1e-9);
            prop_assert_eq!(p.memento_count as usize, v.len());
        }
    }

    #[test]
    fn threshold_impact_matches_oracle_and_is_monotone(
        base in instants(30),
        res in instants(8),
        start in 0i64..20,
        len in 1i64..30,
    ) {
        let d0 = at(T0).date_naive();
        let range = DateRange::new(d0 + chrono::Duration::days(start), d0 + chrono::Duration::days(start + len)).unwrap();
        let rows = threshold_impact(
            &capture_set("http://b/", &base),
            &capture_set("http://r/", &res),
            range,
            &Threshold::presets(),
        );
        let sorted_res: Vec<DateTime<Utc>> = capture_set("http://r/", &res).timestamps().collect();
        for w in rows.windows(2) {
            prop_assert!(w[1].affected_mementos <= w[0].affected_mementos);
            prop_assert!(w[1].affected_days <= w[0].affected_days);
        }
        for row in &rows {
            let in_range: Vec<&DateTime<Utc>> = base
                .iter()
                .filter(|t| **t >= day_start(range.start) && **t < day_start(range.end))
                .collect();
            let affected: Vec<&&DateTime<Utc>> = in_range
                .iter()
                .filter(|t| brute_spread(***t, &sorted_res).is_none_or(|s| s.unsigned_abs() > row.threshold.secs()))
                .collect();
            prop_assert_eq!(row.total_mementos, in_range.len());
            prop_assert_eq!(row.affected_mementos, affected.len());
            prop_assert_eq!(
                row.affected_days,
                affected.iter().map(|t| t.date_naive()).collect::<BTreeSet<_>>().len()
            );
        }
    }

    #[test]
    fn hero_alternatives_match_day_buckets(
        pages in prop::collection::vec((0i64..6 * 86_400, any::<bool>()), 0..30),
        hero in instants(4),
    ) {
        let probes: Vec<(MementoRecord, HtmlProbeResult)> = pages
            .iter()
            .map(|(s, has_hero)| {
                let t = at(T0 + s);
                let m = MementoRecord {
                    original_url: "http://www.cnn.com/".into(),
                    capture_datetime: t,
                    access_url: format!("https://web.archive.org/web/{}/http://www.cnn.com/", format_stamp(&t)),
                    source_archive: "web.archive.org".into(),
                };
                let p = HtmlProbeResult {
                    has_hero_section_id: *has_hero,
                    content_word_count: 100,
                    zones_declared: Vec::new(),
                    csr_verdict: if *has_hero { CsrVerdict::ServerRendered } else { CsrVerdict::Indeterminate },
                };
                (m, p)
            })
            .collect();
        let report = hero_violation_scan(&probes, &capture_set("http://h/", &hero), Threshold::hours(1));
        let server_days: BTreeSet<NaiveDate> =
            probes.iter().filter(|(_, p)| p.has_hero_section_id).map(|(m, _)| m.capture_datetime.date_naive()).collect();
        prop_assert_eq!(
            report.excluded_server_rendered,
            probes.iter().filter(|(_, p)| p.has_hero_section_id).count()
        );
        prop_assert_eq!(report.scanned + report.excluded_server_rendered, probes.len());
        for d in &report.days {
            prop_assert_eq!(d.server_rendered_alternative.is_some(), server_days.contains(&d.day));
        }
    }
}

fn timemap(archive: &str, stamps: &[i64]) -> TimeMap {
    TimeMap {
        original_url: "http://www.cnn.com/".into(),
        mementos: stamps
            .iter()
            .map(|s| {
                let t = at(T0 + s);
                MementoRecord {
                    original_url: "http://www.cnn.com/".into(),
                    capture_datetime: t,
                    access_url: format!("https://{archive}/web/{}/http://www.cnn.com/", format_stamp(&t)),
                    source_archive: archive.into(),
                }
            })
            .collect(),
        retrieved_at: None,
    }
}

fn normalized(tm: TimeMap) -> TimeMap {
    aggregate_timemaps(&[tm]).unwrap()
}

fn small_timemap() -> impl Strategy<Value = TimeMap> {
    (
        prop::sample::select(vec!["web.archive.org", "wayback.archive-it.org", "arquivo.pt"]),
        prop::collection::vec(0i64..200_000, 0..12),
    )
        .prop_map(|(a, s)| timemap(a, &s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn aggregation_is_commutative(a in small_timemap(), b in small_timemap()) {
        prop_assert_eq!(aggregate_timemaps(&[a.clone(), b.clone()]).unwrap(), aggregate_timemaps(&[b, a]).unwrap());
    }

    #[test]
    fn aggregation_is_associative(a in small_timemap(), b in small_timemap(), c in small_timemap()) {
        let ab = aggregate_timemaps(&[a.clone(), b.clone()]).unwrap();
        let bc = aggregate_timemaps(&[b, c.clone()]).unwrap();
        prop_assert_eq!(aggregate_timemaps(&[ab, c]).unwrap(), aggregate_timemaps(&[a, bc]).unwrap());
    }

    #[test]
    fn aggregation_is_idempotent(a in small_timemap()) {
        let once = normalized(a.clone());
        prop_assert_eq!(aggregate_timemaps(&[a.clone(), a]).unwrap(), once.clone());
        prop_assert_eq!(normalized(once.clone()), once);
    }

    #[test]
    fn link_format_round_trip(a in small_timemap()) {
        let tm = normalized(a);
        let back = parse_link_timemap(&tm.to_link_format(), &tm.mementos.first().map_or("web.archive.org".to_string(), |m| m.source_archive.clone())).unwrap();
        prop_assert_eq!(back.timemap.mementos.len(), tm.mementos.len());
        for (x, y) in back.timemap.mementos.iter().zip(&tm.mementos) {
            prop_assert_eq!(x.capture_datetime, y.capture_datetime);
            prop_assert_eq!(&x.access_url, &y.access_url);
        }
    }

    #[test]
    fn classic_cdx_lines_round_trip(
        secs in 0i64..400_000_000,
        status in prop::option::of(100u16..600),
        digest in prop::option::of("[A-Z2-7]{32}"),
        length in prop::option::of(0u64..10_000_000),
        layout in 0..3,
    ) {
        let stamp = format_stamp(&at(T0 + secs));
        let s = status.map_or("-".to_string(), |s| s.to_string());
        let d = digest.unwrap_or_else(|| "-".into());
        let l = length.map_or("-".to_string(), |l| l.to_string());
        let line = match layout {
            0 => format!("com,cnn,www)/ {stamp} http://www.cnn.com/ text/html {s} {d} {l}"),
            1 => format!("com,cnn,www)/ {stamp} http://www.cnn.com/ text/html {s} {d} - 1234 a.warc.gz"),
            _ => format!("com,cnn,www)/ {stamp} http://www.cnn.com/ text/html {s} {d} - - {l} 99 a.warc.gz"),
        };
        let rec = parse_cdx_line(&line).unwrap();
        prop_assert_eq!(rec.to_classic_line(), line);
    }

    #[test]
    fn parsers_never_panic(body in "\\PC{0,300}") {
        let _ = parse_link_timemap(&body, "x");
        let _ = parse_cdx_line(&body);
        let _ = replay_audit::cdx::parse_cdx_body(&body);
        let _ = replay_audit::linkformat::parse_links(&body);
        let _ = replay_audit::probe::probe_html(&body, 15);
        let _ = replay_audit::zones::extract_zones(&body);
    }
}

#[test]
fn sign_convention() {
    let base = at(T0 + 10 * 86_400);
    let future = capture_set("http://r/", &[at(T0 + 12 * 86_400)]);
    let past = capture_set("http://r/", &[at(T0 + 8 * 86_400)]);
    assert_eq!(Resolver::new(&future).spread(base), Some(2 * 86_400));
    assert_eq!(Resolver::new(&past).spread(base), Some(-2 * 86_400));
    let r = Resolver::new(&future).classify(base, Threshold::hours(47));
    assert_eq!(r.classification, Classification::Violation);
}

#[test]
fn ties_prefer_the_past() {
    let caps = [at(T0), at(T0 + 200)];
    let set = capture_set("http://r/", &caps);
    assert_eq!(resolve_nearest(at(T0 + 100), &set).unwrap().capture_datetime, at(T0));
    assert_eq!(
        resolve_nearest(at(T0 + 101), &set).unwrap().capture_datetime,
        at(T0 + 200)
    );
}
