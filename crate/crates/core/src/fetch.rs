//! Cached, rate-limited access to archive endpoints.
//!
//! Requests to one endpoint are serialized and spaced by its rate limit;
//! distinct endpoints proceed concurrently. Every response that is not a
//! transient failure is written to the cache, so an audit can be replayed
//! offline from the cache alone.

use std::collections::HashMap;
use std::io::Read;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::cache::{Cache, CachedResponse};
use crate::cdx::{parse_cdx_body, CaptureSet, FilterSpec};
use crate::endpoint::ArchiveEndpoint;
use crate::memento::{aggregate_timemaps, parse_link_timemap_bytes, MementoError, TimeMap};
use crate::parse_report::ParseReport;

/// Upper bound on followed pages, against continuation cycles.
const MAX_PAGES: usize = 10_000;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("network error for {url} after {attempts} attempt(s): {reason}")]
    Network { url: String, attempts: u32, reason: String },
    #[error("offline mode: {url} is not cached for endpoint `{endpoint}`")]
    CacheMiss { endpoint: String, url: String },
    #[error("{url} answered HTTP {status}")]
    HttpStatus { url: String, status: u16 },
    #[error(transparent)]
    Malformed(#[from] MementoError),
    #[error("endpoint `{0}` has no {1} template")]
    MissingTemplate(String, &'static str),
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Network { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Connection-level failure (DNS, TCP, TLS, timeout, ...).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// The only way the fetch layer touches the network.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTP via `ureq`.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(timeout)
            .user_agent(concat!("replay-audit/", env!("CARGO_PKG_VERSION")))
            .build();
        HttpTransport { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new(Duration::from_secs(60))
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let response = match self.agent.get(url).call() {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(TransportError(e.to_string())),
        };
        let status = response.status();
        let mut body = Vec::new();
        response
            .into_reader()
            .read_to_end(&mut body)
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Refuses every request; offline runs use it so that a cache miss can
/// never turn into network traffic.
#[derive(Debug, Default)]
pub struct RefusingTransport {
    attempts: AtomicUsize,
}

impl RefusingTransport {
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl Transport for RefusingTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(TransportError(format!("network access refused: {url}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkMode {
    Online,
    OfflineCacheOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff: Duration::from_secs(2),
        }
    }
}

/// Per-endpoint serialization point holding the next permitted send time.
struct Gate {
    next_slot: Mutex<Option<Instant>>,
}

pub struct Fetcher {
    transport: Arc<dyn Transport>,
    cache: Arc<Cache>,
    mode: NetworkMode,
    retry: RetryPolicy,
    gates: Mutex<HashMap<String, Arc<Gate>>>,
    requests: AtomicUsize,
}

fn is_transient(status: u16) -> bool {
    status == 429 || status >= 500
}

impl Fetcher {
    pub fn new(transport: Arc<dyn Transport>, cache: Arc<Cache>, mode: NetworkMode) -> Self {
        Fetcher {
            transport,
            cache,
            mode,
            retry: RetryPolicy::default(),
            gates: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> NetworkMode {
        self.mode
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    /// Requests handed to the transport so far.
    pub fn network_requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn gate(&self, endpoint: &str) -> Arc<Gate> {
        let mut gates = self.gates.lock().expect("gate map lock");
        gates
            .entry(endpoint.to_string())
            .or_insert_with(|| {
                Arc::new(Gate {
                    next_slot: Mutex::new(None),
                })
            })
            .clone()
    }

    /// GET through the cache. Offline mode serves any cached copy and
    /// fails with `CacheMiss` otherwise.
    pub fn get(&self, endpoint: &ArchiveEndpoint, url: &str) -> Result<CachedResponse, FetchError> {
        let now = Utc::now();
        let cached = match self.mode {
            NetworkMode::Online => self.cache.lookup_fresh(&endpoint.name, url, now)?,
            NetworkMode::OfflineCacheOnly => self.cache.lookup(&endpoint.name, url)?,
        };
        if let Some(hit) = cached {
            return Ok(hit);
        }
        if self.mode == NetworkMode::OfflineCacheOnly {
            return Err(FetchError::CacheMiss {
                endpoint: endpoint.name.clone(),
                url: url.to_string(),
            });
        }

        let gate = self.gate(&endpoint.name);
        let mut next_slot = gate.next_slot.lock().expect("gate lock");
        let spacing = Duration::from_secs_f64(1.0 / endpoint.rate_limit);
        let mut backoff = self.retry.initial_backoff;
        let mut last_reason = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            if let Some(slot) = *next_slot {
                let now = Instant::now();
                if slot > now {
                    std::thread::sleep(slot - now);
                }
            }
            self.requests.fetch_add(1, Ordering::SeqCst);
            let result = self.transport.get(url);
            *next_slot = Some(Instant::now() + spacing);
            match result {
                Ok(resp) if !is_transient(resp.status) => {
                    let fetched_at = Utc::now();
                    self.cache
                        .store(&endpoint.name, url, resp.status, &resp.body, fetched_at)?;
                    return Ok(CachedResponse {
                        status: resp.status,
                        body: resp.body,
                        fetched_at: DateTime::<Utc>::from_timestamp(fetched_at.timestamp(), 0).unwrap_or(fetched_at),
                    });
                }
                Ok(resp) => last_reason = format!("HTTP {}", resp.status),
                Err(e) => last_reason = e.0,
            }
            tracing::warn!(endpoint = %endpoint.name, url, attempt, reason = %last_reason, "fetch attempt failed");
            if attempt < self.retry.max_attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(FetchError::Network {
            url: url.to_string(),
            attempts: self.retry.max_attempts.max(1),
            reason: last_reason,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchedTimeMap {
    pub timemap: TimeMap,
    pub report: ParseReport,
    /// The endpoint answered 404: it holds no captures of the URL.
    pub archive_has_none: bool,
    pub pages: usize,
}

/// Fetches a TimeMap, following `rel="timemap"` continuations until every
/// page has been read.
pub fn fetch_timemap(
    fetcher: &Fetcher,
    endpoint: &ArchiveEndpoint,
    original_url: &str,
) -> Result<FetchedTimeMap, FetchError> {
    let first = endpoint.timemap_url(original_url);
    let mut queue = std::collections::VecDeque::from([first.clone()]);
    let mut visited = std::collections::HashSet::new();
    let mut pages = Vec::new();
    let mut report = ParseReport::default();
    let mut retrieved_at: Option<DateTime<Utc>> = None;

    while let Some(url) = queue.pop_front() {
        if !visited.insert(url.clone()) || visited.len() > MAX_PAGES {
            continue;
        }
        let resp = fetcher.get(endpoint, &url)?;
        retrieved_at = retrieved_at.max(Some(resp.fetched_at));
        if resp.status == 404 {
            if url == first {
                let mut tm = TimeMap::empty(original_url);
                tm.retrieved_at = Some(resp.fetched_at);
                return Ok(FetchedTimeMap {
                    timemap: tm,
                    report,
                    archive_has_none: true,
                    pages: 1,
                });
            }
            continue;
        }
        if !(200..300).contains(&resp.status) {
            return Err(FetchError::HttpStatus {
                url,
                status: resp.status,
            });
        }
        let parsed = parse_link_timemap_bytes(&resp.body, &endpoint.name)?;
        report.merge(&parsed.report);
        for next in parsed.continuations {
            if !visited.contains(&next) {
                queue.push_back(next);
            }
        }
        pages.push(parsed.timemap);
    }

    let page_count = pages.len();
    let mut timemap = aggregate_timemaps(&pages)?;
    timemap.original_url = pages[0].original_url.clone();
    timemap.retrieved_at = retrieved_at;
    Ok(FetchedTimeMap {
        timemap,
        report,
        archive_has_none: false,
        pages: page_count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchedCaptures {
    pub captures: CaptureSet,
    pub report: ParseReport,
    pub pages: usize,
    /// Latest retrieval time among the pages read.
    pub fetched_at: Option<DateTime<Utc>>,
}

fn with_params(base: &str, params: &[(String, String)]) -> String {
    let mut url = base.to_string();
    for (k, v) in params {
        url.push(if url.contains('?') { '&' } else { '?' });
        url.push_str(k);
        url.push('=');
        url.extend(url::form_urlencoded::byte_serialize(v.as_bytes()));
    }
    url
}

/// Queries the endpoint's CDX API for exact-URL captures, following
/// resume keys when `filters.page_size` is set. Filters are also applied
/// locally, so endpoints that ignore a parameter still yield a correct set.
pub fn fetch_captures(
    fetcher: &Fetcher,
    endpoint: &ArchiveEndpoint,
    url: &str,
    filters: &FilterSpec,
) -> Result<FetchedCaptures, FetchError> {
    let base = endpoint
        .cdx_url(url)
        .ok_or_else(|| FetchError::MissingTemplate(endpoint.name.clone(), "cdx"))?;
    let mut params = filters.query_params();
    if let Some(n) = filters.page_size {
        params.push(("limit".into(), n.to_string()));
        params.push(("showResumeKey".into(), "true".into()));
    }
    let first = with_params(&base, &params);

    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut pages = 0;
    let mut next = Some(first.clone());
    let mut seen_keys = std::collections::HashSet::new();
    let mut fetched_at: Option<DateTime<Utc>> = None;
    while let Some(page_url) = next.take() {
        pages += 1;
        let resp = fetcher.get(endpoint, &page_url)?;
        fetched_at = fetched_at.max(Some(resp.fetched_at));
        if resp.status == 404 {
            break;
        }
        if !(200..300).contains(&resp.status) {
            return Err(FetchError::HttpStatus {
                url: page_url,
                status: resp.status,
            });
        }
        let page = parse_cdx_body(&String::from_utf8_lossy(&resp.body));
        report.merge(&page.report);
        records.extend(page.records);
        if let (Some(key), Some(_)) = (page.resume_key, filters.page_size) {
            if pages < MAX_PAGES && seen_keys.insert(key.clone()) {
                next = Some(with_params(&first, &[("resumeKey".into(), key)]));
            }
        }
    }

    let urlkey = records.first().map(|r| r.urlkey.clone());
    let mut kept = Vec::with_capacity(records.len());
    for rec in records {
        if Some(&rec.urlkey) != urlkey.as_ref() {
            report.skip(format!(
                "{} {}: urlkey differs from {:?}",
                rec.urlkey,
                rec.stamp(),
                urlkey
            ));
        } else if filters.accepts(&rec) {
            kept.push(rec);
        }
    }
    let captures = CaptureSet::new(url, kept, filters.describe())
        .expect("records share one urlkey")
        .with_archive(endpoint.name.clone(), endpoint.replay_template_or_default());
    Ok(FetchedCaptures {
        captures,
        report,
        pages,
        fetched_at,
    })
}

/// Raw archived bytes of one capture via the endpoint's `id_`-style
/// template; `Ok(None)` when the endpoint has none.
pub fn fetch_raw(
    fetcher: &Fetcher,
    endpoint: &ArchiveEndpoint,
    stamp: &str,
    original_url: &str,
) -> Result<Option<CachedResponse>, FetchError> {
    match endpoint.raw_url(stamp, original_url) {
        Some(url) => fetcher.get(endpoint, &url).map(Some),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// In-memory transport answering from a fixed map.
    struct MapTransport {
        routes: HashMap<String, HttpResponse>,
        calls: AtomicUsize,
    }

    impl Transport for MapTransport {
        fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.routes
                .get(url)
                .cloned()
                .ok_or_else(|| TransportError(format!("no route {url}")))
        }
    }

    fn endpoint() -> ArchiveEndpoint {
        ArchiveEndpoint {
            name: "stub".into(),
            timemap_url_template: "http://stub/tm/{url}".into(),
            cdx_url_template: Some("http://stub/cdx?url={url}".into()),
            replay_template: None,
            raw_template: None,
            rate_limit: 1000.0,
        }
    }

    fn fetcher(routes: Vec<(&str, u16, &str)>, dir: &std::path::Path) -> (Fetcher, Arc<MapTransport>) {
        let transport = Arc::new(MapTransport {
            routes: routes
                .into_iter()
                .map(|(u, s, b)| {
                    (
                        u.to_string(),
                        HttpResponse {
                            status: s,
                            body: b.as_bytes().to_vec(),
                        },
                    )
                })
                .collect(),
            calls: AtomicUsize::new(0),
        });
        let cache = Arc::new(Cache::open(dir, None).unwrap());
        let f = Fetcher::new(transport.clone(), cache, NetworkMode::Online).with_retry(RetryPolicy {
            max_attempts: 2,
            initial_backoff: Duration::from_millis(1),
        });
        (f, transport)
    }

    const TM: &str = r#"<http://www.cnn.com/>; rel="original",
<http://stub/web/20150424150304/http://www.cnn.com/>; rel="memento"; datetime="Fri, 24 Apr 2015 15:03:04 GMT""#;

    #[test]
    fn second_call_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let (f, transport) = fetcher(vec![("http://stub/tm/http://www.cnn.com/", 200, TM)], dir.path());
        let a = fetch_timemap(&f, &endpoint(), "http://www.cnn.com/").unwrap();
        let calls = transport.calls.load(Ordering::SeqCst);
        let b = fetch_timemap(&f, &endpoint(), "http://www.cnn.com/").unwrap();
        assert_eq!(transport.calls.load(Ordering::SeqCst), calls);
        assert_eq!(a, b);
        assert_eq!(a.timemap.mementos.len(), 1);
    }

    #[test]
    fn offline_miss_never_touches_transport() {
        let dir = tempfile::tempdir().unwrap();
        let refusing = Arc::new(RefusingTransport::default());
        let f = Fetcher::new(
            refusing.clone(),
            Arc::new(Cache::open(dir.path(), None).unwrap()),
            NetworkMode::OfflineCacheOnly,
        );
        let err = fetch_timemap(&f, &endpoint(), "http://www.cnn.com/").unwrap_err();
        assert!(matches!(err, FetchError::CacheMiss { .. }));
        assert_eq!(refusing.attempts(), 0);
    }

    #[test]
    fn network_errors_report_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let (f, transport) = fetcher(vec![("http://stub/tm/http://x/", 503, "")], dir.path());
        match fetch_timemap(&f, &endpoint(), "http://x/").unwrap_err() {
            e @ FetchError::Network { attempts: 2, .. } => assert!(e.is_retryable()),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(transport.calls.load(Ordering::SeqCst), 2);
        // Transient failures are not cached.
        assert!(f.cache().lookup("stub", "http://stub/tm/http://x/").unwrap().is_none());
    }

    #[test]
    fn malformed_is_not_retryable() {
        let dir = tempfile::tempdir().unwrap();
        let (f, transport) = fetcher(vec![("http://stub/tm/http://x/", 200, "<html></html>")], dir.path());
        let err = fetch_timemap(&f, &endpoint(), "http://x/").unwrap_err();
        assert!(matches!(err, FetchError::Malformed(MementoError::MalformedTimeMap(_))));
        assert!(!err.is_retryable());
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cdx_resume_key_pagination() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = "com,cnn,www)/ 20150424150304 http://www.cnn.com/ text/html 200 A 1\n\nRK1\n";
        let p2 = "com,cnn,www)/ 20150425150304 http://www.cnn.com/ text/html 200 B 1\n";
        let first = "http://stub/cdx?url=http%3A%2F%2Fwww.cnn.com%2F&matchType=exact&limit=1&showResumeKey=true";
        let second = format!("{first}&resumeKey=RK1");
        let (f, _) = fetcher(vec![(first, 200, p1), (&second, 200, p2)], dir.path());
        let filters = FilterSpec {
            page_size: Some(1),
            ..FilterSpec::default()
        };
        let got = fetch_captures(&f, &endpoint(), "http://www.cnn.com/", &filters).unwrap();
        assert_eq!(got.pages, 2);
        assert_eq!(got.captures.len(), 2);
        assert_eq!(got.captures.source_archive, "stub");
    }
}
