//! On-disk response cache.
//!
//! Layout: `<root>/<endpoint>/<sha256-of-key>.body` holds the response
//! bytes and `<root>/<endpoint>/index` maps keys to files, one
//! `key TAB fetch-epoch TAB filename TAB status` line per store. The
//! status column is optional on read (absent means 200). Later lines win.
//! Bodies are written to a temp file and renamed into place; index lines
//! are appended with a single write.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use sha2::{Digest, Sha256};

const INDEX_FILE: &str = "index";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedResponse {
    pub status: u16,
    pub body: Vec<u8>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
struct IndexEntry {
    fetched_at: DateTime<Utc>,
    filename: String,
    status: u16,
}

#[derive(Debug)]
pub struct Cache {
    root: PathBuf,
    ttl: Option<Duration>,
    indexes: Mutex<HashMap<String, HashMap<String, IndexEntry>>>,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn escape_key(key: &str) -> String {
    key.replace('%', "%25")
        .replace('\t', "%09")
        .replace('\n', "%0A")
        .replace('\r', "%0D")
}

pub fn key_filename(key: &str) -> String {
    format!("{}.body", hex::encode(Sha256::digest(key.as_bytes())))
}

impl Cache {
    /// Opens (creating if needed) a cache rooted at `root`. `ttl` of `None`
    /// never expires entries.
    pub fn open(root: impl Into<PathBuf>, ttl: Option<Duration>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Cache {
            root,
            ttl,
            indexes: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn read_index(&self, endpoint: &str) -> io::Result<HashMap<String, IndexEntry>> {
        let path = self.root.join(endpoint).join(INDEX_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(HashMap::new()),
            Err(e) => return Err(e),
        };
        let mut map = HashMap::new();
        for line in text.lines() {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                continue;
            }
            let Ok(epoch) = cols[1].parse::<i64>() else { continue };
            let Some(fetched_at) = DateTime::<Utc>::from_timestamp(epoch, 0) else {
                continue;
            };
            let status = cols.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
            map.insert(
                cols[0].to_string(),
                IndexEntry {
                    fetched_at,
                    filename: cols[2].to_string(),
                    status,
                },
            );
        }
        Ok(map)
    }

    fn entry(&self, endpoint: &str, key: &str) -> io::Result<Option<IndexEntry>> {
        let escaped = escape_key(key);
        let mut indexes = self.indexes.lock().expect("cache index lock");
        if let Some(e) = indexes.get(endpoint).and_then(|m| m.get(&escaped)) {
            return Ok(Some(e.clone()));
        }
        // Another process may have appended since the last load.
        let fresh = self.read_index(endpoint)?;
        let found = fresh.get(&escaped).cloned();
        indexes.insert(endpoint.to_string(), fresh);
        Ok(found)
    }

    /// Any cached response, regardless of age.
    pub fn lookup(&self, endpoint: &str, key: &str) -> io::Result<Option<CachedResponse>> {
        let Some(entry) = self.entry(endpoint, key)? else {
            return Ok(None);
        };
        match fs::read(self.root.join(endpoint).join(&entry.filename)) {
            Ok(body) => Ok(Some(CachedResponse {
                status: entry.status,
                body,
                fetched_at: entry.fetched_at,
            })),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// A cached response younger than the TTL at `now`.
    pub fn lookup_fresh(&self, endpoint: &str, key: &str, now: DateTime<Utc>) -> io::Result<Option<CachedResponse>> {
        Ok(self.lookup(endpoint, key)?.filter(|r| match self.ttl {
            Some(ttl) => now - r.fetched_at <= ttl,
            None => true,
        }))
    }

    pub fn store(
        &self,
        endpoint: &str,
        key: &str,
        status: u16,
        body: &[u8],
        fetched_at: DateTime<Utc>,
    ) -> io::Result<()> {
        let dir = self.root.join(endpoint);
        fs::create_dir_all(&dir)?;
        let filename = key_filename(key);
        let tmp = dir.join(format!(
            ".{filename}.tmp-{}-{}",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(&filename))?;

        let escaped = escape_key(key);
        let line = format!("{escaped}\t{}\t{filename}\t{status}\n", fetched_at.timestamp());
        let mut indexes = self.indexes.lock().expect("cache index lock");
        let mut index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(INDEX_FILE))?;
        index.write_all(line.as_bytes())?;
        indexes.entry(endpoint.to_string()).or_default().insert(
            escaped,
            IndexEntry {
                fetched_at: DateTime::<Utc>::from_timestamp(fetched_at.timestamp(), 0).unwrap_or(fetched_at),
                filename,
                status,
            },
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(secs: i64) -> DateTime<Utc> {
        DateTime::<Utc>::from_timestamp(secs, 0).unwrap()
    }

    #[test]
    fn store_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path(), None).unwrap();
        assert!(cache.lookup("ia", "k").unwrap().is_none());
        cache.store("ia", "http://x/?a\tb", 200, b"hello", at(1000)).unwrap();
        let got = cache.lookup("ia", "http://x/?a\tb").unwrap().unwrap();
        assert_eq!(got.body, b"hello");
        assert_eq!(got.fetched_at, at(1000));
        // Layout is documented: index + sha-named body.
        let index = fs::read_to_string(dir.path().join("ia/index")).unwrap();
        assert_eq!(
            index,
            format!("http://x/?a%09b\t1000\t{}\t200\n", key_filename("http://x/?a\tb"))
        );
        assert!(dir.path().join("ia").join(key_filename("http://x/?a\tb")).exists());
    }

    #[test]
    fn later_entries_win_and_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let cache = Cache::open(dir.path(), None).unwrap();
            cache.store("ia", "k", 200, b"one", at(1)).unwrap();
            cache.store("ia", "k", 404, b"", at(2)).unwrap();
        }
        let cache = Cache::open(dir.path(), None).unwrap();
        let got = cache.lookup("ia", "k").unwrap().unwrap();
        assert_eq!(got.status, 404);
        assert_eq!(got.fetched_at, at(2));
    }

    #[test]
    fn ttl_expiry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path(), Some(Duration::seconds(60))).unwrap();
        cache.store("ia", "k", 200, b"x", at(1000)).unwrap();
        assert!(cache.lookup_fresh("ia", "k", at(1060)).unwrap().is_some());
        assert!(cache.lookup_fresh("ia", "k", at(1061)).unwrap().is_none());
        assert!(cache.lookup("ia", "k").unwrap().is_some());
    }

    #[test]
    fn three_column_lines_default_to_ok() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("ia")).unwrap();
        fs::write(dir.path().join("ia").join(key_filename("k")), b"body").unwrap();
        fs::write(
            dir.path().join("ia/index"),
            format!("k\t5\t{}\ngarbage\n", key_filename("k")),
        )
        .unwrap();
        let cache = Cache::open(dir.path(), None).unwrap();
        assert_eq!(cache.lookup("ia", "k").unwrap().unwrap().status, 200);
    }

    #[test]
    fn concurrent_writers() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path(), None).unwrap();
        std::thread::scope(|s| {
            for t in 0..8 {
                let cache = &cache;
                s.spawn(move || {
                    for i in 0..25 {
                        cache
                            .store("ia", &format!("k{}", i % 5), 200, format!("{t}-{i}").as_bytes(), at(i))
                            .unwrap();
                    }
                });
            }
        });
        let reopened = Cache::open(dir.path(), None).unwrap();
        for i in 0..5 {
            let body = reopened.lookup("ia", &format!("k{i}")).unwrap().unwrap().body;
            assert!(String::from_utf8(body).unwrap().contains('-'));
        }
        let index = fs::read_to_string(dir.path().join("ia/index")).unwrap();
        assert_eq!(index.lines().count(), 200);
        assert!(index.lines().all(|l| l.split('\t').count() == 4));
    }
}
