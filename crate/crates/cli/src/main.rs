use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use replay_audit::audit::{report_exit_code, run_audit, AuditError};
use replay_audit::cache::Cache;
use replay_audit::cdx::{parse_cdx_body, CaptureSet, FilterSpec};
use replay_audit::config::{AuditConfig, ResolvedConfig};
use replay_audit::corpus::probe_corpus;
use replay_audit::fetch::{fetch_captures, fetch_timemap, FetchError, Fetcher, HttpTransport, NetworkMode};
use replay_audit::memento::aggregate_timemaps;
use replay_audit::metrics::DateRange;
use replay_audit::probe::{LowercaseRule, ProbeOptions};
use replay_audit::report::{emit_report, ReportFormat};
use replay_audit::resolve::{classify, Threshold};
use replay_audit::timestamp::{format_iso, parse_instant};

/// `println!` that exits quietly when stdout is closed (e.g. piped to `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            panic!("writing to stdout: {e}");
        }
    }};
}

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_CACHE_MISS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "replay-audit",
    version,
    about = "Audit archived CNN.com pages for temporally violating zone content"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Audit config file (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Serve every request from the cache; a miss exits with code 3.
    #[arg(long)]
    offline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write reports.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thresholds for the impact tables, e.g. `1h,2h,6h,24h,48h`.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<Threshold>>,
        /// First day of the audited range (inclusive).
        #[arg(long)]
        from: Option<NaiveDate>,
        /// Last day of the audited range (exclusive).
        #[arg(long)]
        to: Option<NaiveDate>,
        #[arg(short, long, default_value = "report")]
        out: PathBuf,
        /// Comma-separated output formats.
        #[arg(long, value_delimiter = ',', default_value = "json,csv,plotdata")]
        format: Vec<ReportFormat>,
    },
    /// Fetch and aggregate the TimeMap of a URL across the roster.
    Timemap {
        #[command(flatten)]
        common: Common,
        /// Defaults to the config's target URL.
        #[arg(long)]
        url: Option<String>,
        /// Drop captures before this day.
        #[arg(long)]
        since: Option<NaiveDate>,
        /// Print per-archive counts instead of the link-format body.
        #[arg(long)]
        counts: bool,
    },
    /// Fetch the capture set of a URL from the configured archive's CDX API.
    Cdx {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        url: Option<String>,
        /// Inclusive first day.
        #[arg(long)]
        from: Option<NaiveDate>,
        /// Inclusive last day.
        #[arg(long)]
        to: Option<NaiveDate>,
        /// Keep only this HTTP status; `0` keeps all.
        #[arg(long, default_value_t = 200)]
        status: u16,
    },
    /// Classify every `<14-digit>.html` page in a directory.
    Probe {
        dir: PathBuf,
        #[arg(long, default_value_t = replay_audit::probe::DEFAULT_WORD_THRESHOLD)]
        word_threshold: usize,
        /// Only `a`-`z` start a lowercase word.
        #[arg(long)]
        ascii: bool,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
    },
    /// Resolve one base datetime against a capture set.
    Resolve {
        #[command(flatten)]
        common: Common,
        /// Base datetime: 14-digit stamp or ISO-8601.
        #[arg(long)]
        at: String,
        /// Read captures from a CDX file instead of the archive.
        #[arg(long, conflicts_with = "url")]
        cdx_file: Option<PathBuf>,
        /// Resource URL whose captures are fetched.
        #[arg(long, required_unless_present = "cdx_file")]
        url: Option<String>,
        #[arg(long, default_value = "48h")]
        threshold: Threshold,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure {
            code: EXIT_PARTIAL,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<FetchError> for Failure {
    fn from(e: FetchError) -> Self {
        let code = match e {
            FetchError::CacheMiss { .. } => EXIT_CACHE_MISS,
            FetchError::MissingTemplate(..) => EXIT_CONFIG,
            _ => EXIT_PARTIAL,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

/// Loads `--config`, or a defaults-only config when absent.
fn load_config(common: &Common) -> Result<ResolvedConfig, Failure> {
    let (mut cfg, base_dir) = match &common.config {
        Some(path) => {
            let cfg = AuditConfig::load(path).map_err(Failure::config)?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, dir)
        }
        None => {
            let start = NaiveDate::from_ymd_opt(2015, 4, 24).unwrap();
            let end = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
            (AuditConfig::for_range(start, end), PathBuf::from("."))
        }
    };
    if common.offline {
        cfg.network = NetworkMode::OfflineCacheOnly;
    }
    cfg.resolve(&base_dir).map_err(Failure::config)
}

fn fetcher(cfg: &ResolvedConfig) -> Result<Fetcher, Failure> {
    let cache = Cache::open(&cfg.cache_root, cfg.cache_ttl).map_err(|e| Failure::io(&cfg.cache_root, e))?;
    Ok(Fetcher::new(
        Arc::new(HttpTransport::new(Duration::from_secs(60))),
        Arc::new(cache),
        cfg.config.network,
    )
    .with_retry(cfg.retry))
}

fn audit(
    common: Common,
    thresholds: Option<Vec<Threshold>>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    out: PathBuf,
    formats: Vec<ReportFormat>,
) -> Result<u8, Failure> {
    if common.config.is_none() {
        return Err(Failure::config("audit needs --config"));
    }
    let mut cfg = load_config(&common)?;
    if let Some(t) = thresholds {
        cfg.config.thresholds = t;
    }
    if from.is_some() || to.is_some() {
        cfg.config.date_range = DateRange {
            start: from.unwrap_or(cfg.config.date_range.start),
            end: to.unwrap_or(cfg.config.date_range.end),
        };
    }
    // Re-validate after overrides.
    let base_dir = common
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let cfg = cfg.config.resolve(&base_dir).map_err(Failure::config)?;

    let report = run_audit(&cfg)?;
    for d in &report.diagnostics {
        eprintln!("warning: {d}");
    }
    let written = emit_report(&report, &formats, &out).map_err(|e| Failure::io(&out, e))?;
    for path in written {
        out!("{}", path.display());
    }
    Ok(report_exit_code(&report) as u8)
}

fn timemap(common: Common, url: Option<String>, since: Option<NaiveDate>, counts: bool) -> Result<u8, Failure> {
    let cfg = load_config(&common)?;
    let url = url.unwrap_or_else(|| cfg.config.target_url.clone());
    let fetcher = fetcher(&cfg)?;
    let mut maps = Vec::new();
    let mut failed = 0;
    for endpoint in &cfg.roster.endpoints {
        match fetch_timemap(&fetcher, endpoint, &url) {
            Ok(got) => {
                if got.report.skipped > 0 {
                    eprintln!("warning: {}: skipped {} entries", endpoint.name, got.report.skipped);
                }
                maps.push(got.timemap);
            }
            Err(e @ FetchError::CacheMiss { .. }) => return Err(e.into()),
            Err(e) => {
                eprintln!("warning: {}: {e}", endpoint.name);
                failed += 1;
            }
        }
    }
    let mut merged = aggregate_timemaps(&maps).map_err(|e| Failure {
        code: EXIT_PARTIAL,
        message: e.to_string(),
    })?;
    if let Some(day) = since {
        merged = merged.since(replay_audit::timestamp::day_start(day));
    }
    if counts {
        for (archive, n) in merged.archive_counts() {
            out!("{archive}\t{n}");
        }
    } else {
        out!("{}", merged.to_link_format().trim_end());
    }
    Ok(if failed > 0 { EXIT_PARTIAL } else { 0 })
}

fn cdx(
    common: Common,
    url: Option<String>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    status: u16,
) -> Result<u8, Failure> {
    let cfg = load_config(&common)?;
    let url = url.unwrap_or_else(|| cfg.config.target_url.clone());
    let filters = FilterSpec {
        status: (status != 0).then_some(status),
        from,
        to,
        page_size: cfg.config.page_size,
    };
    let got = fetch_captures(&fetcher(&cfg)?, cfg.endpoint(), &url, &filters)?;
    for rec in &got.captures.records {
        out!("{}", rec.to_classic_line());
    }
    if got.report.skipped > 0 {
        eprintln!("warning: skipped {} malformed lines", got.report.skipped);
    }
    Ok(0)
}

fn probe(dir: PathBuf, word_threshold: usize, ascii: bool, format: TableFormat) -> Result<u8, Failure> {
    let opts = ProbeOptions {
        word_threshold,
        lowercase: if ascii {
            LowercaseRule::Ascii
        } else {
            LowercaseRule::Unicode
        },
    };
    let report = probe_corpus(&dir, &opts).map_err(|e| Failure::io(&dir, e))?;
    match format {
        TableFormat::Json => {
            out!(
                "{}",
                serde_json::to_string_pretty(&report).expect("corpus report serializes")
            );
        }
        TableFormat::Csv => {
            out!("stamp,iso,file,csr_verdict,content_word_count,has_hero_section_id,zones_declared");
            for e in &report.entries {
                out!(
                    "{},{},{},{},{},{},{}",
                    replay_audit::timestamp::format_stamp(&e.datetime),
                    format_iso(&e.datetime),
                    e.file,
                    e.result.csr_verdict.as_str(),
                    e.result.content_word_count,
                    e.result.has_hero_section_id,
                    e.result.zones_declared.len()
                );
            }
            for (verdict, n) in &report.counts {
                eprintln!("{}: {n}", verdict.as_str());
            }
        }
    }
    for name in &report.skipped {
        eprintln!("skipped: {name}");
    }
    Ok(0)
}

fn resolve(
    common: Common,
    at: String,
    cdx_file: Option<PathBuf>,
    url: Option<String>,
    threshold: Threshold,
) -> Result<u8, Failure> {
    let base = parse_instant(&at).map_err(Failure::config)?;
    let captures = match (cdx_file, url) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(&path).map_err(|e| Failure::io(&path, e))?;
            let page = parse_cdx_body(&text);
            let original = page.records.first().map(|r| r.original.clone()).unwrap_or_default();
            CaptureSet::new(original, page.records, path.display().to_string()).map_err(Failure::config)?
        }
        (None, Some(url)) => {
            let cfg = load_config(&common)?;
            let endpoint = cfg.endpoint();
            fetch_captures(&fetcher(&cfg)?, endpoint, &url, &FilterSpec::status_ok())?
                .captures
                .with_archive(&endpoint.name, endpoint.replay_template_or_default())
        }
        (None, None) => return Err(Failure::config("give --url or --cdx-file")),
    };
    let result = classify(base, &captures, threshold);
    out!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
    Ok(0)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { EXIT_CONFIG } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Audit {
            common,
            thresholds,
            from,
            to,
            out,
            format,
        } => audit(common, thresholds, from, to, out, format),
        Command::Timemap {
            common,
            url,
            since,
            counts,
        } => timemap(common, url, since, counts),
        Command::Cdx {
            common,
            url,
            from,
            to,
            status,
        } => cdx(common, url, from, to, status),
        Command::Probe {
            dir,
            word_threshold,
            ascii,
            format,
        } => probe(dir, word_threshold, ascii, format),
        Command::Resolve {
            common,
            at,
            cdx_file,
            url,
            threshold,
        } => resolve(common, at, cdx_file, url, threshold),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
