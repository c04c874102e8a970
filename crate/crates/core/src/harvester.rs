//! CKAN Action API harvesting into [`PortalSnapshot`]s.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::clock::Clock;
use crate::corpus::{Corpus, Dataset, PortalSnapshot};
use crate::transport::{HttpResponse, Transport, TransportError};

pub const DEFAULT_PAGE_SIZE: usize = 100;
pub const DEFAULT_RETRIES: u32 = 2;
const JSON: &str = "application/json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortalEndpoint {
    pub portal_id: String,
    /// Absolute http(s) URL without a trailing slash.
    base_url: String,
    pub locale_override: Option<String>,
    page_size: usize,
    pub max_datasets: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("portal id must be non-empty")]
    EmptyPortalId,
    #[error("portal id {0:?} may only contain letters, digits, '-', '_' and '.'")]
    BadPortalId(String),
    #[error("base url {0:?} is not an absolute http(s) URL")]
    BadBaseUrl(String),
    #[error("page size must be positive")]
    ZeroPageSize,
    #[error("endpoints line {line}: {message}")]
    Line { line: usize, message: String },
}

impl PortalEndpoint {
    pub fn new(portal_id: impl Into<String>, base_url: &str) -> Result<Self, EndpointError> {
        let portal_id = portal_id.into();
        if portal_id.is_empty() {
            return Err(EndpointError::EmptyPortalId);
        }
        // The id names files in the corpus directory.
        if !portal_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || portal_id.starts_with('.')
        {
            return Err(EndpointError::BadPortalId(portal_id));
        }
        let parsed = Url::parse(base_url).map_err(|_| EndpointError::BadBaseUrl(base_url.into()))?;
        if !matches!(parsed.scheme(), "http" | "https") || parsed.host_str().is_none() {
            return Err(EndpointError::BadBaseUrl(base_url.into()));
        }
        Ok(Self {
            portal_id,
            base_url: base_url.trim_end_matches('/').to_string(),
            locale_override: None,
            page_size: DEFAULT_PAGE_SIZE,
            max_datasets: None,
        })
    }

    pub fn with_locale(mut self, locale: impl Into<String>) -> Self {
        self.locale_override = Some(locale.into());
        self
    }

    pub fn with_page_size(mut self, page_size: usize) -> Result<Self, EndpointError> {
        if page_size == 0 {
            return Err(EndpointError::ZeroPageSize);
        }
        self.page_size = page_size;
        Ok(self)
    }

    pub fn with_max_datasets(mut self, max: usize) -> Self {
        self.max_datasets = Some(max);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn search_url(&self, offset: usize) -> String {
        format!(
            "{}/api/3/action/package_search?rows={}&start={}",
            self.base_url, self.page_size, offset
        )
    }

    pub fn tag_list_url(&self) -> String {
        format!("{}/api/3/action/tag_list", self.base_url)
    }

    pub fn status_url(&self) -> String {
        format!("{}/api/3/action/status_show", self.base_url)
    }

    fn host(&self) -> String {
        Url::parse(&self.base_url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_default()
    }
}

/// Parses `portal_id<TAB>base_url[<TAB>locale]` lines; blank lines and `#`
/// comments are skipped.
pub fn parse_endpoints(text: &str) -> Result<Vec<PortalEndpoint>, EndpointError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let at = |e: EndpointError| EndpointError::Line {
            line: i + 1,
            message: e.to_string(),
        };
        let ep = match fields[..] {
            [id, url] => PortalEndpoint::new(id, url).map_err(at)?,
            [id, url, locale] if !locale.is_empty() => PortalEndpoint::new(id, url).map_err(at)?.with_locale(locale),
            [id, url, _] => PortalEndpoint::new(id, url).map_err(at)?,
            _ => {
                return Err(EndpointError::Line {
                    line: i + 1,
                    message: "expected portal_id<TAB>base_url[<TAB>locale]".into(),
                })
            }
        };
        out.push(ep);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    #[serde(rename = "catalog-search")]
    CatalogSearch,
    #[serde(rename = "tag-list")]
    TagList,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::CatalogSearch => "catalog-search",
            Phase::TagList => "tag-list",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("harvest of {portal_id} ({endpoint}) failed in {phase}{}: {message}", status_label(.status))]
pub struct HarvestError {
    pub portal_id: String,
    pub endpoint: String,
    pub phase: Phase,
    /// HTTP status of the last attempt, if one was received.
    pub status: Option<u16>,
    pub message: String,
}

fn status_label(s: &Option<u16>) -> String {
    s.map(|s| format!(" (HTTP {s})")).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct HarvestConfig {
    /// Additional attempts after the first one fails.
    pub retries: u32,
    /// First retry waits this long; each later retry doubles it.
    pub backoff: Duration,
    /// Minimum spacing between request starts against one host.
    pub host_delay: Duration,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(500),
            host_delay: Duration::from_millis(500),
        }
    }
}

impl HarvestConfig {
    /// No waiting at all, for fixture transports.
    pub fn immediate() -> Self {
        Self {
            retries: DEFAULT_RETRIES,
            backoff: Duration::ZERO,
            host_delay: Duration::ZERO,
        }
    }
}

/// Reserves request slots per host so that successive request starts are at
/// least `delay` apart, across all threads.
#[derive(Debug, Default)]
struct HostThrottle {
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl HostThrottle {
    fn wait(&self, host: &str, delay: Duration) {
        if delay.is_zero() {
            return;
        }
        let now = Instant::now();
        let start = {
            let mut slots = self.next_slot.lock().unwrap();
            let slot = slots.get(host).copied().unwrap_or(now).max(now);
            slots.insert(host.to_string(), slot + delay);
            slot
        };
        if start > now {
            std::thread::sleep(start - now);
        }
    }
}

#[derive(Deserialize)]
struct Envelope<T> {
    success: bool,
    result: Option<T>,
    #[serde(default)]
    error: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct SearchPage {
    count: u64,
    #[serde(default)]
    results: Vec<Package>,
}

#[derive(Deserialize)]
struct Package {
    name: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    tags: Vec<TagRef>,
}

#[derive(Deserialize)]
struct TagRef {
    name: String,
}

#[derive(Deserialize)]
struct SiteStatus {
    #[serde(default)]
    locale_default: Option<String>,
}

pub struct Harvester<T> {
    transport: T,
    config: HarvestConfig,
    clock: Arc<dyn Clock>,
    throttle: HostThrottle,
}

enum Fetch {
    Ok(HttpResponse),
    Failed { status: Option<u16>, message: String },
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

impl<T: Transport> Harvester<T> {
    pub fn new(transport: T, config: HarvestConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            transport,
            config,
            clock,
            throttle: HostThrottle::default(),
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn fetch(&self, host: &str, url: &str) -> Fetch {
        let mut attempt = 0;
        loop {
            self.throttle.wait(host, self.config.host_delay);
            let (status, message) = match self.transport.get(url, JSON) {
                Ok(r) if r.is_success() => return Fetch::Ok(r),
                Ok(r) => (Some(r.status), format!("HTTP {}", r.status)),
                Err(TransportError { message, .. }) => (None, message),
            };
            let again = status.is_none_or(retryable);
            if !again || attempt >= self.config.retries {
                return Fetch::Failed { status, message };
            }
            let wait = self.config.backoff * 2u32.saturating_pow(attempt);
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
            attempt += 1;
        }
    }

    fn call<R: for<'de> Deserialize<'de>>(
        &self,
        ep: &PortalEndpoint,
        url: &str,
        phase: Phase,
    ) -> Result<R, HarvestError> {
        let err = |status, message: String| HarvestError {
            portal_id: ep.portal_id.clone(),
            endpoint: url.to_string(),
            phase,
            status,
            message,
        };
        let resp = match self.fetch(&ep.host(), url) {
            Fetch::Ok(r) => r,
            Fetch::Failed { status, message } => return Err(err(status, message)),
        };
        let status = Some(resp.status);
        let env: Envelope<R> =
            serde_json::from_str(&resp.body).map_err(|e| err(status, format!("malformed response envelope: {e}")))?;
        if !env.success {
            let detail = env.error.map(|e| e.to_string()).unwrap_or_default();
            return Err(err(
                status,
                format!("API reported success=false {detail}").trim_end().to_string(),
            ));
        }
        env.result
            .ok_or_else(|| err(status, "success envelope without result".into()))
    }

    fn site_locale(&self, ep: &PortalEndpoint) -> Option<String> {
        let Fetch::Ok(resp) = self.fetch(&ep.host(), &ep.status_url()) else {
            return None;
        };
        let env: Envelope<SiteStatus> = serde_json::from_str(&resp.body).ok()?;
        let raw = env.result?.locale_default?;
        // "pt_BR" and "pt-BR" both reduce to the language subtag.
        let lang = raw.split(['_', '-']).next()?.trim().to_lowercase();
        (!lang.is_empty()).then_some(lang)
    }

    /// Pages through the catalog, then reads the tag registry.
    pub fn harvest(&self, ep: &PortalEndpoint) -> Result<PortalSnapshot, HarvestError> {
        let limit = ep.max_datasets.unwrap_or(usize::MAX);
        let mut datasets: Vec<Dataset> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut offset = 0usize;
        loop {
            let page: SearchPage = self.call(ep, &ep.search_url(offset), Phase::CatalogSearch)?;
            let returned = page.results.len();
            for pkg in page.results {
                if datasets.len() >= limit {
                    break;
                }
                if pkg.name.is_empty() || !seen.insert(pkg.name.clone()) {
                    continue;
                }
                let mut names: Vec<String> = Vec::new();
                let mut in_ds: HashSet<String> = HashSet::new();
                for t in pkg.tags {
                    if !t.name.is_empty() && in_ds.insert(t.name.clone()) {
                        names.push(t.name);
                    }
                }
                datasets.push(Dataset {
                    dataset_id: pkg.name,
                    title: pkg.title.unwrap_or_default(),
                    tag_names: names,
                });
            }
            offset += ep.page_size;
            let total = usize::try_from(page.count).unwrap_or(usize::MAX);
            if returned == 0 || offset >= total || datasets.len() >= limit {
                break;
            }
        }
        let registered: Vec<String> = self.call(ep, &ep.tag_list_url(), Phase::TagList)?;
        let locale = self.site_locale(ep).or_else(|| ep.locale_override.clone());
        Ok(PortalSnapshot::from_datasets(
            ep.portal_id.clone(),
            ep.base_url.clone(),
            locale.as_deref(),
            self.clock.now(),
            datasets,
            registered,
        ))
    }

    /// Harvests every endpoint with at most `parallelism` portals (hence
    /// requests) in flight. Failures are collected, never fatal.
    pub fn harvest_all(&self, endpoints: &[PortalEndpoint], parallelism: usize) -> HarvestReport {
        let mut failures: Vec<HarvestError> = Vec::new();
        let mut ids = BTreeSet::new();
        let mut work = Vec::new();
        for ep in endpoints {
            if ids.insert(ep.portal_id.clone()) {
                work.push(ep);
            } else {
                failures.push(HarvestError {
                    portal_id: ep.portal_id.clone(),
                    endpoint: ep.base_url.clone(),
                    phase: Phase::CatalogSearch,
                    status: None,
                    message: "duplicate portal id in endpoint list".into(),
                });
            }
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Result<PortalSnapshot, HarvestError>>> = Mutex::new(Vec::new());
        let workers = parallelism.max(1).min(work.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(ep) = work.get(i) else { break };
                    let r = self.harvest(ep);
                    results.lock().unwrap().push(r);
                });
            }
        });
        let mut snapshots = Vec::new();
        for r in results.into_inner().unwrap() {
            match r {
                Ok(s) => snapshots.push(s),
                Err(e) => failures.push(e),
            }
        }
        failures.sort_by(|a, b| (&a.portal_id, &a.endpoint).cmp(&(&b.portal_id, &b.endpoint)));
        HarvestReport {
            corpus: Corpus::new(snapshots).expect("portal ids deduplicated above"),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestReport {
    pub corpus: Corpus,
    pub failures: Vec<HarvestError>,
}
