//! Remote silhouette acquisition with a permanent on-disk cache.
//!
//! Cache layout under `cache_dir`:
//!
//! ```text
//! queries/<taxon>.json      listing returned for a taxon, in API order
//! <source_id>.payload       raw image bytes
//! <source_id>.meta.json     SourceRecord for the payload
//! ```
//!
//! Every cache read re-checks the payload checksum. Once a taxon listing
//! and its payloads are cached, fetching the same or a smaller count makes
//! no network requests at all.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fsutil;

pub const DEFAULT_BASE_URL: &str = "https://api.phylopic.org";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRecord {
    pub source_id: String,
    /// License URL or tag as reported by the API.
    pub license: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<String>,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
    /// CRC-32 of the cached payload, lowercase hex.
    pub raw_bytes_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteImage {
    pub source_id: String,
    pub url: String,
    pub license: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CachedListing {
    taxon: String,
    /// True when the API had no more images than listed.
    exhausted: bool,
    images: Vec<RemoteImage>,
}

/// Minimal surface of a silhouette image service.
pub trait SilhouetteApi {
    /// Up to `n` images for `taxon`, in a stable order.
    fn list_images(&mut self, taxon: &str, n: usize) -> Result<Vec<RemoteImage>>;
    fn download(&mut self, image: &RemoteImage) -> Result<Vec<u8>>;
    /// Requests issued so far.
    fn requests(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FetchOutcome {
    pub records: Vec<SourceRecord>,
    pub requested: usize,
    /// Fewer than `requested` images were available.
    pub partial: bool,
    pub downloads: usize,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn payload_path(cache_dir: &Path, id: &str) -> PathBuf {
    cache_dir.join(format!("{}.payload", sanitize(id)))
}

fn meta_path(cache_dir: &Path, id: &str) -> PathBuf {
    cache_dir.join(format!("{}.meta.json", sanitize(id)))
}

fn listing_path(cache_dir: &Path, taxon: &str) -> PathBuf {
    cache_dir.join("queries").join(format!("{}.json", sanitize(&taxon.to_lowercase())))
}

/// Reads a cached payload, verifying its checksum.
pub fn read_cached(cache_dir: &Path, record: &SourceRecord) -> Result<Vec<u8>> {
    let path = payload_path(cache_dir, &record.source_id);
    let bytes = fsutil::read(&path)?;
    let found = fsutil::crc32_hex(&bytes);
    if found != record.raw_bytes_checksum {
        return Err(Error::Checksum { path, expected: record.raw_bytes_checksum.clone(), found });
    }
    Ok(bytes)
}

fn load_record(cache_dir: &Path, id: &str) -> Option<SourceRecord> {
    let text = std::fs::read_to_string(meta_path(cache_dir, id)).ok()?;
    let rec: SourceRecord = serde_json::from_str(&text).ok()?;
    read_cached(cache_dir, &rec).ok()?;
    Some(rec)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    fsutil::write_atomic(path, text.as_bytes())
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Fetches `n` silhouettes for `taxon` into `cache_dir`, reusing the cache.
///
/// Transient network errors abort the call (a rerun resumes from the cache);
/// permanent per-image failures skip the image and mark the result partial.
pub fn fetch_silhouettes(
    api: &mut dyn SilhouetteApi,
    taxon: &str,
    n: usize,
    cache_dir: &Path,
) -> Result<FetchOutcome> {
    if n == 0 {
        return Ok(FetchOutcome { records: Vec::new(), requested: 0, partial: false, downloads: 0 });
    }
    fsutil::create_dir_all(cache_dir)?;
    let lpath = listing_path(cache_dir, taxon);
    let cached: Option<CachedListing> = std::fs::read_to_string(&lpath)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .filter(|l: &CachedListing| l.images.len() >= n || l.exhausted);
    let listing = match cached {
        Some(l) => l,
        None => {
            let images = api.list_images(taxon, n)?;
            let l = CachedListing { taxon: taxon.to_string(), exhausted: images.len() < n, images };
            write_json(&lpath, &l)?;
            l
        }
    };
    let mut records = Vec::with_capacity(n);
    let mut downloads = 0;
    let mut skipped = false;
    for img in listing.images.iter().take(n) {
        if let Some(rec) = load_record(cache_dir, &img.source_id) {
            records.push(rec);
            continue;
        }
        let bytes = match api.download(img) {
            Ok(b) => b,
            Err(Error::Network { transient: false, msg }) => {
                log::warn!("skipping {}: {msg}", img.source_id);
                skipped = true;
                continue;
            }
            Err(e) => return Err(e),
        };
        downloads += 1;
        let rec = SourceRecord {
            source_id: img.source_id.clone(),
            license: img.license.clone(),
            attribution: img.attribution.clone(),
            fetched_at: now_secs(),
            raw_bytes_checksum: fsutil::crc32_hex(&bytes),
        };
        fsutil::write_atomic(&payload_path(cache_dir, &img.source_id), &bytes)?;
        write_json(&meta_path(cache_dir, &img.source_id), &rec)?;
        records.push(rec);
    }
    let partial = skipped || records.len() < n;
    Ok(FetchOutcome { records, requested: n, partial, downloads })
}

/// Client for the public PhyloPic v2 API.
pub struct PhylopicClient {
    base_url: String,
    agent: ureq::Agent,
    min_interval: Duration,
    last_request: Option<Instant>,
    requests: usize,
    build: Option<u64>,
}

impl PhylopicClient {
    pub fn new(base_url: impl Into<String>, min_interval: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            min_interval,
            last_request: None,
            requests: 0,
            build: None,
        }
    }

    fn absolute(&self, href: &str) -> String {
        if href.starts_with("http://") || href.starts_with("https://") {
            href.to_string()
        } else {
            format!("{}/{}", self.base_url, href.trim_start_matches('/'))
        }
    }

    fn throttle(&mut self) {
        if let Some(last) = self.last_request {
            let elapsed = last.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        self.last_request = Some(Instant::now());
        self.requests += 1;
    }

    fn get_bytes(&mut self, url: &str) -> Result<Vec<u8>> {
        self.throttle();
        let mut resp = self.agent.get(url).call().map_err(|e| Error::Network {
            transient: true,
            msg: format!("GET {url}: {e}"),
        })?;
        let status = resp.status().as_u16();
        if status >= 400 {
            return Err(Error::Network {
                transient: status == 429 || status >= 500,
                msg: format!("GET {url}: HTTP {status}"),
            });
        }
        resp.body_mut()
            .with_config()
            .limit(64 << 20)
            .read_to_vec()
            .map_err(|e| Error::Network { transient: true, msg: format!("GET {url}: {e}") })
    }

    fn get_json(&mut self, url: &str) -> Result<Value> {
        let bytes = self.get_bytes(url)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Network { transient: false, msg: format!("GET {url}: bad JSON: {e}") })
    }

    fn build(&mut self) -> Result<u64> {
        if let Some(b) = self.build {
            return Ok(b);
        }
        let root = self.get_json(&self.absolute("/"))?;
        let b = root["build"]
            .as_u64()
            .ok_or_else(|| Error::Network { transient: false, msg: "API root has no build number".into() })?;
        self.build = Some(b);
        Ok(b)
    }

    fn clade_uuid(&mut self, taxon: &str) -> Result<String> {
        let build = self.build()?;
        let name = canonical_taxon(taxon);
        let url = self.absolute(&format!("/nodes?build={build}&filter_name={name}&page=0"));
        let page = self.get_json(&url)?;
        let href = page["_links"]["items"][0]["href"]
            .as_str()
            .ok_or_else(|| Error::Network { transient: false, msg: format!("no node named {name:?}") })?;
        let uuid = href.trim_start_matches("/nodes/").split(['?', '/']).next().unwrap_or_default();
        if uuid.is_empty() {
            return Err(Error::Network { transient: false, msg: format!("bad node link {href:?}") });
        }
        Ok(uuid.to_string())
    }
}

/// Maps everyday names onto clade names the API knows.
pub fn canonical_taxon(taxon: &str) -> String {
    match taxon.trim().to_lowercase().as_str() {
        "bird" | "birds" => "aves".to_string(),
        other => other.to_string(),
    }
}

fn parse_image(item: &Value) -> Option<RemoteImage> {
    let id = item["uuid"].as_str()?;
    let links = &item["_links"];
    let files = links["rasterFiles"].as_array()?;
    // Prefer the largest raster that is at most 1024 px wide.
    let width = |f: &Value| -> u64 {
        f["sizes"].as_str().and_then(|s| s.split('x').next()).and_then(|w| w.parse().ok()).unwrap_or(0)
    };
    let chosen = files
        .iter()
        .filter(|f| width(f) <= 1024)
        .max_by_key(|f| width(f))
        .or_else(|| files.first())?;
    Some(RemoteImage {
        source_id: id.to_string(),
        url: chosen["href"].as_str()?.to_string(),
        license: links["license"]["href"].as_str().unwrap_or("unknown").to_string(),
        attribution: item["attribution"].as_str().map(str::to_string),
    })
}

impl SilhouetteApi for PhylopicClient {
    fn list_images(&mut self, taxon: &str, n: usize) -> Result<Vec<RemoteImage>> {
        let build = self.build()?;
        let clade = self.clade_uuid(taxon)?;
        let mut out = Vec::new();
        let mut page = 0u64;
        while out.len() < n {
            let url = self.absolute(&format!(
                "/images?build={build}&filter_clade={clade}&page={page}&embed_items=true"
            ));
            let body = self.get_json(&url)?;
            let items = body["_embedded"]["items"].as_array().cloned().unwrap_or_default();
            if items.is_empty() {
                break;
            }
            out.extend(items.iter().filter_map(parse_image));
            page += 1;
            if let Some(total) = body["totalPages"].as_u64() {
                if page >= total {
                    break;
                }
            }
        }
        out.truncate(n);
        Ok(out)
    }

    fn download(&mut self, image: &RemoteImage) -> Result<Vec<u8>> {
        let url = self.absolute(&image.url);
        self.get_bytes(&url)
    }

    fn requests(&self) -> usize {
        self.requests
    }
}
