//! Entrez E-utilities client: esearch paging and efetch batching over HTTPS.
//!
//! Requests are serialized (one in flight per client) and paced by a token
//! bucket so the service rate limit is prevented rather than handled.
//! Transient failures are retried with bounded exponential backoff.

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use super::medline::parse_medline_xml;
use super::{Article, Corpus, IngestError};

const MAX_ATTEMPTS: u32 = 3;
const BACKOFF_BASE_MS: u64 = 250;

/// Environment variable holding the NCBI API key, appended to every request.
pub const API_KEY_ENV: &str = "EUTILS_API_KEY";
/// Environment variable overriding the request rate (requests per second).
pub const RATE_ENV: &str = "EUTILS_RPS";

struct TokenBucket {
    capacity: f64,
    tokens: f64,
    rate: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        TokenBucket {
            capacity: rate.max(1.0),
            tokens: rate.max(1.0),
            rate,
            last: Instant::now(),
        }
    }

    /// Block until a token is available, then spend it.
    fn take(&mut self) {
        loop {
            let now = Instant::now();
            let elapsed = now.duration_since(self.last).as_secs_f64();
            self.last = now;
            self.tokens = (self.tokens + elapsed * self.rate).min(self.capacity);
            if self.tokens >= 1.0 {
                self.tokens -= 1.0;
                return;
            }
            let wait = (1.0 - self.tokens) / self.rate;
            std::thread::sleep(Duration::from_secs_f64(wait.min(1.0)));
        }
    }
}

/// Outcome of a fetch run. Unresolvable pmids are listed, never silently
/// dropped; `snapshot_unix_secs` records when this corpus was taken, since
/// live result counts drift over time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FetchManifest {
    pub descriptor_id: String,
    pub endpoint: String,
    pub snapshot_unix_secs: u64,
    pub requested: usize,
    pub fetched: usize,
    pub missing: Vec<String>,
    pub missing_descriptor: Vec<String>,
    pub rejected_records: Vec<String>,
}

#[derive(Debug)]
pub struct FetchResult {
    pub corpus: Corpus,
    pub manifest: FetchManifest,
}

/// A batch failed after retries: fetching aborts, but everything already
/// retrieved is reported so the run can be resumed.
#[derive(Debug)]
pub struct FetchAborted {
    pub partial: FetchResult,
    pub failed_batch: usize,
    pub source: IngestError,
}

impl std::fmt::Display for FetchAborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "fetch aborted at batch {} after {} articles: {}",
            self.failed_batch, self.partial.manifest.fetched, self.source
        )
    }
}

impl std::error::Error for FetchAborted {}

pub struct EutilsClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    bucket: Mutex<TokenBucket>,
}

impl EutilsClient {
    /// Client for an E-utilities base endpoint such as
    /// `https://eutils.ncbi.nlm.nih.gov/entrez/eutils`. API key and request
    /// rate are read from [`API_KEY_ENV`] and [`RATE_ENV`].
    pub fn new(endpoint: &str) -> Self {
        let rate = std::env::var(RATE_ENV)
            .ok()
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|r| *r > 0.0)
            .unwrap_or(3.0);
        Self::with_rate(endpoint, rate)
    }

    pub fn with_rate(endpoint: &str, requests_per_second: f64) -> Self {
        EutilsClient {
            agent: ureq::Agent::new_with_defaults(),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            bucket: Mutex::new(TokenBucket::new(requests_per_second)),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn request(&self, url: &str, form_body: Option<&str>) -> Result<String, IngestError> {
        // Lock held for the whole exchange: one in-flight request per client.
        let mut bucket = self.bucket.lock().expect("bucket lock");
        let mut last_err = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1)));
            }
            bucket.take();
            let result = match form_body {
                None => self.agent.get(url).call(),
                Some(body) => self
                    .agent
                    .post(url)
                    .content_type("application/x-www-form-urlencoded")
                    .send(body),
            };
            match result {
                Ok(mut response) => match response.body_mut().read_to_string() {
                    Ok(text) => return Ok(text),
                    Err(e) => last_err = format!("reading body: {e}"),
                },
                Err(ureq::Error::StatusCode(code)) => {
                    last_err = format!("HTTP status {code}");
                    // Client errors other than 429 will not get better.
                    if (400..500).contains(&code) && code != 429 {
                        break;
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(IngestError::Http {
            attempts: MAX_ATTEMPTS,
            message: last_err,
        })
    }

    fn esearch_url(&self, term: &str, retstart: usize, retmax: usize) -> String {
        let mut url = format!(
            "{}/esearch.fcgi?db=pubmed&retmode=xml&term={}&retstart={}&retmax={}",
            self.endpoint,
            encode_component(term),
            retstart,
            retmax
        );
        if let Some(key) = &self.api_key {
            url.push_str("&api_key=");
            url.push_str(&encode_component(key));
        }
        url
    }

    /// All pmids manually annotated with the descriptor, paged via
    /// retstart/retmax and de-duplicated, in service order.
    pub fn search_pmids(
        &self,
        descriptor_id: &str,
        page_size: usize,
    ) -> Result<Vec<String>, IngestError> {
        if page_size == 0 || page_size > 10_000 {
            return Err(IngestError::BadParam {
                param: "page_size",
                value: page_size,
            });
        }
        let term = format!("{descriptor_id}[MeSH Unique ID]");
        let mut pmids = Vec::new();
        let mut seen = HashSet::new();
        let mut retstart = 0usize;
        loop {
            let body = self.request(&self.esearch_url(&term, retstart, page_size), None)?;
            let page = parse_esearch(&body)?;
            for id in &page.ids {
                if seen.insert(id.clone()) {
                    pmids.push(id.clone());
                }
            }
            retstart += page_size;
            if retstart >= page.count || page.ids.is_empty() {
                break;
            }
        }
        Ok(pmids)
    }

    /// Fetch article records in batches. Every requested pmid is accounted
    /// for: resolved ones enter the corpus, the rest land in the manifest.
    pub fn fetch_articles(
        &self,
        pmids: &[String],
        batch_size: usize,
        descriptor_id: &str,
    ) -> Result<FetchResult, Box<FetchAborted>> {
        if batch_size == 0 || batch_size > 500 {
            return Err(Box::new(FetchAborted {
                partial: FetchResult {
                    corpus: Corpus {
                        descriptor_id: descriptor_id.to_string(),
                        articles: Vec::new(),
                    },
                    manifest: self.empty_manifest(descriptor_id, 0),
                },
                failed_batch: 0,
                source: IngestError::BadParam {
                    param: "batch_size",
                    value: batch_size,
                },
            }));
        }

        let mut requested = Vec::new();
        let mut seen = HashSet::new();
        for p in pmids {
            if seen.insert(p.clone()) {
                requested.push(p.clone());
            }
        }

        let mut by_pmid = std::collections::HashMap::new();
        let mut rejected_records = Vec::new();
        for (batch_index, batch) in requested.chunks(batch_size).enumerate() {
            let url = {
                let mut u = format!("{}/efetch.fcgi", self.endpoint);
                if let Some(key) = &self.api_key {
                    u.push_str(&format!("?api_key={}", encode_component(key)));
                }
                u
            };
            let body = format!("db=pubmed&retmode=xml&id={}", batch.join(","));
            let parsed = self
                .request(&url, Some(&body))
                .and_then(|text| parse_medline_xml(text.as_bytes()));
            match parsed {
                Ok(parse) => {
                    rejected_records.extend(parse.rejected);
                    for article in parse.articles {
                        by_pmid.insert(article.pmid.clone(), article);
                    }
                }
                Err(source) => {
                    let partial = self.assemble(descriptor_id, &requested, by_pmid, rejected_records);
                    return Err(Box::new(FetchAborted {
                        partial,
                        failed_batch: batch_index,
                        source,
                    }));
                }
            }
        }
        Ok(self.assemble(descriptor_id, &requested, by_pmid, rejected_records))
    }

    fn empty_manifest(&self, descriptor_id: &str, requested: usize) -> FetchManifest {
        FetchManifest {
            descriptor_id: descriptor_id.to_string(),
            endpoint: self.endpoint.clone(),
            snapshot_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            requested,
            fetched: 0,
            missing: Vec::new(),
            missing_descriptor: Vec::new(),
            rejected_records: Vec::new(),
        }
    }

    fn assemble(
        &self,
        descriptor_id: &str,
        requested: &[String],
        mut by_pmid: std::collections::HashMap<String, Article>,
        rejected_records: Vec<String>,
    ) -> FetchResult {
        let mut manifest = self.empty_manifest(descriptor_id, requested.len());
        manifest.rejected_records = rejected_records;
        let mut articles = Vec::new();
        for pmid in requested {
            match by_pmid.remove(pmid) {
                Some(a) if a.descriptor_ids.iter().any(|d| d == descriptor_id) => articles.push(a),
                Some(_) => manifest.missing_descriptor.push(pmid.clone()),
                None => manifest.missing.push(pmid.clone()),
            }
        }
        manifest.fetched = articles.len();
        let corpus = Corpus {
            descriptor_id: descriptor_id.to_string(),
            articles,
        };
        FetchResult { corpus, manifest }
    }
}

/// Pmids still to fetch given what an existing corpus already holds; resuming
/// a fetch run re-requests only these.
pub fn missing_pmids(requested: &[String], existing: &Corpus) -> Vec<String> {
    let have: HashSet<&str> = existing.articles.iter().map(|a| a.pmid.as_str()).collect();
    let mut seen = HashSet::new();
    requested
        .iter()
        .filter(|p| !have.contains(p.as_str()) && seen.insert(p.as_str()))
        .cloned()
        .collect()
}

struct EsearchPage {
    count: usize,
    ids: Vec<String>,
}

fn parse_esearch(body: &str) -> Result<EsearchPage, IngestError> {
    let mut reader = Reader::from_str(body);
    let mut path: Vec<String> = Vec::new();
    let mut count: Option<usize> = None;
    let mut ids = Vec::new();
    loop {
        match reader.read_event() {
            Err(e) => {
                return Err(IngestError::BadResponse(format!(
                    "esearch XML error near byte {}: {e}",
                    reader.buffer_position()
                )))
            }
            Ok(Event::Eof) => break,
            Ok(Event::Start(s)) => {
                path.push(String::from_utf8_lossy(s.name().as_ref()).into_owned())
            }
            Ok(Event::End(_)) => {
                path.pop();
            }
            Ok(Event::Text(t)) => {
                let text = t
                    .unescape()
                    .map_err(|e| IngestError::BadResponse(e.to_string()))?;
                match path.last().map(String::as_str) {
                    // The top-level Count, not the ones inside TranslationStack.
                    Some("Count")
                        if path.len() == 2
                            && path[0] == "eSearchResult"
                            && count.is_none() =>
                    {
                        count = Some(text.trim().parse::<usize>().map_err(|_| {
                            IngestError::BadResponse(format!("bad Count value {text:?}"))
                        })?);
                    }
                    Some("Id") if path.iter().any(|p| p == "IdList") => {
                        ids.push(text.trim().to_string());
                    }
                    _ => {}
                }
            }
            Ok(_) => {}
        }
    }
    let count = count.ok_or_else(|| IngestError::BadResponse("esearch response has no Count".into()))?;
    Ok(EsearchPage { count, ids })
}

/// Percent-encode a query component (RFC 3986 unreserved characters pass).
fn encode_component(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for byte in raw.bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}
