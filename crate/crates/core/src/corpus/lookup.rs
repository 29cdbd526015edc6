//! Client for lookup-style candidate retrieval endpoints.
//!
//! Sends `GET {endpoint}?query={surface}&maxResults={k}` and expects a JSON
//! array of `{id, label, typeName[]}` records. Results whose id starts with a
//! denylisted prefix (category pages, disambiguation pages, ...) are pruned.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use reqwest::Url;
use serde::Deserialize;

use super::CandidateEntity;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LookupConfig {
    pub endpoint: String,
    pub deny_prefixes: Vec<String>,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubled for each later one.
    pub backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl LookupConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        LookupConfig {
            endpoint: endpoint.into(),
            deny_prefixes: Vec::new(),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(10),
            max_in_flight: 4,
        }
    }

    pub fn deny(mut self, prefix: impl Into<String>) -> Self {
        self.deny_prefixes.push(prefix.into());
        self
    }
}

#[derive(Debug, Deserialize)]
struct LookupRecord {
    id: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default, rename = "typeName")]
    type_name: Vec<String>,
}

/// Counting gate limiting concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Thread-safe lookup client; clone it freely, clones share the in-flight cap.
#[derive(Debug, Clone)]
pub struct LookupClient {
    config: LookupConfig,
    http: reqwest::blocking::Client,
    gate: Arc<InFlight>,
}

impl LookupClient {
    pub fn new(config: LookupConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Invalid(format!("http client: {e}")))?;
        let gate = Arc::new(InFlight {
            limit: config.max_in_flight.max(1),
            count: Mutex::new(0),
            freed: Condvar::new(),
        });
        Ok(LookupClient { config, http, gate })
    }

    pub fn config(&self) -> &LookupConfig {
        &self.config
    }

    fn url(&self, surface: &str, k: usize) -> Result<Url> {
        Url::parse_with_params(
            &self.config.endpoint,
            &[("query", surface), ("maxResults", &k.to_string())],
        )
        .map_err(|e| Error::Invalid(format!("endpoint `{}`: {e}", self.config.endpoint)))
    }

    fn get_body(&self, url: &Url) -> Result<String> {
        let _permit = self.gate.acquire();
        let attempts = self.config.max_attempts.max(1);
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.http.get(url.clone()).send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp.text().map_err(|e| Error::Lookup {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
                Ok(resp) if resp.status().is_server_error() => {
                    last = format!("HTTP {}", resp.status());
                }
                Ok(resp) => {
                    return Err(Error::Lookup {
                        attempts: attempt,
                        message: format!("HTTP {}", resp.status()),
                    })
                }
                Err(e) => last = e.to_string(),
            }
            log::debug!("lookup attempt {attempt} failed: {last}");
            if attempt < attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(Error::Lookup {
            attempts,
            message: last,
        })
    }

    /// Retrieves at most `k` entity candidates for `surface`.
    pub fn fetch(&self, surface: &str, k: usize) -> Result<Vec<CandidateEntity>> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        let body = self.get_body(&self.url(surface, k)?)?;
        let records: Vec<LookupRecord> =
            serde_json::from_str(&body).map_err(|e| Error::LookupParse {
                message: e.to_string(),
                excerpt: body.chars().take(120).collect(),
            })?;
        Ok(records
            .into_iter()
            .filter(|r| !self.config.deny_prefixes.iter().any(|p| r.id.starts_with(p)))
            .take(k)
            .map(|r| {
                let mut c = CandidateEntity::new(r.id.clone(), r.label.unwrap_or(r.id));
                c.domains = r.type_name.into_iter().collect();
                c
            })
            .collect())
    }

    /// Fetches candidates for several surfaces concurrently, keeping input order.
    pub fn fetch_many(&self, surfaces: &[&str], k: usize) -> Vec<Result<Vec<CandidateEntity>>> {
        let workers = self.gate.limit.min(surfaces.len()).max(1);
        let chunk = surfaces.len().div_ceil(workers).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> = surfaces
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|q| self.fetch(q, k)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("lookup worker panicked"))
                .collect()
        })
    }
}

/// One-shot convenience wrapper around [`LookupClient::fetch`].
pub fn fetch_candidates(endpoint: &str, surface: &str, k: usize) -> Result<Vec<CandidateEntity>> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    LookupClient::new(LookupConfig::new(endpoint))?.fetch(surface, k)
}
