//! Blocking JSON-over-HTTP client with bounded retries, exponential backoff
//! and an in-flight request cap. Used by the embedding and chat clients.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Name of the environment variable holding a bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key_env: None,
            timeout_ms: 30_000,
            max_retries: 3,
            initial_backoff_ms: 250,
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore capping concurrent remote calls.
#[derive(Debug)]
pub struct InFlightLimiter {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Arc<Self> {
        Arc::new(Self {
            permits: Mutex::new(max.max(1)),
            cv: Condvar::new(),
        })
    }

    pub fn acquire(self: &Arc<Self>) -> Permit {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(Arc::clone(self))
    }
}

pub struct Permit(Arc<InFlightLimiter>);

impl Drop for Permit {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    http: reqwest::blocking::Client,
    config: RemoteConfig,
    limiter: Arc<InFlightLimiter>,
}

impl JsonClient {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let limiter = InFlightLimiter::new(config.max_in_flight);
        Self::with_limiter(config, limiter)
    }

    /// Shares an existing in-flight cap, e.g. between the batch harness and the server.
    pub fn with_limiter(config: RemoteConfig, limiter: Arc<InFlightLimiter>) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::InvalidArgument("remote endpoint is not configured".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            http,
            config,
            limiter,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// POSTs `body` and decodes the response. Connection failures, timeouts,
    /// 429 and 5xx responses are retried; other 4xx responses fail at once.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let _permit = self.limiter.acquire();
        let token = self
            .config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut attempt = 0;
        loop {
            let mut req = self.http.post(&self.config.endpoint).json(body);
            if let Some(token) = &token {
                req = req.bearer_auth(token);
            }
            let failure = match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .json::<R>()
                        .map_err(|e| Error::Transport(format!("invalid response body: {e}")));
                }
                Ok(resp) => {
                    let status = resp.status();
                    let detail = format!("{} returned {status}", self.config.endpoint);
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(Error::Transport(detail));
                    }
                    detail
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.config.max_retries {
                return Err(Error::Transport(format!(
                    "{failure} (gave up after {} attempts)",
                    attempt + 1
                )));
            }
            tracing::debug!(attempt, %failure, "retrying remote call");
            std::thread::sleep(backoff);
            backoff = backoff.saturating_mul(2);
            attempt += 1;
        }
    }
}

/// Whether a TCP connection to the endpoint's host opens within `timeout`.
/// Says nothing about whether the service behind it is healthy.
pub fn probe_endpoint(endpoint: &str, timeout: Duration) -> bool {
    let Ok(url) = reqwest::Url::parse(endpoint) else {
        return false;
    };
    let Ok(addrs) = url.socket_addrs(|| None) else {
        return false;
    };
    addrs
        .iter()
        .any(|a| std::net::TcpStream::connect_timeout(a, timeout).is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn limiter_caps_concurrency() {
        let limiter = InFlightLimiter::new(2);
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limiter, active, peak) = (limiter.clone(), active.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn probe_sees_listening_socket() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        assert!(probe_endpoint(&url, Duration::from_millis(500)));
        drop(listener);
        assert!(!probe_endpoint("not a url", Duration::from_millis(50)));
    }

    #[test]
    fn empty_endpoint_is_rejected() {
        assert!(JsonClient::new(RemoteConfig::default()).is_err());
    }
}
